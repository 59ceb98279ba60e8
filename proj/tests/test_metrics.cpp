#include <doctest.h>

#include <cmath>

#include "helpers.hpp"
#include "race/errors.hpp"
#include "race/metrics.hpp"

using namespace race;

namespace {
TokenSeq toks(std::initializer_list<const char*> ts) {
    TokenSeq out;
    for (const char* t : ts) out.emplace_back(t);
    return out;
}
}  // namespace

TEST_CASE("bnorm sentence scores") {
    SUBCASE("perfect match") {
        const auto s = toks({"fix", "bug", "in", "parser"});
        CHECK(bnorm_bleu({s}, {s}) == doctest::Approx(100.0).epsilon(1e-9));
    }
    SUBCASE("short candidate, hand derivation") {
        // p1=p2=1, p3=p4=1 by the zero-total rule, BP=exp(1-4/2)
        const double got = bnorm_bleu({toks({"fix", "bug"})}, {toks({"fix", "bug", "in", "parser"})});
        CHECK(got == doctest::Approx(100.0 * std::exp(-1.0)).epsilon(1e-6));
        CHECK(std::fabs(got - 36.788) < 0.01);
    }
    SUBCASE("disjoint tokens score zero") {
        CHECK(bnorm_bleu({toks({"a", "b", "c", "d"})}, {toks({"w", "x", "y", "z"})}) == 0.0);
    }
    SUBCASE("empty candidate scores zero, not an error") {
        CHECK(bnorm_bleu({TokenSeq{}}, {toks({"fix"})}) == 0.0);
    }
    SUBCASE("smoothing: partial bigram overlap") {
        // cand "a b c", ref "a b d": p1 = 2/3, p2 = (1+1)/(2+1), p3 = p4 = 1 (zero totals... p3 total=1)
        // hand: p3 = (0+1)/(1+1) = 1/2, p4 = 1 (no 4-grams), BP=1
        const double expect = std::exp((std::log(2.0 / 3) + std::log(2.0 / 3) + std::log(0.5) + 0.0) / 4.0);
        CHECK(bnorm_bleu({toks({"a", "b", "c"})}, {toks({"a", "b", "d"})}) ==
              doctest::Approx(100.0 * expect).epsilon(1e-9));
    }
}

TEST_CASE("rouge_l") {
    CHECK(rouge_l({toks({"fix", "bug"})}, {toks({"fix", "bug"})}) == doctest::Approx(1.0));
    // LCS("a b c", "a c") = 2; P=2/3, R=1, F=0.8
    CHECK(rouge_l({toks({"a", "b", "c"})}, {toks({"a", "c"})}) == doctest::Approx(0.8).epsilon(1e-12));
    CHECK(rouge_l({toks({"a"})}, {toks({"b"})}) == 0.0);
}

TEST_CASE("meteor") {
    SUBCASE("identical 4-token pair") {
        const auto s = toks({"fix", "the", "parser", "bug"});
        CHECK(meteor({s}, {s}) == doctest::Approx(0.9921875).epsilon(1e-12));
    }
    SUBCASE("no common tokens") {
        CHECK(meteor({toks({"a", "b"})}, {toks({"c", "d"})}) == 0.0);
    }
    SUBCASE("swapped order gives two chunks") {
        // matches=2, chunks=2, F=1 -> 1 - 0.5*1 = 0.5
        CHECK(meteor({toks({"b", "a"})}, {toks({"a", "b"})}) == doctest::Approx(0.5).epsilon(1e-12));
    }
    SUBCASE("alignment minimizes chunks among max matchings") {
        // candidate "a b a", reference "a b a": one chunk of 3
        const auto s = toks({"a", "b", "a"});
        // m=3, ch=1 -> 1 - 0.5*(1/3)^3
        CHECK(meteor({s}, {s}) == doctest::Approx(1.0 - 0.5 / 27).epsilon(1e-12));
    }
    SUBCASE("precision/recall weighting") {
        // cand "a x", ref "a": m=1, P=1/2, R=1, F=10*0.5/(1+4.5)... F=10PR/(R+9P)=10*0.5*1/(1+4.5)
        const double f = 10.0 * 0.5 * 1.0 / (1.0 + 9.0 * 0.5);
        CHECK(meteor({toks({"a", "x"})}, {toks({"a"})}) == doctest::Approx(f * 0.5).epsilon(1e-12));
    }
}

TEST_CASE("cider") {
    SUBCASE("identical single pair scores 10") {
        const auto s = toks({"fix", "the", "parser", "bug"});
        CHECK(cider({s}, {s}) == doctest::Approx(10.0).epsilon(1e-9));
    }
    SUBCASE("identical pair shorter than 4 tokens caps below 10") {
        // orders beyond the sentence length contribute 0, as in the original
        const auto s = toks({"fix", "bug"});
        CHECK(cider({s}, {s}) == doctest::Approx(5.0).epsilon(1e-9));
    }
    SUBCASE("disjoint pair scores 0") {
        CHECK(cider({toks({"a", "b", "c", "d"})}, {toks({"w", "x", "y", "z"})}) == 0.0);
    }
    SUBCASE("unigram-only overlap: score is 10*s1/4") {
        // two-pair corpus so idf is nonzero; candidate c1 shares only unigrams
        // with r1 (reversed order kills all higher n-gram overlap)
        const auto c1 = toks({"tests", "add", "parser"});
        const auto r1 = toks({"parser", "add", "tests"});
        const auto c2 = toks({"other", "words"});
        const auto r2 = toks({"fully", "different", "message"});
        // hand-computed s1 with tf=1/3 each, idf=ln(2/1) for r1's unigrams:
        // vectors over {tests,add,parser} equal -> s1 = 1; bigrams disjoint -> s2=0
        const double got = cider({c1, c2}, {r1, r2});
        // pair 2 contributes 0; corpus mean = (10*(1+0+0+0)/4 + 0)/2
        CHECK(got == doctest::Approx((10.0 * 0.25) / 2).epsilon(1e-9));
    }
    SUBCASE("partial unigram overlap, hand tf-idf") {
        // corpus of 2 refs: r1 = "a b", r2 = "c d". candidate "a x" vs r1.
        // unigrams: idf(a)=idf(b)=ln(2/1)=ln2; idf(x)=ln(2/1)=ln2 (df=0 -> max(1,df)=1 -> ln(2))
        // g(c) over {a:ln2/2, x:ln2/2}, g(r1) over {a:ln2/2, b:ln2/2}
        // dot = min(ln2/2,ln2/2)*ln2/2 = (ln2/2)^2 ; norms = ln2/2*sqrt(2) each
        // s1 = (ln2/2)^2 / ((ln2/2)^2 * 2) = 0.5 ; s2..4 = 0 (no overlap, cand has bigram "a x")
        const double got = cider({toks({"a", "x"}), toks({"c", "d"})}, {toks({"a", "b"}), toks({"c", "d"})});
        // pair 1: 10*(0.5)/4 = 1.25 ; pair 2 identical 2-token: 10*(1+1)/4 = 5
        CHECK(got == doctest::Approx((1.25 + 5.0) / 2).epsilon(1e-9));
    }
}

TEST_CASE("evaluate_all") {
    SUBCASE("identical lists hit every maximum") {
        const auto a = toks({"fix", "the", "parser", "bug"});
        const auto b = toks({"add", "more", "tests", "now"});
        const EvalReport r = evaluate_all({a, b}, {a, b});
        CHECK(r.bnorm_bleu == doctest::Approx(100.0));
        CHECK(r.rouge_l == doctest::Approx(1.0));
        CHECK(r.meteor == doctest::Approx(0.9921875));
        CHECK(r.cider == doctest::Approx(10.0).epsilon(1e-6));
        CHECK(r.evaluated == 2);
        CHECK(r.skipped == 0);
    }
    SUBCASE("empty lists are an error") {
        CHECK_THROWS_AS(evaluate_all({}, {}), ValidationError);
    }
    SUBCASE("length mismatch is an error") {
        CHECK_THROWS_AS(evaluate_all({toks({"a"})}, {}), ValidationError);
    }
    SUBCASE("single disjoint pair gives zeros") {
        const EvalReport r = evaluate_all({toks({"a", "b", "c", "d"})}, {toks({"w", "x", "y", "z"})});
        CHECK(r.bnorm_bleu == 0.0);
        CHECK(r.meteor == 0.0);
        CHECK(r.rouge_l == 0.0);
        CHECK(r.cider == 0.0);
    }
    SUBCASE("corpus scores equal the mean of per-example scores") {
        const EvalReport r = evaluate_all({toks({"fix", "bug"}), toks({"a", "b", "c"})},
                                          {toks({"fix", "bug", "in", "parser"}), toks({"a", "c"})});
        auto mean = [](const std::vector<double>& v) {
            double t = 0;
            for (double x : v) t += x;
            return t / v.size();
        };
        CHECK(r.bnorm_bleu == doctest::Approx(mean(r.per_bnorm)));
        CHECK(r.rouge_l == doctest::Approx(mean(r.per_rouge)));
        CHECK(r.meteor == doctest::Approx(mean(r.per_meteor)));
        CHECK(r.cider == doctest::Approx(mean(r.per_cider)));
    }
}

TEST_CASE("metrics are case-insensitive") {
    const auto lower = toks({"fix", "the", "parser", "bug"});
    const auto upper = toks({"Fix", "THE", "PARSER", "Bug"});
    CHECK(bnorm_bleu({upper}, {lower}) == doctest::Approx(100.0));
    CHECK(rouge_l({upper}, {lower}) == doctest::Approx(1.0));
    CHECK(meteor({upper}, {lower}) == doctest::Approx(meteor({lower}, {lower})));
    CHECK(cider({upper}, {lower}) == doctest::Approx(10.0).epsilon(1e-9));
}

TEST_CASE("appending an unrelated token strictly decreases bnorm and rouge") {
    Rng rng(55);
    for (int trial = 0; trial < 30; ++trial) {
        TokenSeq ref = testutil::random_tokens(rng, 2 + rng.below(8), 6);
        TokenSeq cand = ref;
        cand.push_back("unrelated_tail_token");
        CHECK(bnorm_bleu({cand}, {ref}) < bnorm_bleu({ref}, {ref}));
        CHECK(rouge_l({cand}, {ref}) < rouge_l({ref}, {ref}));
    }
}
