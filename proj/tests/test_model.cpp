#include <doctest.h>

#include <cmath>

#include "race/errors.hpp"
#include "race/gradcheck.hpp"
#include "race/model.hpp"

using namespace race;

namespace {

ModelConfig tiny_config(ModelKind kind = ModelKind::Full) {
    ModelConfig c;
    c.d_model = 8;
    c.num_heads = 2;
    c.enc_layers = 1;
    c.dec_layers = 1;
    c.ffn_dim = 16;
    c.rel_clip = 4;
    c.vocab_size = 32;
    c.max_diff_len = 16;
    c.max_msg_len = 8;
    c.dropout = 0.0;
    c.kind = kind;
    return c;
}

TokenIds ids_of(std::vector<int> ids) {
    TokenIds t;
    t.mask.assign(ids.size(), 1);
    t.ids = std::move(ids);
    return t;
}

TokenIds padded(std::vector<int> ids, size_t len) {
    TokenIds t = ids_of(std::move(ids));
    while (t.ids.size() < len) {
        t.ids.push_back(Vocab::kPad);
        t.mask.push_back(0);
    }
    return t;
}

template <class S>
double l2(const Array<S>& a, int row_begin, int row_end) {
    double n = 0;
    for (int i = row_begin; i < row_end; ++i)
        for (int j = 0; j < a.shape[1]; ++j) n += static_cast<double>(a.at(i, j)) * a.at(i, j);
    return std::sqrt(n);
}

}  // namespace

TEST_CASE("encode: pooled equals the masked mean of states") {
    RaceModel<double> model(tiny_config(), 11);
    const EncoderOutput<double> out = model.encode(ids_of({5, 9, 14, 20}));
    REQUIRE(out.states.shape[0] == 4);
    for (int j = 0; j < 8; ++j) {
        double mean = 0;
        for (int i = 0; i < 4; ++i) mean += out.states.at(i, j);
        mean /= 4;
        CHECK(out.pooled.data[j] == doctest::Approx(mean).epsilon(1e-6));
    }
}

TEST_CASE("encode: single token pools to its own state") {
    RaceModel<double> model(tiny_config(), 3);
    const EncoderOutput<double> out = model.encode(ids_of({7}));
    REQUIRE(out.states.shape[0] == 1);
    for (int j = 0; j < 8; ++j) CHECK(out.pooled.data[j] == doctest::Approx(out.states.at(0, j)).epsilon(1e-12));
}

TEST_CASE("encode: trailing pad content cannot influence the output") {
    RaceModel<float> model(tiny_config(), 5);
    TokenIds a = padded({3, 4, 5}, 10);
    TokenIds b = padded({3, 4, 5}, 10);
    for (size_t i = 3; i < b.ids.size(); ++i) b.ids[i] = 17;  // any ids beyond the mask
    const auto ea = model.encode(a);
    const auto eb = model.encode(b);
    CHECK(ea.states.data == eb.states.data);
    CHECK(ea.pooled.data == eb.pooled.data);
}

TEST_CASE("encode: interior masked positions are invisible to unmasked ones") {
    RaceModel<float> model(tiny_config(), 6);
    TokenIds a = ids_of({3, 4, 5, 6});
    a.mask = {1, 0, 1, 1};
    TokenIds b = a;
    b.ids[1] = 21;
    const auto ea = model.encode(a);
    const auto eb = model.encode(b);
    for (int i : {0, 2, 3})
        for (int j = 0; j < 8; ++j) CHECK(ea.states.at(i, j) == eb.states.at(i, j));
    CHECK(ea.pooled.data == eb.pooled.data);
}

TEST_CASE("encode: length cap enforced") {
    RaceModel<float> model(tiny_config(), 1);
    std::vector<int> too_long(17, 1);
    CHECK_THROWS_AS(model.encode(ids_of(too_long)), ValidationError);
    CHECK_THROWS_AS(model.encode(ids_of({})), ValidationError);
}

TEST_CASE("guider: zero weights give exactly one half") {
    RaceModel<double> model(tiny_config(), 21);
    auto named = model.named_params();
    for (auto& [name, p] : named)
        if (name == "guider.ws" || name == "guider.bias")
            std::fill(p->value.data.begin(), p->value.data.end(), 0.0);
    const auto d = model.encode(ids_of({1, 2, 3}));
    const auto s = model.encode(ids_of({4, 5}), 1);
    CHECK(model.guider_lambda(d, s) == 0.5);
}

TEST_CASE("guider: large bias saturates but stays inside (0,1)") {
    for (double bias : {20.0, 500.0}) {
        RaceModel<float> model(tiny_config(), 21);
        auto named = model.named_params();
        for (auto& [name, p] : named) {
            if (name == "guider.ws") std::fill(p->value.data.begin(), p->value.data.end(), 0.0f);
            if (name == "guider.bias") p->value.data[0] = static_cast<float>(bias);
        }
        const auto d = model.encode(ids_of({1, 2, 3}));
        const auto s = model.encode(ids_of({4, 5}), 1);
        const float lam = model.guider_lambda(d, s);
        CHECK(lam > 0.9999f);
        CHECK(lam < 1.0f);
    }
}

TEST_CASE("guider: matches the direct arithmetic oracle") {
    RaceModel<double> model(tiny_config(), 77);
    const auto d = model.encode(ids_of({9, 2, 30}));
    const auto s = model.encode(ids_of({14, 5}), 1);
    double ws_dot = 0.0, bias = 0.0;
    for (auto& [name, p] : model.named_params()) {
        if (name == "guider.ws") {
            for (int j = 0; j < 8; ++j) ws_dot += p->value.data[j] * d.pooled.data[j];
            for (int j = 0; j < 8; ++j) ws_dot += p->value.data[8 + j] * s.pooled.data[j];
        }
        if (name == "guider.bias") bias = p->value.data[0];
    }
    const double expect = 1.0 / (1.0 + std::exp(-(ws_dot + bias)));
    CHECK(model.guider_lambda(d, s) == doctest::Approx(expect).epsilon(1e-10));
}

TEST_CASE("guider: lambda lies in (0,1) on random encodings") {
    RaceModel<float> model(tiny_config(), 123);
    Rng rng(9);
    for (int trial = 0; trial < 200; ++trial) {
        std::vector<int> da(1 + rng.below(10)), sa(1 + rng.below(10));
        for (int& t : da) t = static_cast<int>(rng.below(32));
        for (int& t : sa) t = static_cast<int>(rng.below(32));
        const float lam = model.guider_lambda(model.encode(ids_of(da)), model.encode(ids_of(sa), 1));
        CHECK(lam > 0.0f);
        CHECK(lam < 1.0f);
    }
}

TEST_CASE("fuse: scaling and lengths") {
    RaceModel<float> model(tiny_config(), 31);
    GraphF g;
    auto d = model.encode_g(g, ids_of({1, 2, 3}), 0, nullptr);
    auto m = model.encode_g(g, ids_of({4, 5}), 2, nullptr);
    auto lambda = g.input(ArrayF({1, 1}, {0.5f}));
    const Fused<float> fused = model.fuse_g(g, d, m, lambda);
    const ArrayF& fs = g.value(fused.states);
    REQUIRE(fs.shape[0] == 5);  // l + n = 3 + 2
    CHECK(fused.mask.size() == 5);
    const ArrayF& ds = g.value(d.states);
    const ArrayF& ms = g.value(m.states);
    for (int j = 0; j < 8; ++j) {
        CHECK(fs.at(0, j) == 0.5f * ds.at(0, j));
        CHECK(fs.at(3, j) == 0.5f * ms.at(0, j));
    }
}

TEST_CASE("fuse: empty exemplar half leaves the scaled diff only") {
    RaceModel<float> model(tiny_config(), 31);
    GraphF g;
    auto d = model.encode_g(g, ids_of({1, 2, 3}), 0, nullptr);
    Encoded<float> empty;  // no states
    auto lambda = g.input(ArrayF({1, 1}, {0.25f}));
    const Fused<float> fused = model.fuse_g(g, d, empty, lambda);
    const ArrayF& fs = g.value(fused.states);
    REQUIRE(fs.shape[0] == 3);
    for (int i = 0; i < 3; ++i)
        for (int j = 0; j < 8; ++j) CHECK(fs.at(i, j) == doctest::Approx(0.75f * g.value(d.states).at(i, j)));
}

TEST_CASE("fuse rejects lambda outside (0,1)") {
    RaceModel<float> model(tiny_config(), 31);
    GraphF g;
    auto d = model.encode_g(g, ids_of({1, 2}), 0, nullptr);
    auto m = model.encode_g(g, ids_of({3}), 2, nullptr);
    CHECK_THROWS_AS(model.fuse_g(g, d, m, g.input(ArrayF({1, 1}, {0.0f}))), ValidationError);
    CHECK_THROWS_AS(model.fuse_g(g, d, m, g.input(ArrayF({1, 1}, {1.0f}))), ValidationError);
}

TEST_CASE("fuse_noguider equals fuse with unit scales, bitwise") {
    RaceModel<float> model(tiny_config(ModelKind::NoGuider), 41);
    GraphF g;
    auto d = model.encode_g(g, ids_of({1, 2, 3}), 0, nullptr);
    auto m = model.encode_g(g, ids_of({4, 5}), 2, nullptr);
    const Fused<float> ng = model.fuse_noguider_g(g, d, m);
    auto one = g.input(ArrayF({1, 1}, {1.0f}));
    const Fused<float> unit = model.fuse_scaled_g(g, d, m, one, one);
    CHECK(g.value(ng.states).data == g.value(unit.states).data);
    CHECK(ng.mask == unit.mask);
    // and equals the raw concatenation of both state blocks
    const ArrayF& ds = g.value(d.states);
    const ArrayF& ms = g.value(m.states);
    std::vector<float> raw = ds.data;
    raw.insert(raw.end(), ms.data.begin(), ms.data.end());
    CHECK(g.value(ng.states).data == raw);
}

TEST_CASE("fuse_multi") {
    RaceModel<float> model(tiny_config(), 51);
    GraphF g;
    auto d = model.encode_g(g, ids_of({1, 2, 3}), 0, nullptr);
    std::vector<Encoded<float>> ms;
    ms.push_back(model.encode_g(g, ids_of({4, 5}), 2, nullptr));
    ms.push_back(model.encode_g(g, ids_of({6}), 2, nullptr));
    ms.push_back(model.encode_g(g, ids_of({7, 8, 9, 10}), 2, nullptr));

    SUBCASE("k == 1 reduces to fuse") {
        auto lambda = g.input(ArrayF({1, 1}, {0.3f}));
        const Fused<float> multi = model.fuse_multi_g(g, d, {ms[0]}, {lambda});
        const Fused<float> single = model.fuse_g(g, d, ms[0], lambda);
        CHECK(g.value(multi.states).data == g.value(single.states).data);
    }
    SUBCASE("uniform lambdas scale the diff half by 1 - max") {
        auto l1 = g.input(ArrayF({1, 1}, {0.5f}));
        auto l2v = g.input(ArrayF({1, 1}, {0.5f}));
        auto l3 = g.input(ArrayF({1, 1}, {0.5f}));
        const Fused<float> multi = model.fuse_multi_g(g, d, ms, {l1, l2v, l3});
        REQUIRE(g.value(multi.states).shape[0] == 3 + 2 + 1 + 4);
        for (int j = 0; j < 8; ++j)
            CHECK(g.value(multi.states).at(0, j) == 0.5f * g.value(d.states).at(0, j));
    }
    SUBCASE("k == 0 is an error") {
        CHECK_THROWS_AS(model.fuse_multi_g(g, d, {}, {}), ValidationError);
    }
}

TEST_CASE("exemplar half norm grows with lambda") {
    RaceModel<float> model(tiny_config(), 61);
    std::vector<double> norms;
    for (float lam : {0.1f, 0.3f, 0.5f, 0.7f, 0.9f}) {
        GraphF g;
        auto d = model.encode_g(g, ids_of({1, 2, 3}), 0, nullptr);
        auto m = model.encode_g(g, ids_of({4, 5}), 2, nullptr);
        const Fused<float> fused = model.fuse_g(g, d, m, g.input(ArrayF({1, 1}, {lam})));
        norms.push_back(l2(g.value(fused.states), 3, 5));
    }
    for (size_t i = 1; i < norms.size(); ++i) CHECK(norms[i] > norms[i - 1]);
}

TEST_CASE("decoder causality: later tokens cannot reach earlier logits") {
    RaceModel<float> model(tiny_config(), 71);
    GraphF g;
    auto d = model.encode_g(g, ids_of({1, 2, 3, 4}), 0, nullptr);
    Fused<float> fused{d.states, d.mask};
    auto la = model.decode_logits_g(g, fused, {2, 5, 6, 7}, nullptr);
    auto lb = model.decode_logits_g(g, fused, {2, 5, 30, 31}, nullptr);
    const ArrayF& a = g.value(la);
    const ArrayF& b = g.value(lb);
    for (int t = 0; t < 2; ++t)
        for (int v = 0; v < 32; ++v) CHECK(a.at(t, v) == b.at(t, v));
}

TEST_CASE("masked fused positions receive no cross-attention weight") {
    RaceModel<float> model(tiny_config(), 81);
    GraphF g;
    auto d = model.encode_g(g, ids_of({1, 2, 3, 4}), 0, nullptr);
    Fused<float> fused{d.states, d.mask};
    fused.mask[2] = 0;  // pretend position 2 is padding
    AttnTrace<float> trace;
    auto logits_a = model.decode_logits_g(g, fused, {2, 5}, nullptr, &trace);
    REQUIRE(!trace.cross_probs.empty());
    for (const ArrayF& probs : trace.cross_probs)
        for (int i = 0; i < probs.shape[0]; ++i) CHECK(probs.at(i, 2) <= 1e-9f);

    // altering the masked row's content leaves the logits untouched
    ArrayF doctored = g.value(d.states);
    for (int j = 0; j < 8; ++j) doctored.at(2, j) = 99.0f + j;
    Fused<float> fused_doctored{g.input(doctored), fused.mask};
    auto logits_b = model.decode_logits_g(g, fused_doctored, {2, 5}, nullptr);
    CHECK(g.value(logits_a).data == g.value(logits_b).data);
}

TEST_CASE("decode: prefix cap and empty prefix") {
    RaceModel<float> model(tiny_config(), 91);
    GraphF g;
    auto d = model.encode_g(g, ids_of({1, 2}), 0, nullptr);
    Fused<float> fused{d.states, d.mask};
    CHECK_THROWS_AS(model.decode_logits_g(g, fused, std::vector<int>(9, 1), nullptr), ValidationError);
    CHECK_THROWS_AS(model.decode_logits_g(g, fused, {}, nullptr), ValidationError);
}

TEST_CASE("gradient check: full tiny model end to end") {
    ModelConfig cfg = tiny_config();
    RaceModel<double> model(cfg, 2025);
    TrainExample ex;
    ex.diff = ids_of({5, 6, 7, 8, 9});
    ex.exemplar_diffs = {ids_of({5, 6, 21, 8})};
    ex.exemplar_msgs = {ids_of({25, 26, 27})};
    ex.target = ids_of({Vocab::kBos, 25, 26, 27, Vocab::kEos});

    auto loss_fn = [&]() {
        GraphD g(false);
        return g.value(model.example_loss_g(g, ex, nullptr)).data[0];
    };
    auto backward_fn = [&]() {
        GraphD g(false);
        g.backward(model.example_loss_g(g, ex, nullptr));
    };
    std::vector<std::pair<std::string, Tensor<double>*>> groups;
    for (auto& [name, p] : model.named_params()) groups.emplace_back(name, p);
    const GradCheckReport report = grad_check(loss_fn, backward_fn, groups, 1e-4, 1e-5);
    for (const auto& group : report.groups) {
        INFO(group.name, " rel err ", group.max_rel_error);
        CHECK(group.passed);
    }
    CHECK(report.all_passed);
}

TEST_CASE("gradient check: single attention head through the encoder") {
    ModelConfig cfg = tiny_config();
    cfg.num_heads = 1;
    RaceModel<double> model(cfg, 4);
    const TokenIds input = ids_of({3, 1, 4, 1});

    auto loss_fn = [&]() {
        GraphD g(false);
        auto enc = model.encode_g(g, input, 0, nullptr);
        return g.value(g.sum_all(g.mul(enc.pooled, enc.pooled))).data[0];
    };
    auto backward_fn = [&]() {
        GraphD g(false);
        auto enc = model.encode_g(g, input, 0, nullptr);
        g.backward(g.sum_all(g.mul(enc.pooled, enc.pooled)));
    };
    std::vector<std::pair<std::string, Tensor<double>*>> groups;
    for (auto& [name, p] : model.named_params())
        if (name.rfind("enc.", 0) == 0 || name == "embedding") groups.emplace_back(name, p);
    const GradCheckReport report = grad_check(loss_fn, backward_fn, groups, 1e-4, 1e-5);
    CHECK(report.all_passed);
}

TEST_CASE("training: loss shrinks on one example, frozen params hold still") {
    ModelConfig cfg = tiny_config();
    cfg.guider_bias = false;  // frozen group
    RaceModel<float> model(cfg, 7);
    TrainExample ex;
    ex.diff = ids_of({5, 6, 7, 8});
    ex.exemplar_diffs = {ids_of({5, 6, 21, 8})};
    ex.exemplar_msgs = {ids_of({25, 26})};
    ex.target = ids_of({Vocab::kBos, 25, 26, Vocab::kEos});

    AdamWConfig ocfg;
    ocfg.lr = 1e-3;
    ocfg.warmup_steps = 0;
    AdamW<float> opt(model.params(), ocfg);
    float frozen_bias = -1.0f;
    for (auto& [name, p] : model.named_params())
        if (name == "guider.bias") frozen_bias = p->value.data[0];

    Rng root(100);
    std::vector<double> losses;
    for (int step = 0; step < 50; ++step)
        losses.push_back(model.training_step({ex}, opt, root.substream("step:" + std::to_string(step))));
    for (size_t i = 1; i < losses.size(); ++i) CHECK(losses[i] < losses[i - 1]);

    for (auto& [name, p] : model.named_params())
        if (name == "guider.bias") CHECK(p->value.data[0] == frozen_bias);
}

TEST_CASE("training: bitwise deterministic for a fixed seed") {
    auto run = [] {
        RaceModel<float> model(tiny_config(), 55);
        TrainExample ex;
        ex.diff = ids_of({5, 6, 7});
        ex.exemplar_diffs = {ids_of({5, 9, 7})};
        ex.exemplar_msgs = {ids_of({22, 23})};
        ex.target = ids_of({Vocab::kBos, 22, 23, Vocab::kEos});
        AdamWConfig ocfg;
        AdamW<float> opt(model.params(), ocfg);
        Rng root(42);
        std::vector<double> losses;
        for (int step = 0; step < 5; ++step)
            losses.push_back(model.training_step({ex}, opt, root.substream("s" + std::to_string(step))));
        return losses;
    };
    CHECK(run() == run());
}

TEST_CASE("generate: beam(1) equals greedy on random inputs") {
    RaceModel<float> model(tiny_config(), 303);
    Rng rng(17);
    for (int trial = 0; trial < 20; ++trial) {
        GenInput in;
        std::vector<int> diff(1 + rng.below(8)), ed(1 + rng.below(8)), em(1 + rng.below(4));
        for (int& t : diff) t = 13 + static_cast<int>(rng.below(19));
        for (int& t : ed) t = 13 + static_cast<int>(rng.below(19));
        for (int& t : em) t = 13 + static_cast<int>(rng.below(19));
        in.diff = ids_of(diff);
        in.exemplar_diffs = {ids_of(ed)};
        in.exemplar_msgs = {ids_of(em)};
        DecodeOptions greedy;
        greedy.strategy = DecodeOptions::Strategy::Greedy;
        greedy.max_len = 8;
        DecodeOptions beam1;
        beam1.strategy = DecodeOptions::Strategy::Beam;
        beam1.beam_width = 1;
        beam1.max_len = 8;
        CHECK(model.generate(in, greedy).ids == model.generate(in, beam1).ids);
    }
}

TEST_CASE("generate: output ends at <eos> or the cap; lambdas reported") {
    RaceModel<float> model(tiny_config(), 404);
    GenInput in;
    in.diff = ids_of({4, 5, 6});
    in.exemplar_diffs = {ids_of({4, 5, 7})};
    in.exemplar_msgs = {ids_of({20, 21})};
    for (int width : {1, 3}) {
        DecodeOptions opts;
        opts.strategy = width == 1 ? DecodeOptions::Strategy::Greedy : DecodeOptions::Strategy::Beam;
        opts.beam_width = width;
        opts.max_len = 6;
        const GenResult r = model.generate(in, opts);
        CHECK(r.ids.size() <= 6);
        if (r.ids.size() < 6) CHECK(r.ids.back() == Vocab::kEos);
        REQUIRE(r.lambdas.size() == 1);
        CHECK(r.lambdas[0] > 0.0);
        CHECK(r.lambdas[0] < 1.0);
    }
    DecodeOptions bad;
    bad.max_len = 100;
    CHECK_THROWS_AS(model.generate(in, bad), ValidationError);
}

TEST_CASE("generate: an overfit model reproduces its training message") {
    ModelConfig cfg = tiny_config();
    RaceModel<float> model(cfg, 99);
    TrainExample ex;
    ex.diff = ids_of({5, 6, 7, 8});
    ex.exemplar_diffs = {ids_of({5, 6, 21, 8})};
    ex.exemplar_msgs = {ids_of({25, 26, 27})};
    ex.target = ids_of({Vocab::kBos, 25, 26, 27, Vocab::kEos});
    AdamWConfig ocfg;
    ocfg.lr = 3e-3;
    ocfg.warmup_steps = 0;
    AdamW<float> opt(model.params(), ocfg);
    Rng root(5);
    for (int step = 0; step < 150; ++step)
        model.training_step({ex}, opt, root.substream("step:" + std::to_string(step)));
    GenInput in;
    in.diff = ex.diff;
    in.exemplar_diffs = ex.exemplar_diffs;
    in.exemplar_msgs = ex.exemplar_msgs;
    DecodeOptions opts;
    opts.max_len = 8;
    const GenResult r = model.generate(in, opts);
    CHECK(r.ids == std::vector<int>{25, 26, 27, Vocab::kEos});
}

TEST_CASE("plain model ignores exemplars entirely") {
    RaceModel<float> model(tiny_config(ModelKind::Plain), 111);
    for (auto& [name, p] : model.named_params()) CHECK(name.rfind("guider", 0) != 0);
    GenInput in;
    in.diff = ids_of({4, 5, 6});
    DecodeOptions opts;
    opts.max_len = 6;
    const GenResult r = model.generate(in, opts);
    CHECK(r.lambdas.empty());
    CHECK(r.ids.size() <= 6);
}

TEST_CASE("model config validation") {
    ModelConfig bad = tiny_config();
    bad.d_model = 9;  // not divisible by heads
    CHECK_THROWS_AS(RaceModel<float>(bad, 1), ValidationError);
    ModelConfig bad2 = tiny_config();
    bad2.rel_clip = 0;
    CHECK_THROWS_AS(RaceModel<float>(bad2, 1), ValidationError);
}
