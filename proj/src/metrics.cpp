#include "race/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <unordered_map>

#include "race/errors.hpp"

namespace race {

namespace {

TokenSeq lowercased(const TokenSeq& in) {
    TokenSeq out = in;
    for (std::string& t : out)
        for (char& c : t)
            if (c >= 'A' && c <= 'Z') c = static_cast<char>(c - 'A' + 'a');
    return out;
}

// n-gram key: tokens joined on a separator no tokenizer output contains
std::string ngram_key(const TokenSeq& t, size_t at, int n) {
    std::string k = t[at];
    for (int i = 1; i < n; ++i) {
        k.push_back('\x1f');
        k += t[at + i];
    }
    return k;
}

std::unordered_map<std::string, int> ngram_counts(const TokenSeq& t, int n) {
    std::unordered_map<std::string, int> counts;
    if (static_cast<int>(t.size()) >= n)
        for (size_t i = 0; i + n <= t.size(); ++i) ++counts[ngram_key(t, i, n)];
    return counts;
}

void check_lengths(const std::vector<TokenSeq>& c, const std::vector<TokenSeq>& r, const char* what) {
    if (c.size() != r.size())
        throw ValidationError(std::string(what) + ": candidate/reference lists differ in length");
}

double mean_over_nonempty_refs(const std::vector<TokenSeq>& cands, const std::vector<TokenSeq>& refs,
                               double (*fn)(const TokenSeq&, const TokenSeq&)) {
    double total = 0.0;
    int n = 0;
    for (size_t i = 0; i < cands.size(); ++i) {
        if (refs[i].empty()) continue;
        total += fn(cands[i], refs[i]);
        ++n;
    }
    return n == 0 ? 0.0 : total / n;
}

}  // namespace

double bnorm_sentence(const TokenSeq& candidate, const TokenSeq& reference) {
    const TokenSeq cand = lowercased(candidate);
    const TokenSeq ref = lowercased(reference);
    if (cand.empty()) return 0.0;
    double log_sum = 0.0;
    for (int n = 1; n <= 4; ++n) {
        const int total = std::max(0, static_cast<int>(cand.size()) - n + 1);
        double p;
        if (total == 0) {
            p = 1.0;  // no n-grams of this order to get wrong
        } else {
            const auto cc = ngram_counts(cand, n);
            const auto rc = ngram_counts(ref, n);
            int matches = 0;
            for (const auto& [g, k] : cc) {
                auto it = rc.find(g);
                if (it != rc.end()) matches += std::min(k, it->second);
            }
            if (n == 1) {
                if (matches == 0) return 0.0;  // unsmoothed unigram precision
                p = static_cast<double>(matches) / total;
            } else {
                p = static_cast<double>(matches + 1) / (total + 1);
            }
        }
        log_sum += std::log(p);
    }
    const double c = static_cast<double>(cand.size());
    const double r = static_cast<double>(ref.size());
    const double bp = c < r ? std::exp(1.0 - r / c) : 1.0;
    return bp * std::exp(log_sum / 4.0);
}

double bnorm_bleu(const std::vector<TokenSeq>& candidates, const std::vector<TokenSeq>& references) {
    check_lengths(candidates, references, "bnorm_bleu");
    return 100.0 * mean_over_nonempty_refs(candidates, references, bnorm_sentence);
}

double rouge_l_sentence(const TokenSeq& candidate, const TokenSeq& reference) {
    const TokenSeq cand = lowercased(candidate);
    const TokenSeq ref = lowercased(reference);
    const size_t m = cand.size(), n = ref.size();
    if (m == 0 || n == 0) return 0.0;
    std::vector<int> prev(n + 1, 0), cur(n + 1, 0);
    for (size_t i = 1; i <= m; ++i) {
        for (size_t j = 1; j <= n; ++j)
            cur[j] = cand[i - 1] == ref[j - 1] ? prev[j - 1] + 1 : std::max(prev[j], cur[j - 1]);
        std::swap(prev, cur);
    }
    const double lcs = prev[n];
    if (lcs == 0.0) return 0.0;
    const double p = lcs / static_cast<double>(m);
    const double r = lcs / static_cast<double>(n);
    return 2.0 * p * r / (p + r);
}

double rouge_l(const std::vector<TokenSeq>& candidates, const std::vector<TokenSeq>& references) {
    check_lengths(candidates, references, "rouge_l");
    return mean_over_nonempty_refs(candidates, references, rouge_l_sentence);
}

namespace {

// Alignment search for METEOR: among alignments with the maximum number of
// exact matches, find the minimum chunk count. Branch-and-bound over
// candidate positions; continuation-first ordering makes common sentences
// close instantly. Falls back to a greedy alignment past the node budget.
struct MeteorAligner {
    const TokenSeq& cand;
    const TokenSeq& ref;
    std::unordered_map<std::string, std::vector<int>> ref_positions;
    std::unordered_map<std::string, int> need;       // matches required per token
    std::unordered_map<std::string, int> cand_left;  // candidate occurrences not yet visited
    std::vector<uint8_t> used;
    int total_matches = 0;
    int best_chunks = std::numeric_limits<int>::max();
    long nodes = 0;
    static constexpr long kNodeBudget = 200000;

    MeteorAligner(const TokenSeq& c, const TokenSeq& r) : cand(c), ref(r), used(r.size(), 0) {
        std::unordered_map<std::string, int> cc, rc;
        for (const auto& t : cand) ++cc[t];
        for (int j = 0; j < static_cast<int>(ref.size()); ++j) {
            ++rc[ref[j]];
            ref_positions[ref[j]].push_back(j);
        }
        for (const auto& [t, k] : cc) {
            auto it = rc.find(t);
            if (it != rc.end()) {
                need[t] = std::min(k, it->second);
                total_matches += need[t];
            }
            cand_left[t] = k;
        }
    }

    void dfs(size_t i, int prev_j, int chunks) {
        if (chunks >= best_chunks) return;
        if (++nodes > kNodeBudget) return;
        if (i == cand.size()) {
            best_chunks = chunks;
            return;
        }
        const std::string& t = cand[i];
        auto need_it = need.find(t);
        --cand_left[t];
        if (need_it != need.end() && need_it->second > 0) {
            auto& positions = ref_positions[t];
            // continuation first: aligning to prev_j+1 extends the chunk
            auto try_j = [&](int j) {
                used[j] = 1;
                --need_it->second;
                dfs(i + 1, j, chunks + (j == prev_j + 1 ? 0 : 1));
                ++need_it->second;
                used[j] = 0;
            };
            const int cont = prev_j + 1;
            bool cont_valid = prev_j >= 0 && cont < static_cast<int>(ref.size()) && !used[cont] && ref[cont] == t;
            if (cont_valid) try_j(cont);
            for (int j : positions) {
                if (used[j] || (cont_valid && j == cont)) continue;
                try_j(j);
            }
            // skipping this occurrence is allowed only if later ones cover the need
            if (cand_left[t] >= need_it->second) dfs(i + 1, -2, chunks);
        } else {
            dfs(i + 1, -2, chunks);
        }
        ++cand_left[t];
    }

    // Greedy fallback: prefer continuing the current chunk, else earliest free.
    int greedy_chunks() {
        std::fill(used.begin(), used.end(), 0);
        auto need_copy = need;
        int chunks = 0, prev_j = -2;
        for (size_t i = 0; i < cand.size(); ++i) {
            auto it = need_copy.find(cand[i]);
            if (it == need_copy.end() || it->second == 0) {
                prev_j = -2;
                continue;
            }
            int pick = -1;
            const int cont = prev_j + 1;
            if (prev_j >= 0 && cont < static_cast<int>(ref.size()) && !used[cont] && ref[cont] == cand[i]) {
                pick = cont;
            } else {
                for (int j : ref_positions[cand[i]])
                    if (!used[j]) {
                        pick = j;
                        break;
                    }
            }
            if (pick < 0) {
                prev_j = -2;
                continue;
            }
            used[pick] = 1;
            --it->second;
            chunks += pick == prev_j + 1 ? 0 : 1;
            prev_j = pick;
        }
        return chunks;
    }

    int solve() {
        if (total_matches == 0) return 0;
        dfs(0, -2, 0);
        if (nodes > kNodeBudget && best_chunks == std::numeric_limits<int>::max()) return greedy_chunks();
        if (nodes > kNodeBudget) return std::min(best_chunks, greedy_chunks());
        return best_chunks;
    }
};

}  // namespace

double meteor_sentence(const TokenSeq& candidate, const TokenSeq& reference) {
    const TokenSeq cand = lowercased(candidate);
    const TokenSeq ref = lowercased(reference);
    if (cand.empty() || ref.empty()) return 0.0;
    MeteorAligner aligner(cand, ref);
    if (aligner.total_matches == 0) return 0.0;
    const double m = aligner.total_matches;
    const double chunks = aligner.solve();
    const double p = m / static_cast<double>(cand.size());
    const double r = m / static_cast<double>(ref.size());
    const double f = 10.0 * p * r / (r + 9.0 * p);
    const double penalty = 0.5 * std::pow(chunks / m, 3.0);
    return f * (1.0 - penalty);
}

double meteor(const std::vector<TokenSeq>& candidates, const std::vector<TokenSeq>& references) {
    check_lengths(candidates, references, "meteor");
    return mean_over_nonempty_refs(candidates, references, meteor_sentence);
}

double cider(const std::vector<TokenSeq>& candidates, const std::vector<TokenSeq>& references,
             std::vector<double>* per_example) {
    check_lengths(candidates, references, "cider");
    std::vector<TokenSeq> cands, refs;
    cands.reserve(candidates.size());
    refs.reserve(references.size());
    for (size_t i = 0; i < candidates.size(); ++i) {
        cands.push_back(lowercased(candidates[i]));
        refs.push_back(lowercased(references[i]));
    }
    // document frequencies over the reference set, per n-gram order
    std::vector<std::unordered_map<std::string, int>> df(5);
    int num_refs = 0;
    for (const TokenSeq& r : refs) {
        if (r.empty()) continue;
        ++num_refs;
        for (int n = 1; n <= 4; ++n)
            for (const auto& [g, k] : ngram_counts(r, n)) ++df[n][g];
    }
    if (per_example) per_example->clear();
    double total = 0.0;
    int evaluated = 0;
    for (size_t i = 0; i < cands.size(); ++i) {
        if (refs[i].empty()) continue;
        double sim_sum = 0.0;
        for (int n = 1; n <= 4; ++n) {
            const auto cc = ngram_counts(cands[i], n);
            const auto rc = ngram_counts(refs[i], n);
            if (cc.empty() || rc.empty()) continue;  // no n-grams at this order
            if (cc == rc) {
                // identical multisets: cosine 1 wherever it is defined, and the
                // continuous extension when idf zeroes the vectors outright
                sim_sum += 1.0;
                continue;
            }
            double c_total = 0.0, r_total = 0.0;
            for (const auto& [g, k] : cc) c_total += k;
            for (const auto& [g, k] : rc) r_total += k;
            auto idf = [&](const std::string& g) {
                auto it = df[n].find(g);
                const int d = it == df[n].end() ? 0 : it->second;
                return std::log(static_cast<double>(num_refs) / std::max(1, d));
            };
            double dot = 0.0, cnorm = 0.0, rnorm = 0.0;
            for (const auto& [g, k] : cc) {
                const double w = idf(g);
                const double gc = w * k / c_total;
                cnorm += gc * gc;
                auto it = rc.find(g);
                if (it != rc.end()) {
                    const double gr = w * it->second / r_total;
                    dot += std::min(gc, gr) * gr;  // clipped numerator
                }
            }
            for (const auto& [g, k] : rc) {
                const double gr = idf(g) * k / r_total;
                rnorm += gr * gr;
            }
            if (cnorm <= 0.0 || rnorm <= 0.0) continue;  // zero-norm vectors, unequal multisets
            sim_sum += dot / (std::sqrt(cnorm) * std::sqrt(rnorm));
        }
        const double score = 10.0 * sim_sum / 4.0;
        if (per_example) per_example->push_back(score);
        total += score;
        ++evaluated;
    }
    return evaluated == 0 ? 0.0 : total / evaluated;
}

EvalReport evaluate_all(const std::vector<TokenSeq>& candidates, const std::vector<TokenSeq>& references) {
    if (candidates.size() != references.size())
        throw ValidationError("evaluate_all: candidate/reference lists differ in length");
    if (candidates.empty()) throw ValidationError("evaluate_all: empty input");
    EvalReport report;
    for (size_t i = 0; i < candidates.size(); ++i) {
        if (references[i].empty()) {
            ++report.skipped;
            continue;
        }
        report.per_bnorm.push_back(100.0 * bnorm_sentence(candidates[i], references[i]));
        report.per_meteor.push_back(meteor_sentence(candidates[i], references[i]));
        report.per_rouge.push_back(rouge_l_sentence(candidates[i], references[i]));
        ++report.evaluated;
    }
    if (report.evaluated == 0) throw ValidationError("evaluate_all: every reference is empty");
    auto mean = [](const std::vector<double>& v) {
        double t = 0.0;
        for (double x : v) t += x;
        return v.empty() ? 0.0 : t / v.size();
    };
    report.bnorm_bleu = mean(report.per_bnorm);
    report.meteor = mean(report.per_meteor);
    report.rouge_l = mean(report.per_rouge);
    report.cider = cider(candidates, references, &report.per_cider);
    return report;
}

}  // namespace race
