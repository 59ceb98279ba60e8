#pragma once

#include <string>
#include <vector>

namespace race {

using TokenSeq = std::vector<std::string>;

struct EvalReport {
    double bnorm_bleu = 0.0;  // 0-100
    double meteor = 0.0;      // 0-1
    double rouge_l = 0.0;     // 0-1
    double cider = 0.0;       // 0-10
    std::vector<double> per_bnorm, per_meteor, per_rouge, per_cider;
    int evaluated = 0;
    int skipped = 0;  // pairs with an empty reference
};

// All metrics lowercase both sides first; scoring is over the given tokens,
// no further tokenization.

// Sentence-level smoothed BLEU in [0,1]: modified n-gram precisions up to 4,
// add-one smoothing for n >= 2, p_n = 1 when the candidate has no n-grams of
// order n, brevity penalty exp(1 - r/c) for c < r. Empty candidates score 0.
double bnorm_sentence(const TokenSeq& candidate, const TokenSeq& reference);

// Corpus score: mean of sentence scores * 100.
double bnorm_bleu(const std::vector<TokenSeq>& candidates, const std::vector<TokenSeq>& references);

// LCS-based F1: P = LCS/|cand|, R = LCS/|ref|, F = 2PR/(P+R).
double rouge_l_sentence(const TokenSeq& candidate, const TokenSeq& reference);
double rouge_l(const std::vector<TokenSeq>& candidates, const std::vector<TokenSeq>& references);

// Exact-match METEOR: alignment maximizes matches then minimizes chunks;
// F = 10PR/(R+9P), penalty 0.5*(chunks/matches)^3.
double meteor_sentence(const TokenSeq& candidate, const TokenSeq& reference);
double meteor(const std::vector<TokenSeq>& candidates, const std::vector<TokenSeq>& references);

// CIDEr on a 0-10 scale. Document frequencies come from the reference set of
// the evaluated corpus: tf = count / #ngrams(sentence), idf = ln(N/max(1,df)).
// Per order n, similarity is the clipped cosine; an order with no n-grams on
// either side contributes 0, and equal n-gram multisets score 1 even when idf
// weighting zeroes the vectors (the continuous extension; it makes single-pair
// corpora well defined). Sentences need >= 4 tokens to reach the full 10.
double cider(const std::vector<TokenSeq>& candidates, const std::vector<TokenSeq>& references,
             std::vector<double>* per_example = nullptr);

// Runs all four metrics over aligned lists. Throws ValidationError on length
// mismatch or empty input.
EvalReport evaluate_all(const std::vector<TokenSeq>& candidates, const std::vector<TokenSeq>& references);

}  // namespace race
