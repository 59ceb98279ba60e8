#include "race/model.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "race/errors.hpp"

namespace race {

namespace {
constexpr double kMaskBias = -1e30;  // underflows to exactly zero weight after softmax
}

const char* model_kind_name(ModelKind k) {
    switch (k) {
        case ModelKind::Plain: return "plain";
        case ModelKind::Full: return "race";
        case ModelKind::NoGuider: return "race-noguider";
    }
    return "?";
}

ModelKind model_kind_from_name(const std::string& name) {
    if (name == "plain") return ModelKind::Plain;
    if (name == "race") return ModelKind::Full;
    if (name == "race-noguider") return ModelKind::NoGuider;
    throw ValidationError("unknown model kind: " + name);
}

void ModelConfig::validate() const {
    if (d_model <= 0 || num_heads <= 0 || d_model % num_heads != 0)
        throw ValidationError("model config: d_model must be a positive multiple of num_heads");
    if (enc_layers <= 0 || dec_layers <= 0) throw ValidationError("model config: layer counts must be positive");
    if (ffn_dim <= 0) throw ValidationError("model config: ffn_dim must be positive");
    if (rel_clip < 1) throw ValidationError("model config: rel_clip must be >= 1");
    if (vocab_size <= 0) throw ValidationError("model config: vocab_size must be positive");
    if (max_diff_len <= 0 || max_msg_len <= 0) throw ValidationError("model config: length caps must be positive");
    if (dropout < 0.0 || dropout >= 1.0) throw ValidationError("model config: dropout must be in [0,1)");
}

template <class S>
RaceModel<S>::RaceModel(ModelConfig cfg, uint64_t seed) : cfg_(cfg), seed_(seed) {
    cfg_.validate();
    Rng root(seed);
    auto init_matrix = [&](const std::string& name, int r, int c) {
        Rng rng = root.substream("init:" + name);
        Array<S> a = Array<S>::zeros({r, c});
        for (S& v : a.data) v = static_cast<S>(rng.normal(0.0, 0.02));
        return Tensor<S>(std::move(a), true);
    };
    auto init_zeros = [&](int r, int c, bool req = true) { return Tensor<S>(Array<S>::zeros({r, c}), req); };
    auto init_vec_zero = [&](int n) { return Tensor<S>(Array<S>::zeros({n}), true); };
    auto init_vec_one = [&](int n) { return Tensor<S>(Array<S>::full({n}, S(1)), true); };

    const int d = cfg_.d_model, hd = cfg_.head_dim(), f = cfg_.ffn_dim, v = cfg_.vocab_size;
    const int span = 2 * cfg_.rel_clip + 1;

    embedding_ = init_matrix("embedding", v, d);

    const int enc_sets = cfg_.shared_encoders || cfg_.kind == ModelKind::Plain ? 1 : 3;
    encoders_.resize(enc_sets);
    for (int s = 0; s < enc_sets; ++s) {
        std::string base = enc_sets == 1 ? "enc" : "enc" + std::to_string(s);
        for (int l = 0; l < cfg_.enc_layers; ++l) {
            std::string pre = base + ".l" + std::to_string(l) + ".";
            EncLayerParams layer;
            layer.attn.wq = init_matrix(pre + "wq", d, d);
            layer.attn.wk = init_matrix(pre + "wk", d, d);
            layer.attn.wv = init_matrix(pre + "wv", d, d);
            layer.attn.pk = init_matrix(pre + "pk", span, hd);
            layer.attn.pv = init_matrix(pre + "pv", span, hd);
            layer.ln1 = LnParams{init_vec_one(d), init_vec_zero(d)};
            layer.ffn = FfnParams{init_matrix(pre + "ffn.w1", d, f), init_vec_zero(f),
                                  init_matrix(pre + "ffn.w2", f, d), init_vec_zero(d)};
            layer.ln2 = LnParams{init_vec_one(d), init_vec_zero(d)};
            encoders_[s].push_back(std::move(layer));
        }
    }

    for (int l = 0; l < cfg_.dec_layers; ++l) {
        std::string pre = "dec.l" + std::to_string(l) + ".";
        DecLayerParams layer;
        layer.self.wq = init_matrix(pre + "self.wq", d, d);
        layer.self.wk = init_matrix(pre + "self.wk", d, d);
        layer.self.wv = init_matrix(pre + "self.wv", d, d);
        layer.self.pk = init_matrix(pre + "self.pk", span, hd);
        layer.self.pv = init_matrix(pre + "self.pv", span, hd);
        layer.ln1 = LnParams{init_vec_one(d), init_vec_zero(d)};
        layer.cross.wq = init_matrix(pre + "cross.wq", d, d);
        layer.cross.wk = init_matrix(pre + "cross.wk", d, d);
        layer.cross.wv = init_matrix(pre + "cross.wv", d, d);
        layer.ln2 = LnParams{init_vec_one(d), init_vec_zero(d)};
        layer.ffn = FfnParams{init_matrix(pre + "ffn.w1", d, f), init_vec_zero(f),
                              init_matrix(pre + "ffn.w2", f, d), init_vec_zero(d)};
        layer.ln3 = LnParams{init_vec_one(d), init_vec_zero(d)};
        decoder_.push_back(std::move(layer));
    }

    if (cfg_.kind == ModelKind::Full) {
        guider_w_ = init_matrix("guider.ws", 1, 2 * d);
        guider_b_ = init_zeros(1, 1, cfg_.guider_bias);
    }
    out_b_ = init_vec_zero(v);
}

template <class S>
std::vector<std::pair<std::string, Tensor<S>*>> RaceModel<S>::named_params() {
    std::vector<std::pair<std::string, Tensor<S>*>> out;
    out.emplace_back("embedding", &embedding_);
    for (size_t s = 0; s < encoders_.size(); ++s) {
        std::string base = encoders_.size() == 1 ? "enc" : "enc" + std::to_string(s);
        for (size_t l = 0; l < encoders_[s].size(); ++l) {
            std::string pre = base + ".l" + std::to_string(l) + ".";
            EncLayerParams& layer = encoders_[s][l];
            out.emplace_back(pre + "wq", &layer.attn.wq);
            out.emplace_back(pre + "wk", &layer.attn.wk);
            out.emplace_back(pre + "wv", &layer.attn.wv);
            out.emplace_back(pre + "pk", &layer.attn.pk);
            out.emplace_back(pre + "pv", &layer.attn.pv);
            out.emplace_back(pre + "ln1.gain", &layer.ln1.gain);
            out.emplace_back(pre + "ln1.bias", &layer.ln1.bias);
            out.emplace_back(pre + "ffn.w1", &layer.ffn.w1);
            out.emplace_back(pre + "ffn.b1", &layer.ffn.b1);
            out.emplace_back(pre + "ffn.w2", &layer.ffn.w2);
            out.emplace_back(pre + "ffn.b2", &layer.ffn.b2);
            out.emplace_back(pre + "ln2.gain", &layer.ln2.gain);
            out.emplace_back(pre + "ln2.bias", &layer.ln2.bias);
        }
    }
    for (size_t l = 0; l < decoder_.size(); ++l) {
        std::string pre = "dec.l" + std::to_string(l) + ".";
        DecLayerParams& layer = decoder_[l];
        out.emplace_back(pre + "self.wq", &layer.self.wq);
        out.emplace_back(pre + "self.wk", &layer.self.wk);
        out.emplace_back(pre + "self.wv", &layer.self.wv);
        out.emplace_back(pre + "self.pk", &layer.self.pk);
        out.emplace_back(pre + "self.pv", &layer.self.pv);
        out.emplace_back(pre + "ln1.gain", &layer.ln1.gain);
        out.emplace_back(pre + "ln1.bias", &layer.ln1.bias);
        out.emplace_back(pre + "cross.wq", &layer.cross.wq);
        out.emplace_back(pre + "cross.wk", &layer.cross.wk);
        out.emplace_back(pre + "cross.wv", &layer.cross.wv);
        out.emplace_back(pre + "ln2.gain", &layer.ln2.gain);
        out.emplace_back(pre + "ln2.bias", &layer.ln2.bias);
        out.emplace_back(pre + "ffn.w1", &layer.ffn.w1);
        out.emplace_back(pre + "ffn.b1", &layer.ffn.b1);
        out.emplace_back(pre + "ffn.w2", &layer.ffn.w2);
        out.emplace_back(pre + "ffn.b2", &layer.ffn.b2);
        out.emplace_back(pre + "ln3.gain", &layer.ln3.gain);
        out.emplace_back(pre + "ln3.bias", &layer.ln3.bias);
    }
    if (cfg_.kind == ModelKind::Full) {
        out.emplace_back("guider.ws", &guider_w_);
        out.emplace_back("guider.bias", &guider_b_);
    }
    out.emplace_back("out.b", &out_b_);
    return out;
}

template <class S>
std::vector<Tensor<S>*> RaceModel<S>::params() {
    std::vector<Tensor<S>*> out;
    for (auto& [name, p] : named_params()) out.push_back(p);
    return out;
}

template <class S>
void RaceModel<S>::zero_grads() {
    for (Tensor<S>* p : params()) p->zero_grad();
}

template <class S>
int RaceModel<S>::encoder_set_for_role(int role) const {
    if (role < 0 || role > 2) throw ValidationError("encoder role must be 0, 1 or 2");
    return encoders_.size() == 1 ? 0 : role;
}

template <class S>
std::vector<typename RaceModel<S>::EncLayerParams>& RaceModel<S>::encoder_layers(int role) {
    return encoders_[encoder_set_for_role(role)];
}

namespace {

// trailing-pad trim: index just past the last unmasked position
int trimmed_length(const std::vector<uint8_t>& mask) {
    int n = static_cast<int>(mask.size());
    while (n > 0 && !mask[n - 1]) --n;
    return n;
}

template <class S>
Array<S> attention_mask_bias(const std::vector<uint8_t>& kv_mask, int query_len, bool causal) {
    const int n = static_cast<int>(kv_mask.size());
    Array<S> bias = Array<S>::zeros({query_len, n});
    for (int i = 0; i < query_len; ++i)
        for (int j = 0; j < n; ++j)
            if (!kv_mask[j] || (causal && j > i)) bias.data[static_cast<size_t>(i) * n + j] = static_cast<S>(kMaskBias);
    return bias;
}

bool all_ones(const std::vector<uint8_t>& mask) {
    for (uint8_t b : mask)
        if (!b) return false;
    return true;
}

}  // namespace

template <class S>
typename Graph<S>::Ref RaceModel<S>::self_attention_g(Graph<S>& g, typename Graph<S>::Ref x,
                                                      const SelfAttnParams& p, const std::vector<uint8_t>& mask,
                                                      bool causal) {
    const int n = g.value(x).shape[0];
    const int hd = cfg_.head_dim();
    auto q = g.matmul(x, g.param(const_cast<Tensor<S>&>(p.wq)));
    auto k = g.matmul(x, g.param(const_cast<Tensor<S>&>(p.wk)));
    auto v = g.matmul(x, g.param(const_cast<Tensor<S>&>(p.wv)));
    auto pk = g.param(const_cast<Tensor<S>&>(p.pk));
    auto pv = g.param(const_cast<Tensor<S>&>(p.pv));
    const bool need_bias = causal || !all_ones(mask);
    typename Graph<S>::Ref bias = -1;
    if (need_bias) bias = g.input(attention_mask_bias<S>(mask, n, causal));
    std::vector<typename Graph<S>::Ref> heads;
    const S inv_sqrt = S(1) / static_cast<S>(std::sqrt(static_cast<double>(hd)));
    for (int b = 0; b < cfg_.num_heads; ++b) {
        auto qb = g.slice_cols(q, b * hd, (b + 1) * hd);
        auto kb = g.slice_cols(k, b * hd, (b + 1) * hd);
        auto vb = g.slice_cols(v, b * hd, (b + 1) * hd);
        auto scores = g.add(g.matmul(qb, g.transpose(kb)), g.rel_scores(qb, pk, n));
        scores = g.scale(scores, inv_sqrt);
        if (need_bias) scores = g.add(scores, bias);
        auto att = g.softmax_rows(scores);
        heads.push_back(g.add(g.matmul(att, vb), g.rel_values(att, pv)));
    }
    return heads.size() == 1 ? heads[0] : g.concat(heads, 1);
}

template <class S>
typename Graph<S>::Ref RaceModel<S>::cross_attention_g(Graph<S>& g, typename Graph<S>::Ref queries,
                                                       typename Graph<S>::Ref keys_values,
                                                       const std::vector<uint8_t>& kv_mask,
                                                       const CrossAttnParams& p, AttnTrace<S>* trace) {
    const int m = g.value(queries).shape[0];
    const int hd = cfg_.head_dim();
    auto q = g.matmul(queries, g.param(const_cast<Tensor<S>&>(p.wq)));
    auto k = g.matmul(keys_values, g.param(const_cast<Tensor<S>&>(p.wk)));
    auto v = g.matmul(keys_values, g.param(const_cast<Tensor<S>&>(p.wv)));
    const bool need_bias = !all_ones(kv_mask);
    typename Graph<S>::Ref bias = -1;
    if (need_bias) bias = g.input(attention_mask_bias<S>(kv_mask, m, false));
    std::vector<typename Graph<S>::Ref> heads;
    const S inv_sqrt = S(1) / static_cast<S>(std::sqrt(static_cast<double>(hd)));
    for (int b = 0; b < cfg_.num_heads; ++b) {
        auto qb = g.slice_cols(q, b * hd, (b + 1) * hd);
        auto kb = g.slice_cols(k, b * hd, (b + 1) * hd);
        auto vb = g.slice_cols(v, b * hd, (b + 1) * hd);
        auto scores = g.scale(g.matmul(qb, g.transpose(kb)), inv_sqrt);
        if (need_bias) scores = g.add(scores, bias);
        auto att = g.softmax_rows(scores);
        if (trace) trace->cross_probs.push_back(g.value(att));
        heads.push_back(g.matmul(att, vb));
    }
    return heads.size() == 1 ? heads[0] : g.concat(heads, 1);
}

template <class S>
typename Graph<S>::Ref RaceModel<S>::ffn_g(Graph<S>& g, typename Graph<S>::Ref x, const FfnParams& p) {
    auto h = g.add_rowvec(g.matmul(x, g.param(const_cast<Tensor<S>&>(p.w1))), g.param(const_cast<Tensor<S>&>(p.b1)));
    h = g.relu(h);
    return g.add_rowvec(g.matmul(h, g.param(const_cast<Tensor<S>&>(p.w2))), g.param(const_cast<Tensor<S>&>(p.b2)));
}

template <class S>
typename Graph<S>::Ref RaceModel<S>::add_norm_g(Graph<S>& g, typename Graph<S>::Ref a, typename Graph<S>::Ref b,
                                                const LnParams& ln) {
    return g.layer_norm(g.add(a, b), g.param(const_cast<Tensor<S>&>(ln.gain)),
                        g.param(const_cast<Tensor<S>&>(ln.bias)));
}

template <class S>
Encoded<S> RaceModel<S>::encode_g(Graph<S>& g, const TokenIds& ids, int role, Rng* drop) {
    const int cap = role == 2 ? cfg_.max_msg_len : cfg_.max_diff_len;
    if (static_cast<int>(ids.ids.size()) > cap)
        throw ValidationError("encode: sequence length " + std::to_string(ids.ids.size()) + " over cap " +
                              std::to_string(cap));
    if (ids.ids.size() != ids.mask.size()) throw ValidationError("encode: ids/mask length mismatch");
    const int n = trimmed_length(ids.mask);
    if (n == 0) throw ValidationError("encode: empty (fully masked) sequence");
    std::vector<int> toks(ids.ids.begin(), ids.ids.begin() + n);
    std::vector<uint8_t> mask(ids.mask.begin(), ids.mask.begin() + n);

    auto h = g.embedding(g.param(embedding_), toks);
    const S rate = static_cast<S>(cfg_.dropout);
    if (drop && g.train_mode()) h = g.dropout(h, rate, *drop);
    auto& layers = encoder_layers(role);
    for (auto& layer : layers) {
        auto att = self_attention_g(g, h, layer.attn, mask, false);
        if (drop && g.train_mode()) att = g.dropout(att, rate, *drop);
        auto hid = add_norm_g(g, att, h, layer.ln1);
        auto ff = ffn_g(g, hid, layer.ffn);
        if (drop && g.train_mode()) ff = g.dropout(ff, rate, *drop);
        h = add_norm_g(g, ff, hid, layer.ln2);
    }
    Encoded<S> out;
    out.states = h;
    out.mask = mask;
    out.pooled = g.masked_mean_rows(h, mask);
    return out;
}

template <class S>
EncoderOutput<S> RaceModel<S>::encode(const TokenIds& ids, int role) {
    Graph<S> g(false);
    Encoded<S> e = encode_g(g, ids, role, nullptr);
    EncoderOutput<S> out;
    out.states = g.value(e.states);
    out.mask = e.mask;
    out.pooled = g.value(e.pooled);
    return out;
}

template <class S>
typename Graph<S>::Ref RaceModel<S>::guider_lambda_g(Graph<S>& g, typename Graph<S>::Ref pooled_d,
                                                     typename Graph<S>::Ref pooled_s) {
    if (cfg_.kind != ModelKind::Full) throw ValidationError("guider: model has no guider parameters");
    if (g.value(pooled_d).cols() != cfg_.d_model || g.value(pooled_s).cols() != cfg_.d_model)
        throw ShapeError("guider: pooled width " + g.value(pooled_d).shape_str() + " vs d_model " +
                         std::to_string(cfg_.d_model));
    auto cat = g.concat({pooled_d, pooled_s}, 1);              // [1, 2d]
    auto score = g.matmul(cat, g.transpose(g.param(guider_w_)));  // [1, 1]
    score = g.add(score, g.param(guider_b_));
    return g.clamp_open01(g.sigmoid(score));
}

template <class S>
S RaceModel<S>::guider_lambda(const EncoderOutput<S>& enc_d, const EncoderOutput<S>& enc_s) {
    Graph<S> g(false);
    auto lam = guider_lambda_g(g, g.input(enc_d.pooled), g.input(enc_s.pooled));
    return g.value(lam).data[0];
}

template <class S>
Fused<S> RaceModel<S>::fuse_scaled_g(Graph<S>& g, const Encoded<S>& d, const Encoded<S>& m,
                                     typename Graph<S>::Ref scale_d, typename Graph<S>::Ref scale_m) {
    Fused<S> out;
    auto sd = g.mul_scalar(d.states, scale_d);
    if (m.mask.empty()) {
        out.states = sd;
        out.mask = d.mask;
        return out;
    }
    auto sm = g.mul_scalar(m.states, scale_m);
    out.states = g.concat({sd, sm}, 0);
    out.mask = d.mask;
    out.mask.insert(out.mask.end(), m.mask.begin(), m.mask.end());
    return out;
}

template <class S>
Fused<S> RaceModel<S>::fuse_g(Graph<S>& g, const Encoded<S>& d, const Encoded<S>& m,
                              typename Graph<S>::Ref lambda) {
    const S lv = g.value(lambda).data[0];
    if (!(lv > S(0) && lv < S(1))) throw ValidationError("fuse: lambda must lie in (0,1)");
    auto one_minus = g.offset(g.scale(lambda, S(-1)), S(1));
    return fuse_scaled_g(g, d, m, one_minus, lambda);
}

template <class S>
Fused<S> RaceModel<S>::fuse_noguider_g(Graph<S>& g, const Encoded<S>& d, const Encoded<S>& m) {
    auto one = g.input(Array<S>({1, 1}, {S(1)}));
    return fuse_scaled_g(g, d, m, one, one);
}

template <class S>
Fused<S> RaceModel<S>::fuse_multi_g(Graph<S>& g, const Encoded<S>& d, const std::vector<Encoded<S>>& ms,
                                    const std::vector<typename Graph<S>::Ref>& lambdas) {
    if (ms.empty() || ms.size() != lambdas.size())
        throw ValidationError("fuse_multi: need k >= 1 exemplars with matching lambdas");
    if (ms.size() == 1) return fuse_g(g, d, ms[0], lambdas[0]);
    // diff half scaled by 1 - max(lambda); ties pick the earliest exemplar
    size_t best = 0;
    for (size_t i = 1; i < lambdas.size(); ++i)
        if (g.value(lambdas[i]).data[0] > g.value(lambdas[best]).data[0]) best = i;
    auto one_minus = g.offset(g.scale(lambdas[best], S(-1)), S(1));
    Fused<S> out;
    std::vector<typename Graph<S>::Ref> parts;
    parts.push_back(g.mul_scalar(d.states, one_minus));
    out.mask = d.mask;
    for (size_t i = 0; i < ms.size(); ++i) {
        parts.push_back(g.mul_scalar(ms[i].states, lambdas[i]));
        out.mask.insert(out.mask.end(), ms[i].mask.begin(), ms[i].mask.end());
    }
    out.states = g.concat(parts, 0);
    return out;
}

template <class S>
typename Graph<S>::Ref RaceModel<S>::decode_logits_g(Graph<S>& g, const Fused<S>& fused,
                                                     const std::vector<int>& prefix_ids, Rng* drop,
                                                     AttnTrace<S>* trace) {
    if (static_cast<int>(prefix_ids.size()) > cfg_.max_msg_len)
        throw ValidationError("decode: prefix length " + std::to_string(prefix_ids.size()) + " over cap " +
                              std::to_string(cfg_.max_msg_len));
    if (prefix_ids.empty()) throw ValidationError("decode: empty prefix");
    std::vector<uint8_t> self_mask(prefix_ids.size(), 1);
    auto h = g.embedding(g.param(embedding_), prefix_ids);
    const S rate = static_cast<S>(cfg_.dropout);
    if (drop && g.train_mode()) h = g.dropout(h, rate, *drop);
    for (auto& layer : decoder_) {
        auto att = self_attention_g(g, h, layer.self, self_mask, true);
        if (drop && g.train_mode()) att = g.dropout(att, rate, *drop);
        auto s1 = add_norm_g(g, att, h, layer.ln1);
        auto cross = cross_attention_g(g, s1, fused.states, fused.mask, layer.cross, trace);
        if (drop && g.train_mode()) cross = g.dropout(cross, rate, *drop);
        auto s2 = add_norm_g(g, cross, s1, layer.ln2);
        auto ff = ffn_g(g, s2, layer.ffn);
        if (drop && g.train_mode()) ff = g.dropout(ff, rate, *drop);
        h = add_norm_g(g, ff, s2, layer.ln3);
    }
    // output projection tied to the token embedding
    return g.add_rowvec(g.matmul(h, g.transpose(g.param(embedding_))), g.param(out_b_));
}

template <class S>
typename Graph<S>::Ref RaceModel<S>::example_loss_g(Graph<S>& g, const TrainExample& ex, Rng* drop) {
    Encoded<S> enc_d = encode_g(g, ex.diff, 0, drop);
    Fused<S> fused;
    if (cfg_.kind == ModelKind::Plain) {
        fused.states = enc_d.states;
        fused.mask = enc_d.mask;
    } else {
        const size_t k = ex.exemplar_diffs.size();
        if (k == 0 || ex.exemplar_msgs.size() != k)
            throw ValidationError("training example needs k >= 1 exemplar diff/message pairs");
        std::vector<Encoded<S>> fuse_sides;
        std::vector<typename Graph<S>::Ref> lambdas;
        for (size_t i = 0; i < k; ++i) {
            Encoded<S> enc_s = encode_g(g, ex.exemplar_diffs[i], 1, drop);
            Encoded<S> enc_m;
            if (cfg_.fuse_exemplar_message)
                enc_m = encode_g(g, ex.exemplar_msgs[i], 2, drop);
            fuse_sides.push_back(cfg_.fuse_exemplar_message ? enc_m : enc_s);
            if (cfg_.kind == ModelKind::Full) lambdas.push_back(guider_lambda_g(g, enc_d.pooled, enc_s.pooled));
        }
        if (cfg_.kind == ModelKind::NoGuider) {
            fused = fuse_noguider_g(g, enc_d, fuse_sides[0]);
            for (size_t i = 1; i < fuse_sides.size(); ++i) {
                Encoded<S> merged;
                merged.states = fused.states;
                merged.mask = fused.mask;
                fused = fuse_noguider_g(g, merged, fuse_sides[i]);
            }
        } else {
            fused = fuse_multi_g(g, enc_d, fuse_sides, lambdas);
        }
    }
    const int tlen = trimmed_length(ex.target.mask);
    if (tlen < 2) throw ValidationError("training example target must contain <bos> and <eos>");
    std::vector<int> prefix(ex.target.ids.begin(), ex.target.ids.begin() + tlen - 1);
    std::vector<int> labels(ex.target.ids.begin() + 1, ex.target.ids.begin() + tlen);
    auto logits = decode_logits_g(g, fused, prefix, drop);
    return g.cross_entropy(logits, labels, Vocab::kPad);
}

template <class S>
double RaceModel<S>::training_step(const std::vector<TrainExample>& batch, AdamW<S>& opt, const Rng& step_rng) {
    if (batch.empty()) throw ValidationError("training_step: empty batch");
    opt.zero_grad();
    double total = 0.0;
    const S inv_b = S(1) / static_cast<S>(batch.size());
    for (size_t i = 0; i < batch.size(); ++i) {
        Graph<S> g(true);
        Rng drop = step_rng.substream("dropout:item:" + std::to_string(i));
        auto loss = example_loss_g(g, batch[i], &drop);
        total += static_cast<double>(g.value(loss).data[0]);
        auto scaled = g.scale(loss, inv_b);
        g.backward(scaled);
    }
    opt.step();
    return total / static_cast<double>(batch.size());
}

template <class S>
typename RaceModel<S>::GenContext RaceModel<S>::prepare_gen(const GenInput& input) {
    Graph<S> g(false);
    Encoded<S> enc_d = encode_g(g, input.diff, 0, nullptr);
    GenContext ctx;
    if (cfg_.kind == ModelKind::Plain) {
        ctx.fused = g.value(enc_d.states);
        ctx.mask = enc_d.mask;
        return ctx;
    }
    const size_t k = input.exemplar_diffs.size();
    if (k == 0 || input.exemplar_msgs.size() != k)
        throw ValidationError("generate: model kind requires k >= 1 exemplar diff/message pairs");
    std::vector<Encoded<S>> fuse_sides;
    std::vector<typename Graph<S>::Ref> lambdas;
    for (size_t i = 0; i < k; ++i) {
        Encoded<S> enc_s = encode_g(g, input.exemplar_diffs[i], 1, nullptr);
        Encoded<S> enc_m;
        if (cfg_.fuse_exemplar_message) enc_m = encode_g(g, input.exemplar_msgs[i], 2, nullptr);
        fuse_sides.push_back(cfg_.fuse_exemplar_message ? enc_m : enc_s);
        if (cfg_.kind == ModelKind::Full) {
            auto lam = guider_lambda_g(g, enc_d.pooled, enc_s.pooled);
            lambdas.push_back(lam);
            ctx.lambdas.push_back(static_cast<double>(g.value(lam).data[0]));
        }
    }
    Fused<S> fused;
    if (cfg_.kind == ModelKind::NoGuider) {
        fused = fuse_noguider_g(g, enc_d, fuse_sides[0]);
        for (size_t i = 1; i < fuse_sides.size(); ++i) {
            Encoded<S> merged;
            merged.states = fused.states;
            merged.mask = fused.mask;
            fused = fuse_noguider_g(g, merged, fuse_sides[i]);
        }
    } else {
        fused = fuse_multi_g(g, enc_d, fuse_sides, lambdas);
    }
    ctx.fused = g.value(fused.states);
    ctx.mask = fused.mask;
    return ctx;
}

template <class S>
Array<S> RaceModel<S>::step_logits(const GenContext& ctx, const std::vector<int>& prefix) {
    Graph<S> g(false);
    Fused<S> fused;
    fused.states = g.input(ctx.fused);
    fused.mask = ctx.mask;
    auto logits = decode_logits_g(g, fused, prefix, nullptr);
    const Array<S>& all = g.value(logits);
    const int v = all.shape[1];
    Array<S> last = Array<S>::zeros({1, v});
    const size_t off = static_cast<size_t>(all.shape[0] - 1) * v;
    for (int j = 0; j < v; ++j) last.data[j] = all.data[off + j];
    return last;
}

namespace {

template <class S>
std::vector<double> log_softmax_row(const Array<S>& row) {
    const int v = static_cast<int>(row.data.size());
    double mx = static_cast<double>(row.data[0]);
    for (int j = 1; j < v; ++j) mx = std::max(mx, static_cast<double>(row.data[j]));
    double sum = 0.0;
    for (int j = 0; j < v; ++j) sum += std::exp(static_cast<double>(row.data[j]) - mx);
    const double lse = std::log(sum) + mx;
    std::vector<double> out(v);
    for (int j = 0; j < v; ++j) out[j] = static_cast<double>(row.data[j]) - lse;
    return out;
}

}  // namespace

template <class S>
GenResult RaceModel<S>::generate(const GenInput& input, const DecodeOptions& opts) {
    if (opts.max_len < 1 || opts.max_len > cfg_.max_msg_len)
        throw ValidationError("generate: max_len must be in [1, max_msg_len]");
    GenContext ctx = prepare_gen(input);
    GenResult result;
    result.lambdas = ctx.lambdas;

    if (opts.strategy == DecodeOptions::Strategy::Greedy || opts.beam_width <= 1) {
        std::vector<int> prefix = {Vocab::kBos};
        while (static_cast<int>(prefix.size()) - 1 < opts.max_len) {
            Array<S> row = step_logits(ctx, prefix);
            int best = 0;
            for (int j = 1; j < static_cast<int>(row.data.size()); ++j)
                if (row.data[j] > row.data[best]) best = j;  // ties keep the lowest id
            prefix.push_back(best);
            if (best == Vocab::kEos) break;
        }
        result.ids.assign(prefix.begin() + 1, prefix.end());
        return result;
    }

    struct Hyp {
        std::vector<int> ids;  // includes leading <bos>
        double log_sum = 0.0;
        double score() const {
            const size_t n = ids.size() - 1;
            return n == 0 ? 0.0 : log_sum / static_cast<double>(n);
        }
    };
    std::vector<Hyp> active = {Hyp{{Vocab::kBos}, 0.0}};
    std::vector<Hyp> finished;
    const int width = opts.beam_width;
    for (int step = 0; step < opts.max_len && !active.empty(); ++step) {
        struct Cand {
            size_t parent;
            int token;
            double log_sum;
            double score;
        };
        std::vector<Cand> cands;
        for (size_t h = 0; h < active.size(); ++h) {
            Array<S> row = step_logits(ctx, active[h].ids);
            const auto logp = log_softmax_row(row);
            for (int j = 0; j < static_cast<int>(logp.size()); ++j) {
                const double ls = active[h].log_sum + logp[j];
                const double n = static_cast<double>(active[h].ids.size());  // tokens incl. the new one
                cands.push_back(Cand{h, j, ls, ls / n});
            }
        }
        std::sort(cands.begin(), cands.end(), [](const Cand& a, const Cand& b) {
            if (a.score != b.score) return a.score > b.score;
            if (a.parent != b.parent) return a.parent < b.parent;
            return a.token < b.token;  // lowest token id on ties
        });
        std::vector<Hyp> next;
        int considered = 0;
        for (const Cand& c : cands) {
            if (considered >= 2 * width || static_cast<int>(next.size()) >= width) break;
            ++considered;
            Hyp h = active[c.parent];
            h.ids.push_back(c.token);
            h.log_sum = c.log_sum;
            if (c.token == Vocab::kEos)
                finished.push_back(std::move(h));
            else
                next.push_back(std::move(h));
        }
        active = std::move(next);
        if (static_cast<int>(finished.size()) >= width) break;
    }
    std::vector<Hyp> pool = finished;
    pool.insert(pool.end(), active.begin(), active.end());
    size_t best = 0;
    for (size_t i = 1; i < pool.size(); ++i) {
        if (pool[i].score() > pool[best].score() ||
            (pool[i].score() == pool[best].score() && pool[i].ids < pool[best].ids))
            best = i;
    }
    result.ids.assign(pool[best].ids.begin() + 1, pool[best].ids.end());
    return result;
}

template class RaceModel<float>;
template class RaceModel<double>;

template struct EncoderOutput<float>;
template struct EncoderOutput<double>;

}  // namespace race
