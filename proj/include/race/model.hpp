#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "race/graph.hpp"
#include "race/optim.hpp"
#include "race/rng.hpp"
#include "race/vocab.hpp"

namespace race {

// Plain: encoder-decoder over the diff only (the stage-I retriever model and
// the no-retrieval baseline). Full: exemplar-guided generator with the
// guider gate. NoGuider: the ablation that concatenates unweighted.
enum class ModelKind { Plain, Full, NoGuider };

const char* model_kind_name(ModelKind k);
ModelKind model_kind_from_name(const std::string& name);

struct ModelConfig {
    int d_model = 128;
    int num_heads = 4;
    int enc_layers = 2;
    int dec_layers = 2;
    int ffn_dim = 512;
    int rel_clip = 16;  // max relative distance w; tables span offsets [-w, w]
    int vocab_size = 0;
    int max_diff_len = 200;
    int max_msg_len = 50;
    double dropout = 0.1;
    ModelKind kind = ModelKind::Full;
    bool shared_encoders = true;        // one encoder reused for all three inputs
    bool fuse_exemplar_message = true;  // fuse the exemplar message encoding; false fuses its diff encoding
    bool guider_bias = true;            // false pins the guider bias at zero

    int head_dim() const { return d_model / num_heads; }
    void validate() const;
};

template <class S>
struct EncoderOutput {
    Array<S> states;            // [len, d_model], len trimmed to the last unmasked position
    std::vector<uint8_t> mask;  // length == states rows
    Array<S> pooled;            // [1, d_model], masked mean of states
};

// In-graph handles for one encoded sequence.
template <class S>
struct Encoded {
    typename Graph<S>::Ref states = -1;
    typename Graph<S>::Ref pooled = -1;
    std::vector<uint8_t> mask;
};

template <class S>
struct Fused {
    typename Graph<S>::Ref states = -1;
    std::vector<uint8_t> mask;
};

// One training item. Exemplar vectors are empty for Plain models and carry k
// entries for the k-exemplar variant.
struct TrainExample {
    TokenIds diff;
    std::vector<TokenIds> exemplar_diffs;
    std::vector<TokenIds> exemplar_msgs;
    TokenIds target;  // <bos> ... <eos>, padded
};

struct DecodeOptions {
    enum class Strategy { Greedy, Beam };
    Strategy strategy = Strategy::Greedy;
    int beam_width = 5;
    int max_len = 50;  // generated tokens, <eos> included
};

struct GenInput {
    TokenIds diff;
    std::vector<TokenIds> exemplar_diffs;
    std::vector<TokenIds> exemplar_msgs;
};

struct GenResult {
    std::vector<int> ids;        // generated ids after <bos>; ends with <eos> unless capped
    std::vector<double> lambdas; // guider weights, one per exemplar (empty for Plain/NoGuider)
};

// Cross-attention probabilities per (decoder layer, head); test hook.
template <class S>
struct AttnTrace {
    std::vector<Array<S>> cross_probs;
};

template <class S>
class RaceModel {
  public:
    RaceModel(ModelConfig cfg, uint64_t seed);

    const ModelConfig& config() const { return cfg_; }

    // Stable registration order; checkpoint layout and optimizer state follow it.
    std::vector<std::pair<std::string, Tensor<S>*>> named_params();
    std::vector<Tensor<S>*> params();
    void zero_grads();

    // role: 0 input diff, 1 exemplar diff, 2 exemplar message. Roles share
    // weights unless shared_encoders is off. Messages cap at max_msg_len,
    // diffs at max_diff_len.
    Encoded<S> encode_g(Graph<S>& g, const TokenIds& ids, int role, Rng* drop);
    EncoderOutput<S> encode(const TokenIds& ids, int role = 0);

    typename Graph<S>::Ref guider_lambda_g(Graph<S>& g, typename Graph<S>::Ref pooled_d,
                                           typename Graph<S>::Ref pooled_s);
    S guider_lambda(const EncoderOutput<S>& enc_d, const EncoderOutput<S>& enc_s);

    // Sequence-axis concat of scale_d * d.states and scale_m * m.states.
    Fused<S> fuse_scaled_g(Graph<S>& g, const Encoded<S>& d, const Encoded<S>& m,
                           typename Graph<S>::Ref scale_d, typename Graph<S>::Ref scale_m);
    Fused<S> fuse_g(Graph<S>& g, const Encoded<S>& d, const Encoded<S>& m, typename Graph<S>::Ref lambda);
    Fused<S> fuse_noguider_g(Graph<S>& g, const Encoded<S>& d, const Encoded<S>& m);
    // k >= 1 exemplars: diff scaled by 1 - max(lambda_i), exemplar i by lambda_i.
    Fused<S> fuse_multi_g(Graph<S>& g, const Encoded<S>& d, const std::vector<Encoded<S>>& ms,
                          const std::vector<typename Graph<S>::Ref>& lambdas);

    typename Graph<S>::Ref decode_logits_g(Graph<S>& g, const Fused<S>& fused,
                                           const std::vector<int>& prefix_ids, Rng* drop,
                                           AttnTrace<S>* trace = nullptr);

    // Builds encode -> guider -> fuse -> teacher-forced decoder loss.
    typename Graph<S>::Ref example_loss_g(Graph<S>& g, const TrainExample& ex, Rng* drop);

    // Mean loss over the batch; backward with per-item 1/|batch| scaling, then
    // one optimizer step. Deterministic item order.
    double training_step(const std::vector<TrainExample>& batch, AdamW<S>& opt, const Rng& step_rng);

    GenResult generate(const GenInput& input, const DecodeOptions& opts);

  private:
    struct LnParams {
        Tensor<S> gain, bias;
    };
    struct SelfAttnParams {
        Tensor<S> wq, wk, wv, pk, pv;
    };
    struct CrossAttnParams {
        Tensor<S> wq, wk, wv;
    };
    struct FfnParams {
        Tensor<S> w1, b1, w2, b2;
    };
    struct EncLayerParams {
        SelfAttnParams attn;
        LnParams ln1;
        FfnParams ffn;
        LnParams ln2;
    };
    struct DecLayerParams {
        SelfAttnParams self;
        LnParams ln1;
        CrossAttnParams cross;
        LnParams ln2;
        FfnParams ffn;
        LnParams ln3;
    };

    typename Graph<S>::Ref self_attention_g(Graph<S>& g, typename Graph<S>::Ref x, const SelfAttnParams& p,
                                            const std::vector<uint8_t>& mask, bool causal);
    typename Graph<S>::Ref cross_attention_g(Graph<S>& g, typename Graph<S>::Ref queries,
                                             typename Graph<S>::Ref keys_values,
                                             const std::vector<uint8_t>& kv_mask, const CrossAttnParams& p,
                                             AttnTrace<S>* trace);
    typename Graph<S>::Ref ffn_g(Graph<S>& g, typename Graph<S>::Ref x, const FfnParams& p);
    typename Graph<S>::Ref add_norm_g(Graph<S>& g, typename Graph<S>::Ref a, typename Graph<S>::Ref b,
                                      const LnParams& ln);

    int encoder_set_for_role(int role) const;
    std::vector<EncLayerParams>& encoder_layers(int role);

    // fused states + mask for generation, evaluated outside any training graph
    struct GenContext {
        Array<S> fused;
        std::vector<uint8_t> mask;
        std::vector<double> lambdas;
    };
    GenContext prepare_gen(const GenInput& input);
    Array<S> step_logits(const GenContext& ctx, const std::vector<int>& prefix);

    ModelConfig cfg_;
    uint64_t seed_;
    Tensor<S> embedding_;                                  // [vocab, d_model]
    std::vector<std::vector<EncLayerParams>> encoders_;    // 1 set when shared, else 3
    std::vector<DecLayerParams> decoder_;
    Tensor<S> guider_w_;  // [1, 2*d_model]
    Tensor<S> guider_b_;  // [1, 1]
    Tensor<S> out_b_;     // [vocab]; logits use the transposed embedding plus this bias
};

using RaceModelF = RaceModel<float>;
using RaceModelD = RaceModel<double>;

}  // namespace race
