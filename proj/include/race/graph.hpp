#pragma once

#include <cstdint>
#include <functional>
#include <vector>

#include "race/rng.hpp"
#include "race/tensor.hpp"

namespace race {

// Reverse-mode tape. One Graph instance per forward pass; node creation order
// is a topological order, so backward() is a single reverse sweep. Leaves
// created via param() write their gradients back into the bound Tensor.
template <class S>
class Graph {
  public:
    using Ref = int32_t;

    explicit Graph(bool train_mode = false) : train_mode_(train_mode) {}

    bool train_mode() const { return train_mode_; }

    // --- leaves ---
    Ref param(Tensor<S>& p);
    Ref input(Array<S> v);

    // --- differentiable primitives ---
    Ref matmul(Ref a, Ref b);
    Ref transpose(Ref a);
    Ref add(Ref a, Ref b);              // same shape
    Ref add_rowvec(Ref a, Ref bias);    // [m,n] + [n]
    Ref mul(Ref a, Ref b);              // elementwise, same shape
    Ref scale(Ref a, S c);              // a * c
    Ref offset(Ref a, S c);             // a + c
    Ref mul_scalar(Ref a, Ref s);       // s has exactly one element
    Ref concat(const std::vector<Ref>& parts, int axis);
    Ref slice_cols(Ref a, int c0, int c1);
    Ref embedding(Ref table, std::vector<int> ids);
    Ref softmax_rows(Ref a);
    Ref layer_norm(Ref a, Ref gain, Ref bias);  // last axis, epsilon 1e-5
    Ref relu(Ref a);
    Ref sigmoid(Ref a);
    Ref clamp_open01(Ref a);            // clamp into the open interval (0,1)
    Ref masked_mean_rows(Ref a, const std::vector<uint8_t>& mask);  // -> [1,n]
    Ref sum_all(Ref a);                 // -> [1,1]
    Ref dropout(Ref a, S rate, Rng& rng);

    // Shaw-style relative position terms for self-attention. pk/pv have shape
    // [2w+1, head_dim]; offsets j-i are clipped to [-w, w].
    Ref rel_scores(Ref q, Ref pk, int key_len);  // [m,hd] x [2w+1,hd] -> [m,key_len]
    Ref rel_values(Ref att, Ref pv);             // [m,n] x [2w+1,hd] -> [m,hd]

    // Mean negative log-likelihood of targets; rows with target == ignore_id
    // contribute nothing. logits [m, vocab], targets length m.
    Ref cross_entropy(Ref logits, const std::vector<int>& targets, int ignore_id);

    const Array<S>& value(Ref r) const { return nodes_[r].val; }
    const Array<S>& grad(Ref r) const { return nodes_[r].grad; }
    bool requires_grad(Ref r) const { return nodes_[r].requires_grad; }
    size_t num_nodes() const { return nodes_.size(); }

    // Seeds d(loss)/d(loss) = 1 and sweeps the tape in reverse. Gradients of
    // bound parameters accumulate; callers zero them between steps.
    void backward(Ref loss);

  private:
    struct Node {
        Array<S> val;
        Array<S> grad;
        bool requires_grad = false;
        std::function<void(Graph&)> back;  // empty for leaves
        Tensor<S>* bound = nullptr;
    };

    Ref push(Array<S> val, bool req, std::function<void(Graph&)> back);
    Array<S>& grad_buf(Ref r) { return nodes_[r].grad; }

    std::vector<Node> nodes_;
    bool train_mode_;
};

using GraphF = Graph<float>;
using GraphD = Graph<double>;

}  // namespace race
