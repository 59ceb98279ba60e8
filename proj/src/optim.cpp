#include "race/optim.hpp"

#include <cmath>

namespace race {

template <class S>
AdamW<S>::AdamW(std::vector<Tensor<S>*> params, AdamWConfig cfg) : params_(std::move(params)), cfg_(cfg) {
    m_.reserve(params_.size());
    v_.reserve(params_.size());
    for (Tensor<S>* p : params_) {
        m_.push_back(Array<S>::zeros(p->value.shape));
        v_.push_back(Array<S>::zeros(p->value.shape));
    }
}

template <class S>
void AdamW<S>::step() {
    for (Tensor<S>* p : params_)
        if (p->requires_grad && p->grad.size() != p->value.size())
            throw ValidationError("adamw: parameter has no gradient buffer");
    ++t_;
    double lr = cfg_.lr;
    if (cfg_.warmup_steps > 0 && t_ <= cfg_.warmup_steps)
        lr = cfg_.lr * static_cast<double>(t_) / static_cast<double>(cfg_.warmup_steps);
    const double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_));
    const double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_));
    for (size_t i = 0; i < params_.size(); ++i) {
        Tensor<S>& p = *params_[i];
        if (!p.requires_grad) continue;
        S* w = p.value.data.data();
        const S* g = p.grad.data.data();
        S* m = m_[i].data.data();
        S* v = v_[i].data.data();
        const size_t n = p.value.size();
        for (size_t j = 0; j < n; ++j) {
            const double gj = static_cast<double>(g[j]);
            const double mj = cfg_.beta1 * static_cast<double>(m[j]) + (1.0 - cfg_.beta1) * gj;
            const double vj = cfg_.beta2 * static_cast<double>(v[j]) + (1.0 - cfg_.beta2) * gj * gj;
            m[j] = static_cast<S>(mj);
            v[j] = static_cast<S>(vj);
            const double mhat = mj / bc1;
            const double vhat = vj / bc2;
            const double w0 = static_cast<double>(w[j]);
            w[j] = static_cast<S>(w0 - lr * mhat / (std::sqrt(vhat) + cfg_.eps) - lr * cfg_.weight_decay * w0);
        }
    }
}

template <class S>
void AdamW<S>::zero_grad() {
    for (Tensor<S>* p : params_) p->zero_grad();
}

template class AdamW<float>;
template class AdamW<double>;

}  // namespace race
