#pragma once

#include <cmath>
#include <cstdint>
#include <map>
#include <string>

#include "ichscnet/params.hpp"

namespace ichscnet {

// Decoupled-weight-decay adaptive optimizer.  Updates touch only the
// fine_tune/train parameters; frozen tensors are never rescaled or decayed.
template <typename T>
class AdamW {
public:
    AdamW(ParamStore<T>& ps, double lr = 1e-4, double weight_decay = 1e-2,
          double beta1 = 0.9, double beta2 = 0.999, double grad_clip = 5.0,
          double eps = 1e-8)
        : ps_(&ps), lr_(lr), wd_(weight_decay), b1_(beta1), b2_(beta2),
          clip_(grad_clip), eps_(eps) {
        for (auto* p : ps.all()) {
            if (!p->trainable()) continue;
            m_.emplace(p->name, Tensor<T>(p->value.shape()));
            v_.emplace(p->name, Tensor<T>(p->value.shape()));
        }
    }

    // global gradient norm over trainable parameters (pre-clip)
    double grad_norm() const {
        double sq = 0;
        for (const auto* p : ps_->all()) {
            if (!p->trainable()) continue;
            for (int64_t i = 0; i < p->grad.numel(); ++i) {
                const double g = static_cast<double>(p->grad[i]);
                sq += g * g;
            }
        }
        return std::sqrt(sq);
    }

    void step() {
        ++t_;
        T scale = T(1);
        if (clip_ > 0) {
            const double norm = grad_norm();
            if (norm > clip_) scale = static_cast<T>(clip_ / norm);
        }
        const double bc1 = 1.0 - std::pow(b1_, static_cast<double>(t_));
        const double bc2 = 1.0 - std::pow(b2_, static_cast<double>(t_));
        for (auto* p : ps_->all()) {
            if (!p->trainable()) continue;
            Tensor<T>& m = m_.at(p->name);
            Tensor<T>& v = v_.at(p->name);
            for (int64_t i = 0; i < p->value.numel(); ++i) {
                const T g = p->grad[i] * scale;
                m[i] = static_cast<T>(b1_) * m[i] + static_cast<T>(1.0 - b1_) * g;
                v[i] = static_cast<T>(b2_) * v[i] + static_cast<T>(1.0 - b2_) * g * g;
                const T mhat = m[i] / static_cast<T>(bc1);
                const T vhat = v[i] / static_cast<T>(bc2);
                p->value[i] -= static_cast<T>(lr_) *
                               (mhat / (std::sqrt(vhat) + static_cast<T>(eps_)) +
                                static_cast<T>(wd_) * p->value[i]);
            }
        }
    }

    int64_t steps_taken() const { return t_; }

private:
    ParamStore<T>* ps_;
    double lr_, wd_, b1_, b2_, clip_, eps_;
    int64_t t_ = 0;
    std::map<std::string, Tensor<T>> m_, v_;
};

}  // namespace ichscnet
