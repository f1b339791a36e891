#pragma once

#include <cmath>
#include <vector>

#include "longct/nn/model.hpp"

namespace longct {

/// Adam optimizer over a model's parameter list (moments 0.9/0.999, the
/// standard defaults).
template <typename T>
class Adam {
public:
    Adam(FCDenseNet<T>& model, double beta1 = 0.9, double beta2 = 0.999,
         double eps = 1e-8)
        : model_(model), beta1_(beta1), beta2_(beta2), eps_(eps) {
        for (auto& p : model.parameters()) {
            m_.emplace_back(p.value.numel(), 0.0);
            v_.emplace_back(p.value.numel(), 0.0);
        }
    }

    void step(double lr) {
        ++t_;
        const double bc1 = 1.0 - std::pow(beta1_, t_);
        const double bc2 = 1.0 - std::pow(beta2_, t_);
        auto& params = model_.parameters();
        for (size_t pi = 0; pi < params.size(); ++pi) {
            auto& value = params[pi].value.v;
            auto& grad = params[pi].grad.v;
            auto& m = m_[pi];
            auto& v = v_[pi];
            for (size_t i = 0; i < value.size(); ++i) {
                const double g = grad[i];
                m[i] = beta1_ * m[i] + (1.0 - beta1_) * g;
                v[i] = beta2_ * v[i] + (1.0 - beta2_) * g * g;
                const double mhat = m[i] / bc1;
                const double vhat = v[i] / bc2;
                value[i] -= static_cast<T>(lr * mhat / (std::sqrt(vhat) + eps_));
            }
        }
    }

    int64_t steps() const { return t_; }

private:
    FCDenseNet<T>& model_;
    double beta1_, beta2_, eps_;
    int64_t t_ = 0;
    std::vector<std::vector<double>> m_, v_;
};

}  // namespace longct
