#include "mesen/optim.hpp"

#include <cmath>

namespace mesen {

Adam::Adam(std::vector<Layer*> layers, double lr, double beta1, double beta2, double eps)
    : layers_(std::move(layers)), lr_(lr), beta1_(beta1), beta2_(beta2), eps_(eps) {
    moments_.resize(layers_.size());
    for (size_t i = 0; i < layers_.size(); ++i) {
        moments_[i].m.assign(layers_[i]->param_count(), 0.0);
        moments_[i].v.assign(layers_[i]->param_count(), 0.0);
    }
}

void Adam::step() {
    ++t_;
    const double bc1 = 1.0 - std::pow(beta1_, t_);
    const double bc2 = 1.0 - std::pow(beta2_, t_);
    for (size_t i = 0; i < layers_.size(); ++i) {
        auto& mo = moments_[i];
        size_t k = 0;
        for (auto& tensor : layers_[i]->tensors()) {
            for (size_t u = 0; u < tensor.w.size(); ++u, ++k) {
                const double g = tensor.g[u];
                mo.m[k] = beta1_ * mo.m[k] + (1.0 - beta1_) * g;
                mo.v[k] = beta2_ * mo.v[k] + (1.0 - beta2_) * g * g;
                const double mhat = mo.m[k] / bc1;
                const double vhat = mo.v[k] / bc2;
                tensor.w[u] -= lr_ * mhat / (std::sqrt(vhat) + eps_);
            }
        }
    }
}

}  // namespace mesen
