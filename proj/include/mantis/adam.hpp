#pragma once

#include <cmath>
#include <cstdint>
#include <vector>

#include "mantis/errors.hpp"
#include "mantis/tensor.hpp"

namespace mantis {

struct AdamConfig {
    double learning_rate = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double epsilon = 1e-8;
};

// Adam with bias correction. Keeps first/second moment buffers per parameter;
// grads are left untouched so the training loop owns zeroing.
class AdamOptimizer {
public:
    AdamOptimizer(std::vector<Tensor> params, AdamConfig config = {})
        : params_(std::move(params)), config_(config) {
        if (!(config_.beta1 >= 0.0 && config_.beta1 < 1.0) ||
            !(config_.beta2 >= 0.0 && config_.beta2 < 1.0)) {
            throw BadConfig("adam betas must be in [0, 1)");
        }
        if (config_.learning_rate <= 0.0) {
            throw BadConfig("learning rate must be positive");
        }
        m_.resize(params_.size());
        v_.resize(params_.size());
        for (size_t i = 0; i < params_.size(); ++i) {
            m_[i].assign(params_[i].values().size(), 0.0);
            v_[i].assign(params_[i].values().size(), 0.0);
        }
    }

    void step() {
        for (const auto& p : params_) {
            if (p.grad().empty()) {
                throw MissingGradient("parameter has no gradient; run backward first");
            }
        }
        ++t_;
        double bc1 = 1.0 - std::pow(config_.beta1, static_cast<double>(t_));
        double bc2 = 1.0 - std::pow(config_.beta2, static_cast<double>(t_));
        for (size_t i = 0; i < params_.size(); ++i) {
            auto& value = params_[i].values();
            const auto& grad = params_[i].grad();
            auto& m = m_[i];
            auto& v = v_[i];
            for (size_t j = 0; j < value.size(); ++j) {
                double g = grad[j];
                m[j] = config_.beta1 * m[j] + (1.0 - config_.beta1) * g;
                v[j] = config_.beta2 * v[j] + (1.0 - config_.beta2) * g * g;
                double mhat = m[j] / bc1;
                double vhat = v[j] / bc2;
                value[j] -= config_.learning_rate * mhat /
                            (std::sqrt(vhat) + config_.epsilon);
            }
        }
    }

    void zero_grad() {
        for (auto& p : params_) p.zero_grad();
    }

    int64_t step_count() const { return t_; }
    const AdamConfig& config() const { return config_; }
    void set_learning_rate(double lr) { config_.learning_rate = lr; }

private:
    std::vector<Tensor> params_;
    AdamConfig config_;
    std::vector<std::vector<double>> m_;
    std::vector<std::vector<double>> v_;
    int64_t t_ = 0;
};

// Scales all grads so their global L2 norm is at most max_norm.
// Returns the pre-clip norm.
inline double clip_global_norm(std::vector<Tensor>& params, double max_norm) {
    double sq = 0.0;
    for (const auto& p : params) {
        for (double g : p.grad()) sq += g * g;
    }
    double norm = std::sqrt(sq);
    if (norm > max_norm && norm > 0.0) {
        double s = max_norm / norm;
        for (auto& p : params) {
            for (double& g : p.grad()) g *= s;
        }
    }
    return norm;
}

}  // namespace mantis
