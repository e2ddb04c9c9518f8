#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "lowlight/tensor.hpp"

namespace lowlight {

struct AdamConfig {
    double lr = 1e-4;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    double weight_decay = 0.0;  // decoupled
};

// Adam with decoupled weight decay. Gradient clipping is the caller's job
// (see clip_global_norm) so the optimizer state stays orthogonal to it.
class Adam {
public:
    Adam(std::vector<Tensor*> params, AdamConfig cfg);

    void step(const std::vector<const Tensor*>& grads);

    std::int64_t steps_taken() const { return t_; }

    // State round-trip for bit-perfect training resume.
    void export_state(std::vector<std::pair<std::string, Tensor>>& out, const std::string& prefix) const;
    void import_state(const std::vector<std::pair<std::string, Tensor>>& in, const std::string& prefix);

private:
    std::vector<Tensor*> params_;
    AdamConfig cfg_;
    std::vector<Tensor> m_, v_;
    std::int64_t t_ = 0;
};

// Scales grads in place so the global L2 norm is at most max_norm; returns
// the pre-clip norm.
double clip_global_norm(std::vector<Tensor*> grads, double max_norm);

}  // namespace lowlight
