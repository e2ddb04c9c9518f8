#include "lowlight/optim.hpp"

#include <cmath>
#include <stdexcept>

#include "lowlight/errors.hpp"

namespace lowlight {

Adam::Adam(std::vector<Tensor*> params, AdamConfig cfg) : params_(std::move(params)), cfg_(cfg) {
    for (const Tensor* p : params_) {
        m_.emplace_back(p->shape);
        v_.emplace_back(p->shape);
    }
}

void Adam::step(const std::vector<const Tensor*>& grads) {
    if (grads.size() != params_.size()) throw std::invalid_argument("Adam::step: grad count mismatch");
    ++t_;
    const double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_));
    const double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_));
    for (std::size_t i = 0; i < params_.size(); ++i) {
        Tensor& p = *params_[i];
        const Tensor& g = *grads[i];
        Tensor& m = m_[i];
        Tensor& v = v_[i];
        for (std::size_t j = 0; j < p.v.size(); ++j) {
            m.v[j] = cfg_.beta1 * m.v[j] + (1.0 - cfg_.beta1) * g.v[j];
            v.v[j] = cfg_.beta2 * v.v[j] + (1.0 - cfg_.beta2) * g.v[j] * g.v[j];
            const double mhat = m.v[j] / bc1;
            const double vhat = v.v[j] / bc2;
            p.v[j] -= cfg_.lr * (mhat / (std::sqrt(vhat) + cfg_.eps) + cfg_.weight_decay * p.v[j]);
        }
    }
}

void Adam::export_state(std::vector<std::pair<std::string, Tensor>>& out,
                        const std::string& prefix) const {
    Tensor tt({1});
    tt.v[0] = static_cast<double>(t_);
    out.emplace_back(prefix + ".t", tt);
    for (std::size_t i = 0; i < m_.size(); ++i) {
        out.emplace_back(prefix + ".m" + std::to_string(i), m_[i]);
        out.emplace_back(prefix + ".v" + std::to_string(i), v_[i]);
    }
}

void Adam::import_state(const std::vector<std::pair<std::string, Tensor>>& in,
                        const std::string& prefix) {
    auto find = [&](const std::string& name) -> const Tensor* {
        for (const auto& [n, t] : in)
            if (n == name) return &t;
        return nullptr;
    };
    const Tensor* tt = find(prefix + ".t");
    if (!tt) throw ParseError("optimizer state missing: " + prefix + ".t");
    t_ = static_cast<std::int64_t>(tt->v[0]);
    for (std::size_t i = 0; i < m_.size(); ++i) {
        const Tensor* m = find(prefix + ".m" + std::to_string(i));
        const Tensor* v = find(prefix + ".v" + std::to_string(i));
        if (!m || !v || !m->same_shape(m_[i]) || !v->same_shape(v_[i]))
            throw ParseError("optimizer state shape mismatch at slot " + std::to_string(i));
        m_[i] = *m;
        v_[i] = *v;
    }
}

double clip_global_norm(std::vector<Tensor*> grads, double max_norm) {
    if (max_norm <= 0.0) throw std::invalid_argument("clip_global_norm: max_norm must be > 0");
    double sq = 0.0;
    for (const Tensor* g : grads)
        for (double x : g->v) sq += x * x;
    const double norm = std::sqrt(sq);
    if (norm > max_norm) {
        const double scale = max_norm / norm;
        for (Tensor* g : grads)
            for (double& x : g->v) x *= scale;
    }
    return norm;
}

}  // namespace lowlight
