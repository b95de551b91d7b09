#include "geofuse/optim.hpp"

#include <cmath>

#include "geofuse/errors.hpp"

namespace geofuse {

Adam::Adam(std::vector<Param*> params, AdamConfig cfg)
    : cfg_(cfg), lr_(cfg.lr), params_(std::move(params)) {
    m_.reserve(params_.size());
    v_.reserve(params_.size());
    for (Param* p : params_) {
        m_.emplace_back(p->value.shape);
        v_.emplace_back(p->value.shape);
    }
}

void Adam::step() {
    for (Param* p : params_)
        for (float g : p->grad.v)
            if (std::isnan(g))
                throw NumericalError(msg("adam_step: NaN gradient for parameter '", p->name, "'"));
    ++step_;
    double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(step_));
    double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(step_));
    for (size_t i = 0; i < params_.size(); ++i) {
        Param* p = params_[i];
        double* m = m_[i].data();
        double* v = v_[i].data();
        for (size_t j = 0; j < p->value.v.size(); ++j) {
            double g = static_cast<double>(p->grad.v[j]);
            m[j] = cfg_.beta1 * m[j] + (1.0 - cfg_.beta1) * g;
            v[j] = cfg_.beta2 * v[j] + (1.0 - cfg_.beta2) * g * g;
            double mhat = m[j] / bc1;
            double vhat = v[j] / bc2;
            p->value.v[j] = static_cast<float>(
                static_cast<double>(p->value.v[j]) - lr_ * mhat / (std::sqrt(vhat) + cfg_.eps));
        }
    }
}

void Adam::zero_grad() {
    for (Param* p : params_) p->zero_grad();
}

}  // namespace geofuse
