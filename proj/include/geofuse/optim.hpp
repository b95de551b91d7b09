#pragma once

#include <cstdint>
#include <vector>

#include "geofuse/tensor.hpp"

namespace geofuse {

struct AdamConfig {
    double lr = 1e-4;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    double gamma = 0.96;  // per-epoch learning-rate decay
};

// Adam over a fixed set of parameters. step() consumes the accumulated
// p->grad buffers; the learning-rate decay applies at epoch boundaries only.
class Adam {
  public:
    Adam(std::vector<Param*> params, AdamConfig cfg = {});

    // Throws NumericalError naming the parameter if any gradient is NaN.
    void step();
    void zero_grad();
    void epoch_end() { lr_ *= cfg_.gamma; }

    double lr() const { return lr_; }
    void set_lr(double v) { lr_ = v; }
    int64_t iteration() const { return step_; }
    const std::vector<Param*>& params() const { return params_; }

  private:
    AdamConfig cfg_;
    double lr_;
    int64_t step_ = 0;
    std::vector<Param*> params_;
    std::vector<TensorD> m_;
    std::vector<TensorD> v_;
};

}  // namespace geofuse
