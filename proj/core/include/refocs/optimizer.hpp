#pragma once

#include <vector>

#include "refocs/autodiff.hpp"

namespace refocs {

struct AdamOptions {
    double lr = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
};

// Adam over a fixed parameter list. Parameters with requires_grad=false are
// skipped entirely: no moment update, no step, so freezing a subnet mid-run
// leaves its state intact.
class Adam {
  public:
    Adam(std::vector<ad::Var> params, AdamOptions opt);

    void step();
    void zero_grad();

    double lr() const { return opt_.lr; }
    void set_lr(double lr) { opt_.lr = lr; }
    long step_count() const { return t_; }

    // Serialization hooks: moments in parameter-list order.
    const std::vector<Tensor>& m() const { return m_; }
    const std::vector<Tensor>& v() const { return v_; }
    void restore(long t, std::vector<Tensor> m, std::vector<Tensor> v);

  private:
    std::vector<ad::Var> params_;
    AdamOptions opt_;
    long t_ = 0;
    std::vector<Tensor> m_, v_;
};

}  // namespace refocs
