#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <string>
#include <vector>

#include "slidenet/neural/ops.hpp"

namespace test_support {

using slidenet::nn::Mat;
using slidenet::nn::Parameter;
using slidenet::nn::Tape;
using slidenet::nn::Var;

struct GradReport {
  double max_rel = 0.0;
  std::string worst;  // parameter[index] with the largest error
  std::size_t checked = 0;
};

/// Compares tape gradients of the scalar `f` against central differences of
/// step h for every entry of every parameter. Relative error per entry is
/// |a - n| / max(|a|, |n|, floor); the floor keeps entries whose true
/// gradient is numerically zero from dividing by round-off.
inline GradReport grad_check(const std::function<Var(Tape&)>& f, const std::vector<Parameter*>& params,
                             double h = 1e-5, double floor = 1e-4) {
  for (auto* p : params) p->zero_grad();
  {
    Tape t;
    t.backward(f(t));
  }
  GradReport rep;
  for (auto* p : params) {
    const Mat analytic = p->grad;
    for (Eigen::Index i = 0; i < p->value.size(); ++i) {
      double& x = p->value.data()[i];
      const double x0 = x;
      x = x0 + h;
      double fp, fm;
      {
        Tape t;
        fp = f(t).value()(0, 0);
      }
      x = x0 - h;
      {
        Tape t;
        fm = f(t).value()(0, 0);
      }
      x = x0;
      const double num = (fp - fm) / (2.0 * h);
      const double a = analytic.data()[i];
      const double rel = std::abs(a - num) / std::max({std::abs(a), std::abs(num), floor});
      ++rep.checked;
      if (rel > rep.max_rel) {
        rep.max_rel = rel;
        rep.worst = p->name + "[" + std::to_string(i) + "] analytic " + std::to_string(a) + " numeric " +
                    std::to_string(num);
      }
    }
  }
  return rep;
}

} // namespace test_support
