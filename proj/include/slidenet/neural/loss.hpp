#pragma once

#include <cmath>
#include <optional>

#include "slidenet/neural/model.hpp"

namespace slidenet::nn {

inline constexpr double kPositionFloor = 1e-6;  // m
inline constexpr double kRotationFloor = 1e-6;  // degrees
inline constexpr double kHeadWeight = 0.1;

/// ||P - P_hat|| / ||P||, or the absolute error when ||P|| < 1e-6 m.
inline double position_loss(const Vec2& pred, const Vec2& target) {
  const double e = (pred - target).norm();
  const double n = target.norm();
  return n < kPositionFloor ? e : e / n;
}

/// |theta_hat - theta| / (|theta_hat| + |theta|), zero when both are below 1e-6 degrees.
inline double rotation_loss(double pred, double target) {
  if (std::abs(pred) < kRotationFloor && std::abs(target) < kRotationFloor) return 0.0;
  return std::abs(pred - target) / (std::abs(pred) + std::abs(target));
}

/// Plain relative error of a scalar with the same small-target fallback.
inline double scalar_relative_error(double pred, double target, double floor = 1e-6) {
  const double e = std::abs(pred - target);
  return std::abs(target) < floor ? e : e / std::abs(target);
}

struct Targets {
  Mat pos;           // B x 2
  Mat rot;           // B x 1, degrees
  Mat mass_inertia;  // B x 2 (only read when the head is on)
  Mat velocities;    // B x 2
};

struct LossValues {
  Var total;
  double pos = 0.0;
  double rot = 0.0;
  std::optional<double> mass, inertia, v0, omega0;
};

/// Batch mean of the position and rotation losses plus 0.1 times each
/// optional-head term. Mass, inertia and |v0| use relative errors; omega0 can
/// sit at zero for through-COM pushes, so it uses the symmetric form.
inline LossValues compute_loss(const Outputs& out, const Targets& y) {
  LossValues lv;
  const Var lp = mean_all(relative_error_rows(out.pos, y.pos, kPositionFloor));
  const Var lr = mean_all(symmetric_error_rows(out.rot, y.rot, kRotationFloor));
  lv.pos = lp.value()(0, 0);
  lv.rot = lr.value()(0, 0);
  Var total = add(lp, lr);
  const auto head_term = [&](Var v) {
    total = add(total, scale(v, kHeadWeight));
    return v.value()(0, 0);
  };
  if (out.mass_inertia) {
    lv.mass = head_term(mean_all(relative_error_rows(slice_cols(*out.mass_inertia, 0, 1), y.mass_inertia.col(0), 1e-6)));
    lv.inertia =
        head_term(mean_all(relative_error_rows(slice_cols(*out.mass_inertia, 1, 1), y.mass_inertia.col(1), 1e-6)));
  }
  if (out.velocities) {
    lv.v0 = head_term(mean_all(relative_error_rows(slice_cols(*out.velocities, 0, 1), y.velocities.col(0), 1e-6)));
    lv.omega0 = head_term(mean_all(symmetric_error_rows(slice_cols(*out.velocities, 1, 1), y.velocities.col(1), 1e-6)));
  }
  lv.total = total;
  if (!std::isfinite(total.value()(0, 0))) throw NumericError("loss is not finite");
  return lv;
}

} // namespace slidenet::nn
