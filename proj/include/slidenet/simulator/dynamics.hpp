#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <iomanip>
#include <ostream>
#include <sstream>
#include <string_view>
#include <vector>

#include "slidenet/common.hpp"
#include "slidenet/geometry/voxel.hpp"

namespace slidenet::sim {

using geometry::ContactPatch;
using geometry::MassProperties;

inline constexpr double kObjectFriction = 0.7;
inline constexpr double kGroundFriction = 0.1;
inline constexpr double kDefaultMu = kObjectFriction * kGroundFriction;
inline constexpr double kGravity = 9.81;

struct RigidBodyState {
  Vec2 pos = Vec2::Zero();
  double heading = 0.0;  // radians, unwrapped
  Vec2 v = Vec2::Zero();
  double omega = 0.0;
  double t = 0.0;
};

struct ImpulseSpec {
  Vec2 J = Vec2::Zero();  // N s
  Vec2 r = Vec2::Zero();  // application point relative to the COM, m
};

struct InitialVelocity {
  Vec2 v = Vec2::Zero();
  double omega = 0.0;
};

struct Wrench {
  Vec2 force = Vec2::Zero();
  double torque = 0.0;
};

struct SimConfig {
  double mu = kDefaultMu;
  double g = kGravity;
  double dt = 1e-3;
  double rest_v = 1e-3;
  double rest_omega = 1e-3;
  double max_time = 60.0;
  double slip_eps = 1e-6;
  // Keep every n-th state in the outcome trajectory (0 keeps none).
  std::size_t trace_every = 0;
};

struct SimOutcome {
  Vec2 final_pos = Vec2::Zero();
  double total_rotation_deg = 0.0;   // |heading_final - heading_initial|
  double signed_rotation_deg = 0.0;
  double duration = 0.0;
  std::size_t steps = 0;
  bool hit_max_time = false;
  std::vector<RigidBodyState> trajectory;
};

inline double cross2(const Vec2& a, const Vec2& b) { return a.x() * b.y() - a.y() * b.x(); }

inline InitialVelocity apply_impulse(const MassProperties& mp, const ImpulseSpec& imp) {
  if (!(mp.mass > 0.0)) throw DataError("apply_impulse: mass must be positive");
  if (!(mp.inertia_z > 0.0)) throw DataError("apply_impulse: inertia must be positive");
  return {imp.J / mp.mass, cross2(imp.r, imp.J) / mp.inertia_z};
}

inline double kinetic_energy(const RigidBodyState& s, double mass, double inertia_z) {
  return 0.5 * mass * s.v.squaredNorm() + 0.5 * inertia_z * s.omega * s.omega;
}

/// Coulomb friction summed over the contact points. Each point carries
/// `load[i] * m * g` of normal force and resists its own slip velocity.
inline Wrench friction_wrench(const RigidBodyState& s, const ContactPatch& patch, double mu, double mass, double g,
                              double slip_eps = 1e-6) {
  if (patch.empty()) throw DataError("friction_wrench: contact patch is empty");
  if (mu < 0.0) throw UsageError("friction_wrench: friction coefficient must be non-negative");
  const double c = std::cos(s.heading), sn = std::sin(s.heading);
  Wrench w;
  for (std::size_t i = 0; i < patch.size(); ++i) {
    const Vec2& b = patch.points[i];
    const Vec2 p(c * b.x() - sn * b.y(), sn * b.x() + c * b.y());
    const Vec2 u(s.v.x() - s.omega * p.y(), s.v.y() + s.omega * p.x());
    const double speed = u.norm();
    if (speed <= slip_eps) continue;
    const Vec2 f = (-mu * patch.load[i] * mass * g / speed) * u;
    w.force += f;
    w.torque += cross2(p, f);
  }
  return w;
}

inline void write_trace_header(std::ostream& out) { out << "t,x,y,heading_deg,vx,vy,omega\n"; }

inline void write_trace_row(std::ostream& out, const RigidBodyState& s) {
  out << std::setprecision(10) << s.t << ',' << s.pos.x() << ',' << s.pos.y() << ',' << s.heading * kRadToDeg << ','
      << s.v.x() << ',' << s.v.y() << ',' << s.omega << '\n';
}

inline void write_trace_csv(std::ostream& out, const std::vector<RigidBodyState>& states) {
  write_trace_header(out);
  for (const auto& s : states) write_trace_row(out, s);
}

using StepObserver = std::function<void(const RigidBodyState&)>;

/// Semi-implicit Euler until both speeds drop below the rest thresholds.
///
/// The friction impulse of a step is scaled back when taking it in full would
/// overshoot (i.e. push kinetic energy past its minimum along the impulse
/// direction), so kinetic energy never increases and friction stops the body
/// instead of reversing it. Spin is clamped to zero rather than allowed to
/// change sign within a step.
inline SimOutcome run_from_velocity(const MassProperties& mp, const ContactPatch& patch, const InitialVelocity& init,
                                    const SimConfig& cfg = {}, const StepObserver& observe = {}) {
  if (!(cfg.dt > 0.0)) throw UsageError("run_to_rest: dt must be positive");
  if (!(cfg.rest_v > 0.0) || !(cfg.rest_omega > 0.0)) throw UsageError("run_to_rest: rest thresholds must be positive");
  if (!(mp.mass > 0.0) || !(mp.inertia_z > 0.0)) throw DataError("run_to_rest: mass and inertia must be positive");

  RigidBodyState s;
  s.v = init.v;
  s.omega = init.omega;

  SimOutcome out;
  const auto record = [&](bool force) {
    if (cfg.trace_every > 0 && (force || out.steps % cfg.trace_every == 0)) out.trajectory.push_back(s);
  };
  record(true);
  if (observe) observe(s);

  const auto at_rest = [&] { return s.v.norm() < cfg.rest_v && std::abs(s.omega) < cfg.rest_omega; };
  const auto max_steps = static_cast<std::size_t>(std::ceil(cfg.max_time / cfg.dt - 1e-9));

  while (!at_rest()) {
    if (out.steps >= max_steps) {
      out.hit_max_time = true;
      break;
    }
    const Wrench w = friction_wrench(s, patch, cfg.mu, mp.mass, cfg.g, cfg.slip_eps);
    const double power = w.force.dot(s.v) + w.torque * s.omega;
    const double curvature = w.force.squaredNorm() / (2.0 * mp.mass) + w.torque * w.torque / (2.0 * mp.inertia_z);
    double scale = 1.0;
    if (curvature > 0.0) scale = std::clamp(-power / (2.0 * cfg.dt * curvature), 0.0, 1.0);

    const double omega_prev = s.omega;
    s.v += (scale * cfg.dt / mp.mass) * w.force;
    s.omega += scale * cfg.dt * w.torque / mp.inertia_z;
    if (s.omega * omega_prev < 0.0) s.omega = 0.0;
    s.pos += cfg.dt * s.v;
    s.heading += cfg.dt * s.omega;
    ++out.steps;
    s.t = static_cast<double>(out.steps) * cfg.dt;

    if (!s.pos.allFinite() || !s.v.allFinite() || !std::isfinite(s.omega) || !std::isfinite(s.heading)) {
      throw NumericError("run_to_rest: non-finite state at step " + std::to_string(out.steps));
    }
    if (observe) observe(s);
    record(false);
  }
  if (cfg.trace_every > 0 && (out.trajectory.empty() || out.trajectory.back().t != s.t)) out.trajectory.push_back(s);

  out.final_pos = s.pos;
  out.signed_rotation_deg = s.heading * kRadToDeg;
  out.total_rotation_deg = std::abs(out.signed_rotation_deg);
  out.duration = s.t;
  return out;
}

/// Applies the impulse to a body at rest and integrates to rest.
inline SimOutcome run_to_rest(const MassProperties& mp, const ContactPatch& patch, const ImpulseSpec& imp,
                              const SimConfig& cfg = {}, const StepObserver& observe = {}) {
  return run_from_velocity(mp, patch, apply_impulse(mp, imp), cfg, observe);
}

// Closed-form stopping distance / angle for the two separable regimes.
enum class OracleKind { TranslationStop, DiskSpinStop };

inline OracleKind parse_oracle_kind(std::string_view name) {
  if (name == "translation_stop") return OracleKind::TranslationStop;
  if (name == "disk_spin_stop") return OracleKind::DiskSpinStop;
  throw UsageError("unknown oracle kind '" + std::string(name) + "'");
}

struct OracleParams {
  double speed = 0.0;   // v (m/s) or omega (rad/s)
  double radius = 0.0;  // disk radius, spin oracle only
  double mu = kDefaultMu;
  double g = kGravity;
};

/// translation_stop: v^2 / (2 mu g) metres.
/// disk_spin_stop: omega^2 R / ((8/3) mu g) radians, from alpha = (4/3) mu g / R.
inline double analytic_oracle(OracleKind kind, const OracleParams& p) {
  if (p.speed < 0.0 || !(p.mu > 0.0) || !(p.g > 0.0)) throw UsageError("analytic_oracle: parameters must be positive");
  switch (kind) {
    case OracleKind::TranslationStop: return p.speed * p.speed / (2.0 * p.mu * p.g);
    case OracleKind::DiskSpinStop:
      if (!(p.radius > 0.0)) throw UsageError("analytic_oracle: disk radius must be positive");
      return p.speed * p.speed * p.radius / (8.0 / 3.0 * p.mu * p.g);
  }
  throw UsageError("analytic_oracle: unknown kind");
}

} // namespace slidenet::sim
