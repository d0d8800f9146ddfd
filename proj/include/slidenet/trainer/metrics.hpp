#pragma once

#include <cmath>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include <json.hpp>

#include "slidenet/neural/loss.hpp"

namespace slidenet::trainer {

inline constexpr double kRotationBin = 30.0;  // degrees
inline constexpr std::size_t kCurvePoints = 101;

/// (|theta_hat - theta| / b) / max(1, ceil(|theta| / b)).
inline double rel_rot_binned(double theta_hat, double theta, double b = kRotationBin) {
  if (!(b > 0.0)) throw UsageError("rel_rot_binned: bin width must be positive");
  const double bins = std::max(1.0, std::ceil(std::abs(theta) / b));
  return (std::abs(theta_hat - theta) / b) / bins;
}

struct ExampleMetrics {
  std::size_t record = 0;
  double rel_pos = 0.0;
  double abs_pos_m = 0.0;
  double rel_rot_binned = 0.0;
  double rel_rot_raw = 0.0;
  double abs_rot_deg = 0.0;
  std::optional<double> rel_mass, rel_inertia, rel_v0, rel_omega0;
};

struct MetricsReport {
  std::vector<ExampleMetrics> rows;
  double mean_rel_pos = 0.0;
  double mean_abs_pos_m = 0.0;
  double mean_rel_rot = 0.0;  // binned
  double mean_rel_rot_raw = 0.0;
  double mean_abs_rot_deg = 0.0;
  std::optional<double> mean_rel_mass, mean_rel_inertia, mean_rel_v0, mean_rel_omega0;
  std::vector<double> pos_curve;  // fraction with rel_pos <= k/100, k = 0..100
  std::vector<double> rot_curve;  // same for the binned rotation error
  std::string protocol;
  std::string variant;

  std::size_t size() const { return rows.size(); }
};

/// Reference values an example is scored against.
struct Truth {
  std::size_t record = 0;
  Vec2 final_pos = Vec2::Zero();
  double total_rotation_deg = 0.0;
  double mass = 0.0;
  double inertia_z = 0.0;
  double v0 = 0.0;
  double omega0 = 0.0;
};

inline ExampleMetrics score(const nn::Prediction& p, const Truth& y) {
  ExampleMetrics m;
  m.record = y.record;
  m.rel_pos = nn::position_loss(p.final_pos, y.final_pos);
  m.abs_pos_m = (p.final_pos - y.final_pos).norm();
  m.rel_rot_binned = rel_rot_binned(p.total_rotation_deg, y.total_rotation_deg);
  m.rel_rot_raw = nn::scalar_relative_error(p.total_rotation_deg, y.total_rotation_deg);
  m.abs_rot_deg = std::abs(p.total_rotation_deg - y.total_rotation_deg);
  if (p.mass) m.rel_mass = nn::scalar_relative_error(*p.mass, y.mass);
  if (p.inertia_z) m.rel_inertia = nn::scalar_relative_error(*p.inertia_z, y.inertia_z);
  if (p.v0) m.rel_v0 = nn::scalar_relative_error(*p.v0, y.v0);
  if (p.omega0) m.rel_omega0 = nn::rotation_loss(*p.omega0, y.omega0);
  return m;
}

/// Fills means and curves from `rows`.
inline void summarize(MetricsReport& r) {
  if (r.rows.empty()) throw DataError("metrics: no examples to summarize");
  const double n = static_cast<double>(r.rows.size());
  const auto mean_of = [&](auto field) {
    double s = 0.0;
    for (const auto& row : r.rows) s += field(row);
    return s / n;
  };
  const auto opt_mean = [&](auto field) -> std::optional<double> {
    if (!field(r.rows.front())) return std::nullopt;
    double s = 0.0;
    for (const auto& row : r.rows) s += *field(row);
    return s / n;
  };
  r.mean_rel_pos = mean_of([](const ExampleMetrics& e) { return e.rel_pos; });
  r.mean_abs_pos_m = mean_of([](const ExampleMetrics& e) { return e.abs_pos_m; });
  r.mean_rel_rot = mean_of([](const ExampleMetrics& e) { return e.rel_rot_binned; });
  r.mean_rel_rot_raw = mean_of([](const ExampleMetrics& e) { return e.rel_rot_raw; });
  r.mean_abs_rot_deg = mean_of([](const ExampleMetrics& e) { return e.abs_rot_deg; });
  r.mean_rel_mass = opt_mean([](const ExampleMetrics& e) { return e.rel_mass; });
  r.mean_rel_inertia = opt_mean([](const ExampleMetrics& e) { return e.rel_inertia; });
  r.mean_rel_v0 = opt_mean([](const ExampleMetrics& e) { return e.rel_v0; });
  r.mean_rel_omega0 = opt_mean([](const ExampleMetrics& e) { return e.rel_omega0; });

  r.pos_curve.assign(kCurvePoints, 0.0);
  r.rot_curve.assign(kCurvePoints, 0.0);
  for (std::size_t k = 0; k < kCurvePoints; ++k) {
    const double thr = static_cast<double>(k) / 100.0;
    std::size_t pos = 0, rot = 0;
    for (const auto& row : r.rows) {
      pos += row.rel_pos <= thr;
      rot += row.rel_rot_binned <= thr;
    }
    r.pos_curve[k] = static_cast<double>(pos) / n;
    r.rot_curve[k] = static_cast<double>(rot) / n;
  }
}

inline MetricsReport make_report(const std::vector<nn::Prediction>& preds, const std::vector<Truth>& truth) {
  if (preds.size() != truth.size()) throw UsageError("metrics: prediction and truth counts differ");
  MetricsReport r;
  r.rows.reserve(preds.size());
  for (std::size_t i = 0; i < preds.size(); ++i) r.rows.push_back(score(preds[i], truth[i]));
  summarize(r);
  return r;
}

inline nlohmann::json to_json(const MetricsReport& r) {
  nlohmann::json j = {{"mean_rel_pos", r.mean_rel_pos},
                      {"mean_abs_pos_m", r.mean_abs_pos_m},
                      {"mean_rel_rot", r.mean_rel_rot},
                      {"mean_abs_rot_deg", r.mean_abs_rot_deg},
                      {"n_examples", r.rows.size()},
                      {"protocol", r.protocol},
                      {"variant", r.variant},
                      {"mean_rel_rot_raw", r.mean_rel_rot_raw}};
  if (r.mean_rel_mass) j["mean_rel_mass"] = *r.mean_rel_mass;
  if (r.mean_rel_inertia) j["mean_rel_inertia"] = *r.mean_rel_inertia;
  if (r.mean_rel_v0) j["mean_rel_v0"] = *r.mean_rel_v0;
  if (r.mean_rel_omega0) j["mean_rel_omega0"] = *r.mean_rel_omega0;
  return j;
}

inline void write_curves_csv(const MetricsReport& r, std::ostream& out) {
  if (r.pos_curve.size() != kCurvePoints || r.rot_curve.size() != kCurvePoints) {
    throw UsageError("curves_csv: report has no curves");
  }
  out << "threshold_pct,pos_fraction,rot_fraction\n";
  for (std::size_t k = 0; k < kCurvePoints; ++k) {
    out << k << ',' << std::setprecision(17) << r.pos_curve[k] << ',' << r.rot_curve[k] << '\n';
  }
}

inline void curves_csv(const MetricsReport& r, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw DataError("cannot write " + path.string());
  write_curves_csv(r, out);
  if (!out) throw DataError("short write on " + path.string());
}

/// Plain-text summary table.
inline void print_report(const MetricsReport& r, std::ostream& out) {
  const auto line = [&](const char* name, double v, const char* unit) {
    out << "  " << std::left << std::setw(22) << name << std::right << std::setw(12) << std::fixed
        << std::setprecision(4) << v << ' ' << unit << '\n';
  };
  out << "metrics (" << r.protocol << ", " << r.variant << ", n=" << r.rows.size() << ")\n";
  line("mean rel position", 100.0 * r.mean_rel_pos, "%");
  line("mean abs position", r.mean_abs_pos_m, "m");
  line("mean rel rotation", 100.0 * r.mean_rel_rot, "% (binned, b=30)");
  line("mean rel rotation raw", 100.0 * r.mean_rel_rot_raw, "%");
  line("mean abs rotation", r.mean_abs_rot_deg, "deg");
  if (r.mean_rel_mass) line("mean rel mass", 100.0 * *r.mean_rel_mass, "%");
  if (r.mean_rel_inertia) line("mean rel inertia", 100.0 * *r.mean_rel_inertia, "%");
  if (r.mean_rel_v0) line("mean rel |v0|", 100.0 * *r.mean_rel_v0, "%");
  if (r.mean_rel_omega0) line("mean sym rel omega0", 100.0 * *r.mean_rel_omega0, "%");
  out.unsetf(std::ios::floatfield);
}

} // namespace slidenet::trainer
