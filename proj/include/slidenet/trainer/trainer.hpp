#pragma once

#include <chrono>
#include <cmath>
#include <iomanip>
#include <limits>
#include <memory>
#include <numeric>
#include <optional>
#include <ostream>
#include <sstream>
#include <string>
#include <vector>

#ifdef __GLIBC__
#include <malloc.h>
#endif

#include <json.hpp>

#include "slidenet/datagen/records.hpp"
#include "slidenet/datagen/pipeline.hpp"
#include "slidenet/neural/checkpoint.hpp"
#include "slidenet/neural/loss.hpp"
#include "slidenet/neural/optim.hpp"
#include "slidenet/trainer/metrics.hpp"

namespace slidenet::trainer {

using nn::Index;
using nn::Mat;

struct TrainConfig {
  std::size_t epochs = 200;
  std::size_t batch_size = 128;
  std::size_t val_every = 5;
  std::uint64_t seed = 0;
  double lr_start = 0.005;
  double lr_end = 1e-5;
  nn::ModelConfig model;

  void validate() const {
    if (epochs < 1) throw UsageError("train: epochs must be at least 1");
    if (batch_size < 2) throw UsageError("train: batch_size must be at least 2 (batch norm needs 2 rows)");
    if (val_every < 1) throw UsageError("train: val_every must be at least 1");
    if (!(lr_start > 0.0) || !(lr_end > 0.0)) throw UsageError("train: learning rates must be positive");
    model.validate();
  }
};

inline nlohmann::json to_json(const TrainConfig& c) {
  return {{"epochs", c.epochs},       {"batch_size", c.batch_size}, {"val_every", c.val_every},
          {"seed", c.seed},           {"lr_start", c.lr_start},     {"lr_end", c.lr_end},
          {"model", nn::to_json(c.model)}};
}

/// Overrides only the keys present in `j`.
inline void apply_json(TrainConfig& c, const nlohmann::json& j) {
  try {
    const auto set = [&](const char* key, auto& field) {
      if (j.contains(key)) field = j.at(key).get<std::decay_t<decltype(field)>>();
    };
    set("epochs", c.epochs);
    set("batch_size", c.batch_size);
    set("val_every", c.val_every);
    set("seed", c.seed);
    set("lr_start", c.lr_start);
    set("lr_end", c.lr_end);
    if (j.contains("model")) nn::apply_json(c.model, j.at("model"));
  } catch (const nlohmann::json::exception& e) {
    throw UsageError(std::string("train config: ") + e.what());
  }
}

/// Reduced widths and a 128-point cloud for single-core CPU runs.
inline TrainConfig desk_preset() {
  TrainConfig c;
  c.epochs = 100;
  c.model.n_points = 128;
  c.model.impulse_widths = {64, 64};
  c.model.point_widths = {64, 64, 128};
  c.model.shape_head_widths = {128, 64};
  c.model.joint_widths = {128, 128, 64, 64, 32};
  return c;
}

/// Model-ready arrays for a subset of records.
struct PreparedSet {
  Mat impulse;  // n x 4
  Mat points;   // (n * n_points) x 3
  nn::Targets targets;
  std::vector<Truth> truth;
  std::size_t n_points = 0;

  std::size_t size() const { return truth.size(); }

  nn::Batch batch(const std::vector<std::size_t>& order, std::size_t begin, std::size_t end) const {
    const auto N = static_cast<Index>(n_points);
    nn::Batch b;
    const auto B = static_cast<Index>(end - begin);
    b.impulse.resize(B, 4);
    b.points.resize(B * N, 3);
    for (Index k = 0; k < B; ++k) {
      const auto i = static_cast<Index>(order[begin + static_cast<std::size_t>(k)]);
      b.impulse.row(k) = impulse.row(i);
      b.points.middleRows(k * N, N) = points.middleRows(i * N, N);
    }
    return b;
  }

  nn::Targets batch_targets(const std::vector<std::size_t>& order, std::size_t begin, std::size_t end) const {
    const auto B = static_cast<Index>(end - begin);
    nn::Targets y;
    y.pos.resize(B, 2);
    y.rot.resize(B, 1);
    y.mass_inertia.resize(B, 2);
    y.velocities.resize(B, 2);
    for (Index k = 0; k < B; ++k) {
      const auto i = static_cast<Index>(order[begin + static_cast<std::size_t>(k)]);
      y.pos.row(k) = targets.pos.row(i);
      y.rot.row(k) = targets.rot.row(i);
      y.mass_inertia.row(k) = targets.mass_inertia.row(i);
      y.velocities.row(k) = targets.velocities.row(i);
    }
    return y;
  }
};

/// Gathers the given records, moving each into impulse coordinates first when
/// `impulse_coords` is set.
inline PreparedSet prepare(const data::DatasetManifest& m, const std::vector<const data::SimRecord*>& records,
                           bool impulse_coords, std::size_t n_points) {
  PreparedSet s;
  s.n_points = n_points;
  const auto n = static_cast<Index>(records.size());
  const auto N = static_cast<Index>(n_points);
  s.impulse.resize(n, 4);
  s.points.resize(n * N, 3);
  s.targets.pos.resize(n, 2);
  s.targets.rot.resize(n, 1);
  s.targets.mass_inertia.resize(n, 2);
  s.targets.velocities.resize(n, 2);
  s.truth.reserve(records.size());
  for (Index k = 0; k < n; ++k) {
    const data::SimRecord& raw = *records[static_cast<std::size_t>(k)];
    const auto& raw_cloud = m.cloud(raw);
    if (raw_cloud.size() != n_points) {
      throw DataError("record " + std::to_string(raw.index) + " has " + std::to_string(raw_cloud.size()) +
                      " points, model expects " + std::to_string(n_points));
    }
    data::SimRecord rec = raw;
    geometry::PointCloud cloud;
    if (impulse_coords) {
      std::tie(rec, cloud) = data::to_impulse_coords(raw, raw_cloud);
    } else {
      cloud = raw_cloud;
    }
    s.impulse.row(k) << rec.J.x(), rec.J.y(), rec.r.x(), rec.r.y();
    s.points.middleRows(k * N, N) = cloud.points;
    s.targets.pos.row(k) << rec.final_pos.x(), rec.final_pos.y();
    s.targets.rot(k, 0) = rec.total_rotation_deg;
    s.targets.mass_inertia.row(k) << rec.mass, rec.inertia_z;
    s.targets.velocities.row(k) << rec.v0, rec.omega0;
    s.truth.push_back({rec.index, rec.final_pos, rec.total_rotation_deg, rec.mass, rec.inertia_z, rec.v0, rec.omega0});
  }
  return s;
}

/// Input standardisation and head output scales from the training split.
inline void fit_normalization(nn::Model& model, const PreparedSet& train) {
  if (train.size() == 0) throw DataError("train: empty training split");
  const Mat f = nn::impulse_features(train.impulse, model.config().use_pairwise);
  const Eigen::RowVectorXd mean = f.colwise().mean();
  Eigen::RowVectorXd sd = ((f.rowwise() - mean).array().square().colwise().mean()).sqrt();
  for (Index c = 0; c < sd.size(); ++c)
    if (!(sd(c) > 1e-12)) sd(c) = 1.0;
  model.buffer("norm.impulse_mean") = mean;
  model.buffer("norm.impulse_std") = sd;
  model.buffer("norm.mass_inertia_scale") = train.targets.mass_inertia.colwise().mean();
  Mat vel = train.targets.velocities.cwiseAbs().colwise().mean();
  for (Index c = 0; c < 2; ++c)
    if (!(vel(0, c) > 1e-12)) vel(0, c) = 1.0;
  model.buffer("norm.velocity_scale") = vel;
}

inline constexpr std::size_t kEvalChunk = 256;

/// Mean total loss over the set in evaluation mode, chunked in a fixed order.
inline double validation_loss(nn::Model& model, const PreparedSet& set) {
  if (set.size() == 0) throw DataError("validation: empty split");
  std::vector<std::size_t> order(set.size());
  std::iota(order.begin(), order.end(), 0);
  double total = 0.0;
  for (std::size_t b = 0; b < set.size(); b += kEvalChunk) {
    const std::size_t e = std::min(set.size(), b + kEvalChunk);
    nn::Tape t;
    const auto out = model.forward(t, set.batch(order, b, e), false);
    total += nn::compute_loss(out, set.batch_targets(order, b, e)).total.value()(0, 0) * static_cast<double>(e - b);
  }
  return total / static_cast<double>(set.size());
}

inline std::vector<nn::Prediction> predict_all(nn::Model& model, const PreparedSet& set) {
  std::vector<std::size_t> order(set.size());
  std::iota(order.begin(), order.end(), 0);
  std::vector<nn::Prediction> out;
  out.reserve(set.size());
  for (std::size_t b = 0; b < set.size(); b += kEvalChunk) {
    const std::size_t e = std::min(set.size(), b + kEvalChunk);
    for (auto& p : model.predict(set.batch(order, b, e))) out.push_back(std::move(p));
  }
  return out;
}

inline MetricsReport evaluate(nn::Model& model, const PreparedSet& test) {
  if (test.size() == 0) throw DataError("evaluate: empty test split");
  auto report = make_report(predict_all(model, test), test.truth);
  report.variant = model.config().variant();
  return report;
}

struct HistoryRow {
  std::size_t epoch = 0;
  double train_loss = 0.0;
  double train_pos = 0.0;
  double train_rot = 0.0;
  std::optional<double> val_loss;
  double lr = 0.0;
};

inline void write_history_csv(const std::vector<HistoryRow>& rows, std::ostream& out) {
  out << "epoch,train_loss,train_pos,train_rot,val_loss,lr\n" << std::setprecision(17);
  for (const auto& r : rows) {
    out << r.epoch << ',' << r.train_loss << ',' << r.train_pos << ',' << r.train_rot << ',';
    if (r.val_loss) out << *r.val_loss;
    out << ',' << r.lr << '\n';
  }
}

struct TrainResult {
  std::unique_ptr<nn::Model> model;  // best-validation weights
  std::string best_checkpoint;       // serialized bytes of `model`
  double best_val_loss = std::numeric_limits<double>::infinity();
  std::size_t best_epoch = 0;
  std::vector<HistoryRow> history;
};

/// Seeded mini-batch Adam with the exponential learning-rate schedule.
/// Validation runs every `val_every` epochs and after the last one; the
/// weights with the lowest validation loss are kept.
inline TrainResult train(const PreparedSet& train_set, const PreparedSet& val_set, const TrainConfig& cfg,
                         const nlohmann::json& extra = nlohmann::json::object(), std::ostream* log = nullptr) {
  cfg.validate();
  if (train_set.size() < 2) throw DataError("train: need at least 2 training examples");
  if (val_set.size() == 0) throw DataError("train: empty validation split");
  if (train_set.n_points != cfg.model.n_points) throw UsageError("train: cloud size does not match model n_points");

#ifdef __GLIBC__
  // Keep short-lived activation buffers off mmap.
  mallopt(M_MMAP_THRESHOLD, 1 << 30);
  mallopt(M_TRIM_THRESHOLD, 1 << 30);
#endif
  TrainResult res;
  auto model = std::make_unique<nn::Model>(cfg.model, derive_seed(cfg.seed, 1));
  fit_normalization(*model, train_set);

  const std::size_t n = train_set.size();
  const std::size_t bs = std::min(cfg.batch_size, n);
  // A trailing batch of one row cannot be batch-normalised; fold it into the previous one.
  std::vector<std::pair<std::size_t, std::size_t>> bounds;
  for (std::size_t b = 0; b < n; b += bs) bounds.emplace_back(b, std::min(n, b + bs));
  if (bounds.size() > 1 && bounds.back().second - bounds.back().first < 2) {
    bounds[bounds.size() - 2].second = n;
    bounds.pop_back();
  }
  const nn::LrSchedule sched{cfg.lr_start, cfg.lr_end, cfg.epochs * bounds.size()};
  nn::Adam adam;
  Rng rng(derive_seed(cfg.seed, 2));
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  const auto t0 = std::chrono::steady_clock::now();

  for (std::size_t epoch = 1; epoch <= cfg.epochs; ++epoch) {
    rng.shuffle(order.begin(), order.end());
    HistoryRow row;
    row.epoch = epoch;
    row.lr = sched.at(adam.steps());
    for (std::size_t k = 0; k < bounds.size(); ++k) {
      const auto [b, e] = bounds[k];
      const double w = static_cast<double>(e - b) / static_cast<double>(n);
      model->store().zero_grad();
      nn::Tape tape;
      nn::LossValues lv;
      try {
        lv = nn::compute_loss(model->forward(tape, train_set.batch(order, b, e), true),
                              train_set.batch_targets(order, b, e));
      } catch (const NumericError& err) {
        throw NumericError("training diverged at epoch " + std::to_string(epoch) + ", step " + std::to_string(k + 1) +
                           ": " + err.what());
      }
      tape.backward(lv.total);
      adam.step(model->store(), sched.at(adam.steps()));
      row.train_loss += w * lv.total.value()(0, 0);
      row.train_pos += w * lv.pos;
      row.train_rot += w * lv.rot;
    }
    if (epoch % cfg.val_every == 0 || epoch == cfg.epochs) {
      const double v = validation_loss(*model, val_set);
      if (!std::isfinite(v)) throw NumericError("validation loss is not finite at epoch " + std::to_string(epoch));
      row.val_loss = v;
      if (v < res.best_val_loss) {
        res.best_val_loss = v;
        res.best_epoch = epoch;
        nlohmann::json meta_extra = extra;
        meta_extra["epoch"] = epoch;
        meta_extra["val_loss"] = v;
        meta_extra["train"] = to_json(cfg);
        res.best_checkpoint = nn::checkpoint_bytes(*model, {adam.steps(), meta_extra});
      }
    }
    if (log) {
      const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
      *log << "epoch " << epoch << "/" << cfg.epochs << "  loss " << std::setprecision(5) << row.train_loss << " (pos "
           << row.train_pos << ", rot " << row.train_rot << ")";
      if (row.val_loss) *log << "  val " << *row.val_loss;
      *log << "  " << std::setprecision(1) << std::fixed << secs << "s\n" << std::defaultfloat;
    }
    res.history.push_back(row);
  }
  std::istringstream in(res.best_checkpoint);
  res.model = nn::load_checkpoint(in);
  return res;
}

} // namespace slidenet::trainer
