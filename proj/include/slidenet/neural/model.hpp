#pragma once

#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "slidenet/neural/layers.hpp"

namespace slidenet::nn {

enum class Architecture { Full, PlainMlp, NpMlp };

inline std::string_view to_string(Architecture a) {
  switch (a) {
    case Architecture::Full: return "full";
    case Architecture::PlainMlp: return "plain_mlp";
    case Architecture::NpMlp: return "np_mlp";
  }
  return "";
}

inline Architecture parse_architecture(std::string_view s) {
  if (s == "full") return Architecture::Full;
  if (s == "plain_mlp") return Architecture::PlainMlp;
  if (s == "np_mlp") return Architecture::NpMlp;
  throw UsageError("unknown architecture '" + std::string(s) + "'");
}

struct ModelConfig {
  Architecture architecture = Architecture::Full;
  std::size_t n_points = 1024;
  std::vector<int> impulse_widths{64, 128, 128};
  std::vector<int> point_widths{64, 64, 64, 128, 1024};
  std::vector<int> shape_head_widths{512, 256, 128};
  // Joint head: these hidden widths plus the 3-wide output layer.
  std::vector<int> joint_widths{256, 256, 128, 128, 64};
  std::vector<int> np_mlp_widths{512, 512};
  std::vector<int> plain_widths{512, 512, 512, 256, 256, 256, 128, 128, 64, 32};
  bool use_pairwise = true;
  bool use_impulse_coords = true;
  bool head_mass_inertia = false;
  bool head_velocities = false;
  // 1-based joint hidden layer whose output feeds the velocity head.
  std::size_t velocity_tap = 4;
  double bn_momentum = 0.9;

  std::size_t impulse_features() const { return use_pairwise ? 8 : 4; }

  /// full, npp (no pairwise terms), nic (no impulse coordinates), plain_mlp, np_mlp.
  std::string variant() const {
    if (architecture != Architecture::Full) return std::string(to_string(architecture));
    if (!use_pairwise) return "npp";
    if (!use_impulse_coords) return "nic";
    return "full";
  }

  void validate() const {
    if (n_points < 1) throw UsageError("model: n_points must be positive");
    const auto positive = [](const std::vector<int>& w, const char* what) {
      for (int x : w)
        if (x <= 0) throw UsageError(std::string("model: ") + what + " widths must be positive");
    };
    positive(impulse_widths, "impulse");
    positive(point_widths, "point");
    positive(shape_head_widths, "shape head");
    positive(joint_widths, "joint");
    positive(np_mlp_widths, "np_mlp");
    positive(plain_widths, "plain_mlp");
    if (architecture != Architecture::PlainMlp && joint_widths.size() != 5) {
      throw UsageError("model: the joint head must have 6 layers (5 hidden widths + output)");
    }
    if (head_velocities && (velocity_tap < 1 || velocity_tap > joint_widths.size())) {
      throw UsageError("model: velocity_tap must name a joint hidden layer");
    }
    if (architecture == Architecture::PlainMlp && (head_mass_inertia || head_velocities)) {
      throw UsageError("model: plain_mlp has no shape or joint feature for the optional heads");
    }
    if (!(bn_momentum >= 0.0 && bn_momentum < 1.0)) throw UsageError("model: bn_momentum must be in [0, 1)");
  }
};

/// Switches `cfg` to a named variant, leaving widths alone.
inline ModelConfig with_variant(ModelConfig cfg, std::string_view name) {
  cfg.use_pairwise = true;
  cfg.use_impulse_coords = true;
  if (name == "full") {
    cfg.architecture = Architecture::Full;
  } else if (name == "npp") {
    cfg.architecture = Architecture::Full;
    cfg.use_pairwise = false;
  } else if (name == "nic") {
    cfg.architecture = Architecture::Full;
    cfg.use_impulse_coords = false;
  } else {
    cfg.architecture = parse_architecture(name);
  }
  return cfg;
}

inline nlohmann::json to_json(const ModelConfig& c) {
  return {{"architecture", std::string(to_string(c.architecture))},
          {"variant", c.variant()},
          {"n_points", c.n_points},
          {"impulse_widths", c.impulse_widths},
          {"point_widths", c.point_widths},
          {"shape_head_widths", c.shape_head_widths},
          {"joint_widths", c.joint_widths},
          {"np_mlp_widths", c.np_mlp_widths},
          {"plain_widths", c.plain_widths},
          {"use_pairwise", c.use_pairwise},
          {"use_impulse_coords", c.use_impulse_coords},
          {"head_mass_inertia", c.head_mass_inertia},
          {"head_velocities", c.head_velocities},
          {"velocity_tap", c.velocity_tap},
          {"bn_momentum", c.bn_momentum}};
}

/// Overrides only the keys present in `j`; "variant" is applied first.
inline void apply_json(ModelConfig& c, const nlohmann::json& j) {
  try {
    if (j.contains("variant")) c = with_variant(c, j.at("variant").get<std::string>());
    if (j.contains("architecture")) c.architecture = parse_architecture(j.at("architecture").get<std::string>());
    const auto set = [&](const char* key, auto& field) {
      if (j.contains(key)) field = j.at(key).get<std::decay_t<decltype(field)>>();
    };
    set("n_points", c.n_points);
    set("impulse_widths", c.impulse_widths);
    set("point_widths", c.point_widths);
    set("shape_head_widths", c.shape_head_widths);
    set("joint_widths", c.joint_widths);
    set("np_mlp_widths", c.np_mlp_widths);
    set("plain_widths", c.plain_widths);
    set("use_pairwise", c.use_pairwise);
    set("use_impulse_coords", c.use_impulse_coords);
    set("head_mass_inertia", c.head_mass_inertia);
    set("head_velocities", c.head_velocities);
    set("velocity_tap", c.velocity_tap);
    set("bn_momentum", c.bn_momentum);
  } catch (const nlohmann::json::exception& e) {
    throw UsageError(std::string("model config: ") + e.what());
  }
}

inline ModelConfig model_config_from_json(const nlohmann::json& j) {
  ModelConfig c;
  apply_json(c, j);
  return c;
}

/// Network inputs for a batch of B examples.
struct Batch {
  Mat impulse;  // B x 4: J_x, J_y, r_x, r_y
  Mat points;   // (B * n_points) x 3
  Index size() const { return impulse.rows(); }
};

/// Raw impulse-branch input: (J, r) and, with pairwise terms, the four
/// products J_x r_x, J_x r_y, J_y r_x, J_y r_y.
inline Mat impulse_features(const Mat& impulse, bool pairwise) {
  if (impulse.cols() != 4) throw UsageError("impulse_features: expected 4 columns, got " + dims(impulse));
  Mat f(impulse.rows(), pairwise ? 8 : 4);
  f.leftCols(4) = impulse;
  if (pairwise) {
    f.col(4) = impulse.col(0).cwiseProduct(impulse.col(2));
    f.col(5) = impulse.col(0).cwiseProduct(impulse.col(3));
    f.col(6) = impulse.col(1).cwiseProduct(impulse.col(2));
    f.col(7) = impulse.col(1).cwiseProduct(impulse.col(3));
  }
  return f;
}

struct Outputs {
  Var pos;                           // B x 2, m
  Var rot;                           // B x 1, degrees
  std::optional<Var> mass_inertia;   // B x 2, kg and kg m^2
  std::optional<Var> velocities;     // B x 2, |v0| m/s and omega0 rad/s
  std::optional<Var> shape_feature;
};

struct Prediction {
  Vec2 final_pos = Vec2::Zero();
  double total_rotation_deg = 0.0;
  std::optional<double> mass;
  std::optional<double> inertia_z;
  std::optional<double> v0;
  std::optional<double> omega0;
};

inline constexpr double kRotationScale = 360.0;

class Model {
public:
  Model(ModelConfig cfg, std::uint64_t seed) : cfg_(std::move(cfg)) {
    cfg_.validate();
    Rng rng(seed);
    const auto F = static_cast<Index>(cfg_.impulse_features());
    const auto N = static_cast<Index>(cfg_.n_points);
    store_.add_buffer("norm.impulse_mean", Mat::Zero(1, F));
    store_.add_buffer("norm.impulse_std", Mat::Ones(1, F));
    store_.add_buffer("norm.mass_inertia_scale", Mat::Ones(1, 2));
    store_.add_buffer("norm.velocity_scale", Mat::Ones(1, 2));

    if (cfg_.architecture == Architecture::PlainMlp) {
      auto widths = cfg_.plain_widths;
      widths.push_back(3);
      plain_ = Mlp(store_, "plain", 3 * N + F, widths, {false, false}, rng);
      return;
    }
    impulse_ = Mlp(store_, "impulse", F, cfg_.impulse_widths, {false, true}, rng);
    if (cfg_.architecture == Architecture::Full) {
      points_ = Mlp(store_, "point", 3, cfg_.point_widths, {true, true}, rng);
      shape_head_ = Mlp(store_, "shape_head", points_.out(), cfg_.shape_head_widths, {false, true}, rng);
    } else {
      shape_head_ = Mlp(store_, "np_mlp", 3 * N, cfg_.np_mlp_widths, {false, true}, rng);
    }
    auto joint = cfg_.joint_widths;
    joint.push_back(3);
    joint_ = Mlp(store_, "joint", impulse_.out() + shape_head_.out(), joint, {false, false}, rng);
    if (cfg_.head_mass_inertia) mass_head_ = Dense(store_, "head.mass_inertia", shape_head_.out(), 2, false, false, rng);
    if (cfg_.head_velocities) {
      velocity_head_ = Dense(store_, "head.velocities", cfg_.joint_widths[cfg_.velocity_tap - 1], 2, false, false, rng);
    }
  }

  Model(const Model&) = delete;
  Model& operator=(const Model&) = delete;

  const ModelConfig& config() const { return cfg_; }
  ParamStore& store() { return store_; }
  const ParamStore& store() const { return store_; }
  Index parameter_count() const { return store_.parameter_count(); }

  Mat& buffer(const std::string& name) {
    Buffer* b = store_.find_buffer(name);
    if (!b) throw UsageError("model has no buffer '" + name + "'");
    return b->value;
  }

  Outputs forward(Tape& t, const Batch& batch, bool train) {
    const Index B = batch.size();
    const auto N = static_cast<Index>(cfg_.n_points);
    if (B < 1) throw UsageError("forward: empty batch");
    if (batch.points.rows() != B * N || batch.points.cols() != 3) {
      throw UsageError("forward: expected " + std::to_string(B * N) + "x3 points for " + std::to_string(B) +
                       " examples of " + std::to_string(N) + " points, got " + dims(batch.points));
    }
    Mat feats = impulse_features(batch.impulse, cfg_.use_pairwise);
    const Mat& mu = buffer("norm.impulse_mean");
    const Mat& sd = buffer("norm.impulse_std");
    for (Index r = 0; r < B; ++r) feats.row(r) = (feats.row(r) - mu.row(0)).cwiseQuotient(sd.row(0));
    const Var imp_in = t.constant(std::move(feats));
    const Var pts = t.constant(batch.points);
    const double m = cfg_.bn_momentum;

    Outputs out;
    Var head;
    if (cfg_.architecture == Architecture::PlainMlp) {
      head = plain_(t, concat_cols(reshape_rows(pts, B), imp_in), train, m);
    } else {
      const Var imp = impulse_(t, imp_in, train, m);
      Var shape;
      if (cfg_.architecture == Architecture::Full) {
        shape = shape_head_(t, set_maxpool(points_(t, pts, train, m), N), train, m);
      } else {
        shape = shape_head_(t, reshape_rows(pts, B), train, m);
      }
      out.shape_feature = shape;
      std::vector<Var> taps;
      head = joint_(t, concat_cols(imp, shape), train, m, &taps);
      if (cfg_.head_mass_inertia) {
        out.mass_inertia = scale_cols(mass_head_(t, shape, train, m), buffer("norm.mass_inertia_scale"));
      }
      if (cfg_.head_velocities) {
        out.velocities =
            scale_cols(velocity_head_(t, taps[cfg_.velocity_tap - 1], train, m), buffer("norm.velocity_scale"));
      }
    }
    out.pos = slice_cols(head, 0, 2);
    out.rot = scale(slice_cols(head, 2, 1), kRotationScale);
    return out;
  }

  /// Evaluation-mode forward pass (running batch-norm statistics).
  std::vector<Prediction> predict(const Batch& batch) {
    Tape t;
    const Outputs o = forward(t, batch, false);
    std::vector<Prediction> preds(static_cast<std::size_t>(batch.size()));
    for (Index r = 0; r < batch.size(); ++r) {
      auto& p = preds[static_cast<std::size_t>(r)];
      p.final_pos = Vec2(o.pos.value()(r, 0), o.pos.value()(r, 1));
      p.total_rotation_deg = o.rot.value()(r, 0);
      if (o.mass_inertia) {
        p.mass = o.mass_inertia->value()(r, 0);
        p.inertia_z = o.mass_inertia->value()(r, 1);
      }
      if (o.velocities) {
        p.v0 = o.velocities->value()(r, 0);
        p.omega0 = o.velocities->value()(r, 1);
      }
    }
    return preds;
  }

  /// Shape-branch feature in evaluation mode (B x width).
  Mat shape_feature(const Batch& batch) {
    if (cfg_.architecture == Architecture::PlainMlp) throw UsageError("plain_mlp has no shape branch");
    Tape t;
    return forward(t, batch, false).shape_feature->value();
  }

private:
  ModelConfig cfg_;
  ParamStore store_;
  Mlp impulse_, points_, shape_head_, joint_, plain_;
  Dense mass_head_, velocity_head_;
};

} // namespace slidenet::nn
