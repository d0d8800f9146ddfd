#pragma once

#include <cmath>
#include <string>
#include <vector>

#include "slidenet/neural/ops.hpp"
#include "slidenet/rng.hpp"

namespace slidenet::nn {

/// He-normal weights, zero bias.
inline Mat he_normal(Index in, Index out, Rng& rng) {
  Mat w(in, out);
  const double sd = std::sqrt(2.0 / static_cast<double>(in));
  for (Index i = 0; i < w.size(); ++i) w.data()[i] = sd * rng.normal();
  return w;
}

/// Fully connected layer with optional batch norm and ReLU, in that order.
class Dense {
public:
  Dense() = default;
  Dense(ParamStore& store, const std::string& name, Index in, Index out, bool batch_norm, bool activation, Rng& rng)
      : in_(in), out_(out), bn_(batch_norm), act_(activation) {
    if (in <= 0 || out <= 0) throw UsageError("layer '" + name + "' needs positive widths");
    w_ = &store.add(name + ".weight", he_normal(in, out, rng));
    b_ = &store.add(name + ".bias", Mat::Zero(1, out));
    if (bn_) {
      gamma_ = &store.add(name + ".bn.gamma", Mat::Ones(1, out));
      beta_ = &store.add(name + ".bn.beta", Mat::Zero(1, out));
      mean_ = &store.add_buffer(name + ".bn.running_mean", Mat::Zero(1, out));
      var_ = &store.add_buffer(name + ".bn.running_var", Mat::Ones(1, out));
    }
  }

  Var operator()(Tape& t, Var x, bool train, double momentum) const {
    if (x.cols() != in_) {
      throw UsageError("layer " + w_->name + ": expected " + std::to_string(in_) + " input columns, got " +
                       std::to_string(x.cols()));
    }
    Var y = linear(x, t.param(*w_), t.param(*b_));
    if (bn_) y = batchnorm(y, t.param(*gamma_), t.param(*beta_), BatchNormStats{&mean_->value, &var_->value, momentum}, train);
    if (act_) y = relu(y);
    return y;
  }

  Index in() const { return in_; }
  Index out() const { return out_; }

private:
  Index in_ = 0, out_ = 0;
  bool bn_ = false, act_ = false;
  Parameter* w_ = nullptr;
  Parameter* b_ = nullptr;
  Parameter* gamma_ = nullptr;
  Parameter* beta_ = nullptr;
  Buffer* mean_ = nullptr;
  Buffer* var_ = nullptr;
};

/// Stack of Dense layers. Hidden layers use batch norm + ReLU; the last layer
/// is configured separately.
class Mlp {
public:
  struct Last {
    bool batch_norm = false;
    bool activation = true;
  };

  Mlp() = default;
  Mlp(ParamStore& store, const std::string& name, Index in, const std::vector<int>& widths, Last last, Rng& rng) {
    if (widths.empty()) throw UsageError("MLP '" + name + "' needs at least one layer");
    Index prev = in;
    for (std::size_t i = 0; i < widths.size(); ++i) {
      const bool final = i + 1 == widths.size();
      layers_.emplace_back(store, name + "." + std::to_string(i), prev, widths[i], final ? last.batch_norm : true,
                           final ? last.activation : true, rng);
      prev = widths[i];
    }
  }

  /// Runs every layer; `taps` receives the output of each layer when given.
  Var operator()(Tape& t, Var x, bool train, double momentum, std::vector<Var>* taps = nullptr) const {
    for (const auto& l : layers_) {
      x = l(t, x, train, momentum);
      if (taps) taps->push_back(x);
    }
    return x;
  }

  Index in() const { return layers_.front().in(); }
  Index out() const { return layers_.back().out(); }
  std::size_t depth() const { return layers_.size(); }

private:
  std::vector<Dense> layers_;
};

} // namespace slidenet::nn
