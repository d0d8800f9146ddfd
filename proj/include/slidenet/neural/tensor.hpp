#pragma once

#include <cstddef>
#include <functional>
#include <memory>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Core>

#include "slidenet/common.hpp"

namespace slidenet::nn {

using Mat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using Index = Eigen::Index;

inline std::string dims(const Mat& m) { return std::to_string(m.rows()) + "x" + std::to_string(m.cols()); }

/// Trainable tensor with its gradient accumulator and Adam moments.
struct Parameter {
  std::string name;
  Mat value;
  Mat grad;
  Mat adam_m;
  Mat adam_v;

  Parameter(std::string n, Mat v) : name(std::move(n)), value(std::move(v)) {
    grad = Mat::Zero(value.rows(), value.cols());
    adam_m = grad;
    adam_v = grad;
  }
  Index size() const { return value.size(); }
  void zero_grad() { grad.setZero(); }
};

/// Non-trainable named state (running statistics, input normalisation).
struct Buffer {
  std::string name;
  Mat value;
};

/// Owns parameters and buffers at stable addresses, in registration order.
class ParamStore {
public:
  Parameter& add(const std::string& name, Mat value) {
    check_unique(name);
    params_.push_back(std::make_unique<Parameter>(name, std::move(value)));
    return *params_.back();
  }

  Buffer& add_buffer(const std::string& name, Mat value) {
    check_unique(name);
    buffers_.push_back(std::make_unique<Buffer>(Buffer{name, std::move(value)}));
    return *buffers_.back();
  }

  std::vector<Parameter*> params() const {
    std::vector<Parameter*> out;
    for (const auto& p : params_) out.push_back(p.get());
    return out;
  }

  std::vector<Buffer*> buffers() const {
    std::vector<Buffer*> out;
    for (const auto& b : buffers_) out.push_back(b.get());
    return out;
  }

  Parameter* find(const std::string& name) const {
    for (const auto& p : params_)
      if (p->name == name) return p.get();
    return nullptr;
  }

  Buffer* find_buffer(const std::string& name) const {
    for (const auto& b : buffers_)
      if (b->name == name) return b.get();
    return nullptr;
  }

  Index parameter_count() const {
    Index n = 0;
    for (const auto& p : params_) n += p->size();
    return n;
  }

  void zero_grad() {
    for (auto& p : params_) p->zero_grad();
  }

private:
  void check_unique(const std::string& name) const {
    if (find(name) || find_buffer(name)) throw UsageError("duplicate tensor name '" + name + "'");
  }

  std::vector<std::unique_ptr<Parameter>> params_;
  std::vector<std::unique_ptr<Buffer>> buffers_;
};

class Tape;

/// Handle to a value recorded on a tape.
struct Var {
  Tape* tape = nullptr;
  std::size_t id = 0;

  const Mat& value() const;
  Index rows() const { return value().rows(); }
  Index cols() const { return value().cols(); }
};

/// Linear record of a computation. Nodes are appended in evaluation order, so
/// walking them backwards is a valid topological order and the graph can
/// never contain a cycle.
class Tape {
public:
  using Backward = std::function<void(Tape&, std::size_t)>;

  struct Node {
    Mat value;
    Mat grad;
    Backward backward;
    Parameter* param = nullptr;
    bool needs_grad = false;
  };

  Var constant(Mat value) { return push(std::move(value), {}, false); }

  Var param(Parameter& p) {
    Var v = push(p.value, {}, true);
    nodes_.back().param = &p;
    return v;
  }

  Var push(Mat value, Backward backward, bool needs_grad) {
    nodes_.push_back(Node{std::move(value), Mat(), std::move(backward), nullptr, needs_grad});
    return Var{this, nodes_.size() - 1};
  }

  const Node& node(std::size_t id) const { return nodes_.at(id); }
  const Mat& value(std::size_t id) const { return nodes_[id].value; }
  bool needs_grad(std::size_t id) const { return nodes_[id].needs_grad; }
  bool needs_grad(Var v) const { return nodes_[v.id].needs_grad; }

  /// Gradient of the root with respect to node `id`; empty if never reached.
  const Mat& grad(std::size_t id) const { return nodes_[id].grad; }

  /// Adds `g` into the gradient of `id` (no-op for constants).
  template <typename Expr>
  void accumulate(std::size_t id, const Expr& g) {
    Node& n = nodes_[id];
    if (!n.needs_grad) return;
    if (n.grad.size() == 0) {
      n.grad = g;
    } else {
      n.grad += g;
    }
  }

  /// Reverse sweep from a 1x1 root. Parameter leaves add into Parameter::grad.
  void backward(Var root) {
    if (root.tape != this) throw UsageError("backward: variable belongs to another tape");
    const Mat& rv = nodes_[root.id].value;
    if (rv.rows() != 1 || rv.cols() != 1) throw UsageError("backward: root must be 1x1, got " + dims(rv));
    for (auto& n : nodes_) n.grad.resize(0, 0);
    nodes_[root.id].grad = Mat::Ones(1, 1);
    for (std::size_t i = root.id + 1; i-- > 0;) {
      Node& n = nodes_[i];
      if (n.grad.size() == 0) continue;
      if (n.backward) n.backward(*this, i);
      if (n.param) n.param->grad += n.grad;
    }
  }

  std::size_t size() const { return nodes_.size(); }
  void clear() { nodes_.clear(); }

private:
  std::vector<Node> nodes_;
};

inline const Mat& Var::value() const { return tape->value(id); }

} // namespace slidenet::nn
