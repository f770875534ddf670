#pragma once

#include <cmath>
#include <cstdint>
#include <deque>
#include <functional>
#include <limits>
#include <map>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "slotalign/error.hpp"
#include "slotalign/matrix.hpp"
#include "slotalign/rng.hpp"

namespace slotalign::nn {

template <typename T>
struct Parameter {
  std::string name;
  Matrix<T> value;
  Matrix<T> grad;
};

/// Owns named parameters with stable addresses, in registration order.
template <typename T>
class ParameterSet {
 public:
  ParameterSet() = default;
  ParameterSet(const ParameterSet&) = delete;
  ParameterSet& operator=(const ParameterSet&) = delete;
  ParameterSet(ParameterSet&&) noexcept = default;
  ParameterSet& operator=(ParameterSet&&) noexcept = default;

  Parameter<T>& add(std::string name, std::size_t rows, std::size_t cols) {
    if (index_.count(name)) throw Error(ErrorKind::kConfig, "duplicate parameter " + name);
    index_[name] = params_.size();
    params_.push_back({std::move(name), Matrix<T>(rows, cols), Matrix<T>(rows, cols)});
    return params_.back();
  }

  Parameter<T>& at(const std::string& name) {
    auto it = index_.find(name);
    if (it == index_.end()) throw Error(ErrorKind::kConfig, "unknown parameter " + name);
    return params_[it->second];
  }
  const Parameter<T>& at(const std::string& name) const {
    return const_cast<ParameterSet*>(this)->at(name);
  }
  bool contains(const std::string& name) const { return index_.count(name) != 0; }

  auto begin() { return params_.begin(); }
  auto end() { return params_.end(); }
  auto begin() const { return params_.begin(); }
  auto end() const { return params_.end(); }
  std::size_t size() const { return params_.size(); }

  std::size_t num_values() const {
    std::size_t n = 0;
    for (const auto& p : params_) n += p.value.size();
    return n;
  }

  void zero_grad() {
    for (auto& p : params_) p.grad.fill(T(0));
  }

 private:
  std::deque<Parameter<T>> params_;
  std::map<std::string, std::size_t> index_;
};

/// Uniform in [-1/sqrt(fan_in), 1/sqrt(fan_in)].
template <typename T>
void init_fan_in(Parameter<T>& p, std::size_t fan_in, Rng& rng) {
  const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
  for (auto& v : p.value.flat()) v = static_cast<T>(rng.uniform_real(-bound, bound));
}

template <typename T>
void init_constant(Parameter<T>& p, T value) {
  p.value.fill(value);
}

struct Var {
  std::int32_t id = -1;
};

/// Reverse-mode tape over whole matrices. Each op records its output value
/// and a closure that pushes the output gradient back to its inputs.
/// Parameter leaves accumulate directly into Parameter::grad.
template <typename T>
class Tape {
 public:
  using Backward = std::function<void(Tape&, Var self)>;

  explicit Tape(bool record = true) : record_(record) {}

  bool recording() const { return record_; }

  Var constant(Matrix<T> value) { return push(std::move(value)); }

  Var param(Parameter<T>& p) {
    Node n;
    n.param = &p;
    nodes_.push_back(std::move(n));
    return {static_cast<std::int32_t>(nodes_.size() - 1)};
  }

  const Matrix<T>& value(Var v) const {
    const Node& n = nodes_.at(static_cast<std::size_t>(v.id));
    return n.param ? n.param->value : n.value;
  }

  /// Gradient slot of `v`, allocated as zeros on first use.
  Matrix<T>& grad(Var v) {
    Node& n = nodes_.at(static_cast<std::size_t>(v.id));
    Matrix<T>& g = n.param ? n.param->grad : n.grad;
    const Matrix<T>& val = n.param ? n.param->value : n.value;
    if (g.rows() != val.rows() || g.cols() != val.cols()) g.resize(val.rows(), val.cols());
    return g;
  }

  std::size_t size() const { return nodes_.size(); }

  bool has_grad(Var v) const {
    const Node& n = nodes_.at(static_cast<std::size_t>(v.id));
    return n.param ? !n.param->grad.empty() : !n.grad.empty();
  }

  Var push(Matrix<T> value, Backward back = {}) {
    Node n;
    n.value = std::move(value);
    if (record_) n.back = std::move(back);
    nodes_.push_back(std::move(n));
    return {static_cast<std::int32_t>(nodes_.size() - 1)};
  }

  /// Seeds d(out)/d(out) with `seed` (out must be 1x1) and runs the tape.
  void backward(Var out, T seed = T(1)) {
    if (!record_) throw Error(ErrorKind::kNumeric, "backward on a non-recording tape");
    Matrix<T>& g = grad(out);
    if (g.size() != 1) throw Error(ErrorKind::kNumeric, "backward seed needs a scalar output");
    g(0, 0) += seed;
    for (std::size_t i = static_cast<std::size_t>(out.id) + 1; i-- > 0;) {
      Node& n = nodes_[i];
      if (n.back && !n.grad.empty()) n.back(*this, Var{static_cast<std::int32_t>(i)});
    }
  }

 private:
  struct Node {
    Matrix<T> value;
    Matrix<T> grad;
    Backward back;
    Parameter<T>* param = nullptr;
  };
  std::vector<Node> nodes_;
  bool record_;
};

}  // namespace slotalign::nn
