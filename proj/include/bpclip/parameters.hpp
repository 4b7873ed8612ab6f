#pragma once

#include <cstdint>
#include <map>
#include <random>
#include <string>
#include <vector>

#include "bpclip/autograd.hpp"

namespace bpclip {

/// True for normalization-layer entries (affine parameters and running statistics).
bool is_norm_parameter(const std::string& name);

/// True for running statistics, which are buffers and never trainable.
bool is_norm_statistic(const std::string& name);

/// Named model weights with per-entry trainable flags. Iteration order is by name.
template <typename T>
class ParameterSet {
 public:
  struct Entry {
    Tensor<T> value;
    bool trainable = true;
  };

  void add(const std::string& name, Tensor<T> value, bool trainable = true);
  bool contains(const std::string& name) const { return entries_.count(name) != 0; }
  const Tensor<T>& get(const std::string& name) const;
  Tensor<T>& mutable_value(const std::string& name);
  bool is_trainable(const std::string& name) const;
  void set_trainable(const std::string& name, bool trainable);

  std::vector<std::string> names() const;
  std::size_t size() const noexcept { return entries_.size(); }
  std::size_t parameter_count() const;
  const std::map<std::string, Entry>& entries() const noexcept { return entries_; }

  template <typename U>
  ParameterSet<U> cast() const {
    ParameterSet<U> out;
    for (const auto& [name, e] : entries_) out.add(name, e.value.template cast<U>(), e.trainable);
    return out;
  }

 private:
  std::map<std::string, Entry> entries_;
};

/// Binds parameters into a computation graph for one forward pass.
///
/// With `track_grads` set, trainable parameters become gradient-carrying
/// leaves; otherwise every parameter is a constant and no backward closures
/// are kept. The context borrows the parameter tensors, so the ParameterSet
/// must outlive it and must not be mutated while the context is alive.
template <typename T>
class Context {
 public:
  explicit Context(const ParameterSet<T>& params, bool track_grads = false)
      : params_(&params), track_grads_(track_grads) {}

  /// Throws ConfigError when `name` is absent.
  Var<T> param(const std::string& name);
  bool has(const std::string& name) const { return params_->contains(name); }
  bool tracking() const noexcept { return track_grads_; }
  const ParameterSet<T>& params() const noexcept { return *params_; }

  /// Gradients of every bound trainable parameter after a backward pass.
  std::map<std::string, Tensor<T>> gradients() const;

  /// Names bound so far, in binding order.
  const std::vector<std::string>& bound_names() const noexcept { return order_; }

 private:
  const ParameterSet<T>* params_;
  bool track_grads_;
  std::map<std::string, Var<T>> bound_;
  std::vector<std::string> order_;
};

/// Deterministic weight initializers.
template <typename T>
Tensor<T> he_normal(Shape shape, std::int64_t fan_in, std::mt19937_64& rng);
template <typename T>
Tensor<T> xavier_uniform(Shape shape, std::int64_t fan_in, std::int64_t fan_out, std::mt19937_64& rng);
template <typename T>
Tensor<T> normal(Shape shape, double stddev, std::mt19937_64& rng);

}  // namespace bpclip
