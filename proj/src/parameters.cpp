#include "bpclip/parameters.hpp"

#include <cmath>
#include <regex>

namespace bpclip {

bool is_norm_parameter(const std::string& name) {
  // torchvision-style names (bn1, layer1.0.bn2, downsample.1) and the tiny backbone's ".norm."
  static const std::regex pattern(R"((^|\.)(bn\d*|norm\d*)\.|(^|\.)downsample\.1\.)");
  return std::regex_search(name, pattern);
}

bool is_norm_statistic(const std::string& name) {
  return is_norm_parameter(name) &&
         (name.ends_with(".running_mean") || name.ends_with(".running_var") ||
          name.ends_with(".num_batches_tracked"));
}

template <typename T>
void ParameterSet<T>::add(const std::string& name, Tensor<T> value, bool trainable) {
  if (name.empty()) throw ConfigError("parameter name must not be empty");
  if (is_norm_statistic(name)) trainable = false;
  entries_[name] = Entry{std::move(value), trainable};
}

template <typename T>
const Tensor<T>& ParameterSet<T>::get(const std::string& name) const {
  auto it = entries_.find(name);
  if (it == entries_.end()) throw ConfigError("missing parameter '" + name + "'");
  return it->second.value;
}

template <typename T>
Tensor<T>& ParameterSet<T>::mutable_value(const std::string& name) {
  auto it = entries_.find(name);
  if (it == entries_.end()) throw ConfigError("missing parameter '" + name + "'");
  return it->second.value;
}

template <typename T>
bool ParameterSet<T>::is_trainable(const std::string& name) const {
  auto it = entries_.find(name);
  if (it == entries_.end()) throw ConfigError("missing parameter '" + name + "'");
  return it->second.trainable;
}

template <typename T>
void ParameterSet<T>::set_trainable(const std::string& name, bool trainable) {
  auto it = entries_.find(name);
  if (it == entries_.end()) throw ConfigError("missing parameter '" + name + "'");
  it->second.trainable = trainable && !is_norm_statistic(name);
}

template <typename T>
std::vector<std::string> ParameterSet<T>::names() const {
  std::vector<std::string> out;
  out.reserve(entries_.size());
  for (const auto& [name, e] : entries_) out.push_back(name);
  return out;
}

template <typename T>
std::size_t ParameterSet<T>::parameter_count() const {
  std::size_t n = 0;
  for (const auto& [name, e] : entries_) n += e.value.numel();
  return n;
}

template <typename T>
Var<T> Context<T>::param(const std::string& name) {
  if (auto it = bound_.find(name); it != bound_.end()) return it->second;
  auto it = params_->entries().find(name);
  if (it == params_->entries().end()) throw ConfigError("missing parameter '" + name + "'");
  auto v = Var<T>::borrowed(it->second.value, track_grads_ && it->second.trainable);
  bound_.emplace(name, v);
  order_.push_back(name);
  return v;
}

template <typename T>
std::map<std::string, Tensor<T>> Context<T>::gradients() const {
  std::map<std::string, Tensor<T>> out;
  for (const auto& [name, v] : bound_) {
    if (v.requires_grad()) out.emplace(name, v.grad());
  }
  return out;
}

template <typename T>
Tensor<T> he_normal(Shape shape, std::int64_t fan_in, std::mt19937_64& rng) {
  std::normal_distribution<double> dist(0.0, std::sqrt(2.0 / static_cast<double>(fan_in)));
  Tensor<T> t(std::move(shape));
  for (auto& v : t.data()) v = static_cast<T>(dist(rng));
  return t;
}

template <typename T>
Tensor<T> xavier_uniform(Shape shape, std::int64_t fan_in, std::int64_t fan_out, std::mt19937_64& rng) {
  const double a = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
  std::uniform_real_distribution<double> dist(-a, a);
  Tensor<T> t(std::move(shape));
  for (auto& v : t.data()) v = static_cast<T>(dist(rng));
  return t;
}

template <typename T>
Tensor<T> normal(Shape shape, double stddev, std::mt19937_64& rng) {
  std::normal_distribution<double> dist(0.0, stddev);
  Tensor<T> t(std::move(shape));
  for (auto& v : t.data()) v = static_cast<T>(dist(rng));
  return t;
}

template class ParameterSet<float>;
template class ParameterSet<double>;
template class Context<float>;
template class Context<double>;
template Tensor<float> he_normal(Shape, std::int64_t, std::mt19937_64&);
template Tensor<double> he_normal(Shape, std::int64_t, std::mt19937_64&);
template Tensor<float> xavier_uniform(Shape, std::int64_t, std::int64_t, std::mt19937_64&);
template Tensor<double> xavier_uniform(Shape, std::int64_t, std::int64_t, std::mt19937_64&);
template Tensor<float> normal(Shape, double, std::mt19937_64&);
template Tensor<double> normal(Shape, double, std::mt19937_64&);

}  // namespace bpclip
