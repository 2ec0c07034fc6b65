#include "mgdoc/params.hpp"

#include <cmath>

namespace mgdoc {

ag::Var& ParamStore::add_uniform(const std::string& name, Eigen::Index rows, Eigen::Index cols,
                                 Eigen::Index fan_in, std::mt19937_64& rng) {
  const double bound = 1.0 / std::sqrt(static_cast<double>(std::max<Eigen::Index>(fan_in, 1)));
  std::uniform_real_distribution<double> dist(-bound, bound);
  ag::Mat m(rows, cols);
  for (Eigen::Index i = 0; i < rows; ++i)
    for (Eigen::Index j = 0; j < cols; ++j) m(i, j) = dist(rng);
  return add(name, std::move(m));
}

ag::Var& ParamStore::add_constant(const std::string& name, Eigen::Index rows, Eigen::Index cols,
                                  double value) {
  return add(name, ag::Mat::Constant(rows, cols, value));
}

ag::Var& ParamStore::add(const std::string& name, ag::Mat value) {
  if (has(name)) throw Error("duplicate parameter '" + name + "'");
  auto [it, _] = params_.emplace(name, ag::leaf(std::move(value), true));
  return it->second;
}

const ag::Var& ParamStore::get(const std::string& name) const {
  auto it = params_.find(name);
  if (it == params_.end()) throw Error("unknown parameter '" + name + "'");
  return it->second;
}

ag::Var& ParamStore::get(const std::string& name) {
  auto it = params_.find(name);
  if (it == params_.end()) throw Error("unknown parameter '" + name + "'");
  return it->second;
}

ag::Mat& ParamStore::value(const std::string& name) { return get(name).node()->value; }

void ParamStore::zero_grad() {
  for (auto& [_, v] : params_) v.node()->grad.resize(0, 0);
}

void ParamStore::set_trainable(const std::string& prefix, bool trainable) {
  for (auto& [name, v] : params_)
    if (name.starts_with(prefix)) v.node()->requires_grad = trainable;
}

std::vector<std::string> ParamStore::names() const {
  std::vector<std::string> out;
  out.reserve(params_.size());
  for (const auto& [name, _] : params_) out.push_back(name);
  return out;
}

std::size_t ParamStore::scalar_count() const {
  std::size_t n = 0;
  for (const auto& [_, v] : params_) n += static_cast<std::size_t>(v.value().size());
  return n;
}

}  // namespace mgdoc
