#pragma once

#include <map>
#include <random>
#include <string>
#include <vector>

#include "mgdoc/autograd.hpp"

namespace mgdoc {

// Flat, name-ordered registry of every learnable tensor. Iteration order is
// the lexicographic name order, which fixes checkpoint layout and optimizer
// traversal order.
class ParamStore {
 public:
  // Registers a tensor initialized uniform(-1/sqrt(fan_in), +1/sqrt(fan_in)).
  ag::Var& add_uniform(const std::string& name, Eigen::Index rows, Eigen::Index cols,
                       Eigen::Index fan_in, std::mt19937_64& rng);
  ag::Var& add_constant(const std::string& name, Eigen::Index rows, Eigen::Index cols,
                        double value);
  ag::Var& add(const std::string& name, ag::Mat value);

  bool has(const std::string& name) const { return params_.count(name) != 0; }
  const ag::Var& get(const std::string& name) const;
  ag::Var& get(const std::string& name);
  ag::Mat& value(const std::string& name);

  void zero_grad();
  void set_trainable(const std::string& prefix, bool trainable);
  std::vector<std::string> names() const;
  std::size_t size() const { return params_.size(); }
  std::size_t scalar_count() const;

  auto begin() { return params_.begin(); }
  auto end() { return params_.end(); }
  auto begin() const { return params_.begin(); }
  auto end() const { return params_.end(); }

 private:
  std::map<std::string, ag::Var> params_;
};

}  // namespace mgdoc
