// SPDX-License-Identifier: Apache-2.0
#include "idu/params.hpp"

#include <cmath>

#include "idu/error.hpp"

namespace idu {

void ParamSet::add(std::string name, Matrix value) {
  if (contains(name)) throw UsageError("duplicate parameter " + name);
  names_.push_back(std::move(name));
  values_.push_back(std::move(value));
}

Matrix& ParamSet::at(std::string_view name) {
  for (std::size_t i = 0; i < names_.size(); ++i) {
    if (names_[i] == name) return values_[i];
  }
  throw UsageError("no parameter named " + std::string(name));
}

const Matrix& ParamSet::at(std::string_view name) const {
  return const_cast<ParamSet*>(this)->at(name);
}

bool ParamSet::contains(std::string_view name) const noexcept {
  for (const auto& n : names_) {
    if (n == name) return true;
  }
  return false;
}

std::vector<Matrix*> ParamSet::pointers() {
  std::vector<Matrix*> out;
  for (auto& v : values_) out.push_back(&v);
  return out;
}

std::size_t ParamSet::entry_count() const noexcept {
  std::size_t n = 0;
  for (const auto& v : values_) n += v.size();
  return n;
}

void ParamSet::append(const ParamSet& other, std::string_view prefix) {
  for (std::size_t i = 0; i < other.size(); ++i) {
    add(std::string(prefix) + other.names_[i], other.values_[i]);
  }
}

void ParamSet::require_layout(std::span<const ParamShape> layout, std::string_view what) const {
  if (layout.size() != size()) {
    throw ShapeError(std::string(what) + ": expected " + std::to_string(layout.size()) +
                     " weight matrices, got " + std::to_string(size()));
  }
  for (std::size_t i = 0; i < layout.size(); ++i) {
    if (names_[i] != layout[i].name) {
      throw ShapeError(std::string(what) + ": expected weight " + layout[i].name + ", got " +
                       names_[i]);
    }
    require_shape(values_[i], layout[i].rows, layout[i].cols, layout[i].name);
  }
}

bool operator==(const ParamSet& a, const ParamSet& b) noexcept {
  return a.names_ == b.names_ && a.values_ == b.values_;
}

Matrix glorot_uniform(std::size_t fan_in, std::size_t fan_out, Rng& rng) {
  Matrix m(fan_in, fan_out);
  const double a = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
  for (double& v : m.data()) v = rng.uniform(-a, a);
  return m;
}

ParamSet init_params(std::span<const ParamShape> layout, Rng& rng) {
  ParamSet set;
  for (const auto& s : layout) set.add(s.name, glorot_uniform(s.rows, s.cols, rng));
  return set;
}

std::size_t count_entries(std::span<const ParamShape> layout) noexcept {
  std::size_t n = 0;
  for (const auto& s : layout) n += s.rows * s.cols;
  return n;
}

BoundParams::BoundParams(Tape& tape, const ParamSet& params) : params_(&params) {
  vars_.reserve(params.size());
  for (std::size_t i = 0; i < params.size(); ++i) vars_.push_back(tape.parameter(params.value(i)));
}

BoundParams::BoundParams(const ParamSet& params, std::span<const Var> vars)
    : params_(&params), vars_(vars.begin(), vars.end()) {
  if (vars.size() != params.size()) throw ShapeError("bound variable count does not match the parameter set");
}

Var BoundParams::operator[](std::string_view name) const {
  for (std::size_t i = 0; i < vars_.size(); ++i) {
    if (params_->name(i) == name) return vars_[i];
  }
  throw UsageError("no bound parameter named " + std::string(name));
}

bool BoundParams::contains(std::string_view name) const noexcept {
  return params_ != nullptr && params_->contains(name);
}

}  // namespace idu
