// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "idu/matrix.hpp"
#include "idu/rng.hpp"
#include "idu/tape.hpp"

namespace idu {

struct ParamShape {
  std::string name;
  std::size_t rows = 0;
  std::size_t cols = 0;
};

/// Ordered collection of named weight matrices; the sole trainable state of
/// a model. Insertion order is the serialization and optimizer order.
class ParamSet {
 public:
  void add(std::string name, Matrix value);
  Matrix& at(std::string_view name);
  const Matrix& at(std::string_view name) const;
  bool contains(std::string_view name) const noexcept;

  std::size_t size() const noexcept { return values_.size(); }
  const std::string& name(std::size_t i) const { return names_[i]; }
  Matrix& value(std::size_t i) { return values_[i]; }
  const Matrix& value(std::size_t i) const { return values_[i]; }
  std::vector<Matrix*> pointers();
  std::size_t entry_count() const noexcept;

  /// Appends every matrix of `other`, prefixing names.
  void append(const ParamSet& other, std::string_view prefix = {});
  /// Checks names and shapes against a declared layout.
  void require_layout(std::span<const ParamShape> layout, std::string_view what) const;

  friend bool operator==(const ParamSet& a, const ParamSet& b) noexcept;

 private:
  std::vector<std::string> names_;
  std::vector<Matrix> values_;
};

/// Uniform in [-a, a] with a = sqrt(6 / (fan_in + fan_out)).
Matrix glorot_uniform(std::size_t fan_in, std::size_t fan_out, Rng& rng);
ParamSet init_params(std::span<const ParamShape> layout, Rng& rng);
std::size_t count_entries(std::span<const ParamShape> layout) noexcept;

/// Parameters of a ParamSet recorded on a tape, looked up by name.
class BoundParams {
 public:
  BoundParams() = default;
  BoundParams(Tape& tape, const ParamSet& params);
  /// Names `vars` (already recorded, in the set's order) by `params`.
  BoundParams(const ParamSet& params, std::span<const Var> vars);

  Var operator[](std::string_view name) const;
  bool contains(std::string_view name) const noexcept;
  std::span<const Var> vars() const noexcept { return vars_; }

 private:
  const ParamSet* params_ = nullptr;
  std::vector<Var> vars_;
};

}  // namespace idu
