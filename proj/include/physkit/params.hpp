// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "physkit/tensor.hpp"

namespace physkit {

/// A named tensor with gradient and optimizer state.
struct Parameter {
  std::string name;
  Tensor value;
  Tensor grad;
  bool trainable = true;
  // Adam first and second moments, same shape as value.
  Tensor adam_m;
  Tensor adam_v;
};

/// Owns every parameter of a model. Names are unique; iteration order is
/// lexicographic by name so serialization and optimizer sweeps are stable.
/// References returned by add()/get() stay valid for the store's lifetime.
class ParamStore {
 public:
  Parameter& add(const std::string& name, Tensor value, bool trainable = true);

  bool contains(const std::string& name) const { return params_.contains(name); }
  Parameter& get(const std::string& name);
  const Parameter& get(const std::string& name) const;

  std::vector<std::string> names() const;
  std::size_t size() const noexcept { return params_.size(); }
  /// Number of trainable scalars.
  std::size_t trainable_scalars() const noexcept;

  void zero_grad();

  auto begin() { return params_.begin(); }
  auto end() { return params_.end(); }
  auto begin() const { return params_.begin(); }
  auto end() const { return params_.end(); }

  /// One JSON record per line: {"name", "shape", "trainable", "values"}.
  std::string to_text() const;
  static ParamStore from_text(const std::string& text);
  void save(const std::filesystem::path& path) const;
  static ParamStore load(const std::filesystem::path& path);

  /// Copies values from `other` for every parameter of this store. Names and
  /// shapes must match exactly.
  void assign_values(const ParamStore& other);

 private:
  std::map<std::string, Parameter> params_;
};

}  // namespace physkit
