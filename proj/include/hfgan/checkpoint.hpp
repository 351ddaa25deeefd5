#pragma once

// Single-file checkpoint archive: a key=value manifest followed by named
// tensors with dtype and shape.
//
// Layout (little-endian):
//   "HFGANCK1"
//   u64 manifest byte count, manifest text ("key=value\n" lines)
//   u64 tensor count, then per tensor:
//     u32 name length, name bytes, u8 dtype (4 = float32, 8 = float64),
//     u32 rank, rank x i64 dims, raw values

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include "hfgan/nn.hpp"

namespace hfgan {

class Checkpoint {
 public:
  void set(const std::string& key, std::string value);
  bool has(const std::string& key) const { return manifest_index_.count(key) > 0; }
  /// Throws LoadError when the key is absent.
  const std::string& get(const std::string& key) const;
  const std::vector<std::pair<std::string, std::string>>& manifest() const { return manifest_; }

  template <typename S>
  void put_tensor(const std::string& name, const Tensor<S>& t);
  /// Converts from the stored dtype. Throws LoadError when absent.
  template <typename S>
  Tensor<S> tensor(const std::string& name) const;
  bool has_tensor(const std::string& name) const { return tensors_.count(name) > 0; }
  std::vector<std::string> tensor_names() const;

  /// Stores every parameter as `<prefix><name>`.
  template <typename S>
  void put_store(const std::string& prefix, const ParameterStore<S>& store);
  /// Overwrites every parameter of `store` from `<prefix><name>`. Missing
  /// names or shape mismatches throw LoadError.
  template <typename S>
  void load_store(const std::string& prefix, ParameterStore<S>& store) const;

  /// Writes to a temporary sibling and renames it into place; the temporary
  /// is removed when writing fails.
  void save(const std::filesystem::path& path) const;
  static Checkpoint load(const std::filesystem::path& path);

 private:
  struct Stored {
    std::uint8_t dtype = 4;
    Shape shape;
    std::vector<double> values;  // exact for both dtypes
  };
  std::vector<std::pair<std::string, std::string>> manifest_;
  std::map<std::string, std::size_t> manifest_index_;
  std::map<std::string, Stored> tensors_;
};

/// FNV-1a 64-bit over a byte string.
std::uint64_t fnv1a(const std::string& bytes, std::uint64_t h = 0xcbf29ce484222325ull);

}  // namespace hfgan
