#pragma once

// Binary container: "ORGANCK1", u32 version, string metadata pairs, then named
// tensors (u32 rank, u64 dims, little-endian f64 payload). Entries keep their
// insertion order so identical state always serializes to identical bytes.

#include <cstdint>
#include <map>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "organ/optim.hpp"
#include "organ/params.hpp"
#include "organ/tensor.hpp"

namespace organ::nn {

class Checkpoint {
 public:
  static constexpr std::uint32_t kVersion = 1;

  void set_meta(const std::string& key, std::string value);
  const std::string& meta(const std::string& key) const;
  bool has_meta(const std::string& key) const { return metadata_.count(key) != 0; }
  const std::map<std::string, std::string>& metadata() const { return metadata_; }

  void put(const std::string& name, Tensor tensor);
  const Tensor& get(const std::string& name) const;
  bool has(const std::string& name) const;
  const std::vector<std::pair<std::string, Tensor>>& tensors() const { return tensors_; }

  /// Stores every parameter as "<prefix>.<name>".
  void put_params(const std::string& prefix, const ParameterSet& params);
  /// Loads values into an already-shaped set; shapes must match.
  void get_params(const std::string& prefix, ParameterSet& params) const;
  void put_adam(const std::string& prefix, const ParameterSet& params, const Adam& opt);
  void get_adam(const std::string& prefix, const ParameterSet& params, Adam& opt) const;

  std::string serialize() const;
  static Checkpoint deserialize(std::string_view bytes);
  void save(const std::string& path) const;
  static Checkpoint load(const std::string& path);

 private:
  std::map<std::string, std::string> metadata_;
  std::vector<std::pair<std::string, Tensor>> tensors_;
};

}  // namespace organ::nn
