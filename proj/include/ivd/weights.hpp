#pragma once

#include <map>
#include <optional>
#include <string>
#include <vector>

#include "ivd/ops.hpp"
#include "ivd/tensor.hpp"

namespace ivd {

// Named float32 parameter store plus the sidecar tables the quantized model
// needs. Serialized as a text JSON header (name, shape, dtype, byte offset)
// followed by raw little-endian float32 data.
class ParamStore {
 public:
  bool has(const std::string& name) const { return params_.count(name) > 0; }

  Tensor& at(const std::string& name);
  const Tensor& at(const std::string& name) const;

  void put(const std::string& name, Tensor t) { params_[name] = std::move(t); }

  std::vector<std::string> names() const;
  std::size_t size() const { return params_.size(); }

  long long total_parameters() const;

  // Per-tensor weight quantization ranges, keyed by parameter name.
  std::map<std::string, QuantParams>& weight_ranges() { return weight_ranges_; }
  const std::map<std::string, QuantParams>& weight_ranges() const { return weight_ranges_; }

  // Calibrated activation ranges keyed by op site name.
  std::map<std::string, QuantParams>& activation_ranges() { return activation_ranges_; }
  const std::map<std::string, QuantParams>& activation_ranges() const {
    return activation_ranges_;
  }

  bool quantized() const { return !activation_ranges_.empty(); }

  void save(const std::string& path) const;
  static ParamStore load(const std::string& path);

  // Serialized container bytes (identical to what save() writes).
  std::vector<unsigned char> serialize() const;

 private:
  std::map<std::string, Tensor> params_;
  std::map<std::string, QuantParams> weight_ranges_;
  std::map<std::string, QuantParams> activation_ranges_;
};

// Lowercase hex SHA-1 of `bytes` framed the way git hashes a blob.
std::string git_blob_sha1(const std::vector<unsigned char>& bytes);

}  // namespace ivd
