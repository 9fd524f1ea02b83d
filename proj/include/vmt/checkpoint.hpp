#pragma once

#include <cstdint>
#include <map>
#include <string>

#include "vmt/nn.hpp"
#include "vmt/tensor.hpp"

namespace vmt {

std::string serialize_model_spec(const ModelSpec& spec);
ModelSpec parse_model_spec(const std::string& text);

// Named-array container. Doubles are stored as raw native-endian bytes, so a
// save/load round trip is bit-exact on the machine that wrote the file.
// Writes go to <path>.tmp first and are renamed into place.
class Checkpoint {
 public:
  void put(const std::string& name, Tensor t);
  void put_text(const std::string& name, std::string text);
  void put_u64(const std::string& name, uint64_t v);

  bool has(const std::string& name) const;
  bool has_text(const std::string& name) const;
  const Tensor& tensor(const std::string& name) const;
  const std::string& text(const std::string& name) const;
  uint64_t u64(const std::string& name) const;

  // Model state under a name prefix: spec plus value/m/v/ema per parameter.
  void put_model(const std::string& prefix, const ModelParams& params);
  ModelParams model(const std::string& prefix) const;

  void save(const std::string& path) const;
  static Checkpoint load(const std::string& path);

  const std::map<std::string, Tensor>& tensors() const { return tensors_; }
  const std::map<std::string, std::string>& texts() const { return texts_; }

 private:
  std::map<std::string, Tensor> tensors_;
  std::map<std::string, std::string> texts_;
};

}  // namespace vmt
