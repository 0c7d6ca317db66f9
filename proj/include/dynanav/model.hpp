#pragma once

#include <string>
#include <vector>

#include "dynanav/config.hpp"
#include "dynanav/tensor.hpp"

namespace dynanav {

// All trainable parameters, addressed by path. Parameter creation order is
// fixed so initialization is reproducible from the seed.
class Model {
 public:
  Model(const RunConfig& cfg, std::uint64_t seed);
  Model(const RunConfig& cfg, ParamMap params);  // from checkpoint

  const RunConfig& cfg() const { return cfg_; }
  const ParamMap& params() const { return params_; }

  Tensor& p(const std::string& name);
  const Tensor& p(const std::string& name) const;

  // Stable, sorted (path, tensor) view of every trainable parameter.
  std::vector<std::pair<std::string, Tensor>> trainable() const;

  void zero_grads();
  void save(const std::string& path) const { save_checkpoint(path, params_); }
  static Model load(const RunConfig& cfg, const std::string& path);

 private:
  RunConfig cfg_;
  ParamMap params_;
};

}  // namespace dynanav
