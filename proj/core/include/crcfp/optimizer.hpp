#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "crcfp/model.hpp"

namespace crcfp {

struct SgdConfig {
  double momentum = 0.9;
  double weight_decay = 1e-4;
};

/// SGD with heavy-ball momentum and L2 weight decay:
///   v <- momentum * v + (g + weight_decay * w);  w <- w - lr * v
class Sgd {
 public:
  Sgd(std::vector<Parameter> params, SgdConfig config = {});

  void zero_grad();
  /// One update of every parameter.
  void step(double lr);

  const std::vector<Parameter>& parameters() const { return params_; }
  const SgdConfig& config() const { return config_; }

  /// Momentum buffers keyed by parameter name.
  std::vector<std::pair<std::string, Tensor>> state() const;
  void load_state(const std::vector<std::pair<std::string, Tensor>>& state);

 private:
  std::vector<Parameter> params_;
  std::vector<Tensor> velocity_;
  SgdConfig config_;
};

/// base_lr * (1 - step / max_steps)^power, clamped at 0 past max_steps.
double poly_lr(std::int64_t step, std::int64_t max_steps, double base_lr, double power);

}  // namespace crcfp
