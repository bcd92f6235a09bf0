#include "crcfp/optimizer.hpp"

#include <cmath>
#include <unordered_map>

namespace crcfp {

Sgd::Sgd(std::vector<Parameter> params, SgdConfig config)
    : params_(std::move(params)), config_(config) {
  if (config_.momentum < 0.0 || config_.momentum >= 1.0) {
    throw Error("sgd: momentum must lie in [0, 1)");
  }
  if (config_.weight_decay < 0.0) throw Error("sgd: weight decay must be nonnegative");
  velocity_.reserve(params_.size());
  for (const Parameter& p : params_) velocity_.push_back(Tensor::zeros_like(p.var.value()));
}

void Sgd::zero_grad() {
  for (Parameter& p : params_) p.var.zero_grad();
}

void Sgd::step(double lr) {
  for (std::size_t i = 0; i < params_.size(); ++i) {
    Tensor& w = params_[i].var.mutable_value();
    Tensor& v = velocity_[i];
    const Tensor& g = params_[i].var.grad();
    for (std::size_t j = 0; j < w.size(); ++j) {
      const double grad = g[j] + config_.weight_decay * w[j];
      v[j] = config_.momentum * v[j] + grad;
      w[j] -= lr * v[j];
    }
  }
}

std::vector<std::pair<std::string, Tensor>> Sgd::state() const {
  std::vector<std::pair<std::string, Tensor>> out;
  out.reserve(params_.size());
  for (std::size_t i = 0; i < params_.size(); ++i) {
    out.emplace_back(params_[i].name, velocity_[i]);
  }
  return out;
}

void Sgd::load_state(const std::vector<std::pair<std::string, Tensor>>& state) {
  std::unordered_map<std::string, const Tensor*> by_name;
  for (const auto& [name, t] : state) by_name[name] = &t;
  for (std::size_t i = 0; i < params_.size(); ++i) {
    auto it = by_name.find(params_[i].name);
    if (it == by_name.end()) throw Error("optimizer state lacks " + params_[i].name);
    if (!(it->second->shape() == velocity_[i].shape())) {
      throw Error("optimizer state for " + params_[i].name + " has shape " +
                  it->second->shape().str());
    }
    velocity_[i] = *it->second;
  }
}

double poly_lr(std::int64_t step, std::int64_t max_steps, double base_lr, double power) {
  if (max_steps <= 0) throw Error("poly_lr: max_steps must be positive");
  if (step >= max_steps) return 0.0;
  if (step <= 0) return base_lr;
  const double remaining = 1.0 - static_cast<double>(step) / static_cast<double>(max_steps);
  return base_lr * std::pow(remaining, power);
}

}  // namespace crcfp
