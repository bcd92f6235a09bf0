#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <numeric>
#include <vector>

#include "crcfp/autograd.hpp"
#include "crcfp/random.hpp"
#include "crcfp/tensor.hpp"
#include "oracles.hpp"

namespace testing_support {

using crcfp::Rng;
using crcfp::Shape;
using crcfp::Tensor;
using crcfp::Var;

inline Tensor random_tensor(const Shape& s, Rng& rng, double lo = -1.0, double hi = 1.0) {
  Tensor t(s);
  std::uniform_real_distribution<double> u(lo, hi);
  for (double& v : t.values()) v = u(rng);
  return t;
}

inline std::vector<int> random_labels(std::size_t n, int classes, Rng& rng) {
  std::uniform_int_distribution<int> u(0, classes - 1);
  std::vector<int> out(n);
  for (int& v : out) v = u(rng);
  return out;
}

/// Rows of the trailing channel axis.
inline oracle::Rows rows(const Tensor& t) {
  const int c = t.c();
  oracle::Rows out(t.size() / c, std::vector<double>(c));
  for (std::size_t i = 0; i < t.size(); ++i) out[i / c][i % c] = t[i];
  return out;
}

inline double relative(double a, double b) {
  return std::abs(a - b) / std::max({std::abs(a), std::abs(b), 1e-300});
}

/// Relative error ||analytic - numeric|| / max(||analytic||, ||numeric||)
/// over every input, with central differences of step `h`. At most
/// `max_coords` coordinates per input are probed.
inline double gradcheck(const std::function<Var(const std::vector<Var>&)>& f,
                        const std::vector<Tensor>& inputs, double h = 1e-6,
                        std::size_t max_coords = 64, std::uint64_t seed = 7) {
  std::vector<Var> vars;
  for (const Tensor& t : inputs) vars.push_back(Var::parameter(t));
  crcfp::backward(f(vars));
  Rng rng(seed);
  double diff = 0.0, norm_a = 0.0, norm_n = 0.0;
  for (std::size_t k = 0; k < vars.size(); ++k) {
    const Tensor analytic = vars[k].grad();
    std::vector<std::size_t> coords(inputs[k].size());
    std::iota(coords.begin(), coords.end(), 0);
    if (coords.size() > max_coords) {
      std::shuffle(coords.begin(), coords.end(), rng);
      coords.resize(max_coords);
    }
    for (std::size_t i : coords) {
      auto eval = [&](double delta) {
        std::vector<Var> probe;
        for (std::size_t j = 0; j < inputs.size(); ++j) {
          Tensor t = inputs[j];
          if (j == k) t[i] += delta;
          probe.push_back(Var::constant(t));
        }
        return f(probe).item();
      };
      const double numeric = (eval(h) - eval(-h)) / (2.0 * h);
      diff += (analytic[i] - numeric) * (analytic[i] - numeric);
      norm_a += analytic[i] * analytic[i];
      norm_n += numeric * numeric;
    }
  }
  const double scale = std::max({std::sqrt(norm_a), std::sqrt(norm_n), 1e-12});
  return std::sqrt(diff) / scale;
}

}  // namespace testing_support
