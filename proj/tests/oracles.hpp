#pragma once

// Scalar reference implementations written straight from the definitions,
// with plain loops and no shared code with the library.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <vector>

namespace oracle {

using Rows = std::vector<std::vector<double>>;

inline double cross_entropy(const Rows& logits, const std::vector<int>& labels, int ignore) {
  double total = 0.0;
  int counted = 0;
  for (std::size_t i = 0; i < logits.size(); ++i) {
    if (labels[i] == ignore) continue;
    double z = 0.0;
    for (double v : logits[i]) z += std::exp(v);
    total += -std::log(std::exp(logits[i][labels[i]]) / z);
    ++counted;
  }
  return counted ? total / counted : 0.0;
}

inline std::vector<double> softmax(const std::vector<double>& z) {
  double m = z[0];
  for (double v : z) m = std::max(m, v);
  std::vector<double> p(z.size());
  double s = 0.0;
  for (std::size_t k = 0; k < z.size(); ++k) s += (p[k] = std::exp(z[k] - m));
  for (double& v : p) v /= s;
  return p;
}

inline double entropy(const Rows& logits) {
  double total = 0.0;
  for (const auto& z : logits) {
    for (double p : softmax(z)) {
      if (p > 0.0) total -= p * std::log(p);
    }
  }
  return total / logits.size();
}

inline double cross_consistency(const Rows& main, const std::vector<Rows>& aux) {
  double total = 0.0;
  std::size_t count = 0;
  for (const Rows& head : aux) {
    for (std::size_t i = 0; i < main.size(); ++i) {
      for (std::size_t c = 0; c < main[i].size(); ++c) {
        const double d = main[i][c] - head[i][c];
        total += d * d;
        ++count;
      }
    }
  }
  return total / count;
}

inline double cosine(const std::vector<double>& a, const std::vector<double>& b) {
  double ab = 0.0, aa = 0.0, bb = 0.0;
  for (std::size_t k = 0; k < a.size(); ++k) {
    ab += a[k] * b[k];
    aa += a[k] * a[k];
    bb += b[k] * b[k];
  }
  return ab / (std::max(std::sqrt(aa), 1e-12) * std::max(std::sqrt(bb), 1e-12));
}

struct ContrastiveInput {
  Rows anchor, target, negatives;
  std::vector<double> anchor_conf, target_conf;
  std::vector<int> anchor_label, target_label, negative_label;
  double threshold = 0.75;
  double temperature = 0.1;
  bool divide_by_gated = true;
};

inline double contrastive(const ContrastiveInput& in) {
  const std::size_t n = in.anchor.size();
  double total = 0.0;
  int gated = 0;
  for (std::size_t i = 0; i < n; ++i) {
    if (!(in.anchor_conf[i] > in.threshold && in.anchor_conf[i] < in.target_conf[i])) continue;
    ++gated;
    const double pos = std::exp(cosine(in.anchor[i], in.target[i]) / in.temperature);
    double neg = 0.0;
    for (std::size_t j = 0; j < n; ++j) {
      if (j != i && in.target_label[j] != in.anchor_label[i]) {
        neg += std::exp(cosine(in.anchor[i], in.target[j]) / in.temperature);
      }
    }
    for (std::size_t k = 0; k < in.negatives.size(); ++k) {
      if (in.negative_label[k] != in.anchor_label[i]) {
        neg += std::exp(cosine(in.anchor[i], in.negatives[k]) / in.temperature);
      }
    }
    total += -std::log(pos / (pos + neg));
  }
  if (gated == 0) return 0.0;
  return total / (in.divide_by_gated ? gated : static_cast<double>(n));
}

/// values[y][x][d]; mean L2 distance between the centre patch and the four
/// neighbours at distance `offset`. Returns NaN where invalid.
inline double density_at(const std::vector<std::vector<std::vector<double>>>& v, int y, int x,
                         int patch, int offset) {
  const int h = static_cast<int>(v.size());
  const int w = static_cast<int>(v[0].size());
  const int r = patch / 2;
  const int dy[4] = {0, 0, -offset, offset};
  const int dx[4] = {-offset, offset, 0, 0};
  double sum = 0.0;
  for (int n = 0; n < 4; ++n) {
    const int ny = y + dy[n], nx = x + dx[n];
    if (ny - r < 0 || nx - r < 0 || ny + r >= h || nx + r >= w || y - r < 0 || x - r < 0 ||
        y + r >= h || x + r >= w) {
      return std::nan("");
    }
    double sq = 0.0;
    for (int u = -r; u <= r; ++u) {
      for (int t = -r; t <= r; ++t) {
        for (std::size_t d = 0; d < v[0][0].size(); ++d) {
          const double diff = v[y + u][x + t][d] - v[ny + u][nx + t][d];
          sq += diff * diff;
        }
      }
    }
    sum += std::sqrt(sq);
  }
  return sum / 4.0;
}

inline std::vector<std::vector<std::int64_t>> confusion(const std::vector<int>& pred,
                                                        const std::vector<int>& truth, int classes,
                                                        int ignore) {
  std::vector<std::vector<std::int64_t>> cm(classes, std::vector<std::int64_t>(classes, 0));
  for (int t = 0; t < classes; ++t) {
    for (int p = 0; p < classes; ++p) {
      for (std::size_t i = 0; i < pred.size(); ++i) {
        if (truth[i] != ignore && truth[i] == t && pred[i] == p) ++cm[t][p];
      }
    }
  }
  return cm;
}

}  // namespace oracle
