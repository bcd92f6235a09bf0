#include "crcfp/losses.hpp"

#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <limits>

namespace crcfp {
namespace {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using ConstMapMat = Eigen::Map<const RowMat>;
using MapMat = Eigen::Map<RowMat>;

constexpr double kNormFloor = 1e-12;

Tensor scalar(double v) { return Tensor(Shape{1, 1, 1, 1}, v); }

Var zero_scalar() { return Var::constant(scalar(0.0)); }

// Log-sum-exp of one pixel's logits.
double log_sum_exp(const double* z, int c) {
  double mx = -std::numeric_limits<double>::infinity();
  for (int k = 0; k < c; ++k) mx = std::max(mx, z[k]);
  if (!std::isfinite(mx)) return mx;
  double s = 0.0;
  for (int k = 0; k < c; ++k) s += std::exp(z[k] - mx);
  return mx + std::log(s);
}

// Rows scaled to unit length; `norms` receives the clamped lengths.
RowMat normalize_rows(const Tensor& t, int rows, int dim, Eigen::VectorXd& norms) {
  RowMat m = ConstMapMat(t.data(), rows, dim);
  norms.resize(rows);
  for (int i = 0; i < rows; ++i) {
    norms[i] = std::max(m.row(i).norm(), kNormFloor);
    m.row(i) /= norms[i];
  }
  return m;
}

}  // namespace

void LossWeights::validate() const {
  if (!(sup > 0.0)) throw Error("loss weights: w_sup must be positive");
  if (cont < 0.0 || cross < 0.0 || ent < 0.0) throw Error("loss weights must be nonnegative");
}

Var supervised_ce(const PredictionMap& pred, const LabelMap& target, int ignore_index,
                  LossDiagnostics* diagnostics) {
  const Tensor& z = pred.logits.value();
  if (z.n() != target.n || z.h() != target.h || z.w() != target.w) {
    throw Error("supervised_ce: prediction " + z.shape().str() + " does not match mask " +
                std::to_string(target.n) + "x" + std::to_string(target.h) + "x" +
                std::to_string(target.w));
  }
  const int c = z.c();
  std::size_t counted = 0;
  double total = 0.0;
  for (std::size_t p = 0; p < target.size(); ++p) {
    const int label = target.labels[p];
    if (label == ignore_index) continue;
    if (label < 0 || label >= c) {
      throw Error("supervised_ce: label " + std::to_string(label) + " outside [0, " +
                  std::to_string(c) + ")");
    }
    const double* zi = z.data() + p * c;
    total += log_sum_exp(zi, c) - zi[label];
    ++counted;
  }
  if (counted == 0) {
    if (diagnostics) ++diagnostics->ce_all_ignored;
    return zero_scalar();
  }
  const double value = total / static_cast<double>(counted);
  return make_result(scalar(value), {pred.logits},
                     [target, ignore_index, counted, c](Node& self) {
                       Node& zn = *self.inputs[0];
                       Tensor& dz = zn.grad_buffer();
                       const double g = self.grad[0] / static_cast<double>(counted);
                       for (std::size_t p = 0; p < target.size(); ++p) {
                         const int label = target.labels[p];
                         if (label == ignore_index) continue;
                         const double* zi = zn.value.data() + p * c;
                         const double lse = log_sum_exp(zi, c);
                         double* di = dz.data() + p * c;
                         for (int k = 0; k < c; ++k) {
                           di[k] += g * (std::exp(zi[k] - lse) - (k == label ? 1.0 : 0.0));
                         }
                       }
                     });
}

std::vector<ops::Point> overlap_grid(const Rect& rect, int stride, int grid_h, int grid_w) {
  std::vector<ops::Point> pts;
  pts.reserve(static_cast<std::size_t>(grid_h) * grid_w);
  const double s = stride;
  for (int i = 0; i < grid_h; ++i) {
    const double y = (rect.y0 + (i + 0.5) * rect.height() / grid_h) / s - 0.5;
    for (int j = 0; j < grid_w; ++j) {
      const double x = (rect.x0 + (j + 0.5) * rect.width() / grid_w) / s - 0.5;
      pts.push_back({y, x});
    }
  }
  return pts;
}

AlignedPair align_overlap(const Var& map1, const Var& map2, int b, const Rect& rect1,
                          const Rect& rect2, int stride) {
  if (stride < 1) throw Error("align_overlap: stride must be positive");
  AlignedPair out;
  const double extent_h = rect1.height() / stride;
  const double extent_w = rect1.width() / stride;
  if (extent_h < 1.0 || extent_w < 1.0 || rect2.empty()) {
    out.skipped = true;
    return out;
  }
  out.grid_h = static_cast<int>(std::lround(extent_h));
  out.grid_w = static_cast<int>(std::lround(extent_w));
  out.points1 = overlap_grid(rect1, stride, out.grid_h, out.grid_w);
  out.points2 = overlap_grid(rect2, stride, out.grid_h, out.grid_w);
  out.first = ops::sample_bilinear(map1, b, out.points1);
  out.second = ops::sample_bilinear(map2, b, out.points2);
  return out;
}

void ContrastiveContext::validate() const {
  if (!anchor.defined() || !target.defined()) throw Error("contrastive: missing projections");
  const Shape a = anchor.shape();
  const Shape t = target.shape();
  if (!(a == t)) throw Error("contrastive: anchor " + a.str() + " vs target " + t.str());
  const std::size_t n = a.pixels();
  if (anchor_conf.size() != n || target_conf.size() != n || anchor_label.size() != n ||
      target_label.size() != n) {
    throw Error("contrastive: confidences and labels must cover all " + std::to_string(n) +
                " pixels");
  }
  if (!negatives.empty() && (negatives.c() != a.c ||
                             negatives.shape().pixels() != negative_labels.size())) {
    throw Error("contrastive: negatives " + negatives.shape().str() + " inconsistent");
  }
  if (!(threshold > 0.0 && threshold < 1.0)) throw Error("contrastive: threshold outside (0,1)");
  if (!(temperature > 0.0)) throw Error("contrastive: temperature must be positive");
}

Var directional_contrastive_pair(const ContrastiveContext& ctx) {
  ctx.validate();
  const int n = static_cast<int>(ctx.anchor.shape().pixels());
  const int dim = ctx.anchor.shape().c;
  const int q = ctx.negatives.empty() ? 0 : static_cast<int>(ctx.negatives.shape().pixels());
  if (n == 0) return zero_scalar();

  std::vector<int> gated;
  for (int i = 0; i < n; ++i) {
    if (ctx.anchor_conf[i] > ctx.threshold && ctx.anchor_conf[i] < ctx.target_conf[i]) {
      gated.push_back(i);
    }
  }
  if (gated.empty()) return zero_scalar();
  const double divisor = ctx.options.divisor == ContrastiveDivisor::kGatedPixels
                             ? static_cast<double>(gated.size())
                             : static_cast<double>(n);
  const double inv_tau = 1.0 / ctx.temperature;

  Eigen::VectorXd anchor_norm, target_norm, bank_norm;
  const RowMat a_hat = normalize_rows(ctx.anchor.value(), n, dim, anchor_norm);
  const RowMat t_hat = normalize_rows(ctx.target.value(), n, dim, target_norm);
  const RowMat b_hat = q > 0 ? normalize_rows(ctx.negatives, q, dim, bank_norm) : RowMat(0, dim);

  const int g = static_cast<int>(gated.size());
  RowMat a_gated(g, dim);
  for (int r = 0; r < g; ++r) a_gated.row(r) = a_hat.row(gated[r]);
  const RowMat cos_t = a_gated * t_hat.transpose();                       // g x n
  const RowMat cos_b = q > 0 ? RowMat(a_gated * b_hat.transpose()) : RowMat(g, 0);  // g x q

  // Softmax weights minus the positive indicator, zero for excluded columns.
  RowMat w_t = RowMat::Zero(g, n);
  RowMat w_b = RowMat::Zero(g, q);
  double total = 0.0;
  std::vector<double> logits;
  for (int r = 0; r < g; ++r) {
    const int i = gated[r];
    const int label = ctx.anchor_label[i];
    const double pos = cos_t(r, i) * inv_tau;
    double mx = pos;
    for (int j = 0; j < n; ++j) {
      if (j != i && ctx.target_label[j] != label) mx = std::max(mx, cos_t(r, j) * inv_tau);
    }
    for (int k = 0; k < q; ++k) {
      if (ctx.negative_labels[k] != label) mx = std::max(mx, cos_b(r, k) * inv_tau);
    }
    double sum = 0.0;
    for (int j = 0; j < n; ++j) {
      if (j == i || ctx.target_label[j] != label) {
        w_t(r, j) = std::exp(cos_t(r, j) * inv_tau - mx);
        sum += w_t(r, j);
      }
    }
    for (int k = 0; k < q; ++k) {
      if (ctx.negative_labels[k] != label) {
        w_b(r, k) = std::exp(cos_b(r, k) * inv_tau - mx);
        sum += w_b(r, k);
      }
    }
    total += mx + std::log(sum) - pos;
    w_t.row(r) /= sum;
    w_b.row(r) /= sum;
    w_t(r, i) -= 1.0;
  }

  const bool flow_to_target = !ctx.options.detach_target;
  std::vector<Var> inputs{ctx.anchor};
  if (flow_to_target) inputs.push_back(ctx.target);
  return make_result(
      scalar(total / divisor), std::move(inputs),
      [gated = std::move(gated), a_gated, t_hat, b_hat, cos_t, cos_b, w_t, w_b, anchor_norm,
       target_norm, inv_tau, divisor, dim, flow_to_target](Node& self) {
        const double scale = self.grad[0] * inv_tau / divisor;
        const int g = static_cast<int>(gated.size());
        Node& an = *self.inputs[0];
        if (an.requires_grad) {
          // d cos(u, v) / du = (v_hat - cos * u_hat) / |u|
          RowMat pull = w_t * t_hat;
          if (b_hat.rows() > 0) pull += w_b * b_hat;
          const Eigen::VectorXd self_term =
              (w_t.cwiseProduct(cos_t)).rowwise().sum() +
              (b_hat.rows() > 0 ? Eigen::VectorXd((w_b.cwiseProduct(cos_b)).rowwise().sum())
                                : Eigen::VectorXd::Zero(g));
          MapMat da(an.grad_buffer().data(), an.value.shape().pixels(), dim);
          for (int r = 0; r < g; ++r) {
            const int i = gated[r];
            da.row(i) += scale / anchor_norm[i] * (pull.row(r) - self_term[r] * a_gated.row(r));
          }
        }
        if (flow_to_target && self.inputs.size() > 1 && self.inputs[1]->requires_grad) {
          Node& tn = *self.inputs[1];
          const RowMat push = w_t.transpose() * a_gated;  // n x dim
          const Eigen::VectorXd self_term = (w_t.cwiseProduct(cos_t)).colwise().sum().transpose();
          MapMat dt(tn.grad_buffer().data(), tn.value.shape().pixels(), dim);
          for (Eigen::Index j = 0; j < dt.rows(); ++j) {
            dt.row(j) += scale / target_norm[j] * (push.row(j) - self_term[j] * t_hat.row(j));
          }
        }
      });
}

Var directional_contrastive(const ContrastiveContext& forward, const ContrastiveContext& backward) {
  const std::vector<Var> parts{directional_contrastive_pair(forward),
                               directional_contrastive_pair(backward)};
  const std::vector<double> ones{1.0, 1.0};
  return ops::weighted_sum(parts, ones);
}

Var cross_consistency(const PredictionMap& main, std::span<const PredictionMap> aux,
                      bool detach_main) {
  if (aux.empty()) throw Error("cross_consistency: no auxiliary predictions");
  const Tensor& pm = main.probs.value();
  for (const PredictionMap& a : aux) {
    if (!(a.probs.shape() == pm.shape())) {
      throw Error("cross_consistency: auxiliary prediction " + a.probs.shape().str() +
                  " does not match main " + pm.shape().str());
    }
  }
  const double denom = static_cast<double>(aux.size()) * static_cast<double>(pm.size());
  double total = 0.0;
  for (const PredictionMap& a : aux) {
    const Tensor& pa = a.probs.value();
    for (std::size_t i = 0; i < pm.size(); ++i) {
      const double d = pm[i] - pa[i];
      total += d * d;
    }
  }
  std::vector<Var> inputs;
  for (const PredictionMap& a : aux) inputs.push_back(a.probs);
  if (!detach_main) inputs.push_back(main.probs);
  const Tensor main_value = pm;
  return make_result(scalar(total / denom), std::move(inputs),
                     [main_value, denom, detach_main](Node& self) {
                       const double g = 2.0 * self.grad[0] / denom;
                       const std::size_t heads =
                           detach_main ? self.inputs.size() : self.inputs.size() - 1;
                       Tensor* dmain =
                           !detach_main && self.inputs.back()->requires_grad
                               ? &self.inputs.back()->grad_buffer()
                               : nullptr;
                       for (std::size_t h = 0; h < heads; ++h) {
                         Node& an = *self.inputs[h];
                         Tensor* da = an.requires_grad ? &an.grad_buffer() : nullptr;
                         for (std::size_t i = 0; i < main_value.size(); ++i) {
                           const double d = an.value[i] - main_value[i];
                           if (da) (*da)[i] += g * d;
                           if (dmain) (*dmain)[i] -= g * d;
                         }
                       }
                     });
}

Var entropy_loss(const PredictionMap& pred) {
  const Tensor& z = pred.logits.value();
  const int c = z.c();
  const std::size_t pixels = z.shape().pixels();
  if (pixels == 0) throw Error("entropy_loss: empty prediction");
  // Per-pixel probabilities, log-probabilities and entropy.
  Tensor p(z.shape());
  Tensor logp(z.shape());
  std::vector<double> h(pixels, 0.0);
  double total = 0.0;
  for (std::size_t i = 0; i < pixels; ++i) {
    const double* zi = z.data() + i * c;
    const double lse = log_sum_exp(zi, c);
    for (int k = 0; k < c; ++k) {
      const double lp = zi[k] - lse;
      const double pk = std::exp(lp);
      p[i * c + k] = pk;
      logp[i * c + k] = lp;
      if (pk > 0.0) h[i] -= pk * lp;
    }
    total += h[i];
  }
  return make_result(scalar(total / static_cast<double>(pixels)), {pred.logits},
                     [p, logp, h, c, pixels](Node& self) {
                       Tensor& dz = self.inputs[0]->grad_buffer();
                       const double g = self.grad[0] / static_cast<double>(pixels);
                       for (std::size_t i = 0; i < pixels; ++i) {
                         for (int k = 0; k < c; ++k) {
                           const double pk = p[i * c + k];
                           if (pk > 0.0) dz[i * c + k] -= g * pk * (logp[i * c + k] + h[i]);
                         }
                       }
                     });
}

TotalLoss total_loss(const LossParts& parts, const LossWeights& weights) {
  TotalLoss out;
  auto value = [](const Var& v) { return v.defined() ? v.item() : 0.0; };
  out.breakdown.sup = value(parts.sup);
  out.breakdown.cont = value(parts.cont);
  out.breakdown.cross = value(parts.cross);
  out.breakdown.ent = value(parts.ent);
  std::vector<Var> terms;
  std::vector<double> w;
  const std::pair<const Var*, double> all[] = {{&parts.sup, weights.sup},
                                               {&parts.cont, weights.cont},
                                               {&parts.cross, weights.cross},
                                               {&parts.ent, weights.ent}};
  for (const auto& [part, weight] : all) {
    if (part->defined() && weight != 0.0) {
      terms.push_back(*part);
      w.push_back(weight);
    }
  }
  out.total = ops::weighted_sum(terms, w);
  out.breakdown.total = out.total.item();
  return out;
}

}  // namespace crcfp
