#include "crcfp/ops.hpp"

#include <Eigen/Core>
#include <algorithm>
#include <array>
#include <cmath>

namespace crcfp::ops {
namespace {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapMat = Eigen::Map<RowMat>;
using ConstMapMat = Eigen::Map<const RowMat>;
using RowVec = Eigen::Matrix<double, 1, Eigen::Dynamic>;

ConstMapMat as_matrix(const Tensor& t, Eigen::Index rows, Eigen::Index cols) {
  return ConstMapMat(t.data(), rows, cols);
}
MapMat as_matrix(Tensor& t, Eigen::Index rows, Eigen::Index cols) {
  return MapMat(t.data(), rows, cols);
}

void require_same_shape(const Tensor& a, const Tensor& b, const char* what) {
  if (!(a.shape() == b.shape())) {
    throw Error(std::string(what) + ": shape mismatch " + a.shape().str() +
                " vs " + b.shape().str());
  }
}

// Interpolation taps along one axis.
struct Taps {
  std::vector<int> lo;
  std::vector<int> hi;
  std::vector<double> frac;
};

Taps resize_taps(int in, int out) {
  Taps t;
  t.lo.resize(out);
  t.hi.resize(out);
  t.frac.resize(out);
  const double ratio = static_cast<double>(in) / out;
  for (int i = 0; i < out; ++i) {
    double src = (i + 0.5) * ratio - 0.5;
    src = std::clamp(src, 0.0, static_cast<double>(in - 1));
    const int lo = static_cast<int>(std::floor(src));
    t.lo[i] = lo;
    t.hi[i] = std::min(lo + 1, in - 1);
    t.frac[i] = src - lo;
  }
  return t;
}

struct Corner {
  std::size_t offset;
  double weight;
};

// Four bilinear taps of a point in batch item `b`, as element offsets of
// channel 0.
std::array<Corner, 4> point_taps(const Tensor& x, int b, Point p) {
  const double y = std::clamp(p.y, 0.0, static_cast<double>(x.h() - 1));
  const double xx = std::clamp(p.x, 0.0, static_cast<double>(x.w() - 1));
  const int y0 = static_cast<int>(std::floor(y));
  const int x0 = static_cast<int>(std::floor(xx));
  const int y1 = std::min(y0 + 1, x.h() - 1);
  const int x1 = std::min(x0 + 1, x.w() - 1);
  const double fy = y - y0;
  const double fx = xx - x0;
  return {{{x.index(b, y0, x0, 0), (1 - fy) * (1 - fx)},
           {x.index(b, y0, x1, 0), (1 - fy) * fx},
           {x.index(b, y1, x0, 0), fy * (1 - fx)},
           {x.index(b, y1, x1, 0), fy * fx}}};
}

}  // namespace

Var conv2d(const Var& x, const Var& weight, const Var& bias, int stride, int pad) {
  const Shape xs = x.shape();
  const Shape ws = weight.shape();
  const int kh = ws.n, kw = ws.h, cin = ws.w, cout = ws.c;
  if (cin != xs.c) {
    throw Error("conv2d: input has " + std::to_string(xs.c) +
                " channels, weight expects " + std::to_string(cin));
  }
  if (bias.value().size() != static_cast<std::size_t>(cout)) {
    throw Error("conv2d: bias size mismatch");
  }
  if (kh == 1 && kw == 1 && stride == 1 && pad == 0) {
    return pointwise_linear(x, weight, bias);
  }
  const int oh = (xs.h + 2 * pad - kh) / stride + 1;
  const int ow = (xs.w + 2 * pad - kw) / stride + 1;
  if (oh <= 0 || ow <= 0) throw Error("conv2d: input too small " + xs.str());
  const Eigen::Index rows = static_cast<Eigen::Index>(xs.n) * oh * ow;
  const Eigen::Index k = static_cast<Eigen::Index>(kh) * kw * cin;

  auto cols = std::make_shared<Tensor>(Shape{1, 1, static_cast<int>(rows), static_cast<int>(k)});
  {
    const Tensor& xv = x.value();
    double* dst = cols->data();
    for (int b = 0; b < xs.n; ++b) {
      for (int oy = 0; oy < oh; ++oy) {
        for (int ox = 0; ox < ow; ++ox) {
          for (int ky = 0; ky < kh; ++ky) {
            const int iy = oy * stride - pad + ky;
            for (int kx = 0; kx < kw; ++kx) {
              const int ix = ox * stride - pad + kx;
              if (iy >= 0 && iy < xs.h && ix >= 0 && ix < xs.w) {
                std::copy_n(xv.pixel(b, iy, ix), cin, dst);
              }
              dst += cin;
            }
          }
        }
      }
    }
  }

  Tensor out(Shape{xs.n, oh, ow, cout});
  auto out_m = as_matrix(out, rows, cout);
  const auto w_m = as_matrix(weight.value(), k, cout);
  const auto b_v = ConstMapMat(bias.value().data(), 1, cout);
  const auto cols_m = as_matrix(*cols, rows, k);
  out_m.noalias() = cols_m * w_m;
  out_m.rowwise() += RowVec(b_v);

  return make_result(
      std::move(out), {x, weight, bias},
      [cols, xs, kh, kw, cin, cout, oh, ow, stride, pad, rows, k](Node& self) {
        const auto dy = as_matrix(self.grad, rows, cout);
        const auto cols_m = as_matrix(*cols, rows, k);
        Node& xn = *self.inputs[0];
        Node& wn = *self.inputs[1];
        Node& bn = *self.inputs[2];
        if (wn.requires_grad) {
          auto dw = as_matrix(wn.grad_buffer(), k, cout);
          dw.noalias() += cols_m.transpose() * dy;
        }
        if (bn.requires_grad) {
          auto db = MapMat(bn.grad_buffer().data(), 1, cout);
          db += dy.colwise().sum();
        }
        if (xn.requires_grad) {
          RowMat dcols = dy * as_matrix(wn.value, k, cout).transpose();
          Tensor& dx = xn.grad_buffer();
          const double* src = dcols.data();
          for (int b = 0; b < xs.n; ++b) {
            for (int oy = 0; oy < oh; ++oy) {
              for (int ox = 0; ox < ow; ++ox) {
                for (int ky = 0; ky < kh; ++ky) {
                  const int iy = oy * stride - pad + ky;
                  for (int kx = 0; kx < kw; ++kx) {
                    const int ix = ox * stride - pad + kx;
                    if (iy >= 0 && iy < xs.h && ix >= 0 && ix < xs.w) {
                      double* d = dx.pixel(b, iy, ix);
                      for (int c = 0; c < cin; ++c) d[c] += src[c];
                    }
                    src += cin;
                  }
                }
              }
            }
          }
        }
      });
}

Var pointwise_linear(const Var& x, const Var& weight, const Var& bias) {
  const Shape xs = x.shape();
  const Shape ws = weight.shape();
  if (ws.n != 1 || ws.h != 1 || ws.w != xs.c) {
    throw Error("pointwise_linear: weight " + ws.str() + " incompatible with input " +
                xs.str());
  }
  const int cout = ws.c;
  if (bias.value().size() != static_cast<std::size_t>(cout)) {
    throw Error("pointwise_linear: bias size mismatch");
  }
  const Eigen::Index rows = static_cast<Eigen::Index>(xs.pixels());
  Tensor out(Shape{xs.n, xs.h, xs.w, cout});
  auto out_m = as_matrix(out, rows, cout);
  out_m.noalias() = as_matrix(x.value(), rows, xs.c) * as_matrix(weight.value(), xs.c, cout);
  out_m.rowwise() += RowVec(ConstMapMat(bias.value().data(), 1, cout));

  const int cin = xs.c;
  return make_result(std::move(out), {x, weight, bias}, [rows, cin, cout](Node& self) {
    const auto dy = as_matrix(self.grad, rows, cout);
    Node& xn = *self.inputs[0];
    Node& wn = *self.inputs[1];
    Node& bn = *self.inputs[2];
    if (wn.requires_grad) {
      auto dw = as_matrix(wn.grad_buffer(), cin, cout);
      dw.noalias() += as_matrix(xn.value, rows, cin).transpose() * dy;
    }
    if (bn.requires_grad) {
      MapMat(bn.grad_buffer().data(), 1, cout) += dy.colwise().sum();
    }
    if (xn.requires_grad) {
      auto dx = as_matrix(xn.grad_buffer(), rows, cin);
      dx.noalias() += dy * as_matrix(wn.value, cin, cout).transpose();
    }
  });
}

Var relu(const Var& x) {
  Tensor out = x.value();
  for (double& v : out.values()) v = v > 0.0 ? v : 0.0;
  return make_result(std::move(out), {x}, [](Node& self) {
    Node& xn = *self.inputs[0];
    Tensor& dx = xn.grad_buffer();
    for (std::size_t i = 0; i < dx.size(); ++i) {
      if (xn.value[i] > 0.0) dx[i] += self.grad[i];
    }
  });
}

Var add(const Var& a, const Var& b) {
  require_same_shape(a.value(), b.value(), "add");
  Tensor out = a.value();
  out += b.value();
  return make_result(std::move(out), {a, b}, [](Node& self) {
    for (auto& in : self.inputs) {
      if (in->requires_grad) in->grad_buffer() += self.grad;
    }
  });
}

Var scale(const Var& x, double s) {
  Tensor out = x.value();
  out *= s;
  return make_result(std::move(out), {x}, [s](Node& self) {
    Tensor& dx = self.inputs[0]->grad_buffer();
    for (std::size_t i = 0; i < dx.size(); ++i) dx[i] += s * self.grad[i];
  });
}

Var mul_const(const Var& x, const Tensor& mask) {
  const Shape xs = x.shape();
  const Shape ms = mask.shape();
  const bool broadcast = ms.c == 1 && xs.c != 1;
  if (ms.n != xs.n || ms.h != xs.h || ms.w != xs.w || (!broadcast && ms.c != xs.c)) {
    throw Error("mul_const: mask " + ms.str() + " incompatible with " + xs.str());
  }
  const int channels = xs.c;
  auto factor = [&mask, broadcast, channels](std::size_t i) {
    return broadcast ? mask[i / channels] : mask[i];
  };
  Tensor out = x.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] *= factor(i);
  return make_result(std::move(out), {x}, [mask, broadcast, channels](Node& self) {
    Tensor& dx = self.inputs[0]->grad_buffer();
    for (std::size_t i = 0; i < dx.size(); ++i) {
      dx[i] += self.grad[i] * (broadcast ? mask[i / channels] : mask[i]);
    }
  });
}

Var softmax_channels(const Var& logits) {
  const Tensor& z = logits.value();
  const int c = z.c();
  Tensor out(z.shape());
  const std::size_t pixels = z.shape().pixels();
  for (std::size_t p = 0; p < pixels; ++p) {
    const double* zi = z.data() + p * c;
    double* oi = out.data() + p * c;
    const double mx = *std::max_element(zi, zi + c);
    double sum = 0.0;
    for (int k = 0; k < c; ++k) {
      oi[k] = std::exp(zi[k] - mx);
      sum += oi[k];
    }
    for (int k = 0; k < c; ++k) oi[k] /= sum;
  }
  return make_result(out, {logits}, [c, pixels, out](Node& self) {
    Tensor& dz = self.inputs[0]->grad_buffer();
    for (std::size_t p = 0; p < pixels; ++p) {
      const double* pi = out.data() + p * c;
      const double* gi = self.grad.data() + p * c;
      double dot = 0.0;
      for (int k = 0; k < c; ++k) dot += pi[k] * gi[k];
      double* di = dz.data() + p * c;
      for (int k = 0; k < c; ++k) di[k] += pi[k] * (gi[k] - dot);
    }
  });
}

Tensor resize_bilinear(const Tensor& x, int out_h, int out_w) {
  if (out_h <= 0 || out_w <= 0) throw Error("resize_bilinear: empty output size");
  const Taps ty = resize_taps(x.h(), out_h);
  const Taps tx = resize_taps(x.w(), out_w);
  const int c = x.c();
  Tensor out(Shape{x.n(), out_h, out_w, c});
  for (int b = 0; b < x.n(); ++b) {
    for (int i = 0; i < out_h; ++i) {
      const double fy = ty.frac[i];
      for (int j = 0; j < out_w; ++j) {
        const double fx = tx.frac[j];
        const double* p00 = x.pixel(b, ty.lo[i], tx.lo[j]);
        const double* p01 = x.pixel(b, ty.lo[i], tx.hi[j]);
        const double* p10 = x.pixel(b, ty.hi[i], tx.lo[j]);
        const double* p11 = x.pixel(b, ty.hi[i], tx.hi[j]);
        double* o = out.pixel(b, i, j);
        for (int k = 0; k < c; ++k) {
          o[k] = (1 - fy) * ((1 - fx) * p00[k] + fx * p01[k]) +
                 fy * ((1 - fx) * p10[k] + fx * p11[k]);
        }
      }
    }
  }
  return out;
}

Var resize_bilinear(const Var& x, int out_h, int out_w) {
  Tensor out = resize_bilinear(x.value(), out_h, out_w);
  const Shape xs = x.shape();
  return make_result(std::move(out), {x}, [xs, out_h, out_w](Node& self) {
    const Taps ty = resize_taps(xs.h, out_h);
    const Taps tx = resize_taps(xs.w, out_w);
    Tensor& dx = self.inputs[0]->grad_buffer();
    const int c = xs.c;
    for (int b = 0; b < xs.n; ++b) {
      for (int i = 0; i < out_h; ++i) {
        const double fy = ty.frac[i];
        for (int j = 0; j < out_w; ++j) {
          const double fx = tx.frac[j];
          const double* g = self.grad.pixel(b, i, j);
          double* d00 = dx.pixel(b, ty.lo[i], tx.lo[j]);
          double* d01 = dx.pixel(b, ty.lo[i], tx.hi[j]);
          double* d10 = dx.pixel(b, ty.hi[i], tx.lo[j]);
          double* d11 = dx.pixel(b, ty.hi[i], tx.hi[j]);
          for (int k = 0; k < c; ++k) {
            d00[k] += (1 - fy) * (1 - fx) * g[k];
            d01[k] += (1 - fy) * fx * g[k];
            d10[k] += fy * (1 - fx) * g[k];
            d11[k] += fy * fx * g[k];
          }
        }
      }
    }
  });
}

Tensor sample_bilinear(const Tensor& x, int b, std::span<const Point> points) {
  if (b < 0 || b >= x.n()) throw Error("sample_bilinear: batch index out of range");
  const int c = x.c();
  Tensor out(Shape{1, 1, static_cast<int>(points.size()), c});
  for (std::size_t i = 0; i < points.size(); ++i) {
    double* o = out.data() + i * c;
    for (const Corner& t : point_taps(x, b, points[i])) {
      const double* src = x.data() + t.offset;
      for (int k = 0; k < c; ++k) o[k] += t.weight * src[k];
    }
  }
  return out;
}

Var sample_bilinear(const Var& x, int b, std::span<const Point> points) {
  Tensor out = sample_bilinear(x.value(), b, points);
  std::vector<Point> pts(points.begin(), points.end());
  return make_result(std::move(out), {x}, [b, pts = std::move(pts)](Node& self) {
    Node& xn = *self.inputs[0];
    Tensor& dx = xn.grad_buffer();
    const int c = xn.value.c();
    for (std::size_t i = 0; i < pts.size(); ++i) {
      const double* g = self.grad.data() + i * c;
      for (const Corner& t : point_taps(xn.value, b, pts[i])) {
        double* d = dx.data() + t.offset;
        for (int k = 0; k < c; ++k) d[k] += t.weight * g[k];
      }
    }
  });
}

Var weighted_sum(std::span<const Var> scalars, std::span<const double> weights) {
  if (scalars.size() != weights.size()) throw Error("weighted_sum: size mismatch");
  double total = 0.0;
  std::vector<Var> inputs;
  std::vector<double> used;
  for (std::size_t i = 0; i < scalars.size(); ++i) {
    if (!scalars[i].defined()) continue;
    total += weights[i] * scalars[i].item();
    inputs.push_back(scalars[i]);
    used.push_back(weights[i]);
  }
  return make_result(Tensor(Shape{1, 1, 1, 1}, total), inputs,
                     [used = std::move(used)](Node& self) {
                       for (std::size_t i = 0; i < self.inputs.size(); ++i) {
                         if (self.inputs[i]->requires_grad) {
                           self.inputs[i]->grad_buffer()[0] += used[i] * self.grad[0];
                         }
                       }
                     });
}

Var mean(const Var& x) {
  const std::size_t n = x.value().size();
  if (n == 0) throw Error("mean of empty tensor");
  double s = 0.0;
  for (double v : x.value().values()) s += v;
  return make_result(Tensor(Shape{1, 1, 1, 1}, s / n), {x}, [n](Node& self) {
    Tensor& dx = self.inputs[0]->grad_buffer();
    const double g = self.grad[0] / static_cast<double>(n);
    for (double& v : dx.values()) v += g;
  });
}

}  // namespace crcfp::ops
