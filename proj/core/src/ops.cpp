#include "ildm/ops.hpp"

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <memory>

#include "ildm/error.hpp"

namespace ildm::ops {

namespace {

using MatF = Eigen::Matrix<float, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapF = Eigen::Map<MatF>;
using CMapF = Eigen::Map<const MatF>;
using ag::Node;

Tensor* grad_of(Node& self, std::size_t i) {
  auto& p = self.parents[i];
  return (p && p->requires_grad) ? &p->ensure_grad() : nullptr;
}

void require_rank(const Var& v, int rank, const char* what) {
  if (v.value().rank() != rank) {
    throw ContractError(std::string(what) + " expects rank " + std::to_string(rank) + ", got " +
                            shape_string(v.shape()),
                        what);
  }
}

// dfdx(x, y) gets the input and the output.
template <class F, class G>
Var unary(const Var& a, F&& f, G dfdx) {
  Tensor out(a.shape());
  const Tensor& x = a.value();
  for (std::size_t i = 0; i < x.numel(); ++i) out[i] = f(x[i]);
  return ag::make_result(std::move(out), {a}, [dfdx = std::move(dfdx)](Node& self) {
    Tensor* ga = grad_of(self, 0);
    if (!ga) return;
    const Tensor& x = self.parents[0]->value;
    for (std::size_t i = 0; i < x.numel(); ++i) (*ga)[i] += self.grad[i] * dfdx(x[i], self.value[i]);
  });
}

void im2col(const float* x, int channels, int height, int width, int k, int stride, int pad, int out_h, int out_w,
            float* cols) {
  const int plane = out_h * out_w;
  for (int c = 0; c < channels; ++c) {
    const float* xc = x + static_cast<std::size_t>(c) * height * width;
    for (int ky = 0; ky < k; ++ky) {
      for (int kx = 0; kx < k; ++kx) {
        float* row = cols + static_cast<std::size_t>((c * k + ky) * k + kx) * plane;
        for (int oy = 0; oy < out_h; ++oy) {
          const int iy = oy * stride - pad + ky;
          float* dst = row + oy * out_w;
          if (iy < 0 || iy >= height) {
            std::fill(dst, dst + out_w, 0.0f);
            continue;
          }
          const float* src = xc + static_cast<std::size_t>(iy) * width;
          if (stride == 1) {
            // Valid columns form one contiguous run.
            const int lo = std::clamp(pad - kx, 0, out_w), hi = std::clamp(width + pad - kx, lo, out_w);
            std::fill(dst, dst + lo, 0.0f);
            std::copy(src + lo - pad + kx, src + hi - pad + kx, dst + lo);
            std::fill(dst + hi, dst + out_w, 0.0f);
            continue;
          }
          for (int ox = 0; ox < out_w; ++ox) {
            const int ix = ox * stride - pad + kx;
            dst[ox] = (ix >= 0 && ix < width) ? src[ix] : 0.0f;
          }
        }
      }
    }
  }
}

void col2im(const float* cols, int channels, int height, int width, int k, int stride, int pad, int out_h, int out_w,
            float* x) {
  const int plane = out_h * out_w;
  for (int c = 0; c < channels; ++c) {
    float* xc = x + static_cast<std::size_t>(c) * height * width;
    for (int ky = 0; ky < k; ++ky) {
      for (int kx = 0; kx < k; ++kx) {
        const float* row = cols + static_cast<std::size_t>((c * k + ky) * k + kx) * plane;
        for (int oy = 0; oy < out_h; ++oy) {
          const int iy = oy * stride - pad + ky;
          if (iy < 0 || iy >= height) continue;
          const float* src = row + oy * out_w;
          float* dst = xc + static_cast<std::size_t>(iy) * width;
          if (stride == 1) {
            const int lo = std::clamp(pad - kx, 0, out_w), hi = std::clamp(width + pad - kx, lo, out_w);
            const int shift = kx - pad;
            for (int ox = lo; ox < hi; ++ox) dst[ox + shift] += src[ox];
            continue;
          }
          for (int ox = 0; ox < out_w; ++ox) {
            const int ix = ox * stride - pad + kx;
            if (ix >= 0 && ix < width) dst[ix] += src[ox];
          }
        }
      }
    }
  }
}

}  // namespace

Var add(const Var& a, const Var& b) {
  require_same_shape(a.value(), b.value(), "add");
  Tensor out = a.value() + b.value();
  return ag::make_result(std::move(out), {a, b}, [](Node& self) {
    for (std::size_t p = 0; p < 2; ++p) {
      if (Tensor* g = grad_of(self, p)) {
        for (std::size_t i = 0; i < g->numel(); ++i) (*g)[i] += self.grad[i];
      }
    }
  });
}

Var sub(const Var& a, const Var& b) {
  require_same_shape(a.value(), b.value(), "sub");
  Tensor out = a.value() - b.value();
  return ag::make_result(std::move(out), {a, b}, [](Node& self) {
    if (Tensor* g = grad_of(self, 0)) {
      for (std::size_t i = 0; i < g->numel(); ++i) (*g)[i] += self.grad[i];
    }
    if (Tensor* g = grad_of(self, 1)) {
      for (std::size_t i = 0; i < g->numel(); ++i) (*g)[i] -= self.grad[i];
    }
  });
}

Var mul(const Var& a, const Var& b) {
  require_same_shape(a.value(), b.value(), "mul");
  Tensor out(a.shape());
  for (std::size_t i = 0; i < out.numel(); ++i) out[i] = a.value()[i] * b.value()[i];
  return ag::make_result(std::move(out), {a, b}, [](Node& self) {
    const Tensor& av = self.parents[0]->value;
    const Tensor& bv = self.parents[1]->value;
    if (Tensor* g = grad_of(self, 0)) {
      for (std::size_t i = 0; i < g->numel(); ++i) (*g)[i] += self.grad[i] * bv[i];
    }
    if (Tensor* g = grad_of(self, 1)) {
      for (std::size_t i = 0; i < g->numel(); ++i) (*g)[i] += self.grad[i] * av[i];
    }
  });
}

Var scale(const Var& a, float s) {
  return unary(a, [s](float x) { return x * s; }, [s](float, float) { return s; });
}

Var exp(const Var& a) {
  return unary(a, [](float x) { return std::exp(x); }, [](float, float y) { return y; });
}

Var clamp(const Var& a, float lo, float hi) {
  return unary(
      a, [lo, hi](float x) { return std::min(hi, std::max(lo, x)); },
      [lo, hi](float x, float) { return (x >= lo && x <= hi) ? 1.0f : 0.0f; });
}

Var silu(const Var& a) {
  return unary(
      a, [](float x) { return x / (1.0f + std::exp(-x)); },
      [](float x, float) {
        const float s = 1.0f / (1.0f + std::exp(-x));
        return s * (1.0f + x * (1.0f - s));
      });
}

Var sum(const Var& a) {
  double total = 0.0;
  for (float v : a.value().values()) total += v;
  return ag::make_result(Tensor({1}, static_cast<float>(total)), {a}, [](Node& self) {
    if (Tensor* g = grad_of(self, 0)) {
      for (auto& v : g->storage()) v += self.grad[0];
    }
  });
}

Var mean(const Var& a) {
  const float n = static_cast<float>(std::max<std::size_t>(1, a.value().numel()));
  return scale(sum(a), 1.0f / n);
}

Var reshape(const Var& a, Shape shape) {
  Tensor out = a.value().reshaped(std::move(shape));
  return ag::make_result(std::move(out), {a}, [](Node& self) {
    if (Tensor* g = grad_of(self, 0)) {
      for (std::size_t i = 0; i < g->numel(); ++i) (*g)[i] += self.grad[i];
    }
  });
}

Var mse(const Var& pred, const Tensor& target) {
  require_same_shape(pred.value(), target, "mse");
  const Tensor& p = pred.value();
  double total = 0.0;
  for (std::size_t i = 0; i < p.numel(); ++i) {
    const double d = static_cast<double>(p[i]) - target[i];
    total += d * d;
  }
  const double n = static_cast<double>(std::max<std::size_t>(1, p.numel()));
  return ag::make_result(Tensor({1}, static_cast<float>(total / n)), {pred}, [target, n](Node& self) {
    if (Tensor* g = grad_of(self, 0)) {
      const Tensor& p = self.parents[0]->value;
      const float c = static_cast<float>(2.0 / n) * self.grad[0];
      for (std::size_t i = 0; i < p.numel(); ++i) (*g)[i] += c * (p[i] - target[i]);
    }
  });
}

Var weighted_mse(const Var& pred, const Tensor& target, const Tensor& weight) {
  require_same_shape(pred.value(), target, "weighted_mse");
  require_rank(pred, 4, "weighted_mse");
  const int batch = pred.dim(0), channels = pred.dim(1);
  if (weight.shape() != Shape{batch, channels}) throw ContractError("weighted_mse weight must be [B,C]", "weight");
  const std::size_t plane = static_cast<std::size_t>(pred.dim(2)) * pred.dim(3);
  double wsum = 0.0, total = 0.0;
  const Tensor& p = pred.value();
  for (int bc = 0; bc < batch * channels; ++bc) {
    const float wt = weight[static_cast<std::size_t>(bc)];
    if (wt == 0.0f) continue;
    wsum += wt;
    double s = 0.0;
    for (std::size_t j = 0; j < plane; ++j) {
      const double d = static_cast<double>(p[bc * plane + j]) - target[bc * plane + j];
      s += d * d;
    }
    total += wt * s;
  }
  const double denom = std::max(1.0, wsum * static_cast<double>(plane));
  return ag::make_result(Tensor({1}, static_cast<float>(total / denom)), {pred},
                         [target, weight, denom, plane](Node& self) {
                           Tensor* g = grad_of(self, 0);
                           if (!g) return;
                           const Tensor& p = self.parents[0]->value;
                           for (std::size_t bc = 0; bc < weight.numel(); ++bc) {
                             const float c = static_cast<float>(2.0 * weight[bc] / denom) * self.grad[0];
                             if (c == 0.0f) continue;
                             for (std::size_t j = 0; j < plane; ++j) {
                               const std::size_t i = bc * plane + j;
                               (*g)[i] += c * (p[i] - target[i]);
                             }
                           }
                         });
}

Var gaussian_kl(const Var& mean_v, const Var& logvar) {
  require_same_shape(mean_v.value(), logvar.value(), "gaussian_kl");
  const Tensor& m = mean_v.value();
  const Tensor& lv = logvar.value();
  double total = 0.0;
  for (std::size_t i = 0; i < m.numel(); ++i) {
    total += 0.5 * (static_cast<double>(m[i]) * m[i] + std::exp(static_cast<double>(lv[i])) - 1.0 - lv[i]);
  }
  const double n = static_cast<double>(std::max<std::size_t>(1, m.numel()));
  return ag::make_result(Tensor({1}, static_cast<float>(total / n)), {mean_v, logvar}, [n](Node& self) {
    const Tensor& m = self.parents[0]->value;
    const Tensor& lv = self.parents[1]->value;
    const float c = static_cast<float>(1.0 / n) * self.grad[0];
    if (Tensor* g = grad_of(self, 0)) {
      for (std::size_t i = 0; i < m.numel(); ++i) (*g)[i] += c * m[i];
    }
    if (Tensor* g = grad_of(self, 1)) {
      for (std::size_t i = 0; i < lv.numel(); ++i) (*g)[i] += c * 0.5f * (std::exp(lv[i]) - 1.0f);
    }
  });
}

Var conv2d(const Var& x, const Var& w, const Var& b, int stride, int pad) {
  require_rank(x, 4, "conv2d");
  require_rank(w, 4, "conv2d weight");
  const int batch = x.dim(0), cin = x.dim(1), h = x.dim(2), wd = x.dim(3);
  const int cout = w.dim(0), k = w.dim(2);
  if (w.dim(1) != cin || w.dim(3) != k) {
    throw ContractError("conv2d weight " + shape_string(w.shape()) + " incompatible with input " +
                            shape_string(x.shape()),
                        "conv2d");
  }
  if (b.defined() && b.value().numel() != static_cast<std::size_t>(cout)) throw ContractError("conv2d bias size", "conv2d");
  const int oh = (h + 2 * pad - k) / stride + 1;
  const int ow = (wd + 2 * pad - k) / stride + 1;
  const int kk = cin * k * k;
  const int plane = oh * ow;
  const bool direct = (k == 1 && stride == 1 && pad == 0);

  Tensor out({batch, cout, oh, ow});
  std::vector<float> cols(direct ? 0 : static_cast<std::size_t>(kk) * plane);
  const CMapF wm(w.value().data(), cout, kk);
  for (int n = 0; n < batch; ++n) {
    const float* xn = x.value().data() + static_cast<std::size_t>(n) * cin * h * wd;
    const float* src = xn;
    if (!direct) {
      im2col(xn, cin, h, wd, k, stride, pad, oh, ow, cols.data());
      src = cols.data();
    }
    MapF y(out.data() + static_cast<std::size_t>(n) * cout * plane, cout, plane);
    y.noalias() = wm * CMapF(src, kk, plane);
    if (b.defined()) {
      for (int c = 0; c < cout; ++c) y.row(c).array() += b.value()[static_cast<std::size_t>(c)];
    }
  }

  return ag::make_result(std::move(out), {x, w, b}, [=](Node& self) {
    Tensor* gx = grad_of(self, 0);
    Tensor* gw = grad_of(self, 1);
    Tensor* gb = grad_of(self, 2);
    const Tensor& xv = self.parents[0]->value;
    const Tensor& wv = self.parents[1]->value;
    const CMapF wm(wv.data(), cout, kk);
    std::vector<float> cols(direct ? 0 : static_cast<std::size_t>(kk) * plane);
    std::vector<float> dcols(direct ? 0 : static_cast<std::size_t>(kk) * plane);
    for (int n = 0; n < batch; ++n) {
      const CMapF dy(self.grad.data() + static_cast<std::size_t>(n) * cout * plane, cout, plane);
      const float* xn = xv.data() + static_cast<std::size_t>(n) * cin * h * wd;
      if (gw) {
        const float* src = xn;
        if (!direct) {
          im2col(xn, cin, h, wd, k, stride, pad, oh, ow, cols.data());
          src = cols.data();
        }
        MapF(gw->data(), cout, kk).noalias() += dy * CMapF(src, kk, plane).transpose();
      }
      if (gb) {
        for (int c = 0; c < cout; ++c) (*gb)[static_cast<std::size_t>(c)] += dy.row(c).sum();
      }
      if (gx) {
        float* gxn = gx->data() + static_cast<std::size_t>(n) * cin * h * wd;
        if (direct) {
          MapF(gxn, kk, plane).noalias() += wm.transpose() * dy;
        } else {
          MapF(dcols.data(), kk, plane).noalias() = wm.transpose() * dy;
          col2im(dcols.data(), cin, h, wd, k, stride, pad, oh, ow, gxn);
        }
      }
    }
  });
}

Var group_norm(const Var& x, const Var& gamma, const Var& beta, int groups, float eps) {
  require_rank(x, 4, "group_norm");
  const int batch = x.dim(0), channels = x.dim(1);
  if (channels % groups != 0) throw ContractError("group count must divide channels", "group_norm");
  const int cg = channels / groups;
  const std::size_t plane = static_cast<std::size_t>(x.dim(2)) * x.dim(3);
  const std::size_t count = plane * cg;

  auto xhat = std::make_shared<Tensor>(x.shape());
  auto rstd = std::make_shared<std::vector<float>>(static_cast<std::size_t>(batch) * groups);
  Tensor out(x.shape());
  const Tensor& xv = x.value();
  for (int n = 0; n < batch; ++n) {
    for (int g = 0; g < groups; ++g) {
      const std::size_t base = (static_cast<std::size_t>(n) * channels + static_cast<std::size_t>(g) * cg) * plane;
      double s = 0.0, s2 = 0.0;
      for (std::size_t i = 0; i < count; ++i) {
        const double v = xv[base + i];
        s += v;
        s2 += v * v;
      }
      const double mu = s / count;
      const double var = std::max(0.0, s2 / count - mu * mu);
      const float r = static_cast<float>(1.0 / std::sqrt(var + eps));
      (*rstd)[static_cast<std::size_t>(n) * groups + g] = r;
      for (int c = 0; c < cg; ++c) {
        const int ch = g * cg + c;
        const float ga = gamma.value()[static_cast<std::size_t>(ch)];
        const float be = beta.value()[static_cast<std::size_t>(ch)];
        for (std::size_t j = 0; j < plane; ++j) {
          const std::size_t i = base + c * plane + j;
          const float xh = (xv[i] - static_cast<float>(mu)) * r;
          (*xhat)[i] = xh;
          out[i] = xh * ga + be;
        }
      }
    }
  }
  return ag::make_result(std::move(out), {x, gamma, beta}, [=](Node& self) {
    Tensor* gx = grad_of(self, 0);
    Tensor* gg = grad_of(self, 1);
    Tensor* gbeta = grad_of(self, 2);
    const Tensor& gamma_v = self.parents[1]->value;
    const Tensor& dy = self.grad;
    for (int n = 0; n < batch; ++n) {
      for (int g = 0; g < groups; ++g) {
        const std::size_t base = (static_cast<std::size_t>(n) * channels + static_cast<std::size_t>(g) * cg) * plane;
        double sum_dxh = 0.0, sum_dxh_xh = 0.0;
        for (int c = 0; c < cg; ++c) {
          const std::size_t ch = static_cast<std::size_t>(g * cg + c);
          const float ga = gamma_v[ch];
          double dg = 0.0, db = 0.0;
          for (std::size_t j = 0; j < plane; ++j) {
            const std::size_t i = base + c * plane + j;
            const float d = dy[i];
            dg += d * (*xhat)[i];
            db += d;
            const double dxh = d * ga;
            sum_dxh += dxh;
            sum_dxh_xh += dxh * (*xhat)[i];
          }
          if (gg) (*gg)[ch] += static_cast<float>(dg);
          if (gbeta) (*gbeta)[ch] += static_cast<float>(db);
        }
        if (!gx) continue;
        const float r = (*rstd)[static_cast<std::size_t>(n) * groups + g];
        const float mean_dxh = static_cast<float>(sum_dxh / count);
        const float mean_dxh_xh = static_cast<float>(sum_dxh_xh / count);
        for (int c = 0; c < cg; ++c) {
          const float ga = gamma_v[static_cast<std::size_t>(g * cg + c)];
          for (std::size_t j = 0; j < plane; ++j) {
            const std::size_t i = base + c * plane + j;
            (*gx)[i] += r * (dy[i] * ga - mean_dxh - (*xhat)[i] * mean_dxh_xh);
          }
        }
      }
    }
  });
}

Var linear(const Var& x, const Var& w, const Var& b) {
  require_rank(w, 2, "linear weight");
  const int in = w.dim(1), outf = w.dim(0);
  if (x.value().rank() < 1 || x.dim(-1) != in) {
    throw ContractError("linear input " + shape_string(x.shape()) + " incompatible with weight " +
                            shape_string(w.shape()),
                        "linear");
  }
  const int rows = static_cast<int>(x.value().numel() / static_cast<std::size_t>(in));
  Shape oshape = x.shape();
  oshape.back() = outf;
  Tensor out(oshape);
  MapF y(out.data(), rows, outf);
  y.noalias() = CMapF(x.value().data(), rows, in) * CMapF(w.value().data(), outf, in).transpose();
  if (b.defined()) y.rowwise() += Eigen::Map<const Eigen::RowVectorXf>(b.value().data(), outf);
  return ag::make_result(std::move(out), {x, w, b}, [=](Node& self) {
    const CMapF dy(self.grad.data(), rows, outf);
    if (Tensor* gx = grad_of(self, 0)) {
      MapF(gx->data(), rows, in).noalias() += dy * CMapF(self.parents[1]->value.data(), outf, in);
    }
    if (Tensor* gw = grad_of(self, 1)) {
      MapF(gw->data(), outf, in).noalias() += dy.transpose() * CMapF(self.parents[0]->value.data(), rows, in);
    }
    if (Tensor* gb = grad_of(self, 2)) {
      Eigen::Map<Eigen::RowVectorXf>(gb->data(), outf) += dy.colwise().sum();
    }
  });
}

Var add_channel_embedding(const Var& x, const Var& e) {
  require_rank(x, 4, "add_channel_embedding");
  const int batch = x.dim(0), channels = x.dim(1);
  if (e.shape() != Shape{batch, channels}) throw ContractError("channel embedding must be [B,C]", "embedding");
  const std::size_t plane = static_cast<std::size_t>(x.dim(2)) * x.dim(3);
  Tensor out = x.value();
  for (std::size_t bc = 0; bc < static_cast<std::size_t>(batch * channels); ++bc) {
    const float v = e.value()[bc];
    for (std::size_t j = 0; j < plane; ++j) out[bc * plane + j] += v;
  }
  return ag::make_result(std::move(out), {x, e}, [plane](Node& self) {
    if (Tensor* gx = grad_of(self, 0)) {
      for (std::size_t i = 0; i < gx->numel(); ++i) (*gx)[i] += self.grad[i];
    }
    if (Tensor* ge = grad_of(self, 1)) {
      for (std::size_t bc = 0; bc < ge->numel(); ++bc) {
        double s = 0.0;
        for (std::size_t j = 0; j < plane; ++j) s += self.grad[bc * plane + j];
        (*ge)[bc] += static_cast<float>(s);
      }
    }
  });
}

Var upsample_nearest2x(const Var& x) {
  require_rank(x, 4, "upsample_nearest2x");
  const int bc = x.dim(0) * x.dim(1), h = x.dim(2), w = x.dim(3);
  Tensor out({x.dim(0), x.dim(1), 2 * h, 2 * w});
  const Tensor& xv = x.value();
  for (int p = 0; p < bc; ++p) {
    for (int y = 0; y < 2 * h; ++y) {
      for (int xx = 0; xx < 2 * w; ++xx) {
        out[(static_cast<std::size_t>(p) * 2 * h + y) * 2 * w + xx] =
            xv[(static_cast<std::size_t>(p) * h + y / 2) * w + xx / 2];
      }
    }
  }
  return ag::make_result(std::move(out), {x}, [bc, h, w](Node& self) {
    Tensor* gx = grad_of(self, 0);
    if (!gx) return;
    for (int p = 0; p < bc; ++p) {
      for (int y = 0; y < 2 * h; ++y) {
        for (int xx = 0; xx < 2 * w; ++xx) {
          (*gx)[(static_cast<std::size_t>(p) * h + y / 2) * w + xx / 2] +=
              self.grad[(static_cast<std::size_t>(p) * 2 * h + y) * 2 * w + xx];
        }
      }
    }
  });
}

Var concat_channels(const Var& a, const Var& b) {
  require_rank(a, 4, "concat_channels");
  require_rank(b, 4, "concat_channels");
  if (a.dim(0) != b.dim(0) || a.dim(2) != b.dim(2) || a.dim(3) != b.dim(3)) {
    throw ContractError("concat_channels shape mismatch " + shape_string(a.shape()) + " vs " + shape_string(b.shape()),
                        "concat");
  }
  const int batch = a.dim(0), ca = a.dim(1), cb = b.dim(1);
  const std::size_t plane = static_cast<std::size_t>(a.dim(2)) * a.dim(3);
  Tensor out({batch, ca + cb, a.dim(2), a.dim(3)});
  for (int n = 0; n < batch; ++n) {
    std::copy_n(a.value().data() + n * ca * plane, ca * plane, out.data() + n * (ca + cb) * plane);
    std::copy_n(b.value().data() + n * cb * plane, cb * plane, out.data() + (n * (ca + cb) + ca) * plane);
  }
  return ag::make_result(std::move(out), {a, b}, [=](Node& self) {
    Tensor* ga = grad_of(self, 0);
    Tensor* gb = grad_of(self, 1);
    for (int n = 0; n < batch; ++n) {
      const float* src = self.grad.data() + n * (ca + cb) * plane;
      if (ga) {
        float* dst = ga->data() + n * ca * plane;
        for (std::size_t i = 0; i < ca * plane; ++i) dst[i] += src[i];
      }
      if (gb) {
        float* dst = gb->data() + n * cb * plane;
        for (std::size_t i = 0; i < cb * plane; ++i) dst[i] += src[ca * plane + i];
      }
    }
  });
}

Var slice_channels(const Var& x, int begin, int end) {
  require_rank(x, 4, "slice_channels");
  const int batch = x.dim(0), c = x.dim(1);
  if (begin < 0 || end > c || begin >= end) throw ContractError("slice_channels range out of bounds", "slice_channels");
  const int cs = end - begin;
  const std::size_t plane = static_cast<std::size_t>(x.dim(2)) * x.dim(3);
  Tensor out({batch, cs, x.dim(2), x.dim(3)});
  for (int n = 0; n < batch; ++n) {
    std::copy_n(x.value().data() + (n * c + begin) * plane, cs * plane, out.data() + n * cs * plane);
  }
  return ag::make_result(std::move(out), {x}, [=](Node& self) {
    Tensor* gx = grad_of(self, 0);
    if (!gx) return;
    for (int n = 0; n < batch; ++n) {
      const float* src = self.grad.data() + n * cs * plane;
      float* dst = gx->data() + (n * c + begin) * plane;
      for (std::size_t i = 0; i < cs * plane; ++i) dst[i] += src[i];
    }
  });
}

Var to_tokens(const Var& x) {
  require_rank(x, 4, "to_tokens");
  const int batch = x.dim(0), c = x.dim(1), n = x.dim(2) * x.dim(3);
  Tensor out({batch, n, c});
  for (int b = 0; b < batch; ++b) {
    MapF(out.data() + static_cast<std::size_t>(b) * n * c, n, c) =
        CMapF(x.value().data() + static_cast<std::size_t>(b) * n * c, c, n).transpose();
  }
  return ag::make_result(std::move(out), {x}, [batch, c, n](Node& self) {
    Tensor* gx = grad_of(self, 0);
    if (!gx) return;
    for (int b = 0; b < batch; ++b) {
      MapF(gx->data() + static_cast<std::size_t>(b) * n * c, c, n) +=
          CMapF(self.grad.data() + static_cast<std::size_t>(b) * n * c, n, c).transpose();
    }
  });
}

Var from_tokens(const Var& x, int height, int width) {
  require_rank(x, 3, "from_tokens");
  const int batch = x.dim(0), n = x.dim(1), c = x.dim(2);
  if (n != height * width) throw ContractError("token count does not match spatial size", "from_tokens");
  Tensor out({batch, c, height, width});
  for (int b = 0; b < batch; ++b) {
    MapF(out.data() + static_cast<std::size_t>(b) * n * c, c, n) =
        CMapF(x.value().data() + static_cast<std::size_t>(b) * n * c, n, c).transpose();
  }
  return ag::make_result(std::move(out), {x}, [batch, c, n](Node& self) {
    Tensor* gx = grad_of(self, 0);
    if (!gx) return;
    for (int b = 0; b < batch; ++b) {
      MapF(gx->data() + static_cast<std::size_t>(b) * n * c, n, c) +=
          CMapF(self.grad.data() + static_cast<std::size_t>(b) * n * c, c, n).transpose();
    }
  });
}

Var embedding(const Var& table, const std::vector<std::vector<int>>& tokens) {
  require_rank(table, 2, "embedding");
  const int vocab = table.dim(0), e = table.dim(1);
  const int batch = static_cast<int>(tokens.size());
  const int len = batch ? static_cast<int>(tokens.front().size()) : 0;
  Tensor out({batch, len, e});
  for (int b = 0; b < batch; ++b) {
    if (static_cast<int>(tokens[static_cast<std::size_t>(b)].size()) != len) {
      throw ContractError("token sequences in a batch must share a length", "tokens");
    }
    for (int l = 0; l < len; ++l) {
      const int tok = tokens[static_cast<std::size_t>(b)][static_cast<std::size_t>(l)];
      if (tok < 0 || tok >= vocab) throw ContractError("token id " + std::to_string(tok) + " out of vocabulary", "tokens");
      std::copy_n(table.value().data() + static_cast<std::size_t>(tok) * e, e,
                  out.data() + (static_cast<std::size_t>(b) * len + l) * e);
    }
  }
  return ag::make_result(std::move(out), {table}, [tokens, e, len](Node& self) {
    Tensor* gt = grad_of(self, 0);
    if (!gt) return;
    for (std::size_t b = 0; b < tokens.size(); ++b) {
      for (int l = 0; l < len; ++l) {
        const int tok = tokens[b][static_cast<std::size_t>(l)];
        const float* src = self.grad.data() + (b * len + l) * e;
        float* dst = gt->data() + static_cast<std::size_t>(tok) * e;
        for (int j = 0; j < e; ++j) dst[j] += src[j];
      }
    }
  });
}

Var add_positional(const Var& x, const Var& p) {
  require_rank(x, 3, "add_positional");
  const int batch = x.dim(0);
  const std::size_t row = static_cast<std::size_t>(x.dim(1)) * x.dim(2);
  if (p.value().numel() != row) throw ContractError("positional table must be [L,E]", "add_positional");
  Tensor out = x.value();
  for (int b = 0; b < batch; ++b) {
    for (std::size_t i = 0; i < row; ++i) out[b * row + i] += p.value()[i];
  }
  return ag::make_result(std::move(out), {x, p}, [batch, row](Node& self) {
    if (Tensor* gx = grad_of(self, 0)) {
      for (std::size_t i = 0; i < gx->numel(); ++i) (*gx)[i] += self.grad[i];
    }
    if (Tensor* gp = grad_of(self, 1)) {
      for (int b = 0; b < batch; ++b) {
        for (std::size_t i = 0; i < row; ++i) (*gp)[i] += self.grad[b * row + i];
      }
    }
  });
}

Var slice_batch(const Var& x, int begin, int end) {
  Tensor out = x.value().slice0(begin, end);
  const std::size_t row = x.dim(0) ? x.value().numel() / static_cast<std::size_t>(x.dim(0)) : 0;
  return ag::make_result(std::move(out), {x}, [begin, row](Node& self) {
    Tensor* gx = grad_of(self, 0);
    if (!gx) return;
    for (std::size_t i = 0; i < self.grad.numel(); ++i) (*gx)[begin * row + i] += self.grad[i];
  });
}

}  // namespace ildm::ops
