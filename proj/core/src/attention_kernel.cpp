#include <memory>

#include "ildm/ops.hpp"

namespace ildm::ops {

namespace {

using MatF = xattn::Matrix<float>;
using CMapF = Eigen::Map<const MatF>;
using MapF = Eigen::Map<MatF>;

MatF sample_matrix(const Tensor& t, int b) {
  const int rows = t.dim(1), cols = t.dim(2);
  return CMapF(t.data() + static_cast<std::size_t>(b) * rows * cols, rows, cols);
}

void accumulate(Tensor* g, int b, const MatF& m) {
  if (!g || m.size() == 0) return;
  MapF(g->data() + static_cast<std::size_t>(b) * m.size(), m.rows(), m.cols()) += m;
}

}  // namespace

Var attention(const Var& q, const Var& k, const Var& v, const Var& k_cross, const Var& v_cross,
              const std::vector<double>& w, int heads, xattn::AttnPath path) {
  if (q.value().rank() != 3 || k.value().rank() != 3 || v.value().rank() != 3) {
    throw ContractError("attention expects [B,N,C] tensors", "attention");
  }
  const int batch = q.dim(0);
  const bool has_cross = k_cross.defined();
  if (k.dim(0) != batch || v.dim(0) != batch || (has_cross && (k_cross.dim(0) != batch || v_cross.dim(0) != batch))) {
    throw ContractError("attention batch sizes disagree", "attention");
  }
  if (has_cross && w.size() != static_cast<std::size_t>(batch)) {
    throw ContractError("attention needs one cross-domain weight per sample", "w");
  }

  auto caches = std::make_shared<std::vector<xattn::AttentionForward<float>>>(static_cast<std::size_t>(batch));
  const int n = q.dim(1), cv = v.dim(2);
  Tensor out({batch, n, cv});
  for (int b = 0; b < batch; ++b) {
    const MatF qb = sample_matrix(q.value(), b);
    const MatF kb = sample_matrix(k.value(), b);
    const MatF vb = sample_matrix(v.value(), b);
    MatF kc, vc;
    if (has_cross) {
      kc = sample_matrix(k_cross.value(), b);
      vc = sample_matrix(v_cross.value(), b);
    }
    const double wb = has_cross ? w[static_cast<std::size_t>(b)] : 0.0;
    auto fwd = xattn::multihead_attention<float>(qb, kb, vb, has_cross ? &kc : nullptr, has_cross ? &vc : nullptr, wb,
                                                 heads, path);
    MapF(out.data() + static_cast<std::size_t>(b) * n * cv, n, cv) = fwd.out;
    fwd.out.resize(0, 0);
    (*caches)[static_cast<std::size_t>(b)] = std::move(fwd);
  }

  return ag::make_result(std::move(out), {q, k, v, k_cross, v_cross}, [caches, batch, has_cross, n, cv](ag::Node& self) {
    auto grad_of = [&](std::size_t i) -> Tensor* {
      auto& p = self.parents[i];
      return (p && p->requires_grad) ? &p->ensure_grad() : nullptr;
    };
    Tensor* gq = grad_of(0);
    Tensor* gk = grad_of(1);
    Tensor* gv = grad_of(2);
    Tensor* gkc = has_cross ? grad_of(3) : nullptr;
    Tensor* gvc = has_cross ? grad_of(4) : nullptr;
    for (int b = 0; b < batch; ++b) {
      const MatF qb = sample_matrix(self.parents[0]->value, b);
      const MatF kb = sample_matrix(self.parents[1]->value, b);
      const MatF vb = sample_matrix(self.parents[2]->value, b);
      MatF kc, vc;
      if (has_cross) {
        kc = sample_matrix(self.parents[3]->value, b);
        vc = sample_matrix(self.parents[4]->value, b);
      }
      const MatF dout = CMapF(self.grad.data() + static_cast<std::size_t>(b) * n * cv, n, cv);
      const auto g = xattn::multihead_attention_backward<float>(dout, qb, kb, vb, has_cross ? &kc : nullptr,
                                                                has_cross ? &vc : nullptr,
                                                                (*caches)[static_cast<std::size_t>(b)]);
      accumulate(gq, b, g.q);
      accumulate(gk, b, g.k_own);
      accumulate(gv, b, g.v_own);
      accumulate(gkc, b, g.k_cross);
      accumulate(gvc, b, g.v_cross);
    }
  });
}

}  // namespace ildm::ops
