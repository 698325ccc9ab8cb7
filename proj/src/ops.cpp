#include "contilearn/ops.hpp"

#include <algorithm>
#include <cmath>
#include <string>

namespace contilearn {

namespace {

using detail::TensorNode;

// C(m x n) = A(m x k) * B(k x n); C must be zero-filled.
void gemm_nn(const double* a, const double* b, double* c, int64_t m, int64_t k, int64_t n) {
  for (int64_t i = 0; i < m; ++i) {
    const double* arow = a + i * k;
    double* crow = c + i * n;
    for (int64_t p = 0; p < k; ++p) {
      const double av = arow[p];
      const double* brow = b + p * n;
      for (int64_t j = 0; j < n; ++j) crow[j] += av * brow[j];
    }
  }
}

// dA(m x k) += dC(m x n) * B^T
void gemm_nt_acc(const double* dc, const double* b, double* da, int64_t m, int64_t n, int64_t k) {
  for (int64_t i = 0; i < m; ++i) {
    const double* dcrow = dc + i * n;
    double* darow = da + i * k;
    for (int64_t p = 0; p < k; ++p) {
      const double* brow = b + p * n;
      double s = 0.0;
      for (int64_t j = 0; j < n; ++j) s += dcrow[j] * brow[j];
      darow[p] += s;
    }
  }
}

// dB(k x n) += A^T * dC(m x n)
void gemm_tn_acc(const double* a, const double* dc, double* db, int64_t m, int64_t k, int64_t n) {
  for (int64_t i = 0; i < m; ++i) {
    const double* arow = a + i * k;
    const double* dcrow = dc + i * n;
    for (int64_t p = 0; p < k; ++p) {
      const double av = arow[p];
      double* dbrow = db + p * n;
      for (int64_t j = 0; j < n; ++j) dbrow[j] += av * dcrow[j];
    }
  }
}

bool wants_grad(Tape* tape, std::initializer_list<const Tensor*> inputs) {
  if (!tape) return false;
  for (const Tensor* t : inputs)
    if (t->requires_grad()) return true;
  return false;
}

Tensor make_result(Tape* tape, bool rec, std::vector<int64_t> shape, std::vector<double> data,
                   const char* what) {
  check_finite(data, what);
  if (rec) return tape->make_output(std::move(shape), std::move(data), true);
  return Tensor::from_data(std::move(shape), std::move(data), false);
}

void require_same_shape(const Tensor& a, const Tensor& b, const char* what) {
  if (a.shape() != b.shape()) throw DimensionError(std::string(what) + ": shape mismatch");
}

}  // namespace

Tensor matmul(Tape* tape, const Tensor& a, const Tensor& b) {
  if (a.ndim() != 2 || b.ndim() != 2) throw DimensionError("matmul: operands must be 2-d");
  const int64_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
  if (b.dim(0) != k) throw DimensionError("matmul: inner dimensions disagree");
  std::vector<double> out(static_cast<size_t>(m * n), 0.0);
  gemm_nn(a.data().data(), b.data().data(), out.data(), m, k, n);
  const bool rec = wants_grad(tape, {&a, &b});
  Tensor c = make_result(tape, rec, {m, n}, std::move(out), "matmul");
  if (rec) {
    Tensor ah = a, bh = b, ch = c;  // handles keep the nodes alive
    tape->record([ah, bh, ch, m, k, n]() mutable {
      if (!ch.has_grad()) return;
      const auto& gc = ch.node_ptr()->grad;
      if (ah.requires_grad()) {
        auto& ga = ah.grad();
        gemm_nt_acc(gc.data(), bh.data().data(), ga.data(), m, n, k);
        check_finite(ga, "matmul backward (lhs)");
      }
      if (bh.requires_grad()) {
        auto& gb = bh.grad();
        gemm_tn_acc(ah.data().data(), gc.data(), gb.data(), m, k, n);
        check_finite(gb, "matmul backward (rhs)");
      }
    });
  }
  return c;
}

namespace {

template <typename Fwd, typename Bwd>
Tensor elementwise_binary(Tape* tape, const Tensor& a, const Tensor& b, const char* what, Fwd fwd,
                          Bwd bwd) {
  require_same_shape(a, b, what);
  const size_t n = a.data().size();
  std::vector<double> out(n);
  for (size_t i = 0; i < n; ++i) out[i] = fwd(a.data()[i], b.data()[i]);
  const bool rec = wants_grad(tape, {&a, &b});
  Tensor c = make_result(tape, rec, a.shape(), std::move(out), what);
  if (rec) {
    Tensor ah = a, bh = b, ch = c;
    std::string name = what;
    tape->record([ah, bh, ch, bwd, name]() mutable {
      if (!ch.has_grad()) return;
      const auto& gc = ch.node_ptr()->grad;
      const size_t n = gc.size();
      if (ah.requires_grad()) {
        auto& ga = ah.grad();
        for (size_t i = 0; i < n; ++i) ga[i] += bwd(ah.data()[i], bh.data()[i], gc[i], true);
        check_finite(ga, name.c_str());
      }
      if (bh.requires_grad()) {
        auto& gb = bh.grad();
        for (size_t i = 0; i < n; ++i) gb[i] += bwd(ah.data()[i], bh.data()[i], gc[i], false);
        check_finite(gb, name.c_str());
      }
    });
  }
  return c;
}

}  // namespace

Tensor add(Tape* tape, const Tensor& a, const Tensor& b) {
  return elementwise_binary(
      tape, a, b, "add", [](double x, double y) { return x + y; },
      [](double, double, double g, bool) { return g; });
}

Tensor sub(Tape* tape, const Tensor& a, const Tensor& b) {
  return elementwise_binary(
      tape, a, b, "sub", [](double x, double y) { return x - y; },
      [](double, double, double g, bool lhs) { return lhs ? g : -g; });
}

Tensor mul(Tape* tape, const Tensor& a, const Tensor& b) {
  return elementwise_binary(
      tape, a, b, "mul", [](double x, double y) { return x * y; },
      [](double x, double y, double g, bool lhs) { return lhs ? g * y : g * x; });
}

Tensor scale(Tape* tape, const Tensor& a, double s) {
  const size_t n = a.data().size();
  std::vector<double> out(n);
  for (size_t i = 0; i < n; ++i) out[i] = a.data()[i] * s;
  const bool rec = wants_grad(tape, {&a});
  Tensor c = make_result(tape, rec, a.shape(), std::move(out), "scale");
  if (rec) {
    Tensor ah = a, ch = c;
    tape->record([ah, ch, s]() mutable {
      if (!ch.has_grad()) return;
      const auto& gc = ch.node_ptr()->grad;
      auto& ga = ah.grad();
      for (size_t i = 0; i < gc.size(); ++i) ga[i] += s * gc[i];
      check_finite(ga, "scale backward");
    });
  }
  return c;
}

Tensor add_bias(Tape* tape, const Tensor& m, const Tensor& bias) {
  if (m.ndim() != 2 || bias.ndim() != 1) throw DimensionError("add_bias: want matrix and vector");
  const int64_t r = m.dim(0), c = m.dim(1);
  if (bias.dim(0) != c) throw DimensionError("add_bias: bias length mismatch");
  std::vector<double> out(static_cast<size_t>(r * c));
  for (int64_t i = 0; i < r; ++i)
    for (int64_t j = 0; j < c; ++j)
      out[static_cast<size_t>(i * c + j)] = m.data()[static_cast<size_t>(i * c + j)] + bias.data()[static_cast<size_t>(j)];
  const bool rec = wants_grad(tape, {&m, &bias});
  Tensor outt = make_result(tape, rec, {r, c}, std::move(out), "add_bias");
  if (rec) {
    Tensor mh = m, bh = bias, oh = outt;
    tape->record([mh, bh, oh, r, c]() mutable {
      if (!oh.has_grad()) return;
      const auto& go = oh.node_ptr()->grad;
      if (mh.requires_grad()) {
        auto& gm = mh.grad();
        for (size_t i = 0; i < go.size(); ++i) gm[i] += go[i];
        check_finite(gm, "add_bias backward (matrix)");
      }
      if (bh.requires_grad()) {
        auto& gb = bh.grad();
        for (int64_t i = 0; i < r; ++i)
          for (int64_t j = 0; j < c; ++j) gb[static_cast<size_t>(j)] += go[static_cast<size_t>(i * c + j)];
        check_finite(gb, "add_bias backward (bias)");
      }
    });
  }
  return outt;
}

Tensor relu(Tape* tape, const Tensor& x) {
  const size_t n = x.data().size();
  std::vector<double> out(n);
  for (size_t i = 0; i < n; ++i) out[i] = x.data()[i] > 0.0 ? x.data()[i] : 0.0;
  const bool rec = wants_grad(tape, {&x});
  Tensor c = make_result(tape, rec, x.shape(), std::move(out), "relu");
  if (rec) {
    Tensor xh = x, ch = c;
    tape->record([xh, ch]() mutable {
      if (!ch.has_grad()) return;
      const auto& gc = ch.node_ptr()->grad;
      auto& gx = xh.grad();
      // subgradient at exactly 0 is 0
      for (size_t i = 0; i < gc.size(); ++i)
        if (xh.data()[i] > 0.0) gx[i] += gc[i];
      check_finite(gx, "relu backward");
    });
  }
  return c;
}

Tensor group_norm(Tape* tape, const Tensor& x, int num_groups, const Tensor& gamma,
                  const Tensor& beta, double eps) {
  if (x.ndim() != 2) throw DimensionError("group_norm: input must be [batch x features]");
  if (eps <= 0.0) throw ConfigError("group_norm: eps must be positive");
  const int64_t batch = x.dim(0), features = x.dim(1);
  if (num_groups <= 0 || features % num_groups != 0)
    throw ConfigError("group_norm: features not divisible by num_groups");
  if (gamma.ndim() != 1 || gamma.dim(0) != features || beta.ndim() != 1 || beta.dim(0) != features)
    throw DimensionError("group_norm: gamma/beta length mismatch");
  const int64_t gsize = features / num_groups;

  std::vector<double> out(static_cast<size_t>(batch * features));
  auto xhat = std::make_shared<std::vector<double>>(static_cast<size_t>(batch * features));
  auto inv_std = std::make_shared<std::vector<double>>(static_cast<size_t>(batch * num_groups));
  const auto& xd = x.data();
  for (int64_t r = 0; r < batch; ++r) {
    for (int64_t g = 0; g < num_groups; ++g) {
      const int64_t base = r * features + g * gsize;
      double mean = 0.0;
      for (int64_t j = 0; j < gsize; ++j) mean += xd[static_cast<size_t>(base + j)];
      mean /= static_cast<double>(gsize);
      double var = 0.0;
      for (int64_t j = 0; j < gsize; ++j) {
        const double d = xd[static_cast<size_t>(base + j)] - mean;
        var += d * d;
      }
      var /= static_cast<double>(gsize);
      const double inv = 1.0 / std::sqrt(var + eps);
      (*inv_std)[static_cast<size_t>(r * num_groups + g)] = inv;
      for (int64_t j = 0; j < gsize; ++j) {
        const size_t idx = static_cast<size_t>(base + j);
        const size_t f = static_cast<size_t>(g * gsize + j);
        const double xh = (xd[idx] - mean) * inv;
        (*xhat)[idx] = xh;
        out[idx] = gamma.data()[f] * xh + beta.data()[f];
      }
    }
  }
  const bool rec = wants_grad(tape, {&x, &gamma, &beta});
  Tensor y = make_result(tape, rec, {batch, features}, std::move(out), "group_norm");
  if (rec) {
    Tensor xt = x, gt = gamma, bt = beta, yt = y;
    tape->record([xt, gt, bt, yt, xhat, inv_std, batch, features, num_groups, gsize]() mutable {
      if (!yt.has_grad()) return;
      const auto& gy = yt.node_ptr()->grad;
      if (gt.requires_grad()) {
        auto& gg = gt.grad();
        for (int64_t r = 0; r < batch; ++r)
          for (int64_t f = 0; f < features; ++f)
            gg[static_cast<size_t>(f)] += gy[static_cast<size_t>(r * features + f)] * (*xhat)[static_cast<size_t>(r * features + f)];
        check_finite(gg, "group_norm backward (gamma)");
      }
      if (bt.requires_grad()) {
        auto& gb = bt.grad();
        for (int64_t r = 0; r < batch; ++r)
          for (int64_t f = 0; f < features; ++f) gb[static_cast<size_t>(f)] += gy[static_cast<size_t>(r * features + f)];
        check_finite(gb, "group_norm backward (beta)");
      }
      if (xt.requires_grad()) {
        auto& gx = xt.grad();
        const double m = static_cast<double>(gsize);
        for (int64_t r = 0; r < batch; ++r) {
          for (int64_t g = 0; g < num_groups; ++g) {
            const int64_t base = r * features + g * gsize;
            const double inv = (*inv_std)[static_cast<size_t>(r * num_groups + g)];
            double s1 = 0.0, s2 = 0.0;
            for (int64_t j = 0; j < gsize; ++j) {
              const size_t idx = static_cast<size_t>(base + j);
              const size_t f = static_cast<size_t>(g * gsize + j);
              const double dxh = gy[idx] * gt.data()[f];
              s1 += dxh;
              s2 += dxh * (*xhat)[idx];
            }
            for (int64_t j = 0; j < gsize; ++j) {
              const size_t idx = static_cast<size_t>(base + j);
              const size_t f = static_cast<size_t>(g * gsize + j);
              const double dxh = gy[idx] * gt.data()[f];
              gx[idx] += inv * (dxh - s1 / m - (*xhat)[idx] * s2 / m);
            }
          }
        }
        check_finite(gx, "group_norm backward (input)");
      }
    });
  }
  return y;
}

Tensor cross_entropy(Tape* tape, const Tensor& logits, const std::vector<int>& labels) {
  if (logits.ndim() != 2) throw DimensionError("cross_entropy: logits must be [batch x classes]");
  const int64_t batch = logits.dim(0), classes = logits.dim(1);
  if (static_cast<int64_t>(labels.size()) != batch)
    throw DimensionError("cross_entropy: label count mismatch");
  for (int v : labels)
    if (v < 0 || v >= classes) throw DataError("cross_entropy: label out of range");

  auto probs = std::make_shared<std::vector<double>>(static_cast<size_t>(batch * classes));
  double total = 0.0;
  const auto& ld = logits.data();
  for (int64_t r = 0; r < batch; ++r) {
    const double* row = ld.data() + r * classes;
    double mx = row[0];
    for (int64_t j = 1; j < classes; ++j) mx = std::max(mx, row[j]);
    double denom = 0.0;
    for (int64_t j = 0; j < classes; ++j) {
      const double e = std::exp(row[j] - mx);
      (*probs)[static_cast<size_t>(r * classes + j)] = e;
      denom += e;
    }
    for (int64_t j = 0; j < classes; ++j) (*probs)[static_cast<size_t>(r * classes + j)] /= denom;
    total += -(row[labels[static_cast<size_t>(r)]] - mx - std::log(denom));
  }
  total /= static_cast<double>(batch);

  const bool rec = wants_grad(tape, {&logits});
  Tensor loss = make_result(tape, rec, {}, {total}, "cross_entropy");
  if (rec) {
    Tensor lh = logits, ot = loss;
    auto lab = std::make_shared<std::vector<int>>(labels);
    tape->record([lh, ot, probs, lab, batch, classes]() mutable {
      if (!ot.has_grad()) return;
      const double g = ot.node_ptr()->grad[0] / static_cast<double>(batch);
      auto& gl = lh.grad();
      for (int64_t r = 0; r < batch; ++r) {
        for (int64_t j = 0; j < classes; ++j) {
          const size_t idx = static_cast<size_t>(r * classes + j);
          const double onehot = (j == (*lab)[static_cast<size_t>(r)]) ? 1.0 : 0.0;
          gl[idx] += g * ((*probs)[idx] - onehot);
        }
      }
      check_finite(gl, "cross_entropy backward");
    });
  }
  return loss;
}

Tensor mse(Tape* tape, const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "mse");
  const size_t n = a.data().size();
  double total = 0.0;
  for (size_t i = 0; i < n; ++i) {
    const double d = a.data()[i] - b.data()[i];
    total += d * d;
  }
  total /= static_cast<double>(n);
  const bool rec = wants_grad(tape, {&a, &b});
  Tensor loss = make_result(tape, rec, {}, {total}, "mse");
  if (rec) {
    Tensor ah = a, bh = b, ot = loss;
    tape->record([ah, bh, ot, n]() mutable {
      if (!ot.has_grad()) return;
      const double g = 2.0 * ot.node_ptr()->grad[0] / static_cast<double>(n);
      if (ah.requires_grad()) {
        auto& ga = ah.grad();
        for (size_t i = 0; i < n; ++i) ga[i] += g * (ah.data()[i] - bh.data()[i]);
        check_finite(ga, "mse backward (lhs)");
      }
      if (bh.requires_grad()) {
        auto& gb = bh.grad();
        for (size_t i = 0; i < n; ++i) gb[i] -= g * (ah.data()[i] - bh.data()[i]);
        check_finite(gb, "mse backward (rhs)");
      }
    });
  }
  return loss;
}

Tensor sum(Tape* tape, const Tensor& x) {
  double total = 0.0;
  for (double v : x.data()) total += v;
  const bool rec = wants_grad(tape, {&x});
  Tensor loss = make_result(tape, rec, {}, {total}, "sum");
  if (rec) {
    Tensor xh = x, ot = loss;
    tape->record([xh, ot]() mutable {
      if (!ot.has_grad()) return;
      const double g = ot.node_ptr()->grad[0];
      auto& gx = xh.grad();
      for (size_t i = 0; i < gx.size(); ++i) gx[i] += g;
      check_finite(gx, "sum backward");
    });
  }
  return loss;
}

Tensor quadratic_penalty(Tape* tape, const Tensor& p,
                         std::shared_ptr<const std::vector<double>> ref,
                         std::shared_ptr<const std::vector<double>> w) {
  const size_t n = p.data().size();
  if (!ref || !w || ref->size() != n || w->size() != n)
    throw DimensionError("quadratic_penalty: ref/weight length mismatch");
  double total = 0.0;
  for (size_t i = 0; i < n; ++i) {
    const double d = p.data()[i] - (*ref)[i];
    total += (*w)[i] * d * d;
  }
  const bool rec = wants_grad(tape, {&p});
  Tensor loss = make_result(tape, rec, {}, {total}, "quadratic_penalty");
  if (rec) {
    Tensor ph = p, ot = loss;
    tape->record([ph, ot, ref, w, n]() mutable {
      if (!ot.has_grad()) return;
      const double g = ot.node_ptr()->grad[0];
      auto& gp = ph.grad();
      for (size_t i = 0; i < n; ++i) gp[i] += g * 2.0 * (*w)[i] * (ph.data()[i] - (*ref)[i]);
      check_finite(gp, "quadratic_penalty backward");
    });
  }
  return loss;
}

Tensor quadratic_penalty(Tape* tape, const Tensor& p, const std::vector<double>& ref,
                         const std::vector<double>& w) {
  return quadratic_penalty(tape, p, std::make_shared<const std::vector<double>>(ref),
                           std::make_shared<const std::vector<double>>(w));
}

}  // namespace contilearn
