#include "ad/ops.hpp"

#include <cmath>
#include <limits>
#include <numbers>
#include <string>

#include "common/error.hpp"

namespace lld::ad {
namespace {

std::string shape_str(const Mat& m) { return std::to_string(m.rows()) + "x" + std::to_string(m.cols()); }

Mat expand(const Mat& m, Eigen::Index r, Eigen::Index c) {
  if (m.rows() == r && m.cols() == c) return m;
  return m.replicate(r / m.rows(), c / m.cols());
}

Mat reduce_to(const Mat& g, Eigen::Index r, Eigen::Index c) {
  if (g.rows() == r && g.cols() == c) return g;
  Mat out = g;
  if (r == 1 && out.rows() != 1) out = out.colwise().sum().eval();
  if (c == 1 && out.cols() != 1) out = out.rowwise().sum().eval();
  return out;
}

void broadcast_shape(const Mat& a, const Mat& b, Eigen::Index& r, Eigen::Index& c) {
  auto dim = [&](Eigen::Index x, Eigen::Index y) {
    if (x == y || y == 1) return x;
    if (x == 1) return y;
    fail(Errc::shape, "cannot broadcast " + shape_str(a) + " with " + shape_str(b));
  };
  r = dim(a.rows(), b.rows());
  c = dim(a.cols(), b.cols());
}

Node& parent(Node& self, std::size_t i) { return *self.parents[i]; }

template <typename F, typename DF>
Tensor unary(const Tensor& a, F f, DF df) {
  Mat y = a.value().unaryExpr(f);
  return make_result(y, {a}, [x = a.value(), y, df](Node& self) {
    Node& p = parent(self, 0);
    if (!p.requires_grad) return;
    Mat d(x.rows(), x.cols());
    for (Eigen::Index i = 0; i < x.size(); ++i) d.data()[i] = df(x.data()[i], y.data()[i]);
    p.accumulate(self.grad.cwiseProduct(d));
  });
}

}  // namespace

Tensor add(const Tensor& a, const Tensor& b) {
  Eigen::Index r, c;
  broadcast_shape(a.value(), b.value(), r, c);
  Mat v = expand(a.value(), r, c) + expand(b.value(), r, c);
  const auto ra = a.rows(), ca = a.cols(), rb = b.rows(), cb = b.cols();
  return make_result(std::move(v), {a, b}, [=](Node& self) {
    if (parent(self, 0).requires_grad) parent(self, 0).accumulate(reduce_to(self.grad, ra, ca));
    if (parent(self, 1).requires_grad) parent(self, 1).accumulate(reduce_to(self.grad, rb, cb));
  });
}

Tensor sub(const Tensor& a, const Tensor& b) {
  Eigen::Index r, c;
  broadcast_shape(a.value(), b.value(), r, c);
  Mat v = expand(a.value(), r, c) - expand(b.value(), r, c);
  const auto ra = a.rows(), ca = a.cols(), rb = b.rows(), cb = b.cols();
  return make_result(std::move(v), {a, b}, [=](Node& self) {
    if (parent(self, 0).requires_grad) parent(self, 0).accumulate(reduce_to(self.grad, ra, ca));
    if (parent(self, 1).requires_grad) parent(self, 1).accumulate(reduce_to(-self.grad, rb, cb));
  });
}

Tensor mul(const Tensor& a, const Tensor& b) {
  Eigen::Index r, c;
  broadcast_shape(a.value(), b.value(), r, c);
  Mat ea = expand(a.value(), r, c), eb = expand(b.value(), r, c);
  Mat v = ea.cwiseProduct(eb);
  const auto ra = a.rows(), ca = a.cols(), rb = b.rows(), cb = b.cols();
  return make_result(std::move(v), {a, b}, [=](Node& self) {
    if (parent(self, 0).requires_grad) parent(self, 0).accumulate(reduce_to(self.grad.cwiseProduct(eb), ra, ca));
    if (parent(self, 1).requires_grad) parent(self, 1).accumulate(reduce_to(self.grad.cwiseProduct(ea), rb, cb));
  });
}

Tensor scale(const Tensor& a, double s) {
  return make_result(a.value() * s, {a}, [s](Node& self) { parent(self, 0).accumulate(self.grad * s); });
}

Tensor add_scalar(const Tensor& a, double s) {
  return make_result(a.value().array() + s, {a}, [](Node& self) { parent(self, 0).accumulate(self.grad); });
}

Tensor matmul(const Tensor& a, const Tensor& b) {
  require(a.cols() == b.rows(), Errc::shape, "matmul " + shape_str(a.value()) + " by " + shape_str(b.value()));
  Mat v = a.value() * b.value();
  return make_result(std::move(v), {a, b}, [av = a.value(), bv = b.value()](Node& self) {
    if (parent(self, 0).requires_grad) parent(self, 0).accumulate(self.grad * bv.transpose());
    if (parent(self, 1).requires_grad) parent(self, 1).accumulate(av.transpose() * self.grad);
  });
}

Tensor transpose(const Tensor& a) {
  return make_result(a.value().transpose(), {a}, [](Node& self) { parent(self, 0).accumulate(self.grad.transpose()); });
}

Tensor sum(const Tensor& a) {
  Mat v(1, 1);
  v(0, 0) = a.value().sum();
  const auto r = a.rows(), c = a.cols();
  return make_result(std::move(v), {a}, [r, c](Node& self) {
    parent(self, 0).accumulate(Mat::Constant(r, c, self.grad(0, 0)));
  });
}

Tensor mean(const Tensor& a) { return scale(sum(a), 1.0 / static_cast<double>(a.value().size())); }

Tensor sum_rows(const Tensor& a) {
  const auto r = a.rows();
  return make_result(a.value().colwise().sum(), {a}, [r](Node& self) {
    parent(self, 0).accumulate(self.grad.replicate(r, 1));
  });
}

Tensor square(const Tensor& a) {
  return unary(a, [](double x) { return x * x; }, [](double x, double) { return 2.0 * x; });
}

Tensor softplus(const Tensor& a) {
  return unary(
      a, [](double x) { return x > 30.0 ? x : std::log1p(std::exp(x)); },
      [](double x, double) { return 1.0 / (1.0 + std::exp(-x)); });
}

Tensor sigmoid(const Tensor& a) {
  return unary(a, [](double x) { return 1.0 / (1.0 + std::exp(-x)); }, [](double, double y) { return y * (1.0 - y); });
}

Tensor tanh(const Tensor& a) {
  return unary(a, [](double x) { return std::tanh(x); }, [](double, double y) { return 1.0 - y * y; });
}

Tensor gelu(const Tensor& a) {
  static const double k = std::sqrt(2.0 / std::numbers::pi);
  return unary(
      a, [](double x) { return 0.5 * x * (1.0 + std::tanh(k * (x + 0.044715 * x * x * x))); },
      [](double x, double) {
        const double t = std::tanh(k * (x + 0.044715 * x * x * x));
        return 0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * k * (1.0 + 3.0 * 0.044715 * x * x);
      });
}

Tensor exp(const Tensor& a) {
  return unary(a, [](double x) { return std::exp(x); }, [](double, double y) { return y; });
}

Tensor log(const Tensor& a) {
  return unary(a, [](double x) { return std::log(x); }, [](double x, double) { return 1.0 / x; });
}

Tensor sin(const Tensor& a) {
  return unary(a, [](double x) { return std::sin(x); }, [](double x, double) { return std::cos(x); });
}

Tensor cos(const Tensor& a) {
  return unary(a, [](double x) { return std::cos(x); }, [](double x, double) { return -std::sin(x); });
}

Tensor slice_rows(const Tensor& a, Eigen::Index start, Eigen::Index n) {
  require(start >= 0 && n >= 0 && start + n <= a.rows(), Errc::shape, "slice_rows out of range");
  const auto r = a.rows(), c = a.cols();
  return make_result(a.value().middleRows(start, n), {a}, [=](Node& self) {
    Mat g = Mat::Zero(r, c);
    g.middleRows(start, n) = self.grad;
    parent(self, 0).accumulate(g);
  });
}

Tensor slice_cols(const Tensor& a, Eigen::Index start, Eigen::Index n) {
  require(start >= 0 && n >= 0 && start + n <= a.cols(), Errc::shape, "slice_cols out of range");
  const auto r = a.rows(), c = a.cols();
  return make_result(a.value().middleCols(start, n), {a}, [=](Node& self) {
    Mat g = Mat::Zero(r, c);
    g.middleCols(start, n) = self.grad;
    parent(self, 0).accumulate(g);
  });
}

Tensor concat_cols(const std::vector<Tensor>& parts) {
  require(!parts.empty(), Errc::shape, "concat of nothing");
  const auto r = parts[0].rows();
  Eigen::Index c = 0;
  std::vector<Eigen::Index> widths;
  for (const auto& p : parts) {
    require(p.rows() == r, Errc::shape, "concat_cols row mismatch");
    widths.push_back(p.cols());
    c += p.cols();
  }
  Mat v(r, c);
  Eigen::Index off = 0;
  for (const auto& p : parts) {
    v.middleCols(off, p.cols()) = p.value();
    off += p.cols();
  }
  return make_result(std::move(v), parts, [widths](Node& self) {
    Eigen::Index o = 0;
    for (std::size_t i = 0; i < widths.size(); ++i) {
      if (parent(self, i).requires_grad) parent(self, i).accumulate(self.grad.middleCols(o, widths[i]));
      o += widths[i];
    }
  });
}

Tensor concat_rows(const std::vector<Tensor>& parts) {
  require(!parts.empty(), Errc::shape, "concat of nothing");
  const auto c = parts[0].cols();
  Eigen::Index r = 0;
  std::vector<Eigen::Index> heights;
  for (const auto& p : parts) {
    require(p.cols() == c, Errc::shape, "concat_rows column mismatch");
    heights.push_back(p.rows());
    r += p.rows();
  }
  Mat v(r, c);
  Eigen::Index off = 0;
  for (const auto& p : parts) {
    v.middleRows(off, p.rows()) = p.value();
    off += p.rows();
  }
  return make_result(std::move(v), parts, [heights](Node& self) {
    Eigen::Index o = 0;
    for (std::size_t i = 0; i < heights.size(); ++i) {
      if (parent(self, i).requires_grad) parent(self, i).accumulate(self.grad.middleRows(o, heights[i]));
      o += heights[i];
    }
  });
}

Tensor gather_rows(const Tensor& a, const std::vector<int>& idx) {
  const auto r = a.rows(), c = a.cols();
  Mat v(static_cast<Eigen::Index>(idx.size()), c);
  for (std::size_t i = 0; i < idx.size(); ++i) {
    require(idx[i] >= 0 && idx[i] < r, Errc::shape, "gather index out of range");
    v.row(static_cast<Eigen::Index>(i)) = a.value().row(idx[i]);
  }
  return make_result(std::move(v), {a}, [idx, r, c](Node& self) {
    Mat g = Mat::Zero(r, c);
    for (std::size_t i = 0; i < idx.size(); ++i) g.row(idx[i]) += self.grad.row(static_cast<Eigen::Index>(i));
    parent(self, 0).accumulate(g);
  });
}

Tensor reshape(const Tensor& a, Eigen::Index rows, Eigen::Index cols) {
  require(rows * cols == a.value().size(), Errc::shape, "reshape size mismatch");
  using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
  RowMat src = a.value();
  Mat v = Eigen::Map<RowMat>(src.data(), rows, cols);
  const auto r0 = a.rows(), c0 = a.cols();
  return make_result(std::move(v), {a}, [r0, c0](Node& self) {
    RowMat g = self.grad;
    Mat back = Eigen::Map<RowMat>(g.data(), r0, c0);
    parent(self, 0).accumulate(back);
  });
}

Tensor group_mean(const Tensor& a, Eigen::Index n, const std::vector<double>& weights) {
  require(n >= 1 && a.rows() % n == 0, Errc::shape, "group_mean: rows not divisible by group size");
  require(weights.empty() || static_cast<Eigen::Index>(weights.size()) == a.rows(), Errc::shape,
          "group_mean: weight length mismatch");
  const Eigen::Index G = a.rows() / n, c = a.cols();
  std::vector<double> coef(static_cast<std::size_t>(a.rows()));
  for (Eigen::Index g = 0; g < G; ++g) {
    double tot = 0;
    for (Eigen::Index i = 0; i < n; ++i) tot += weights.empty() ? 1.0 : weights[g * n + i];
    for (Eigen::Index i = 0; i < n; ++i) {
      const double w = weights.empty() ? 1.0 : weights[g * n + i];
      coef[g * n + i] = tot > 0 ? w / tot : 0.0;
    }
  }
  Mat v = Mat::Zero(G, c);
  for (Eigen::Index g = 0; g < G; ++g)
    for (Eigen::Index i = 0; i < n; ++i)
      if (coef[g * n + i] != 0.0) v.row(g) += coef[g * n + i] * a.value().row(g * n + i);
  const auto r = a.rows();
  return make_result(std::move(v), {a}, [coef, n, r, c](Node& self) {
    Mat g = Mat::Zero(r, c);
    for (Eigen::Index i = 0; i < r; ++i)
      if (coef[i] != 0.0) g.row(i) = coef[i] * self.grad.row(i / n);
    parent(self, 0).accumulate(g);
  });
}

Tensor layer_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta, double eps) {
  const auto r = x.rows(), c = x.cols();
  require(gamma.rows() == 1 && gamma.cols() == c && beta.rows() == 1 && beta.cols() == c, Errc::shape,
          "layer_norm affine shape");
  Mat xhat(r, c);
  Eigen::VectorXd inv(r);
  for (Eigen::Index i = 0; i < r; ++i) {
    const double mu = x.value().row(i).mean();
    const double var = (x.value().row(i).array() - mu).square().mean();
    inv[i] = 1.0 / std::sqrt(var + eps);
    xhat.row(i) = (x.value().row(i).array() - mu) * inv[i];
  }
  Mat y = (xhat.array().rowwise() * gamma.value().row(0).array()).rowwise() + beta.value().row(0).array();
  return make_result(std::move(y), {x, gamma, beta}, [xhat, inv, gv = gamma.value()](Node& self) {
    const Mat& dy = self.grad;
    if (parent(self, 0).requires_grad) {
      Mat dxhat = dy.array().rowwise() * gv.row(0).array();
      const Eigen::Index cc = dxhat.cols();
      Mat dx(dxhat.rows(), cc);
      for (Eigen::Index i = 0; i < dxhat.rows(); ++i) {
        const double m1 = dxhat.row(i).mean();
        const double m2 = dxhat.row(i).dot(xhat.row(i)) / static_cast<double>(cc);
        dx.row(i) = inv[i] * (dxhat.row(i).array() - m1 - xhat.row(i).array() * m2);
      }
      parent(self, 0).accumulate(dx);
    }
    if (parent(self, 1).requires_grad) parent(self, 1).accumulate(dy.cwiseProduct(xhat).colwise().sum());
    if (parent(self, 2).requires_grad) parent(self, 2).accumulate(dy.colwise().sum());
  });
}

Tensor attention(const Tensor& q, const Tensor& k, const Tensor& v, Eigen::Index groups, int heads,
                 const std::vector<bool>& key_mask) {
  require(groups >= 1 && heads >= 1, Errc::shape, "attention needs groups and heads >= 1");
  require(q.rows() % groups == 0 && k.rows() % groups == 0, Errc::shape, "attention rows not divisible by groups");
  require(k.rows() == v.rows(), Errc::shape, "attention key/value row mismatch");
  require(q.cols() == k.cols() && q.cols() % heads == 0 && v.cols() % heads == 0, Errc::shape,
          "attention widths must match and divide by heads");
  require(key_mask.empty() || static_cast<Eigen::Index>(key_mask.size()) == k.rows(), Errc::shape,
          "key mask length mismatch");
  const Eigen::Index nq = q.rows() / groups, nk = k.rows() / groups;
  const Eigen::Index dh = q.cols() / heads, dvh = v.cols() / heads;
  const double sc = 1.0 / std::sqrt(static_cast<double>(dh));
  const Mat& Q = q.value();
  const Mat& K = k.value();
  const Mat& V = v.value();
  const bool keep = grad_enabled() && (q.requires_grad() || k.requires_grad() || v.requires_grad());
  Mat out(q.rows(), v.cols());
  // Probabilities are held key-major (nk x nq) so each query's softmax runs down a contiguous column.
  std::vector<Mat> probs(keep ? static_cast<std::size_t>(groups * heads) : 0);
  Mat Pt;
  for (Eigen::Index g = 0; g < groups; ++g) {
    for (int h = 0; h < heads; ++h) {
      Pt.noalias() = K.block(g * nk, h * dh, nk, dh) * Q.block(g * nq, h * dh, nq, dh).transpose();
      Pt *= sc;
      if (!key_mask.empty())
        for (Eigen::Index j = 0; j < nk; ++j)
          if (!key_mask[g * nk + j]) Pt.row(j).setConstant(-std::numeric_limits<double>::infinity());
      for (Eigen::Index i = 0; i < nq; ++i) {
        auto col = Pt.col(i);
        const double mx = col.maxCoeff();
        if (!std::isfinite(mx)) {
          col.setZero();
          continue;
        }
        col = (col.array() - mx).exp();
        col /= col.sum();
      }
      out.block(g * nq, h * dvh, nq, dvh).noalias() = Pt.transpose() * V.block(g * nk, h * dvh, nk, dvh);
      if (keep) probs[g * heads + h] = Pt;
    }
  }
  return make_result(std::move(out), {q, k, v}, [=, probs = std::move(probs)](Node& self) {
    const Mat& dO = self.grad;
    const bool gq = parent(self, 0).requires_grad, gk = parent(self, 1).requires_grad,
               gv = parent(self, 2).requires_grad;
    Mat dQ = gq ? Mat::Zero(Q.rows(), Q.cols()) : Mat();
    Mat dK = gk ? Mat::Zero(K.rows(), K.cols()) : Mat();
    Mat dV = gv ? Mat::Zero(V.rows(), V.cols()) : Mat();
    for (Eigen::Index g = 0; g < groups; ++g) {
      for (int h = 0; h < heads; ++h) {
        const Mat& P = probs[g * heads + h];  // nk x nq
        const auto dOb = dO.block(g * nq, h * dvh, nq, dvh);
        if (gv) dV.block(g * nk, h * dvh, nk, dvh).noalias() += P * dOb;
        if (gq || gk) {
          const Mat dP = V.block(g * nk, h * dvh, nk, dvh) * dOb.transpose();
          const Eigen::RowVectorXd cs = dP.cwiseProduct(P).colwise().sum();
          const Mat dS = P.cwiseProduct(dP.rowwise() - cs) * sc;
          if (gq) dQ.block(g * nq, h * dh, nq, dh).noalias() += dS.transpose() * K.block(g * nk, h * dh, nk, dh);
          if (gk) dK.block(g * nk, h * dh, nk, dh).noalias() += dS * Q.block(g * nq, h * dh, nq, dh);
        }
      }
    }
    if (gq) parent(self, 0).accumulate(dQ);
    if (gk) parent(self, 1).accumulate(dK);
    if (gv) parent(self, 2).accumulate(dV);
  });
}

Tensor shift_stack3(const Tensor& x, Eigen::Index T) {
  require(T >= 1 && x.rows() % T == 0, Errc::shape, "shift_stack3: rows not divisible by T");
  const Eigen::Index R = x.rows(), c = x.cols();
  Mat v = Mat::Zero(R, 3 * c);
  const Mat& X = x.value();
  for (Eigen::Index i = 0; i < R; ++i) {
    const Eigen::Index t = i % T;
    if (t > 0) v.block(i, 0, 1, c) = X.row(i - 1);
    v.block(i, c, 1, c) = X.row(i);
    if (t + 1 < T) v.block(i, 2 * c, 1, c) = X.row(i + 1);
  }
  return make_result(std::move(v), {x}, [R, c, T](Node& self) {
    Mat g = Mat::Zero(R, c);
    const Mat& G = self.grad;
    for (Eigen::Index i = 0; i < R; ++i) {
      const Eigen::Index t = i % T;
      if (t > 0) g.row(i - 1) += G.block(i, 0, 1, c);
      g.row(i) += G.block(i, c, 1, c);
      if (t + 1 < T) g.row(i + 1) += G.block(i, 2 * c, 1, c);
    }
    parent(self, 0).accumulate(g);
  });
}

Tensor damped_basis(const Tensor& rho, const Tensor& omega, const std::vector<double>& times) {
  require(rho.rows() == 1 && omega.rows() == 1 && rho.cols() == omega.cols(), Errc::shape,
          "damped_basis needs 1 x K decay and frequency rows");
  const Eigen::Index K = rho.cols(), h = static_cast<Eigen::Index>(times.size());
  Mat env(h, K), C(h, K), S(h, K);
  for (Eigen::Index r = 0; r < h; ++r)
    for (Eigen::Index k = 0; k < K; ++k) {
      const double t = times[r];
      env(r, k) = std::exp(-rho.value()(0, k) * t);
      C(r, k) = std::cos(omega.value()(0, k) * t);
      S(r, k) = std::sin(omega.value()(0, k) * t);
    }
  Mat v(h, 2 * K);
  v.leftCols(K) = env.cwiseProduct(C);
  v.rightCols(K) = env.cwiseProduct(S);
  return make_result(std::move(v), {rho, omega}, [=](Node& self) {
    const Mat gc = self.grad.leftCols(K), gs = self.grad.rightCols(K);
    Mat drho = Mat::Zero(1, K), dom = Mat::Zero(1, K);
    for (Eigen::Index r = 0; r < h; ++r) {
      const double t = times[r];
      for (Eigen::Index k = 0; k < K; ++k) {
        const double e = env(r, k);
        drho(0, k) += -t * e * (gc(r, k) * C(r, k) + gs(r, k) * S(r, k));
        dom(0, k) += t * e * (-gc(r, k) * S(r, k) + gs(r, k) * C(r, k));
      }
    }
    if (parent(self, 0).requires_grad) parent(self, 0).accumulate(drho);
    if (parent(self, 1).requires_grad) parent(self, 1).accumulate(dom);
  });
}

Tensor dropout(const Tensor& x, double p, Rng& rng) {
  if (p <= 0.0) return x;
  Mat m(x.rows(), x.cols());
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = rng.bernoulli(p) ? 0.0 : 1.0 / (1.0 - p);
  return mul(x, constant(m));
}

Tensor masked_mse(const Tensor& pred, const Mat& target, const Mat& mask) {
  require(pred.rows() == target.rows() && pred.cols() == target.cols() && mask.rows() == target.rows() &&
              mask.cols() == target.cols(),
          Errc::shape, "masked_mse shape mismatch");
  const double cnt = mask.sum();
  require(cnt > 0.0, Errc::validation, "masked loss with zero observed entries");
  const Mat diff = (pred.value() - target).cwiseProduct(mask);
  Mat v(1, 1);
  v(0, 0) = diff.cwiseProduct(pred.value() - target).sum() / cnt;
  return make_result(std::move(v), {pred}, [diff, cnt](Node& self) {
    parent(self, 0).accumulate(diff * (2.0 * self.grad(0, 0) / cnt));
  });
}

}  // namespace lld::ad
