#include "sph/sph.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <string>

#include <unsupported/Eigen/MatrixFunctions>

#include "common/error.hpp"
#include "common/parallel.hpp"
#include "common/rng.hpp"

namespace lld::sph {

double QuadraticHamiltonianSystem::H(const VectorXd& x) const { return H(x, kappa); }

double QuadraticHamiltonianSystem::H(const VectorXd& x, const MatrixXd& k) const {
  const VectorXd e = x - offset();
  return 0.5 * e.dot(k * e);
}

namespace {

bool spd(const MatrixXd& M) {
  if ((M - M.transpose()).cwiseAbs().maxCoeff() > 1e-12 * (1.0 + M.cwiseAbs().maxCoeff())) return false;
  Eigen::LLT<MatrixXd> llt(M);
  return llt.info() == Eigen::Success;
}

}  // namespace

void validate(const QuadraticHamiltonianSystem& s) {
  const int d = s.d();
  require(d >= 1 && s.J.cols() == d, Errc::shape, "J must be square");
  require(s.R.rows() == d && s.R.cols() == d && s.kappa.rows() == d && s.kappa.cols() == d, Errc::shape,
          "R and kappa must be d x d");
  require(s.G.rows() == d && s.Sigma.rows() == d, Errc::shape, "G and Sigma need d rows");
  require(s.xbar.size() == 0 || s.xbar.size() == d, Errc::shape, "xbar must have length d");
  require(s.J.allFinite() && s.R.allFinite() && s.kappa.allFinite() && s.G.allFinite() && s.Sigma.allFinite(),
          Errc::validation, "non-finite system matrix");
  require((s.J + s.J.transpose()).cwiseAbs().maxCoeff() <= 1e-12, Errc::validation, "J must be skew-symmetric");
  require(spd(s.R), Errc::validation, "R must be symmetric positive definite");
  require(spd(s.kappa), Errc::validation, "kappa must be symmetric positive definite");
}

InputSignal InputSignal::constant(VectorXd v) {
  InputSignal s;
  s.kind = Kind::constant;
  s.value = std::move(v);
  return s;
}

InputSignal InputSignal::tabulated(std::vector<double> t, std::vector<VectorXd> v) {
  require(!t.empty() && t.size() == v.size(), Errc::shape, "tabulated input needs matching times and values");
  require(std::is_sorted(t.begin(), t.end()), Errc::validation, "tabulated input times must be sorted");
  InputSignal s;
  s.kind = Kind::tabulated;
  s.times = std::move(t);
  s.values = std::move(v);
  return s;
}

VectorXd InputSignal::at(double t, int d_u) const {
  switch (kind) {
    case Kind::zero: return VectorXd::Zero(d_u);
    case Kind::constant: return value;
    case Kind::tabulated: {
      auto it = std::upper_bound(times.begin(), times.end(), t);
      std::size_t j = it == times.begin() ? 0 : static_cast<std::size_t>(it - times.begin()) - 1;
      return values[j];
    }
  }
  return VectorXd::Zero(d_u);
}

std::vector<double> InputSignal::breakpoints() const {
  return kind == Kind::tabulated ? times : std::vector<double>{};
}

double default_dt(const QuadraticHamiltonianSystem& sys) {
  const MatrixXd A = (sys.J - sys.R) * sys.kappa;
  Eigen::EigenSolver<MatrixXd> es(A, false);
  const double lam = es.eigenvalues().cwiseAbs().maxCoeff();
  return lam > 0.0 ? std::min(0.01, 0.1 / lam) : 0.01;
}

Stepper::Stepper(const QuadraticHamiltonianSystem& sys, const MatrixXd& kappa, double dt) : dt_(dt) {
  const int d = sys.d();
  const MatrixXd A = (sys.J - sys.R) * kappa;
  const MatrixXd I = MatrixXd::Identity(d, d);
  Eigen::PartialPivLU<MatrixXd> lu(I - 0.5 * dt * A);
  P_ = lu.solve(I + 0.5 * dt * A);
  Qg_ = lu.solve(dt * sys.G);
  Qs_ = lu.solve(sys.Sigma);
  c_ = lu.solve(-dt * (A * sys.offset()));
}

VectorXd Stepper::step(const VectorXd& x, const VectorXd& u, const VectorXd& dW) const {
  return P_ * x + Qg_ * u + Qs_ * dW + c_;
}

namespace {

int step_count(double t_end, double dt) {
  require(dt > 0.0 && std::isfinite(dt), Errc::validation, "dt must be positive");
  require(t_end >= dt, Errc::validation, "t_end must be at least dt");
  return static_cast<int>(std::llround(t_end / dt));
}

void check_finite(const VectorXd& x, int step) {
  if (!x.allFinite()) fail(Errc::divergence, "state became non-finite at step " + std::to_string(step));
}

}  // namespace

Paths simulate(const QuadraticHamiltonianSystem& sys, const SimConfig& cfg) {
  validate(sys);
  require(cfg.n_paths >= 1, Errc::validation, "n_paths must be at least 1");
  const double dt = cfg.dt > 0.0 ? cfg.dt : default_dt(sys);
  const int n = step_count(cfg.t_end, dt);
  const int d = sys.d(), d_u = static_cast<int>(sys.G.cols()), d_w = static_cast<int>(sys.Sigma.cols());
  const VectorXd x0 = cfg.x0.size() ? cfg.x0 : sys.offset();
  const int sw = cfg.context_switch ? static_cast<int>(std::llround(cfg.context_switch->time / dt)) : -1;
  const Stepper before(sys, sys.kappa, dt);
  const Stepper after = cfg.context_switch ? Stepper(sys, cfg.context_switch->kappa_after, dt) : before;

  Paths P;
  P.n_paths = cfg.n_paths;
  P.steps = n + 1;
  P.d = d;
  P.dt = dt;
  P.data.resize(static_cast<std::size_t>(cfg.n_paths) * P.steps * d);
  const double sq = std::sqrt(dt);
  parallel_for(static_cast<std::size_t>(cfg.n_paths), [&](std::size_t p) {
    Rng rng(cfg.seed, "sph.path", p);
    VectorXd x = x0, dW(d_w);
    double* out = P.data.data() + p * P.steps * d;
    Eigen::Map<VectorXd>(out, d) = x;
    for (int k = 0; k < n; ++k) {
      for (int j = 0; j < d_w; ++j) dW[j] = sq * rng.normal();
      const Stepper& st = (sw >= 0 && k >= sw) ? after : before;
      x = st.step(x, cfg.input.at(k * dt, d_u), dW);
      check_finite(x, k + 1);
      Eigen::Map<VectorXd>(out + (k + 1) * d, d) = x;
    }
  });
  return P;
}

std::vector<VectorXd> simulate_path(const QuadraticHamiltonianSystem& sys, const VectorXd& x0, const InputSignal& input,
                                    double dt, const std::vector<VectorXd>& dW) {
  validate(sys);
  const Stepper st(sys, sys.kappa, dt);
  const int d_u = static_cast<int>(sys.G.cols());
  std::vector<VectorXd> xs{x0};
  for (std::size_t k = 0; k < dW.size(); ++k) {
    xs.push_back(st.step(xs.back(), input.at(static_cast<double>(k) * dt, d_u), dW[k]));
    check_finite(xs.back(), static_cast<int>(k) + 1);
  }
  return xs;
}

EnergyLedger energy_balance_audit(const QuadraticHamiltonianSystem& sys, const SimConfig& cfg, int n_intervals) {
  validate(sys);
  require(n_intervals >= 1, Errc::validation, "need at least one ledger interval");
  require(cfg.n_paths >= 2, Errc::validation, "energy audit needs at least two paths for standard errors");
  const double dt = cfg.dt > 0.0 ? cfg.dt : default_dt(sys);
  const int spi = std::max(1, step_count(cfg.t_end, dt) / n_intervals);
  const int n = spi * n_intervals;
  const int d_u = static_cast<int>(sys.G.cols()), d_w = static_cast<int>(sys.Sigma.cols());
  const VectorXd x0 = cfg.x0.size() ? cfg.x0 : sys.offset();
  const VectorXd xb = sys.offset();
  const int sw = cfg.context_switch ? static_cast<int>(std::llround(cfg.context_switch->time / dt)) : -1;
  const MatrixXd kap_after = cfg.context_switch ? cfg.context_switch->kappa_after : sys.kappa;
  const Stepper before(sys, sys.kappa, dt);
  const Stepper after(sys, kap_after, dt);
  const MatrixXd SS = sys.Sigma * sys.Sigma.transpose();
  const double ito_before = 0.5 * (SS * sys.kappa).trace();
  const double ito_after = 0.5 * (SS * kap_after).trace();

  // Per-path, per-interval accumulators: dissipation, input power, jump, measured.
  constexpr int kF = 4;
  std::vector<double> acc(static_cast<std::size_t>(cfg.n_paths) * n_intervals * kF, 0.0);
  const double T = spi * dt;
  auto terms = [&](const VectorXd& x, const MatrixXd& kap, const VectorXd& u, double& dis, double& inp) {
    const VectorXd v = kap * (x - xb);
    dis = -v.dot(sys.R * v);
    inp = (sys.G.transpose() * v).dot(u);
  };
  const double sq = std::sqrt(dt);
  parallel_for(static_cast<std::size_t>(cfg.n_paths), [&](std::size_t p) {
    Rng rng(cfg.seed, "sph.path", p);
    VectorXd x = x0, dW(d_w);
    const MatrixXd* kap = &sys.kappa;
    double h_start = 0.0;
    double* a = acc.data() + p * n_intervals * kF;
    for (int k = 0; k < n; ++k) {
      const int iv = k / spi;
      if (k % spi == 0) h_start = sys.H(x, *kap);
      if (k == sw) {
        a[iv * kF + 2] += (sys.H(x, kap_after) - sys.H(x, *kap)) / T;
        kap = &kap_after;
      }
      const Stepper& st = (sw >= 0 && k >= sw) ? after : before;
      const VectorXd u = cfg.input.at(k * dt, d_u);
      for (int j = 0; j < d_w; ++j) dW[j] = sq * rng.normal();
      const VectorXd xn = st.step(x, u, dW);
      check_finite(xn, k + 1);
      double d0, i0, d1, i1;
      terms(x, *kap, u, d0, i0);
      terms(xn, *kap, u, d1, i1);
      a[iv * kF + 0] += 0.5 * dt * (d0 + d1) / T;
      a[iv * kF + 1] += 0.5 * dt * (i0 + i1) / T;
      x = xn;
      if ((k + 1) % spi == 0) a[iv * kF + 3] = (sys.H(x, *kap) - h_start) / T;
    }
  });

  EnergyLedger L;
  L.dt = dt;
  L.n_paths = cfg.n_paths;
  L.all_close = true;
  const double np = cfg.n_paths;
  auto stat = [&](const std::vector<double>& v) {
    double m = 0;
    for (double x : v) m += x;
    m /= np;
    double s = 0;
    for (double x : v) s += (x - m) * (x - m);
    return LedgerTerm{m, std::sqrt(s / (np - 1) / np)};
  };
  for (int iv = 0; iv < n_intervals; ++iv) {
    LedgerInterval I;
    I.t0 = iv * T;
    I.t1 = (iv + 1) * T;
    // Itô term: time average of the deterministic correction over the interval.
    double ito = 0.0;
    for (int k = iv * spi; k < (iv + 1) * spi; ++k) ito += (sw >= 0 && k >= sw) ? ito_after : ito_before;
    ito /= spi;
    I.ito = {ito, 0.0};
    std::vector<double> dis(cfg.n_paths), inp(cfg.n_paths), jmp(cfg.n_paths), meas(cfg.n_paths), res(cfg.n_paths);
    for (int p = 0; p < cfg.n_paths; ++p) {
      const double* a = acc.data() + (static_cast<std::size_t>(p) * n_intervals + iv) * kF;
      dis[p] = a[0];
      inp[p] = a[1];
      jmp[p] = a[2];
      meas[p] = a[3];
      res[p] = a[3] - (a[0] + a[1] + a[2] + ito);
    }
    I.dissipation = stat(dis);
    I.input_power = stat(inp);
    I.context_jump = stat(jmp);
    I.jump_total = I.context_jump.mean * T;
    I.measured = stat(meas);
    I.residual = stat(res);
    I.closes = std::abs(I.residual.mean) <= L.se_multiplier * I.residual.se + L.dt_multiplier * dt;
    L.all_close = L.all_close && I.closes;
    L.intervals.push_back(I);
  }
  return L;
}

double max_energy_increase(const QuadraticHamiltonianSystem& sys, const VectorXd& x0, double dt, int n_steps) {
  validate(sys);
  const Stepper st(sys, sys.kappa, dt);
  const VectorXd u = VectorXd::Zero(sys.G.cols());
  const VectorXd w = VectorXd::Zero(sys.Sigma.cols());
  VectorXd x = x0;
  double h = sys.H(x), worst = -std::numeric_limits<double>::infinity();
  for (int k = 0; k < n_steps; ++k) {
    x = st.step(x, u, w);
    const double hn = sys.H(x);
    worst = std::max(worst, hn - h);
    h = hn;
  }
  return worst;
}

Linearization linearize(const QuadraticHamiltonianSystem& sys, const MatrixXd& C) {
  validate(sys);
  require(C.cols() == sys.d(), Errc::shape, "readout C must have d columns");
  return {(sys.J - sys.R) * sys.kappa, sys.G, C};
}

namespace {

// Returns the index of the first non-positive pivot, or -1 if M is positive definite.
int cholesky_failing_pivot(const MatrixXd& M) {
  const Eigen::Index n = M.rows();
  MatrixXd L = MatrixXd::Zero(n, n);
  for (Eigen::Index j = 0; j < n; ++j) {
    double s = M(j, j) - L.row(j).head(j).squaredNorm();
    if (!(s > 0.0)) return static_cast<int>(j);
    L(j, j) = std::sqrt(s);
    for (Eigen::Index i = j + 1; i < n; ++i) L(i, j) = (M(i, j) - L.row(i).head(j).dot(L.row(j).head(j))) / L(j, j);
  }
  return -1;
}

}  // namespace

LyapunovCertificate lyapunov_certificate(const MatrixXd& J, const MatrixXd& R, const MatrixXd& kappa) {
  require(J.rows() == J.cols() && R.rows() == J.rows() && kappa.rows() == J.rows(), Errc::shape,
          "J, R, kappa must be square and of equal size");
  LyapunovCertificate c;
  const MatrixXd A = (J - R) * kappa;
  c.lhs = A.transpose() * kappa + kappa * A;
  const MatrixXd target = -kappa * (R + R.transpose()) * kappa;
  c.identity_error = (c.lhs - target).cwiseAbs().maxCoeff();
  c.identity_ok = c.identity_error <= 1e-10;
  c.failing_pivot = cholesky_failing_pivot(-c.lhs);
  c.negdef = c.failing_pivot < 0;
  return c;
}

namespace {

struct Simpson {
  const std::function<VectorXd(double)>& f;
  double tol;
  int max_depth;
  double residual = 0.0;
  bool ok = true;

  VectorXd run(double a, double b, const VectorXd& fa, const VectorXd& fm, const VectorXd& fb, const VectorXd& whole,
               double eps, int depth) {
    const double m = 0.5 * (a + b);
    const VectorXd flm = f(0.5 * (a + m)), frm = f(0.5 * (m + b));
    const VectorXd left = (m - a) / 6.0 * (fa + 4.0 * flm + fm);
    const VectorXd right = (b - m) / 6.0 * (fm + 4.0 * frm + fb);
    const VectorXd delta = left + right - whole;
    const double err = delta.cwiseAbs().maxCoeff() / 15.0;
    if (err <= eps || depth >= max_depth) {
      if (err > eps) ok = false;
      residual += err;
      return left + right + delta / 15.0;
    }
    return run(a, m, fa, flm, fm, left, 0.5 * eps, depth + 1) + run(m, b, fm, frm, fb, right, 0.5 * eps, depth + 1);
  }

  VectorXd integrate(double a, double b) {
    const VectorXd fa = f(a), fb = f(b), fm = f(0.5 * (a + b));
    const VectorXd whole = (b - a) / 6.0 * (fa + 4.0 * fm + fb);
    return run(a, b, fa, fm, fb, whole, tol, 0);
  }
};

}  // namespace

MildSolution mean_mild_solution(const MatrixXd& A, const MatrixXd& B, const VectorXd& x0, const InputSignal& input,
                                const std::vector<double>& times, double tol) {
  require(A.rows() == A.cols() && x0.size() == A.rows() && B.rows() == A.rows(), Errc::shape, "mild solution shapes");
  require(!times.empty() && times.front() >= 0.0 && std::is_sorted(times.begin(), times.end()), Errc::validation,
          "times must be nondecreasing and start at or after 0");
  MildSolution out;
  const int d_u = static_cast<int>(B.cols());
  for (double t : times) {
    const MatrixXd At = A * t;
    VectorXd x = At.exp() * x0;
    if (!input.is_zero() && t > 0.0) {
      std::vector<double> cuts{0.0};
      for (double bp : input.breakpoints())
        if (bp > 0.0 && bp < t) cuts.push_back(bp);
      cuts.push_back(t);
      for (std::size_t i = 0; i + 1 < cuts.size(); ++i) {
        if (cuts[i + 1] <= cuts[i]) continue;
        // The held input is constant on [a, b).
        const double a = cuts[i], b = cuts[i + 1];
        const VectorXd u = input.at(a, d_u);
        std::function<VectorXd(double)> g = [&](double r) -> VectorXd {
          const MatrixXd Ar = A * (t - r);
          return Ar.exp() * (B * u);
        };
        Simpson s{g, tol, 40};
        x += s.integrate(a, b);
        out.max_quadrature_residual = std::max(out.max_quadrature_residual, s.residual);
        if (!s.ok) fail(Errc::quadrature, "adaptive quadrature did not converge; residual " + std::to_string(s.residual));
      }
    }
    out.mean.push_back(x);
  }
  return out;
}

MatrixXd green_response(const MatrixXd& A, const MatrixXd& B, const MatrixXd& C, const std::vector<double>& times,
                        int impulse_channel) {
  require(impulse_channel >= 0 && impulse_channel < B.cols(), Errc::shape, "impulse channel out of range");
  MatrixXd out(static_cast<Eigen::Index>(times.size()), C.rows());
  for (std::size_t i = 0; i < times.size(); ++i) {
    const MatrixXd At = A * times[i];
    out.row(static_cast<Eigen::Index>(i)) = (C * (At.exp() * B.col(impulse_channel))).transpose();
  }
  return out;
}

QuadraticHamiltonianSystem random_stable_system(std::uint64_t seed, int d, int d_u) {
  require(d >= 2, Errc::validation, "random systems need d >= 2");
  require(d_u >= 1, Errc::validation, "random systems need d_u >= 1");
  Rng rng(seed, "sph.random_system");
  auto gauss = [&](int r, int c, double scale) {
    MatrixXd M(r, c);
    for (int i = 0; i < r; ++i)
      for (int j = 0; j < c; ++j) M(i, j) = scale * rng.normal();
    return M;
  };
  constexpr double eps = 1e-3;
  QuadraticHamiltonianSystem s;
  const MatrixXd W = gauss(d, d, 1.0);
  s.J = 0.5 * (W - W.transpose());
  const MatrixXd M1 = gauss(d, d, 1.0 / std::sqrt(d));
  s.R = M1.transpose() * M1 + eps * MatrixXd::Identity(d, d);
  const MatrixXd M2 = gauss(d, d, 1.0 / std::sqrt(d));
  s.kappa = M2.transpose() * M2 + eps * MatrixXd::Identity(d, d);
  s.G = gauss(d, d_u, 0.5);
  s.Sigma = gauss(d, d, 0.3);
  s.xbar = VectorXd::Zero(d);
  return s;
}

}  // namespace lld::sph
