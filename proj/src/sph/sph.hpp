#pragma once

#include <cstdint>
#include <optional>
#include <vector>

#include <Eigen/Dense>

namespace lld::sph {

using Eigen::MatrixXd;
using Eigen::VectorXd;

struct QuadraticHamiltonianSystem {
  MatrixXd J, R, kappa, G, Sigma;
  VectorXd xbar;  // operating point; empty means zero

  int d() const { return static_cast<int>(J.rows()); }
  VectorXd offset() const { return xbar.size() ? xbar : VectorXd::Zero(d()); }
  double H(const VectorXd& x) const;
  double H(const VectorXd& x, const MatrixXd& kappa_override) const;
};

void validate(const QuadraticHamiltonianSystem& sys);

// Piecewise-constant (zero-order hold) input. Tabulated values hold from
// times[j] until times[j+1]; before times[0] the first value applies.
struct InputSignal {
  enum class Kind { zero, constant, tabulated } kind = Kind::zero;
  VectorXd value;
  std::vector<double> times;
  std::vector<VectorXd> values;

  static InputSignal zero() { return {}; }
  static InputSignal constant(VectorXd v);
  static InputSignal tabulated(std::vector<double> t, std::vector<VectorXd> v);

  VectorXd at(double t, int d_u) const;
  bool is_zero() const { return kind == Kind::zero; }
  std::vector<double> breakpoints() const;
};

struct ContextSwitch {
  double time = 0.0;
  MatrixXd kappa_after;
};

struct SimConfig {
  double dt = 0.0;  // 0 selects default_dt()
  double t_end = 1.0;
  int n_paths = 1;
  std::uint64_t seed = 0;
  InputSignal input;
  VectorXd x0;  // empty means xbar
  std::optional<ContextSwitch> context_switch;
};

double default_dt(const QuadraticHamiltonianSystem& sys);

struct Paths {
  int n_paths = 0;
  int steps = 0;  // stored states per path including t = 0
  int d = 0;
  double dt = 0.0;
  std::vector<double> data;  // n_paths x steps x d row-major

  Eigen::Map<const VectorXd> state(int path, int step) const {
    return Eigen::Map<const VectorXd>(data.data() + (static_cast<std::size_t>(path) * steps + step) * d, d);
  }
};

// One step of the drift-implicit midpoint scheme:
//   x' = x + dt [A (x + x')/2 + G u] + Sigma dW,  A = (J - R) kappa,
// solved exactly since the drift is linear.
class Stepper {
 public:
  Stepper(const QuadraticHamiltonianSystem& sys, const MatrixXd& kappa, double dt);
  VectorXd step(const VectorXd& x, const VectorXd& u, const VectorXd& dW) const;

 private:
  MatrixXd P_, Qg_, Qs_;
  VectorXd c_;
  double dt_;
};

Paths simulate(const QuadraticHamiltonianSystem& sys, const SimConfig& cfg);

// Single path driven by caller-supplied Brownian increments (one per step).
std::vector<VectorXd> simulate_path(const QuadraticHamiltonianSystem& sys, const VectorXd& x0, const InputSignal& input,
                                    double dt, const std::vector<VectorXd>& dW);

struct LedgerTerm {
  double mean = 0.0;
  double se = 0.0;
};

struct LedgerInterval {
  double t0 = 0.0, t1 = 0.0;
  LedgerTerm dissipation;   // -E[grad H^T R grad H], time-averaged
  LedgerTerm input_power;   // E[y~^T u], time-averaged
  LedgerTerm ito;           // 1/2 tr(Sigma Sigma^T kappa), time-averaged
  LedgerTerm context_jump;  // E[H(x; kappa') - H(x; kappa)] / (t1 - t0)
  LedgerTerm measured;      // (E[H(t1)] - E[H(t0)]) / (t1 - t0)
  LedgerTerm residual;      // measured - sum of terms, paired per path
  double jump_total = 0.0;  // undivided context jump
  bool closes = false;
};

struct EnergyLedger {
  std::vector<LedgerInterval> intervals;
  double dt = 0.0;
  int n_paths = 0;
  double se_multiplier = 3.0;
  double dt_multiplier = 5.0;
  bool all_close = false;
};

EnergyLedger energy_balance_audit(const QuadraticHamiltonianSystem& sys, const SimConfig& cfg, int n_intervals = 10);

// Largest per-step increase of H along a noiseless, unforced trajectory.
double max_energy_increase(const QuadraticHamiltonianSystem& sys, const VectorXd& x0, double dt, int n_steps);

struct Linearization {
  MatrixXd A, B, C;
};
Linearization linearize(const QuadraticHamiltonianSystem& sys, const MatrixXd& C);

struct LyapunovCertificate {
  MatrixXd lhs;            // A^T kappa + kappa A
  double identity_error = 0.0;  // max |lhs + kappa (R + R^T) kappa|
  bool identity_ok = false;
  bool negdef = false;
  int failing_pivot = -1;  // Cholesky pivot where the negation stopped being positive
};
LyapunovCertificate lyapunov_certificate(const MatrixXd& J, const MatrixXd& R, const MatrixXd& kappa);

struct MildSolution {
  std::vector<VectorXd> mean;
  double max_quadrature_residual = 0.0;
};
MildSolution mean_mild_solution(const MatrixXd& A, const MatrixXd& B, const VectorXd& x0, const InputSignal& input,
                                const std::vector<double>& times, double tol = 1e-10);

MatrixXd green_response(const MatrixXd& A, const MatrixXd& B, const MatrixXd& C, const std::vector<double>& times,
                        int impulse_channel);

QuadraticHamiltonianSystem random_stable_system(std::uint64_t seed, int d, int d_u);

}  // namespace lld::sph
