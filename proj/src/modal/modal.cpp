#include "modal/modal.hpp"

#include <cmath>
#include <limits>
#include <string>

#include "common/error.hpp"

namespace lld::modal {

void validate(const Pole& p) {
  require(std::isfinite(p.rho) && std::isfinite(p.omega), Errc::validation, "pole has non-finite parameters");
  require(p.rho > 0.0, Errc::validation, "pole decay rho must be positive");
  require(p.omega > 0.0, Errc::validation, "pole frequency omega must be positive");
}

std::vector<Pole> ModalSystem::poles() const {
  std::vector<Pole> out;
  out.reserve(modes.size());
  for (const auto& m : modes) out.push_back(m.pole);
  return out;
}

void validate(const ModalSystem& sys) {
  require(!sys.modes.empty(), Errc::validation, "modal system needs at least one mode");
  require(sys.d_z >= 1, Errc::validation, "d_z must be at least 1");
  for (const auto& m : sys.modes) {
    validate(m.pole);
    require(m.c.size() == sys.d_z && m.b.size() == sys.d_z, Errc::shape, "residue length differs from d_z");
    require(m.c.allFinite() && m.b.allFinite(), Errc::validation, "non-finite residue");
  }
}

DesignMatrix basis_matrix(const VectorXd& times, const std::vector<Pole>& poles) {
  for (const auto& p : poles) validate(p);
  require(times.allFinite(), Errc::validation, "non-finite query time");
  const Eigen::Index h = times.size();
  const Eigen::Index K = static_cast<Eigen::Index>(poles.size());
  DesignMatrix d;
  d.times = times;
  d.values.resize(h, 2 * K);
  for (Eigen::Index k = 0; k < K; ++k) {
    for (Eigen::Index r = 0; r < h; ++r) {
      const double t = times[r];
      const double env = std::exp(-poles[k].rho * t);
      d.values(r, k) = env * std::cos(poles[k].omega * t);
      d.values(r, K + k) = env * std::sin(poles[k].omega * t);
    }
  }
  return d;
}

MatrixXd synthesize(const DesignMatrix& design, const MatrixXd& residues) {
  require(design.values.cols() == residues.rows(), Errc::shape,
          "residue rows (" + std::to_string(residues.rows()) + ") differ from 2K (" +
              std::to_string(design.values.cols()) + ")");
  return design.values * residues;
}

MatrixXd residue_matrix(const ModalSystem& sys) {
  const int K = sys.K();
  MatrixXd R(2 * K, sys.d_z);
  for (int k = 0; k < K; ++k) {
    R.row(k) = sys.modes[k].c.transpose();
    R.row(K + k) = sys.modes[k].b.transpose();
  }
  return R;
}

MatrixXc transfer_function_pf(const ModalSystem& sys, cplx s, const std::vector<VectorXd>& input_residues) {
  validate(sys);
  require(input_residues.size() == sys.modes.size(), Errc::shape, "one input residue per mode required");
  const Eigen::Index d_u = input_residues.front().size();
  MatrixXc G = MatrixXc::Zero(sys.d_z, d_u);
  for (std::size_t k = 0; k < sys.modes.size(); ++k) {
    const auto& m = sys.modes[k];
    require(input_residues[k].size() == d_u, Errc::shape, "input residues must share d_u");
    const double rho = m.pole.rho, om = m.pole.omega;
    const cplx den = s * s + 2.0 * rho * s + (rho * rho + om * om);
    if (std::abs(den) <= kPoleTolerance) fail(Errc::singularity, "transfer function evaluated at a pole (mode " + std::to_string(k) + ")");
    G += (om / den) * (m.c * input_residues[k].transpose()).cast<cplx>();
  }
  return G;
}

MatrixXc transfer_function_pf(const ModalSystem& sys, cplx s) {
  std::vector<VectorXd> b;
  for (const auto& m : sys.modes) b.push_back(m.b);
  return transfer_function_pf(sys, s, b);
}

StateSpaceRealization realize(const ModalSystem& sys, const std::vector<VectorXd>& input_residues) {
  validate(sys);
  require(input_residues.size() == sys.modes.size(), Errc::shape, "one input residue per mode required");
  const int K = sys.K();
  const Eigen::Index d_u = input_residues.front().size();
  StateSpaceRealization r;
  r.A = MatrixXd::Zero(2 * K, 2 * K);
  r.B = MatrixXd::Zero(2 * K, d_u);
  r.C = MatrixXd::Zero(sys.d_z, 2 * K);
  for (int k = 0; k < K; ++k) {
    const auto& m = sys.modes[k];
    r.A(2 * k, 2 * k) = -m.pole.rho;
    r.A(2 * k, 2 * k + 1) = -m.pole.omega;
    r.A(2 * k + 1, 2 * k) = m.pole.omega;
    r.A(2 * k + 1, 2 * k + 1) = -m.pole.rho;
    r.B.row(2 * k + 1) = input_residues[k].transpose();
    r.C.col(2 * k) = -m.c;
  }
  return r;
}

StateSpaceRealization realize(const ModalSystem& sys) {
  std::vector<VectorXd> b;
  for (const auto& m : sys.modes) b.push_back(m.b);
  return realize(sys, b);
}

MatrixXc resolvent_eval(const StateSpaceRealization& r, cplx s) {
  const Eigen::Index n = r.A.rows();
  MatrixXc M = s * MatrixXc::Identity(n, n) - r.A.cast<cplx>();
  MatrixXc X = M.partialPivLu().solve(r.B.cast<cplx>());
  return r.C.cast<cplx>() * X;
}

Eigen::Matrix2d block_exp(const Pole& p, double t) {
  const double env = std::exp(-p.rho * t);
  const double c = std::cos(p.omega * t), s = std::sin(p.omega * t);
  Eigen::Matrix2d E;
  E << c, -s, s, c;
  return env * E;
}

double stability_margin(const StateSpaceRealization& r) {
  require(r.A.rows() == r.A.cols() && r.A.rows() % 2 == 0, Errc::shape, "realization A must be square with even size");
  double m = -std::numeric_limits<double>::infinity();
  for (Eigen::Index k = 0; k < r.A.rows(); k += 2) m = std::max(m, r.A(k, k));
  return m;
}

}  // namespace lld::modal
