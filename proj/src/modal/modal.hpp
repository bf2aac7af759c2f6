#pragma once

#include <Eigen/Dense>
#include <complex>
#include <vector>

namespace lld::modal {

using Eigen::MatrixXd;
using Eigen::VectorXd;
using cplx = std::complex<double>;
using MatrixXc = Eigen::MatrixXcd;

struct Pole {
  double rho = 0.0;
  double omega = 0.0;
  cplx s() const { return {-rho, omega}; }
};

void validate(const Pole& p);

struct Mode {
  Pole pole;
  VectorXd c;  // cosine residue
  VectorXd b;  // sine residue
};

struct ModalSystem {
  std::vector<Mode> modes;
  int d_z = 0;

  int K() const { return static_cast<int>(modes.size()); }
  std::vector<Pole> poles() const;
};

void validate(const ModalSystem& sys);

struct StateSpaceRealization {
  MatrixXd A;  // 2K x 2K
  MatrixXd B;  // 2K x d_u
  MatrixXd C;  // d_z x 2K
};

// Column k holds exp(-rho_k t) cos(omega_k t); column K+k the sine counterpart.
struct DesignMatrix {
  MatrixXd values;
  VectorXd times;
};

DesignMatrix basis_matrix(const VectorXd& times, const std::vector<Pole>& poles);

// residues: 2K x d_z with cosine rows first.
MatrixXd synthesize(const DesignMatrix& design, const MatrixXd& residues);

// Residue matrix of a system in the layout synthesize() expects.
MatrixXd residue_matrix(const ModalSystem& sys);

constexpr double kPoleTolerance = 1e-12;

MatrixXc transfer_function_pf(const ModalSystem& sys, cplx s, const std::vector<VectorXd>& input_residues);
// Uses each mode's own sine residue b_k as the input factor.
MatrixXc transfer_function_pf(const ModalSystem& sys, cplx s);

StateSpaceRealization realize(const ModalSystem& sys);
StateSpaceRealization realize(const ModalSystem& sys, const std::vector<VectorXd>& input_residues);

// C (sI - A)^{-1} B by dense LU.
MatrixXc resolvent_eval(const StateSpaceRealization& r, cplx s);

Eigen::Matrix2d block_exp(const Pole& p, double t);

double stability_margin(const StateSpaceRealization& r);

}  // namespace lld::modal
