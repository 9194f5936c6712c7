#pragma once

// NV ground-state spin Hamiltonian, Hermitian eigensolver and ODMR
// transition frequencies.

#include <algorithm>
#include <cmath>
#include <complex>
#include <numeric>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "nvmag/constants.hpp"
#include "nvmag/errors.hpp"
#include "nvmag/jacobi.hpp"

namespace nvmag::spin {

using cd = std::complex<double>;
using Eigen::MatrixXcd;
using Eigen::Vector3d;

/// Static field in Gauss, expressed in the frame whose +z is the NV axis
/// (for the Hamiltonian) or in the diamond cubic frame (for geometry).
class FieldVector {
 public:
  FieldVector() = default;
  explicit FieldVector(const Vector3d& components) : components_(components) {}
  FieldVector(double bx, double by, double bz) : components_(bx, by, bz) {}

  /// Field of `magnitude` Gauss tilted by `theta_deg` from +z, azimuth `phi_deg`.
  static FieldVector from_polar(double magnitude, double theta_deg, double phi_deg = 0.0) {
    const double t = deg2rad(theta_deg);
    const double p = deg2rad(phi_deg);
    return FieldVector(magnitude * std::sin(t) * std::cos(p), magnitude * std::sin(t) * std::sin(p),
                       magnitude * std::cos(t));
  }

  const Vector3d& components() const { return components_; }
  double magnitude() const { return components_.norm(); }
  Vector3d direction() const {
    const double m = magnitude();
    return m > 0.0 ? Vector3d(components_ / m) : Vector3d::Zero();
  }
  double x() const { return components_.x(); }
  double y() const { return components_.y(); }
  double z() const { return components_.z(); }

 private:
  Vector3d components_ = Vector3d::Zero();
};

struct SpinOperatorSet {
  double spin = 1.0;
  MatrixXcd sx, sy, sz;

  Eigen::Index dim() const { return sz.rows(); }
};

/// Angular-momentum matrices in the |m = +S, ..., -S> basis.
inline SpinOperatorSet spin_operators(double spin) {
  const double twice = 2.0 * spin;
  if (!(spin > 0.0) || std::abs(twice - std::round(twice)) > 1e-12 || spin > 64.0)
    throw InvalidArgument("spin_operators: spin must be a positive multiple of 1/2, got " +
                          std::to_string(spin));
  const auto n = static_cast<Eigen::Index>(std::lround(twice)) + 1;

  MatrixXcd sz = MatrixXcd::Zero(n, n);
  MatrixXcd splus = MatrixXcd::Zero(n, n);
  for (Eigen::Index k = 0; k < n; ++k) {
    const double m = spin - static_cast<double>(k);
    sz(k, k) = m;
    if (k > 0) splus(k - 1, k) = std::sqrt(spin * (spin + 1.0) - m * (m + 1.0));
  }
  const MatrixXcd sminus = splus.adjoint();
  SpinOperatorSet ops;
  ops.spin = spin;
  ops.sx = 0.5 * (splus + sminus);
  ops.sy = cd(0.0, -0.5) * (splus - sminus);
  ops.sz = std::move(sz);
  return ops;
}

inline MatrixXcd kron(const MatrixXcd& a, const MatrixXcd& b) {
  MatrixXcd out(a.rows() * b.rows(), a.cols() * b.cols());
  for (Eigen::Index i = 0; i < a.rows(); ++i)
    for (Eigen::Index j = 0; j < a.cols(); ++j)
      out.block(i * b.rows(), j * b.cols(), b.rows(), b.cols()) = a(i, j) * b;
  return out;
}

/// D*Sz^2 + gamma_e * B.S, with B in the NV frame. Units: MHz.
inline MatrixXcd build_electron_hamiltonian(const FieldVector& b, const PhysicalConstants& c) {
  const auto s = spin_operators(1.0);
  return c.zfs_D * s.sz * s.sz + c.gamma_e * (b.x() * s.sx + b.y() * s.sy + b.z() * s.sz);
}

/// Electron (x) 14N nuclear Hamiltonian, 9x9, index = 3*electron + nuclear.
inline MatrixXcd build_full_hamiltonian(const FieldVector& b, const PhysicalConstants& c) {
  const auto s = spin_operators(1.0);
  const MatrixXcd id = MatrixXcd::Identity(3, 3);
  MatrixXcd h = kron(build_electron_hamiltonian(b, c), id);
  h += c.hyperfine_A * (kron(s.sx, s.sx) + kron(s.sy, s.sy) + kron(s.sz, s.sz));
  h += c.quadrupole_Q * kron(id, s.sz * s.sz);
  h += c.gamma_n * b.magnitude() * kron(id, s.sz);
  return h;
}

struct EigenSystem {
  Eigen::VectorXd eigenvalues;  // ascending, MHz
  MatrixXcd eigenvectors;       // unit columns
};

/// Hermitian eigensolver: cyclic Jacobi on the real symmetric embedding
/// [[Re, -Im], [Im, Re]], whose spectrum is that of `h` with every level
/// doubled. Complex eigenvectors u + iv are recovered from the embedded
/// (u; v) pairs by pivoted complex Gram-Schmidt.
inline EigenSystem eigensolve_hermitian(const MatrixXcd& h) {
  const Eigen::Index n = h.rows();
  if (n == 0 || h.cols() != n) throw InvalidArgument("eigensolve_hermitian: matrix must be square");
  if (!h.allFinite()) throw InvalidArgument("eigensolve_hermitian: non-finite entries");
  const double hnorm = h.norm();
  const double asym = (h - h.adjoint()).cwiseAbs().maxCoeff();
  if (asym > 1e-9 * std::max(hnorm, 1.0))
    throw InvalidArgument("eigensolve_hermitian: matrix is not Hermitian (asymmetry " +
                          std::to_string(asym) + ")");
  const MatrixXcd herm = 0.5 * (h + h.adjoint());

  Eigen::MatrixXd embed(2 * n, 2 * n);
  embed << herm.real(), -herm.imag(), herm.imag(), herm.real();
  const auto sym = linalg::jacobi_symmetric(embed, 1e-12, 100);

  // Candidates ordered by embedded eigenvalue; every complex eigenvector
  // appears twice (as z and i*z).
  std::vector<Eigen::Index> order(static_cast<size_t>(2 * n));
  std::iota(order.begin(), order.end(), Eigen::Index{0});
  std::stable_sort(order.begin(), order.end(),
                   [&](Eigen::Index a, Eigen::Index b) { return sym.values(a) < sym.values(b); });

  std::vector<Eigen::VectorXcd> pool;
  pool.reserve(order.size());
  for (auto idx : order) {
    Eigen::VectorXcd z(n);
    for (Eigen::Index k = 0; k < n; ++k) z(k) = cd(sym.vectors(k, idx), sym.vectors(k + n, idx));
    pool.push_back(std::move(z));
  }

  std::vector<Eigen::VectorXcd> basis;
  std::vector<bool> used(pool.size(), false);
  while (static_cast<Eigen::Index>(basis.size()) < n) {
    size_t best = pool.size();
    double best_norm = -1.0;
    for (size_t k = 0; k < pool.size(); ++k) {
      if (used[k]) continue;
      const double nk = pool[k].norm();
      if (nk > best_norm) {
        best_norm = nk;
        best = k;
      }
    }
    if (best == pool.size() || best_norm < 1e-6)
      throw NumericError("eigensolve_hermitian: failed to extract complex eigenbasis", best_norm);
    used[best] = true;
    Eigen::VectorXcd q = pool[best] / best_norm;
    for (size_t k = 0; k < pool.size(); ++k)
      if (!used[k]) pool[k] -= q.dot(pool[k]) * q;
    basis.push_back(std::move(q));
  }

  std::vector<double> rayleigh(basis.size());
  for (size_t k = 0; k < basis.size(); ++k) rayleigh[k] = basis[k].dot(herm * basis[k]).real();
  std::vector<size_t> perm(basis.size());
  std::iota(perm.begin(), perm.end(), size_t{0});
  std::stable_sort(perm.begin(), perm.end(),
                   [&](size_t a, size_t b) { return rayleigh[a] < rayleigh[b]; });

  EigenSystem out;
  out.eigenvalues.resize(n);
  out.eigenvectors.resize(n, n);
  for (Eigen::Index k = 0; k < n; ++k) {
    out.eigenvalues(k) = rayleigh[perm[static_cast<size_t>(k)]];
    out.eigenvectors.col(k) = basis[perm[static_cast<size_t>(k)]];
  }

  const double tol = 1e-9 * std::max(hnorm, 1.0);
  for (Eigen::Index k = 0; k < n; ++k) {
    const double r =
        (herm * out.eigenvectors.col(k) - out.eigenvalues(k) * out.eigenvectors.col(k)).norm();
    if (r > tol) throw NumericError("eigensolve_hermitian: eigenpair residual too large", r);
  }
  return out;
}

enum class TransitionMode { ElectronOnly, NuclearResolved };

struct Transition {
  std::string label;
  int ms = 0;       // target electron manifold, -1 or +1
  int m_i = 0;      // nuclear projection; 0 in electron-only mode
  double frequency = 0.0;  // MHz
};

namespace detail {

/// Reduced electron density matrix of a 9-dimensional state.
inline Eigen::Matrix3cd electron_density(const Eigen::VectorXcd& v) {
  Eigen::Matrix3cd rho = Eigen::Matrix3cd::Zero();
  for (int a = 0; a < 3; ++a)
    for (int b = 0; b < 3; ++b)
      for (int n = 0; n < 3; ++n) rho(a, b) += v(3 * a + n) * std::conj(v(3 * b + n));
  return rho;
}

inline Eigen::Vector3d nuclear_populations(const Eigen::VectorXcd& v) {
  Eigen::Vector3d p = Eigen::Vector3d::Zero();
  for (int e = 0; e < 3; ++e)
    for (int n = 0; n < 3; ++n) p(n) += std::norm(v(3 * e + n));
  return p;
}

inline std::string ms_label(int ms) { return ms < 0 ? "0->-1" : "0->+1"; }

}  // namespace detail

/// ODMR transition frequencies from an eigensystem of this module.
///
/// Electron-only mode returns (f-, f+): the two remaining levels measured from
/// the level with the largest |ms=0> weight, ascending. Nuclear-resolved mode
/// returns six nuclear-spin-conserving lines, the f- triplet then the f+
/// triplet, each sorted by frequency.
inline std::vector<Transition> transition_frequencies(const EigenSystem& eig, TransitionMode mode) {
  const Eigen::Index n = eig.eigenvalues.size();
  std::vector<Transition> out;

  if (mode == TransitionMode::ElectronOnly) {
    if (n != 3) throw InvalidArgument("transition_frequencies: electron-only mode needs a 3-level system");
    std::vector<double> overlap(3);
    for (int k = 0; k < 3; ++k) overlap[k] = std::norm(eig.eigenvectors(1, k));
    const auto zero = static_cast<int>(std::max_element(overlap.begin(), overlap.end()) - overlap.begin());
    if (overlap[zero] < 0.5)
      throw DegenerateLabeling("transition_frequencies: no level with |ms=0> overlap >= 0.5", overlap);
    std::vector<double> others;
    for (int k = 0; k < 3; ++k)
      if (k != zero) others.push_back(eig.eigenvalues(k) - eig.eigenvalues(zero));
    std::sort(others.begin(), others.end());
    out.push_back({detail::ms_label(-1), -1, 0, others[0]});
    out.push_back({detail::ms_label(+1), +1, 0, others[1]});
    return out;
  }

  if (n != 9) throw InvalidArgument("transition_frequencies: nuclear-resolved mode needs a 9-level system");

  std::vector<double> w0(9);
  for (int k = 0; k < 9; ++k) w0[k] = detail::electron_density(eig.eigenvectors.col(k))(1, 1).real();
  std::vector<int> idx(9);
  std::iota(idx.begin(), idx.end(), 0);
  std::stable_sort(idx.begin(), idx.end(), [&](int a, int b) { return w0[a] > w0[b]; });
  std::vector<int> zero(idx.begin(), idx.begin() + 3);
  std::vector<int> rest(idx.begin() + 3, idx.end());
  for (int k : zero)
    if (w0[k] < 0.5) throw DegenerateLabeling("transition_frequencies: ambiguous ms=0 manifold", w0);
  // eigenvalues are ascending, so index order is energy order
  std::sort(rest.begin(), rest.end());
  const std::vector<int> lower(rest.begin(), rest.begin() + 3);
  const std::vector<int> upper(rest.begin() + 3, rest.end());

  // Each manifold must share one electron state.
  auto check_manifold = [&](const std::vector<int>& group) {
    Eigen::Matrix3cd mean = Eigen::Matrix3cd::Zero();
    for (int k : group) mean += detail::electron_density(eig.eigenvectors.col(k)) / 3.0;
    const auto top = eigensolve_hermitian(mean).eigenvectors.col(2);
    std::vector<double> weights;
    for (int k : group) {
      const Eigen::Matrix3cd rho = detail::electron_density(eig.eigenvectors.col(k));
      weights.push_back(top.dot(rho * top).real());
    }
    for (double w : weights)
      if (w < 0.5) throw DegenerateLabeling("transition_frequencies: ambiguous electron manifold", weights);
  };
  check_manifold(lower);
  check_manifold(upper);

  // index 0,1,2 of the nuclear basis is m_I = +1, 0, -1
  auto nuclear_labels = [&](const std::vector<int>& group) {
    std::vector<int> labels;
    std::vector<double> pops;
    for (int k : group) {
      const auto p = detail::nuclear_populations(eig.eigenvectors.col(k));
      Eigen::Index arg = 0;
      p.maxCoeff(&arg);
      pops.push_back(p(arg));
      labels.push_back(1 - static_cast<int>(arg));
    }
    for (double p : pops)
      if (p < 0.5) throw DegenerateLabeling("transition_frequencies: ambiguous m_I label", pops);
    auto sorted = labels;
    std::sort(sorted.begin(), sorted.end());
    if (sorted != std::vector<int>{-1, 0, 1})
      throw DegenerateLabeling("transition_frequencies: m_I labels are not a permutation", pops);
    return labels;
  };
  const auto zero_labels = nuclear_labels(zero);
  auto emit = [&](const std::vector<int>& group, int ms) {
    const auto labels = nuclear_labels(group);
    std::vector<Transition> lines;
    for (size_t a = 0; a < 3; ++a) {
      const auto it = std::find(zero_labels.begin(), zero_labels.end(), labels[a]);
      const int base = zero[static_cast<size_t>(it - zero_labels.begin())];
      const int mi = labels[a];
      lines.push_back({detail::ms_label(ms) + " mI=" + (mi > 0 ? "+1" : mi < 0 ? "-1" : "0"), ms, mi,
                       eig.eigenvalues(group[a]) - eig.eigenvalues(base)});
    }
    std::sort(lines.begin(), lines.end(),
              [](const Transition& a, const Transition& b) { return a.frequency < b.frequency; });
    out.insert(out.end(), lines.begin(), lines.end());
  };
  emit(lower, -1);
  emit(upper, +1);
  return out;
}

/// (f-, f+) in MHz for a field of `magnitude` Gauss tilted `theta_deg` off the NV axis.
inline std::pair<double, double> electron_transitions(double magnitude, double theta_deg,
                                                      const PhysicalConstants& c) {
  const auto eig = eigensolve_hermitian(build_electron_hamiltonian(FieldVector::from_polar(magnitude, theta_deg), c));
  const auto t = transition_frequencies(eig, TransitionMode::ElectronOnly);
  return {t[0].frequency, t[1].frequency};
}

}  // namespace nvmag::spin
