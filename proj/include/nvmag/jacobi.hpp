#pragma once

#include <cmath>
#include <utility>

#include <Eigen/Dense>

#include "nvmag/errors.hpp"

namespace nvmag::linalg {

struct SymmetricEigen {
  Eigen::VectorXd values;   // unsorted, matching columns of `vectors`
  Eigen::MatrixXd vectors;  // orthonormal columns
  int sweeps = 0;
};

/// Cyclic Jacobi eigensolver for a real symmetric matrix.
///
/// Each sweep annihilates every off-diagonal pair (p, q) once with a plane
/// rotation. Iteration stops when the off-diagonal Frobenius norm falls below
/// `rel_tol * ||A||_F`; throws NumericError after `max_sweeps`.
inline SymmetricEigen jacobi_symmetric(Eigen::MatrixXd a, double rel_tol = 1e-12,
                                       int max_sweeps = 100) {
  const Eigen::Index n = a.rows();
  if (a.cols() != n) throw InvalidArgument("jacobi_symmetric: matrix must be square");

  Eigen::MatrixXd v = Eigen::MatrixXd::Identity(n, n);
  const double scale = a.norm();
  const double tol = rel_tol * (scale > 0.0 ? scale : 1.0);

  auto off_norm = [&] {
    double s = 0.0;
    for (Eigen::Index p = 0; p < n; ++p)
      for (Eigen::Index q = p + 1; q < n; ++q) s += 2.0 * a(p, q) * a(p, q);
    return std::sqrt(s);
  };

  int sweep = 0;
  for (; sweep < max_sweeps; ++sweep) {
    if (off_norm() <= tol) break;
    for (Eigen::Index p = 0; p < n - 1; ++p) {
      for (Eigen::Index q = p + 1; q < n; ++q) {
        const double apq = a(p, q);
        if (apq == 0.0) continue;
        const double app = a(p, p);
        const double aqq = a(q, q);
        // tan of the rotation angle, smaller root for stability
        const double tau = (aqq - app) / (2.0 * apq);
        const double t = (tau >= 0.0 ? 1.0 : -1.0) / (std::abs(tau) + std::sqrt(1.0 + tau * tau));
        const double c = 1.0 / std::sqrt(1.0 + t * t);
        const double s = t * c;

        for (Eigen::Index k = 0; k < n; ++k) {
          const double akp = a(k, p);
          const double akq = a(k, q);
          a(k, p) = c * akp - s * akq;
          a(k, q) = s * akp + c * akq;
        }
        for (Eigen::Index k = 0; k < n; ++k) {
          const double apk = a(p, k);
          const double aqk = a(q, k);
          a(p, k) = c * apk - s * aqk;
          a(q, k) = s * apk + c * aqk;
        }
        a(p, q) = 0.0;
        a(q, p) = 0.0;
        for (Eigen::Index k = 0; k < n; ++k) {
          const double vkp = v(k, p);
          const double vkq = v(k, q);
          v(k, p) = c * vkp - s * vkq;
          v(k, q) = s * vkp + c * vkq;
        }
      }
    }
  }
  const double final_off = off_norm();
  if (final_off > tol)
    throw NumericError("jacobi_symmetric: no convergence after " + std::to_string(max_sweeps) +
                           " sweeps",
                       final_off);

  return {a.diagonal(), std::move(v), sweep};
}

}  // namespace nvmag::linalg
