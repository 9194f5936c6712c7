#pragma once

// Minimum-volume enclosing ellipse of a planar point set.

#include <algorithm>
#include <cmath>
#include <numbers>
#include <vector>

#include <Eigen/Dense>

#include "nvmag/errors.hpp"

namespace nvmag::geom {

using Eigen::Matrix2d;
using Eigen::Vector2d;

/// Convex hull by Andrew's monotone chain, counter-clockwise, collinear
/// points dropped.
inline std::vector<Vector2d> convex_hull(std::vector<Vector2d> pts) {
  std::sort(pts.begin(), pts.end(), [](const Vector2d& a, const Vector2d& b) {
    return a.x() < b.x() || (a.x() == b.x() && a.y() < b.y());
  });
  pts.erase(std::unique(pts.begin(), pts.end()), pts.end());
  if (pts.size() < 3) return pts;
  auto cross = [](const Vector2d& o, const Vector2d& a, const Vector2d& b) {
    return (a.x() - o.x()) * (b.y() - o.y()) - (a.y() - o.y()) * (b.x() - o.x());
  };
  std::vector<Vector2d> hull(2 * pts.size());
  size_t k = 0;
  for (const auto& p : pts) {
    while (k >= 2 && cross(hull[k - 2], hull[k - 1], p) <= 0.0) --k;
    hull[k++] = p;
  }
  const size_t lower = k + 1;
  for (size_t i = pts.size() - 1; i-- > 0;) {
    while (k >= lower && cross(hull[k - 2], hull[k - 1], pts[i]) <= 0.0) --k;
    hull[k++] = pts[i];
  }
  hull.resize(k - 1);
  return hull;
}

/// Ellipse {x : (x - center)^T shape (x - center) <= 1}.
struct Ellipse {
  Vector2d center;
  Matrix2d shape;
  int iterations = 0;

  double area() const { return std::numbers::pi / std::sqrt(shape.determinant()); }
  double level(const Vector2d& x) const { return (x - center).dot(shape * (x - center)); }
};

struct MveeOptions {
  double tolerance = 1e-8;  // on the duality gap
  int max_iterations = 10000;
};

/// Khachiyan's algorithm with Todd-Yildirim away steps. The result is
/// rescaled so the outermost input point lies exactly on the boundary.
inline Ellipse minimum_volume_ellipse(const std::vector<Vector2d>& points, const MveeOptions& opt = {}) {
  if (points.size() < 3) throw DegenerateEllipse("enclosing ellipse needs at least 3 non-collinear points");

  // Work on the hull in normalized coordinates; the MVEE is affine-equivariant.
  Vector2d mean = Vector2d::Zero();
  for (const auto& p : points) mean += p;
  mean /= static_cast<double>(points.size());
  double scale = 0.0;
  for (const auto& p : points) scale = std::max(scale, (p - mean).cwiseAbs().maxCoeff());
  if (!(scale > 0.0)) throw DegenerateEllipse("enclosing ellipse: all points coincide");

  std::vector<Vector2d> local;
  local.reserve(points.size());
  for (const auto& p : points) local.emplace_back((p - mean) / scale);
  const auto hull = convex_hull(std::move(local));
  if (hull.size() < 3) throw DegenerateEllipse("enclosing ellipse: points are collinear");
  double hull_area = 0.0;
  for (size_t i = 0; i < hull.size(); ++i) {
    const auto& a = hull[i];
    const auto& b = hull[(i + 1) % hull.size()];
    hull_area += a.x() * b.y() - a.y() * b.x();
  }
  if (!(hull_area > 1e-12)) throw DegenerateEllipse("enclosing ellipse: points are (nearly) collinear");

  const auto m = static_cast<Eigen::Index>(hull.size());
  Eigen::Matrix<double, 3, Eigen::Dynamic> q(3, m);
  for (Eigen::Index i = 0; i < m; ++i) q.col(i) << hull[static_cast<size_t>(i)], 1.0;
  Eigen::VectorXd u = Eigen::VectorXd::Constant(m, 1.0 / static_cast<double>(m));
  constexpr double kDim = 3.0;  // lifted dimension d + 1

  int it = 0;
  for (; it < opt.max_iterations; ++it) {
    const Eigen::Matrix3d x = q * u.asDiagonal() * q.transpose();
    const Eigen::Matrix3d xinv = x.inverse();
    const Eigen::VectorXd g = (q.transpose() * xinv * q).diagonal();
    Eigen::Index jp = 0;
    const double gmax = g.maxCoeff(&jp);
    Eigen::Index jm = -1;
    double gmin = 1e300;
    for (Eigen::Index i = 0; i < m; ++i)
      if (u(i) > 0.0 && g(i) < gmin) {
        gmin = g(i);
        jm = i;
      }
    const double eps_plus = gmax / kDim - 1.0;
    const double eps_minus = 1.0 - gmin / kDim;
    if (std::max(eps_plus, eps_minus) <= opt.tolerance) break;
    if (eps_plus >= eps_minus) {
      const double beta = (gmax - kDim) / (kDim * (gmax - 1.0));
      u *= 1.0 - beta;
      u(jp) += beta;
    } else {
      const double uj = u(jm);
      double beta = (kDim - gmin) / (kDim * (gmin - 1.0));
      if (uj < 1.0) beta = std::min(beta, uj / (1.0 - uj));
      u *= 1.0 + beta;
      u(jm) -= beta;
      if (u(jm) < 1e-300) u(jm) = 0.0;
    }
  }

  const Eigen::Matrix<double, 2, Eigen::Dynamic> p = q.topRows(2);
  const Vector2d c = p * u;
  const Matrix2d cov = p * u.asDiagonal() * p.transpose() - c * c.transpose();
  Matrix2d a = cov.inverse() / 2.0;
  double rmax = 0.0;
  for (const auto& h : hull) rmax = std::max(rmax, (h - c).dot(a * (h - c)));
  a /= rmax;

  Ellipse e;
  e.center = mean + scale * c;
  e.shape = a / (scale * scale);
  e.shape = 0.5 * (e.shape + e.shape.transpose());
  e.iterations = it;
  return e;
}

}  // namespace nvmag::geom
