#pragma once

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <numbers>
#include <string>
#include <vector>

#include "lipimm/error.hpp"

namespace lipimm {

using Vec = Eigen::VectorXd;
using Mat = Eigen::MatrixXd;

/// A k-dimensional linear subspace of R^n, stored as an orthonormal n×k frame.
class Subspace {
 public:
  Subspace() = default;

  const Mat& frame() const { return frame_; }
  int ambient_dim() const { return static_cast<int>(frame_.rows()); }
  int dim() const { return static_cast<int>(frame_.cols()); }
  Mat projector() const { return frame_ * frame_.transpose(); }

  /// Orthogonal complement, as a deterministic Householder completion of the frame.
  Subspace complement() const;

  /// Trusts that `frame` is orthonormal up to roundoff; re-orthonormalizes it.
  static Subspace from_orthonormal(const Mat& frame);

 private:
  explicit Subspace(Mat frame) : frame_(std::move(frame)) {}
  friend Subspace orthonormalize(const Mat& raw);
  Mat frame_;
};

inline Subspace orthonormalize(const Mat& raw) {
  const auto n = raw.rows(), k = raw.cols();
  if (k < 1 || n <= k)
    fail(ErrorKind::dimension_mismatch,
         "frame must be n×k with 1 <= k < n, got " + std::to_string(n) + "x" + std::to_string(k));
  if (!raw.allFinite()) fail(ErrorKind::invalid_input, "frame has non-finite entries");
  Eigen::JacobiSVD<Mat> svd(raw);
  const double smin = svd.singularValues()(k - 1);
  if (smin <= 1e-10) fail(ErrorKind::degenerate_frame, "frame is rank deficient");
  Eigen::HouseholderQR<Mat> qr(raw);
  Mat q = qr.householderQ() * Mat::Identity(n, k);
  const Mat r = qr.matrixQR();
  for (Eigen::Index i = 0; i < k; ++i)
    if (r(i, i) < 0) q.col(i) = -q.col(i);
  return Subspace(std::move(q));
}

inline Subspace Subspace::from_orthonormal(const Mat& frame) { return orthonormalize(frame); }

inline Subspace Subspace::complement() const {
  const auto n = frame_.rows(), k = frame_.cols();
  Eigen::HouseholderQR<Mat> qr(frame_);
  Mat full = qr.householderQ() * Mat::Identity(n, n);
  return orthonormalize(full.rightCols(n - k));
}

/// Entrywise projector comparison, which ignores the choice of frame.
inline bool same_subspace(const Subspace& a, const Subspace& b, double tol = 1e-10) {
  if (a.ambient_dim() != b.ambient_dim() || a.dim() != b.dim()) return false;
  return (a.projector() - b.projector()).cwiseAbs().maxCoeff() <= tol;
}

inline void require_same_grassmannian(const Subspace& a, const Subspace& b) {
  if (a.ambient_dim() != b.ambient_dim() || a.dim() != b.dim())
    fail(ErrorKind::dimension_mismatch,
         "subspaces live in different Grassmannians: G(" + std::to_string(a.ambient_dim()) + "," +
             std::to_string(a.dim()) + ") vs G(" + std::to_string(b.ambient_dim()) + "," +
             std::to_string(b.dim()) + ")");
}

/// Principal angles in ascending order, each in [0, π/2].
using PrincipalAngles = std::vector<double>;

// Cosines come from E^T G and sines from (I - E E^T) G; both share right
// singular vectors, so pairing them by rank is exact. Small angles are read
// off the sine, large ones off the cosine, which keeps full relative accuracy.
inline PrincipalAngles principal_angles(const Subspace& e, const Subspace& g) {
  require_same_grassmannian(e, g);
  const Mat& E = e.frame();
  const Mat& G = g.frame();
  const Mat c = E.transpose() * G;
  const Mat s = G - E * c;
  Eigen::JacobiSVD<Mat> csvd(c);
  Eigen::JacobiSVD<Mat> ssvd(s);
  const Vec cs = csvd.singularValues();  // descending
  const Vec ss = ssvd.singularValues();  // descending
  const int k = e.dim();
  PrincipalAngles th(k);
  for (int i = 0; i < k; ++i) {
    const double cosv = std::clamp(cs(i), 0.0, 1.0);
    const double sinv = std::clamp(ss(k - 1 - i), 0.0, 1.0);
    th[i] = cosv > std::numbers::sqrt2 / 2 ? std::asin(sinv) : std::acos(cosv);
  }
  std::sort(th.begin(), th.end());
  return th;
}

inline double geodesic_distance(const Subspace& e, const Subspace& g) {
  double acc = 0;
  for (double t : principal_angles(e, g)) acc += t * t;
  return std::sqrt(acc);
}

/// Geodesic distance on G(n,1) between the lines spanned by two nonzero vectors.
inline double line_distance(const Vec& a, const Vec& b) {
  const double na = a.norm(), nb = b.norm();
  if (na == 0 || nb == 0) fail(ErrorKind::invalid_input, "zero vector does not span a line");
  const double c = std::abs(a.dot(b)) / (na * nb);
  const double s = (b / nb - (a / na) * (a.dot(b) / (na * nb))).norm();
  return std::atan2(s, c);
}

/// Tangent vector at `base`: an n×k matrix with base^T · delta = 0.
struct GrassmannTangent {
  Subspace base;
  Mat delta;

  double norm() const { return delta.norm(); }
};

/// Projects an arbitrary n×k matrix onto the horizontal space at `base`.
inline GrassmannTangent make_tangent(const Subspace& base, const Mat& raw) {
  if (raw.rows() != base.ambient_dim() || raw.cols() != base.dim())
    fail(ErrorKind::dimension_mismatch, "tangent shape does not match its base");
  const Mat& Y = base.frame();
  return {base, raw - Y * (Y.transpose() * raw)};
}

inline constexpr double kInjectivityRadius = std::numbers::pi / 2;

inline GrassmannTangent log_map(const Subspace& base, const Subspace& target) {
  require_same_grassmannian(base, target);
  const auto th = principal_angles(base, target);
  if (th.back() >= kInjectivityRadius - 1e-10)
    fail(ErrorKind::cut_locus, "target is at principal angle π/2 from base");
  const Mat& Y = base.frame();
  const Mat& X = target.frame();
  const Mat ytx = Y.transpose() * X;
  const Mat m = (X - Y * ytx) * ytx.inverse();
  Eigen::JacobiSVD<Mat> svd(m, Eigen::ComputeThinU | Eigen::ComputeThinV);
  const Vec sig = svd.singularValues().unaryExpr([](double s) { return std::atan(s); });
  Mat delta = svd.matrixU() * sig.asDiagonal() * svd.matrixV().transpose();
  return make_tangent(base, delta);
}

inline Subspace exp_map(const Subspace& base, const GrassmannTangent& v) {
  require_same_grassmannian(base, v.base);
  if (!same_subspace(base, v.base)) fail(ErrorKind::invalid_input, "tangent is based elsewhere");
  const Mat& Y = base.frame();
  // A horizontal vector at frame Yb reads as delta·(Yb^T Y) at frame Y.
  const Mat ydelta = make_tangent(base, v.delta * (v.base.frame().transpose() * Y)).delta;
  if (ydelta.norm() == 0) return base;
  Eigen::JacobiSVD<Mat> svd(ydelta, Eigen::ComputeThinU | Eigen::ComputeThinV);
  const Vec s = svd.singularValues();
  const Mat& V = svd.matrixV();
  const Mat& U = svd.matrixU();
  const Vec cs = s.unaryExpr([](double t) { return std::cos(t); });
  const Vec sn = s.unaryExpr([](double t) { return std::sin(t); });
  const Mat out = Y * V * cs.asDiagonal() * V.transpose() + U * sn.asDiagonal() * V.transpose();
  return orthonormalize(out);
}

inline double sphere_angle(const Vec& u, const Vec& v) {
  if (u.size() != v.size()) fail(ErrorKind::dimension_mismatch, "vectors differ in length");
  const double nu = u.norm(), nv = v.norm();
  if (nu == 0 || nv == 0) fail(ErrorKind::invalid_input, "zero vector has no direction");
  const Vec a = u / nu, b = v / nv;
  return 2.0 * std::atan2((a - b).norm(), (a + b).norm());
}

/// Points on the unit sphere S^{n-1}, stored as the columns of an n×count matrix.
class SpherePointSet {
 public:
  explicit SpherePointSet(Mat points) : points_(std::move(points)) {
    if (points_.cols() == 0) fail(ErrorKind::invalid_input, "empty point set");
    for (Eigen::Index i = 0; i < points_.cols(); ++i)
      if (std::abs(points_.col(i).norm() - 1.0) > 1e-12)
        fail(ErrorKind::invalid_input, "point " + std::to_string(i) + " is not a unit vector");
  }
  const Mat& points() const { return points_; }
  int dim() const { return static_cast<int>(points_.rows()); }
  int size() const { return static_cast<int>(points_.cols()); }

 private:
  Mat points_;
};

namespace detail {

inline double unit_angle(double dot) { return std::acos(std::clamp(dot, -1.0, 1.0)); }

inline double directed_hausdorff_brute(const Mat& a, const Mat& b) {
  double worst = 0;
  for (Eigen::Index i = 0; i < a.cols(); ++i) {
    double best = -2;
    for (Eigen::Index j = 0; j < b.cols(); ++j) best = std::max(best, a.col(i).dot(b.col(j)));
    // Recover the small angle accurately from the nearest point itself.
    double ang = unit_angle(best);
    if (best > 0.99) {
      double m = 4;
      for (Eigen::Index j = 0; j < b.cols(); ++j) m = std::min(m, (a.col(i) - b.col(j)).norm());
      ang = 2.0 * std::asin(std::min(1.0, m / 2));
    }
    worst = std::max(worst, ang);
  }
  return worst;
}

// On S^1 the nearest point of a set is one of the two circular neighbours in
// angular order, so a sorted sweep gives the exact directed distance.
inline double directed_hausdorff_circle(const Mat& a, const Mat& b) {
  std::vector<double> ang(b.cols());
  for (Eigen::Index j = 0; j < b.cols(); ++j) ang[j] = std::atan2(b(1, j), b(0, j));
  std::sort(ang.begin(), ang.end());
  const double two_pi = 2 * std::numbers::pi;
  auto gap = [&](double x, double y) {
    double d = std::fmod(std::abs(x - y), two_pi);
    return std::min(d, two_pi - d);
  };
  double worst = 0;
  for (Eigen::Index i = 0; i < a.cols(); ++i) {
    const double x = std::atan2(a(1, i), a(0, i));
    auto it = std::lower_bound(ang.begin(), ang.end(), x);
    const double hi = it == ang.end() ? ang.front() : *it;
    const double lo = it == ang.begin() ? ang.back() : *(it - 1);
    worst = std::max(worst, std::min(gap(x, hi), gap(x, lo)));
  }
  return worst;
}

}  // namespace detail

inline double directed_hausdorff(const SpherePointSet& a, const SpherePointSet& b) {
  if (a.dim() != b.dim()) fail(ErrorKind::dimension_mismatch, "point sets on different spheres");
  if (a.dim() == 2) return detail::directed_hausdorff_circle(a.points(), b.points());
  return detail::directed_hausdorff_brute(a.points(), b.points());
}

inline double hausdorff_distance(const SpherePointSet& a, const SpherePointSet& b) {
  return std::max(directed_hausdorff(a, b), directed_hausdorff(b, a));
}

}  // namespace lipimm
