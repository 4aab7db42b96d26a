#pragma once

#include <Eigen/Dense>

#include <algorithm>
#include <boost/geometry.hpp>
#include <boost/geometry/index/rtree.hpp>
#include <boost/iterator/function_output_iterator.hpp>
#include <iterator>
#include <utility>
#include <vector>

#include "lipimm/error.hpp"

namespace lipimm {

namespace bg = boost::geometry;
namespace bgi = boost::geometry::index;

/// Nearest-point and ball queries over the columns of a point matrix (up to three rows),
/// backed by a packed R-tree. Lower-dimensional points are padded with zeros.
class PointIndex {
 public:
  explicit PointIndex(const Eigen::MatrixXd& points) {
    if (points.rows() < 1 || points.rows() > 3)
      fail(ErrorKind::invalid_input, "spatial queries support one to three dimensions");
    if (points.cols() == 0) fail(ErrorKind::invalid_input, "no points to index");
    std::vector<Value> values;
    values.reserve(points.cols());
    for (Eigen::Index i = 0; i < points.cols(); ++i) values.emplace_back(to_point(points.col(i)), static_cast<int>(i));
    tree_ = Tree(values.begin(), values.end());
  }

  /// Index of the nearest point; ties go to the lowest index.
  int nearest(const Eigen::VectorXd& x) const {
    const Point p = to_point(x);
    std::vector<Value> hit;
    tree_.query(bgi::nearest(p, 1), std::back_inserter(hit));
    // Re-query a hair wider so ties resolve to the lowest index despite rounding in the box.
    const double d = bg::distance(p, hit.front().first);
    const auto ties = within(x, d * (1 + 1e-12) + 1e-300);
    return ties.empty() ? hit.front().second : ties.front();
  }

  /// Indices of the points within distance `radius` of x, ascending.
  std::vector<int> within(const Eigen::VectorXd& x, double radius) const {
    const Point p = to_point(x);
    const Box box(Point(bg::get<0>(p) - radius, bg::get<1>(p) - radius, bg::get<2>(p) - radius),
                  Point(bg::get<0>(p) + radius, bg::get<1>(p) + radius, bg::get<2>(p) + radius));
    std::vector<int> out;
    tree_.query(bgi::intersects(box), boost::make_function_output_iterator([&](const Value& v) {
                  if (bg::distance(p, v.first) <= radius) out.push_back(v.second);
                }));
    std::sort(out.begin(), out.end());
    return out;
  }

 private:
  static constexpr int kLeaf = 16;
  using Point = bg::model::point<double, 3, bg::cs::cartesian>;
  using Box = bg::model::box<Point>;
  using Value = std::pair<Point, int>;
  using Tree = bgi::rtree<Value, bgi::rstar<kLeaf>>;

  static Point to_point(const Eigen::VectorXd& x) {
    double c[3] = {0, 0, 0};
    for (Eigen::Index d = 0; d < x.size(); ++d) c[d] = x(d);
    return Point(c[0], c[1], c[2]);
  }

  Tree tree_;
};

}  // namespace lipimm
