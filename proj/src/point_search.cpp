#include "meshflow/point_search.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

namespace meshflow {

namespace {

double dist(const Vec3& a, const Vec3& b, Norm norm) {
  return norm == Norm::L1 ? (a - b).cwiseAbs().sum() : (a - b).norm();
}

}  // namespace

PointTree::PointTree(std::span<const Vec3> points) : points_(points.begin(), points.end()) {
  order_.resize(points_.size());
  for (std::size_t i = 0; i < order_.size(); ++i) order_[i] = static_cast<std::uint32_t>(i);
  if (!points_.empty()) {
    nodes_.reserve(2 * points_.size() / 8 + 2);
    build(0, static_cast<std::uint32_t>(points_.size()), 0);
  }
}

std::uint32_t PointTree::build(std::uint32_t begin, std::uint32_t end, int depth) {
  constexpr std::uint32_t kLeafSize = 8;
  const auto id = static_cast<std::uint32_t>(nodes_.size());
  nodes_.push_back({begin, end, 0, 0, 0, 0.0, true});
  if (end - begin <= kLeafSize) return id;

  Vec3 lo = points_[order_[begin]], hi = lo;
  for (std::uint32_t i = begin + 1; i < end; ++i) {
    lo = lo.cwiseMin(points_[order_[i]]);
    hi = hi.cwiseMax(points_[order_[i]]);
  }
  int axis = 0;
  (hi - lo).maxCoeff(&axis);
  (void)depth;
  const std::uint32_t mid = begin + (end - begin) / 2;
  std::nth_element(order_.begin() + begin, order_.begin() + mid, order_.begin() + end,
                   [&](std::uint32_t a, std::uint32_t b) {
                     const double ca = points_[a][axis], cb = points_[b][axis];
                     return ca < cb || (ca == cb && a < b);
                   });
  const double split = points_[order_[mid]][axis];
  const std::uint32_t left = build(begin, mid, depth + 1);
  const std::uint32_t right = build(mid, end, depth + 1);
  Node& n = nodes_[id];
  n.leaf = false;
  n.axis = axis;
  n.split = split;
  n.left = left;
  n.right = right;
  return id;
}

PointTree::Hit PointTree::nearest(const Vec3& q, Norm norm) const {
  Hit best{std::numeric_limits<std::uint32_t>::max(), std::numeric_limits<double>::infinity()};
  if (nodes_.empty()) return best;

  // (node, lower bound on distance to any point in it)
  struct Item {
    std::uint32_t node;
    double bound;
  };
  std::vector<Item> stack{{0, 0.0}};
  while (!stack.empty()) {
    const Item it = stack.back();
    stack.pop_back();
    if (it.bound > best.distance) continue;
    const Node& n = nodes_[it.node];
    if (n.leaf) {
      for (std::uint32_t i = n.begin; i < n.end; ++i) {
        const std::uint32_t p = order_[i];
        const double d = dist(q, points_[p], norm);
        if (d < best.distance || (d == best.distance && p < best.index)) best = {p, d};
      }
      continue;
    }
    // Left subtree holds coordinates <= split, right holds >= split.
    const double diff = q[n.axis] - n.split;
    const double plane = std::abs(diff);
    const std::uint32_t near = diff <= 0.0 ? n.left : n.right;
    const std::uint32_t far = diff <= 0.0 ? n.right : n.left;
    stack.push_back({far, std::max(it.bound, plane)});
    stack.push_back({near, it.bound});
  }
  return best;
}

}  // namespace meshflow
