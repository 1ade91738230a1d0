#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "meshflow/mesh.hpp"

namespace meshflow {

enum class Norm { L1, L2 };

/// Static k-d tree for exact nearest-neighbor queries under the L1 or L2 norm.
/// Among points at the same distance the lowest index wins, so results do not
/// depend on tree layout.
class PointTree {
 public:
  explicit PointTree(std::span<const Vec3> points);

  struct Hit {
    std::uint32_t index;
    double distance;
  };
  Hit nearest(const Vec3& q, Norm norm) const;

  std::size_t size() const { return points_.size(); }

 private:
  struct Node {
    std::uint32_t begin, end;  // range into order_
    std::uint32_t left, right;
    int axis;
    double split;
    bool leaf;
  };
  std::uint32_t build(std::uint32_t begin, std::uint32_t end, int depth);

  std::vector<Vec3> points_;
  std::vector<std::uint32_t> order_;
  std::vector<Node> nodes_;
};

}  // namespace meshflow
