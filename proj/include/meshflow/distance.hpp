#pragma once

#include <functional>
#include <vector>

#include <Eigen/Geometry>

#include "meshflow/grid.hpp"
#include "meshflow/mesh.hpp"

namespace meshflow {

using Box3 = Eigen::AlignedBox3d;

/// Closest point on the closed triangle (a, b, c) to p.
Vec3 closest_point_on_triangle(const Vec3& p, const Vec3& a, const Vec3& b, const Vec3& c);

/// Bounding-volume hierarchy over the faces of a mesh (axis-aligned boxes,
/// median split on the longest centroid axis).
class FaceBvh {
 public:
  explicit FaceBvh(const TriangleMesh& mesh);

  struct Nearest {
    double distance = 0.0;
    std::uint32_t face = 0;
    Vec3 point = Vec3::Zero();
  };
  /// Exact nearest surface point. Equal distances resolve to the lowest face index.
  Nearest nearest(const Vec3& p) const;

  /// Calls visit(face) for every face whose box overlaps `query`.
  void overlapping(const Box3& query, const std::function<void(std::uint32_t)>& visit) const;

  const Box3& face_box(std::uint32_t f) const { return boxes_[f]; }

 private:
  struct Node {
    Box3 box;
    std::uint32_t left = 0, right = 0;  // children when internal
    std::uint32_t begin = 0, end = 0;   // range into order_ when leaf
    bool leaf = false;
  };
  std::uint32_t build(std::uint32_t begin, std::uint32_t end);

  const TriangleMesh* mesh_;
  std::vector<Box3> boxes_;
  std::vector<Vec3> centroids_;
  std::vector<std::uint32_t> order_;
  std::vector<Node> nodes_;
};

/// Exact unsigned distance from every voxel center to the mesh surface.
/// Throws ValidationError for a mesh without faces.
ScalarField unsigned_distance_map(const TriangleMesh& mesh, const GridDims& dims);

/// Distance from p to the nearest point of the mesh surface (BVH query).
double distance_to_mesh(const FaceBvh& bvh, const Vec3& p);

}  // namespace meshflow
