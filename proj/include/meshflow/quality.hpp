#pragma once

#include <cstdint>
#include <utility>
#include <vector>

#include "json.hpp"

#include "meshflow/grid.hpp"
#include "meshflow/mesh.hpp"

namespace meshflow {

// ---------------------------------------------------------------------------
// Self-intersecting faces

enum class SifKind {
  kElementInversion,   // faces sharing a vertex or edge overlap beyond it
  kInterpenetration,   // topologically disjoint faces touch or cross
};

const char* to_string(SifKind kind);

struct IntersectingPair {
  std::uint32_t a = 0, b = 0;  // a < b
  SifKind kind = SifKind::kInterpenetration;
  friend bool operator==(const IntersectingPair&, const IntersectingPair&) = default;
};

struct SifReport {
  std::size_t total_faces = 0;
  std::vector<std::uint32_t> sif_faces;  // sorted, each face once
  double sif_percent = 0.0;
  std::vector<IntersectingPair> pairs;  // sorted by (a, b)
  std::size_t inversion_pairs = 0;
  std::size_t interpenetration_pairs = 0;
};

/// Closed-set intersection test of two triangles (touching counts).
bool triangles_intersect(const Vec3& a0, const Vec3& a1, const Vec3& a2, const Vec3& b0,
                         const Vec3& b1, const Vec3& b2);

/// Whether faces f and g of `mesh` intersect beyond the vertices they share.
/// Sets `kind` from the topology of the pair when they do.
bool faces_intersect(const TriangleMesh& mesh, std::uint32_t f, std::uint32_t g, SifKind* kind);

/// All intersecting face pairs, found with a face BVH and exact predicates.
SifReport detect_self_intersections(const TriangleMesh& mesh);
/// Same result by testing every face pair; for verification on small meshes.
SifReport detect_self_intersections_brute_force(const TriangleMesh& mesh);

nlohmann::json sif_report_to_json(const SifReport& report);

// ---------------------------------------------------------------------------
// Voxel metrics

/// Throws ValidationError naming the first structure with an edge not used by
/// exactly two of its faces.
void require_watertight(const TriangleMesh& mesh);

/// Binary occupancy (1 inside, 0 outside) of one structure by ray parity along x.
ScalarField voxelize_structure(const TriangleMesh& mesh, std::uint32_t label, const GridDims& dims);
/// Union of the per-structure occupancies.
ScalarField voxelize(const TriangleMesh& mesh, const GridDims& dims);

struct OverlapScores {
  double dice = 0.0;
  double jaccard = 0.0;
};

/// Voxels with value > 0.5 are members. Throws UndefinedMetricError when both
/// sets are empty, ValidationError on dims mismatch.
OverlapScores dice_jaccard(const ScalarField& a, const ScalarField& b);

struct SurfaceDistances {
  double assd = 0.0;
  double hausdorff = 0.0;
};

/// Boundary voxels (members with a 6-neighbor outside the set or the grid),
/// exact Euclidean distance to the other boundary, scaled by `spacing`
/// (physical size of one voxel per axis). Throws UndefinedMetricError for an
/// empty set.
SurfaceDistances surface_distances(const ScalarField& a, const ScalarField& b, const Vec3& spacing);

struct SegmentationMetrics {
  double dice = 0.0;
  double jaccard = 0.0;
  double assd = 0.0;
  double hausdorff = 0.0;
};

SegmentationMetrics segmentation_metrics(const ScalarField& a, const ScalarField& b,
                                         const Vec3& spacing);

// ---------------------------------------------------------------------------
// Surfaces from segmentations

struct MarchingCubesOptions {
  double iso = 0.5;
  int smoothing_iterations = 5;
  double smoothing_lambda = 0.5;
  std::string label = "mesh";
};

/// Closed, outward-oriented iso-surface of the voxel samples (samples outside
/// the grid count as below iso). Face ambiguities separate the above-iso
/// corners. Returns a mesh without faces when the surface is empty.
TriangleMesh marching_cubes(const ScalarField& field, const MarchingCubesOptions& options = {});

/// Uniform Laplacian smoothing, x += lambda * L(x), repeated.
TriangleMesh laplacian_smooth(const TriangleMesh& mesh, int iterations, double lambda);

struct ShellThickness {
  double min = 0.0;
  double mean = 0.0;
};

/// Distance from every vertex of `inner` to the surface of `outer`.
ShellThickness shell_thickness(const TriangleMesh& inner, const TriangleMesh& outer);

}  // namespace meshflow
