#pragma once

#include <filesystem>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"

#include "meshflow/integrator.hpp"
#include "meshflow/mesh.hpp"

namespace meshflow {

/// Weights of the six objective terms. Defaults are the published training weights.
struct LossWeights {
  double chamfer = 1.0;
  double chamfer_normal = 0.20;
  double volume = 0.005;
  double edge = 50.0;
  double face_normal = 1.0;
  double laplacian = 30.0;

  /// Throws ParameterError for a negative or non-finite weight.
  void validate() const;
};

/// Parse a JSON object with exactly the six weight keys. Missing or unknown
/// keys raise ParameterError.
LossWeights loss_weights_from_json(const nlohmann::json& j);
nlohmann::json loss_weights_to_json(const LossWeights& w);
LossWeights load_loss_weights(const std::filesystem::path& path);

struct LossTerms {
  double chamfer = 0.0;
  double chamfer_normal = 0.0;
  double volume = 0.0;
  double edge = 0.0;
  double face_normal = 0.0;
  double laplacian = 0.0;
};

/// Dot product of weights and terms.
double weighted_total(const LossWeights& w, const LossTerms& t);

struct LossReport {
  LossTerms terms;
  std::map<std::string, double> chamfer_by_structure;
  double total = 0.0;
};

// ---------------------------------------------------------------------------
// Individual terms. The `*_accumulate` variants add `scale` times the gradient
// with respect to the first argument's positions into `grad`; nearest-neighbor
// matches are taken as fixed for the gradient.

/// Symmetric L1 chamfer distance: nearest neighbors are found under the L1 norm
/// (ties go to the lowest index). Throws ValidationError for an empty set.
double chamfer_l1(std::span<const Vec3> p1, std::span<const Vec3> p2);
double chamfer_l1_accumulate(std::span<const Vec3> p1, std::span<const Vec3> p2,
                             std::span<Vec3> grad, double scale);

/// Mean over structures of chamfer_l1 between the vertex sets of each
/// structure. Throws ValidationError naming labels that are not shared.
double chamfer_per_structure(const TriangleMesh& tmpl, const TriangleMesh& target,
                             std::map<std::string, double>* breakdown = nullptr);
double chamfer_per_structure_accumulate(const TriangleMesh& tmpl, const TriangleMesh& target,
                                        std::span<Vec3> grad, double scale,
                                        std::map<std::string, double>* breakdown = nullptr);

/// Oriented normal consistency: mean of L(P,Q) and L(Q,P) where
/// L(P,Q) = mean over x in P of 1 - n(x).n(y), y the L2-nearest point of Q.
/// Opposite normals contribute 2. Throws ParameterError for a non-unit normal.
double normal_consistency(std::span<const Vec3> p, std::span<const Vec3> p_normals,
                          std::span<const Vec3> q, std::span<const Vec3> q_normals);

/// Normal consistency per shared structure using area-weighted vertex normals,
/// averaged over structures.
double normal_consistency_per_structure(const TriangleMesh& tmpl, const TriangleMesh& target);
double normal_consistency_accumulate(const TriangleMesh& tmpl, const TriangleMesh& target,
                                     std::span<Vec3> grad, double scale);

/// Mean of exp(-div_integral) over `subset` (all vertices when empty optional).
/// Throws StateError without a divergence integral, ValidationError for an
/// empty subset.
double volume_loss(const DeformationTrace& trace,
                   const std::optional<std::vector<std::uint32_t>>& subset = std::nullopt);
/// Adds scale * d(volume_loss)/d(div_integral) into `grad` (one entry per vertex).
double volume_loss_accumulate(const DeformationTrace& trace,
                              const std::optional<std::vector<std::uint32_t>>& subset,
                              std::span<double> grad, double scale);

/// Mean squared length over unique edges.
double edge_length_loss(const TriangleMesh& mesh);
double edge_length_accumulate(const TriangleMesh& mesh, std::span<Vec3> grad, double scale);

/// Mean over face pairs sharing an edge of 1 - cos(angle between face normals).
double face_normal_consistency_loss(const TriangleMesh& mesh);
double face_normal_consistency_accumulate(const TriangleMesh& mesh, std::span<Vec3> grad,
                                          double scale);

/// Mean squared norm of the uniform Laplacian. Throws ConnectivityError for an
/// isolated vertex.
double laplacian_loss(const TriangleMesh& mesh);
double laplacian_accumulate(const TriangleMesh& mesh, std::span<Vec3> grad, double scale);

// ---------------------------------------------------------------------------

struct LossOptions {
  /// Vertices that carry the volume loss; all vertices when unset.
  std::optional<std::vector<std::uint32_t>> volume_subset;
};

/// Evaluate all six terms on a deformed template. `trace` may be null only
/// when the volume weight is zero.
LossReport total_loss(const TriangleMesh& deformed, const TriangleMesh& target,
                      const DeformationTrace* trace, const LossWeights& weights,
                      const LossOptions& options = {});

struct LossGradient {
  LossReport report;
  /// d total / d position of each deformed-template vertex (all terms but volume).
  std::vector<Vec3> d_positions;
  /// d total / d div_integral of each vertex (volume term only).
  std::vector<double> d_div_integral;
};

LossGradient total_loss_gradient(const TriangleMesh& deformed, const TriangleMesh& target,
                                 const DeformationTrace* trace, const LossWeights& weights,
                                 const LossOptions& options = {});

}  // namespace meshflow
