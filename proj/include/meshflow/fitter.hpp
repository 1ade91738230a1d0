#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <vector>

#include "json.hpp"

#include "meshflow/grid.hpp"
#include "meshflow/integrator.hpp"
#include "meshflow/losses.hpp"
#include "meshflow/mesh.hpp"

namespace meshflow {

struct StageConfig {
  int max_iters = 200;
  /// Initial trial step of the line search; adapted during the run.
  double learning_rate = 5e-5;
  /// Stop when the relative loss change over the last 10 accepted steps is below this.
  double tolerance = 1e-6;
};

/// Per-case two-stage fit settings.
struct FitConfig {
  StageConfig linear{300, 5e-5, 1e-7};
  StageConfig flow{200, 5e-5, 1e-6};
  /// Flow-norm clip threshold (normalized units per unit time).
  double alpha = 0.0075;
  std::uint64_t seed = 0;
  LossWeights weights;
  GridDims field_dims{128, 128, 128};
  IntegrationConfig integration;
  /// Global-norm cap on the volume term's share of the flow gradient.
  double volume_grad_clip = 1.0;
  /// Heavy-ball coefficient of the flow-stage descent direction.
  double momentum = 0.5;
  /// Gaussian smoothing (in voxels) applied to the flow-stage search direction;
  /// 0 disables it.
  double smoothing_sigma = 0.0;
  /// Vertices carrying the volume loss (all when unset).
  std::optional<std::vector<std::uint32_t>> volume_subset;

  void validate() const;
};

/// Unknown keys are rejected. Keys that are absent keep their defaults, except
/// "weights", which must list all six terms when present.
FitConfig fit_config_from_json(const nlohmann::json& j);
nlohmann::json fit_config_to_json(const FitConfig& cfg);
FitConfig load_fit_config(const std::filesystem::path& path);

struct LinearFit {
  LinearTransform transform;
  std::vector<double> loss_history;  // chamfer per accepted iterate
  int iterations = 0;
  bool converged = false;
};

/// Stage 1: descend on the 9 linear parameters from the identity, minimizing
/// the per-structure L1 chamfer of the transformed template against the target.
/// Throws OptimizationError on a non-finite loss.
LinearFit fit_linear(const TriangleMesh& tmpl, const TriangleMesh& target, const FitConfig& cfg);

struct FitResult {
  LinearTransform linear;
  VectorField field;  // clipped
  DeformationTrace trace;
  std::vector<LossReport> loss_history;  // one report per accepted iterate
  int iterations = 0;
  bool converged = false;
};

/// Stage 2: optimize a zero-initialized voxel velocity field by line-searched
/// descent on the full weighted loss of the integrated template. The field is
/// re-clipped to alpha after every update.
FitResult fit_flow(const TriangleMesh& tmpl, const TriangleMesh& target,
                   const LinearTransform& linear, const FitConfig& cfg);

/// Gradient of the total loss through loss terms, final positions, RK4 steps,
/// trilinear samples, per-voxel clipping and the linear transform. The
/// `*_volume` members hold the volume term's share of each gradient (already
/// included in the totals).
struct AdjointGradient {
  LossReport report;
  VectorField d_field;
  std::array<double, LinearTransform::kNumParams> d_linear{};
  VectorField d_field_volume;
  std::array<double, LinearTransform::kNumParams> d_linear_volume{};
};

/// `field` is the unclipped parameter field; clipping at cfg.alpha is part of
/// the differentiated forward map.
AdjointGradient adjoint_gradient(const TriangleMesh& tmpl, const TriangleMesh& target,
                                 const VectorField& field, const LinearTransform& linear,
                                 const FitConfig& cfg);

/// Forward map used by the fitter: loss of the template after linear transform,
/// clipping, and integration.
LossReport evaluate_fit(const TriangleMesh& tmpl, const TriangleMesh& target,
                        const VectorField& field, const LinearTransform& linear,
                        const FitConfig& cfg);

/// Apply the linear transform, then integrate through `field` as given. Works
/// for any template, not only the one used while fitting.
TriangleMesh deform(const TriangleMesh& tmpl, const LinearTransform& linear,
                    const VectorField& field, const IntegrationConfig& cfg);

/// Separable Gaussian smoothing of each channel (sigma in voxels, clamped borders).
VectorField smooth_field(const VectorField& field, double sigma);

nlohmann::json linear_transform_to_json(const LinearTransform& t);
LinearTransform linear_transform_from_json(const nlohmann::json& j);

}  // namespace meshflow
