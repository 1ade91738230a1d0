#include "meshflow/fitter.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <sstream>

#include "json.hpp"

#include "meshflow/error.hpp"

namespace meshflow {

using nlohmann::json;

// ---------------------------------------------------------------------------
// Configuration

namespace {

void validate_stage(const StageConfig& s, const char* name) {
  const std::string n(name);
  if (s.max_iters < 0) throw ParameterError(n + ".max_iters must be >= 0");
  if (!(s.learning_rate > 0.0) || !std::isfinite(s.learning_rate)) {
    throw ParameterError(n + ".learning_rate must be positive");
  }
  if (!(s.tolerance > 0.0) || !std::isfinite(s.tolerance)) {
    throw ParameterError(n + ".tolerance must be positive");
  }
}

StageConfig stage_from_json(const json& j, StageConfig s, const char* name) {
  if (!j.is_object()) throw ParameterError(std::string(name) + " must be an object");
  for (const auto& [key, value] : j.items()) {
    if (key == "max_iters") {
      s.max_iters = value.get<int>();
    } else if (key == "learning_rate") {
      s.learning_rate = value.get<double>();
    } else if (key == "tolerance") {
      s.tolerance = value.get<double>();
    } else {
      throw ParameterError("unknown key '" + key + "' in " + name);
    }
  }
  return s;
}

json stage_to_json(const StageConfig& s) {
  return {{"max_iters", s.max_iters},
          {"learning_rate", s.learning_rate},
          {"tolerance", s.tolerance}};
}

}  // namespace

void FitConfig::validate() const {
  validate_stage(linear, "linear");
  validate_stage(flow, "flow");
  if (!(alpha > 0.0) || !std::isfinite(alpha)) throw ParameterError("alpha must be positive");
  weights.validate();
  field_dims.validate();
  integration.validate();
  if (!(volume_grad_clip > 0.0)) throw ParameterError("volume_grad_clip must be positive");
  if (!(momentum >= 0.0 && momentum < 1.0)) throw ParameterError("momentum must be in [0, 1)");
  if (!(smoothing_sigma >= 0.0) || !std::isfinite(smoothing_sigma)) {
    throw ParameterError("smoothing_sigma must be >= 0");
  }
  if (volume_subset && volume_subset->empty()) {
    throw ParameterError("volume_subset must not be empty when given");
  }
}

FitConfig fit_config_from_json(const json& j) {
  if (!j.is_object()) throw ParameterError("fit config must be a JSON object");
  FitConfig c;
  try {
    for (const auto& [key, value] : j.items()) {
      if (key == "schema_version") {
        if (value.get<int>() != 1) throw ParameterError("unsupported fit config schema_version");
      } else if (key == "linear") {
        c.linear = stage_from_json(value, c.linear, "linear");
      } else if (key == "flow") {
        c.flow = stage_from_json(value, c.flow, "flow");
      } else if (key == "alpha") {
        c.alpha = value.get<double>();
      } else if (key == "seed") {
        c.seed = value.get<std::uint64_t>();
      } else if (key == "weights") {
        c.weights = loss_weights_from_json(value);
      } else if (key == "field_dims") {
        const auto d = value.get<std::vector<int>>();
        if (d.size() != 3) throw ParameterError("field_dims needs three extents");
        c.field_dims = {d[0], d[1], d[2]};
      } else if (key == "integration") {
        for (const auto& [k2, v2] : value.items()) {
          if (k2 == "n_steps") {
            c.integration.n_steps = v2.get<int>();
          } else if (k2 == "dt") {
            c.integration.dt = v2.get<double>();
          } else {
            throw ParameterError("unknown key '" + k2 + "' in integration");
          }
        }
      } else if (key == "volume_grad_clip") {
        c.volume_grad_clip = value.get<double>();
      } else if (key == "momentum") {
        c.momentum = value.get<double>();
      } else if (key == "smoothing_sigma") {
        c.smoothing_sigma = value.get<double>();
      } else if (key == "volume_subset") {
        if (value.is_null()) {
          c.volume_subset.reset();
        } else {
          c.volume_subset = value.get<std::vector<std::uint32_t>>();
        }
      } else {
        throw ParameterError("unknown fit config key '" + key + "'");
      }
    }
  } catch (const json::exception& e) {
    throw ParameterError(std::string("fit config: ") + e.what());
  }
  c.validate();
  return c;
}

json fit_config_to_json(const FitConfig& c) {
  json j;
  j["schema_version"] = 1;
  j["linear"] = stage_to_json(c.linear);
  j["flow"] = stage_to_json(c.flow);
  j["alpha"] = c.alpha;
  j["seed"] = c.seed;
  j["weights"] = loss_weights_to_json(c.weights);
  j["field_dims"] = {c.field_dims.nx, c.field_dims.ny, c.field_dims.nz};
  j["integration"] = {{"n_steps", c.integration.n_steps}, {"dt", c.integration.dt}};
  j["volume_grad_clip"] = c.volume_grad_clip;
  j["momentum"] = c.momentum;
  j["smoothing_sigma"] = c.smoothing_sigma;
  j["volume_subset"] = c.volume_subset ? json(*c.volume_subset) : json(nullptr);
  return j;
}

FitConfig load_fit_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot read config " + path.string());
  json j;
  try {
    j = json::parse(in);
  } catch (const json::parse_error& e) {
    throw FormatError(path.string() + ": " + e.what());
  }
  return fit_config_from_json(j);
}

json linear_transform_to_json(const LinearTransform& t) {
  auto v = [](const Vec3& x) { return json::array({x.x(), x.y(), x.z()}); };
  return {{"schema_version", 1},
          {"scale", v(t.scale)},
          {"rotation", v(t.rotation)},
          {"translation", v(t.translation)}};
}

LinearTransform linear_transform_from_json(const json& j) {
  LinearTransform t;
  try {
    auto v = [&](const char* key) {
      const auto a = j.at(key).get<std::vector<double>>();
      if (a.size() != 3) throw ParameterError(std::string(key) + " needs three values");
      return Vec3(a[0], a[1], a[2]);
    };
    t.scale = v("scale");
    t.rotation = v("rotation");
    t.translation = v("translation");
  } catch (const json::exception& e) {
    throw ParameterError(std::string("linear transform: ") + e.what());
  }
  t.validate();
  return t;
}

// ---------------------------------------------------------------------------
// Forward map

namespace {

IntegrationConfig forward_integration(const FitConfig& cfg) {
  IntegrationConfig ic = cfg.integration;
  ic.accumulate_divergence = true;
  ic.accumulate_area_rate = false;
  return ic;
}

std::vector<Vec3> transformed_vertices(const TriangleMesh& tmpl, const LinearTransform& t) {
  std::vector<Vec3> out(tmpl.num_vertices());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = t.apply(tmpl.vertices()[i]);
  return out;
}

LossOptions loss_options(const FitConfig& cfg) {
  LossOptions o;
  o.volume_subset = cfg.volume_subset;
  return o;
}

struct Evaluation {
  DeformationTrace trace;
  LossReport report;
};

// `clipped` must already satisfy the clip bound.
Evaluation evaluate_clipped(const TriangleMesh& tmpl, const TriangleMesh& target,
                            const VectorField& clipped, const LinearTransform& linear,
                            const FitConfig& cfg) {
  Evaluation e;
  const auto x0 = transformed_vertices(tmpl, linear);
  e.trace = integrate_points(x0, clipped, forward_integration(cfg));
  const TriangleMesh deformed = tmpl.with_vertices(e.trace.final_positions);
  e.report = total_loss(deformed, target, &e.trace, cfg.weights, loss_options(cfg));
  return e;
}

// ---------------------------------------------------------------------------
// Adjoint helpers

struct StagePoint {
  TrilinearStencil st;
  Mat3 jac;
};

StagePoint stage_point(const VectorField& f, const Vec3& p, Vec3& velocity) {
  StagePoint s{trilinear_stencil(f.dims(), p), Mat3::Zero()};
  velocity.setZero();
  for (int c = 0; c < 8; ++c) {
    const Vec3& fv = f[s.st.index[c]];
    velocity += s.st.weight[c] * fv;
    s.jac += fv * s.st.grad[c].transpose();
  }
  return s;
}

// Two stencils per axis (plus, minus) of the central-difference divergence and
// the divergence's spatial gradient.
struct DivStencil {
  std::array<TrilinearStencil, 6> st;
  Vec3 grad = Vec3::Zero();
};

DivStencil div_stencil(const VectorField& f, const Vec3& p, const Vec3& h) {
  DivStencil d;
  for (int i = 0; i < 3; ++i) {
    Vec3 xp = p, xm = p;
    xp[i] += h[i];
    xm[i] -= h[i];
    d.st[2 * i] = trilinear_stencil(f.dims(), xp);
    d.st[2 * i + 1] = trilinear_stencil(f.dims(), xm);
    const double inv = 1.0 / (2.0 * h[i]);
    for (int c = 0; c < 8; ++c) {
      d.grad += (inv * f[d.st[2 * i].index[c]][i]) * d.st[2 * i].grad[c];
      d.grad -= (inv * f[d.st[2 * i + 1].index[c]][i]) * d.st[2 * i + 1].grad[c];
    }
  }
  return d;
}

void scatter_div(const DivStencil& d, const Vec3& h, double coef, VectorField& g) {
  for (int i = 0; i < 3; ++i) {
    const double s = coef / (2.0 * h[i]);
    for (int c = 0; c < 8; ++c) {
      g[d.st[2 * i].index[c]][i] += s * d.st[2 * i].weight[c];
      g[d.st[2 * i + 1].index[c]][i] -= s * d.st[2 * i + 1].weight[c];
    }
  }
}

void scatter_velocity(const TrilinearStencil& st, const Vec3& kbar, VectorField& g) {
  for (int c = 0; c < 8; ++c) g[st.index[c]] += st.weight[c] * kbar;
}

// Positions at the start of every step (same update as integrate_points).
std::vector<std::vector<Vec3>> record_trajectory(const std::vector<Vec3>& x0,
                                                 const VectorField& f, const IntegrationConfig& ic) {
  const double dt = ic.dt;
  const double w[4] = {dt / 6.0, dt / 3.0, dt / 3.0, dt / 6.0};
  std::vector<std::vector<Vec3>> traj;
  traj.reserve(ic.n_steps);
  std::vector<Vec3> x = x0;
  for (int s = 0; s < ic.n_steps; ++s) {
    traj.push_back(x);
    for (auto& p1 : x) {
      const Vec3 k1 = sample_trilinear(f, p1);
      const Vec3 p2 = p1 + 0.5 * dt * k1;
      const Vec3 k2 = sample_trilinear(f, p2);
      const Vec3 p3 = p1 + 0.5 * dt * k2;
      const Vec3 k3 = sample_trilinear(f, p3);
      const Vec3 p4 = p1 + dt * k3;
      const Vec3 k4 = sample_trilinear(f, p4);
      p1 = p1 + w[0] * k1 + w[1] * k2 + w[2] * k3 + w[3] * k4;
    }
  }
  return traj;
}

using LinearGrad = std::array<double, LinearTransform::kNumParams>;

void accumulate_linear(const LinearTransform& t, const Mat3& r, const std::array<Mat3, 3>& dr,
                       const Vec3& x, const Vec3& lambda, LinearGrad& out) {
  const Vec3 q = x - LinearTransform::origin();
  const Vec3 sq = t.scale.cwiseProduct(q);
  const Vec3 rtl = r.transpose() * lambda;
  for (int k = 0; k < 3; ++k) {
    out[k] += q[k] * rtl[k];
    out[3 + k] += lambda.dot(dr[k] * sq);
    out[6 + k] += lambda[k];
  }
}

// Mean squared vertex displacement per unit change of each linear parameter.
// Dividing the gradient by it puts scale, rotation and translation on a common
// footing.
LinearGrad linear_metric(const LinearTransform& t, const std::array<Mat3, 3>& dr,
                         std::span<const Vec3> x) {
  LinearGrad m{};
  for (const Vec3& p : x) {
    const Vec3 q = p - LinearTransform::origin();
    const Vec3 sq = t.scale.cwiseProduct(q);
    for (int k = 0; k < 3; ++k) {
      m[k] += q[k] * q[k];
      m[3 + k] += (dr[k] * sq).squaredNorm();
      m[6 + k] += 1.0;
    }
  }
  for (double& v : m) v = std::max(v / static_cast<double>(x.size()), 1e-12);
  return m;
}

// Chain d/d(clipped) back to the raw field: identity at or below alpha,
// alpha/|u| (I - u u^T/|u|^2) above.
void clip_backward(const VectorField& raw, double alpha, VectorField& g) {
  for (std::size_t i = 0; i < raw.size(); ++i) {
    const double len = raw[i].norm();
    if (len <= alpha) continue;
    const Vec3 u = raw[i] / len;
    g[i] = (alpha / len) * (g[i] - u * u.dot(g[i]));
  }
}

struct Adjoint {
  LossReport report;
  VectorField d_clipped_main, d_clipped_volume;
  LinearGrad d_linear_main{}, d_linear_volume{};
};

Adjoint adjoint_clipped(const TriangleMesh& tmpl, const TriangleMesh& target,
                        const VectorField& clipped, const LinearTransform& linear,
                        const FitConfig& cfg) {
  const IntegrationConfig ic = forward_integration(cfg);
  const auto x0 = transformed_vertices(tmpl, linear);
  const DeformationTrace trace = integrate_points(x0, clipped, ic);
  const TriangleMesh deformed = tmpl.with_vertices(trace.final_positions);
  const LossGradient lg =
      total_loss_gradient(deformed, target, &trace, cfg.weights, loss_options(cfg));

  Adjoint out;
  out.report = lg.report;
  out.d_clipped_main = VectorField(clipped.dims());
  out.d_clipped_volume = VectorField(clipped.dims());

  bool any_main = false, any_volume = false;
  for (const auto& g : lg.d_positions) any_main = any_main || !g.isZero(0.0);
  for (double g : lg.d_div_integral) any_volume = any_volume || g != 0.0;
  if (!any_main && !any_volume) return out;

  const auto traj = record_trajectory(x0, clipped, ic);
  const double dt = ic.dt;
  const double wq[4] = {dt / 6.0, dt / 3.0, dt / 3.0, dt / 6.0};
  // p[q+1] = x + cq[q] * k[q]
  const double cq[3] = {0.5 * dt, 0.5 * dt, dt};
  const Vec3 h = clipped.dims().spacing();
  const Mat3 r = linear.rotation_matrix();
  const std::array<Mat3, 3> dr{linear.rotation_derivative(0), linear.rotation_derivative(1),
                               linear.rotation_derivative(2)};

  // Serial over vertices: the scatter order, and so the result, is fixed.
  for (std::size_t v = 0; v < x0.size(); ++v) {
    Vec3 lam_main = lg.d_positions[v];
    Vec3 lam_vol = Vec3::Zero();
    const double mu = lg.d_div_integral[v];
    const bool do_main = !lam_main.isZero(0.0);
    if (!do_main && mu == 0.0) continue;

    for (int s = ic.n_steps - 1; s >= 0; --s) {
      std::array<Vec3, 4> p;
      std::array<StagePoint, 4> sp;
      Vec3 k;
      p[0] = traj[s][v];
      for (int q = 0; q < 4; ++q) {
        sp[q] = stage_point(clipped, p[q], k);
        if (q < 3) p[q + 1] = p[0] + cq[q] * k;
      }

      auto backward = [&](Vec3& lam, double m, VectorField& g) {
        std::array<Vec3, 4> pbar;
        for (int q = 3; q >= 0; --q) {
          Vec3 kbar = wq[q] * lam;
          if (q < 3) kbar += cq[q] * pbar[q + 1];
          pbar[q] = sp[q].jac.transpose() * kbar;
          scatter_velocity(sp[q].st, kbar, g);
          if (m != 0.0) {
            const DivStencil ds = div_stencil(clipped, p[q], h);
            pbar[q] += (m * wq[q]) * ds.grad;
            scatter_div(ds, h, m * wq[q], g);
          }
        }
        lam += pbar[0] + pbar[1] + pbar[2] + pbar[3];
      };
      if (do_main) backward(lam_main, 0.0, out.d_clipped_main);
      if (mu != 0.0) backward(lam_vol, mu, out.d_clipped_volume);
    }
    const Vec3& xt = tmpl.vertices()[v];
    if (do_main) accumulate_linear(linear, r, dr, xt, lam_main, out.d_linear_main);
    if (mu != 0.0) accumulate_linear(linear, r, dr, xt, lam_vol, out.d_linear_volume);
  }
  return out;
}

double dot(const VectorField& a, const VectorField& b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i].dot(b[i]);
  return s;
}

double norm(const VectorField& a) { return std::sqrt(dot(a, a)); }

void check_finite(const LossReport& r, int iteration, const char* stage) {
  if (!std::isfinite(r.total)) {
    throw OptimizationError(std::string(stage) + " loss is not finite at iteration " +
                            std::to_string(iteration));
  }
}

constexpr int kLongerSteps = 5;

bool plateaued(const std::vector<double>& h, double tol) {
  constexpr std::size_t kWindow = 10;
  if (h.size() <= kWindow) return false;
  const double a = h[h.size() - 1 - kWindow], b = h.back();
  const double denom = std::max(std::abs(a), std::numeric_limits<double>::min());
  return std::abs(a - b) / denom < tol;
}

}  // namespace

LossReport evaluate_fit(const TriangleMesh& tmpl, const TriangleMesh& target,
                        const VectorField& field, const LinearTransform& linear,
                        const FitConfig& cfg) {
  cfg.validate();
  return evaluate_clipped(tmpl, target, clip_field(field, cfg.alpha), linear, cfg).report;
}

AdjointGradient adjoint_gradient(const TriangleMesh& tmpl, const TriangleMesh& target,
                                 const VectorField& field, const LinearTransform& linear,
                                 const FitConfig& cfg) {
  cfg.validate();
  linear.validate();
  Adjoint a = adjoint_clipped(tmpl, target, clip_field(field, cfg.alpha), linear, cfg);
  clip_backward(field, cfg.alpha, a.d_clipped_main);
  clip_backward(field, cfg.alpha, a.d_clipped_volume);

  AdjointGradient out;
  out.report = std::move(a.report);
  out.d_field = std::move(a.d_clipped_main);
  for (std::size_t i = 0; i < out.d_field.size(); ++i) out.d_field[i] += a.d_clipped_volume[i];
  out.d_field_volume = std::move(a.d_clipped_volume);
  for (std::size_t k = 0; k < LinearTransform::kNumParams; ++k) {
    out.d_linear[k] = a.d_linear_main[k] + a.d_linear_volume[k];
  }
  out.d_linear_volume = a.d_linear_volume;
  return out;
}

TriangleMesh deform(const TriangleMesh& tmpl, const LinearTransform& linear,
                    const VectorField& field, const IntegrationConfig& cfg) {
  linear.validate();
  const auto x0 = transformed_vertices(tmpl, linear);
  IntegrationConfig ic = cfg;
  ic.accumulate_divergence = false;
  ic.accumulate_area_rate = false;
  const DeformationTrace trace = integrate_points(x0, field, ic);
  return tmpl.with_vertices(trace.final_positions);
}

VectorField smooth_field(const VectorField& field, double sigma) {
  if (!(sigma >= 0.0) || !std::isfinite(sigma)) throw ParameterError("sigma must be >= 0");
  if (sigma == 0.0) return field;
  const int radius = std::max(1, static_cast<int>(std::ceil(3.0 * sigma)));
  std::vector<double> kernel(2 * radius + 1);
  double ksum = 0.0;
  for (int t = -radius; t <= radius; ++t) {
    kernel[t + radius] = std::exp(-0.5 * t * t / (sigma * sigma));
    ksum += kernel[t + radius];
  }
  for (auto& k : kernel) k /= ksum;

  const GridDims d = field.dims();
  VectorField a = field, b(d);
  const std::array<std::size_t, 3> stride{1, static_cast<std::size_t>(d.nx),
                                          static_cast<std::size_t>(d.nx) * d.ny};
  for (int axis = 0; axis < 3; ++axis) {
    const int n = d[axis];
    for (int k = 0; k < d.nz; ++k) {
      for (int j = 0; j < d.ny; ++j) {
        for (int i = 0; i < d.nx; ++i) {
          const int pos = axis == 0 ? i : axis == 1 ? j : k;
          const std::size_t base = d.index(i, j, k) - stride[axis] * pos;
          Vec3 acc = Vec3::Zero();
          for (int t = -radius; t <= radius; ++t) {
            const int q = std::clamp(pos + t, 0, n - 1);
            acc += kernel[t + radius] * a[base + stride[axis] * q];
          }
          b[d.index(i, j, k)] = acc;
        }
      }
    }
    std::swap(a, b);
  }
  return a;
}

// ---------------------------------------------------------------------------
// Stage 1

LinearFit fit_linear(const TriangleMesh& tmpl, const TriangleMesh& target, const FitConfig& cfg) {
  cfg.validate();
  const StageConfig& sc = cfg.linear;

  auto loss_at = [&](const LinearTransform& t, std::vector<Vec3>* grad) {
    const TriangleMesh moved = tmpl.with_vertices(transformed_vertices(tmpl, t));
    if (grad) grad->assign(tmpl.num_vertices(), Vec3::Zero());
    return chamfer_per_structure_accumulate(moved, target,
                                            grad ? std::span<Vec3>(*grad) : std::span<Vec3>{}, 1.0);
  };

  LinearFit fit;
  LinearTransform cur;
  std::vector<Vec3> gpos;
  double loss = loss_at(cur, &gpos);
  if (!std::isfinite(loss)) throw OptimizationError("linear loss is not finite at iteration 0");
  fit.loss_history.push_back(loss);
  double eta = sc.learning_rate;

  for (int it = 1; it <= sc.max_iters; ++it) {
    LinearGrad g{};
    const Mat3 r = cur.rotation_matrix();
    const std::array<Mat3, 3> dr{cur.rotation_derivative(0), cur.rotation_derivative(1),
                                 cur.rotation_derivative(2)};
    for (std::size_t v = 0; v < gpos.size(); ++v) {
      accumulate_linear(cur, r, dr, tmpl.vertices()[v], gpos[v], g);
    }
    const LinearGrad metric = linear_metric(cur, dr, tmpl.vertices());
    double gg = 0.0;
    for (std::size_t k = 0; k < g.size(); ++k) gg += g[k] * g[k] / metric[k];
    if (gg == 0.0) {
      fit.converged = true;
      break;
    }

    const auto p0 = cur.to_array();
    bool accepted = false;
    for (int tries = 0; tries < 60 && !accepted; ++tries) {
      auto p = p0;
      for (std::size_t k = 0; k < p.size(); ++k) p[k] -= eta * g[k] / metric[k];
      const LinearTransform trial = LinearTransform::from_array(p);
      if (trial.scale.minCoeff() > 0.0) {
        std::vector<Vec3> gtrial;
        const double l = loss_at(trial, &gtrial);
        if (!std::isfinite(l)) {
          throw OptimizationError("linear loss is not finite at iteration " + std::to_string(it));
        }
        if (l <= loss - 1e-4 * eta * gg) {
          cur = trial;
          loss = l;
          gpos = std::move(gtrial);
          accepted = true;
          eta *= 2.0;
          break;
        }
      }
      eta *= 0.5;
    }
    if (!accepted) {
      // No step of any size decreases the loss: a (possibly non-smooth) minimum.
      fit.converged = true;
      break;
    }
    fit.iterations = it;
    fit.loss_history.push_back(loss);
    if (plateaued(fit.loss_history, sc.tolerance)) {
      fit.converged = true;
      break;
    }
  }
  fit.transform = cur;
  return fit;
}

// ---------------------------------------------------------------------------
// Stage 2

FitResult fit_flow(const TriangleMesh& tmpl, const TriangleMesh& target,
                   const LinearTransform& linear, const FitConfig& cfg) {
  cfg.validate();
  linear.validate();
  const StageConfig& sc = cfg.flow;
  const double alpha = cfg.alpha;

  FitResult res;
  res.linear = linear;
  VectorField u(cfg.field_dims);
  Evaluation cur = evaluate_clipped(tmpl, target, u, linear, cfg);
  check_finite(cur.report, 0, "flow");
  res.loss_history.push_back(cur.report);
  std::vector<double> totals{cur.report.total};

  double eta = sc.learning_rate;
  VectorField prev_dir;
  VectorField trial(u.dims());

  for (int it = 1; it <= sc.max_iters; ++it) {
    // u is kept clipped, so the clip Jacobian is the identity here.
    Adjoint a = adjoint_clipped(tmpl, target, u, linear, cfg);

    // Exact gradient, and the training gradient whose volume share is capped
    // at a global norm.
    VectorField g_true = a.d_clipped_main;
    for (std::size_t i = 0; i < g_true.size(); ++i) g_true[i] += a.d_clipped_volume[i];
    double vol_scale = 1.0;
    if (cfg.weights.volume > 0.0) {
      const double raw = norm(a.d_clipped_volume);
      if (raw > cfg.volume_grad_clip) vol_scale = cfg.volume_grad_clip / raw;
    }
    VectorField g_train = a.d_clipped_main;
    for (std::size_t i = 0; i < g_train.size(); ++i) {
      g_train[i] += vol_scale * a.d_clipped_volume[i];
    }
    if (norm(g_true) == 0.0) {
      res.converged = true;
      break;
    }

    VectorField dir = smooth_field(g_train, cfg.smoothing_sigma);
    for (auto& x : dir.data()) x = -x;
    if (cfg.momentum > 0.0 && prev_dir.size() == dir.size()) {
      VectorField with_m = dir;
      for (std::size_t i = 0; i < dir.size(); ++i) with_m[i] += cfg.momentum * prev_dir[i];
      if (dot(with_m, g_true) < 0.0) dir = std::move(with_m);
    }
    if (!(dot(dir, g_true) < 0.0)) {
      dir = g_true;
      for (auto& x : dir.data()) x = -x;
    }

    // The normal term jumps where a nearest-neighbor match changes, so a step
    // that fails may be stopped by a jump that a longer step clears. Probe
    // steps on the configured scale before backtracking.
    auto line_search = [&](const VectorField& d, double& step, Evaluation& found) {
      auto attempt = [&](double s) {
        for (std::size_t i = 0; i < u.size(); ++i) trial[i] = clip_vector(u[i] + s * d[i], alpha);
        double pred = 0.0;
        for (std::size_t i = 0; i < u.size(); ++i) pred += g_true[i].dot(trial[i] - u[i]);
        Evaluation e = evaluate_clipped(tmpl, target, trial, linear, cfg);
        check_finite(e.report, it, "flow");
        if (e.report.total <= cur.report.total + 1e-4 * std::min(pred, 0.0) &&
            e.report.total <= cur.report.total) {
          found = std::move(e);
          return true;
        }
        return false;
      };
      if (attempt(step)) return true;
      for (int k = kLongerSteps; k >= 0; --k) {
        const double s = std::ldexp(sc.learning_rate, k);
        if (s > step && attempt(s)) {
          step = s;
          return true;
        }
      }
      for (int tries = 0; tries < 40; ++tries) {
        step *= 0.5;
        if (attempt(step)) return true;
      }
      return false;
    };

    Evaluation next;
    const double eta0 = eta;
    bool ok = line_search(dir, eta, next);
    if (!ok) {
      // Fall back to plain steepest descent before giving up.
      dir = g_true;
      for (auto& x : dir.data()) x = -x;
      eta = eta0;
      ok = line_search(dir, eta, next);
    }
    if (!ok) {
      res.converged = true;
      break;
    }

    std::swap(u, trial);
    if (max_norm(u) > alpha) throw OptimizationError("internal: clip bound violated after update");
    cur = std::move(next);
    prev_dir = std::move(dir);
    eta *= 2.0;
    res.iterations = it;
    res.loss_history.push_back(cur.report);
    totals.push_back(cur.report.total);
    if (plateaued(totals, sc.tolerance)) {
      res.converged = true;
      break;
    }
  }

  res.field = std::move(u);
  res.trace = std::move(cur.trace);
  return res;
}

}  // namespace meshflow
