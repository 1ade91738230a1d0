#include "meshflow/losses.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <set>

#include "json.hpp"

#include "meshflow/error.hpp"
#include "meshflow/point_search.hpp"

namespace meshflow {

using nlohmann::json;

// ---------------------------------------------------------------------------
// Weights

void LossWeights::validate() const {
  const std::pair<const char*, double> all[] = {
      {"chamfer", chamfer}, {"chamfer_normal", chamfer_normal}, {"volume", volume},
      {"edge", edge},       {"face_normal", face_normal},       {"laplacian", laplacian}};
  for (const auto& [name, w] : all) {
    if (!(w >= 0.0) || !std::isfinite(w)) {
      throw ParameterError(std::string("loss weight '") + name + "' must be finite and >= 0");
    }
  }
}

LossWeights loss_weights_from_json(const json& j) {
  if (!j.is_object()) throw ParameterError("loss weights must be a JSON object");
  static const std::set<std::string> keys{"chamfer", "chamfer_normal", "volume",
                                          "edge",    "face_normal",    "laplacian"};
  for (auto it = j.begin(); it != j.end(); ++it) {
    if (!keys.count(it.key())) throw ParameterError("unknown loss weight key '" + it.key() + "'");
  }
  for (const auto& k : keys) {
    if (!j.contains(k)) throw ParameterError("missing loss weight key '" + k + "'");
    if (!j.at(k).is_number()) throw ParameterError("loss weight '" + k + "' must be a number");
  }
  LossWeights w;
  w.chamfer = j.at("chamfer").get<double>();
  w.chamfer_normal = j.at("chamfer_normal").get<double>();
  w.volume = j.at("volume").get<double>();
  w.edge = j.at("edge").get<double>();
  w.face_normal = j.at("face_normal").get<double>();
  w.laplacian = j.at("laplacian").get<double>();
  w.validate();
  return w;
}

json loss_weights_to_json(const LossWeights& w) {
  return {{"chamfer", w.chamfer}, {"chamfer_normal", w.chamfer_normal},
          {"volume", w.volume},   {"edge", w.edge},
          {"face_normal", w.face_normal}, {"laplacian", w.laplacian}};
}

LossWeights load_loss_weights(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path.string());
  try {
    return loss_weights_from_json(json::parse(in));
  } catch (const json::exception& e) {
    throw FormatError(path.string() + ": " + e.what());
  }
}

double weighted_total(const LossWeights& w, const LossTerms& t) {
  return w.chamfer * t.chamfer + w.chamfer_normal * t.chamfer_normal + w.volume * t.volume +
         w.edge * t.edge + w.face_normal * t.face_normal + w.laplacian * t.laplacian;
}

// ---------------------------------------------------------------------------
// Chamfer

namespace {

double sgn(double v) { return v > 0.0 ? 1.0 : (v < 0.0 ? -1.0 : 0.0); }

Vec3 sign_vec(const Vec3& v) { return {sgn(v.x()), sgn(v.y()), sgn(v.z())}; }

struct SharedStructure {
  std::string name;
  std::vector<std::uint32_t> tmpl_vertices;
  std::vector<std::uint32_t> target_vertices;
};

std::vector<SharedStructure> shared_structures(const TriangleMesh& tmpl,
                                               const TriangleMesh& target) {
  std::vector<std::string> missing;
  for (const auto& n : tmpl.structure_names()) {
    if (!target.find_structure(n)) missing.push_back(n);
  }
  for (const auto& n : target.structure_names()) {
    if (!tmpl.find_structure(n)) missing.push_back(n);
  }
  if (!missing.empty()) {
    std::string msg = "structure labels not shared by template and target:";
    for (const auto& m : missing) msg += " " + m;
    throw ValidationError(msg);
  }
  std::vector<SharedStructure> out;
  for (std::uint32_t s = 0; s < tmpl.structure_names().size(); ++s) {
    SharedStructure ss;
    ss.name = tmpl.structure_names()[s];
    ss.tmpl_vertices = tmpl.structure_vertices(s);
    ss.target_vertices = target.structure_vertices(*target.find_structure(ss.name));
    out.push_back(std::move(ss));
  }
  return out;
}

template <typename T>
std::vector<T> gather(const std::vector<T>& src, const std::vector<std::uint32_t>& idx) {
  std::vector<T> out;
  out.reserve(idx.size());
  for (auto i : idx) out.push_back(src[i]);
  return out;
}

}  // namespace

double chamfer_l1_accumulate(std::span<const Vec3> p1, std::span<const Vec3> p2,
                             std::span<Vec3> grad, double scale) {
  if (p1.empty() || p2.empty()) throw ValidationError("chamfer distance of an empty point set");
  const bool want_grad = !grad.empty();
  const PointTree tree2(p2);
  const PointTree tree1(p1);
  const double inv1 = 1.0 / static_cast<double>(p1.size());
  const double inv2 = 1.0 / static_cast<double>(p2.size());

  double sum1 = 0.0;
  for (std::size_t i = 0; i < p1.size(); ++i) {
    const auto hit = tree2.nearest(p1[i], Norm::L1);
    sum1 += hit.distance;
    if (want_grad) grad[i] += (scale * inv1) * sign_vec(p1[i] - p2[hit.index]);
  }
  double sum2 = 0.0;
  for (std::size_t j = 0; j < p2.size(); ++j) {
    const auto hit = tree1.nearest(p2[j], Norm::L1);
    sum2 += hit.distance;
    if (want_grad) grad[hit.index] += (scale * inv2) * sign_vec(p1[hit.index] - p2[j]);
  }
  return sum1 * inv1 + sum2 * inv2;
}

double chamfer_l1(std::span<const Vec3> p1, std::span<const Vec3> p2) {
  return chamfer_l1_accumulate(p1, p2, {}, 0.0);
}

namespace {

double chamfer_structures(const TriangleMesh& tmpl, const TriangleMesh& target,
                          std::span<Vec3> grad, double scale,
                          std::map<std::string, double>* breakdown) {
  const auto shared = shared_structures(tmpl, target);
  const double per = 1.0 / static_cast<double>(shared.size());
  double total = 0.0;
  for (const auto& s : shared) {
    const auto p1 = gather(tmpl.vertices(), s.tmpl_vertices);
    const auto p2 = gather(target.vertices(), s.target_vertices);
    std::vector<Vec3> local;
    if (!grad.empty()) local.assign(p1.size(), Vec3::Zero());
    const double c = chamfer_l1_accumulate(p1, p2, local, scale * per);
    if (!grad.empty()) {
      for (std::size_t i = 0; i < p1.size(); ++i) grad[s.tmpl_vertices[i]] += local[i];
    }
    if (breakdown) (*breakdown)[s.name] = c;
    total += c;
  }
  return total * per;
}

}  // namespace

double chamfer_per_structure(const TriangleMesh& tmpl, const TriangleMesh& target,
                             std::map<std::string, double>* breakdown) {
  if (tmpl.empty() || target.empty()) throw ValidationError("chamfer of an empty mesh");
  return chamfer_structures(tmpl, target, {}, 0.0, breakdown);
}

double chamfer_per_structure_accumulate(const TriangleMesh& tmpl, const TriangleMesh& target,
                                        std::span<Vec3> grad, double scale,
                                        std::map<std::string, double>* breakdown) {
  if (tmpl.empty() || target.empty()) throw ValidationError("chamfer of an empty mesh");
  return chamfer_structures(tmpl, target, grad, scale, breakdown);
}

// ---------------------------------------------------------------------------
// Oriented normal consistency

namespace {

void check_unit(std::span<const Vec3> normals, const char* which) {
  for (std::size_t i = 0; i < normals.size(); ++i) {
    if (!(std::abs(normals[i].norm() - 1.0) <= 1e-9)) {
      throw ParameterError(std::string("normal ") + std::to_string(i) + " of " + which +
                           " is not unit length");
    }
  }
}

// Accumulates d/dn_p into dnp (if non-empty) for the symmetric loss.
double normal_consistency_impl(std::span<const Vec3> p, std::span<const Vec3> np,
                               std::span<const Vec3> q, std::span<const Vec3> nq,
                               std::span<Vec3> dnp, double scale) {
  if (p.empty() || q.empty()) throw ValidationError("normal consistency of an empty point set");
  if (np.size() != p.size() || nq.size() != q.size()) {
    throw ValidationError("normal consistency needs one normal per point");
  }
  check_unit(np, "first set");
  check_unit(nq, "second set");
  const PointTree tree_q(q), tree_p(p);
  const double inv_p = 1.0 / static_cast<double>(p.size());
  const double inv_q = 1.0 / static_cast<double>(q.size());
  const bool want = !dnp.empty();

  double a = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i) {
    const auto y = tree_q.nearest(p[i], Norm::L2).index;
    a += 1.0 - np[i].dot(nq[y]);
    if (want) dnp[i] -= (0.5 * scale * inv_p) * nq[y];
  }
  double b = 0.0;
  for (std::size_t j = 0; j < q.size(); ++j) {
    const auto x = tree_p.nearest(q[j], Norm::L2).index;
    b += 1.0 - nq[j].dot(np[x]);
    if (want) dnp[x] -= (0.5 * scale * inv_q) * nq[j];
  }
  return 0.5 * (a * inv_p + b * inv_q);
}

// Backpropagate d/d(unit vertex normal) to vertex positions through the
// area-weighted normal m_v = sum_f (b - a) x (c - a).
void normals_backward(const TriangleMesh& mesh, std::span<const Vec3> dn, std::span<Vec3> grad) {
  const auto& x = mesh.vertices();
  std::vector<Vec3> m(mesh.num_vertices(), Vec3::Zero());
  for (const Face& f : mesh.faces()) {
    const Vec3 c = (x[f[1]] - x[f[0]]).cross(x[f[2]] - x[f[0]]);
    for (auto v : f) m[v] += c;
  }
  std::vector<Vec3> dm(mesh.num_vertices(), Vec3::Zero());
  for (std::size_t v = 0; v < m.size(); ++v) {
    const double len = m[v].norm();
    if (!(len > 0.0) || dn[v].isZero()) continue;
    const Vec3 n = m[v] / len;
    dm[v] = (dn[v] - n * n.dot(dn[v])) / len;
  }
  for (const Face& f : mesh.faces()) {
    const Vec3 dc = dm[f[0]] + dm[f[1]] + dm[f[2]];
    if (dc.isZero()) continue;
    const Vec3 e1 = x[f[1]] - x[f[0]], e2 = x[f[2]] - x[f[0]];
    const Vec3 gb = e2.cross(dc);
    const Vec3 gc = dc.cross(e1);
    grad[f[1]] += gb;
    grad[f[2]] += gc;
    grad[f[0]] -= gb + gc;
  }
}

double normal_structures(const TriangleMesh& tmpl, const TriangleMesh& target,
                         std::span<Vec3> grad, double scale) {
  const auto shared = shared_structures(tmpl, target);
  const auto nt = vertex_normals(tmpl);
  const auto ng = vertex_normals(target);
  const double per = 1.0 / static_cast<double>(shared.size());
  std::vector<Vec3> dn;
  if (!grad.empty()) dn.assign(tmpl.num_vertices(), Vec3::Zero());
  double total = 0.0;
  for (const auto& s : shared) {
    const auto p = gather(tmpl.vertices(), s.tmpl_vertices);
    const auto np = gather(nt, s.tmpl_vertices);
    const auto q = gather(target.vertices(), s.target_vertices);
    const auto nq = gather(ng, s.target_vertices);
    std::vector<Vec3> local;
    if (!grad.empty()) local.assign(p.size(), Vec3::Zero());
    total += normal_consistency_impl(p, np, q, nq, local, scale * per);
    if (!grad.empty()) {
      for (std::size_t i = 0; i < p.size(); ++i) dn[s.tmpl_vertices[i]] += local[i];
    }
  }
  if (!grad.empty()) normals_backward(tmpl, dn, grad);
  return total * per;
}

}  // namespace

double normal_consistency(std::span<const Vec3> p, std::span<const Vec3> p_normals,
                          std::span<const Vec3> q, std::span<const Vec3> q_normals) {
  return normal_consistency_impl(p, p_normals, q, q_normals, {}, 0.0);
}

double normal_consistency_per_structure(const TriangleMesh& tmpl, const TriangleMesh& target) {
  return normal_structures(tmpl, target, {}, 0.0);
}

double normal_consistency_accumulate(const TriangleMesh& tmpl, const TriangleMesh& target,
                                     std::span<Vec3> grad, double scale) {
  return normal_structures(tmpl, target, grad, scale);
}

// ---------------------------------------------------------------------------
// Volume loss

double volume_loss_accumulate(const DeformationTrace& trace,
                              const std::optional<std::vector<std::uint32_t>>& subset,
                              std::span<double> grad, double scale) {
  if (!trace.div_integral) throw StateError("volume loss needs a divergence integral");
  const auto& div = *trace.div_integral;
  auto term = [&](std::uint32_t v) {
    if (v >= div.size()) {
      throw ValidationError("volume-loss vertex " + std::to_string(v) + " out of range");
    }
    return std::exp(-div[v]);
  };
  double sum = 0.0;
  if (subset) {
    if (subset->empty()) throw ValidationError("volume loss over an empty vertex subset");
    const double inv = 1.0 / static_cast<double>(subset->size());
    for (auto v : *subset) {
      const double e = term(v);
      sum += e;
      if (!grad.empty()) grad[v] -= scale * inv * e;
    }
    return sum * inv;
  }
  if (div.empty()) throw ValidationError("volume loss over an empty vertex set");
  const double inv = 1.0 / static_cast<double>(div.size());
  for (std::uint32_t v = 0; v < div.size(); ++v) {
    const double e = term(v);
    sum += e;
    if (!grad.empty()) grad[v] -= scale * inv * e;
  }
  return sum * inv;
}

double volume_loss(const DeformationTrace& trace,
                   const std::optional<std::vector<std::uint32_t>>& subset) {
  return volume_loss_accumulate(trace, subset, {}, 0.0);
}

// ---------------------------------------------------------------------------
// Mesh regularizers

double edge_length_accumulate(const TriangleMesh& mesh, std::span<Vec3> grad, double scale) {
  const auto& edges = mesh.edges();
  if (edges.empty()) throw ValidationError("edge length loss of a mesh without edges");
  const auto& x = mesh.vertices();
  const double inv = 1.0 / static_cast<double>(edges.size());
  double sum = 0.0;
  for (const auto& [a, b] : edges) {
    const Vec3 d = x[a] - x[b];
    sum += d.squaredNorm();
    if (!grad.empty()) {
      const Vec3 g = (2.0 * scale * inv) * d;
      grad[a] += g;
      grad[b] -= g;
    }
  }
  return sum * inv;
}

double edge_length_loss(const TriangleMesh& mesh) { return edge_length_accumulate(mesh, {}, 0.0); }

double face_normal_consistency_accumulate(const TriangleMesh& mesh, std::span<Vec3> grad,
                                          double scale) {
  const auto& pairs = mesh.topology().adjacent_face_pairs;
  if (pairs.empty()) return 0.0;
  const auto& x = mesh.vertices();
  const auto& faces = mesh.faces();
  std::vector<Vec3> raw(faces.size()), unit(faces.size());
  std::vector<double> len(faces.size());
  for (std::size_t f = 0; f < faces.size(); ++f) {
    raw[f] = (x[faces[f][1]] - x[faces[f][0]]).cross(x[faces[f][2]] - x[faces[f][0]]);
    len[f] = raw[f].norm();
    unit[f] = len[f] > 0.0 ? Vec3(raw[f] / len[f]) : Vec3::Zero();
  }
  const double inv = 1.0 / static_cast<double>(pairs.size());
  double sum = 0.0;
  std::vector<Vec3> dn;
  if (!grad.empty()) dn.assign(faces.size(), Vec3::Zero());
  for (const auto& [f, g] : pairs) {
    sum += 1.0 - unit[f].dot(unit[g]);
    if (!grad.empty()) {
      dn[f] -= scale * inv * unit[g];
      dn[g] -= scale * inv * unit[f];
    }
  }
  if (!grad.empty()) {
    for (std::size_t f = 0; f < faces.size(); ++f) {
      if (!(len[f] > 0.0) || dn[f].isZero()) continue;
      const Vec3 dN = (dn[f] - unit[f] * unit[f].dot(dn[f])) / len[f];
      const Vec3 e1 = x[faces[f][1]] - x[faces[f][0]], e2 = x[faces[f][2]] - x[faces[f][0]];
      const Vec3 gb = e2.cross(dN);
      const Vec3 gc = dN.cross(e1);
      grad[faces[f][1]] += gb;
      grad[faces[f][2]] += gc;
      grad[faces[f][0]] -= gb + gc;
    }
  }
  return sum * inv;
}

double face_normal_consistency_loss(const TriangleMesh& mesh) {
  return face_normal_consistency_accumulate(mesh, {}, 0.0);
}

double laplacian_accumulate(const TriangleMesh& mesh, std::span<Vec3> grad, double scale) {
  if (mesh.num_vertices() == 0) throw ValidationError("laplacian loss of an empty mesh");
  const auto lap = uniform_laplacian(mesh);
  const double inv = 1.0 / static_cast<double>(lap.size());
  double sum = 0.0;
  for (std::uint32_t v = 0; v < lap.size(); ++v) {
    sum += lap[v].squaredNorm();
    if (!grad.empty()) {
      const Vec3 g = (2.0 * scale * inv) * lap[v];
      grad[v] -= g;
      const Vec3 share = g / static_cast<double>(mesh.degree(v));
      for (auto it = mesh.ring_begin(v); it != mesh.ring_end(v); ++it) grad[*it] += share;
    }
  }
  return sum * inv;
}

double laplacian_loss(const TriangleMesh& mesh) { return laplacian_accumulate(mesh, {}, 0.0); }

// ---------------------------------------------------------------------------
// Combined objective

namespace {

LossGradient evaluate(const TriangleMesh& deformed, const TriangleMesh& target,
                      const DeformationTrace* trace, const LossWeights& w,
                      const LossOptions& options, bool want_grad) {
  w.validate();
  LossGradient out;
  LossTerms& t = out.report.terms;
  std::span<Vec3> g;
  std::span<double> gd;
  if (want_grad) {
    out.d_positions.assign(deformed.num_vertices(), Vec3::Zero());
    out.d_div_integral.assign(deformed.num_vertices(), 0.0);
    g = out.d_positions;
    gd = out.d_div_integral;
  }
  auto grad_if = [&](double weight) { return weight != 0.0 ? g : std::span<Vec3>{}; };

  // Every term is reported; gradients are only formed for weighted terms.
  t.chamfer = chamfer_structures(deformed, target, grad_if(w.chamfer), w.chamfer,
                                 &out.report.chamfer_by_structure);
  t.chamfer_normal =
      normal_structures(deformed, target, grad_if(w.chamfer_normal), w.chamfer_normal);
  if (trace && trace->div_integral) {
    t.volume = volume_loss_accumulate(*trace, options.volume_subset,
                                      w.volume != 0.0 ? gd : std::span<double>{}, w.volume);
  } else if (w.volume != 0.0) {
    throw StateError("volume loss weight is non-zero but no divergence integral is available");
  }
  t.edge = edge_length_accumulate(deformed, grad_if(w.edge), w.edge);
  t.face_normal =
      face_normal_consistency_accumulate(deformed, grad_if(w.face_normal), w.face_normal);
  t.laplacian = laplacian_accumulate(deformed, grad_if(w.laplacian), w.laplacian);
  out.report.total = weighted_total(w, t);
  return out;
}

}  // namespace

LossReport total_loss(const TriangleMesh& deformed, const TriangleMesh& target,
                      const DeformationTrace* trace, const LossWeights& weights,
                      const LossOptions& options) {
  return evaluate(deformed, target, trace, weights, options, false).report;
}

LossGradient total_loss_gradient(const TriangleMesh& deformed, const TriangleMesh& target,
                                 const DeformationTrace* trace, const LossWeights& weights,
                                 const LossOptions& options) {
  return evaluate(deformed, target, trace, weights, options, true);
}

}  // namespace meshflow
