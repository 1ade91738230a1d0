#include "meshflow/quality.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>

#include "meshflow/distance.hpp"
#include "meshflow/error.hpp"
#include "meshflow/predicates.hpp"

namespace meshflow {

const char* to_string(SifKind kind) {
  return kind == SifKind::kElementInversion ? "element_inversion" : "interpenetration";
}

// ---------------------------------------------------------------------------
// Triangle intersection predicates

namespace {

struct P2 {
  double x, y;
};

int orient(const P2& a, const P2& b, const P2& c) { return orient2d(a.x, a.y, b.x, b.y, c.x, c.y); }

bool within_box(const P2& a, const P2& b, const P2& p) {
  return std::min(a.x, b.x) <= p.x && p.x <= std::max(a.x, b.x) && std::min(a.y, b.y) <= p.y &&
         p.y <= std::max(a.y, b.y);
}

// Closed segment-segment intersection in the plane.
bool segments_intersect2(const P2& p, const P2& q, const P2& r, const P2& s) {
  const int d1 = orient(r, s, p), d2 = orient(r, s, q);
  const int d3 = orient(p, q, r), d4 = orient(p, q, s);
  if (d1 * d2 < 0 && d3 * d4 < 0) return true;
  if (d1 == 0 && within_box(r, s, p)) return true;
  if (d2 == 0 && within_box(r, s, q)) return true;
  if (d3 == 0 && within_box(p, q, r)) return true;
  if (d4 == 0 && within_box(p, q, s)) return true;
  return false;
}

bool point_in_triangle2(const P2& p, const P2& a, const P2& b, const P2& c) {
  const int o1 = orient(a, b, p), o2 = orient(b, c, p), o3 = orient(c, a, p);
  const bool neg = o1 < 0 || o2 < 0 || o3 < 0;
  const bool pos = o1 > 0 || o2 > 0 || o3 > 0;
  return !(neg && pos);
}

bool segment_triangle2(const P2& p, const P2& q, const P2& a, const P2& b, const P2& c) {
  if (orient(a, b, c) != 0) {
    if (point_in_triangle2(p, a, b, c) || point_in_triangle2(q, a, b, c)) return true;
  }
  return segments_intersect2(p, q, a, b) || segments_intersect2(p, q, b, c) ||
         segments_intersect2(p, q, c, a);
}

P2 project(const Vec3& v, int drop) {
  switch (drop) {
    case 0: return {v.y(), v.z()};
    case 1: return {v.z(), v.x()};
    default: return {v.x(), v.y()};
  }
}

// Segment and triangle known to be coplanar.
bool coplanar_segment_triangle(const Vec3& p, const Vec3& q, const Vec3& a, const Vec3& b,
                               const Vec3& c) {
  const Vec3 n = (b - a).cross(c - a);
  if (n.squaredNorm() > 0.0) {
    int drop = 0;
    n.cwiseAbs().maxCoeff(&drop);
    // A projection along a non-zero normal component preserves incidences.
    const int s = drop == 0 ? orient2d(a.y(), a.z(), b.y(), b.z(), c.y(), c.z())
                  : drop == 1 ? orient2d(a.z(), a.x(), b.z(), b.x(), c.z(), c.x())
                              : orient2d(a.x(), a.y(), b.x(), b.y(), c.x(), c.y());
    if (s != 0) {
      return segment_triangle2(project(p, drop), project(q, drop), project(a, drop),
                               project(b, drop), project(c, drop));
    }
  }
  // Degenerate triangle: its projections must all meet the segment's.
  for (int drop = 0; drop < 3; ++drop) {
    if (!segment_triangle2(project(p, drop), project(q, drop), project(a, drop), project(b, drop),
                           project(c, drop))) {
      return false;
    }
  }
  return true;
}

bool segment_triangle(const Vec3& p, const Vec3& q, const Vec3& a, const Vec3& b, const Vec3& c) {
  const int op = orient3d(a, b, c, p), oq = orient3d(a, b, c, q);
  if (op == oq && op != 0) return false;
  if (op == 0 && oq == 0) return coplanar_segment_triangle(p, q, a, b, c);
  const int s1 = orient3d(p, q, a, b), s2 = orient3d(p, q, b, c), s3 = orient3d(p, q, c, a);
  const bool pos = s1 > 0 || s2 > 0 || s3 > 0;
  const bool neg = s1 < 0 || s2 < 0 || s3 < 0;
  return !(pos && neg);
}

}  // namespace

bool triangles_intersect(const Vec3& a0, const Vec3& a1, const Vec3& a2, const Vec3& b0,
                         const Vec3& b1, const Vec3& b2) {
  // The intersection of two closed triangles, when non-empty, contains a point
  // on an edge of one of them.
  return segment_triangle(a0, a1, b0, b1, b2) || segment_triangle(a1, a2, b0, b1, b2) ||
         segment_triangle(a2, a0, b0, b1, b2) || segment_triangle(b0, b1, a0, a1, a2) ||
         segment_triangle(b1, b2, a0, a1, a2) || segment_triangle(b2, b0, a0, a1, a2);
}

bool faces_intersect(const TriangleMesh& mesh, std::uint32_t f, std::uint32_t g, SifKind* kind) {
  const Face& t = mesh.faces()[f];
  const Face& u = mesh.faces()[g];
  const auto& x = mesh.vertices();
  int shared = 0;
  int ti = -1, ui = -1;  // position of a shared vertex in t and u
  for (int i = 0; i < 3; ++i) {
    for (int j = 0; j < 3; ++j) {
      if (t[i] == u[j]) {
        ++shared;
        ti = i;
        ui = j;
      }
    }
  }
  if (kind) *kind = shared == 0 ? SifKind::kInterpenetration : SifKind::kElementInversion;
  if (shared == 0) {
    return triangles_intersect(x[t[0]], x[t[1]], x[t[2]], x[u[0]], x[u[1]], x[u[2]]);
  }
  if (shared == 3) return true;
  if (shared == 1) {
    // Any contact beyond the shared vertex reaches an opposite edge.
    const Vec3& ta = x[t[(ti + 1) % 3]];
    const Vec3& tb = x[t[(ti + 2) % 3]];
    const Vec3& ua = x[u[(ui + 1) % 3]];
    const Vec3& ub = x[u[(ui + 2) % 3]];
    return segment_triangle(ta, tb, x[u[0]], x[u[1]], x[u[2]]) ||
           segment_triangle(ua, ub, x[t[0]], x[t[1]], x[t[2]]);
  }
  // Shared edge: overlap only when coplanar with both apexes on one side.
  std::uint32_t tc = 0, ud = 0;
  for (int i = 0; i < 3; ++i) {
    if (t[i] != u[0] && t[i] != u[1] && t[i] != u[2]) tc = t[i];
    if (u[i] != t[0] && u[i] != t[1] && u[i] != t[2]) ud = u[i];
  }
  std::uint32_t ea = 0, eb = 0;
  bool first = true;
  for (int i = 0; i < 3; ++i) {
    if (t[i] != tc) {
      (first ? ea : eb) = t[i];
      first = false;
    }
  }
  const Vec3 &a = x[ea], &b = x[eb], &c = x[tc], &d = x[ud];
  if (orient3d(a, b, c, d) != 0) return false;
  const Vec3 n = (b - a).cross(c - a);
  if (n.squaredNorm() == 0.0) return false;
  int drop = 0;
  n.cwiseAbs().maxCoeff(&drop);
  const P2 pa = project(a, drop), pb = project(b, drop);
  const int sc = orient(pa, pb, project(c, drop));
  const int sd = orient(pa, pb, project(d, drop));
  return sc != 0 && sc == sd;
}

namespace {

SifReport make_report(const TriangleMesh& mesh, std::vector<IntersectingPair> pairs) {
  SifReport r;
  r.total_faces = mesh.num_faces();
  std::sort(pairs.begin(), pairs.end(), [](const auto& p, const auto& q) {
    return std::pair(p.a, p.b) < std::pair(q.a, q.b);
  });
  std::vector<char> hit(mesh.num_faces(), 0);
  for (const auto& p : pairs) {
    hit[p.a] = hit[p.b] = 1;
    (p.kind == SifKind::kElementInversion ? r.inversion_pairs : r.interpenetration_pairs)++;
  }
  for (std::uint32_t f = 0; f < hit.size(); ++f) {
    if (hit[f]) r.sif_faces.push_back(f);
  }
  r.sif_percent = r.total_faces == 0
                      ? 0.0
                      : 100.0 * static_cast<double>(r.sif_faces.size()) /
                            static_cast<double>(r.total_faces);
  r.pairs = std::move(pairs);
  return r;
}

}  // namespace

SifReport detect_self_intersections(const TriangleMesh& mesh) {
  const std::size_t nf = mesh.num_faces();
  if (nf == 0) return make_report(mesh, {});
  const FaceBvh bvh(mesh);
  std::vector<std::vector<IntersectingPair>> found(nf);
#pragma omp parallel for schedule(dynamic, 64)
  for (long fi = 0; fi < static_cast<long>(nf); ++fi) {
    const auto f = static_cast<std::uint32_t>(fi);
    std::vector<std::uint32_t> candidates;
    bvh.overlapping(bvh.face_box(f), [&](std::uint32_t g) {
      if (g > f) candidates.push_back(g);
    });
    std::sort(candidates.begin(), candidates.end());
    for (std::uint32_t g : candidates) {
      SifKind kind;
      if (faces_intersect(mesh, f, g, &kind)) found[f].push_back({f, g, kind});
    }
  }
  std::vector<IntersectingPair> pairs;
  for (auto& v : found) pairs.insert(pairs.end(), v.begin(), v.end());
  return make_report(mesh, std::move(pairs));
}

SifReport detect_self_intersections_brute_force(const TriangleMesh& mesh) {
  std::vector<IntersectingPair> pairs;
  const auto nf = static_cast<std::uint32_t>(mesh.num_faces());
  for (std::uint32_t f = 0; f < nf; ++f) {
    for (std::uint32_t g = f + 1; g < nf; ++g) {
      SifKind kind;
      if (faces_intersect(mesh, f, g, &kind)) pairs.push_back({f, g, kind});
    }
  }
  return make_report(mesh, std::move(pairs));
}

nlohmann::json sif_report_to_json(const SifReport& r) {
  nlohmann::json pairs = nlohmann::json::array();
  for (const auto& p : r.pairs) pairs.push_back({{"a", p.a}, {"b", p.b}, {"kind", to_string(p.kind)}});
  return {{"schema_version", 1},
          {"total_faces", r.total_faces},
          {"sif_count", r.sif_faces.size()},
          {"sif_percent", r.sif_percent},
          {"sif_faces", r.sif_faces},
          {"inversion_pairs", r.inversion_pairs},
          {"interpenetration_pairs", r.interpenetration_pairs},
          {"pairs", pairs}};
}

// ---------------------------------------------------------------------------
// Voxelization

namespace {

void require_watertight_structure(const TriangleMesh& mesh, std::uint32_t label) {
  std::map<Edge, int> uses;
  for (std::size_t f = 0; f < mesh.num_faces(); ++f) {
    if (mesh.face_labels()[f] != label) continue;
    const Face& t = mesh.faces()[f];
    for (int i = 0; i < 3; ++i) {
      const std::uint32_t a = t[i], b = t[(i + 1) % 3];
      ++uses[{std::min(a, b), std::max(a, b)}];
    }
  }
  const std::string& name = mesh.structure_names()[label];
  if (uses.empty()) throw ValidationError("structure '" + name + "' has no faces");
  for (const auto& [e, n] : uses) {
    if (n != 2) {
      throw ValidationError("structure '" + name + "' is not watertight: edge (" +
                            std::to_string(e.first) + ", " + std::to_string(e.second) +
                            ") is used by " + std::to_string(n) + " face(s)");
    }
  }
}

// Edge (u -> w) of a counter-clockwise triangle owns points lying on it.
bool owns_edge(const P2& u, const P2& w) {
  const double dy = w.x - u.x, dz = w.y - u.y;
  return dz < 0.0 || (dz == 0.0 && dy > 0.0);
}

}  // namespace

void require_watertight(const TriangleMesh& mesh) {
  for (std::uint32_t s = 0; s < mesh.structure_names().size(); ++s) {
    require_watertight_structure(mesh, s);
  }
}

ScalarField voxelize_structure(const TriangleMesh& mesh, std::uint32_t label, const GridDims& dims) {
  dims.validate();
  if (label >= mesh.structure_names().size()) throw ValidationError("structure label out of range");
  require_watertight_structure(mesh, label);
  const auto& x = mesh.vertices();
  // Crossings of the +x ray through each (y, z) voxel-center row.
  std::vector<std::vector<double>> rows(static_cast<std::size_t>(dims.ny) * dims.nz);

  for (std::size_t f = 0; f < mesh.num_faces(); ++f) {
    if (mesh.face_labels()[f] != label) continue;
    const Face& t = mesh.faces()[f];
    std::array<P2, 3> p{P2{x[t[0]].y(), x[t[0]].z()}, P2{x[t[1]].y(), x[t[1]].z()},
                        P2{x[t[2]].y(), x[t[2]].z()}};
    std::array<double, 3> px{x[t[0]].x(), x[t[1]].x(), x[t[2]].x()};
    const int o = orient(p[0], p[1], p[2]);
    if (o == 0) continue;  // parallel to the rays
    if (o < 0) {
      std::swap(p[1], p[2]);
      std::swap(px[1], px[2]);
    }
    const double ymin = std::min({p[0].x, p[1].x, p[2].x}), ymax = std::max({p[0].x, p[1].x, p[2].x});
    const double zmin = std::min({p[0].y, p[1].y, p[2].y}), zmax = std::max({p[0].y, p[1].y, p[2].y});
    const int j0 = std::max(0, static_cast<int>(std::ceil(ymin * dims.ny - 0.5)) - 1);
    const int j1 = std::min(dims.ny - 1, static_cast<int>(std::floor(ymax * dims.ny - 0.5)) + 1);
    const int k0 = std::max(0, static_cast<int>(std::ceil(zmin * dims.nz - 0.5)) - 1);
    const int k1 = std::min(dims.nz - 1, static_cast<int>(std::floor(zmax * dims.nz - 0.5)) + 1);
    const double area = (p[1].x - p[0].x) * (p[2].y - p[0].y) - (p[1].y - p[0].y) * (p[2].x - p[0].x);
    for (int k = k0; k <= k1; ++k) {
      const double zc = (k + 0.5) / dims.nz;
      if (zc < zmin || zc > zmax) continue;
      for (int j = j0; j <= j1; ++j) {
        const double yc = (j + 0.5) / dims.ny;
        if (yc < ymin || yc > ymax) continue;
        const P2 q{yc, zc};
        bool inside = true;
        for (int e = 0; e < 3 && inside; ++e) {
          const P2& u = p[e];
          const P2& w = p[(e + 1) % 3];
          const int s = orient(u, w, q);
          inside = s > 0 || (s == 0 && owns_edge(u, w));
        }
        if (!inside) continue;
        // Barycentric x of the crossing.
        auto cross = [&](const P2& u, const P2& w) {
          return (w.x - u.x) * (q.y - u.y) - (w.y - u.y) * (q.x - u.x);
        };
        const double l0 = cross(p[1], p[2]) / area;
        const double l1 = cross(p[2], p[0]) / area;
        const double l2 = 1.0 - l0 - l1;
        rows[static_cast<std::size_t>(j) + static_cast<std::size_t>(dims.ny) * k].push_back(
            l0 * px[0] + l1 * px[1] + l2 * px[2]);
      }
    }
  }

  ScalarField out(dims);
  for (int k = 0; k < dims.nz; ++k) {
    for (int j = 0; j < dims.ny; ++j) {
      auto& xs = rows[static_cast<std::size_t>(j) + static_cast<std::size_t>(dims.ny) * k];
      if (xs.empty()) continue;
      std::sort(xs.begin(), xs.end());
      std::size_t passed = 0;
      for (int i = 0; i < dims.nx; ++i) {
        const double xc = (i + 0.5) / dims.nx;
        while (passed < xs.size() && xs[passed] < xc) ++passed;
        if (passed % 2 == 1) out.at(i, j, k) = 1.0;
      }
    }
  }
  return out;
}

ScalarField voxelize(const TriangleMesh& mesh, const GridDims& dims) {
  dims.validate();
  ScalarField out(dims);
  for (std::uint32_t s = 0; s < mesh.structure_names().size(); ++s) {
    const ScalarField part = voxelize_structure(mesh, s, dims);
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = std::max(out[i], part[i]);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Overlap and surface metrics

namespace {

void require_same_dims(const ScalarField& a, const ScalarField& b) {
  if (!(a.dims() == b.dims())) throw ValidationError("segmentations have different dims");
}

bool member(double v) { return v > 0.5; }

std::vector<char> boundary_mask(const ScalarField& s) {
  const GridDims& d = s.dims();
  std::vector<char> out(s.size(), 0);
  auto in = [&](int i, int j, int k) {
    return i >= 0 && j >= 0 && k >= 0 && i < d.nx && j < d.ny && k < d.nz && member(s.at(i, j, k));
  };
  for (int k = 0; k < d.nz; ++k) {
    for (int j = 0; j < d.ny; ++j) {
      for (int i = 0; i < d.nx; ++i) {
        if (!in(i, j, k)) continue;
        if (!in(i - 1, j, k) || !in(i + 1, j, k) || !in(i, j - 1, k) || !in(i, j + 1, k) ||
            !in(i, j, k - 1) || !in(i, j, k + 1)) {
          out[d.index(i, j, k)] = 1;
        }
      }
    }
  }
  return out;
}

// 1D lower envelope of parabolas w (q - p)^2 + f(p), in place on a strided line.
void edt_line(double* f, std::size_t n, std::size_t stride, double w, std::vector<double>& buf,
              std::vector<int>& v, std::vector<double>& z) {
  constexpr double kInf = std::numeric_limits<double>::infinity();
  buf.resize(n);
  v.resize(n);
  z.resize(n + 1);
  for (std::size_t i = 0; i < n; ++i) buf[i] = f[i * stride];
  int k = -1;
  for (int q = 0; q < static_cast<int>(n); ++q) {
    if (buf[q] == kInf) continue;
    while (k >= 0) {
      const int p = v[k];
      const double s =
          ((buf[q] + w * q * q) - (buf[p] + w * p * p)) / (2.0 * w * (q - p));
      if (s <= z[k]) {
        --k;
      } else {
        break;
      }
    }
    ++k;
    v[k] = q;
    z[k] = k == 0 ? -kInf
                  : ((buf[q] + w * q * q) - (buf[v[k - 1]] + w * v[k - 1] * v[k - 1])) /
                        (2.0 * w * (q - v[k - 1]));
    z[k + 1] = kInf;
  }
  if (k < 0) return;  // no sites on this line
  int j = 0;
  for (int q = 0; q < static_cast<int>(n); ++q) {
    while (z[j + 1] < q) ++j;
    const double dq = q - v[j];
    f[q * stride] = w * dq * dq + buf[v[j]];
  }
}

// Squared distance (in units of the smallest spacing) to the nearest site.
std::vector<double> squared_edt(const std::vector<char>& sites, const GridDims& d,
                                const Vec3& weights) {
  constexpr double kInf = std::numeric_limits<double>::infinity();
  std::vector<double> f(sites.size());
  for (std::size_t i = 0; i < f.size(); ++i) f[i] = sites[i] ? 0.0 : kInf;
  std::vector<double> buf, z;
  std::vector<int> v;
  const std::size_t sx = 1, sy = d.nx, sz = static_cast<std::size_t>(d.nx) * d.ny;
  for (int k = 0; k < d.nz; ++k)
    for (int j = 0; j < d.ny; ++j) edt_line(&f[d.index(0, j, k)], d.nx, sx, weights.x(), buf, v, z);
  for (int k = 0; k < d.nz; ++k)
    for (int i = 0; i < d.nx; ++i) edt_line(&f[d.index(i, 0, k)], d.ny, sy, weights.y(), buf, v, z);
  for (int j = 0; j < d.ny; ++j)
    for (int i = 0; i < d.nx; ++i) edt_line(&f[d.index(i, j, 0)], d.nz, sz, weights.z(), buf, v, z);
  return f;
}

}  // namespace

OverlapScores dice_jaccard(const ScalarField& a, const ScalarField& b) {
  require_same_dims(a, b);
  std::size_t na = 0, nb = 0, both = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const bool ia = member(a[i]), ib = member(b[i]);
    na += ia;
    nb += ib;
    both += ia && ib;
  }
  if (na + nb == 0) throw UndefinedMetricError("dice/jaccard undefined for two empty sets");
  const double inter = static_cast<double>(both);
  const double uni = static_cast<double>(na + nb - both);
  return {2.0 * inter / static_cast<double>(na + nb), inter / uni};
}

SurfaceDistances surface_distances(const ScalarField& a, const ScalarField& b, const Vec3& spacing) {
  require_same_dims(a, b);
  if (!(spacing.minCoeff() > 0.0) || !spacing.allFinite()) {
    throw ParameterError("voxel spacing must be positive");
  }
  const auto ba = boundary_mask(a), bb = boundary_mask(b);
  const bool ea = std::find(ba.begin(), ba.end(), 1) == ba.end();
  const bool eb = std::find(bb.begin(), bb.end(), 1) == bb.end();
  if (ea || eb) throw UndefinedMetricError("surface distance undefined for an empty segmentation");

  const double smin = spacing.minCoeff();
  const Vec3 w = (spacing / smin).cwiseAbs2();
  const auto da = squared_edt(ba, a.dims(), w);
  const auto db = squared_edt(bb, b.dims(), w);
  double sum = 0.0, hd = 0.0;
  std::size_t count = 0;
  for (std::size_t i = 0; i < ba.size(); ++i) {
    if (ba[i]) {
      const double d = smin * std::sqrt(db[i]);
      sum += d;
      hd = std::max(hd, d);
      ++count;
    }
    if (bb[i]) {
      const double d = smin * std::sqrt(da[i]);
      sum += d;
      hd = std::max(hd, d);
      ++count;
    }
  }
  return {sum / static_cast<double>(count), hd};
}

SegmentationMetrics segmentation_metrics(const ScalarField& a, const ScalarField& b,
                                         const Vec3& spacing) {
  const OverlapScores o = dice_jaccard(a, b);
  const SurfaceDistances s = surface_distances(a, b, spacing);
  return {o.dice, o.jaccard, s.assd, s.hausdorff};
}

// ---------------------------------------------------------------------------

ShellThickness shell_thickness(const TriangleMesh& inner, const TriangleMesh& outer) {
  if (inner.num_vertices() == 0 || outer.empty()) {
    throw ValidationError("shell thickness needs non-empty meshes");
  }
  const FaceBvh bvh(outer);
  ShellThickness t;
  t.min = std::numeric_limits<double>::infinity();
  double sum = 0.0;
  for (const auto& v : inner.vertices()) {
    const double d = bvh.nearest(v).distance;
    t.min = std::min(t.min, d);
    sum += d;
  }
  t.mean = sum / static_cast<double>(inner.num_vertices());
  return t;
}

}  // namespace meshflow
