#include "meshflow/predicates.hpp"

#include <cmath>

#include <gmpxx.h>

namespace meshflow {

namespace {

// Error-bound coefficients of the standard adaptive orientation filters.
constexpr double kEps = 0x1p-53;
constexpr double kO3dBound = (7.0 + 56.0 * kEps) * kEps;
constexpr double kO2dBound = (3.0 + 16.0 * kEps) * kEps;

int sign_of(const mpq_class& v) { return sgn(v); }

}  // namespace

int orient3d(const Vec3& a, const Vec3& b, const Vec3& c, const Vec3& d) {
  const double adx = a.x() - d.x(), bdx = b.x() - d.x(), cdx = c.x() - d.x();
  const double ady = a.y() - d.y(), bdy = b.y() - d.y(), cdy = c.y() - d.y();
  const double adz = a.z() - d.z(), bdz = b.z() - d.z(), cdz = c.z() - d.z();
  const double bc = bdx * cdy - cdx * bdy;
  const double ca = cdx * ady - adx * cdy;
  const double ab = adx * bdy - bdx * ady;
  const double det = adz * bc + bdz * ca + cdz * ab;
  const double perm = (std::abs(bdx * cdy) + std::abs(cdx * bdy)) * std::abs(adz) +
                      (std::abs(cdx * ady) + std::abs(adx * cdy)) * std::abs(bdz) +
                      (std::abs(adx * bdy) + std::abs(bdx * ady)) * std::abs(cdz);
  const double bound = kO3dBound * perm;
  if (det > bound) return 1;
  if (-det > bound) return -1;
  if (perm == 0.0) return 0;

  const mpq_class ex = mpq_class(a.x()) - d.x(), fx = mpq_class(b.x()) - d.x(),
                  gx = mpq_class(c.x()) - d.x();
  const mpq_class ey = mpq_class(a.y()) - d.y(), fy = mpq_class(b.y()) - d.y(),
                  gy = mpq_class(c.y()) - d.y();
  const mpq_class ez = mpq_class(a.z()) - d.z(), fz = mpq_class(b.z()) - d.z(),
                  gz = mpq_class(c.z()) - d.z();
  const mpq_class exact =
      ez * (fx * gy - gx * fy) + fz * (gx * ey - ex * gy) + gz * (ex * fy - fx * ey);
  return sign_of(exact);
}

int orient2d(double ax, double ay, double bx, double by, double cx, double cy) {
  const double left = (ax - cx) * (by - cy);
  const double right = (ay - cy) * (bx - cx);
  const double det = left - right;
  const double bound = kO2dBound * (std::abs(left) + std::abs(right));
  if (det > bound) return 1;
  if (-det > bound) return -1;
  if (left == 0.0 && right == 0.0) return 0;
  const mpq_class exact = (mpq_class(ax) - cx) * (mpq_class(by) - cy) -
                          (mpq_class(ay) - cy) * (mpq_class(bx) - cx);
  return sign_of(exact);
}

}  // namespace meshflow
