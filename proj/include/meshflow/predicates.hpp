#pragma once

#include "meshflow/mesh.hpp"

namespace meshflow {

/// Sign of det[a-d; b-d; c-d]: +1, 0 or -1, exact for all double inputs
/// (floating-point filter with a rational fallback).
int orient3d(const Vec3& a, const Vec3& b, const Vec3& c, const Vec3& d);

/// Sign of (a-c) x (b-c) for 2D points (x, y); exact.
int orient2d(double ax, double ay, double bx, double by, double cx, double cy);

}  // namespace meshflow
