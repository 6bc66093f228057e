#pragma once

#include <Eigen/Core>
#include <Eigen/Dense>
#include <cstdint>
#include <random>

#include "mgtk/common.hpp"

namespace mgtk {

using Vec = Eigen::VectorXd;
using Mat = Eigen::MatrixXd;

enum class Manifold { Euclidean, Hyperbolic, Spherical };

const char* manifold_name(Manifold m);

struct ManifoldKind {
  Manifold tag = Manifold::Euclidean;
  int dim = 2;  // intrinsic dimension; spherical points live in dim+1 ambient coords

  int ambient_dim() const { return tag == Manifold::Spherical ? dim + 1 : dim; }
  bool operator==(const ManifoldKind&) const = default;
};

struct Point {
  ManifoldKind kind;
  Vec coords;
};

struct DomainBounds {
  double R_E = 4.0;     // euclidean ball radius
  double R_H = 0.9;     // hyperbolic ball radius, < 1
  double delta_S = 1e-3;  // spherical antipode separation
  double B_phi = 16.0;  // transport operator-norm bound
  double S_max = 10.0;  // structural feature clip

  void validate() const;
};

// relation transport: rotation composed after a manifold-specific translation.
// euclidean: x -> U (x + v)            translation = v (dim)
// hyperbolic: x -> U (a (+) x)          translation = a (dim), ||a|| < 1, (+) Mobius
// spherical: x -> U R(p,q,theta) x      translation = [p; q; theta] (2(dim+1)+1)
struct Transport {
  ManifoldKind kind;
  Mat rotation;
  Vec translation;

  static Transport identity(ManifoldKind kind);
};

void validate_point(const Point& x, const DomainBounds& bounds);
void validate_transport(const Transport& t, const DomainBounds& bounds);

Vec mobius_add(const Vec& a, const Vec& x);
// rotation by theta in the oriented plane spanned by orthonormal p, q
Mat great_circle_rotation(const Vec& p, const Vec& q, double theta);

double geodesic_distance(const Point& x, const Point& y);
double squared_distance(const Point& x, const Point& y);

// gradient of d^2(x, y) with respect to x; spherical result is tangent at x
Vec grad_sq_distance(const Point& x, const Point& y,
                     const DomainBounds& bounds = DomainBounds{});

// hyperbolic results escaping the ball of radius r_h are radially clamped to
// r_h*(1-1e-7); `clamped` (optional) reports whether that happened
Point apply_transport(const Transport& t, const Point& x,
                      double r_h = 1.0 - 1e-7, bool* clamped = nullptr);

Transport inverse_transport(const Transport& t);
// transport equal to outer(inner(x)) for all x
Transport compose_transports(const Transport& outer, const Transport& inner);

// arcosh(1 + 8 R_H^2 / (1 - R_H^2)^2), the diameter of the R_H ball
double hyperbolic_diameter(double r_h);

// Haar rotation + translation sampled within bounds (scaled by translation_scale)
Transport random_isometry(ManifoldKind kind, std::mt19937_64& rng,
                          const DomainBounds& bounds = DomainBounds{},
                          double translation_scale = 1.0);
Transport random_isometry(ManifoldKind kind, std::uint64_t seed,
                          const DomainBounds& bounds = DomainBounds{},
                          double translation_scale = 1.0);

// uniform point in the radius_scale-shrunk domain (uniform on sphere for S)
Point random_point(ManifoldKind kind, std::mt19937_64& rng,
                   const DomainBounds& bounds = DomainBounds{},
                   double radius_scale = 1.0);

// retraction onto the bounded domain: clamp E/H radially, renormalize S
void project_to_domain(Point& x, const DomainBounds& bounds);

Mat haar_rotation(int n, std::mt19937_64& rng, bool special = false);

}  // namespace mgtk
