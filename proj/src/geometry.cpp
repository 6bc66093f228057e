#include "mgtk/geometry.hpp"

#include <Eigen/QR>
#include <cmath>

namespace mgtk {

namespace {
constexpr double kOrthoTol = 1e-10;
constexpr double kBallShrink = 1.0 - 1e-7;
constexpr double kCoincidentTol = 1e-7;

void require_same_kind(const Point& x, const Point& y) {
  if (!(x.kind == y.kind))
    throw MgtkError("points live on different manifolds");
  if (x.coords.size() != x.kind.ambient_dim() ||
      y.coords.size() != y.kind.ambient_dim())
    throw MgtkError("coordinate length does not match manifold dimension");
}

void require_inside_unit_ball(const Point& x) {
  if (x.coords.norm() >= 1.0)
    throw MgtkError("hyperbolic point on or outside the unit sphere");
}
}  // namespace

const char* manifold_name(Manifold m) {
  switch (m) {
    case Manifold::Euclidean: return "euclidean";
    case Manifold::Hyperbolic: return "hyperbolic";
    case Manifold::Spherical: return "spherical";
  }
  return "?";
}

void DomainBounds::validate() const {
  if (R_E <= 0 || R_H <= 0 || R_H >= 1 || delta_S <= 0 || delta_S >= 1 ||
      B_phi <= 0 || S_max <= 0)
    throw MgtkError("invalid domain bounds");
}

Transport Transport::identity(ManifoldKind kind) {
  Transport t;
  t.kind = kind;
  const int n = kind.ambient_dim();
  t.rotation = Mat::Identity(n, n);
  if (kind.tag == Manifold::Spherical) {
    t.translation = Vec::Zero(2 * n + 1);  // [p; q; theta], theta = 0
    t.translation(0) = 1.0;      // p = e0
    t.translation(n + 1) = 1.0;  // q = e1
  } else {
    t.translation = Vec::Zero(n);
  }
  return t;
}

void validate_point(const Point& x, const DomainBounds& bounds) {
  if (x.coords.size() != x.kind.ambient_dim())
    throw MgtkError("coordinate length does not match manifold dimension");
  const double n = x.coords.norm();
  switch (x.kind.tag) {
    case Manifold::Euclidean:
      if (n > bounds.R_E * (1 + 1e-12))
        throw MgtkError("euclidean point outside R_E ball");
      break;
    case Manifold::Hyperbolic:
      if (n > bounds.R_H * (1 + 1e-12))
        throw MgtkError("hyperbolic point outside R_H ball");
      break;
    case Manifold::Spherical:
      if (std::abs(n - 1.0) > 1e-9)
        throw MgtkError("spherical point not on the unit sphere");
      break;
  }
}

void validate_transport(const Transport& t, const DomainBounds& bounds) {
  const int n = t.kind.ambient_dim();
  if (t.rotation.rows() != n || t.rotation.cols() != n)
    throw MgtkError("rotation has wrong shape");
  const double ortho_err =
      (t.rotation.transpose() * t.rotation - Mat::Identity(n, n)).cwiseAbs().maxCoeff();
  if (ortho_err > kOrthoTol)
    throw MgtkError("rotation is not orthogonal");
  switch (t.kind.tag) {
    case Manifold::Euclidean:
      if (t.translation.size() != n) throw MgtkError("bad translation length");
      break;
    case Manifold::Hyperbolic:
      if (t.translation.size() != n) throw MgtkError("bad translation length");
      if (t.translation.norm() > bounds.R_H * (1 + 1e-12))
        throw MgtkError("gyrotranslation outside R_H ball");
      break;
    case Manifold::Spherical: {
      if (t.translation.size() != 2 * n + 1)
        throw MgtkError("bad great-circle parameter length");
      const Vec p = t.translation.segment(0, n);
      const Vec q = t.translation.segment(n, n);
      if (std::abs(p.norm() - 1) > kOrthoTol || std::abs(q.norm() - 1) > kOrthoTol ||
          std::abs(p.dot(q)) > kOrthoTol)
        throw MgtkError("great-circle plane is not orthonormal");
      if (t.rotation.determinant() < 0)
        throw MgtkError("spherical rotation must be special orthogonal");
      break;
    }
  }
}

Vec mobius_add(const Vec& a, const Vec& x) {
  const double ax = a.dot(x);
  const double na2 = a.squaredNorm();
  const double nx2 = x.squaredNorm();
  const double den = 1.0 + 2.0 * ax + na2 * nx2;
  return ((1.0 + 2.0 * ax + nx2) * a + (1.0 - na2) * x) / den;
}

Mat great_circle_rotation(const Vec& p, const Vec& q, double theta) {
  const int n = static_cast<int>(p.size());
  Mat r = Mat::Identity(n, n);
  r += std::sin(theta) * (q * p.transpose() - p * q.transpose());
  r += (std::cos(theta) - 1.0) * (p * p.transpose() + q * q.transpose());
  return r;
}

double geodesic_distance(const Point& x, const Point& y) {
  require_same_kind(x, y);
  switch (x.kind.tag) {
    case Manifold::Euclidean:
      return (x.coords - y.coords).norm();
    case Manifold::Hyperbolic: {
      require_inside_unit_ball(x);
      require_inside_unit_ball(y);
      const double a = 1.0 - x.coords.squaredNorm();
      const double b = 1.0 - y.coords.squaredNorm();
      const double u = (x.coords - y.coords).squaredNorm();
      return arcosh1p(2.0 * u / (a * b));
    }
    case Manifold::Spherical: {
      // arccos of the clamped inner product, evaluated via atan2 so that
      // coincident and antipodal inputs are exact
      const double c = x.coords.dot(y.coords);
      const double cross2 =
          x.coords.dot(x.coords) * y.coords.dot(y.coords) - c * c;
      return std::atan2(std::sqrt(std::max(cross2, 0.0)), c);
    }
  }
  throw MgtkError("unreachable");
}

double squared_distance(const Point& x, const Point& y) {
  const double d = geodesic_distance(x, y);
  return d * d;
}

Vec grad_sq_distance(const Point& x, const Point& y, const DomainBounds& bounds) {
  require_same_kind(x, y);
  switch (x.kind.tag) {
    case Manifold::Euclidean:
      return 2.0 * (x.coords - y.coords);
    case Manifold::Hyperbolic: {
      require_inside_unit_ball(x);
      require_inside_unit_ball(y);
      const Vec diff = x.coords - y.coords;
      const double u = diff.squaredNorm();
      if (std::sqrt(u) < kCoincidentTol)
        throw SingularityError("hyperbolic gradient at coincident points");
      const double a = 1.0 - x.coords.squaredNorm();
      const double b = 1.0 - y.coords.squaredNorm();
      const double ab = a * b;
      const double w = 2.0 * u / ab;           // z - 1
      const double s = std::sqrt(w * (w + 2.0));  // sqrt(z^2 - 1)
      const double d = arcosh1p(w);
      const Vec grad_d = (4.0 * ab * diff + 4.0 * u * b * x.coords) / (ab * ab * s);
      return 2.0 * d * grad_d;
    }
    case Manifold::Spherical: {
      const double c = clamp(x.coords.dot(y.coords), -1.0, 1.0);
      const double d = std::acos(c);
      if (d > M_PI - bounds.delta_S)
        throw SingularityError("spherical gradient near antipodal points");
      if (c > 1.0 - 1e-14)
        throw SingularityError("spherical gradient at coincident points");
      const Vec tangent = y.coords - c * x.coords;  // (I - x x^T) y
      return -2.0 * d / std::sqrt(1.0 - c * c) * tangent;
    }
  }
  throw MgtkError("unreachable");
}

Point apply_transport(const Transport& t, const Point& x,
                      double r_h, bool* clamped) {
  if (!(t.kind == x.kind))
    throw MgtkError("transport and point manifolds differ");
  if (clamped) *clamped = false;
  Point out;
  out.kind = x.kind;
  switch (t.kind.tag) {
    case Manifold::Euclidean:
      out.coords = t.rotation * (x.coords + t.translation);
      return out;
    case Manifold::Hyperbolic: {
      out.coords = t.rotation * mobius_add(t.translation, x.coords);
      const double n = out.coords.norm();
      if (n > r_h) {
        out.coords *= r_h * kBallShrink / n;
        if (clamped) *clamped = true;
      }
      return out;
    }
    case Manifold::Spherical: {
      const int n = t.kind.ambient_dim();
      const Vec p = t.translation.segment(0, n);
      const Vec q = t.translation.segment(n, n);
      const double theta = t.translation(2 * n);
      out.coords = t.rotation * (great_circle_rotation(p, q, theta) * x.coords);
      out.coords.normalize();
      return out;
    }
  }
  throw MgtkError("unreachable");
}

Transport inverse_transport(const Transport& t) {
  Transport inv;
  inv.kind = t.kind;
  const int n = t.kind.ambient_dim();
  switch (t.kind.tag) {
    case Manifold::Euclidean:
      // (U(x+v))^-1 = U^T y - v = U^T (y - U v)
      inv.rotation = t.rotation.transpose();
      inv.translation = -(t.rotation * t.translation);
      return inv;
    case Manifold::Hyperbolic:
      // (U(a (+) x))^-1 = U^T ((-U a) (+) y), using R(a (+) x) = Ra (+) Rx
      inv.rotation = t.rotation.transpose();
      inv.translation = -(t.rotation * t.translation);
      return inv;
    case Manifold::Spherical: {
      const Vec p = t.translation.segment(0, n);
      const Vec q = t.translation.segment(n, n);
      const double theta = t.translation(2 * n);
      inv.rotation = (t.rotation * great_circle_rotation(p, q, theta)).transpose();
      inv.translation = Transport::identity(t.kind).translation;
      return inv;
    }
  }
  throw MgtkError("unreachable");
}

namespace {
// gyr[a,b] as a matrix; gyration of the Mobius gyrogroup is orthogonal
Mat gyration_matrix(const Vec& a, const Vec& b) {
  const int n = static_cast<int>(a.size());
  Mat g(n, n);
  const Vec ab = mobius_add(a, b);
  for (int j = 0; j < n; ++j) {
    Vec e = Vec::Zero(n);
    e(j) = 0.25;  // keep the probe inside the ball; gyr is linear
    g.col(j) = 4.0 * mobius_add(-ab, mobius_add(a, mobius_add(b, e)));
  }
  return g;
}
}  // namespace

Transport compose_transports(const Transport& outer, const Transport& inner) {
  if (!(outer.kind == inner.kind))
    throw MgtkError("cannot compose transports of different kinds");
  Transport out;
  out.kind = outer.kind;
  const int n = outer.kind.ambient_dim();
  switch (outer.kind.tag) {
    case Manifold::Euclidean:
      // U2(U1(x+v1)+v2) = (U2 U1)(x + v1 + U1^T v2)
      out.rotation = outer.rotation * inner.rotation;
      out.translation = inner.translation + inner.rotation.transpose() * outer.translation;
      return out;
    case Manifold::Hyperbolic: {
      // U2(a2 (+) U1(a1 (+) x)) = (U2 G U1)((G U1)^T(a2 (+) U1 a1) (+) x)
      const Vec b = outer.translation;
      const Vec c = inner.rotation * inner.translation;
      const Mat g = gyration_matrix(b, c);
      out.rotation = outer.rotation * g * inner.rotation;
      out.translation = (g * inner.rotation).transpose() * mobius_add(b, c);
      return out;
    }
    case Manifold::Spherical: {
      const Vec pi = inner.translation.segment(0, n);
      const Vec qi = inner.translation.segment(n, n);
      const Vec po = outer.translation.segment(0, n);
      const Vec qo = outer.translation.segment(n, n);
      out.rotation = outer.rotation *
                     great_circle_rotation(po, qo, outer.translation(2 * n)) *
                     inner.rotation *
                     great_circle_rotation(pi, qi, inner.translation(2 * n));
      out.translation = Transport::identity(out.kind).translation;
      return out;
    }
  }
  throw MgtkError("unreachable");
}

double hyperbolic_diameter(double r_h) {
  if (r_h <= 0 || r_h >= 1) throw MgtkError("R_H must lie in (0,1)");
  const double s = 1.0 - r_h * r_h;
  return arcosh1p(8.0 * r_h * r_h / (s * s));
}

Mat haar_rotation(int n, std::mt19937_64& rng, bool special) {
  std::normal_distribution<double> gauss(0.0, 1.0);
  Mat a(n, n);
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < n; ++j) a(i, j) = gauss(rng);
  Eigen::HouseholderQR<Mat> qr(a);
  Mat q = qr.householderQ();
  Mat r = qr.matrixQR().triangularView<Eigen::Upper>();
  for (int j = 0; j < n; ++j)
    if (r(j, j) < 0) q.col(j) *= -1.0;
  if (special && q.determinant() < 0) q.col(0) *= -1.0;
  return q;
}

Transport random_isometry(ManifoldKind kind, std::mt19937_64& rng,
                          const DomainBounds& bounds, double translation_scale) {
  bounds.validate();
  Transport t;
  t.kind = kind;
  const int n = kind.ambient_dim();
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  std::normal_distribution<double> gauss(0.0, 1.0);
  t.rotation = haar_rotation(n, rng, kind.tag == Manifold::Spherical);
  switch (kind.tag) {
    case Manifold::Euclidean:
    case Manifold::Hyperbolic: {
      Vec dir(n);
      for (int i = 0; i < n; ++i) dir(i) = gauss(rng);
      dir.normalize();
      const double bound =
          (kind.tag == Manifold::Euclidean ? bounds.R_E : bounds.R_H) *
          translation_scale;
      t.translation = dir * bound * std::pow(unit(rng), 1.0 / n);
      return t;
    }
    case Manifold::Spherical: {
      Mat frame = haar_rotation(n, rng);
      t.translation = Vec::Zero(2 * n + 1);
      t.translation.segment(0, n) = frame.col(0);
      t.translation.segment(n, n) = frame.col(1);
      t.translation(2 * n) = 2.0 * M_PI * unit(rng) * translation_scale;
      return t;
    }
  }
  throw MgtkError("unreachable");
}

Transport random_isometry(ManifoldKind kind, std::uint64_t seed,
                          const DomainBounds& bounds, double translation_scale) {
  auto rng = seeded_rng(seed, 0x15071);
  return random_isometry(kind, rng, bounds, translation_scale);
}

Point random_point(ManifoldKind kind, std::mt19937_64& rng,
                   const DomainBounds& bounds, double radius_scale) {
  Point x;
  x.kind = kind;
  const int n = kind.ambient_dim();
  std::normal_distribution<double> gauss(0.0, 1.0);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  Vec dir(n);
  for (int i = 0; i < n; ++i) dir(i) = gauss(rng);
  dir.normalize();
  switch (kind.tag) {
    case Manifold::Euclidean:
      x.coords = dir * bounds.R_E * radius_scale * std::pow(unit(rng), 1.0 / n);
      return x;
    case Manifold::Hyperbolic:
      x.coords = dir * bounds.R_H * radius_scale * std::pow(unit(rng), 1.0 / n);
      return x;
    case Manifold::Spherical:
      x.coords = dir;
      return x;
  }
  throw MgtkError("unreachable");
}

void project_to_domain(Point& x, const DomainBounds& bounds) {
  const double n = x.coords.norm();
  switch (x.kind.tag) {
    case Manifold::Euclidean:
      if (n > bounds.R_E) x.coords *= bounds.R_E / n;
      return;
    case Manifold::Hyperbolic: {
      const double r = bounds.R_H * kBallShrink;
      if (n > r) x.coords *= r / n;
      return;
    }
    case Manifold::Spherical:
      x.coords /= n;
      return;
  }
}

}  // namespace mgtk
