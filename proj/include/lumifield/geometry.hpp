#pragma once

#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <utility>
#include <vector>

#include "lumifield/rng.hpp"

namespace lumifield {

struct Vec2 {
  double x = 0.0, y = 0.0;

  double norm() const { return std::sqrt(x * x + y * y); }
};

struct Vec3 {
  double x = 0.0, y = 0.0, z = 0.0;

  Vec3 operator+(const Vec3& o) const { return {x + o.x, y + o.y, z + o.z}; }
  Vec3 operator-(const Vec3& o) const { return {x - o.x, y - o.y, z - o.z}; }
  Vec3 operator*(double s) const { return {x * s, y * s, z * s}; }
  Vec3 operator/(double s) const { return {x / s, y / s, z / s}; }

  double norm() const { return std::sqrt(x * x + y * y + z * z); }
};

inline Vec3 operator*(double s, const Vec3& v) { return v * s; }

inline double dot(const Vec3& a, const Vec3& b) {
  return a.x * b.x + a.y * b.y + a.z * b.z;
}

inline Vec3 cross(const Vec3& a, const Vec3& b) {
  return {a.y * b.z - a.z * b.y, a.z * b.x - a.x * b.z, a.x * b.y - a.y * b.x};
}

inline Vec3 normalized(const Vec3& v) {
  const double n = v.norm();
  if (n == 0.0) throw std::invalid_argument("cannot normalize zero vector");
  return v / n;
}

inline bool is_unit(const Vec3& v, double tol = 1e-6) {
  return std::abs(v.norm() - 1.0) <= tol;
}

// Row-major 3x3 matrix.
struct Mat3 {
  double m[3][3] = {{0, 0, 0}, {0, 0, 0}, {0, 0, 0}};

  static Mat3 identity() {
    Mat3 r;
    r.m[0][0] = r.m[1][1] = r.m[2][2] = 1.0;
    return r;
  }

  Vec3 operator*(const Vec3& v) const {
    return {m[0][0] * v.x + m[0][1] * v.y + m[0][2] * v.z,
            m[1][0] * v.x + m[1][1] * v.y + m[1][2] * v.z,
            m[2][0] * v.x + m[2][1] * v.y + m[2][2] * v.z};
  }

  Mat3 operator*(const Mat3& o) const {
    Mat3 r;
    for (int i = 0; i < 3; ++i)
      for (int j = 0; j < 3; ++j)
        for (int k = 0; k < 3; ++k) r.m[i][j] += m[i][k] * o.m[k][j];
    return r;
  }

  Mat3 transposed() const {
    Mat3 r;
    for (int i = 0; i < 3; ++i)
      for (int j = 0; j < 3; ++j) r.m[i][j] = m[j][i];
    return r;
  }

  double det() const {
    return m[0][0] * (m[1][1] * m[2][2] - m[1][2] * m[2][1]) -
           m[0][1] * (m[1][0] * m[2][2] - m[1][2] * m[2][0]) +
           m[0][2] * (m[1][0] * m[2][1] - m[1][1] * m[2][0]);
  }
};

inline bool is_rotation(const Mat3& r, double tol = 1e-6) {
  const Mat3 rtr = r.transposed() * r;
  const Mat3 eye = Mat3::identity();
  for (int i = 0; i < 3; ++i)
    for (int j = 0; j < 3; ++j)
      if (std::abs(rtr.m[i][j] - eye.m[i][j]) > tol) return false;
  return std::abs(r.det() - 1.0) <= tol;
}

// Rodrigues rotation about a unit axis, right-handed (counter-clockwise when
// looking down the axis toward the origin).
inline Mat3 rotation_about_axis(const Vec3& axis, double angle) {
  if (!is_unit(axis)) throw std::invalid_argument("rotation axis must be unit length");
  const double c = std::cos(angle), s = std::sin(angle), t = 1.0 - c;
  const double kx = axis.x, ky = axis.y, kz = axis.z;
  Mat3 r;
  r.m[0][0] = c + t * kx * kx;
  r.m[0][1] = t * kx * ky - s * kz;
  r.m[0][2] = t * kx * kz + s * ky;
  r.m[1][0] = t * ky * kx + s * kz;
  r.m[1][1] = c + t * ky * ky;
  r.m[1][2] = t * ky * kz - s * kx;
  r.m[2][0] = t * kz * kx - s * ky;
  r.m[2][1] = t * kz * ky + s * kx;
  r.m[2][2] = c + t * kz * kz;
  return r;
}

inline Mat3 rotation_y(double angle) {
  return rotation_about_axis({0.0, 1.0, 0.0}, angle);
}

// Minimal-angle rotation taking a unit vector a onto e_x. The frame in the
// plane orthogonal to the rotation output is pinned by this choice so that
// downstream features are deterministic.
inline Mat3 rotation_a_to_ex(const Vec3& a) {
  if (!is_unit(a)) throw std::invalid_argument("rotation_a_to_ex expects a unit vector");
  const Vec3 ex{1.0, 0.0, 0.0};
  const double c = dot(a, ex);
  if (c > 1.0 - 1e-12) return Mat3::identity();
  if (c < -1.0 + 1e-12) return rotation_about_axis({0.0, 1.0, 0.0}, M_PI);
  const Vec3 axis = normalized(cross(a, ex));
  return rotation_about_axis(axis, std::acos(std::clamp(c, -1.0, 1.0)));
}

inline double scalar_projection(const Vec3& b, const Vec3& a) {
  if (!is_unit(a)) throw std::invalid_argument("scalar_projection expects a unit axis");
  return dot(a, b);
}

// 2D coordinates of b in the plane orthogonal to a: rows 2-3 of R_{a->e_x} b.
inline Vec2 vector_rejection_2d(const Vec3& b, const Vec3& a) {
  if (!is_unit(a)) throw std::invalid_argument("vector_rejection_2d expects a unit axis");
  const Mat3 r = rotation_a_to_ex(a);
  const Vec3 rb = r * b;
  return {rb.y, rb.z};
}

// One direction uniform over the sphere by solid angle: azimuth uniform,
// polar angle by the inverse CDF of sin(phi)/2.
inline Vec3 sample_direction(Rng& rng) {
  const double theta = rng.uniform(0.0, 2.0 * M_PI);
  const double u = rng.uniform();
  const double phi = std::acos(1.0 - 2.0 * u);
  const double sp = std::sin(phi);
  return {sp * std::cos(theta), std::cos(phi), sp * std::sin(theta)};
}

inline std::vector<Vec3> sample_directions(int count, std::uint64_t seed) {
  if (count < 1) throw std::invalid_argument("sample_directions: count must be >= 1");
  Rng rng(seed);
  std::vector<Vec3> dirs;
  dirs.reserve(static_cast<std::size_t>(count));
  for (int i = 0; i < count; ++i) dirs.push_back(sample_direction(rng));
  return dirs;
}

// Equirectangular convention: y-up, polar angle phi measured from +y,
// pixel centers at half-integer offsets.
//   phi = pi*(row+0.5)/H, theta = 2*pi*(col+0.5)/W
//   d = (sin phi cos theta, cos phi, sin phi sin theta)
inline Vec3 pixel_to_direction(int row, int col, int height, int width) {
  const double phi = M_PI * (row + 0.5) / height;
  const double theta = 2.0 * M_PI * (col + 0.5) / width;
  const double sp = std::sin(phi);
  return {sp * std::cos(theta), std::cos(phi), sp * std::sin(theta)};
}

// Continuous pixel coordinates of a direction; row in [-0.5, H-0.5],
// col in [-0.5, W-0.5). Inverse of pixel_to_direction at pixel centers.
inline Vec2 direction_to_pixel_continuous(const Vec3& d, int height, int width) {
  const double phi = std::acos(std::clamp(d.y, -1.0, 1.0));
  double theta = std::atan2(d.z, d.x);
  if (theta < 0.0) theta += 2.0 * M_PI;
  return {phi / M_PI * height - 0.5, theta / (2.0 * M_PI) * width - 0.5};
}

inline std::pair<int, int> direction_to_pixel(const Vec3& d, int height, int width) {
  const Vec2 rc = direction_to_pixel_continuous(d, height, width);
  int row = static_cast<int>(std::lround(rc.x));
  int col = static_cast<int>(std::lround(rc.y));
  row = std::clamp(row, 0, height - 1);
  col = ((col % width) + width) % width;
  return {row, col};
}

// Per-row weights rho_r for spherical integration over the equirectangular
// row centers phi_r = (r+0.5)*pi/H: sum_r rho_r f(phi_r) approximates
// int f(phi) sin(phi) dphi. The underlying phi-rule comes from discrete
// sine orthogonality, so the result is exact whenever f(phi) sin(phi) is a
// sine polynomial of degree < H (any band-limited f). Reduces to
// sin(phi_r)*pi/H up to O(H^-2); the weights sum to exactly 2.
inline std::vector<double> equirect_row_weights(int height) {
  std::vector<double> w(static_cast<std::size_t>(height), 0.0);
  for (int r = 0; r < height; ++r) {
    const double phi = M_PI * (r + 0.5) / height;
    double acc = 0.0;
    for (int m = 1; m < height; m += 2) acc += (2.0 / m) * std::sin(m * phi);
    w[static_cast<std::size_t>(r)] = acc * 2.0 / height * std::sin(phi);
  }
  return w;
}

// Per-pixel solid angles of an H x W equirectangular grid; sums to 4*pi.
inline std::vector<double> equirect_solid_angles(int height, int width) {
  const std::vector<double> rows = equirect_row_weights(height);
  std::vector<double> omega(static_cast<std::size_t>(height) * width);
  const double dtheta = 2.0 * M_PI / width;
  for (int r = 0; r < height; ++r)
    for (int c = 0; c < width; ++c)
      omega[static_cast<std::size_t>(r) * width + c] = rows[static_cast<std::size_t>(r)] * dtheta;
  return omega;
}

}  // namespace lumifield
