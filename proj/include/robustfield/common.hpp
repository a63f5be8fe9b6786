#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <cstdlib>
#include <exception>
#include <functional>
#include <limits>
#include <stdexcept>
#include <string>
#include <thread>
#include <vector>

namespace robustfield {

/// Raised when an argument violates a documented precondition.
class InvalidArgument : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Raised for malformed or missing on-disk data.
class LoadError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Raised when a generation or training run cannot complete.
class RuntimeFailure : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

inline void require(bool condition, const std::string& message) {
  if (!condition) throw InvalidArgument(message);
}

// ---------------------------------------------------------------------------
// Small fixed-size vector

template <typename Real>
struct Vec3 {
  Real x{0}, y{0}, z{0};

  constexpr Vec3() = default;
  constexpr Vec3(Real x_, Real y_, Real z_) : x(x_), y(y_), z(z_) {}

  template <typename Other>
  constexpr explicit Vec3(const Vec3<Other>& o)
      : x(static_cast<Real>(o.x)), y(static_cast<Real>(o.y)), z(static_cast<Real>(o.z)) {}

  constexpr Real operator[](std::size_t i) const { return i == 0 ? x : (i == 1 ? y : z); }
  constexpr Real& operator[](std::size_t i) { return i == 0 ? x : (i == 1 ? y : z); }

  constexpr Vec3 operator+(const Vec3& o) const { return {x + o.x, y + o.y, z + o.z}; }
  constexpr Vec3 operator-(const Vec3& o) const { return {x - o.x, y - o.y, z - o.z}; }
  constexpr Vec3 operator-() const { return {-x, -y, -z}; }
  constexpr Vec3 operator*(Real s) const { return {x * s, y * s, z * s}; }
  constexpr Vec3 operator/(Real s) const { return {x / s, y / s, z / s}; }
  constexpr Vec3& operator+=(const Vec3& o) {
    x += o.x;
    y += o.y;
    z += o.z;
    return *this;
  }
  constexpr bool operator==(const Vec3&) const = default;
};

template <typename Real>
constexpr Vec3<Real> operator*(Real s, const Vec3<Real>& v) {
  return v * s;
}

template <typename Real>
constexpr Real dot(const Vec3<Real>& a, const Vec3<Real>& b) {
  return a.x * b.x + a.y * b.y + a.z * b.z;
}

template <typename Real>
constexpr Vec3<Real> cross(const Vec3<Real>& a, const Vec3<Real>& b) {
  return {a.y * b.z - a.z * b.y, a.z * b.x - a.x * b.z, a.x * b.y - a.y * b.x};
}

template <typename Real>
Real norm(const Vec3<Real>& v) {
  return std::sqrt(dot(v, v));
}

template <typename Real>
Vec3<Real> normalized(const Vec3<Real>& v) {
  return v / norm(v);
}

template <typename Real>
constexpr Vec3<Real> hadamard(const Vec3<Real>& a, const Vec3<Real>& b) {
  return {a.x * b.x, a.y * b.y, a.z * b.z};
}

using Vec3d = Vec3<double>;
using Vec3f = Vec3<float>;
using Rgb = Vec3<double>;

/// Axis-aligned box.
struct Aabb {
  Vec3d lo;
  Vec3d hi;

  [[nodiscard]] Vec3d extent() const { return hi - lo; }
  [[nodiscard]] Vec3d center() const { return (lo + hi) * 0.5; }
  [[nodiscard]] double diagonal() const { return norm(extent()); }
  [[nodiscard]] bool valid() const { return hi.x > lo.x && hi.y > lo.y && hi.z > lo.z; }
  [[nodiscard]] bool contains(const Vec3d& p) const {
    return p.x >= lo.x && p.x <= hi.x && p.y >= lo.y && p.y <= hi.y && p.z >= lo.z &&
           p.z <= hi.z;
  }

  bool operator==(const Aabb&) const = default;
};

// ---------------------------------------------------------------------------
// Images

/// Row-major 2-D array.
template <typename T>
class Grid2 {
 public:
  Grid2() = default;
  Grid2(int height, int width, T fill = T{})
      : height_(height), width_(width), data_(static_cast<std::size_t>(height) * width, fill) {
    require(height >= 0 && width >= 0, "Grid2: negative dimensions");
  }

  [[nodiscard]] int height() const { return height_; }
  [[nodiscard]] int width() const { return width_; }
  [[nodiscard]] std::size_t size() const { return data_.size(); }
  [[nodiscard]] bool empty() const { return data_.empty(); }

  T& operator()(int row, int col) { return data_[static_cast<std::size_t>(row) * width_ + col]; }
  const T& operator()(int row, int col) const {
    return data_[static_cast<std::size_t>(row) * width_ + col];
  }

  [[nodiscard]] std::vector<T>& values() { return data_; }
  [[nodiscard]] const std::vector<T>& values() const { return data_; }

  template <typename U>
  [[nodiscard]] bool same_shape(const Grid2<U>& o) const {
    return height_ == o.height() && width_ == o.width();
  }

  bool operator==(const Grid2&) const = default;

 private:
  int height_ = 0;
  int width_ = 0;
  std::vector<T> data_;
};

using Image = Grid2<Rgb>;
using BinaryMask = Grid2<std::uint8_t>;

/// Rounds an intensity in [0,1] to the 8-bit code used on disk.
inline std::uint8_t to_byte(double v) {
  return static_cast<std::uint8_t>(std::lround(std::clamp(v, 0.0, 1.0) * 255.0));
}

inline double from_byte(std::uint8_t b) { return static_cast<double>(b) / 255.0; }

inline Image quantize(const Image& img) {
  Image out(img.height(), img.width());
  for (std::size_t i = 0; i < img.size(); ++i) {
    const Rgb& c = img.values()[i];
    out.values()[i] = {from_byte(to_byte(c.x)), from_byte(to_byte(c.y)), from_byte(to_byte(c.z))};
  }
  return out;
}

// ---------------------------------------------------------------------------
// Random numbers

/// Deterministic 64-bit generator (splitmix64). Identical streams on every platform.
class Rng {
 public:
  explicit Rng(std::uint64_t seed = 0) : state_(seed) {}

  std::uint64_t next() {
    std::uint64_t z = (state_ += 0x9E3779B97F4A7C15ULL);
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
    return z ^ (z >> 31);
  }

  /// Uniform in [0, 1).
  double uniform() { return static_cast<double>(next() >> 11) * 0x1.0p-53; }
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  /// Uniform integer in [0, n).
  std::uint64_t below(std::uint64_t n) { return n == 0 ? 0 : next() % n; }

  [[nodiscard]] std::uint64_t state() const { return state_; }

  /// Independent child stream, keyed by a label.
  [[nodiscard]] Rng fork(std::uint64_t key) const {
    Rng tmp(state_ ^ (key * 0xD1B54A32D192ED03ULL));
    tmp.next();
    return Rng(tmp.next());
  }

 private:
  std::uint64_t state_;
};

// ---------------------------------------------------------------------------
// Worker pool

/// Worker count from ROBUSTFIELD_THREADS, else the hardware concurrency.
inline int worker_count() {
  if (const char* env = std::getenv("ROBUSTFIELD_THREADS")) {
    const int n = std::atoi(env);
    if (n > 0) return n;
  }
  const unsigned hw = std::thread::hardware_concurrency();
  return hw == 0 ? 1 : static_cast<int>(hw);
}

/// Runs body(worker, begin, end) over a static partition of [0, n). Partition
/// boundaries depend only on n and the worker count, so per-worker reductions
/// merged in worker order are reproducible.
inline void parallel_chunks(std::size_t n, int workers,
                            const std::function<void(int, std::size_t, std::size_t)>& body) {
  workers = std::max(1, std::min<int>(workers, static_cast<int>(std::max<std::size_t>(n, 1))));
  if (workers == 1) {
    body(0, 0, n);
    return;
  }
  std::vector<std::thread> threads;
  std::vector<std::exception_ptr> errors(static_cast<std::size_t>(workers));
  threads.reserve(static_cast<std::size_t>(workers));
  for (int w = 0; w < workers; ++w) {
    const std::size_t begin = n * static_cast<std::size_t>(w) / static_cast<std::size_t>(workers);
    const std::size_t end = n * static_cast<std::size_t>(w + 1) / static_cast<std::size_t>(workers);
    threads.emplace_back([&, w, begin, end] {
      try {
        body(w, begin, end);
      } catch (...) {
        errors[static_cast<std::size_t>(w)] = std::current_exception();
      }
    });
  }
  for (auto& t : threads) t.join();
  for (auto& e : errors)
    if (e) std::rethrow_exception(e);
}

inline void parallel_for(std::size_t n, int workers, const std::function<void(std::size_t)>& body) {
  parallel_chunks(n, workers, [&](int, std::size_t begin, std::size_t end) {
    for (std::size_t i = begin; i < end; ++i) body(i);
  });
}

}  // namespace robustfield
