#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "toothloop/error.hpp"

namespace toothloop {

struct Point {
  double x = 0.0;
  double y = 0.0;

  friend bool operator==(const Point&, const Point&) = default;
};

/// Closed polygon in image coordinates (x right, y down). The last vertex
/// connects back to the first.
class Polygon {
 public:
  Polygon() = default;

  /// Throws Error{invalid_argument} unless the vertex list satisfies
  /// `validate`.
  explicit Polygon(std::vector<Point> vertices);

  /// Empty string when valid, otherwise a description of the first problem.
  /// Valid: >= 3 vertices, finite non-negative coordinates, no two
  /// consecutive (cyclically) equal vertices.
  static std::string validate(std::span<const Point> vertices);

  const std::vector<Point>& vertices() const noexcept { return vertices_; }
  std::size_t size() const noexcept { return vertices_.size(); }
  const Point& operator[](std::size_t i) const { return vertices_[i]; }

  /// Shoelace area (absolute value).
  double area() const;

  friend bool operator==(const Polygon&, const Polygon&) = default;

 private:
  std::vector<Point> vertices_;
};

/// Binary image stored as row-major run lengths: off, on, off, on, ...
/// The first run is an off run and may be zero; no other run is zero.
class BinaryMask {
 public:
  /// Largest supported side length. Moment sums are carried exactly in
  /// 128-bit integers and this bound keeps third-order terms in range.
  static constexpr std::uint32_t kMaxSide = 8192;

  BinaryMask() = default;

  /// All-off mask.
  BinaryMask(std::uint32_t width, std::uint32_t height);

  /// `runs` must satisfy the class invariants; throws otherwise.
  static BinaryMask from_runs(std::uint32_t width, std::uint32_t height,
                              std::vector<std::uint32_t> runs);

  /// `pixels` is row-major, nonzero = on.
  static BinaryMask from_dense(std::uint32_t width, std::uint32_t height,
                               std::span<const std::uint8_t> pixels);

  std::vector<std::uint8_t> to_dense() const;

  std::uint32_t width() const noexcept { return width_; }
  std::uint32_t height() const noexcept { return height_; }
  const std::vector<std::uint32_t>& runs() const noexcept { return runs_; }

  std::uint64_t on_count() const noexcept;
  bool empty() const noexcept { return on_count() == 0; }
  bool at(std::uint32_t x, std::uint32_t y) const;

  /// Half-open on-intervals [begin, end) of row `y`, derived from the runs.
  struct Span {
    std::uint32_t y;
    std::uint32_t begin;
    std::uint32_t end;
  };
  std::vector<Span> spans() const;

  /// Bounding box of on pixels as (x0, y0, x1, y1), half-open. nullopt when
  /// empty.
  std::optional<std::array<std::uint32_t, 4>> bounding_box() const;

  friend bool operator==(const BinaryMask&, const BinaryMask&) = default;

 private:
  std::uint32_t width_ = 0;
  std::uint32_t height_ = 0;
  std::vector<std::uint32_t> runs_;
};

/// Wire/disk layout: unsigned LEB128 varints `width, height, run_0, run_1,
/// ...` until end of buffer.
std::vector<std::uint8_t> encode_rle(const BinaryMask& mask);
BinaryMask decode_rle(std::span<const std::uint8_t> bytes);

/// Builds runs from a row-major on/off predicate stream; shared by the dense
/// and rasterizer paths.
class RunBuilder {
 public:
  RunBuilder(std::uint32_t width, std::uint32_t height);
  /// Appends `length` pixels of the given value.
  void push(bool on, std::uint64_t length);
  BinaryMask finish() &&;

 private:
  std::uint32_t width_;
  std::uint32_t height_;
  std::uint64_t written_ = 0;
  bool current_on_ = false;
  std::uint64_t current_length_ = 0;
  std::vector<std::uint32_t> runs_;
};

/// Pixel (x, y) is on iff its center (x + 0.5, y + 0.5) lies inside the
/// polygon under the even-odd rule. Degenerate or fully clipped polygons
/// give an all-off mask.
BinaryMask rasterize(const Polygon& polygon, std::uint32_t width,
                     std::uint32_t height);

/// Moments of a binary mask, sampled at pixel centers. Indices follow
/// `[p][q]` for x^p y^q with p + q <= 3.
struct MomentSet {
  std::array<std::array<double, 4>, 4> raw{};
  std::array<std::array<double, 4>, 4> central{};
  std::array<std::array<double, 4>, 4> normalized{};
  std::array<double, 7> hu{};
  /// False for an empty mask; central/normalized/hu are then zero-filled and
  /// meaningless.
  bool defined = false;

  double area() const { return raw[0][0]; }
};

MomentSet compute_moments(const BinaryMask& mask);

/// Hu's seven invariants from normalized central moments.
std::array<double, 7> hu_invariants(
    const std::array<std::array<double, 4>, 4>& eta);

struct Centroid {
  double x;
  double y;
};

/// Throws Error{degenerate} for an empty mask.
Centroid centroid(const BinaryMask& mask);

struct Orientation {
  /// Tilt of the principal axis from vertical, in (-90, 90]. Positive when
  /// the top of the midline leans toward +x.
  double degrees = 0.0;
  /// Set when the second moments do not single out an axis (disk-like).
  bool degenerate = false;
};

Orientation orientation_from_vertical(const BinaryMask& mask);
Orientation orientation_from_vertical(const MomentSet& moments);

/// |a ∩ b| / |a ∪ b|, 0 when both are empty. Throws on size mismatch.
double iou(const BinaryMask& a, const BinaryMask& b);

/// |a ∩ b|. Throws on size mismatch.
std::uint64_t intersection_count(const BinaryMask& a, const BinaryMask& b);

}  // namespace toothloop
