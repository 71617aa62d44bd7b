#include "toothloop/mask_core.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <sstream>

namespace toothloop {

std::string_view to_string(ErrorCode code) {
  switch (code) {
    case ErrorCode::invalid_argument: return "invalid_argument";
    case ErrorCode::not_found: return "not_found";
    case ErrorCode::conflict: return "conflict";
    case ErrorCode::degenerate: return "degenerate";
    case ErrorCode::parse_error: return "parse_error";
    case ErrorCode::protocol_error: return "protocol_error";
    case ErrorCode::transport_error: return "transport_error";
    case ErrorCode::io_error: return "io_error";
  }
  return "unknown";
}

// ---------------------------------------------------------------------------
// Polygon

std::string Polygon::validate(std::span<const Point> vertices) {
  if (vertices.size() < 3) return "polygon needs at least 3 vertices";
  for (std::size_t i = 0; i < vertices.size(); ++i) {
    const Point& p = vertices[i];
    if (!std::isfinite(p.x) || !std::isfinite(p.y)) {
      return "vertex " + std::to_string(i) + " is not finite";
    }
    if (p.x < 0.0 || p.y < 0.0) {
      return "vertex " + std::to_string(i) + " has a negative coordinate";
    }
    const Point& next = vertices[(i + 1) % vertices.size()];
    if (p == next) {
      return "vertices " + std::to_string(i) + " and " +
             std::to_string((i + 1) % vertices.size()) + " coincide";
    }
  }
  return {};
}

Polygon::Polygon(std::vector<Point> vertices) : vertices_(std::move(vertices)) {
  if (auto problem = validate(vertices_); !problem.empty()) {
    throw Error(ErrorCode::invalid_argument, problem);
  }
}

double Polygon::area() const {
  double twice = 0.0;
  for (std::size_t i = 0, j = vertices_.size() - 1; i < vertices_.size();
       j = i++) {
    twice += vertices_[j].x * vertices_[i].y - vertices_[i].x * vertices_[j].y;
  }
  return std::abs(twice) * 0.5;
}

// ---------------------------------------------------------------------------
// BinaryMask

namespace {

void check_dimensions(std::uint32_t width, std::uint32_t height) {
  if (width < 1 || height < 1 || width > BinaryMask::kMaxSide ||
      height > BinaryMask::kMaxSide) {
    throw Error(ErrorCode::invalid_argument,
                "mask dimensions must be within 1.." +
                    std::to_string(BinaryMask::kMaxSide));
  }
}

}  // namespace

BinaryMask::BinaryMask(std::uint32_t width, std::uint32_t height)
    : width_(width), height_(height) {
  check_dimensions(width, height);
  runs_.push_back(width * height);
}

BinaryMask BinaryMask::from_runs(std::uint32_t width, std::uint32_t height,
                                 std::vector<std::uint32_t> runs) {
  check_dimensions(width, height);
  if (runs.empty()) throw Error(ErrorCode::invalid_argument, "no runs");
  std::uint64_t total = 0;
  for (std::size_t i = 0; i < runs.size(); ++i) {
    if (i > 0 && runs[i] == 0) {
      throw Error(ErrorCode::invalid_argument,
                  "zero-length run at index " + std::to_string(i));
    }
    total += runs[i];
  }
  if (total != std::uint64_t{width} * height) {
    throw Error(ErrorCode::invalid_argument,
                "run lengths sum to " + std::to_string(total) + ", expected " +
                    std::to_string(std::uint64_t{width} * height));
  }
  if (runs.size() == 1 && runs[0] == 0) {
    throw Error(ErrorCode::invalid_argument, "zero-length run at index 0");
  }
  BinaryMask mask;
  mask.width_ = width;
  mask.height_ = height;
  mask.runs_ = std::move(runs);
  return mask;
}

BinaryMask BinaryMask::from_dense(std::uint32_t width, std::uint32_t height,
                                  std::span<const std::uint8_t> pixels) {
  check_dimensions(width, height);
  if (pixels.size() != std::size_t{width} * height) {
    throw Error(ErrorCode::invalid_argument, "dense buffer has wrong size");
  }
  RunBuilder builder(width, height);
  for (std::uint8_t px : pixels) builder.push(px != 0, 1);
  return std::move(builder).finish();
}

std::vector<std::uint8_t> BinaryMask::to_dense() const {
  std::vector<std::uint8_t> out;
  out.reserve(std::size_t{width_} * height_);
  bool on = false;
  for (std::uint32_t run : runs_) {
    out.insert(out.end(), run, on ? 1 : 0);
    on = !on;
  }
  return out;
}

std::uint64_t BinaryMask::on_count() const noexcept {
  std::uint64_t count = 0;
  for (std::size_t i = 1; i < runs_.size(); i += 2) count += runs_[i];
  return count;
}

bool BinaryMask::at(std::uint32_t x, std::uint32_t y) const {
  if (x >= width_ || y >= height_) {
    throw Error(ErrorCode::invalid_argument, "pixel out of range");
  }
  const std::uint64_t index = std::uint64_t{y} * width_ + x;
  std::uint64_t pos = 0;
  bool on = false;
  for (std::uint32_t run : runs_) {
    if (index < pos + run) return on;
    pos += run;
    on = !on;
  }
  return false;
}

std::vector<BinaryMask::Span> BinaryMask::spans() const {
  std::vector<Span> out;
  std::uint64_t pos = 0;
  bool on = false;
  for (std::uint32_t run : runs_) {
    if (on) {
      // An on-run may wrap across row boundaries.
      std::uint64_t begin = pos;
      const std::uint64_t end = pos + run;
      while (begin < end) {
        const auto y = static_cast<std::uint32_t>(begin / width_);
        const std::uint64_t row_end = std::uint64_t{y + 1} * width_;
        const std::uint64_t stop = std::min(end, row_end);
        out.push_back({y, static_cast<std::uint32_t>(begin - std::uint64_t{y} * width_),
                       static_cast<std::uint32_t>(stop - std::uint64_t{y} * width_)});
        begin = stop;
      }
    }
    pos += run;
    on = !on;
  }
  return out;
}

std::optional<std::array<std::uint32_t, 4>> BinaryMask::bounding_box() const {
  auto s = spans();
  if (s.empty()) return std::nullopt;
  std::array<std::uint32_t, 4> box{width_, height_, 0, 0};
  for (const Span& sp : s) {
    box[0] = std::min(box[0], sp.begin);
    box[1] = std::min(box[1], sp.y);
    box[2] = std::max(box[2], sp.end);
    box[3] = std::max(box[3], sp.y + 1);
  }
  return box;
}

RunBuilder::RunBuilder(std::uint32_t width, std::uint32_t height)
    : width_(width), height_(height) {
  check_dimensions(width, height);
}

void RunBuilder::push(bool on, std::uint64_t length) {
  if (length == 0) return;
  if (on != current_on_) {
    runs_.push_back(static_cast<std::uint32_t>(current_length_));
    current_on_ = on;
    current_length_ = 0;
  }
  current_length_ += length;
  written_ += length;
}

BinaryMask RunBuilder::finish() && {
  if (written_ != std::uint64_t{width_} * height_) {
    throw Error(ErrorCode::invalid_argument, "run builder is incomplete");
  }
  runs_.push_back(static_cast<std::uint32_t>(current_length_));
  return BinaryMask::from_runs(width_, height_, std::move(runs_));
}

// ---------------------------------------------------------------------------
// RLE codec

namespace {

void put_varint(std::vector<std::uint8_t>& out, std::uint64_t value) {
  while (value >= 0x80) {
    out.push_back(static_cast<std::uint8_t>(value | 0x80));
    value >>= 7;
  }
  out.push_back(static_cast<std::uint8_t>(value));
}

std::uint64_t get_varint(std::span<const std::uint8_t> bytes, std::size_t& pos) {
  std::uint64_t value = 0;
  for (int shift = 0; shift < 64; shift += 7) {
    if (pos >= bytes.size()) {
      throw Error(ErrorCode::parse_error, "truncated varint at byte " +
                                              std::to_string(pos));
    }
    const std::uint8_t b = bytes[pos++];
    value |= std::uint64_t{b & 0x7Fu} << shift;
    if ((b & 0x80) == 0) return value;
  }
  throw Error(ErrorCode::parse_error, "varint too long");
}

}  // namespace

std::vector<std::uint8_t> encode_rle(const BinaryMask& mask) {
  std::vector<std::uint8_t> out;
  put_varint(out, mask.width());
  put_varint(out, mask.height());
  for (std::uint32_t run : mask.runs()) put_varint(out, run);
  return out;
}

BinaryMask decode_rle(std::span<const std::uint8_t> bytes) {
  std::size_t pos = 0;
  const std::uint64_t width = get_varint(bytes, pos);
  const std::uint64_t height = get_varint(bytes, pos);
  if (width > BinaryMask::kMaxSide || height > BinaryMask::kMaxSide) {
    throw Error(ErrorCode::parse_error, "mask dimensions out of range");
  }
  std::vector<std::uint32_t> runs;
  while (pos < bytes.size()) {
    const std::uint64_t run = get_varint(bytes, pos);
    if (run > std::uint64_t{width} * height) {
      throw Error(ErrorCode::parse_error, "run longer than the mask");
    }
    runs.push_back(static_cast<std::uint32_t>(run));
  }
  try {
    return BinaryMask::from_runs(static_cast<std::uint32_t>(width),
                                 static_cast<std::uint32_t>(height),
                                 std::move(runs));
  } catch (const Error& e) {
    throw Error(ErrorCode::parse_error, e.what());
  }
}

// ---------------------------------------------------------------------------
// Rasterization

BinaryMask rasterize(const Polygon& polygon, std::uint32_t width,
                     std::uint32_t height) {
  RunBuilder builder(width, height);
  const auto& v = polygon.vertices();
  std::vector<double> crossings;
  crossings.reserve(v.size());
  for (std::uint32_t y = 0; y < height; ++y) {
    const double yc = y + 0.5;
    crossings.clear();
    for (std::size_t i = 0, j = v.size() - 1; i < v.size(); j = i++) {
      const Point& a = v[i];
      const Point& b = v[j];
      if ((a.y > yc) != (b.y > yc)) {
        crossings.push_back((b.x - a.x) * (yc - a.y) / (b.y - a.y) + a.x);
      }
    }
    std::sort(crossings.begin(), crossings.end());
    std::uint32_t cursor = 0;
    for (std::size_t k = 0; k + 1 < crossings.size(); k += 2) {
      // Pixels whose center satisfies c0 <= x + 0.5 < c1.
      auto first_at_or_after = [&](double c) -> std::int64_t {
        if (c <= 0.5) return 0;
        if (c > width + 0.5) return width;
        auto x = static_cast<std::int64_t>(std::ceil(c - 0.5));
        while (x > 0 && (x - 1) + 0.5 >= c) --x;
        while (x + 0.5 < c) ++x;
        return x;
      };
      const std::int64_t lo = std::clamp<std::int64_t>(
          first_at_or_after(crossings[k]), cursor, width);
      const std::int64_t hi = std::clamp<std::int64_t>(
          first_at_or_after(crossings[k + 1]), lo, width);
      builder.push(false, static_cast<std::uint64_t>(lo - cursor));
      builder.push(true, static_cast<std::uint64_t>(hi - lo));
      cursor = static_cast<std::uint32_t>(hi);
    }
    builder.push(false, width - cursor);
  }
  return std::move(builder).finish();
}

// ---------------------------------------------------------------------------
// Moments

namespace {

using i128 = __int128;

// Sums over k in [0, n) of (2k + 1)^p.
std::array<i128, 4> odd_power_prefix(i128 n) {
  return {n, n * n, n * (4 * n * n - 1) / 3, n * n * (2 * n * n - 1)};
}

// Exact moments in doubled pixel-center coordinates X = 2x + 1, Y = 2y + 1.
using ExactMoments = std::array<std::array<i128, 4>, 4>;

ExactMoments exact_raw_moments(const BinaryMask& mask) {
  ExactMoments m{};
  for (const auto& s : mask.spans()) {
    const auto hi = odd_power_prefix(s.end);
    const auto lo = odd_power_prefix(s.begin);
    const i128 yc = 2 * i128{s.y} + 1;
    const std::array<i128, 4> ypow{1, yc, yc * yc, yc * yc * yc};
    for (int p = 0; p <= 3; ++p) {
      const i128 sx = hi[p] - lo[p];
      for (int q = 0; p + q <= 3; ++q) m[p][q] += sx * ypow[q];
    }
  }
  return m;
}

constexpr i128 kBinom[4][4] = {{1, 0, 0, 0}, {1, 1, 0, 0}, {1, 2, 1, 0},
                               {1, 3, 3, 1}};

i128 ipow(i128 base, int e) {
  i128 r = 1;
  while (e-- > 0) r *= base;
  return r;
}

}  // namespace

std::array<double, 7> hu_invariants(
    const std::array<std::array<double, 4>, 4>& eta) {
  const double n20 = eta[2][0], n02 = eta[0][2], n11 = eta[1][1];
  const double n30 = eta[3][0], n03 = eta[0][3], n21 = eta[2][1],
               n12 = eta[1][2];
  const double a = n30 + n12;
  const double b = n21 + n03;
  const double c = n30 - 3 * n12;
  const double d = 3 * n21 - n03;
  std::array<double, 7> h{};
  h[0] = n20 + n02;
  h[1] = (n20 - n02) * (n20 - n02) + 4 * n11 * n11;
  h[2] = c * c + d * d;
  h[3] = a * a + b * b;
  h[4] = c * a * (a * a - 3 * b * b) + d * b * (3 * a * a - b * b);
  h[5] = (n20 - n02) * (a * a - b * b) + 4 * n11 * a * b;
  h[6] = d * a * (a * a - 3 * b * b) - c * b * (3 * a * a - b * b);
  return h;
}

MomentSet compute_moments(const BinaryMask& mask) {
  const ExactMoments m = exact_raw_moments(mask);
  MomentSet out;
  for (int p = 0; p <= 3; ++p) {
    for (int q = 0; p + q <= 3; ++q) {
      out.raw[p][q] = std::ldexp(static_cast<double>(m[p][q]), -(p + q));
    }
  }
  const i128 n = m[0][0];
  if (n == 0) return out;
  out.defined = true;

  // Central moments about the centroid, kept exact as
  // D_pq = N^(p+q-1) * 2^(p+q) * mu_pq, an integer for p + q >= 1.
  const i128 a = m[1][0];
  const i128 b = m[0][1];
  const double nd = static_cast<double>(n);
  out.central[0][0] = nd;
  for (int p = 0; p <= 3; ++p) {
    for (int q = 0; p + q <= 3; ++q) {
      if (p + q < 2) continue;
      i128 acc = ipow(-a, p) * ipow(-b, q);
      for (int i = 0; i <= p; ++i) {
        for (int j = 0; j <= q; ++j) {
          if (i + j == 0) continue;
          acc += kBinom[p][i] * kBinom[q][j] * ipow(n, i + j - 1) *
                 ipow(-a, p - i) * ipow(-b, q - j) * m[i][j];
        }
      }
      out.central[p][q] = std::ldexp(static_cast<double>(acc), -(p + q)) /
                          std::pow(nd, p + q - 1);
    }
  }
  for (int p = 0; p <= 3; ++p) {
    for (int q = 0; p + q <= 3; ++q) {
      if (p + q < 2) continue;
      out.normalized[p][q] =
          out.central[p][q] / std::pow(nd, 1.0 + (p + q) / 2.0);
    }
  }
  out.hu = hu_invariants(out.normalized);
  return out;
}

Centroid centroid(const BinaryMask& mask) {
  const MomentSet m = compute_moments(mask);
  if (!m.defined) {
    throw Error(ErrorCode::degenerate, "centroid of an empty mask is undefined");
  }
  return {m.raw[1][0] / m.raw[0][0], m.raw[0][1] / m.raw[0][0]};
}

Orientation orientation_from_vertical(const MomentSet& moments) {
  if (!moments.defined) {
    throw Error(ErrorCode::degenerate, "orientation of an empty mask is undefined");
  }
  const double mu20 = moments.central[2][0];
  const double mu02 = moments.central[0][2];
  const double mu11 = moments.central[1][1];
  const double mu00 = moments.central[0][0];
  if (std::abs(mu20 - mu02) + std::abs(mu11) <= 1e-9 * mu00 * mu00) {
    return {0.0, true};
  }
  // Principal axis angle in image coordinates, measured from +x toward +y
  // (downward). Adding 90 degrees measures it from the upward vertical.
  const double axis =
      0.5 * std::atan2(2.0 * mu11, mu20 - mu02) * 180.0 / std::numbers::pi;
  double tilt = axis + 90.0;
  while (tilt > 90.0) tilt -= 180.0;
  while (tilt <= -90.0) tilt += 180.0;
  return {tilt, false};
}

Orientation orientation_from_vertical(const BinaryMask& mask) {
  return orientation_from_vertical(compute_moments(mask));
}

std::uint64_t intersection_count(const BinaryMask& a, const BinaryMask& b) {
  if (a.width() != b.width() || a.height() != b.height()) {
    throw Error(ErrorCode::invalid_argument,
                "mask dimensions differ: " + std::to_string(a.width()) + "x" +
                    std::to_string(a.height()) + " vs " +
                    std::to_string(b.width()) + "x" + std::to_string(b.height()));
  }
  // Walk both run lists, accumulating overlap of on-runs.
  struct Cursor {
    const std::vector<std::uint32_t>& runs;
    std::size_t index = 0;
    std::uint64_t start = 0;
    std::uint64_t end() const { return start + runs[index]; }
    bool on() const { return index % 2 == 1; }
    bool done() const { return index >= runs.size(); }
    void advance() {
      start += runs[index];
      ++index;
    }
  };
  Cursor ca{a.runs()}, cb{b.runs()};
  std::uint64_t count = 0;
  while (!ca.done() && !cb.done()) {
    const std::uint64_t lo = std::max(ca.start, cb.start);
    const std::uint64_t hi = std::min(ca.end(), cb.end());
    if (ca.on() && cb.on() && hi > lo) count += hi - lo;
    if (ca.end() <= cb.end()) {
      ca.advance();
    } else {
      cb.advance();
    }
  }
  return count;
}

double iou(const BinaryMask& a, const BinaryMask& b) {
  const std::uint64_t inter = intersection_count(a, b);
  const std::uint64_t uni = a.on_count() + b.on_count() - inter;
  if (uni == 0) return 0.0;
  return static_cast<double>(inter) / static_cast<double>(uni);
}

}  // namespace toothloop
