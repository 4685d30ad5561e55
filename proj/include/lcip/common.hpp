#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <limits>
#include <numbers>
#include <random>
#include <stdexcept>
#include <string>
#include <string_view>

namespace lcip {

enum class ErrorCode {
  MissingColumn,
  MalformedRow,
  NonMonotoneFrames,
  UnknownLaneId,
  InvalidConfig,
  NotConverged,
  DegenerateInput,
  EmptyBoundary,
  TooFewPoints,
  SingularProjection,
  InvalidScene,
  TooShort,
  EmptySet,
  InsufficientClass,
  ShapeMismatch,
  InvalidParams,
  IoError,
  MissingArtifact,
};

inline std::string_view error_code_name(ErrorCode code) {
  switch (code) {
    case ErrorCode::MissingColumn: return "MissingColumn";
    case ErrorCode::MalformedRow: return "MalformedRow";
    case ErrorCode::NonMonotoneFrames: return "NonMonotoneFrames";
    case ErrorCode::UnknownLaneId: return "UnknownLaneId";
    case ErrorCode::InvalidConfig: return "InvalidConfig";
    case ErrorCode::NotConverged: return "NotConverged";
    case ErrorCode::DegenerateInput: return "DegenerateInput";
    case ErrorCode::EmptyBoundary: return "EmptyBoundary";
    case ErrorCode::TooFewPoints: return "TooFewPoints";
    case ErrorCode::SingularProjection: return "SingularProjection";
    case ErrorCode::InvalidScene: return "InvalidScene";
    case ErrorCode::TooShort: return "TooShort";
    case ErrorCode::EmptySet: return "EmptySet";
    case ErrorCode::InsufficientClass: return "InsufficientClass";
    case ErrorCode::ShapeMismatch: return "ShapeMismatch";
    case ErrorCode::InvalidParams: return "InvalidParams";
    case ErrorCode::IoError: return "IoError";
    case ErrorCode::MissingArtifact: return "MissingArtifact";
  }
  return "Unknown";
}

/// Exception carrying a machine-readable code plus the offending detail
/// (column name, track id, ...).
class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, std::string detail)
      : std::runtime_error(std::string(error_code_name(code)) + "(" + detail + ")"),
        code_(code),
        detail_(std::move(detail)) {}

  ErrorCode code() const noexcept { return code_; }
  const std::string& detail() const noexcept { return detail_; }

 private:
  ErrorCode code_;
  std::string detail_;
};

struct Point2 {
  double x = 0.0;
  double y = 0.0;

  friend bool operator==(const Point2&, const Point2&) = default;
};

inline double distance_sq(const Point2& a, const Point2& b) {
  const double dx = a.x - b.x;
  const double dy = a.y - b.y;
  return dx * dx + dy * dy;
}

enum class DriveSide { Right, Left };

/// Class indices are fixed: LK = 0, LLC = 1, RLC = 2.
enum class Label : int { LK = 0, LLC = 1, RLC = 2 };

inline constexpr std::array<std::string_view, 3> kLabelNames = {"LK", "LLC", "RLC"};

inline std::string_view label_name(Label label) { return kLabelNames[static_cast<int>(label)]; }

inline Label parse_label(std::string_view name) {
  for (int i = 0; i < 3; ++i) {
    if (kLabelNames[i] == name) return static_cast<Label>(i);
  }
  throw Error(ErrorCode::MalformedRow, "label " + std::string(name));
}

inline Label mirror_label(Label label) {
  switch (label) {
    case Label::LLC: return Label::RLC;
    case Label::RLC: return Label::LLC;
    default: return Label::LK;
  }
}

inline double wrap_angle(double a) {
  a = std::fmod(a + std::numbers::pi, 2.0 * std::numbers::pi);
  if (a < 0.0) a += 2.0 * std::numbers::pi;
  return a - std::numbers::pi;
}

// Seeded randomness. mt19937_64 output is fixed by the standard; the
// distribution helpers below avoid the implementation-defined std::
// distributions so seeded runs reproduce across standard libraries.
using Rng = std::mt19937_64;

inline std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9E3779B97F4A7C15ull;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ull;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBull;
  return x ^ (x >> 31);
}

/// Independent stream for a sub-task (track, regime, ...) of a global seed.
inline Rng derive_rng(std::uint64_t seed, std::uint64_t stream) {
  return Rng(splitmix64(seed ^ splitmix64(stream)));
}

inline double uniform01(Rng& rng) { return static_cast<double>(rng() >> 11) * 0x1.0p-53; }

inline double uniform(Rng& rng, double lo, double hi) { return lo + (hi - lo) * uniform01(rng); }

/// Uniform integer in [0, n) by rejection.
inline std::uint64_t uniform_index(Rng& rng, std::uint64_t n) {
  if (n == 0) throw std::invalid_argument("uniform_index: empty range");
  const std::uint64_t limit = std::numeric_limits<std::uint64_t>::max() -
                              std::numeric_limits<std::uint64_t>::max() % n;
  std::uint64_t r;
  do {
    r = rng();
  } while (r >= limit);
  return r % n;
}

/// Box-Muller, one value per call.
inline double normal(Rng& rng, double mean = 0.0, double stddev = 1.0) {
  double u1 = uniform01(rng);
  while (u1 <= 0.0) u1 = uniform01(rng);
  const double u2 = uniform01(rng);
  return mean + stddev * std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
}

template <typename Container>
void shuffle(Container& c, Rng& rng) {
  for (std::size_t i = c.size(); i > 1; --i) {
    const std::size_t j = uniform_index(rng, i);
    using std::swap;
    swap(c[i - 1], c[j]);
  }
}

/// FNV-1a, used for config and sample-id hashes.
inline std::uint64_t fnv1a(std::string_view bytes, std::uint64_t h = 0xcbf29ce484222325ull) {
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 0x100000001b3ull;
  }
  return h;
}

inline std::string hex64(std::uint64_t v) {
  static constexpr char digits[] = "0123456789abcdef";
  std::string out(16, '0');
  for (int i = 15; i >= 0; --i) {
    out[static_cast<std::size_t>(i)] = digits[v & 0xF];
    v >>= 4;
  }
  return out;
}

}  // namespace lcip
