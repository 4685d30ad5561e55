#pragma once

// Fixed-shape samples: per-frame 36-feature rows, resampling to 50 rows,
// position centering, z-score normalization, class balancing, drive-side
// mirroring, and the processed-dataset file format.

#include <algorithm>
#include <array>
#include <bit>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"
#include "lcip/common.hpp"
#include "lcip/csv.hpp"
#include "lcip/scene.hpp"

namespace lcip {

inline constexpr std::size_t kWindowRows = 50;
inline constexpr std::size_t kFeatureCount = 36;

/// Target block [l, s, l_dot, s_dot], then per slot p, f, lp, la, lf, rp, ra, rf
/// the block [dl, ds, l_dot, s_dot].
inline const std::vector<std::string>& feature_columns() {
  static const std::vector<std::string> cols = [] {
    std::vector<std::string> c = {"l", "s", "ldot", "sdot"};
    for (auto slot : kSlotNames) {
      const std::string s(slot);
      c.push_back("dl_" + s);
      c.push_back("ds_" + s);
      c.push_back("ldot_" + s);
      c.push_back("sdot_" + s);
    }
    return c;
  }();
  return cols;
}

/// Row-major dense matrix of doubles.
struct Matrix {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<double> data;

  Matrix() = default;
  Matrix(std::size_t r, std::size_t c, double v = 0.0) : rows(r), cols(c), data(r * c, v) {}

  double& operator()(std::size_t r, std::size_t c) { return data[r * cols + c]; }
  double operator()(std::size_t r, std::size_t c) const { return data[r * cols + c]; }
  std::span<double> row(std::size_t r) { return {data.data() + r * cols, cols}; }
  std::span<const double> row(std::size_t r) const { return {data.data() + r * cols, cols}; }

  friend bool operator==(const Matrix&, const Matrix&) = default;
};

/// Values used for an empty slot. Absent vehicles are placed far ahead or
/// behind in their slot's lane and move exactly like the target.
struct MissingNeighborPolicy {
  double far_ds = 200.0;   // |ds| of an absent preceding/following vehicle
  double clip_ds = 200.0;  // ds of present vehicles is clipped to [-clip, clip]

  nlohmann::json to_json() const {
    return {{"name", "far_lane_center_same_velocity"}, {"far_ds", far_ds}, {"clip_ds", clip_ds}};
  }
};

using FeatureRow = std::array<double, kFeatureCount>;

inline FeatureRow build_feature_row(const SceneFrame& scene, const MissingNeighborPolicy& policy = {}) {
  if (!scene.valid) throw Error(ErrorCode::InvalidScene, "target " + std::to_string(scene.target_id));
  FeatureRow row{};
  const FrenetState& t = scene.target;
  row[0] = t.l;
  row[1] = t.s;
  row[2] = t.l_dot;
  row[3] = t.s_dot;
  for (std::size_t k = 0; k < kSlotCount; ++k) {
    const Slot slot = static_cast<Slot>(k);
    const std::size_t base = 4 + 4 * k;
    const auto& nb = scene.neighbors[k];
    if (nb) {
      row[base] = nb->state.l - t.l;
      row[base + 1] = std::clamp(nb->state.s - t.s, -policy.clip_ds, policy.clip_ds);
      row[base + 2] = nb->state.l_dot;
      row[base + 3] = nb->state.s_dot;
      continue;
    }
    double dl = 0.0;
    double ds = 0.0;
    switch (slot) {
      case Slot::P: ds = policy.far_ds; break;
      case Slot::F: ds = -policy.far_ds; break;
      case Slot::LP: dl = scene.left_lane_offset; ds = policy.far_ds; break;
      case Slot::LA: dl = scene.left_lane_offset; break;
      case Slot::LF: dl = scene.left_lane_offset; ds = -policy.far_ds; break;
      case Slot::RP: dl = scene.right_lane_offset; ds = policy.far_ds; break;
      case Slot::RA: dl = scene.right_lane_offset; break;
      case Slot::RF: dl = scene.right_lane_offset; ds = -policy.far_ds; break;
    }
    row[base] = dl;
    row[base + 1] = ds;
    row[base + 2] = t.l_dot;
    row[base + 3] = t.s_dot;
  }
  return row;
}

/// Scene frames of one labeled window, before feature extraction.
struct RawWindow {
  std::vector<SceneFrame> frames;
  Label label = Label::LK;
};

/// Left-hand-traffic reflection; an involution.
inline RawWindow mirror_for_drive_side(const RawWindow& in) {
  RawWindow out;
  out.label = mirror_label(in.label);
  out.frames.reserve(in.frames.size());
  for (const auto& f : in.frames) out.frames.push_back(mirror_scene(f));
  return out;
}

inline Matrix window_features(const RawWindow& w, const MissingNeighborPolicy& policy = {}) {
  Matrix m(w.frames.size(), kFeatureCount);
  for (std::size_t r = 0; r < w.frames.size(); ++r) {
    const auto row = build_feature_row(w.frames[r], policy);
    std::copy(row.begin(), row.end(), m.row(r).begin());
  }
  return m;
}

/// Per-column linear interpolation from n_in rows onto n_out rows spanning
/// the same interval; endpoints are kept exactly.
inline Matrix resample_segment(const Matrix& in, std::size_t n_out = kWindowRows) {
  if (in.rows < 2 || n_out < 2) throw Error(ErrorCode::TooShort, std::to_string(in.rows) + " rows");
  if (in.rows == n_out) return in;
  Matrix out(n_out, in.cols);
  for (std::size_t k = 0; k < n_out; ++k) {
    const double u = k == n_out - 1 ? static_cast<double>(in.rows - 1)
                                    : static_cast<double>(k) * static_cast<double>(in.rows - 1) /
                                          static_cast<double>(n_out - 1);
    const auto i0 = std::min(static_cast<std::size_t>(std::floor(u)), in.rows - 1);
    const double t = u - static_cast<double>(i0);
    for (std::size_t c = 0; c < in.cols; ++c) {
      if (t == 0.0) {
        out(k, c) = in(i0, c);
      } else {
        const double a = in(i0, c);
        const double b = in(i0 + 1, c);
        out(k, c) = a + t * (b - a);
      }
    }
  }
  return out;
}

namespace detail {

/// Neumaier-compensated sum.
struct CompensatedSum {
  double sum = 0.0;
  double comp = 0.0;
  void add(double v) {
    const double t = sum + v;
    if (std::abs(sum) >= std::abs(v)) comp += (sum - t) + v;
    else comp += (v - t) + sum;
    sum = t;
  }
  double value() const { return sum + comp; }
};

}  // namespace detail

/// Subtracts the temporal mean from the target's l and s columns. A second
/// pass removes the residual mean left by rounding at large s.
inline Matrix center_positions(Matrix m) {
  for (std::size_t c = 0; c < 2; ++c) {
    for (int pass = 0; pass < 2; ++pass) {
      detail::CompensatedSum acc;
      for (std::size_t r = 0; r < m.rows; ++r) acc.add(m(r, c));
      const double mean = acc.value() / static_cast<double>(m.rows);
      for (std::size_t r = 0; r < m.rows; ++r) m(r, c) -= mean;
    }
  }
  return m;
}

struct Sample {
  Matrix matrix;
  Label label = Label::LK;
  std::string dataset_tag;
  int track_id = 0;
  long long start_frame = 0;
  long long end_frame = 0;

  /// Stable identity used by the split-hygiene audit.
  std::string id() const {
    return dataset_tag + ":" + std::to_string(track_id) + ":" + std::to_string(start_frame) + ":" +
           std::to_string(end_frame) + ":" + std::string(label_name(label));
  }
};

struct Normalizer {
  std::vector<double> mean;
  std::vector<double> stddev;
  std::vector<std::size_t> degenerate_columns;  // std replaced by 1

  nlohmann::json to_json() const {
    return {{"mean", mean}, {"std", stddev}, {"degenerate_columns", degenerate_columns}};
  }
  static Normalizer from_json(const nlohmann::json& j) {
    Normalizer n;
    n.mean = j.at("mean").get<std::vector<double>>();
    n.stddev = j.at("std").get<std::vector<double>>();
    n.degenerate_columns = j.value("degenerate_columns", std::vector<std::size_t>{});
    return n;
  }
};

/// Per-column z-score over every row of every training sample. Compensated
/// two-pass sums keep the result independent of accumulation order effects.
inline Normalizer fit_normalizer(std::span<const Sample> training) {
  if (training.empty()) throw Error(ErrorCode::EmptySet, "normalizer training set");
  const std::size_t d = training.front().matrix.cols;
  Normalizer n;
  n.mean.assign(d, 0.0);
  n.stddev.assign(d, 1.0);
  double count = 0.0;
  std::vector<detail::CompensatedSum> sums(d);
  for (const auto& s : training) {
    if (s.matrix.cols != d) throw Error(ErrorCode::ShapeMismatch, "sample column count");
    for (std::size_t r = 0; r < s.matrix.rows; ++r) {
      for (std::size_t c = 0; c < d; ++c) sums[c].add(s.matrix(r, c));
    }
    count += static_cast<double>(s.matrix.rows);
  }
  for (std::size_t c = 0; c < d; ++c) n.mean[c] = sums[c].value() / count;
  std::vector<detail::CompensatedSum> sq(d);
  for (const auto& s : training) {
    for (std::size_t r = 0; r < s.matrix.rows; ++r) {
      for (std::size_t c = 0; c < d; ++c) {
        const double dv = s.matrix(r, c) - n.mean[c];
        sq[c].add(dv * dv);
      }
    }
  }
  for (std::size_t c = 0; c < d; ++c) {
    const double sd = std::sqrt(sq[c].value() / count);
    if (!(sd > 1e-12 * std::max(1.0, std::abs(n.mean[c])))) {
      n.stddev[c] = 1.0;
      n.degenerate_columns.push_back(c);
    } else {
      n.stddev[c] = sd;
    }
  }
  return n;
}

inline Sample apply_normalizer(const Normalizer& n, Sample s) {
  if (s.matrix.cols != n.mean.size()) throw Error(ErrorCode::ShapeMismatch, "normalizer width");
  for (std::size_t r = 0; r < s.matrix.rows; ++r) {
    for (std::size_t c = 0; c < s.matrix.cols; ++c) s.matrix(r, c) = (s.matrix(r, c) - n.mean[c]) / n.stddev[c];
  }
  return s;
}

/// Exactly per_class_lc LLC, per_class_lc RLC and 2 per_class_lc LK per
/// dataset tag, drawn uniformly without replacement; input order kept.
inline std::vector<Sample> balance_dataset(std::span<const Sample> samples, std::size_t per_class_lc, Rng& rng) {
  std::map<std::string, std::array<std::vector<std::size_t>, 3>> groups;
  for (std::size_t i = 0; i < samples.size(); ++i) {
    groups[samples[i].dataset_tag][static_cast<std::size_t>(samples[i].label)].push_back(i);
  }
  std::vector<std::size_t> chosen;
  for (auto& [tag, by_label] : groups) {
    for (std::size_t lab = 0; lab < 3; ++lab) {
      auto& idx = by_label[lab];
      const std::size_t want = lab == 0 ? 2 * per_class_lc : per_class_lc;
      if (idx.size() < want) {
        throw Error(ErrorCode::InsufficientClass, tag + "," + std::string(kLabelNames[lab]) + ",available=" +
                                                      std::to_string(idx.size()) + ",requested=" +
                                                      std::to_string(want));
      }
      for (std::size_t k = 0; k < want; ++k) {
        const std::size_t j = k + uniform_index(rng, idx.size() - k);
        std::swap(idx[k], idx[j]);
      }
      chosen.insert(chosen.end(), idx.begin(), idx.begin() + static_cast<std::ptrdiff_t>(want));
    }
  }
  std::sort(chosen.begin(), chosen.end());
  std::vector<Sample> out;
  out.reserve(chosen.size());
  for (std::size_t i : chosen) out.push_back(samples[i]);
  return out;
}

// Processed dataset file: 8-byte magic, u64 LE header length, JSON header,
// then N x rows x cols little-endian float32 values, row-major.

inline constexpr char kDatasetMagic[8] = {'L', 'C', 'I', 'P', 'D', 'S', '0', '1'};

namespace detail {

inline void put_u64(std::string& out, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xFF));
}

inline std::uint64_t get_u64(const char* p) {
  std::uint64_t v = 0;
  for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(static_cast<unsigned char>(p[i])) << (8 * i);
  return v;
}

inline void put_f32(std::string& out, float f) {
  const auto bits = std::bit_cast<std::uint32_t>(f);
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((bits >> (8 * i)) & 0xFF));
}

inline float get_f32(const char* p) {
  std::uint32_t bits = 0;
  for (int i = 0; i < 4; ++i) bits |= static_cast<std::uint32_t>(static_cast<unsigned char>(p[i])) << (8 * i);
  return std::bit_cast<float>(bits);
}

}  // namespace detail

struct Dataset {
  std::vector<Sample> samples;
  nlohmann::json header;  // extra metadata (normalizer, seed, policy, config hash, ...)
};

inline std::string encode_dataset(std::span<const Sample> samples, nlohmann::json header) {
  const std::size_t rows = samples.empty() ? kWindowRows : samples.front().matrix.rows;
  const std::size_t cols = samples.empty() ? kFeatureCount : samples.front().matrix.cols;
  header["shape"] = {samples.size(), rows, cols};
  header["columns"] = feature_columns();
  header["label_map"] = {{"LK", 0}, {"LLC", 1}, {"RLC", 2}};
  header["dtype"] = "float32-le";
  nlohmann::json labels = nlohmann::json::array(), tags = nlohmann::json::array(),
                 prov = nlohmann::json::array();
  for (const auto& s : samples) {
    if (s.matrix.rows != rows || s.matrix.cols != cols) throw Error(ErrorCode::ShapeMismatch, s.id());
    labels.push_back(static_cast<int>(s.label));
    tags.push_back(s.dataset_tag);
    prov.push_back({s.track_id, s.start_frame, s.end_frame});
  }
  header["labels"] = labels;
  header["dataset_tags"] = tags;
  header["provenance"] = prov;
  const std::string h = header.dump();
  std::string out(kDatasetMagic, sizeof(kDatasetMagic));
  detail::put_u64(out, h.size());
  out += h;
  out.reserve(out.size() + samples.size() * rows * cols * 4);
  for (const auto& s : samples) {
    for (double v : s.matrix.data) detail::put_f32(out, static_cast<float>(v));
  }
  return out;
}

inline Dataset decode_dataset(const std::string& bytes, const std::string& source = "<memory>") {
  if (bytes.size() < 16 || std::memcmp(bytes.data(), kDatasetMagic, 8) != 0) {
    throw Error(ErrorCode::MalformedRow, source + ": not a dataset file");
  }
  const std::uint64_t hlen = detail::get_u64(bytes.data() + 8);
  if (16 + hlen > bytes.size()) throw Error(ErrorCode::MalformedRow, source + ": truncated header");
  Dataset ds;
  ds.header = nlohmann::json::parse(bytes.substr(16, hlen));
  const auto shape = ds.header.at("shape").get<std::vector<std::size_t>>();
  const std::size_t n = shape.at(0), rows = shape.at(1), cols = shape.at(2);
  const std::size_t need = 16 + hlen + n * rows * cols * 4;
  if (bytes.size() != need) throw Error(ErrorCode::MalformedRow, source + ": blob size mismatch");
  const auto& labels = ds.header.at("labels");
  const auto& tags = ds.header.at("dataset_tags");
  const auto& prov = ds.header.at("provenance");
  const char* p = bytes.data() + 16 + hlen;
  ds.samples.reserve(n);
  for (std::size_t i = 0; i < n; ++i) {
    Sample s;
    s.matrix = Matrix(rows, cols);
    for (auto& v : s.matrix.data) {
      v = detail::get_f32(p);
      p += 4;
    }
    s.label = static_cast<Label>(labels.at(i).get<int>());
    s.dataset_tag = tags.at(i).get<std::string>();
    s.track_id = prov.at(i).at(0).get<int>();
    s.start_frame = prov.at(i).at(1).get<long long>();
    s.end_frame = prov.at(i).at(2).get<long long>();
    ds.samples.push_back(std::move(s));
  }
  return ds;
}

inline void write_dataset(const std::filesystem::path& path, std::span<const Sample> samples,
                          nlohmann::json header) {
  csv::write_text(path, encode_dataset(samples, std::move(header)));
}

inline Dataset read_dataset(const std::filesystem::path& path) {
  return decode_dataset(csv::read_text(path), path.string());
}

}  // namespace lcip
