#pragma once

// Stage-by-stage pipeline over on-disk artifacts. Layout under config.out:
//
//   config.json                         effective merged config + hash
//   <tag>/raw/                          synth output (synthetic populations)
//   <tag>/ingest/tracks_index.csv
//   <tag>/refpath/<direction>.csv, svm.json, boundary.csv
//   <tag>/convert/frenet.csv
//   <tag>/segment/instants.csv, segments.csv
//   <tag>/features/samples.lcds          balanced, un-normalized samples
//   train/<regime>_seed<k>.ckpt, _history.csv, _ids.csv
//   evaluate/predictions.csv, audit.json
//   report/accuracy_matrix.csv, confusion_*.csv, report.json, accuracy_matrix.svg
//
// Every stage directory holds a manifest.json with the config hash, the
// global seed and content hashes of the stage's inputs and outputs.

#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <tuple>
#include <unordered_map>
#include <vector>

#include "json.hpp"
#include "lcip/common.hpp"
#include "lcip/csv.hpp"
#include "lcip/experiment.hpp"
#include "lcip/features.hpp"
#include "lcip/frenet.hpp"
#include "lcip/ingest.hpp"
#include "lcip/model.hpp"
#include "lcip/refpath.hpp"
#include "lcip/scene.hpp"
#include "lcip/segment.hpp"
#include "lcip/svm.hpp"
#include "lcip/synth.hpp"

namespace lcip {

namespace fs = std::filesystem;

struct PopulationSource {
  std::string tag;
  std::optional<PopulationParams> synth;  // generated into <out>/<tag>/raw
  fs::path tracks, meta, lane_config;     // external recordings

  nlohmann::json to_json() const {
    nlohmann::json j = {{"tag", tag}};
    if (synth) {
      j["synth"] = synth->to_json();
    } else {
      j["tracks"] = tracks.string();
      j["meta"] = meta.string();
      j["lane_config"] = lane_config.string();
    }
    return j;
  }
};

inline std::vector<PopulationSource> default_populations() {
  PopulationSource a, b;
  a.tag = "A";
  a.synth = population_a();
  b.tag = "B";
  b.synth = population_b();
  return {a, b};
}

struct RefpathConfig {
  SvmOptions svm;
  std::size_t max_points = 20000;  // per class, uniform subsample
  double grid_step = 1.0;
  double bbox_padding = 2.0;
  double boundary_margin = 10.0;   // boundary points farther than this from any training point are dropped
  std::size_t smoothing_window = 9;
  double spacing = 1.0;

  nlohmann::json to_json() const {
    return {{"c", svm.c},
            {"gamma", svm.gamma},
            {"tol", svm.tol},
            {"max_iterations", svm.max_iterations},
            {"max_points", max_points},
            {"grid_step", grid_step},
            {"bbox_padding", bbox_padding},
            {"boundary_margin", boundary_margin},
            {"smoothing_window", smoothing_window},
            {"spacing", spacing}};
  }
  static RefpathConfig from_json(const nlohmann::json& j, RefpathConfig r) {
    r.svm.c = j.value("c", r.svm.c);
    r.svm.gamma = j.value("gamma", r.svm.gamma);
    r.svm.tol = j.value("tol", r.svm.tol);
    r.svm.max_iterations = j.value("max_iterations", r.svm.max_iterations);
    r.max_points = j.value("max_points", r.max_points);
    r.grid_step = j.value("grid_step", r.grid_step);
    r.bbox_padding = j.value("bbox_padding", r.bbox_padding);
    r.boundary_margin = j.value("boundary_margin", r.boundary_margin);
    r.smoothing_window = j.value("smoothing_window", r.smoothing_window);
    r.spacing = j.value("spacing", r.spacing);
    return r;
  }
};

struct PipelineConfig {
  fs::path out = "runs/demo";
  std::uint64_t seed = 7;
  std::size_t threads = 1;
  std::vector<PopulationSource> populations = default_populations();
  RefpathConfig refpath;
  FrenetOptions frenet;
  SegmentOptions segment;
  MissingNeighborPolicy policy;
  std::size_t per_class_lc = 827;
  ModelConfig model;
  TrainConfig train;
  ExperimentPlan plan{.populations = {"A", "B"}};

  /// Effective configuration; key order is deterministic (sorted objects).
  nlohmann::json to_json() const {
    nlohmann::json pops = nlohmann::json::array();
    for (const auto& p : populations) pops.push_back(p.to_json());
    return {{"out", out.string()},
            {"seed", seed},
            {"threads", threads},
            {"populations", pops},
            {"refpath", refpath.to_json()},
            {"frenet",
             {{"curvature_threshold", frenet.curvature_threshold},
              {"singular_epsilon", frenet.singular_epsilon},
              {"ldot_formula", ldot_formula_name(frenet.ldot_formula)}}},
            {"segment",
             {{"observation_s", segment.observation_s},
              {"max_prediction_s", segment.max_prediction_s},
              {"retries", segment.retries}}},
            {"features", {{"per_class_lc", per_class_lc}, {"policy", policy.to_json()}}},
            {"model", model.to_json()},
            {"train", train.to_json()},
            {"experiment", plan.to_json()}};
  }

  /// Hash of the effective config excluding run-location and thread count,
  /// which do not influence any artifact's content.
  std::string hash() const {
    auto j = to_json();
    j.erase("out");
    j.erase("threads");
    return hex64(fnv1a(j.dump()));
  }

  const PopulationSource& population(const std::string& tag) const {
    for (const auto& p : populations) {
      if (p.tag == tag) return p;
    }
    throw Error(ErrorCode::InvalidConfig, "unknown population " + tag);
  }

  static PipelineConfig from_json(const nlohmann::json& j, const fs::path& base_dir = {}) {
    PipelineConfig c;
    try {
      if (j.contains("out")) c.out = j.at("out").get<std::string>();
      c.seed = j.value("seed", c.seed);
      c.threads = j.value("threads", c.threads);
      if (j.contains("populations")) {
        c.populations.clear();
        for (const auto& p : j.at("populations")) {
          PopulationSource src;
          src.tag = p.at("tag").get<std::string>();
          if (p.contains("synth")) {
            const auto& s = p.at("synth");
            const std::string preset = s.value("preset", src.tag == "B" ? "B" : "A");
            PopulationParams base = preset == "B" ? population_b() : population_a();
            base.dataset_tag = src.tag;
            src.synth = PopulationParams::from_json(s, base);
            src.synth->dataset_tag = src.tag;
          } else {
            auto rel = [&](const char* key) {
              fs::path path = p.at(key).get<std::string>();
              return path.is_relative() && !base_dir.empty() ? base_dir / path : path;
            };
            src.tracks = rel("tracks");
            src.meta = rel("meta");
            src.lane_config = rel("lane_config");
          }
          c.populations.push_back(std::move(src));
        }
      }
      if (j.contains("refpath")) c.refpath = RefpathConfig::from_json(j.at("refpath"), c.refpath);
      if (j.contains("frenet")) {
        const auto& f = j.at("frenet");
        c.frenet.curvature_threshold = f.value("curvature_threshold", c.frenet.curvature_threshold);
        c.frenet.singular_epsilon = f.value("singular_epsilon", c.frenet.singular_epsilon);
        if (f.contains("ldot_formula")) c.frenet.ldot_formula = parse_ldot_formula(f.at("ldot_formula"));
      }
      if (j.contains("segment")) {
        const auto& s = j.at("segment");
        c.segment.observation_s = s.value("observation_s", c.segment.observation_s);
        c.segment.max_prediction_s = s.value("max_prediction_s", c.segment.max_prediction_s);
        c.segment.retries = s.value("retries", c.segment.retries);
      }
      if (j.contains("features")) {
        const auto& f = j.at("features");
        c.per_class_lc = f.value("per_class_lc", c.per_class_lc);
        if (f.contains("policy")) {
          c.policy.far_ds = f.at("policy").value("far_ds", c.policy.far_ds);
          c.policy.clip_ds = f.at("policy").value("clip_ds", c.policy.clip_ds);
        }
      }
      if (j.contains("model")) c.model = ModelConfig::from_json(j.at("model"));
      if (j.contains("train")) c.train = TrainConfig::from_json(j.at("train"));
      if (j.contains("experiment")) c.plan = ExperimentPlan::from_json(j.at("experiment"), c.plan);
    } catch (const nlohmann::json::exception& e) {
      throw Error(ErrorCode::InvalidConfig, e.what());
    }
    if (c.populations.empty()) throw Error(ErrorCode::InvalidConfig, "populations must not be empty");
    const bool plan_named = j.contains("experiment") && j.at("experiment").contains("populations");
    if (!plan_named) {
      c.plan.populations.clear();
      for (const auto& p : c.populations) c.plan.populations.push_back(p.tag);
    }
    c.validate();
    return c;
  }

  void validate() const {
    model.validate();
    train.validate();
    if (segment.retries < 0) throw Error(ErrorCode::InvalidConfig, "segment.retries must be >= 0");
    if (!(segment.observation_s > 0.0) || !(segment.max_prediction_s >= 0.0)) {
      throw Error(ErrorCode::InvalidConfig, "segment durations");
    }
    if (refpath.smoothing_window % 2 == 0) throw Error(ErrorCode::InvalidConfig, "refpath.smoothing_window must be odd");
    for (const auto& p : populations) {
      if (p.synth) p.synth->validate();
    }
    for (const auto& t : plan.populations) population(t);
  }
};

inline PipelineConfig load_pipeline_config(const fs::path& path) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(csv::read_text(path));
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::InvalidConfig, path.string() + ": " + e.what());
  }
  return PipelineConfig::from_json(j, path.parent_path());
}

// ------------------------------------------------------------ artifacts

inline std::string file_hash(const fs::path& p) { return hex64(fnv1a(csv::read_text(p))); }

inline void require_artifact(const fs::path& p, const std::string& /*stage*/) {
  if (!fs::exists(p)) throw Error(ErrorCode::MissingArtifact, p.string());
}

/// An error tagged with the pipeline stage that raised it.
class StageError : public Error {
 public:
  StageError(std::string stage, const Error& e) : Error(e.code(), e.detail()), stage_(std::move(stage)) {}
  const std::string& stage() const noexcept { return stage_; }

 private:
  std::string stage_;
};

template <typename F>
void run_stage(const std::string& stage, F&& fn) {
  try {
    fn();
  } catch (const StageError&) {
    throw;
  } catch (const Error& e) {
    throw StageError(stage, e);
  } catch (const nlohmann::json::exception& e) {
    throw StageError(stage, Error(ErrorCode::MalformedRow, e.what()));
  }
}

inline void write_manifest(const PipelineConfig& cfg, const fs::path& dir, const std::string& stage,
                           const std::vector<fs::path>& inputs, const std::vector<fs::path>& outputs,
                           nlohmann::json extra = nlohmann::json::object()) {
  nlohmann::json in = nlohmann::json::object(), out = nlohmann::json::object();
  for (const auto& p : inputs) in[p.filename().string()] = file_hash(p);
  for (const auto& p : outputs) out[p.filename().string()] = file_hash(p);
  extra["stage"] = stage;
  extra["config_hash"] = cfg.hash();
  extra["seed"] = cfg.seed;
  extra["threads"] = cfg.threads;
  extra["inputs"] = in;
  extra["outputs"] = out;
  csv::write_text(dir / "manifest.json", extra.dump(2) + "\n");
}

struct PopulationPaths {
  fs::path root, tracks, meta, lane_config, truth;
};

inline PopulationPaths population_paths(const PipelineConfig& cfg, const std::string& tag) {
  const auto& src = cfg.population(tag);
  PopulationPaths p;
  p.root = cfg.out / tag;
  if (src.synth) {
    p.tracks = p.root / "raw" / "tracks.csv";
    p.meta = p.root / "raw" / "recordingMeta.csv";
    p.lane_config = p.root / "raw" / "lane_config.json";
    p.truth = p.root / "raw" / "groundtruth_lc.csv";
  } else {
    p.tracks = src.tracks;
    p.meta = src.meta;
    p.lane_config = src.lane_config;
  }
  return p;
}

inline void log_line(const std::string& msg) { std::fprintf(stderr, "[lcip] %s\n", msg.c_str()); }

// ------------------------------------------------------------ stages

inline void stage_synth(const PipelineConfig& cfg, const std::string& tag) {
  const auto& src = cfg.population(tag);
  if (!src.synth) {
    log_line("synth " + tag + ": external recording, nothing to generate");
    return;
  }
  PopulationParams params = *src.synth;
  params.seed = splitmix64(params.seed ^ cfg.seed);
  const auto out = generate_population(params);
  const auto paths = population_paths(cfg, tag);
  write_population(out, paths.root / "raw");
  write_manifest(cfg, paths.root / "raw", "synth", {}, {paths.tracks, paths.meta, paths.truth, paths.lane_config},
                 {{"params", params.to_json()}, {"quintic_peak_lateral_velocity", params.quintic_peak_velocity()}});
  log_line("synth " + tag + ": " + std::to_string(out.bundle.tracks.size()) + " tracks, " +
           std::to_string(out.truth.size()) + " lane changes");
}

struct LoadedRecording {
  RecordingBundle bundle;
  LaneConfig lanes;
};

inline LoadedRecording load_population_recording(const PipelineConfig& cfg, const std::string& tag) {
  const auto paths = population_paths(cfg, tag);
  require_artifact(paths.tracks, "ingest");
  require_artifact(paths.meta, "ingest");
  require_artifact(paths.lane_config, "ingest");
  LoadedRecording r;
  r.lanes = load_lane_config(paths.lane_config);
  r.bundle = load_recording(paths.tracks, paths.meta, r.lanes);
  return r;
}

inline void stage_ingest(const PipelineConfig& cfg, const std::string& tag) {
  const auto paths = population_paths(cfg, tag);
  const auto rec = load_population_recording(cfg, tag);
  std::string index = "trackId,firstFrame,lastFrame,direction,rampFrames,class\n";
  std::size_t rows = 0, ramp_rows = 0;
  for (const auto& t : rec.bundle.tracks) {
    const auto mask = ramp_exclusion_mask(t, rec.bundle.location_id, rec.lanes);
    const auto n_ramp = static_cast<std::size_t>(std::count(mask.begin(), mask.end(), true));
    rows += t.frames.size();
    ramp_rows += n_ramp;
    index += std::to_string(t.track_id) + ',' + std::to_string(t.first_frame()) + ',' +
             std::to_string(t.last_frame()) + ',' + track_direction(t, rec.bundle.location_id, rec.lanes).direction +
             ',' + std::to_string(n_ramp) + ',' + std::string(detail::class_name(t.vehicle_class)) + '\n';
  }
  const fs::path dir = paths.root / "ingest";
  csv::write_text(dir / "tracks_index.csv", index);
  write_manifest(cfg, dir, "ingest", {paths.tracks, paths.meta, paths.lane_config}, {dir / "tracks_index.csv"},
                 {{"recording_id", rec.bundle.recording_id},
                  {"location_id", rec.bundle.location_id},
                  {"frequency_hz", rec.bundle.frequency_hz},
                  {"drive_side", rec.bundle.drive_side == DriveSide::Right ? "Right" : "Left"},
                  {"tracks", rec.bundle.tracks.size()},
                  {"rows", rows},
                  {"ramp_rows", ramp_rows}});
  log_line("ingest " + tag + ": " + std::to_string(rec.bundle.tracks.size()) + " tracks, " + std::to_string(rows) +
           " rows");
}

/// Unit mean velocity of the tracks of one direction.
inline Point2 travel_direction(const LoadedRecording& rec, const std::string& direction) {
  double vx = 0.0, vy = 0.0;
  for (const auto& t : rec.bundle.tracks) {
    if (track_direction(t, rec.bundle.location_id, rec.lanes).direction != direction) continue;
    for (const auto& p : t.frames) {
      vx += p.vx;
      vy += p.vy;
    }
  }
  const double n = std::hypot(vx, vy);
  if (n == 0.0) throw Error(ErrorCode::DegenerateInput, "no motion in direction " + direction);
  return {vx / n, vy / n};
}

/// Fits the SVM on the two innermost lanes, extracts the boundary and builds
/// the first direction's path; the other direction uses the reversed path.
inline void stage_refpath(const PipelineConfig& cfg, const std::string& tag) {
  const auto paths = population_paths(cfg, tag);
  const auto rec = load_population_recording(cfg, tag);
  const auto& dirs = rec.lanes.location(rec.bundle.location_id);
  const DirectionLanes& d0 = dirs.begin()->second;

  std::array<std::vector<Point2>, 2> cls;
  for (const auto& t : rec.bundle.tracks) {
    for (const auto& p : t.frames) {
      if (p.lane_id == d0.svm_lanes[0]) cls[0].push_back({p.x, p.y});
      else if (p.lane_id == d0.svm_lanes[1]) cls[1].push_back({p.x, p.y});
    }
  }
  Rng rng = derive_rng(cfg.seed, fnv1a("refpath:" + tag));
  std::vector<Point2> pts;
  std::vector<int> labels;
  for (int k = 0; k < 2; ++k) {
    auto& c = cls[static_cast<std::size_t>(k)];
    if (c.size() > cfg.refpath.max_points) {
      for (std::size_t i = 0; i < cfg.refpath.max_points; ++i) std::swap(c[i], c[i + uniform_index(rng, c.size() - i)]);
      c.resize(cfg.refpath.max_points);
    }
    for (const auto& p : c) {
      pts.push_back(p);
      labels.push_back(k == 0 ? -1 : 1);
    }
  }
  const SvmModel svm = fit_rbf_svm(pts, labels, cfg.refpath.svm);

  BoundingBox box{pts.front().x, pts.front().y, pts.front().x, pts.front().y};
  for (const auto& p : pts) {
    box.min_x = std::min(box.min_x, p.x);
    box.min_y = std::min(box.min_y, p.y);
    box.max_x = std::max(box.max_x, p.x);
    box.max_y = std::max(box.max_y, p.y);
  }
  box.min_x -= cfg.refpath.bbox_padding;
  box.min_y -= cfg.refpath.bbox_padding;
  box.max_x += cfg.refpath.bbox_padding;
  box.max_y += cfg.refpath.bbox_padding;
  auto raw = extract_zero_boundary(svm, box, cfg.refpath.grid_step);

  // Far from the data the decision function decays to the bias and may
  // cross zero spuriously; keep boundary points near the training points.
  const double margin_sq = cfg.refpath.boundary_margin * cfg.refpath.boundary_margin;
  std::vector<Point2> boundary;
  for (const auto& b : raw) {
    bool near = false;
    for (const auto& p : pts) {
      if (distance_sq(b, p) <= margin_sq) {
        near = true;
        break;
      }
    }
    if (near) boundary.push_back(b);
  }
  if (boundary.empty()) throw Error(ErrorCode::EmptyBoundary, "no boundary point near the data");
  boundary = orient_along(std::move(boundary), travel_direction(rec, d0.direction));
  const ReferencePath path0 = build_reference_path(boundary, cfg.refpath.smoothing_window, cfg.refpath.spacing);

  const fs::path dir = paths.root / "refpath";
  std::vector<fs::path> outputs;
  for (const auto& [key, d] : dirs) {
    const ReferencePath p = key == d0.direction ? path0 : reverse_path(path0, key);
    ReferencePath tagged = p;
    tagged.direction_tag = key;
    csv::write_text(dir / (key + ".csv"), reference_path_csv(tagged));
    outputs.push_back(dir / (key + ".csv"));
  }
  std::string bcsv = "x,y\n";
  for (const auto& b : boundary) bcsv += csv::format_double(b.x) + ',' + csv::format_double(b.y) + '\n';
  csv::write_text(dir / "boundary.csv", bcsv);
  csv::write_text(dir / "svm.json", svm_to_json(svm).dump(2) + "\n");
  outputs.push_back(dir / "boundary.csv");
  outputs.push_back(dir / "svm.json");
  write_manifest(cfg, dir, "refpath", {paths.tracks, paths.lane_config}, outputs,
                 {{"training_points", pts.size()},
                  {"support_vectors", svm.support_points.size()},
                  {"max_kkt_violation", svm.max_kkt_violation},
                  {"boundary_points", boundary.size()},
                  {"path_points", path0.size()}});
  log_line("refpath " + tag + ": " + std::to_string(svm.support_points.size()) + " support vectors, " +
           std::to_string(path0.size()) + " path points");
}

inline std::map<std::string, ReferencePath> load_paths(const PipelineConfig& cfg, const std::string& tag,
                                                       const LoadedRecording& rec) {
  std::map<std::string, ReferencePath> out;
  for (const auto& [key, d] : rec.lanes.location(rec.bundle.location_id)) {
    const fs::path f = cfg.out / tag / "refpath" / (key + ".csv");
    require_artifact(f, "convert");
    out[key] = read_reference_path(f, key);
  }
  return out;
}

inline void stage_convert(const PipelineConfig& cfg, const std::string& tag) {
  const auto paths = population_paths(cfg, tag);
  const auto rec = load_population_recording(cfg, tag);
  const auto ref = load_paths(cfg, tag, rec);
  std::map<std::string, NearestPointIndex> index;
  for (const auto& [key, p] : ref) index.emplace(key, NearestPointIndex(p));
  std::vector<FrenetRow> rows;
  std::size_t gated = 0;
  for (const auto& t : rec.bundle.tracks) {
    const std::string& key = track_direction(t, rec.bundle.location_id, rec.lanes).direction;
    const auto states = track_to_frenet(ref.at(key), t, cfg.frenet, &index.at(key));
    for (std::size_t i = 0; i < states.size(); ++i) {
      rows.push_back({t.track_id, t.frames[i].frame, states[i]});
      gated += states[i].gated ? 1 : 0;
    }
  }
  const fs::path dir = paths.root / "convert";
  csv::write_text(dir / "frenet.csv", frenet_csv(rows));
  std::vector<fs::path> inputs = {paths.tracks};
  for (const auto& [key, p] : ref) inputs.push_back(cfg.out / tag / "refpath" / (key + ".csv"));
  const bool paper_cos = cfg.frenet.ldot_formula == LdotFormula::PaperCos;
  write_manifest(cfg, dir, "convert", inputs, {dir / "frenet.csv"},
                 {{"ldot_formula", ldot_formula_name(cfg.frenet.ldot_formula)},
                  {"ldot_paper_cos", paper_cos},
                  {"ldot_note", paper_cos ? "l_dot = v cos(dtheta); this duplicates "
                                            "the longitudinal direction cosine and is not a lateral velocity"
                                          : "l_dot = v sin(dtheta)"},
                  {"curvature_threshold", cfg.frenet.curvature_threshold},
                  {"rows", rows.size()},
                  {"gated_rows", gated}});
  log_line("convert " + tag + ": " + std::to_string(rows.size()) + " rows, " + std::to_string(gated) + " gated");
}

/// Recording, Frenet states and per-frame vehicle lists of one population.
struct PopulationState {
  LoadedRecording rec;
  std::vector<std::vector<FrenetState>> states;  // per track, aligned with frames
  std::vector<std::vector<bool>> ramp;           // per track
  std::vector<const DirectionLanes*> lanes;      // per track
  std::map<std::string, std::unordered_map<long long, std::vector<VehicleAtFrame>>> at_frame;

  SceneFrame scene(std::size_t track, std::size_t k) const {
    const Track& t = rec.bundle.tracks[track];
    const auto& vehicles = at_frame.at(lanes[track]->direction).at(t.frames[k].frame);
    return validate_scene(assign_neighbors(vehicles, t.track_id, *lanes[track], t.frames[k].frame));
  }
};

inline PopulationState load_population_state(const PipelineConfig& cfg, const std::string& tag) {
  PopulationState st;
  st.rec = load_population_recording(cfg, tag);
  const fs::path frenet = cfg.out / tag / "convert" / "frenet.csv";
  require_artifact(frenet, "segment");
  const auto rows = read_frenet_csv(frenet);
  std::unordered_map<int, std::size_t> index;
  for (std::size_t i = 0; i < st.rec.bundle.tracks.size(); ++i) index[st.rec.bundle.tracks[i].track_id] = i;
  st.states.resize(st.rec.bundle.tracks.size());
  for (const auto& r : rows) {
    auto it = index.find(r.track_id);
    if (it == index.end()) throw Error(ErrorCode::MalformedRow, "frenet row for unknown track " + std::to_string(r.track_id));
    st.states[it->second].push_back(r.state);
  }
  for (std::size_t i = 0; i < st.rec.bundle.tracks.size(); ++i) {
    const Track& t = st.rec.bundle.tracks[i];
    if (st.states[i].size() != t.frames.size()) {
      throw Error(ErrorCode::MalformedRow, "frenet rows do not match track " + std::to_string(t.track_id));
    }
    st.ramp.push_back(ramp_exclusion_mask(t, st.rec.bundle.location_id, st.rec.lanes));
    st.lanes.push_back(&track_direction(t, st.rec.bundle.location_id, st.rec.lanes));
    auto& frames = st.at_frame[st.lanes.back()->direction];
    for (std::size_t k = 0; k < t.frames.size(); ++k) {
      frames[t.frames[k].frame].push_back({t.track_id, st.states[i][k], t.length, static_cast<bool>(st.ramp[i][k])});
    }
  }
  return st;
}

inline std::uint64_t track_stream(std::uint64_t seed, int track_id) {
  return seed ^ static_cast<std::uint64_t>(static_cast<std::uint32_t>(track_id));
}

inline void stage_segment(const PipelineConfig& cfg, const std::string& tag) {
  const auto paths = population_paths(cfg, tag);
  const auto st = load_population_state(cfg, tag);
  std::vector<LcInstant> all_instants;
  std::vector<Segment> segments;
  std::size_t lc_discarded = 0;
  for (std::size_t i = 0; i < st.rec.bundle.tracks.size(); ++i) {
    const Track& t = st.rec.bundle.tracks[i];
    TrackWindowContext ctx;
    ctx.track_id = t.track_id;
    ctx.first_frame = t.first_frame();
    ctx.frequency_hz = st.rec.bundle.frequency_hz;
    ctx.of_interest.resize(t.frames.size());
    for (std::size_t k = 0; k < t.frames.size(); ++k) {
      ctx.of_interest[k] = !st.ramp[i][k] && !st.states[i][k].gated && st.scene(i, k).valid;
    }
    const auto instants = detect_lc_instants(t.track_id, t.first_frame(), st.states[i], *st.lanes[i]);
    all_instants.insert(all_instants.end(), instants.begin(), instants.end());
    Rng rng = derive_rng(cfg.seed, track_stream(fnv1a("segment:" + tag), t.track_id));
    for (const auto& in : instants) {
      auto seg = cut_lc_segment(ctx, instants, in, cfg.segment, rng, tag);
      if (seg) segments.push_back(*seg);
      else ++lc_discarded;
    }
    if (auto lk = sample_lk_segment(ctx, instants, cfg.segment, rng, tag)) segments.push_back(*lk);
  }
  const fs::path dir = paths.root / "segment";
  csv::write_text(dir / "instants.csv", instants_csv(all_instants));
  csv::write_text(dir / "segments.csv", segments_csv(segments));
  std::array<std::size_t, 3> counts{};
  for (const auto& s : segments) counts[static_cast<std::size_t>(s.label)]++;
  write_manifest(cfg, dir, "segment", {paths.tracks, cfg.out / tag / "convert" / "frenet.csv"},
                 {dir / "instants.csv", dir / "segments.csv"},
                 {{"instants", all_instants.size()},
                  {"lc_discarded", lc_discarded},
                  {"counts", {{"LK", counts[0]}, {"LLC", counts[1]}, {"RLC", counts[2]}}}});
  log_line("segment " + tag + ": " + std::to_string(all_instants.size()) + " instants, LK/LLC/RLC = " +
           std::to_string(counts[0]) + "/" + std::to_string(counts[1]) + "/" + std::to_string(counts[2]) +
           " (before drive-side mirroring)");
}

/// Scene frames of a segment, mirrored for left-hand traffic, as a sample.
inline Sample segment_sample(const PopulationState& st, const Segment& seg, const MissingNeighborPolicy& policy) {
  std::size_t ti = st.rec.bundle.tracks.size();
  for (std::size_t i = 0; i < st.rec.bundle.tracks.size(); ++i) {
    if (st.rec.bundle.tracks[i].track_id == seg.track_id) ti = i;
  }
  if (ti == st.rec.bundle.tracks.size()) throw Error(ErrorCode::MalformedRow, "segment of unknown track");
  const Track& t = st.rec.bundle.tracks[ti];
  RawWindow w;
  w.label = seg.label;
  for (long long f = seg.start_frame; f <= seg.end_frame; ++f) {
    w.frames.push_back(st.scene(ti, static_cast<std::size_t>(f - t.first_frame())));
  }
  if (st.rec.bundle.drive_side == DriveSide::Left) w = mirror_for_drive_side(w);
  Sample s;
  s.matrix = center_positions(resample_segment(window_features(w, policy), kWindowRows));
  s.label = w.label;
  s.dataset_tag = seg.dataset_tag;
  s.track_id = seg.track_id;
  s.start_frame = seg.start_frame;
  s.end_frame = seg.end_frame;
  return s;
}

inline void stage_features(const PipelineConfig& cfg, const std::string& tag) {
  const auto paths = population_paths(cfg, tag);
  const fs::path seg_file = paths.root / "segment" / "segments.csv";
  require_artifact(seg_file, "features");
  const auto segments = read_segments_csv(seg_file);
  const auto st = load_population_state(cfg, tag);
  std::vector<Sample> samples;
  std::set<std::tuple<int, long long, long long>> seen;
  std::size_t duplicates = 0;
  for (const auto& seg : segments) {
    // The same window can precede two close lane changes; keep the first.
    if (!seen.insert({seg.track_id, seg.start_frame, seg.end_frame}).second) {
      ++duplicates;
      continue;
    }
    samples.push_back(segment_sample(st, seg, cfg.policy));
  }
  std::array<std::size_t, 3> available{};
  for (const auto& s : samples) available[static_cast<std::size_t>(s.label)]++;
  Rng rng = derive_rng(cfg.seed, fnv1a("balance:" + tag));
  const auto balanced = balance_dataset(samples, cfg.per_class_lc, rng);
  const fs::path dir = paths.root / "features";
  nlohmann::json header = {{"dataset_tag", tag},
                           {"config_hash", cfg.hash()},
                           {"seed", cfg.seed},
                           {"policy", cfg.policy.to_json()},
                           {"normalizer", nullptr},
                           {"drive_side", st.rec.bundle.drive_side == DriveSide::Right ? "Right" : "Left"},
                           {"source_frequency_hz", st.rec.bundle.frequency_hz},
                           {"available", {{"LK", available[0]}, {"LLC", available[1]}, {"RLC", available[2]}}}};
  write_dataset(dir / "samples.lcds", balanced, header);
  write_manifest(cfg, dir, "features", {seg_file, cfg.out / tag / "convert" / "frenet.csv"}, {dir / "samples.lcds"},
                 {{"samples", balanced.size()}, {"duplicates_dropped", duplicates}, {"available", header["available"]}});
  log_line("features " + tag + ": available LK/LLC/RLC = " + std::to_string(available[0]) + "/" +
           std::to_string(available[1]) + "/" + std::to_string(available[2]) + ", kept " +
           std::to_string(balanced.size()));
}

inline std::vector<Sample> load_plan_samples(const PipelineConfig& cfg, const std::string& stage,
                                             std::vector<fs::path>* files = nullptr) {
  std::vector<Sample> all;
  for (const auto& tag : cfg.plan.populations) {
    const fs::path f = cfg.out / tag / "features" / "samples.lcds";
    require_artifact(f, stage);
    if (files) files->push_back(f);
    auto ds = read_dataset(f);
    all.insert(all.end(), ds.samples.begin(), ds.samples.end());
  }
  return all;
}

inline std::string run_name(const std::string& regime, std::uint64_t seed) {
  return regime + "_seed" + std::to_string(seed);
}

inline std::vector<SeedSplits> plan_splits(const PipelineConfig& cfg, std::span<const Sample> samples) {
  std::vector<SeedSplits> splits;
  for (std::uint64_t seed : cfg.plan.seeds) splits.push_back(make_seed_splits(samples, cfg.plan, seed));
  return splits;
}

inline void stage_train(const PipelineConfig& cfg) {
  std::vector<fs::path> inputs;
  const auto samples = load_plan_samples(cfg, "train", &inputs);
  const auto splits = plan_splits(cfg, samples);
  std::vector<std::pair<std::string, std::size_t>> jobs;
  for (const auto& r : cfg.plan.regimes()) {
    for (std::size_t k = 0; k < cfg.plan.seeds.size(); ++k) jobs.emplace_back(r, k);
  }
  const fs::path dir = cfg.out / "train";
  std::vector<fs::path> outputs(3 * jobs.size());
  parallel_for(jobs.size(), cfg.threads, [&](std::size_t j) {
    const auto& [regime, k] = jobs[j];
    const std::uint64_t seed = cfg.plan.seeds[k];
    const auto run = train_run(cfg.plan, splits[k], regime, seed, cfg.model, cfg.train);
    const std::string name = run_name(regime, seed);
    nlohmann::json header = {{"regime", regime},
                             {"split_seed", seed},
                             {"config_hash", cfg.hash()},
                             {"normalizer", run.record.normalizer.to_json()},
                             {"train_config", cfg.train.to_json()},
                             {"best_epoch", run.record.best_epoch}};
    csv::write_text(dir / (name + ".ckpt"), encode_checkpoint(run.record.params, header));
    std::string hist = "epoch,train_loss,val_accuracy\n";
    for (const auto& e : run.record.history) {
      hist += std::to_string(e.epoch) + ',' + csv::format_double(e.train_loss) + ',' +
              csv::format_double(e.val_accuracy) + '\n';
    }
    csv::write_text(dir / (name + "_history.csv"), hist);
    std::string ids = "phase,sampleId\n";
    for (const auto& id : run.ids.normalizer_fit) ids += "normalizer_fit," + id + '\n';
    for (const auto& id : run.ids.train) ids += "train," + id + '\n';
    for (const auto& id : run.ids.val) ids += "val," + id + '\n';
    csv::write_text(dir / (name + "_ids.csv"), ids);
    outputs[3 * j] = dir / (name + ".ckpt");
    outputs[3 * j + 1] = dir / (name + "_history.csv");
    outputs[3 * j + 2] = dir / (name + "_ids.csv");
    log_line("train " + name + ": best epoch " + std::to_string(run.record.best_epoch) + ", val accuracy " +
             csv::format_fixed(run.record.history.at(run.record.best_epoch - 1).val_accuracy, 4));
  });
  write_manifest(cfg, dir, "train", inputs, outputs);
}

inline RunRecord load_run(const fs::path& ckpt_file) {
  const auto ck = decode_checkpoint(csv::read_text(ckpt_file), ckpt_file.string());
  RunRecord r;
  r.regime = ck.header.at("regime").get<std::string>();
  r.seed = ck.header.at("split_seed").get<std::uint64_t>();
  r.normalizer = Normalizer::from_json(ck.header.at("normalizer"));
  r.best_epoch = ck.header.value("best_epoch", std::size_t{0});
  r.params = ck.params;
  return r;
}

inline void stage_evaluate(const PipelineConfig& cfg) {
  std::vector<fs::path> inputs;
  const auto samples = load_plan_samples(cfg, "evaluate", &inputs);
  const auto splits = plan_splits(cfg, samples);
  std::vector<PredictionRecord> preds;
  std::vector<AuditRecord> audit;
  for (const auto& regime : cfg.plan.regimes()) {
    for (std::size_t k = 0; k < cfg.plan.seeds.size(); ++k) {
      const std::string name = run_name(regime, cfg.plan.seeds[k]);
      const fs::path ckpt = cfg.out / "train" / (name + ".ckpt");
      const fs::path ids_file = cfg.out / "train" / (name + "_ids.csv");
      require_artifact(ckpt, "evaluate");
      require_artifact(ids_file, "evaluate");
      inputs.push_back(ckpt);
      const RunRecord run = load_run(ckpt);
      PhaseIds ids;
      const auto t = csv::Table::read(ids_file);
      const auto c_phase = t.column("phase"), c_id = t.column("sampleId");
      for (std::size_t r = 0; r < t.size(); ++r) {
        const auto phase = t.at(r, c_phase);
        std::string id(t.at(r, c_id));
        if (phase == "normalizer_fit") ids.normalizer_fit.push_back(std::move(id));
        else if (phase == "train") ids.train.push_back(std::move(id));
        else ids.val.push_back(std::move(id));
      }
      auto p = evaluate_run(cfg.plan, splits[k], run, &ids.test);
      preds.insert(preds.end(), p.begin(), p.end());
      audit.push_back(audit_phases(regime, cfg.plan.seeds[k], ids));
    }
  }
  const fs::path dir = cfg.out / "evaluate";
  csv::write_text(dir / "predictions.csv", predictions_csv(preds));
  const bool passed = std::all_of(audit.begin(), audit.end(), [](const AuditRecord& a) { return a.overlap == 0; });
  csv::write_text(dir / "audit.json", nlohmann::json({{"passed", passed}, {"runs", audit_to_json(audit)}}).dump(2) + "\n");
  write_manifest(cfg, dir, "evaluate", inputs, {dir / "predictions.csv", dir / "audit.json"});
  if (!passed) throw Error(ErrorCode::InvalidConfig, "split hygiene audit failed: test ids seen during training");
  log_line("evaluate: " + std::to_string(preds.size()) + " predictions, audit passed");
}

inline void stage_report(const PipelineConfig& cfg) {
  const fs::path pred_file = cfg.out / "evaluate" / "predictions.csv";
  const fs::path audit_file = cfg.out / "evaluate" / "audit.json";
  require_artifact(pred_file, "report");
  require_artifact(audit_file, "report");
  const auto preds = read_predictions_csv(pred_file);
  const auto matrix = matrix_from_predictions(cfg.plan, preds);
  nlohmann::json inputs = nlohmann::json::object();
  for (const auto& tag : cfg.plan.populations) {
    inputs[tag] = file_hash(cfg.out / tag / "features" / "samples.lcds");
  }
  nlohmann::json context = {{"config", cfg.to_json()},
                            {"config_hash", cfg.hash()},
                            {"seed", cfg.seed},
                            {"split_seeds", cfg.plan.seeds},
                            {"datasets", inputs},
                            {"predictions", file_hash(pred_file)},
                            {"audit", nlohmann::json::parse(csv::read_text(audit_file))},
                            {"git_revision", LCIP_GIT_REVISION}};
  context["config"].erase("out");
  context["config"].erase("threads");
  const fs::path dir = cfg.out / "report";
  emit_report(matrix, dir, context);
  std::vector<fs::path> outputs = {dir / "accuracy_matrix.csv", dir / "report.json", dir / "accuracy_matrix.svg"};
  write_manifest(cfg, dir, "report", {pred_file, audit_file}, outputs);
  for (const auto& r : matrix.regimes) {
    std::string line = "report " + r + ":";
    for (const auto& p : matrix.populations) {
      const auto& c = matrix.at(r, p);
      line += " " + p + "=" + csv::format_fixed(c.mean, 4) + "+/-" + csv::format_fixed(c.stddev, 4);
    }
    log_line(line);
  }
}

inline void write_effective_config(const PipelineConfig& cfg) {
  auto j = cfg.to_json();
  j["config_hash"] = cfg.hash();
  j.erase("out");
  csv::write_text(cfg.out / "config.json", j.dump(2) + "\n");
}

inline const std::vector<std::string>& population_stages() {
  static const std::vector<std::string> s = {"synth", "ingest", "refpath", "convert", "segment", "features"};
  return s;
}

inline void run_population_stage(const PipelineConfig& cfg, const std::string& stage, const std::string& tag) {
  run_stage(stage, [&] {
    if (stage == "synth") stage_synth(cfg, tag);
    else if (stage == "ingest") stage_ingest(cfg, tag);
    else if (stage == "refpath") stage_refpath(cfg, tag);
    else if (stage == "convert") stage_convert(cfg, tag);
    else if (stage == "segment") stage_segment(cfg, tag);
    else if (stage == "features") stage_features(cfg, tag);
    else throw Error(ErrorCode::InvalidConfig, "unknown stage " + stage);
  });
}

inline void run_experiment_stage(const PipelineConfig& cfg, const std::string& stage) {
  run_stage(stage, [&] {
    if (stage == "train") stage_train(cfg);
    else if (stage == "evaluate") stage_evaluate(cfg);
    else if (stage == "report") stage_report(cfg);
    else throw Error(ErrorCode::InvalidConfig, "unknown stage " + stage);
  });
}

inline void run_all(const PipelineConfig& cfg) {
  write_effective_config(cfg);
  for (const auto& stage : population_stages()) {
    for (const auto& p : cfg.populations) run_population_stage(cfg, stage, p.tag);
  }
  for (const char* stage : {"train", "evaluate", "report"}) run_experiment_stage(cfg, stage);
}

}  // namespace lcip
