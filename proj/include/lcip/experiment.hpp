#pragma once

// Cross-population protocol: stratified splits per population, one training
// regime per population plus joint training, evaluation of every regime on
// every population's test split, and the report artifacts.

#include <algorithm>
#include <array>
#include <atomic>
#include <exception>
#include <cmath>
#include <filesystem>
#include <map>
#include <set>
#include <string>
#include <thread>
#include <vector>

#include "json.hpp"
#include "lcip/common.hpp"
#include "lcip/csv.hpp"
#include "lcip/features.hpp"
#include "lcip/model.hpp"

namespace lcip {

struct ExperimentPlan {
  std::vector<std::string> populations;
  bool joint = true;
  double split_fraction = 0.8;
  double val_fraction = 0.1;  // of each training split, held out for early stopping
  std::vector<std::uint64_t> seeds = {1, 2, 3, 4, 5};

  std::vector<std::string> regimes() const {
    std::vector<std::string> r;
    for (const auto& p : populations) r.push_back("train-" + p);
    if (joint && populations.size() > 1) r.push_back("train-joint");
    return r;
  }

  /// Populations whose training splits feed a regime.
  std::vector<std::string> training_populations(const std::string& regime) const {
    if (regime == "train-joint") return populations;
    const std::string pop = regime.substr(6);
    if (std::find(populations.begin(), populations.end(), pop) == populations.end()) {
      throw Error(ErrorCode::InvalidConfig, "unknown regime " + regime);
    }
    return {pop};
  }

  nlohmann::json to_json() const {
    return {{"populations", populations},
            {"joint", joint},
            {"split_fraction", split_fraction},
            {"val_fraction", val_fraction},
            {"seeds", seeds}};
  }

  static ExperimentPlan from_json(const nlohmann::json& j, ExperimentPlan p) {
    p.populations = j.value("populations", p.populations);
    p.joint = j.value("joint", p.joint);
    p.split_fraction = j.value("split_fraction", p.split_fraction);
    p.val_fraction = j.value("val_fraction", p.val_fraction);
    p.seeds = j.value("seeds", p.seeds);
    return p;
  }
};

struct SplitPair {
  std::vector<Sample> train;
  std::vector<Sample> test;
};

namespace detail {

// Stratified by (dataset tag, label); the first floor(fraction * n) of a
// seeded shuffle go to the first part. Original order is kept in each part.
inline SplitPair stratified_split(std::span<const Sample> samples, double fraction, std::uint64_t seed,
                                  std::uint64_t stream, bool require_second) {
  std::map<std::pair<std::string, int>, std::vector<std::size_t>> groups;
  for (std::size_t i = 0; i < samples.size(); ++i) {
    groups[{samples[i].dataset_tag, static_cast<int>(samples[i].label)}].push_back(i);
  }
  std::vector<bool> first(samples.size(), false);
  for (auto& [key, idx] : groups) {
    const auto n_first = static_cast<std::size_t>(std::floor(fraction * static_cast<double>(idx.size())));
    if (n_first == 0 || (require_second && n_first == idx.size())) {
      throw Error(ErrorCode::InsufficientClass, key.first + "," + std::string(kLabelNames[key.second]) +
                                                    ",available=" + std::to_string(idx.size()));
    }
    Rng rng = derive_rng(seed, stream ^ fnv1a(key.first) ^ static_cast<std::uint64_t>(key.second) * 0x9E37);
    shuffle(idx, rng);
    for (std::size_t k = 0; k < n_first; ++k) first[idx[k]] = true;
  }
  SplitPair out;
  for (std::size_t i = 0; i < samples.size(); ++i) (first[i] ? out.train : out.test).push_back(samples[i]);
  return out;
}

}  // namespace detail

/// Stratified, seeded, disjoint train/test split for each population.
inline std::map<std::string, SplitPair> make_splits(std::span<const Sample> samples, double split_fraction,
                                                    std::uint64_t seed) {
  if (!(split_fraction > 0.0 && split_fraction < 1.0)) {
    throw Error(ErrorCode::InvalidConfig, "split_fraction must be in (0, 1); the test split would be empty");
  }
  if (samples.empty()) throw Error(ErrorCode::EmptySet, "no samples to split");
  std::map<std::string, std::vector<Sample>> by_pop;
  for (const auto& s : samples) by_pop[s.dataset_tag].push_back(s);
  std::map<std::string, SplitPair> out;
  for (const auto& [tag, pop] : by_pop) out[tag] = detail::stratified_split(pop, split_fraction, seed, 0x7E57, true);
  return out;
}

struct Confusion {
  std::array<std::array<std::size_t, 3>, 3> counts{};  // [true][predicted]

  std::size_t total() const {
    std::size_t n = 0;
    for (const auto& r : counts) for (auto c : r) n += c;
    return n;
  }
  std::size_t correct() const { return counts[0][0] + counts[1][1] + counts[2][2]; }
  double accuracy() const { return total() ? static_cast<double>(correct()) / static_cast<double>(total()) : 0.0; }
  double recall(std::size_t cls) const {
    const std::size_t n = counts[cls][0] + counts[cls][1] + counts[cls][2];
    return n ? static_cast<double>(counts[cls][cls]) / static_cast<double>(n) : 0.0;
  }
  Confusion& operator+=(const Confusion& o) {
    for (std::size_t i = 0; i < 3; ++i) for (std::size_t j = 0; j < 3; ++j) counts[i][j] += o.counts[i][j];
    return *this;
  }
  friend bool operator==(const Confusion&, const Confusion&) = default;
};

struct AccuracyCell {
  std::vector<double> accuracies;   // one per seed, plan order
  std::vector<Confusion> confusions;  // one per seed
  double mean = 0.0;
  double stddev = 0.0;

  Confusion total_confusion() const {
    Confusion c;
    for (const auto& k : confusions) c += k;
    return c;
  }
  friend bool operator==(const AccuracyCell&, const AccuracyCell&) = default;
};

struct AccuracyMatrix {
  std::vector<std::string> regimes;
  std::vector<std::string> populations;
  std::vector<std::uint64_t> seeds;
  std::map<std::pair<std::string, std::string>, AccuracyCell> cells;  // (regime, population)

  const AccuracyCell& at(const std::string& regime, const std::string& pop) const {
    auto it = cells.find({regime, pop});
    if (it == cells.end()) throw Error(ErrorCode::MissingArtifact, "cell " + regime + "/" + pop);
    return it->second;
  }
  bool empty() const { return cells.empty(); }
  friend bool operator==(const AccuracyMatrix&, const AccuracyMatrix&) = default;
};

/// Mean and sample standard deviation (0 for a single value).
inline void summarize(AccuracyCell& cell) {
  const auto n = static_cast<double>(cell.accuracies.size());
  if (cell.accuracies.empty()) return;
  double sum = 0.0;
  for (double a : cell.accuracies) sum += a;
  cell.mean = sum / n;
  double sq = 0.0;
  for (double a : cell.accuracies) sq += (a - cell.mean) * (a - cell.mean);
  cell.stddev = cell.accuracies.size() > 1 ? std::sqrt(sq / (n - 1.0)) : 0.0;
}

struct PredictionRecord {
  std::string regime;
  std::uint64_t seed = 0;
  std::string population;
  std::string sample_id;
  Label label = Label::LK;
  Prediction prediction;
};

/// Sample ids seen in each phase of one (regime, seed) run.
struct PhaseIds {
  std::vector<std::string> normalizer_fit;
  std::vector<std::string> train;
  std::vector<std::string> val;
  std::vector<std::string> test;
};

inline std::string hash_ids(std::vector<std::string> ids) {
  std::sort(ids.begin(), ids.end());
  std::uint64_t h = fnv1a("");
  for (const auto& id : ids) h = fnv1a(id + "\n", h);
  return hex64(h);
}

struct AuditRecord {
  std::string regime;
  std::uint64_t seed = 0;
  std::string normalizer_fit_hash, train_hash, val_hash, test_hash;
  std::size_t overlap = 0;  // test ids found in any fitting/training phase
};

inline AuditRecord audit_phases(const std::string& regime, std::uint64_t seed, const PhaseIds& ids) {
  AuditRecord a;
  a.regime = regime;
  a.seed = seed;
  a.normalizer_fit_hash = hash_ids(ids.normalizer_fit);
  a.train_hash = hash_ids(ids.train);
  a.val_hash = hash_ids(ids.val);
  a.test_hash = hash_ids(ids.test);
  std::set<std::string> seen(ids.normalizer_fit.begin(), ids.normalizer_fit.end());
  seen.insert(ids.train.begin(), ids.train.end());
  seen.insert(ids.val.begin(), ids.val.end());
  for (const auto& t : ids.test) a.overlap += seen.count(t);
  return a;
}

struct RunRecord {
  std::string regime;
  std::uint64_t seed = 0;
  std::vector<EpochRecord> history;
  std::size_t best_epoch = 0;
  Normalizer normalizer;
  ModelParams<float> params;
};

struct ProtocolResult {
  AccuracyMatrix matrix;
  std::vector<RunRecord> runs;
  std::vector<PredictionRecord> predictions;
  std::vector<AuditRecord> audit;

  bool audit_passed() const {
    return std::all_of(audit.begin(), audit.end(), [](const AuditRecord& a) { return a.overlap == 0; });
  }
};

/// Per-seed data partition shared by every regime of that seed.
struct SeedSplits {
  std::map<std::string, std::vector<Sample>> train, val, test;
};

inline SeedSplits make_seed_splits(std::span<const Sample> samples, const ExperimentPlan& plan, std::uint64_t seed) {
  SeedSplits s;
  for (auto& [tag, pair] : make_splits(samples, plan.split_fraction, seed)) {
    auto inner = detail::stratified_split(pair.train, 1.0 - plan.val_fraction, seed, 0x7A11, true);
    s.train[tag] = std::move(inner.train);
    s.val[tag] = std::move(inner.test);
    s.test[tag] = std::move(pair.test);
  }
  for (const auto& p : plan.populations) {
    if (!s.test.count(p)) throw Error(ErrorCode::EmptySet, "population " + p + " has no samples");
  }
  return s;
}

inline std::uint64_t run_seed(std::uint64_t seed, const std::string& regime) { return splitmix64(seed ^ fnv1a(regime)); }

struct TrainedRun {
  RunRecord record;
  PhaseIds ids;  // test ids are filled in by evaluate_run
};

/// Fits the normalizer on the regime's training data only, then trains.
inline TrainedRun train_run(const ExperimentPlan& plan, const SeedSplits& splits, const std::string& regime,
                            std::uint64_t seed, ModelConfig model_cfg, TrainConfig train_cfg) {
  TrainedRun out;
  std::vector<Sample> train_set, val;
  for (const auto& pop : plan.training_populations(regime)) {
    train_set.insert(train_set.end(), splits.train.at(pop).begin(), splits.train.at(pop).end());
    val.insert(val.end(), splits.val.at(pop).begin(), splits.val.at(pop).end());
  }
  for (const auto& s : train_set) {
    out.ids.normalizer_fit.push_back(s.id());
    out.ids.train.push_back(s.id());
  }
  for (const auto& s : val) out.ids.val.push_back(s.id());
  const Normalizer norm = fit_normalizer(train_set);
  for (auto& s : train_set) s = apply_normalizer(norm, std::move(s));
  for (auto& s : val) s = apply_normalizer(norm, std::move(s));

  const std::uint64_t rs = run_seed(seed, regime);
  model_cfg.seed = rs;
  train_cfg.seed = rs;
  auto result = train(init_model<float>(model_cfg), train_set, val, train_cfg);

  out.record.regime = regime;
  out.record.seed = seed;
  out.record.history = result.history;
  out.record.best_epoch = result.best_epoch;
  out.record.normalizer = norm;
  out.record.params = std::move(result.params);
  return out;
}

/// Predicts every population's test split with the run's own normalizer.
inline std::vector<PredictionRecord> evaluate_run(const ExperimentPlan& plan, const SeedSplits& splits,
                                                  const RunRecord& run, std::vector<std::string>* test_ids = nullptr) {
  std::vector<PredictionRecord> out;
  for (const auto& pop : plan.populations) {
    std::vector<Sample> test;
    for (const auto& s : splits.test.at(pop)) {
      if (test_ids) test_ids->push_back(s.id());
      test.push_back(apply_normalizer(run.normalizer, s));
    }
    const auto preds = predict_batch(run.params, std::span<const Sample>(test));
    for (std::size_t i = 0; i < test.size(); ++i) {
      out.push_back({run.regime, run.seed, pop, test[i].id(), test[i].label, preds[i]});
    }
  }
  return out;
}

/// Runs fn(0..n-1) on up to `threads` workers; the first exception is rethrown.
template <typename Fn>
void parallel_for(std::size_t n, std::size_t threads, Fn fn) {
  std::vector<std::exception_ptr> errors(n);
  auto guarded = [&](std::size_t j) {
    try {
      fn(j);
    } catch (...) {
      errors[j] = std::current_exception();
    }
  };
  threads = std::max<std::size_t>(1, std::min(threads, n));
  if (threads == 1) {
    for (std::size_t j = 0; j < n; ++j) guarded(j);
  } else {
    std::atomic<std::size_t> next{0};
    std::vector<std::thread> pool;
    for (std::size_t t = 0; t < threads; ++t) {
      pool.emplace_back([&] {
        for (std::size_t j; (j = next.fetch_add(1)) < n;) guarded(j);
      });
    }
    for (auto& t : pool) t.join();
  }
  for (const auto& e : errors) {
    if (e) std::rethrow_exception(e);
  }
}

/// Builds the matrix from per-sample predictions (correct / total per cell).
inline AccuracyMatrix matrix_from_predictions(const ExperimentPlan& plan, std::span<const PredictionRecord> preds) {
  AccuracyMatrix m;
  m.regimes = plan.regimes();
  m.populations = plan.populations;
  m.seeds = plan.seeds;
  for (const auto& r : m.regimes) {
    for (const auto& p : m.populations) {
      AccuracyCell cell;
      for (std::uint64_t seed : plan.seeds) {
        Confusion c;
        for (const auto& pr : preds) {
          if (pr.regime == r && pr.population == p && pr.seed == seed) {
            c.counts[static_cast<std::size_t>(pr.label)][static_cast<std::size_t>(pr.prediction.label)]++;
          }
        }
        if (c.total() == 0) throw Error(ErrorCode::MissingArtifact, "no predictions for " + r + "/" + p);
        cell.confusions.push_back(c);
        cell.accuracies.push_back(c.accuracy());
      }
      summarize(cell);
      m.cells[{r, p}] = std::move(cell);
    }
  }
  return m;
}

/// Runs every (regime, seed) job, up to `threads` at a time. Jobs are
/// independent, so the result does not depend on the thread count.
inline ProtocolResult run_protocol(const ExperimentPlan& plan, std::span<const Sample> samples,
                                   const ModelConfig& model_cfg, const TrainConfig& train_cfg,
                                   std::size_t threads = 1) {
  if (plan.populations.empty() || plan.seeds.empty()) throw Error(ErrorCode::InvalidConfig, "empty plan");
  std::vector<Sample> used;
  for (const auto& s : samples) {
    if (std::find(plan.populations.begin(), plan.populations.end(), s.dataset_tag) != plan.populations.end()) {
      used.push_back(s);
    }
  }
  std::vector<SeedSplits> splits;
  for (std::uint64_t seed : plan.seeds) splits.push_back(make_seed_splits(used, plan, seed));

  std::vector<std::pair<std::string, std::size_t>> jobs;  // (regime, seed index)
  for (const auto& r : plan.regimes()) {
    for (std::size_t k = 0; k < plan.seeds.size(); ++k) jobs.emplace_back(r, k);
  }
  std::vector<TrainedRun> runs(jobs.size());
  parallel_for(jobs.size(), threads, [&](std::size_t j) {
    runs[j] = train_run(plan, splits[jobs[j].second], jobs[j].first, plan.seeds[jobs[j].second], model_cfg, train_cfg);
  });

  ProtocolResult res;
  for (std::size_t j = 0; j < jobs.size(); ++j) {
    auto& run = runs[j];
    auto preds = evaluate_run(plan, splits[jobs[j].second], run.record, &run.ids.test);
    res.predictions.insert(res.predictions.end(), preds.begin(), preds.end());
    res.audit.push_back(audit_phases(run.record.regime, run.record.seed, run.ids));
    res.runs.push_back(std::move(run.record));
  }
  res.matrix = matrix_from_predictions(plan, res.predictions);
  return res;
}

// ---------------------------------------------------------------- reports

inline std::string accuracy_matrix_csv(const AccuracyMatrix& m) {
  std::string out = "regime,population,accuracy,std,n_seeds\n";
  for (const auto& r : m.regimes) {
    for (const auto& p : m.populations) {
      const auto& c = m.at(r, p);
      out += r + ',' + p + ',' + csv::format_fixed(c.mean, 4) + ',' + csv::format_fixed(c.stddev, 4) + ',' +
             std::to_string(c.accuracies.size()) + '\n';
    }
  }
  return out;
}

/// Confusion counts summed over seeds; rows are true classes.
inline std::string confusion_csv(const Confusion& c) {
  std::string out = "true\\predicted,LK,LLC,RLC\n";
  for (std::size_t i = 0; i < 3; ++i) {
    out += std::string(kLabelNames[i]);
    for (std::size_t j = 0; j < 3; ++j) out += ',' + std::to_string(c.counts[i][j]);
    out += '\n';
  }
  return out;
}

inline std::string accuracy_matrix_svg(const AccuracyMatrix& m) {
  const double bar = 28.0, gap = 10.0, group_gap = 36.0, height = 240.0, left = 50.0, top = 20.0;
  const double group_w = static_cast<double>(m.populations.size()) * (bar + gap);
  const double width = left + static_cast<double>(m.regimes.size()) * (group_w + group_gap) + 120.0;
  static const char* colors[] = {"#4477aa", "#ee6677", "#228833", "#ccbb44", "#66ccee", "#aa3377"};
  std::string s = "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" + csv::format_fixed(width, 0) +
                  "\" height=\"" + csv::format_fixed(height + 70.0, 0) + "\" font-family=\"sans-serif\" font-size=\"11\">\n";
  s += "<line x1=\"" + csv::format_fixed(left, 1) + "\" y1=\"" + csv::format_fixed(top, 1) + "\" x2=\"" +
       csv::format_fixed(left, 1) + "\" y2=\"" + csv::format_fixed(top + height, 1) + "\" stroke=\"black\"/>\n";
  for (int t = 0; t <= 4; ++t) {
    const double y = top + height - height * t / 4.0;
    s += "<text x=\"" + csv::format_fixed(left - 6, 1) + "\" y=\"" + csv::format_fixed(y + 4, 1) +
         "\" text-anchor=\"end\">" + csv::format_fixed(t * 0.25, 2) + "</text>\n";
    s += "<line x1=\"" + csv::format_fixed(left, 1) + "\" y1=\"" + csv::format_fixed(y, 1) + "\" x2=\"" +
         csv::format_fixed(width - 120.0, 1) + "\" y2=\"" + csv::format_fixed(y, 1) + "\" stroke=\"#ddd\"/>\n";
  }
  for (std::size_t r = 0; r < m.regimes.size(); ++r) {
    const double gx = left + group_gap / 2.0 + static_cast<double>(r) * (group_w + group_gap);
    for (std::size_t p = 0; p < m.populations.size(); ++p) {
      const auto& c = m.at(m.regimes[r], m.populations[p]);
      const double x = gx + static_cast<double>(p) * (bar + gap);
      const double h = height * std::clamp(c.mean, 0.0, 1.0);
      s += "<rect x=\"" + csv::format_fixed(x, 1) + "\" y=\"" + csv::format_fixed(top + height - h, 1) +
           "\" width=\"" + csv::format_fixed(bar, 1) + "\" height=\"" + csv::format_fixed(h, 1) + "\" fill=\"" +
           colors[p % 6] + "\"/>\n";
      const double y_hi = top + height - height * std::clamp(c.mean + c.stddev, 0.0, 1.0);
      const double y_lo = top + height - height * std::clamp(c.mean - c.stddev, 0.0, 1.0);
      s += "<line x1=\"" + csv::format_fixed(x + bar / 2, 1) + "\" y1=\"" + csv::format_fixed(y_hi, 1) + "\" x2=\"" +
           csv::format_fixed(x + bar / 2, 1) + "\" y2=\"" + csv::format_fixed(y_lo, 1) + "\" stroke=\"black\"/>\n";
      s += "<text x=\"" + csv::format_fixed(x + bar / 2, 1) + "\" y=\"" + csv::format_fixed(top + height - h - 4, 1) +
           "\" text-anchor=\"middle\">" + csv::format_fixed(c.mean, 3) + "</text>\n";
    }
    s += "<text x=\"" + csv::format_fixed(gx + group_w / 2.0, 1) + "\" y=\"" + csv::format_fixed(top + height + 16, 1) +
         "\" text-anchor=\"middle\">" + m.regimes[r] + "</text>\n";
  }
  for (std::size_t p = 0; p < m.populations.size(); ++p) {
    const double y = top + 10.0 + 18.0 * static_cast<double>(p);
    s += "<rect x=\"" + csv::format_fixed(width - 110.0, 1) + "\" y=\"" + csv::format_fixed(y - 9, 1) +
         "\" width=\"12\" height=\"12\" fill=\"" + colors[p % 6] + "\"/>\n";
    s += "<text x=\"" + csv::format_fixed(width - 92.0, 1) + "\" y=\"" + csv::format_fixed(y + 1, 1) + "\">test " +
         m.populations[p] + "</text>\n";
  }
  s += "<text x=\"" + csv::format_fixed(left, 1) + "\" y=\"" + csv::format_fixed(height + 60, 1) +
       "\">accuracy (mean +/- std over seeds)</text>\n</svg>\n";
  return s;
}

inline nlohmann::json matrix_to_json(const AccuracyMatrix& m) {
  nlohmann::json cells = nlohmann::json::array();
  for (const auto& [key, c] : m.cells) {
    nlohmann::json conf = nlohmann::json::array();
    for (const auto& k : c.confusions) conf.push_back(k.counts);
    cells.push_back({{"regime", key.first},
                     {"population", key.second},
                     {"accuracies", c.accuracies},
                     {"mean", c.mean},
                     {"std", c.stddev},
                     {"confusions", conf}});
  }
  return {{"regimes", m.regimes}, {"populations", m.populations}, {"seeds", m.seeds}, {"cells", cells}};
}

inline AccuracyMatrix matrix_from_json(const nlohmann::json& j) {
  AccuracyMatrix m;
  m.regimes = j.at("regimes").get<std::vector<std::string>>();
  m.populations = j.at("populations").get<std::vector<std::string>>();
  m.seeds = j.at("seeds").get<std::vector<std::uint64_t>>();
  for (const auto& c : j.at("cells")) {
    AccuracyCell cell;
    cell.accuracies = c.at("accuracies").get<std::vector<double>>();
    cell.mean = c.at("mean").get<double>();
    cell.stddev = c.at("std").get<double>();
    for (const auto& k : c.at("confusions")) {
      Confusion conf;
      conf.counts = k.get<std::array<std::array<std::size_t, 3>, 3>>();
      cell.confusions.push_back(conf);
    }
    m.cells[{c.at("regime").get<std::string>(), c.at("population").get<std::string>()}] = std::move(cell);
  }
  return m;
}

inline nlohmann::json audit_to_json(std::span<const AuditRecord> audit) {
  nlohmann::json a = nlohmann::json::array();
  for (const auto& r : audit) {
    a.push_back({{"regime", r.regime},
                 {"seed", r.seed},
                 {"normalizer_fit_ids", r.normalizer_fit_hash},
                 {"train_ids", r.train_hash},
                 {"val_ids", r.val_hash},
                 {"test_ids", r.test_hash},
                 {"test_overlap", r.overlap}});
  }
  return a;
}

/// Writes accuracy_matrix.csv, confusion_<regime>_<pop>.csv, report.json and
/// accuracy_matrix.svg. `context` is merged into report.json (inputs, config
/// hash, seeds, audit). Nothing is written for an empty matrix.
inline void emit_report(const AccuracyMatrix& m, const std::filesystem::path& out_dir,
                        const nlohmann::json& context = nlohmann::json::object()) {
  if (m.empty()) throw Error(ErrorCode::EmptySet, "accuracy matrix is empty");
  try {
    csv::write_text(out_dir / "accuracy_matrix.csv", accuracy_matrix_csv(m));
    for (const auto& [key, c] : m.cells) {
      csv::write_text(out_dir / ("confusion_" + key.first + "_" + key.second + ".csv"),
                      confusion_csv(c.total_confusion()));
    }
    nlohmann::json report = context;
    report["matrix"] = matrix_to_json(m);
    csv::write_text(out_dir / "report.json", report.dump(2) + "\n");
    csv::write_text(out_dir / "accuracy_matrix.svg", accuracy_matrix_svg(m));
  } catch (const Error&) {
    throw;
  } catch (const std::exception& e) {
    throw Error(ErrorCode::IoError, e.what());
  }
}

inline AccuracyMatrix read_report(const std::filesystem::path& report_json) {
  return matrix_from_json(nlohmann::json::parse(csv::read_text(report_json)).at("matrix"));
}

inline std::string predictions_csv(std::span<const PredictionRecord> preds) {
  std::string out = "regime,seed,population,sampleId,label,predicted,pLK,pLLC,pRLC\n";
  for (const auto& p : preds) {
    out += p.regime + ',' + std::to_string(p.seed) + ',' + p.population + ',' + p.sample_id + ',' +
           std::string(label_name(p.label)) + ',' + std::string(label_name(p.prediction.label));
    for (double q : p.prediction.probabilities) out += ',' + csv::format_double(q);
    out += '\n';
  }
  return out;
}

inline std::vector<PredictionRecord> read_predictions_csv(const std::filesystem::path& file) {
  const auto t = csv::Table::read(file);
  const auto c_r = t.column("regime"), c_s = t.column("seed"), c_p = t.column("population"),
             c_id = t.column("sampleId"), c_l = t.column("label"), c_pr = t.column("predicted"),
             c0 = t.column("pLK"), c1 = t.column("pLLC"), c2 = t.column("pRLC");
  std::vector<PredictionRecord> out;
  for (std::size_t r = 0; r < t.size(); ++r) {
    PredictionRecord p;
    p.regime = std::string(t.at(r, c_r));
    p.seed = static_cast<std::uint64_t>(csv::to_int(t.at(r, c_s), "seed"));
    p.population = std::string(t.at(r, c_p));
    p.sample_id = std::string(t.at(r, c_id));
    p.label = parse_label(t.at(r, c_l));
    p.prediction.label = parse_label(t.at(r, c_pr));
    p.prediction.probabilities = {csv::to_double(t.at(r, c0), "pLK"), csv::to_double(t.at(r, c1), "pLLC"),
                                  csv::to_double(t.at(r, c2), "pRLC")};
    out.push_back(std::move(p));
  }
  return out;
}

}  // namespace lcip
