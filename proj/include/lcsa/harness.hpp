#pragma once

// Experiment orchestration: metrics, track-level splits, dataset assembly,
// per-model training and evaluation, report tables and timeline exports.

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdint>
#include <exception>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <map>
#include <memory>
#include <mutex>
#include <numeric>
#include <optional>
#include <ostream>
#include <random>
#include <set>
#include <span>
#include <string>
#include <thread>
#include <vector>

#include "lcsa/config.hpp"
#include "lcsa/core.hpp"
#include "lcsa/grid.hpp"
#include "lcsa/idm.hpp"
#include "lcsa/labeling.hpp"
#include "lcsa/neural.hpp"
#include "lcsa/ngsim.hpp"
#include "lcsa/svm.hpp"
#include "lcsa/synthetic.hpp"

namespace lcsa {

// ---------------------------------------------------------------------------
// Metrics

struct Accuracy {
  double acc_p = 0.0;
  double acc_n = 0.0;
  double acc = 0.0;
};

struct Confusion {
  std::size_t tp = 0, fn = 0, tn = 0, fp = 0;

  void add(int pred, int label) {
    if (label == 1) (pred == 1 ? tp : fn)++;
    else (pred == 0 ? tn : fp)++;
  }
  void merge(const Confusion& o) {
    tp += o.tp;
    fn += o.fn;
    tn += o.tn;
    fp += o.fp;
  }
  std::size_t positives() const { return tp + fn; }
  std::size_t negatives() const { return tn + fp; }

  Accuracy accuracy() const {
    if (positives() == 0 || negatives() == 0) throw MetricError("average accuracy needs both classes in the labels");
    Accuracy a;
    a.acc_p = static_cast<double>(tp) / static_cast<double>(positives());
    a.acc_n = static_cast<double>(tn) / static_cast<double>(negatives());
    a.acc = 0.5 * (a.acc_p + a.acc_n);
    return a;
  }
};

/// Mean of the per-class accuracies.
inline Accuracy average_accuracy(std::span<const int> preds, std::span<const int> labels) {
  if (preds.size() != labels.size()) throw ContractError("average_accuracy: length mismatch");
  Confusion c;
  for (std::size_t i = 0; i < preds.size(); ++i) {
    if ((preds[i] != 0 && preds[i] != 1) || (labels[i] != 0 && labels[i] != 1))
      throw ContractError("average_accuracy: values must be 0 or 1");
    c.add(preds[i], labels[i]);
  }
  return c.accuracy();
}

// ---------------------------------------------------------------------------
// Splits

enum class SplitKind { KFold, Holdout };

/// Assignment of whole tracks to folds (k-fold) or to train = 0 / test = 1
/// (holdout).
struct SplitPlan {
  SplitKind kind = SplitKind::KFold;
  int folds = 5;
  double train_fraction = 0.8;
  std::uint64_t seed = 0;
  std::map<int, int> assignment;

  int parts() const { return kind == SplitKind::KFold ? folds : 2; }
  /// Number of train/test evaluations this plan yields.
  int rounds() const { return kind == SplitKind::KFold ? folds : 1; }
  int test_part(int round) const { return kind == SplitKind::KFold ? round : 1; }
  bool is_test(int id, int round) const { return assignment.at(id) == test_part(round); }
};

inline SplitPlan make_split(std::vector<int> ids, SplitKind kind, std::uint64_t seed, int folds = 5,
                            double train_fraction = 0.8) {
  std::sort(ids.begin(), ids.end());
  ids.erase(std::unique(ids.begin(), ids.end()), ids.end());
  SplitPlan plan{kind, folds, train_fraction, seed, {}};
  if (kind == SplitKind::KFold && folds < 2) throw ContractError("k-fold needs at least two folds");
  if (kind == SplitKind::Holdout && !(train_fraction > 0 && train_fraction < 1))
    throw ContractError("holdout fraction must lie in (0, 1)");
  std::mt19937_64 rng(seed);
  std::shuffle(ids.begin(), ids.end(), rng);
  const auto n = ids.size();
  const auto n_train = static_cast<std::size_t>(std::llround(train_fraction * static_cast<double>(n)));
  for (std::size_t i = 0; i < n; ++i)
    plan.assignment[ids[i]] = kind == SplitKind::KFold ? static_cast<int>(i % static_cast<std::size_t>(folds))
                                                       : (i < n_train ? 0 : 1);
  return plan;
}

// ---------------------------------------------------------------------------
// Settings

enum class ModelKind { Idm, Svm, SvmStar, Lstm, BiLstmStar, BiLstm };

inline constexpr ModelKind kAllModels[] = {ModelKind::Idm,  ModelKind::Svm,        ModelKind::SvmStar,
                                           ModelKind::Lstm, ModelKind::BiLstmStar, ModelKind::BiLstm};

inline std::string model_name(ModelKind k) {
  switch (k) {
    case ModelKind::Idm: return "IDM";
    case ModelKind::Svm: return "SVM";
    case ModelKind::SvmStar: return "SVM*";
    case ModelKind::Lstm: return "LSTM";
    case ModelKind::BiLstmStar: return "Bi-LSTM*";
    case ModelKind::BiLstm: return "Bi-LSTM";
  }
  return "?";
}

inline ModelKind parse_model(std::string_view s) {
  for (auto k : kAllModels) {
    std::string lower = model_name(k);
    std::transform(lower.begin(), lower.end(), lower.begin(), [](unsigned char c) { return std::tolower(c); });
    lower.erase(std::remove(lower.begin(), lower.end(), '-'), lower.end());
    std::string t(s);
    std::transform(t.begin(), t.end(), t.begin(), [](unsigned char c) { return std::tolower(c); });
    t.erase(std::remove(t.begin(), t.end(), '-'), t.end());
    if (t == lower) return k;
  }
  throw ParseError("unknown model '" + std::string(s) + "'");
}

inline bool is_recurrent(ModelKind k) {
  return k == ModelKind::Lstm || k == ModelKind::BiLstmStar || k == ModelKind::BiLstm;
}

enum class Scheme { Action, Automatic };

inline std::string scheme_tag(Scheme s) { return s == Scheme::Action ? "action-based" : "automatic"; }

inline Scheme parse_scheme(std::string_view s) {
  if (s == "action" || s == "action-based") return Scheme::Action;
  if (s == "auto" || s == "automatic") return Scheme::Automatic;
  throw ParseError("unknown labeling scheme '" + std::string(s) + "'");
}

struct SvmSettings {
  std::vector<double> C_grid{0.1, 1, 10, 100, 1000};
  std::vector<double> gamma_grid{0.001, 0.01, 0.1, 1};
  int frame_stride = 5;
  int max_samples = 2000;
  int max_validation = 2000;
  double tolerance = 1e-3;
};

struct ExperimentSettings {
  std::uint64_t seed = 1;
  LabelingConfig labeling;
  AugmentConfig augment;
  bool augment_action = true;
  IdmDefaults idm;
  TrainConfig train;
  bool class_weights_action = false;
  bool class_weights_auto = true;
  SvmSettings svm;
  int folds = 5;
  double holdout_fraction = 0.8;
  int holdout_runs = 5;
  double validation_fraction = 0.1;
  int threads = 1;
  std::vector<Scheme> schemes{Scheme::Action, Scheme::Automatic};
  std::vector<ModelKind> models_action{ModelKind::Svm, ModelKind::SvmStar, ModelKind::Lstm, ModelKind::BiLstmStar,
                                       ModelKind::BiLstm};
  std::vector<ModelKind> models_auto{ModelKind::Idm,  ModelKind::Svm,        ModelKind::SvmStar,
                                     ModelKind::Lstm, ModelKind::BiLstmStar, ModelKind::BiLstm};
  int horizon_frames() const { return seconds_to_frames(labeling.horizon); }
};

inline LabelingConfig labeling_from(Config& c) {
  LabelingConfig l;
  l.filter.gamma = c.get_double("labeling.gamma", l.filter.gamma);
  l.filter.beta = c.get_double("labeling.beta", l.filter.beta);
  l.filter.rel_change_min = c.get_double("labeling.rel_change_min", l.filter.rel_change_min);
  l.filter.min_label_gap = c.get_double("labeling.min_label_gap", l.filter.min_label_gap);
  l.negative_window = c.get_double("labeling.negative_window", l.negative_window);
  l.horizon = c.get_double("labeling.horizon", l.horizon);
  l.min_time_gap = c.get_double("labeling.min_time_gap", l.min_time_gap);
  l.lateral_speed_threshold = c.get_double("labeling.lateral_speed_threshold", l.lateral_speed_threshold);
  l.min_sequence_frames = c.get_int("labeling.min_sequence_frames", l.min_sequence_frames);
  l.filter.validate();
  return l;
}

inline IdmDefaults idm_from(Config& c) {
  IdmDefaults d;
  d.s0 = c.get_double("idm.s0", d.s0);
  d.T = c.get_double("idm.T", d.T);
  d.a = c.get_double("idm.a", d.a);
  d.b = c.get_double("idm.b", d.b);
  d.delta = c.get_double("idm.delta", d.delta);
  d.v0_scale = c.get_double("idm.v0_scale", d.v0_scale);
  d.v0_floor = c.get_double("idm.v0_floor", d.v0_floor);
  d.min_speed = c.get_double("idm.min_speed", d.min_speed);
  return d;
}

inline TrainConfig train_from(Config& c) {
  TrainConfig t;
  t.T_F = c.get_double("train.T_F", t.T_F);
  t.T_B = c.get_double("train.T_B", t.T_B);
  t.learning_rate = c.get_double("train.learning_rate", t.learning_rate);
  t.l2 = c.get_double("train.l2", t.l2);
  t.epochs = c.get_int("train.epochs", t.epochs);
  t.batch_size = c.get_int("train.batch_size", t.batch_size);
  t.hidden_dim = c.get_int("train.hidden_dim", t.hidden_dim);
  t.embed_dim = c.get_int("grid.embed_dim", t.embed_dim);
  t.clip_norm = c.get_double("train.clip_norm", t.clip_norm);
  t.init_scale = c.get_double("train.init_scale", t.init_scale);
  t.validate();
  return t;
}

inline ExperimentSettings settings_from(Config& c) {
  ExperimentSettings s;
  s.seed = c.get_seed("seed", s.seed);
  s.labeling = labeling_from(c);
  s.augment.max_shift = c.get_double("augment.max_shift", s.augment.max_shift);
  s.augment.min_stretch = c.get_double("augment.min_stretch", s.augment.min_stretch);
  s.augment.pure_probability = c.get_double("augment.pure_probability", s.augment.pure_probability);
  s.augment_action = c.get_bool("augment.action", s.augment_action);
  s.idm = idm_from(c);
  s.train = train_from(c);
  s.class_weights_action = c.get_bool("train.class_weights_action", s.class_weights_action);
  s.class_weights_auto = c.get_bool("train.class_weights_auto", s.class_weights_auto);
  s.svm.C_grid = c.get_doubles("svm.C_grid", s.svm.C_grid);
  s.svm.gamma_grid = c.get_doubles("svm.gamma_grid", s.svm.gamma_grid);
  s.svm.frame_stride = c.get_int("svm.frame_stride", s.svm.frame_stride);
  s.svm.max_samples = c.get_int("svm.max_samples", s.svm.max_samples);
  s.svm.max_validation = c.get_int("svm.max_validation", s.svm.max_validation);
  s.svm.tolerance = c.get_double("svm.tolerance", s.svm.tolerance);
  s.folds = c.get_int("experiment.folds", s.folds);
  s.holdout_fraction = c.get_double("experiment.holdout_fraction", s.holdout_fraction);
  s.holdout_runs = c.get_int("experiment.holdout_runs", s.holdout_runs);
  s.validation_fraction = c.get_double("experiment.validation_fraction", s.validation_fraction);
  s.threads = c.get_int("experiment.threads", static_cast<int>(std::max(1u, std::thread::hardware_concurrency())));
  s.schemes.clear();
  for (const auto& v : c.get_list("experiment.schemes", {"action", "auto"})) s.schemes.push_back(parse_scheme(v));
  auto models = [&](const std::string& key, const std::vector<ModelKind>& def) {
    std::vector<std::string> names;
    for (auto k : def) names.push_back(model_name(k));
    std::vector<ModelKind> out;
    for (const auto& v : c.get_list(key, names)) out.push_back(parse_model(v));
    return out;
  };
  s.models_action = models("experiment.models_action", s.models_action);
  s.models_auto = models("experiment.models_auto", s.models_auto);
  if (s.svm.frame_stride <= 0 || s.svm.max_samples < 2) throw ContractError("svm sampling settings out of range");
  if (s.svm.C_grid.empty() || s.svm.gamma_grid.empty()) throw ContractError("svm grid must not be empty");
  return s;
}

// ---------------------------------------------------------------------------
// Datasets

/// Labeled sequences plus, when available, the scenes they were cut from.
/// Models that look beyond the stored contexts (IDM rollouts) need scenes.
struct Dataset {
  Scheme scheme = Scheme::Automatic;
  std::vector<LabeledSequence> sequences;
  std::shared_ptr<const SceneMap> scenes;
  LaneTable lanes;
  std::shared_ptr<const LabelMap> auto_labels;

  std::string tag() const { return scheme_tag(scheme); }
  std::vector<int> track_ids() const {
    std::set<int> ids;
    for (const auto& s : sequences) ids.insert(s.vehicle_id);
    return {ids.begin(), ids.end()};
  }
};

inline std::vector<LabeledSequence> automatic_dataset(const std::vector<Track>& tracks, const SceneMap& scenes,
                                                      const LaneTable& lanes, const LabelingConfig& cfg,
                                                      int window_frames, const std::set<int>* egos = nullptr) {
  std::vector<LabeledSequence> out;
  for (const auto& t : tracks) {
    if (egos && !egos->count(t.vehicle_id)) continue;
    for (Side side : {Side::Left, Side::Right})
      for (auto& s : automatic_sequences(t, scenes, side, lanes, cfg, window_frames)) out.push_back(std::move(s));
  }
  return out;
}

inline Dataset build_dataset(const std::vector<Track>& tracks, Scheme scheme, const ExperimentSettings& s,
                             const LaneTable& lanes, const std::set<int>* egos = nullptr) {
  Dataset d;
  d.scheme = scheme;
  d.lanes = lanes;
  auto scenes = std::make_shared<SceneMap>(build_scenes(tracks));
  d.scenes = scenes;
  const bool need_auto = scheme == Scheme::Automatic || s.augment_action;
  std::vector<LabeledSequence> autos;
  if (need_auto) autos = automatic_dataset(tracks, *scenes, lanes, s.labeling, s.train.window_frames(), egos);
  if (scheme == Scheme::Automatic) {
    d.sequences = autos;
  } else {
    std::vector<LaneChangeEvent> events;
    for (const auto& t : tracks) {
      if (egos && !egos->count(t.vehicle_id)) continue;
      for (const auto& e : detect_lane_changes(t, s.labeling.lateral_speed_threshold)) events.push_back(e);
    }
    d.sequences = action_based_label(events, *scenes, lanes, s.labeling).sequences;
  }
  if (need_auto) d.auto_labels = std::make_shared<LabelMap>(label_map(autos));
  return d;
}

// ---------------------------------------------------------------------------
// Per-frame model inputs

namespace detail {

inline const Scene& scene_for(const Dataset& d, int frame_id) {
  if (!d.scenes) throw ContractError("this model needs the scenes behind the sequences (a track store)");
  auto it = d.scenes->find(frame_id);
  if (it == d.scenes->end()) throw LookupError("frame " + std::to_string(frame_id) + " missing from the scenes");
  return it->second;
}

}  // namespace detail

/// The online view of one labeled frame, rebuilt from the scene.
inline OnlineFrame online_frame(const Dataset& d, const LabeledSequence& seq, const LabeledFrame& f) {
  const Scene& scene = detail::scene_for(d, f.ctx.frame_id);
  const TrajectoryFrame* ego = scene.find(seq.vehicle_id);
  if (!ego) throw LookupError("vehicle " + std::to_string(seq.vehicle_id) + " missing from its scene");
  int target = f.ctx.target_lane;
  if (target == 0) {
    const auto t = d.lanes.target_lane(ego->lane_id, seq.target_side);
    if (!t) throw DomainError("no target lane for a labeled frame");
    target = *t;
  }
  OnlineFrame o{context_in_lanes(scene, *ego, ego->lane_id, target, seq.target_side), std::nullopt, std::nullopt};
  if (o.ctx.neighbor[0]) o.pv_leader = leader_of(scene, *o.ctx.neighbor[0]);
  if (o.ctx.neighbor[2]) o.plv_leader = leader_of(scene, *o.ctx.neighbor[2]);
  return o;
}

inline std::vector<OnlineFrame> online_frames(const Dataset& d, const LabeledSequence& seq) {
  std::vector<OnlineFrame> out;
  out.reserve(seq.frames.size());
  for (const auto& f : seq.frames) out.push_back(online_frame(d, seq, f));
  return out;
}

inline constexpr int kSvmFutureFrames[2] = {50, 100};

/// Features of the future-augmented SVM: the context now and the IDM-predicted
/// contexts 5 s and 10 s ahead.
inline Eigen::VectorXd svm_star_features(const OnlineFrame& f, const IdmDefaults& idm) {
  const auto rolled = rollout(f.ctx, f.pv_leader, f.plv_leader, idm, kSvmFutureFrames[1]).contexts;
  const NeighborContext future[2] = {rolled[kSvmFutureFrames[0] - 1], rolled[kSvmFutureFrames[1] - 1]};
  return build_svm_features(f.ctx, future);
}

// ---------------------------------------------------------------------------
// Trained models and prediction

struct TrainedModel {
  ModelKind kind = ModelKind::Lstm;
  std::optional<ModelWeights> rnn;
  std::optional<SvmModel> svm;
};

/// Per-frame predictions of one model over one sequence (every frame,
/// including ignore-labeled ones).
inline std::vector<int> predict_sequence(const TrainedModel& m, const Dataset& d, const LabeledSequence& seq,
                                         const ExperimentSettings& s) {
  std::vector<int> out;
  out.reserve(seq.frames.size());
  switch (m.kind) {
    case ModelKind::Idm: {
      const auto pred = idm_predictor(s.idm);
      for (const auto& f : seq.frames)
        out.push_back(idm_baseline_label(online_frame(d, seq, f), pred, s.horizon_frames(), s.labeling.min_time_gap));
      break;
    }
    case ModelKind::Svm:
      for (const auto& f : seq.frames) out.push_back(svm_predict(*m.svm, build_svm_features(f.ctx)));
      break;
    case ModelKind::SvmStar:
      for (const auto& f : seq.frames) out.push_back(svm_predict(*m.svm, svm_star_features(online_frame(d, seq, f), s.idm)));
      break;
    case ModelKind::Lstm:
    case ModelKind::BiLstmStar: {
      const auto enc = encode_sequence(seq);
      const auto res = m.kind == ModelKind::Lstm ? forward_unidir(enc.grids, *m.rnn)
                                                 : forward_bidir(enc.grids, *m.rnn, s.train.block_frames());
      for (const auto& r : res) out.push_back(r.o);
      break;
    }
    case ModelKind::BiLstm: {
      const auto frames = online_frames(d, seq);
      for (const auto& r : predict_online(*m.rnn, frames, idm_predictor(s.idm), s.train.block_frames()))
        out.push_back(r.o);
      break;
    }
  }
  return out;
}

inline Confusion evaluate(const TrainedModel& m, const Dataset& d, std::span<const LabeledSequence* const> test,
                          const ExperimentSettings& s) {
  Confusion c;
  for (const auto* seq : test) {
    const auto preds = predict_sequence(m, d, *seq, s);
    for (std::size_t t = 0; t < preds.size(); ++t)
      if (seq->frames[t].label != Label::Ignore) c.add(preds[t], to_int(seq->frames[t].label));
  }
  return c;
}

// ---------------------------------------------------------------------------
// Parallel jobs

/// Run fn(0..n-1) on up to `threads` workers. Results are placed by index, so
/// the outcome does not depend on scheduling.
template <class Fn>
void parallel_for(std::size_t n, int threads, Fn fn) {
  const auto workers = std::min<std::size_t>(n, static_cast<std::size_t>(std::max(1, threads)));
  if (workers <= 1) {
    for (std::size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::exception_ptr error;
  std::mutex error_mutex;
  std::vector<std::thread> pool;
  for (std::size_t w = 0; w < workers; ++w)
    pool.emplace_back([&] {
      for (std::size_t i = next++; i < n; i = next++) {
        try {
          fn(i);
        } catch (...) {
          std::lock_guard lock(error_mutex);
          if (!error) error = std::current_exception();
        }
      }
    });
  for (auto& t : pool) t.join();
  if (error) std::rethrow_exception(error);
}

// ---------------------------------------------------------------------------
// Training per fold

struct SvmSampling {
  std::vector<SvmSample> samples;
  std::vector<std::pair<const LabeledSequence*, std::size_t>> frames;  // source of each sample
};

/// Labeled frames at the configured stride, then a balanced random draw of at
/// most `max_samples` frames.
inline std::vector<std::pair<const LabeledSequence*, std::size_t>> balanced_frames(
    std::span<const LabeledSequence* const> seqs, int stride, int max_samples, std::uint64_t seed) {
  std::vector<std::pair<const LabeledSequence*, std::size_t>> pos, neg;
  for (const auto* s : seqs)
    for (std::size_t t = 0; t < s->frames.size(); ++t) {
      const auto& f = s->frames[t];
      if (f.label == Label::Ignore || f.ctx.frame_id % stride != 0) continue;
      (f.label == Label::Positive ? pos : neg).emplace_back(s, t);
    }
  std::mt19937_64 rng(seed);
  std::shuffle(pos.begin(), pos.end(), rng);
  std::shuffle(neg.begin(), neg.end(), rng);
  const std::size_t m = std::min({pos.size(), neg.size(), static_cast<std::size_t>(max_samples / 2)});
  std::vector<std::pair<const LabeledSequence*, std::size_t>> out(pos.begin(), pos.begin() + static_cast<long>(m));
  out.insert(out.end(), neg.begin(), neg.begin() + static_cast<long>(m));
  return out;
}

inline Eigen::VectorXd svm_input(ModelKind kind, const Dataset& d, const LabeledSequence& seq, std::size_t t,
                                 const ExperimentSettings& s) {
  if (kind == ModelKind::SvmStar) return svm_star_features(online_frame(d, seq, seq.frames[t]), s.idm);
  return build_svm_features(seq.frames[t].ctx);
}

struct SvmSelection {
  SvmModel model;
  double C = 0, gamma = 0, validation_acc = -1;
};

/// Grid search over (C, gamma) by validation average accuracy; ties keep the
/// first cell in grid order.
inline SvmSelection train_svm(ModelKind kind, const Dataset& d, std::span<const LabeledSequence* const> train,
                              std::span<const LabeledSequence* const> validation, const ExperimentSettings& s,
                              std::uint64_t seed) {
  std::vector<SvmSample> samples;
  for (const auto& [seq, t] : balanced_frames(train, s.svm.frame_stride, s.svm.max_samples, seed))
    samples.push_back({svm_input(kind, d, *seq, t, s), seq->frames[t].label == Label::Positive ? 1 : -1});
  std::vector<std::pair<Eigen::VectorXd, int>> val;
  for (const auto& [seq, t] :
       balanced_frames(validation, s.svm.frame_stride, s.svm.max_validation, derive_seed(seed, "validation")))
    val.emplace_back(svm_input(kind, d, *seq, t, s), to_int(seq->frames[t].label));

  struct Cell {
    double C, gamma;
  };
  std::vector<Cell> cells;
  for (double C : s.svm.C_grid)
    for (double g : s.svm.gamma_grid) cells.push_back({C, g});
  if (val.empty() && cells.size() > 1) cells.resize(1);
  std::vector<std::optional<SvmSelection>> results(cells.size());
  parallel_for(cells.size(), s.threads, [&](std::size_t i) {
    SvmSelection sel{svm_train(samples, cells[i].C, cells[i].gamma, s.svm.tolerance).model, cells[i].C, cells[i].gamma,
                     -1};
    if (!val.empty()) {
      Confusion c;
      for (const auto& [x, y] : val) c.add(svm_predict(sel.model, x), y);
      sel.validation_acc = c.positives() && c.negatives() ? c.accuracy().acc : -1;
    }
    results[i] = std::move(sel);
  });
  std::size_t best = 0;
  for (std::size_t i = 1; i < results.size(); ++i)
    if (results[i]->validation_acc > results[best]->validation_acc) best = i;
  return std::move(*results[best]);
}

inline TrainConfig fold_train_config(const ExperimentSettings& s, Scheme scheme, std::uint64_t seed) {
  TrainConfig t = s.train;
  t.seed = seed;
  t.class_weights = scheme == Scheme::Automatic ? s.class_weights_auto : s.class_weights_action;
  return t;
}

inline std::vector<LabeledSequence> copy_sequences(std::span<const LabeledSequence* const> seqs) {
  std::vector<LabeledSequence> out;
  out.reserve(seqs.size());
  for (const auto* s : seqs) out.push_back(*s);
  return out;
}

/// Train one recurrent model on a fold. Action-based training data is augmented
/// when configured.
inline ModelWeights train_recurrent(ModelKind kind, const Dataset& d, std::span<const LabeledSequence* const> train_set,
                                    std::span<const LabeledSequence* const> validation, const ExperimentSettings& s,
                                    std::uint64_t seed) {
  auto data = copy_sequences(train_set);
  if (d.scheme == Scheme::Action && s.augment_action) {
    const AugmentSource src{d.scenes.get(), &d.lanes, d.auto_labels.get()};
    data = augment(data, src, derive_seed(seed, "augment"), s.augment);
  }
  const auto cfg = fold_train_config(s, d.scheme, derive_seed(seed, "init"));
  return train(data, cfg, kind != ModelKind::Lstm, copy_sequences(validation)).weights;
}

// ---------------------------------------------------------------------------
// Reports

struct FoldResult {
  int round = 0;
  Confusion confusion;
  Accuracy accuracy;
};

struct EvalReport {
  ModelKind model = ModelKind::Lstm;
  std::string dataset;
  std::vector<FoldResult> folds;
  Accuracy mean;  // arithmetic mean over folds
  Confusion pooled;
  std::map<std::string, std::string> config;

  void finalize() {
    pooled = {};
    double p = 0, n = 0;
    for (const auto& f : folds) {
      pooled.merge(f.confusion);
      p += f.accuracy.acc_p;
      n += f.accuracy.acc_n;
    }
    const auto k = static_cast<double>(folds.size());
    mean.acc_p = folds.empty() ? 0 : p / k;
    mean.acc_n = folds.empty() ? 0 : n / k;
    mean.acc = 0.5 * (mean.acc_p + mean.acc_n);
  }
};

/// Split the sequences of a dataset into train / validation / test by track.
struct FoldData {
  std::vector<const LabeledSequence*> train, validation, test;
};

inline FoldData fold_data(const Dataset& d, const SplitPlan& plan, int round, double validation_fraction,
                          std::uint64_t seed) {
  std::vector<int> train_ids;
  for (const auto& [id, part] : plan.assignment)
    if (part != plan.test_part(round)) train_ids.push_back(id);
  std::mt19937_64 rng(seed);
  std::shuffle(train_ids.begin(), train_ids.end(), rng);
  auto n_val = static_cast<std::size_t>(std::llround(validation_fraction * static_cast<double>(train_ids.size())));
  if (validation_fraction > 0 && n_val == 0 && train_ids.size() >= 2) n_val = 1;
  const std::set<int> val_ids(train_ids.begin(), train_ids.begin() + static_cast<long>(n_val));
  FoldData f;
  for (const auto& s : d.sequences) {
    if (plan.is_test(s.vehicle_id, round)) f.test.push_back(&s);
    else if (val_ids.count(s.vehicle_id)) f.validation.push_back(&s);
    else f.train.push_back(&s);
  }
  return f;
}

/// Run one model on one dataset under its protocol: k-fold for recurrent
/// models and the IDM baseline, repeated holdout for the SVMs.
inline EvalReport run_protocol(ModelKind kind, const Dataset& d, const ExperimentSettings& s) {
  EvalReport rep;
  rep.model = kind;
  rep.dataset = d.tag();
  const auto ids = d.track_ids();
  const bool svm = kind == ModelKind::Svm || kind == ModelKind::SvmStar;
  std::vector<std::pair<SplitPlan, int>> rounds;
  if (svm) {
    for (int r = 0; r < s.holdout_runs; ++r)
      rounds.emplace_back(make_split(ids, SplitKind::Holdout, derive_seed(s.seed, "holdout", static_cast<std::uint64_t>(r)),
                                     s.folds, s.holdout_fraction),
                          0);
  } else {
    const auto plan = make_split(ids, SplitKind::KFold, derive_seed(s.seed, "kfold"), s.folds);
    for (int r = 0; r < plan.rounds(); ++r) rounds.emplace_back(plan, r);
  }
  rep.folds.resize(rounds.size());
  // Folds run in parallel; inner grid searches then stay sequential.
  ExperimentSettings inner = s;
  inner.threads = rounds.size() >= static_cast<std::size_t>(s.threads) ? 1 : s.threads;
  parallel_for(rounds.size(), s.threads, [&](std::size_t i) {
    const auto& [plan, round] = rounds[i];
    const auto seed = derive_seed(s.seed, model_name(kind) + "/" + d.tag(), i);
    const auto f = fold_data(d, plan, round, s.validation_fraction, derive_seed(seed, "validation"));
    TrainedModel m{kind, std::nullopt, std::nullopt};
    if (svm) m.svm = train_svm(kind, d, f.train, f.validation, inner, seed).model;
    else if (is_recurrent(kind)) m.rnn = train_recurrent(kind, d, f.train, f.validation, inner, seed);
    FoldResult fr;
    fr.round = static_cast<int>(i);
    fr.confusion = evaluate(m, d, f.test, inner);
    fr.accuracy = fr.confusion.accuracy();
    rep.folds[i] = fr;
  });
  rep.finalize();
  return rep;
}

inline void write_report_table(std::ostream& out, const std::vector<EvalReport>& reports) {
  out << "dataset\tmodel\tfold\tacc_p\tacc_n\tacc\ttp\tfn\ttn\tfp\n";
  auto row = [&](const EvalReport& r, const std::string& fold, const Accuracy& a, const Confusion& c) {
    out << r.dataset << '\t' << model_name(r.model) << '\t' << fold << '\t' << format_double(a.acc_p) << '\t'
        << format_double(a.acc_n) << '\t' << format_double(a.acc) << '\t' << c.tp << '\t' << c.fn << '\t' << c.tn
        << '\t' << c.fp << '\n';
  };
  for (const auto& r : reports) {
    for (const auto& f : r.folds) row(r, std::to_string(f.round), f.accuracy, f.confusion);
    row(r, "mean", r.mean, r.pooled);
  }
}

/// One row per labeling scheme, one column per model, mean average accuracy
/// in percent.
inline void write_summary(std::ostream& out, const std::vector<EvalReport>& reports) {
  std::vector<std::string> datasets;
  for (const auto& r : reports)
    if (std::find(datasets.begin(), datasets.end(), r.dataset) == datasets.end()) datasets.push_back(r.dataset);
  out << std::left << std::setw(14) << "dataset";
  for (auto k : kAllModels) out << std::right << std::setw(10) << model_name(k);
  out << '\n';
  for (const auto& ds : datasets) {
    out << std::left << std::setw(14) << ds;
    for (auto k : kAllModels) {
      auto it = std::find_if(reports.begin(), reports.end(),
                             [&](const EvalReport& r) { return r.dataset == ds && r.model == k; });
      out << std::right << std::setw(10);
      if (it == reports.end()) out << "-";
      else out << std::fixed << std::setprecision(2) << 100.0 * it->mean.acc << std::defaultfloat;
    }
    out << '\n';
  }
}

// ---------------------------------------------------------------------------
// Data sources and the full protocol

struct LoadedData {
  std::vector<Track> tracks;
  LaneTable lanes;
  std::optional<std::set<int>> egos;
};

/// Parse several recordings into one track set, offsetting ids so recordings
/// never share a scene.
inline std::vector<Track> merge_recordings(std::vector<std::vector<Track>> recordings) {
  std::vector<Track> out;
  int vehicle_offset = 0, frame_offset = 0;
  for (auto& rec : recordings) {
    int max_vid = 0, max_fid = 0;
    for (const auto& t : rec) {
      max_vid = std::max(max_vid, t.vehicle_id);
      for (const auto& f : t.frames) max_fid = std::max(max_fid, f.frame_id);
    }
    offset_ids(rec, vehicle_offset, frame_offset);
    vehicle_offset += max_vid + 1;
    frame_offset += max_fid + 1;
    for (auto& t : rec) out.push_back(std::move(t));
  }
  return out;
}

inline LaneTable lanes_from(Config& c) {
  const auto spec = c.get_string("data.highway_lanes", "1-6");
  LaneTable t;
  std::istringstream in(spec);
  std::string part;
  while (std::getline(in, part, ',')) {
    part = detail::trim(part);
    if (part.empty()) continue;
    const auto dash = part.find('-');
    int lo = 0, hi = 0;
    const bool ok = dash == std::string::npos
                        ? detail::parse_int(part, lo) && detail::parse_int(part, hi)
                        : detail::parse_int(part.substr(0, dash), lo) && detail::parse_int(part.substr(dash + 1), hi);
    if (!ok || lo > hi) throw ParseError("data.highway_lanes: bad range '" + part + "'");
    for (int l = lo; l <= hi; ++l) t.highway.insert(l);
  }
  return t;
}

inline SyntheticConfig synthetic_from(Config& c) {
  SyntheticConfig g;
  g.scenarios = c.get_int("synthetic.scenarios", g.scenarios);
  g.seed = c.get_seed("synthetic.seed", g.seed);
  g.warmup_frames = c.get_int("synthetic.warmup_frames", g.warmup_frames);
  g.record_frames = c.get_int("synthetic.record_frames", g.record_frames);
  g.speed_min = c.get_double("synthetic.speed_min", g.speed_min);
  g.speed_max = c.get_double("synthetic.speed_max", g.speed_max);
  g.dip_depth_min = c.get_double("synthetic.dip_depth_min", g.dip_depth_min);
  g.dip_depth_max = c.get_double("synthetic.dip_depth_max", g.dip_depth_max);
  g.dip_duration_min = c.get_double("synthetic.dip_duration_min", g.dip_duration_min);
  g.dip_duration_max = c.get_double("synthetic.dip_duration_max", g.dip_duration_max);
  g.dip_period_min = c.get_double("synthetic.dip_period_min", g.dip_period_min);
  g.dip_period_max = c.get_double("synthetic.dip_period_max", g.dip_period_max);
  g.plv_lead_min = c.get_double("synthetic.plv_lead_min", g.plv_lead_min);
  g.plv_lead_max = c.get_double("synthetic.plv_lead_max", g.plv_lead_max);
  return g;
}

/// Load the configured recordings, or generate synthetic traffic when
/// `data.synthetic` is set. Every file is checked before any parsing.
inline LoadedData load_data(Config& c) {
  if (c.get_bool("data.synthetic", false)) {
    auto g = generate_synthetic(synthetic_from(c));
    return {std::move(g.tracks), std::move(g.lanes), std::move(g.egos)};
  }
  const auto files = c.get_list("data.files", {});
  const auto stores = c.get_list("data.stores", {});
  const auto units = parse_units(c.get_string("data.units", "feet"));
  for (const auto& f : files)
    if (!std::filesystem::exists(f)) throw std::ios_base::failure("dataset file not found: " + f);
  for (const auto& f : stores)
    if (!std::filesystem::exists(f)) throw std::ios_base::failure("track store not found: " + f);
  if (files.empty() && stores.empty()) throw ContractError("config names no data.files or data.stores");
  std::vector<std::vector<Track>> recordings;
  for (const auto& f : files) {
    std::ifstream in(f);
    if (!in) throw std::ios_base::failure("cannot open " + f);
    recordings.push_back(parse_ngsim(in, units).tracks);
  }
  for (const auto& f : stores) {
    std::ifstream in(f);
    if (!in) throw std::ios_base::failure("cannot open " + f);
    recordings.push_back(read_track_store(in));
  }
  LoadedData d;
  d.tracks = recordings.size() == 1 ? std::move(recordings.front()) : merge_recordings(std::move(recordings));
  d.lanes = lanes_from(c);
  return d;
}

inline std::vector<EvalReport> run_experiment(const LoadedData& data, const ExperimentSettings& s,
                                              const std::map<std::string, std::string>& snapshot = {}) {
  std::vector<EvalReport> reports;
  const std::set<int>* egos = data.egos ? &*data.egos : nullptr;
  for (Scheme scheme : s.schemes) {
    const auto ds = build_dataset(data.tracks, scheme, s, data.lanes, egos);
    for (ModelKind k : scheme == Scheme::Action ? s.models_action : s.models_auto) {
      auto rep = run_protocol(k, ds, s);
      rep.config = snapshot;
      reports.push_back(std::move(rep));
    }
  }
  return reports;
}

/// Write the report table, the summary and the resolved configuration into
/// `out_dir`.
inline void write_outputs(const std::string& out_dir, const std::vector<EvalReport>& reports, const Config& cfg) {
  std::filesystem::create_directories(out_dir);
  const std::filesystem::path dir(out_dir);
  cfg.write_resolved((dir / "resolved.cfg").string());
  std::ofstream table(dir / "report.tsv");
  write_report_table(table, reports);
  std::ofstream summary(dir / "summary.txt");
  write_summary(summary, reports);
  if (!table || !summary) throw std::ios_base::failure("cannot write reports into " + out_dir);
}

// ---------------------------------------------------------------------------
// Timelines

struct TimelineRow {
  int frame_id = 0;
  int label = -1;                // ground truth automatic label, -1 when none
  std::optional<int> svm;        // SVM output
  std::optional<double> p;       // recurrent probability of class 1
  std::optional<int> o;          // recurrent decision
};

/// Per-frame outputs for one track and target side over [first, last]. Frames
/// outside the track or without a target lane produce no row. Recurrent
/// models run over the window only, bidirectional ones in online mode.
inline std::vector<TimelineRow> export_timeline(const Track& track, const SceneMap& scenes, const LaneTable& lanes,
                                                Side side, int first, int last, const SvmModel* svm,
                                                const ModelWeights* rnn, const ExperimentSettings& s) {
  std::map<int, int> truth;
  for (const auto& [fid, l] : automatic_label(track, scenes, side, lanes, s.labeling.horizon, s.labeling.min_time_gap))
    truth[fid] = to_int(l);
  std::vector<TimelineRow> rows;
  std::vector<OnlineFrame> frames;
  for (const auto& f : track.frames) {
    if (f.frame_id < first || f.frame_id > last) continue;
    const auto target = lanes.target_lane(f.lane_id, side);
    if (!target) continue;
    const Scene& scene = scenes.at(f.frame_id);
    OnlineFrame o{context_in_lanes(scene, f, f.lane_id, *target, side), std::nullopt, std::nullopt};
    if (o.ctx.neighbor[0]) o.pv_leader = leader_of(scene, *o.ctx.neighbor[0]);
    if (o.ctx.neighbor[2]) o.plv_leader = leader_of(scene, *o.ctx.neighbor[2]);
    TimelineRow r;
    r.frame_id = f.frame_id;
    if (auto it = truth.find(f.frame_id); it != truth.end()) r.label = it->second;
    if (svm) {
      const bool star = svm->standardizer.mean.size() == 3 * kSvmBaseFeatures;
      r.svm = svm_predict(*svm, star ? svm_star_features(o, s.idm) : build_svm_features(o.ctx));
    }
    rows.push_back(r);
    frames.push_back(std::move(o));
  }
  if (rnn && !frames.empty()) {
    std::vector<FrameOutput> out;
    if (rnn->bidirectional()) {
      out = predict_online(*rnn, frames, idm_predictor(s.idm), s.train.block_frames());
    } else {
      std::vector<OccupancyGrid> grids;
      for (const auto& f : frames) grids.push_back(encode_grid(f.ctx));
      out = forward_unidir(grids, *rnn);
    }
    for (std::size_t i = 0; i < rows.size(); ++i) {
      rows[i].p = out[i].p;
      rows[i].o = out[i].o;
    }
  }
  return rows;
}

inline void write_timeline(std::ostream& out, const std::vector<TimelineRow>& rows) {
  out << "frame_id,label,svm,p,o\n";
  for (const auto& r : rows) {
    out << r.frame_id << ',' << r.label << ',' << (r.svm ? std::to_string(*r.svm) : "") << ','
        << (r.p ? format_double(*r.p) : "") << ',' << (r.o ? std::to_string(*r.o) : "") << '\n';
  }
}

}  // namespace lcsa
