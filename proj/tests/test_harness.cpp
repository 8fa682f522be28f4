#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>

#include "lcsa/harness.hpp"
#include "test_support.hpp"

namespace lcsa {
namespace {

using testing_support::straight_track;

// ---------------------------------------------------------------------------
// Average accuracy

std::vector<int> repeat(std::initializer_list<std::pair<int, int>> runs) {
  std::vector<int> out;
  for (auto [value, count] : runs) out.insert(out.end(), static_cast<std::size_t>(count), value);
  return out;
}

TEST(AverageAccuracy, AllCorrect) {
  const std::vector<int> y{1, 0, 1, 1, 0};
  const auto a = average_accuracy(y, y);
  EXPECT_EQ(a.acc_p, 1.0);
  EXPECT_EQ(a.acc_n, 1.0);
  EXPECT_EQ(a.acc, 1.0);
}

TEST(AverageAccuracy, AllOnesPredictor) {
  const std::vector<int> y{1, 0, 0, 1, 0, 0, 0};
  const std::vector<int> p(y.size(), 1);
  const auto a = average_accuracy(p, y);
  EXPECT_EQ(a.acc_p, 1.0);
  EXPECT_EQ(a.acc_n, 0.0);
  EXPECT_EQ(a.acc, 0.5);
}

TEST(AverageAccuracy, CountingExample) {
  const auto labels = repeat({{1, 10}, {0, 5}});
  const auto preds = repeat({{1, 9}, {0, 1}, {0, 3}, {1, 2}});
  const auto a = average_accuracy(preds, labels);
  EXPECT_DOUBLE_EQ(a.acc_p, 0.9);
  EXPECT_DOUBLE_EQ(a.acc_n, 0.6);
  EXPECT_DOUBLE_EQ(a.acc, 0.75);
}

TEST(AverageAccuracy, MissingClassIsAMetricError) {
  const std::vector<int> y{1, 1, 1};
  EXPECT_THROW(average_accuracy(y, y), MetricError);
}

TEST(AverageAccuracy, ContractViolations) {
  const std::vector<int> a{1, 0}, b{1, 0, 1}, c{1, 2};
  EXPECT_THROW(average_accuracy(a, b), ContractError);
  EXPECT_THROW(average_accuracy(c, a), ContractError);
}

TEST(AverageAccuracy, MeanOfClassRatesOnRandomData) {
  std::mt19937_64 rng(3);
  for (int trial = 0; trial < 200; ++trial) {
    const int n = 2 + static_cast<int>(rng() % 50);
    std::vector<int> y(static_cast<std::size_t>(n)), p(y.size());
    for (auto& v : y) v = static_cast<int>(rng() % 2);
    for (auto& v : p) v = static_cast<int>(rng() % 2);
    y[0] = 0;
    y[1] = 1;
    double tp = 0, pos = 0, tn = 0, neg = 0;
    for (std::size_t i = 0; i < y.size(); ++i) {
      (y[i] ? pos : neg) += 1;
      if (y[i] == p[i]) (y[i] ? tp : tn) += 1;
    }
    const auto a = average_accuracy(p, y);
    EXPECT_EQ(a.acc_p, tp / pos);
    EXPECT_EQ(a.acc_n, tn / neg);
    EXPECT_EQ(a.acc, (a.acc_p + a.acc_n) / 2);
  }
}

// ---------------------------------------------------------------------------
// Splits

std::vector<int> ten_ids() { return {3, 14, 15, 92, 65, 35, 89, 79, 32, 38}; }

TEST(MakeSplit, TenTracksFiveFolds) {
  const auto plan = make_split(ten_ids(), SplitKind::KFold, 42, 5);
  std::map<int, int> sizes;
  for (const auto& [id, part] : plan.assignment) ++sizes[part];
  ASSERT_EQ(sizes.size(), 5u);
  for (const auto& [part, n] : sizes) EXPECT_EQ(n, 2) << "fold " << part;
}

TEST(MakeSplit, HoldoutEightTwo) {
  const auto plan = make_split(ten_ids(), SplitKind::Holdout, 42, 5, 0.8);
  int train = 0, test = 0;
  for (const auto& [id, part] : plan.assignment) (plan.is_test(id, 0) ? test : train)++;
  EXPECT_EQ(train, 8);
  EXPECT_EQ(test, 2);
}

TEST(MakeSplit, FoldSizesWithinOne) {
  for (int n : {7, 11, 23, 101})
    for (int k : {2, 3, 5, 7}) {
      std::vector<int> ids(static_cast<std::size_t>(n));
      std::iota(ids.begin(), ids.end(), 100);
      const auto plan = make_split(ids, SplitKind::KFold, static_cast<std::uint64_t>(n * k), k);
      std::vector<int> sizes(static_cast<std::size_t>(k), 0);
      for (const auto& [id, part] : plan.assignment) ++sizes[static_cast<std::size_t>(part)];
      const auto [lo, hi] = std::minmax_element(sizes.begin(), sizes.end());
      EXPECT_LE(*hi - *lo, 1) << n << " tracks, " << k << " folds";
    }
}

TEST(MakeSplit, DeterministicUnderSeed) {
  const auto a = make_split(ten_ids(), SplitKind::KFold, 9);
  const auto b = make_split(ten_ids(), SplitKind::KFold, 9);
  EXPECT_EQ(a.assignment, b.assignment);
  bool differs = false;
  for (std::uint64_t s = 10; s < 20 && !differs; ++s)
    differs = make_split(ten_ids(), SplitKind::KFold, s).assignment != a.assignment;
  EXPECT_TRUE(differs);
}

TEST(MakeSplit, DuplicateIdsCollapse) {
  const auto plan = make_split({4, 4, 2, 2, 7}, SplitKind::KFold, 1, 3);
  EXPECT_EQ(plan.assignment.size(), 3u);
}

TEST(MakeSplit, BadArguments) {
  EXPECT_THROW(make_split(ten_ids(), SplitKind::KFold, 1, 1), ContractError);
  EXPECT_THROW(make_split(ten_ids(), SplitKind::Holdout, 1, 5, 1.0), ContractError);
}

LabeledSequence sequence_of(int vid, int first, int n) {
  LabeledSequence s{vid, Side::Left, {}};
  for (int f = first; f < first + n; ++f) {
    LabeledFrame lf;
    lf.ctx.frame_id = f;
    lf.ctx.ego.vehicle_id = vid;
    lf.label = f % 2 ? Label::Positive : Label::Negative;
    s.frames.push_back(lf);
  }
  return s;
}

TEST(FoldData, NoFrameOnBothSides) {
  Dataset d;
  for (int vid = 1; vid <= 37; ++vid)
    for (int k = 0; k < 1 + vid % 3; ++k) d.sequences.push_back(sequence_of(vid, 1000 * k, 20));
  for (auto kind : {SplitKind::KFold, SplitKind::Holdout}) {
    const auto plan = make_split(d.track_ids(), kind, 5);
    std::map<int, int> times_tested;
    for (int r = 0; r < plan.rounds(); ++r) {
      const auto f = fold_data(d, plan, r, 0.1, 8);
      EXPECT_EQ(f.train.size() + f.validation.size() + f.test.size(), d.sequences.size());
      std::set<std::pair<int, int>> test_frames, other_frames;
      std::set<int> test_ids;
      for (const auto* s : f.test) {
        test_ids.insert(s->vehicle_id);
        for (const auto& fr : s->frames) test_frames.insert({s->vehicle_id, fr.ctx.frame_id});
      }
      for (const auto& side : {f.train, f.validation})
        for (const auto* s : side) {
          EXPECT_FALSE(test_ids.count(s->vehicle_id));
          for (const auto& fr : s->frames) other_frames.insert({s->vehicle_id, fr.ctx.frame_id});
        }
      for (const auto& key : test_frames) EXPECT_FALSE(other_frames.count(key));
      for (int id : test_ids) ++times_tested[id];
    }
    if (kind == SplitKind::KFold) {
      EXPECT_EQ(times_tested.size(), d.track_ids().size());
      for (const auto& [id, n] : times_tested) EXPECT_EQ(n, 1);
    }
  }
}

TEST(FoldData, ValidationIsTenPercentOfTrainingTracks) {
  Dataset d;
  for (int vid = 1; vid <= 50; ++vid) d.sequences.push_back(sequence_of(vid, 0, 10));
  const auto plan = make_split(d.track_ids(), SplitKind::KFold, 2);
  const auto f = fold_data(d, plan, 0, 0.1, 3);
  EXPECT_EQ(f.test.size(), 10u);
  EXPECT_EQ(f.validation.size(), 4u);
  EXPECT_EQ(f.train.size(), 36u);
}

// ---------------------------------------------------------------------------
// Reports

TEST(EvalReport, MeanIsTheFoldMean) {
  std::mt19937_64 rng(11);
  EvalReport r;
  for (int i = 0; i < 5; ++i) {
    FoldResult f;
    f.round = i;
    for (int k = 0; k < 200; ++k) f.confusion.add(static_cast<int>(rng() % 2), k % 3 ? 1 : 0);
    f.accuracy = f.confusion.accuracy();
    r.folds.push_back(f);
  }
  r.finalize();
  double p = 0, n = 0;
  int tp = 0;
  for (const auto& f : r.folds) {
    p += f.accuracy.acc_p / 5;
    n += f.accuracy.acc_n / 5;
    tp += f.confusion.tp;
  }
  EXPECT_NEAR(r.mean.acc_p, p, 1e-12);
  EXPECT_NEAR(r.mean.acc_n, n, 1e-12);
  EXPECT_EQ(r.mean.acc, (r.mean.acc_p + r.mean.acc_n) / 2);
  EXPECT_EQ(r.pooled.tp, tp);
}

TEST(EvalReport, TableKeepsSchemesApart) {
  EvalReport a, b;
  a.dataset = "action-based";
  b.dataset = "automatic";
  for (auto* r : {&a, &b}) {
    FoldResult f;
    f.confusion.add(1, 1);
    f.confusion.add(0, 0);
    f.accuracy = f.confusion.accuracy();
    r->folds.push_back(f);
    r->finalize();
  }
  std::ostringstream table, summary;
  write_report_table(table, {a, b});
  write_summary(summary, {a, b});
  std::istringstream lines(table.str());
  std::string line;
  std::getline(lines, line);
  EXPECT_EQ(line, "dataset\tmodel\tfold\tacc_p\tacc_n\tacc\ttp\tfn\ttn\tfp");
  int rows = 0;
  while (std::getline(lines, line)) ++rows;
  EXPECT_EQ(rows, 4);
  EXPECT_NE(summary.str().find("action-based"), std::string::npos);
  EXPECT_NE(summary.str().find("automatic"), std::string::npos);
}

TEST(ModelNames, RoundTrip) {
  for (auto k : kAllModels) EXPECT_EQ(parse_model(model_name(k)), k);
  EXPECT_EQ(parse_model("bilstm*"), ModelKind::BiLstmStar);
  EXPECT_EQ(parse_model("svm"), ModelKind::Svm);
  EXPECT_THROW(parse_model("rnn"), ParseError);
  EXPECT_EQ(parse_scheme("auto"), Scheme::Automatic);
  EXPECT_EQ(parse_scheme("action"), Scheme::Action);
}

// ---------------------------------------------------------------------------
// Configuration

TEST(Config, ParsesCommentsAndWhitespace) {
  auto c = Config::parse("# header\n seed = 17  # trailing\n\nsvm.C_grid = 1, 10 ,100\nflag=yes\n");
  EXPECT_EQ(c.get_seed("seed", 1), 17u);
  EXPECT_EQ(c.get_doubles("svm.C_grid", {}), (std::vector<double>{1, 10, 100}));
  EXPECT_TRUE(c.get_bool("flag", false));
  EXPECT_EQ(c.get_double("missing", 2.5), 2.5);
}

TEST(Config, ErrorsNameTheProblem) {
  EXPECT_THROW(Config::parse("seed 17\n"), ParseError);
  EXPECT_THROW(Config::parse("= 3\n"), ParseError);
  auto c = Config::parse("a = x\nb = 1.5\nd = maybe\n");
  EXPECT_THROW(c.get_double("a", 0), ParseError);
  EXPECT_THROW(c.get_int("b", 0), ParseError);
  EXPECT_THROW(c.get_bool("d", false), ParseError);
  EXPECT_THROW(Config::load("/nonexistent/lcsa.cfg"), std::ios_base::failure);
}

TEST(Config, ResolvedHoldsDefaultsAndOverrides) {
  auto c = Config::parse("train.epochs = 3\nexperiment.models_auto = IDM\nunused.key = 1\n");
  const auto s = settings_from(c);
  EXPECT_EQ(s.train.epochs, 3);
  EXPECT_EQ(s.models_auto, std::vector<ModelKind>{ModelKind::Idm});
  const auto& r = c.resolved();
  EXPECT_EQ(r.at("train.epochs"), "3");
  EXPECT_EQ(r.at("idm.s0"), "2");
  EXPECT_TRUE(r.count("svm.gamma_grid"));
  EXPECT_EQ(c.unused_keys(), std::vector<std::string>{"unused.key"});

  std::ostringstream out;
  c.write_resolved(out);
  auto again = Config::parse(out.str());
  const auto s2 = settings_from(again);
  EXPECT_EQ(s2.train.epochs, s.train.epochs);
  EXPECT_EQ(s2.svm.C_grid, s.svm.C_grid);
  EXPECT_EQ(s2.idm.T, s.idm.T);
}

TEST(DeriveSeed, StableAndSeparated) {
  EXPECT_EQ(derive_seed(1, "split", 0), derive_seed(1, "split", 0));
  std::set<std::uint64_t> seen;
  for (std::uint64_t m : {1u, 2u})
    for (auto purpose : {"split", "init", "augment"})
      for (std::uint64_t i = 0; i < 5; ++i) seen.insert(derive_seed(m, purpose, i));
  EXPECT_EQ(seen.size(), 30u);
}

// ---------------------------------------------------------------------------
// Synthetic traffic and the experiment pipeline

SyntheticConfig small_synthetic(int scenarios) {
  SyntheticConfig g;
  g.scenarios = scenarios;
  g.seed = 5;
  return g;
}

TEST(Synthetic, DeterministicAndWellFormed) {
  const auto a = generate_synthetic(small_synthetic(6));
  const auto b = generate_synthetic(small_synthetic(6));
  ASSERT_EQ(a.tracks.size(), b.tracks.size());
  EXPECT_EQ(a.egos, b.egos);
  EXPECT_EQ(a.egos.size(), 6u);
  for (std::size_t i = 0; i < a.tracks.size(); ++i) {
    ASSERT_EQ(a.tracks[i].frames.size(), b.tracks[i].frames.size());
    for (std::size_t k = 0; k < a.tracks[i].frames.size(); ++k) {
      EXPECT_EQ(a.tracks[i].frames[k].longitudinal_pos, b.tracks[i].frames[k].longitudinal_pos);
      EXPECT_EQ(a.tracks[i].frames[k].speed, b.tracks[i].frames[k].speed);
    }
  }
  // Vehicles in one lane never overlap.
  const auto scenes = build_scenes(a.tracks);
  for (const auto& [fid, scene] : scenes) {
    std::map<int, std::vector<const TrajectoryFrame*>> by_lane;
    for (const auto& [id, f] : scene.entries) by_lane[f.lane_id].push_back(&f);
    for (auto& [lane, cars] : by_lane) {
      std::sort(cars.begin(), cars.end(),
                [](auto* x, auto* y) { return x->longitudinal_pos < y->longitudinal_pos; });
      for (std::size_t i = 1; i < cars.size(); ++i)
        EXPECT_GT(cars[i]->longitudinal_pos - cars[i]->length, cars[i - 1]->longitudinal_pos);
    }
  }
}

TEST(Synthetic, YieldsBothLabels) {
  const auto g = generate_synthetic(small_synthetic(40));
  ExperimentSettings s;
  const auto d = build_dataset(g.tracks, Scheme::Automatic, s, g.lanes, &g.egos);
  int pos = 0, neg = 0;
  for (const auto& seq : d.sequences)
    for (const auto& f : seq.frames) {
      pos += f.label == Label::Positive;
      neg += f.label == Label::Negative;
    }
  EXPECT_GT(pos, 0);
  EXPECT_GT(neg, 0);
}

Config pipeline_config(const std::string& models) {
  auto c = Config::parse(
      "data.synthetic = true\n"
      "synthetic.scenarios = 120\n"
      "experiment.folds = 3\n"
      "experiment.holdout_runs = 2\n"
      "synthetic.seed = 3\n"
      "experiment.schemes = auto\n"
      "experiment.threads = 2\n"
      "train.epochs = 2\n"
      "train.hidden_dim = 4\n"
      "grid.embed_dim = 3\n"
      "svm.C_grid = 1,10\n"
      "svm.gamma_grid = 0.1\n"
      "svm.max_samples = 200\n"
      "svm.max_validation = 100\n");
  c.set("experiment.models_auto", models);
  return c;
}

TEST(RunExperiment, IdmOnlyGivesOneReport) {
  auto c = pipeline_config("IDM");
  const auto data = load_data(c);
  const auto s = settings_from(c);
  const auto reports = run_experiment(data, s);
  ASSERT_EQ(reports.size(), 1u);
  EXPECT_EQ(reports[0].model, ModelKind::Idm);
  EXPECT_EQ(reports[0].dataset, "automatic");
  EXPECT_EQ(reports[0].folds.size(), 3u);
  EXPECT_EQ(reports[0].mean.acc, (reports[0].mean.acc_p + reports[0].mean.acc_n) / 2);
}

TEST(RunExperiment, SameSeedSameReports) {
  auto run = [] {
    auto c = pipeline_config("SVM,LSTM");
    const auto data = load_data(c);
    std::ostringstream out;
    write_report_table(out, run_experiment(data, settings_from(c)));
    return out.str();
  };
  const auto a = run();
  EXPECT_EQ(a, run());
  EXPECT_NE(a.find("SVM"), std::string::npos);
  EXPECT_NE(a.find("LSTM"), std::string::npos);
}

TEST(RunExperiment, MissingFilesFailBeforeTraining) {
  auto c = Config::parse("data.files = /nonexistent/a.csv\n");
  EXPECT_THROW(load_data(c), std::ios_base::failure);
  auto empty = Config::parse("");
  EXPECT_THROW(load_data(empty), ContractError);
}

TEST(RunExperiment, OutputsIncludeResolvedConfig) {
  auto c = pipeline_config("IDM");
  const auto data = load_data(c);
  const auto reports = run_experiment(data, settings_from(c));
  const auto dir = std::filesystem::temp_directory_path() / "lcsa_test_outputs";
  std::filesystem::remove_all(dir);
  write_outputs(dir.string(), reports, c);
  for (auto name : {"resolved.cfg", "report.tsv", "summary.txt"}) EXPECT_TRUE(std::filesystem::exists(dir / name));
  auto resolved = Config::load((dir / "resolved.cfg").string());
  EXPECT_EQ(resolved.get_string("synthetic.scenarios", ""), "120");
  EXPECT_EQ(resolved.get_string("idm.T", ""), "1.5");
  std::filesystem::remove_all(dir);
}

// ---------------------------------------------------------------------------
// Timelines

struct TimelineScene {
  std::vector<Track> tracks;
  SceneMap scenes;
  LaneTable lanes{{1, 2}};
};

/// Ego in lane 2 with a lone slow vehicle far behind in lane 1, so every
/// labeled frame is positive.
TimelineScene empty_target_lane() {
  TimelineScene s;
  s.tracks.push_back(straight_track(1, 0, 99, 2, 500.0, 20.0));
  s.tracks.push_back(straight_track(2, 0, 99, 1, 100.0, 15.0));
  s.scenes = build_scenes(s.tracks);
  return s;
}

TEST(Timeline, WindowOutsideTrackIsHeaderOnly) {
  const auto s = empty_target_lane();
  ExperimentSettings settings;
  const auto rows = export_timeline(s.tracks[0], s.scenes, s.lanes, Side::Left, 500, 600, nullptr, nullptr, settings);
  EXPECT_TRUE(rows.empty());
  std::ostringstream out;
  write_timeline(out, rows);
  EXPECT_EQ(out.str(), "frame_id,label,svm,p,o\n");
}

TEST(Timeline, RowCountEqualsWindowLength) {
  const auto s = empty_target_lane();
  ExperimentSettings settings;
  for (auto [first, last] : {std::pair{0, 99}, std::pair{10, 19}, std::pair{90, 140}, std::pair{-5, 4}}) {
    const auto rows =
        export_timeline(s.tracks[0], s.scenes, s.lanes, Side::Left, first, last, nullptr, nullptr, settings);
    EXPECT_EQ(static_cast<int>(rows.size()), std::min(last, 99) - std::max(first, 0) + 1);
  }
  // No lane to the right of lane 2 in this table.
  EXPECT_TRUE(export_timeline(s.tracks[0], s.scenes, LaneTable{{2}}, Side::Right, 0, 99, nullptr, nullptr, settings)
                  .empty());
}

TEST(Timeline, PerfectModelGivesConstantColumns) {
  const auto s = empty_target_lane();
  ExperimentSettings settings;
  settings.train.hidden_dim = 3;
  settings.train.embed_dim = 2;
  auto w = ModelWeights::zeros(settings.train.embed_dim, settings.train.hidden_dim, false);
  w.bo(1) = 10.0;  // always class 1
  SvmModel svm;
  svm.standardizer.mean = Eigen::VectorXd::Zero(kSvmBaseFeatures);
  svm.standardizer.scale = Eigen::VectorXd::Ones(kSvmBaseFeatures);
  svm.gamma = 1.0;
  svm.bias = 1.0;  // no support vectors: decision value is the bias
  const auto rows = export_timeline(s.tracks[0], s.scenes, s.lanes, Side::Left, 0, 60, &svm, &w, settings);
  ASSERT_EQ(rows.size(), 61u);
  for (const auto& r : rows) {
    EXPECT_EQ(r.label, 1);
    EXPECT_EQ(r.svm, 1);
    EXPECT_EQ(r.o, 1);
    EXPECT_EQ(r.p, rows.front().p);
  }
}

}  // namespace
}  // namespace lcsa
