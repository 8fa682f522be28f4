#include <CLI11.hpp>

#include <filesystem>
#include <fstream>
#include <iostream>
#include <random>

#include "lcsa/checkpoint.hpp"
#include "lcsa/harness.hpp"

using namespace lcsa;

namespace {

struct Common {
  std::string config_path;
  std::vector<std::string> stores;
};

Config open_config(const Common& o) {
  auto c = o.config_path.empty() ? Config{} : Config::load(o.config_path);
  if (!o.stores.empty()) {
    std::string joined;
    for (const auto& s : o.stores) joined += (joined.empty() ? "" : ",") + s;
    c.set("data.stores", joined);
    c.set("data.files", "");
    c.set("data.synthetic", "false");
  }
  return c;
}

bool has_data(const Config& c) { return c.has("data.files") || c.has("data.stores") || c.has("data.synthetic"); }

std::ifstream open_in(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::ios_base::failure("cannot open " + path);
  return in;
}

std::ofstream open_out(const std::string& path) {
  const auto parent = std::filesystem::path(path).parent_path();
  if (!parent.empty()) std::filesystem::create_directories(parent);
  std::ofstream out(path);
  if (!out) throw std::ios_base::failure("cannot write " + path);
  return out;
}

void write_resolved_beside(const Config& c, const std::string& output) {
  c.write_resolved(output + ".resolved.cfg");
}

void warn_unused(const Config& c) {
  for (const auto& k : c.unused_keys()) std::cerr << "warning: config key '" << k << "' is not used here\n";
}

std::vector<LabeledSequence> read_sequence_file(const std::string& path) {
  auto in = open_in(path);
  return read_sequences(in);
}

std::string first_line(const std::string& path) {
  auto in = open_in(path);
  std::string line;
  std::getline(in, line);
  return line;
}

/// Sequences from a file, with scenes attached when the configuration names
/// the recordings they came from.
Dataset sequence_dataset(Config& c, const std::string& seq_path, Scheme scheme) {
  Dataset d;
  d.scheme = scheme;
  d.sequences = read_sequence_file(seq_path);
  if (has_data(c)) {
    auto data = load_data(c);
    d.scenes = std::make_shared<SceneMap>(build_scenes(data.tracks));
    d.lanes = data.lanes;
  } else {
    d.lanes = lanes_from(c);
  }
  return d;
}

std::vector<const LabeledSequence*> pointers(const std::vector<LabeledSequence>& seqs) {
  std::vector<const LabeledSequence*> out;
  for (const auto& s : seqs) out.push_back(&s);
  return out;
}

/// Hold out a fraction of the tracks for validation.
void split_validation(const std::vector<LabeledSequence>& all, double fraction, std::uint64_t seed,
                      std::vector<const LabeledSequence*>& train, std::vector<const LabeledSequence*>& validation) {
  std::set<int> id_set;
  for (const auto& s : all) id_set.insert(s.vehicle_id);
  std::vector<int> ids(id_set.begin(), id_set.end());
  std::mt19937_64 rng(seed);
  std::shuffle(ids.begin(), ids.end(), rng);
  const auto n = static_cast<std::size_t>(std::llround(fraction * static_cast<double>(ids.size())));
  const std::set<int> val(ids.begin(), ids.begin() + static_cast<long>(std::min(n, ids.size())));
  for (const auto& s : all) (val.count(s.vehicle_id) ? validation : train).push_back(&s);
}

const Track& find_track(const std::vector<Track>& tracks, int id) {
  for (const auto& t : tracks)
    if (t.vehicle_id == id) return t;
  throw LookupError("no track with vehicle id " + std::to_string(id));
}

int cmd_ingest(const std::vector<std::string>& files, const std::string& units, const std::string& out_path) {
  Config c;
  std::string joined;
  for (const auto& f : files) joined += (joined.empty() ? "" : ",") + f;
  c.set("data.files", joined);
  c.set("data.units", units);
  const auto data = load_data(c);
  auto out = open_out(out_path);
  write_track_store(out, data.tracks);
  write_resolved_beside(c, out_path);
  std::size_t frames = 0;
  for (const auto& t : data.tracks) frames += t.frames.size();
  std::cout << "stored " << data.tracks.size() << " tracks, " << frames << " frames in " << out_path << "\n";
  return 0;
}

int cmd_label(const Common& o, const std::string& scheme_name, const std::string& out_path) {
  auto c = open_config(o);
  const auto scheme = parse_scheme(scheme_name);
  c.set("label.scheme", scheme_name);
  c.get_string("label.scheme", "");
  const auto data = load_data(c);
  const auto s = settings_from(c);
  const auto d = build_dataset(data.tracks, scheme, s, data.lanes, data.egos ? &*data.egos : nullptr);
  auto out = open_out(out_path);
  write_sequences(out, d.sequences);
  write_resolved_beside(c, out_path);
  warn_unused(c);
  std::size_t pos = 0, neg = 0;
  for (const auto& q : d.sequences)
    for (const auto& f : q.frames) {
      pos += f.label == Label::Positive;
      neg += f.label == Label::Negative;
    }
  std::cout << d.sequences.size() << " " << d.tag() << " sequences, " << pos << " positive and " << neg
            << " negative frames\n";
  return 0;
}

int cmd_train(const Common& o, const std::string& model_name_arg, const std::string& data_path,
              const std::string& validation_path, const std::string& scheme_name, const std::string& out_path) {
  auto c = open_config(o);
  auto kind = parse_model(model_name_arg);
  if (kind == ModelKind::BiLstm) kind = ModelKind::BiLstmStar;
  if (kind == ModelKind::Idm) throw ContractError("train supports lstm, bilstm, svm and svm*");
  const auto scheme = parse_scheme(scheme_name);
  auto s = settings_from(c);
  auto d = sequence_dataset(c, data_path, scheme);
  std::vector<LabeledSequence> val_storage;
  std::vector<const LabeledSequence*> train_set, validation;
  if (!validation_path.empty()) {
    val_storage = read_sequence_file(validation_path);
    train_set = pointers(d.sequences);
    validation = pointers(val_storage);
  } else {
    split_validation(d.sequences, s.validation_fraction, derive_seed(s.seed, "validation"), train_set, validation);
  }
  if (scheme == Scheme::Action && s.augment_action && !d.scenes) {
    std::cerr << "warning: augmentation needs the recordings (--store); training without it\n";
    s.augment_action = false;
  }
  auto out = open_out(out_path);
  if (kind == ModelKind::Svm || kind == ModelKind::SvmStar) {
    const auto sel = train_svm(kind, d, train_set, validation, s, derive_seed(s.seed, "svm"));
    write_svm(out, sel.model);
    std::cout << "selected C=" << sel.C << " gamma=" << sel.gamma << " validation acc=" << sel.validation_acc << "\n";
  } else {
    const auto w = train_recurrent(kind, d, train_set, validation, s, s.seed);
    write_model(out, w, fold_train_config(s, scheme, derive_seed(s.seed, "init")));
    std::cout << "trained " << (w.bidirectional() ? "bilstm" : "lstm") << " on " << train_set.size()
              << " sequences\n";
  }
  write_resolved_beside(c, out_path);
  warn_unused(c);
  return 0;
}

int cmd_eval(const Common& o, const std::string& model_arg, const std::string& data_path, bool online,
             const std::string& scheme_name, const std::string& report_path) {
  auto c = open_config(o);
  const auto scheme = parse_scheme(scheme_name);
  const auto s = settings_from(c);
  auto d = sequence_dataset(c, data_path, scheme);
  EvalReport rep;
  if (std::filesystem::is_regular_file(model_arg)) {
    c.set("eval.checkpoint", model_arg);
    c.get_string("eval.checkpoint", "");
    TrainedModel m;
    const auto head = first_line(model_arg);
    auto in = open_in(model_arg);
    if (head.rfind("lcsa-svm", 0) == 0) {
      m.svm = read_svm(in);
      m.kind = m.svm->standardizer.mean.size() == kSvmBaseFeatures ? ModelKind::Svm : ModelKind::SvmStar;
    } else {
      m.rnn = read_model(in).weights;
      m.kind = !m.rnn->bidirectional() ? ModelKind::Lstm : online ? ModelKind::BiLstm : ModelKind::BiLstmStar;
    }
    rep.model = m.kind;
    rep.dataset = d.tag();
    FoldResult f;
    f.confusion = evaluate(m, d, pointers(d.sequences), s);
    f.accuracy = f.confusion.accuracy();
    rep.folds.push_back(f);
    rep.finalize();
  } else {
    const auto kind = parse_model(model_arg);
    if (is_recurrent(kind)) throw ContractError("eval of a recurrent model needs a checkpoint file");
    rep = run_protocol(kind, d, s);
  }
  rep.config = c.resolved();
  auto out = open_out(report_path);
  write_report_table(out, {rep});
  write_summary(std::cout, {rep});
  write_resolved_beside(c, report_path);
  warn_unused(c);
  return 0;
}

struct TimelineArgs {
  int track = 0;
  std::string side = "left";
  int first = std::numeric_limits<int>::min();
  int last = std::numeric_limits<int>::max();
  std::string rnn_path, svm_path, out_path;
};

int cmd_timeline(const Common& o, const TimelineArgs& a) {
  auto c = open_config(o);
  const auto s = settings_from(c);
  const auto data = load_data(c);
  const auto scenes = build_scenes(data.tracks);
  std::optional<ModelWeights> rnn;
  std::optional<SvmModel> svm;
  if (!a.rnn_path.empty()) {
    auto in = open_in(a.rnn_path);
    rnn = read_model(in).weights;
    c.set("timeline.rnn", a.rnn_path);
    c.get_string("timeline.rnn", "");
  }
  if (!a.svm_path.empty()) {
    auto in = open_in(a.svm_path);
    svm = read_svm(in);
    c.set("timeline.svm", a.svm_path);
    c.get_string("timeline.svm", "");
  }
  const auto rows = export_timeline(find_track(data.tracks, a.track), scenes, data.lanes, parse_side(a.side), a.first,
                                    a.last, svm ? &*svm : nullptr, rnn ? &*rnn : nullptr, s);
  if (a.out_path.empty() || a.out_path == "-") {
    write_timeline(std::cout, rows);
    c.write_resolved(std::cerr);
  } else {
    auto out = open_out(a.out_path);
    write_timeline(out, rows);
    write_resolved_beside(c, a.out_path);
  }
  return 0;
}

int cmd_run(const Common& o, std::string out_dir) {
  auto c = open_config(o);
  const auto s = settings_from(c);
  if (out_dir.empty()) out_dir = c.get_string("experiment.out_dir", "results");
  const auto data = load_data(c);
  const auto reports = run_experiment(data, s, c.resolved());
  write_outputs(out_dir, reports, c);
  write_summary(std::cout, reports);
  warn_unused(c);
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Lane-change situation assessment toolkit"};
  app.require_subcommand(1);
  Common common;
  auto add_common = [&](CLI::App* sub, bool config_required = false) {
    auto* opt = sub->add_option("--config", common.config_path, "key = value configuration file");
    if (config_required) opt->required();
    sub->add_option("--store", common.stores, "track store(s) written by ingest");
  };

  std::vector<std::string> files;
  std::string units = "feet", out, scheme = "auto", model, data, validation, report;
  bool online = false;
  TimelineArgs tl;

  auto* ingest = app.add_subcommand("ingest", "Parse NGSIM trajectory files into a track store");
  ingest->add_option("files", files, "NGSIM trajectory files")->required()->check(CLI::ExistingFile);
  ingest->add_option("--units", units, "units of the input files")->check(CLI::IsMember({"feet", "meters"}));
  ingest->add_option("--out", out, "track store to write")->required();

  auto* label = app.add_subcommand("label", "Label tracks into sequences");
  add_common(label);
  label->add_option("--scheme", scheme)->required()->check(CLI::IsMember({"action", "auto"}));
  label->add_option("--out", out, "sequence file to write")->required();

  auto* train_cmd = app.add_subcommand("train", "Train a model on labeled sequences");
  add_common(train_cmd);
  train_cmd->add_option("--model", model, "lstm, bilstm, svm or svm*")->required();
  train_cmd->add_option("--data", data, "sequence file")->required()->check(CLI::ExistingFile);
  train_cmd->add_option("--validation", validation, "validation sequence file")->check(CLI::ExistingFile);
  train_cmd->add_option("--scheme", scheme, "labeling scheme of the data")->check(CLI::IsMember({"action", "auto"}));
  train_cmd->add_option("--out", out, "checkpoint to write")->required();

  auto* eval = app.add_subcommand("eval", "Evaluate a checkpoint or a baseline on labeled sequences");
  add_common(eval);
  eval->add_option("--model", model, "checkpoint file, svm, svm* or idm")->required();
  eval->add_option("--data", data, "sequence file")->required()->check(CLI::ExistingFile);
  eval->add_flag("--online", online, "run a bidirectional checkpoint on predicted futures");
  eval->add_option("--scheme", scheme, "labeling scheme of the data")->check(CLI::IsMember({"action", "auto"}));
  eval->add_option("--report", report, "report table to write")->required();

  auto* predict = app.add_subcommand("predict", "Per-frame suitability for one track from a checkpoint");
  add_common(predict);
  predict->add_option("--model", tl.rnn_path, "recurrent checkpoint")->required()->check(CLI::ExistingFile);
  predict->add_option("--track", tl.track, "vehicle id")->required();
  predict->add_option("--side", tl.side)->required()->check(CLI::IsMember({"left", "right"}));
  predict->add_option("--first", tl.first, "first frame id");
  predict->add_option("--last", tl.last, "last frame id");
  predict->add_option("--out", tl.out_path, "CSV to write (default stdout)");

  auto* timeline = app.add_subcommand("export-timeline", "Per-frame labels and model outputs for one track");
  add_common(timeline);
  timeline->add_option("--track", tl.track, "vehicle id")->required();
  timeline->add_option("--side", tl.side)->required()->check(CLI::IsMember({"left", "right"}));
  timeline->add_option("--first", tl.first, "first frame id");
  timeline->add_option("--last", tl.last, "last frame id");
  timeline->add_option("--rnn", tl.rnn_path, "recurrent checkpoint")->check(CLI::ExistingFile);
  timeline->add_option("--svm", tl.svm_path, "svm checkpoint")->check(CLI::ExistingFile);
  timeline->add_option("--out", tl.out_path, "CSV to write (default stdout)");

  auto* run = app.add_subcommand("run", "Full evaluation protocol over every configured model and scheme");
  add_common(run, true);
  run->add_option("--out", out, "output directory (default experiment.out_dir)");

  CLI11_PARSE(app, argc, argv);
  try {
    if (*ingest) return cmd_ingest(files, units, out);
    if (*label) return cmd_label(common, scheme, out);
    if (*train_cmd) return cmd_train(common, model, data, validation, scheme, out);
    if (*eval) return cmd_eval(common, model, data, online, scheme, report);
    if (*predict || *timeline) return cmd_timeline(common, tl);
    if (*run) return cmd_run(common, out);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
