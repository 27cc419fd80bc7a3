// SPDX-License-Identifier: Apache-2.0
#include "cli.hpp"

#include <CLI11.hpp>

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <optional>
#include <ostream>
#include <sstream>

#include "idu/ablate.hpp"
#include "idu/checkpoint.hpp"
#include "idu/error.hpp"
#include "idu/eval.hpp"
#include "idu/gradcheck.hpp"
#include "idu/train.hpp"

namespace idu::cli {

namespace {

namespace fs = std::filesystem;

// Every option goes through here so the parsed values can be written back
// out as the run configuration.
class Options {
 public:
  explicit Options(CLI::App& app) : app_(app) {}

  template <typename T>
  CLI::Option* add(const std::string& name, T& value, const std::string& help) {
    CLI::Option* opt = app_.add_option("--" + name, value, help)->capture_default_str();
    record(name, value);
    return opt;
  }

  CLI::Option* flag(const std::string& name, bool& value, const std::string& help) {
    CLI::Option* opt = app_.add_flag("--" + name, value, help);
    record(name, value);
    return opt;
  }

  ConfigRecord snapshot(std::string_view command) const {
    ConfigRecord r;
    r["run.command"] = std::string(command);
    for (const auto& [name, fn] : writers_) r["run." + name] = fn();
    return r;
  }

 private:
  template <typename T>
  void record(const std::string& name, T& value) {
    writers_[name] = [&value]() -> std::string {
      if constexpr (std::is_same_v<T, bool>) {
        return value ? "true" : "false";
      } else if constexpr (std::is_same_v<T, double>) {
        return format_double(value);
      } else if constexpr (std::is_same_v<T, std::string>) {
        return value;
      } else {
        return std::to_string(value);
      }
    };
  }

  CLI::App& app_;
  std::map<std::string, std::function<std::string()>> writers_;
};

// Flat "key=value" lines, '#' comments. Keys are long flag names.
std::vector<std::string> config_file_args(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw UsageError("cannot read config file " + path.string());
  std::vector<std::string> args;
  std::string line;
  std::size_t n = 0;
  while (std::getline(in, line)) {
    ++n;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.erase(hash);
    const auto first = line.find_first_not_of(" \t\r");
    if (first == std::string::npos) continue;
    line = line.substr(first, line.find_last_not_of(" \t\r") + 1 - first);
    const auto eq = line.find('=');
    if (eq == std::string::npos || eq == 0) {
      throw UsageError(path.string() + ":" + std::to_string(n) + ": expected key=value");
    }
    std::string key = line.substr(0, eq);
    key.erase(key.find_last_not_of(" \t") + 1);
    std::string value = line.substr(eq + 1);
    value.erase(0, value.find_first_not_of(" \t"));
    if (key == "config") throw UsageError(path.string() + ": config files cannot include other config files");
    // run.* keys come from an artifact's embedded configuration.
    if (key.rfind("run.", 0) == 0) key.erase(0, 4);
    if (key == "command") continue;
    args.push_back("--" + key + "=" + value);
  }
  return args;
}

// Inserts the config file's settings right after the subcommand name, so
// explicit flags (which come later) win.
std::vector<std::string> expand_config(std::vector<std::string> args) {
  for (std::size_t i = 1; i < args.size(); ++i) {
    std::string path;
    std::size_t span = 0;
    if (args[i] == "--config" && i + 1 < args.size()) {
      path = args[i + 1];
      span = 2;
    } else if (args[i].rfind("--config=", 0) == 0) {
      path = args[i].substr(9);
      span = 1;
    } else {
      continue;
    }
    auto extra = config_file_args(path);
    args.erase(args.begin() + static_cast<std::ptrdiff_t>(i), args.begin() + static_cast<std::ptrdiff_t>(i + span));
    args.insert(args.begin() + 1, extra.begin(), extra.end());
    break;
  }
  return args;
}

void write_text_file(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw FormatError("cannot write " + path.string());
  out << text;
  if (!out.flush()) throw FormatError("cannot write " + path.string());
}

std::string config_text(const ConfigRecord& r) {
  std::ostringstream s;
  for (const auto& [k, v] : r) s << k << '=' << v << '\n';
  return s.str();
}

std::string csv_header(const ConfigRecord& r) {
  std::ostringstream s;
  for (const auto& [k, v] : r) s << "# " << k << '=' << v << '\n';
  return s.str();
}

// --- model naming -----------------------------------------------------------

enum class Task { Detect, Anticipate };

struct ModelChoice {
  Task task = Task::Detect;
  CellKind cell = CellKind::Idu;
};

ModelChoice choose_model(const std::string& model, const std::string& task) {
  if (task != "auto" && task != "detect" && task != "anticipate") {
    throw UsageError("--task must be auto, detect or anticipate");
  }
  ModelChoice c;
  if (model == "idn") {
    c.cell = CellKind::Idu;
    c.task = Task::Detect;
  } else if (model == "iin") {
    c.cell = CellKind::Iiu;
    c.task = Task::Anticipate;
  } else {
    c.cell = parse_cell_kind(model);
    c.task = uses_label_input(c.cell) ? Task::Anticipate : Task::Detect;
  }
  if (task == "detect") {
    if (uses_label_input(c.cell)) throw UsageError(model + " is an anticipation model");
    c.task = Task::Detect;
  } else if (task == "anticipate") {
    if (c.cell == CellKind::Ci) throw UsageError("ci is a detection baseline");
    c.task = Task::Anticipate;
  }
  if (model == "idn" && c.task == Task::Anticipate) throw UsageError("idn is the detection network; use idu");
  return c;
}

LabelSource parse_labels(const std::string& s) {
  if (s == "pseudo") return LabelSource::Pseudo;
  if (s == "oracle") return LabelSource::Oracle;
  throw UsageError("--labels must be pseudo or oracle");
}

Sampling parse_sampling(const std::string& s, Sampling fallback) {
  if (s == "auto") return fallback;
  if (s == "balanced") return Sampling::Balanced;
  if (s == "shuffle") return Sampling::Shuffle;
  throw UsageError("--sampling must be auto, balanced or shuffle");
}

// --- shared training flags --------------------------------------------------

struct TrainFlags {
  std::size_t epochs = 10;
  std::size_t batch = 0;  // 0: family default
  double lr = 0.0;        // 0: family default
  std::string optimizer = "auto";
  std::uint64_t seed = 0;
  double alpha = 0.3;
  double margin = 1.0;
  std::size_t past = 15;
  std::size_t horizon = 8;
  std::size_t stride = 1;
  double clip = 10.0;
  std::size_t max_batches = 0;
  std::string sampling = "auto";

  void add(Options& o, const std::string& prefix = "") {
    o.add(prefix + "epochs", epochs, "training epochs");
    o.add(prefix + "batch", batch, "batch size (0: 128 for detectors, 32 for anticipators)");
    o.add(prefix + "lr", lr, "learning rate (0: 0.01 SGD for detectors, 1e-4 Adam for anticipators)");
    o.add(prefix + "optimizer", optimizer, "auto, sgd or adam");
    o.add(prefix + "alpha", alpha, "weight of the early-embedding losses");
    o.add(prefix + "margin", margin, "contrastive margin");
    o.add(prefix + "clip", clip, "global gradient-norm clip (0 disables)");
    o.add(prefix + "max-batches", max_batches, "batches per epoch (0: all)");
    o.add(prefix + "sampling", sampling, "auto, balanced or shuffle");
  }

  TrainConfig resolve(Task task) const {
    TrainConfig t = task == Task::Detect ? idn_defaults() : iin_defaults();
    t.epochs = epochs;
    if (batch != 0) t.batch_size = batch;
    if (optimizer != "auto") t.optimizer.kind = parse_optimizer(optimizer);
    if (lr != 0.0) t.optimizer.lr = lr;
    t.seed = seed;
    t.alpha = alpha;
    t.margin = margin;
    t.past = past;
    t.horizon = horizon;
    t.stride = stride;
    t.clip_norm = clip;
    t.max_batches = max_batches;
    t.sampling = parse_sampling(sampling, t.sampling);
    t.validate();
    return t;
  }
};

struct ModelFlags {
  std::size_t hidden = 0;  // 0: 512 for detectors, 2048 for anticipators
  std::size_t reduced = 2048;
  std::size_t label_width = 128;
  std::size_t head1 = 1024;
  std::size_t head2 = 2048;
  std::string reduction = "softmax";
  std::string integration = "full";
  double norm_momentum = 0.9;

  void add(Options& o, const std::string& prefix = "", bool detector_only = false) {
    o.add(prefix + "hidden", hidden, "hidden width e or u (0: 512 detectors, 2048 anticipators)");
    if (detector_only) return;
    o.add(prefix + "reduced", reduced, "reduced visual width d_v");
    o.add(prefix + "label-width", label_width, "label feature width d_g");
    o.add(prefix + "head1", head1, "first anticipation-head width");
    o.add(prefix + "head2", head2, "second anticipation-head width");
    o.add(prefix + "reduction", reduction, "softmax or relu");
    o.add(prefix + "integration", integration, "full, no-hcomb or no-hcomb-no-weighting");
    o.add(prefix + "norm-momentum", norm_momentum, "momentum of the label-normalizer running statistics");
  }

  DetectorConfig detector(CellKind cell, const FeatureStream& data) const {
    DetectorConfig c;
    c.cell = cell;
    c.feature_width = data.width();
    c.hidden = hidden != 0 ? hidden : 512;
    c.num_classes = data.num_classes;
    return c;
  }

  AnticipatorConfig anticipator(CellKind cell, const FeatureStream& data, std::size_t horizon) const {
    AnticipatorConfig c;
    c.cell = cell;
    c.integration = parse_integration_mode(integration);
    c.feature_width = data.width();
    c.reduced_width = reduced;
    c.label_width = label_width;
    c.hidden = hidden != 0 ? hidden : 2048;
    c.num_classes = data.num_classes;
    c.horizon = horizon;
    c.head_hidden1 = head1;
    c.head_hidden2 = head2;
    c.reduction = parse_reduction(reduction);
    c.norm_momentum = norm_momentum;
    return c;
  }
};

// --- commands ---------------------------------------------------------------

struct GenData {
  std::string out;
  std::size_t classes = 20;
  std::size_t width = 64;
  std::size_t chunks = 10000;
  double bg_frac = 0.71;
  double sep = 4.0;
  double noise = 1.0;
  double action_len = 16.0;
  double len_spread = 0.5;
  std::uint64_t seed = 0;

  void add(Options& o) {
    o.add("out", out, "output IDUF1 file")->required();
    o.add("classes", classes, "action classes K");
    o.add("width", width, "feature width d_x (>= K + 1)");
    o.add("chunks", chunks, "stream length in chunks");
    o.add("bg-frac", bg_frac, "background fraction");
    o.add("sep", sep, "pairwise distance of class means");
    o.add("noise", noise, "per-coordinate noise sigma");
    o.add("action-len", action_len, "mean segment length in chunks");
    o.add("len-spread", len_spread, "relative spread of segment lengths");
    o.add("seed", seed, "random seed");
  }

  int run(const Options& o, std::ostream& out_stream) const {
    SynthConfig c;
    c.action_classes = classes;
    c.feature_width = width;
    c.length = chunks;
    c.background_fraction = bg_frac;
    c.separation = sep;
    c.noise = noise;
    c.action_length_mean = action_len;
    c.length_spread = len_spread;
    c.seed = seed;
    const FeatureStream s = gen_synthetic(c);
    write_features(s, out);
    write_text_file(out + ".run", config_text(o.snapshot("gen-data")));
    out_stream << "wrote " << s.length() << " chunks (" << s.width() << " features, " << s.num_classes
               << " classes) to " << out << '\n';
    return kOk;
  }
};

struct Train {
  std::string model = "idn";
  std::string task = "auto";
  std::string data;
  std::string labels = "pseudo";
  std::string idn_ckpt;
  std::string ckpt_out;
  std::string log_out;
  TrainFlags tf;
  ModelFlags mf;

  void add(Options& o) {
    o.add("model", model, "idn, iin or a cell: rnn lstm gru ci idu iiu iiu-light gru-fc1 gru-fc2");
    o.add("task", task, "auto, detect or anticipate");
    o.add("data", data, "training IDUF1 file")->required();
    o.add("labels", labels, "anticipator label input: pseudo or oracle");
    o.add("idn-ckpt", idn_ckpt, "trained detector for pseudo labels");
    o.add("ckpt-out", ckpt_out, "output checkpoint")->required();
    o.add("log-out", log_out, "training log (default: <ckpt-out>.log)");
    o.add("seed", tf.seed, "random seed");
    o.add("past", tf.past, "past chunks T");
    o.add("horizon", tf.horizon, "anticipation steps T_a");
    o.add("stride", tf.stride, "window stride");
    tf.add(o);
    mf.add(o);
  }

  int run(const Options& o, std::ostream& out) const {
    const ModelChoice choice = choose_model(model, task);
    const TrainConfig tc = tf.resolve(choice.task);
    const FeatureStream stream = read_features(data);
    Checkpoint ckpt;
    TrainLog log;
    if (choice.task == Task::Detect) {
      DetectorRun r = train_idn(tc, mf.detector(choice.cell, stream), stream);
      ckpt = to_checkpoint(r.model);
      log = std::move(r.log);
    } else {
      const LabelSource source = parse_labels(labels);
      std::optional<DetectorModel> det;
      if (source == LabelSource::Pseudo) {
        if (idn_ckpt.empty()) throw UsageError("--labels pseudo needs --idn-ckpt");
        const Checkpoint dc = read_checkpoint(idn_ckpt);
        det = detector_from_checkpoint(dc);
      }
      const auto track = label_track(stream, source, det ? &*det : nullptr, tc.past);
      AnticipatorRun r = train_iin(tc, mf.anticipator(choice.cell, stream, tc.horizon), stream, track);
      ckpt = to_checkpoint(r.model);
      log = std::move(r.log);
    }
    const ConfigRecord run = o.snapshot("train");
    ckpt.config.insert(run.begin(), run.end());
    tc.write(ckpt.config);
    write_checkpoint(ckpt, ckpt_out);

    std::ostringstream log_text;
    write_config(log_text, ckpt.config);
    log.write(log_text);
    write_text_file(log_out.empty() ? ckpt_out + ".log" : log_out, log_text.str());
    if (!log.records.empty()) {
      out << "final loss " << format_double(log.records.back().loss) << " after " << log.records.back().step + 1
          << " steps; clipped " << log.clipped_steps << '\n';
    }
    out << "wrote " << ckpt_out << '\n';
    return kOk;
  }
};

struct Eval {
  std::string ckpt;
  std::string data;
  std::string report_out;
  bool portions = false;
  std::string horizons = "all";
  bool gates = false;
  std::size_t gate_windows = 1000;
  std::string labels = "auto";
  std::string idn_ckpt;
  std::size_t past = 0;

  void add(Options& o) {
    o.add("ckpt", ckpt, "checkpoint to evaluate")->required();
    o.add("data", data, "evaluation IDUF1 file")->required();
    o.add("report-out", report_out, "report path; CSV tables go next to it")->required();
    o.flag("portions", portions, "add the per-portion mcAP table (detectors)");
    o.add("horizons", horizons, "anticipation lead times in seconds, comma separated, or all");
    o.flag("gates", gates, "add the update-gate relevance table (detectors)");
    o.add("gate-windows", gate_windows, "windows sampled for the gate table (0: all)");
    o.add("labels", labels, "anticipator label input: auto (as trained), pseudo or oracle");
    o.add("idn-ckpt", idn_ckpt, "detector for pseudo labels (default: the one used in training)");
    o.add("past", past, "past chunks T (0: as trained)");
  }

  std::size_t resolve_past(const Checkpoint& c) const {
    if (past != 0) return past;
    const auto it = c.config.find("train.past");
    return it == c.config.end() ? 15 : parse_size(it->second, "train.past");
  }

  int run(const Options& o, std::ostream& out) const {
    const Checkpoint c = read_checkpoint(ckpt);
    const FeatureStream stream = read_features(data);
    const std::size_t T = resolve_past(c);
    ConfigRecord cfg = o.snapshot("eval");
    for (const auto& [k, v] : c.config) cfg["ckpt." + k] = v;
    const std::string header = csv_header(cfg);
    std::ostringstream text;
    write_config(text, cfg);

    if (model_family(c) == "detector") {
      if (horizons != "all") throw UsageError("--horizons applies to anticipation checkpoints");
      const DetectorModel m = detector_from_checkpoint(c);
      const ScoredFrames frames = score_stream(m, stream, T);
      const MapReport r = map_mcap(frames);
      write_text(text, r, "detection.");
      std::ostringstream csv;
      csv << header;
      write_csv(csv, r);
      write_text_file(report_out + ".csv", csv.str());
      out << "mAP " << format_double(r.map) << " mcAP " << format_double(r.mcap) << '\n';
      if (portions) {
        const PortionReport p = portion_map(frames, progress_buckets(frames.labels));
        write_text(text, p);
        std::ostringstream pcsv;
        pcsv << header;
        write_csv(pcsv, p);
        write_text_file(report_out + ".portions.csv", pcsv.str());
      }
      if (gates) {
        const GateReport g = gate_relevance_report(m, make_windows(stream, T, 0), gate_windows);
        write_text(text, g);
        std::ostringstream gcsv;
        gcsv << header;
        write_csv(gcsv, g);
        write_text_file(report_out + ".gates.csv", gcsv.str());
        if (g.mean_relevant && g.mean_irrelevant) out << "gate separation " << format_double(g.separation()) << '\n';
      }
    } else {
      if (portions || gates) throw UsageError("--portions and --gates apply to detection checkpoints");
      const AnticipatorModel m = anticipator_from_checkpoint(c);
      const auto track = anticipation_track(c, stream, T);
      const AnticipationScores scores = anticipate_stream(m, stream, track, T);
      std::vector<std::size_t> rows;
      if (horizons != "all") {
        std::stringstream list(horizons);
        std::string item;
        while (std::getline(list, item, ',')) {
          rows.push_back(horizon_index(parse_double(item, "horizons"), scores.step_seconds, scores.horizon()));
        }
      }
      const auto curve = anticipation_eval(scores, rows);
      write_text(text, curve);
      std::ostringstream csv;
      csv << header;
      write_csv(csv, curve);
      write_text_file(report_out + ".csv", csv.str());
      for (const auto& p : curve) {
        out << format_double(p.seconds) << " s: mAP " << format_double(p.metrics.map) << " mcAP "
            << format_double(p.metrics.mcap) << '\n';
      }
    }
    write_text_file(report_out, text.str());
    out << "wrote " << report_out << '\n';
    return kOk;
  }

  std::vector<int> anticipation_track(const Checkpoint& c, const FeatureStream& stream, std::size_t T) const {
    std::string source = labels;
    if (source == "auto") {
      const auto it = c.config.find("run.labels");
      source = it == c.config.end() ? "oracle" : it->second;
    }
    if (parse_labels(source) == LabelSource::Oracle) return stream.labels;
    std::string det_path = idn_ckpt;
    if (det_path.empty()) {
      const auto it = c.config.find("run.idn-ckpt");
      if (it != c.config.end()) det_path = it->second;
    }
    if (det_path.empty()) throw UsageError("pseudo labels need --idn-ckpt");
    const DetectorModel det = detector_from_checkpoint(read_checkpoint(det_path));
    return label_track(stream, LabelSource::Pseudo, &det, T);
  }
};

// Toy sizes shared by gradcheck.
struct SmallDims {
  std::size_t width = 8, hidden = 8, classes = 4, reduced = 8, label = 8, head = 8, past = 3, horizon = 2;
};

SmallDims parse_small_dims(const std::string& spec) {
  SmallDims d;
  if (spec == "small") return d;
  std::stringstream list(spec);
  std::string item;
  while (std::getline(list, item, ',')) {
    const auto eq = item.find('=');
    if (eq == std::string::npos) throw UsageError("--dims entries must be key=value");
    const std::string k = item.substr(0, eq);
    const std::size_t v = parse_size(item.substr(eq + 1), k);
    if (k == "d_x") d.width = v;
    else if (k == "e" || k == "h" || k == "u") d.hidden = v;
    else if (k == "K") d.classes = v + 1;
    else if (k == "d_v") d.reduced = v;
    else if (k == "d_g") d.label = v;
    else if (k == "T") d.past = v;
    else if (k == "T_a") d.horizon = v;
    else throw UsageError("unknown dimension '" + k + "'");
  }
  return d;
}

struct GradCheck {
  std::string model = "idn";
  std::string task = "auto";
  std::string dims = "small";
  std::uint64_t seed = 0;
  std::size_t seeds = 1;

  void add(Options& o) {
    o.add("model", model, "idn, iin or a cell kind");
    o.add("task", task, "auto, detect or anticipate");
    o.add("dims", dims, "small, or key=value list over d_x,e,K,d_v,d_g,T,T_a");
    o.add("seed", seed, "first seed");
    o.add("seeds", seeds, "number of seeded draws");
  }

  int run(const Options&, std::ostream& out) const {
    const ModelChoice choice = choose_model(model, task);
    const SmallDims d = parse_small_dims(dims);
    double worst = 0.0;
    std::size_t coords = 0, kinks = 0;
    for (std::uint64_t s = seed; s < seed + seeds; ++s) {
      SynthConfig sc;
      sc.action_classes = d.classes - 1;
      sc.feature_width = d.width;
      sc.length = 40;
      sc.action_length_mean = 4;
      sc.background_fraction = 0.5;
      sc.seed = s;
      const FeatureStream stream = gen_synthetic(sc);
      const WindowSet w = make_windows(stream, d.past, d.horizon);
      std::vector<std::size_t> idx;
      for (std::size_t i = 0; i < 6; ++i) idx.push_back(i * (w.size() - 1) / 5);
      const SequenceBatch batch = assemble(w, idx);
      Rng rng(Rng::mix(s, 1));
      GradCheckReport rep;
      if (choice.task == Task::Detect) {
        DetectorModel m = DetectorModel::create({choice.cell, d.width, d.hidden, d.classes}, rng);
        const std::size_t n = m.cell.size();
        rep = check_graph_gradients(
            [&](Tape&, std::span<const Var> vars) {
              const ModelBinding b{BoundParams(m.cell, vars.subspan(0, n)), BoundParams(m.head, vars.subspan(n))};
              return detector_loss(m, idn_forward(m, b, batch), batch, 0.3, 1.0).total;
            },
            trainable(m));
      } else {
        AnticipatorConfig ac;
        ac.cell = choice.cell;
        ac.feature_width = d.width;
        ac.reduced_width = d.reduced;
        ac.label_width = d.label;
        ac.hidden = d.hidden;
        ac.num_classes = d.classes;
        ac.horizon = d.horizon;
        ac.head_hidden1 = d.head;
        ac.head_hidden2 = d.head;
        AnticipatorModel m = AnticipatorModel::create(ac, rng);
        const std::size_t n = m.cell.size();
        rep = check_graph_gradients(
            [&](Tape&, std::span<const Var> vars) {
              const ModelBinding b{BoundParams(m.cell, vars.subspan(0, n)), BoundParams(m.head, vars.subspan(n))};
              return anticipator_loss(m, iin_forward(m, b, batch, NormMode::Train), batch);
            },
            trainable(m));
      }
      worst = std::max(worst, rep.max_rel_error);
      coords += rep.coordinates;
      kinks += rep.non_smooth;
    }
    const bool pass = worst < 1e-4;
    out << "max_rel_error=" << format_double(worst) << '\n'
        << "coordinates=" << coords << '\n'
        << "non_smooth=" << kinks << '\n'
        << "result=" << (pass ? "pass" : "fail") << '\n';
    return pass ? kOk : kNumeric;
  }
};

struct Params {
  std::string model = "idu";
  std::string dims;

  void add(Options& o) {
    o.add("model", model, "cell kind, idn or iin");
    o.add("dims", dims, "key=value list over d_x,e,h,u,K,d_v,d_g (paper sizes by default)");
  }

  int run(const Options&, std::ostream& out) const {
    const CellKind kind = model == "idn" ? CellKind::Idu : model == "iin" ? CellKind::Iiu : parse_cell_kind(model);
    const bool label_cell = uses_label_input(kind);
    std::size_t d_x = 3072, hidden = label_cell ? 2048 : 512, K = 20, d_v = 2048, d_g = 128;
    std::stringstream list(dims);
    std::string item;
    while (std::getline(list, item, ',')) {
      if (item.empty()) continue;
      const auto eq = item.find('=');
      if (eq == std::string::npos) throw UsageError("--dims entries must be key=value");
      const std::string k = item.substr(0, eq);
      const std::size_t v = parse_size(item.substr(eq + 1), k);
      if (k == "d_x") d_x = v;
      else if (k == "e" || k == "h" || k == "u") hidden = v;
      else if (k == "K") K = v;
      else if (k == "d_v") d_v = v;
      else if (k == "d_g") d_g = v;
      else throw UsageError("unknown dimension '" + k + "'");
    }
    CellDims cd;
    cd.hidden = hidden;
    cd.classes = K + 1;
    if (label_cell) {
      cd.input = d_v;
      cd.label = d_g;
    } else {
      cd.input = d_x;
    }
    CellDims gru = cd;
    if (label_cell) {
      gru.input = d_v + d_g;
      gru.label = 0;
    }
    const double p = static_cast<double>(count_params(kind, cd));
    const double f = static_cast<double>(count_flops(kind, cd));
    out << "model=" << to_string(kind) << '\n'
        << "params=" << count_params(kind, cd) << '\n'
        << "flops=" << count_flops(kind, cd) << '\n'
        << "gru.params=" << count_params(CellKind::Gru, gru) << '\n'
        << "gru.flops=" << count_flops(CellKind::Gru, gru) << '\n'
        << "ratio.params_vs_gru=" << format_double(p / static_cast<double>(count_params(CellKind::Gru, gru))) << '\n'
        << "ratio.flops_vs_gru=" << format_double(f / static_cast<double>(count_flops(CellKind::Gru, gru))) << '\n';
    if (label_cell && kind != CellKind::Iiu) {
      out << "ratio.params_vs_iiu=" << format_double(p / static_cast<double>(count_params(CellKind::Iiu, cd)))
          << '\n';
    }
    return kOk;
  }
};

struct Ablate {
  std::string suite = "oad";
  std::string data;
  std::size_t seeds = 3;
  std::uint64_t first_seed = 0;
  double test_frac = 0.2;
  std::string labels = "pseudo";
  std::string report_out;
  std::size_t past = 15;
  std::size_t horizon = 8;
  std::size_t gate_windows = 1000;
  TrainFlags det;
  TrainFlags ant;
  ModelFlags det_model;
  ModelFlags ant_model;

  void add(Options& o) {
    o.add("suite", suite, "oad, aa or integration");
    o.add("data", data, "IDUF1 stream; its tail is the test split")->required();
    o.add("seeds", seeds, "seeds per variant");
    o.add("seed", first_seed, "first seed");
    o.add("test-frac", test_frac, "fraction of the stream held out for testing");
    o.add("labels", labels, "label input of the anticipators: pseudo or oracle");
    o.add("report-out", report_out, "report path; the CSV table goes next to it");
    o.add("past", past, "past chunks T");
    o.add("horizon", horizon, "anticipation steps T_a");
    o.add("gate-windows", gate_windows, "windows for the gate separation column (0: off)");
    det.add(o, "det-");
    det_model.add(o, "det-", true);
    ant.add(o, "ant-");
    ant_model.add(o, "ant-");
  }

  int run(const Options& o, std::ostream& out) const {
    const Suite s = parse_suite(suite);
    const FeatureStream stream = read_features(data);
    AblationSettings as;
    TrainFlags d = det, a = ant;
    d.past = a.past = past;
    d.horizon = a.horizon = horizon;
    as.detector_train = d.resolve(Task::Detect);
    as.anticipator_train = a.resolve(Task::Anticipate);
    as.detector = det_model.detector(CellKind::Idu, stream);
    as.anticipator = ant_model.anticipator(CellKind::Iiu, stream, horizon);
    as.labels = parse_labels(labels);
    as.test_fraction = test_frac;
    as.seeds = seeds;
    as.first_seed = first_seed;
    as.gate_windows = gate_windows;
    const AblationTable t = run_ablation(s, as, stream, [&](const AblationRow& r) {
      out << r.variant << " seed " << r.seed << ": mAP " << format_double(r.map) << " mcAP "
          << format_double(r.mcap) << '\n';
    });
    std::ostringstream csv;
    csv << csv_header(o.snapshot("ablate"));
    write_csv(csv, t);
    out << csv.str();
    if (!report_out.empty()) {
      std::ostringstream text;
      write_config(text, o.snapshot("ablate"));
      write_text(text, t);
      write_text_file(report_out, text.str());
      write_text_file(report_out + ".csv", csv.str());
    }
    return kOk;
  }
};

}  // namespace

int run(const std::vector<std::string>& raw_args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Recurrent online action detection and anticipation", "idu"};
  app.require_subcommand(1);
  app.option_defaults()->multi_option_policy(CLI::MultiOptionPolicy::TakeLast);

  struct Command {
    CLI::App* app;
    std::unique_ptr<Options> options;
    std::function<int(const Options&, std::ostream&)> run;
  };
  std::vector<Command> commands;
  GenData gen;
  Train train;
  Eval eval;
  GradCheck grad;
  Params params;
  Ablate ablate;
  auto add_command = [&](const char* name, const char* help, auto& cmd) {
    CLI::App* sub = app.add_subcommand(name, help);
    sub->add_option("--config", "key=value settings file; flags override it");
    auto opts = std::make_unique<Options>(*sub);
    cmd.add(*opts);
    commands.push_back({sub, std::move(opts), [&cmd](const Options& o, std::ostream& s) { return cmd.run(o, s); }});
  };
  add_command("gen-data", "write a synthetic IDUF1 feature stream", gen);
  add_command("train", "train a detector or anticipator", train);
  add_command("eval", "evaluate a checkpoint", eval);
  add_command("gradcheck", "finite-difference check of a network's loss gradient", grad);
  add_command("params", "parameter and FLOP accounting", params);
  add_command("ablate", "train and compare a suite of variants", ablate);

  try {
    std::vector<std::string> args = expand_config(raw_args);
    std::reverse(args.begin(), args.end());
    app.parse(args);
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return kOk;
  } catch (const CLI::ParseError& e) {
    // Subcommand help and version requests are ParseErrors with exit code 0.
    if (e.get_exit_code() == 0) {
      for (const auto& c : commands) {
        if (c.app->parsed()) out << c.app->help();
      }
      if (std::none_of(commands.begin(), commands.end(), [](const Command& c) { return c.app->parsed(); })) {
        out << app.help();
      }
      return kOk;
    }
    err << "error: " << e.what() << '\n';
    return kUsage;
  } catch (const UsageError& e) {
    err << "error: " << e.what() << '\n';
    return kUsage;
  }

  try {
    for (const auto& c : commands) {
      if (c.app->parsed()) return c.run(*c.options, out);
    }
  } catch (const UsageError& e) {
    err << "error: " << e.what() << '\n';
    return kUsage;
  } catch (const NumericError& e) {
    err << "numerical failure: " << e.what() << '\n';
    return kNumeric;
  } catch (const FormatError& e) {
    err << "data error: " << e.what() << '\n';
    return kData;
  } catch (const ShapeError& e) {
    err << "data error: " << e.what() << '\n';
    return kData;
  }
  return kUsage;
}

}  // namespace idu::cli
