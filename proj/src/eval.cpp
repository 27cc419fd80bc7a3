// SPDX-License-Identifier: Apache-2.0
#include "idu/eval.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <ostream>
#include <string>

namespace idu {

namespace {

constexpr std::size_t kEvalBatch = 256;

std::vector<std::size_t> ranking(std::span<const double> scores) {
  std::vector<std::size_t> order(scores.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return scores[a] > scores[b]; });
  return order;
}

void check_inputs(std::span<const double> scores, std::span<const std::uint8_t> positives) {
  if (scores.size() != positives.size()) throw ShapeError("score/label count mismatch");
  for (double s : scores) {
    if (!std::isfinite(s)) throw NumericError("non-finite score");
  }
}

std::size_t count_positives(std::span<const std::uint8_t> positives) {
  return static_cast<std::size_t>(std::count_if(positives.begin(), positives.end(), [](auto p) { return p != 0; }));
}

// Evenly spread subset of [0, n).
std::vector<std::size_t> spread(std::size_t n, std::size_t limit) {
  const std::size_t k = limit == 0 ? n : std::min(n, limit);
  std::vector<std::size_t> out(k);
  for (std::size_t i = 0; i < k; ++i) out[i] = i * n / k;
  return out;
}

std::string opt_text(const std::optional<double>& v) { return v ? format_double(*v) : "absent"; }

template <typename Fn>
void for_batches(std::size_t n, Fn&& fn) {
  std::vector<std::size_t> idx;
  for (std::size_t begin = 0; begin < n; begin += kEvalBatch) {
    idx.resize(std::min(n, begin + kEvalBatch) - begin);
    std::iota(idx.begin(), idx.end(), begin);
    fn(std::span<const std::size_t>(idx));
  }
}

}  // namespace

double average_precision(std::span<const double> scores, std::span<const std::uint8_t> positives) {
  check_inputs(scores, positives);
  const std::size_t n_pos = count_positives(positives);
  if (n_pos == 0) throw UndefinedMetric("average precision needs at least one positive");
  double sum = 0.0;
  std::size_t tp = 0;
  std::size_t rank = 0;
  for (std::size_t i : ranking(scores)) {
    ++rank;
    if (positives[i]) {
      ++tp;
      sum += static_cast<double>(tp) / static_cast<double>(rank);
    }
  }
  return sum / static_cast<double>(n_pos);
}

double calibrated_ap(std::span<const double> scores, std::span<const std::uint8_t> positives) {
  check_inputs(scores, positives);
  const std::size_t n_pos = count_positives(positives);
  const std::size_t n_neg = positives.size() - n_pos;
  if (n_pos == 0) throw UndefinedMetric("calibrated AP needs at least one positive");
  if (n_neg == 0) throw UndefinedMetric("calibrated AP needs at least one negative");
  const double w = static_cast<double>(n_neg) / static_cast<double>(n_pos);
  double sum = 0.0;
  std::size_t tp = 0;
  std::size_t fp = 0;
  for (std::size_t i : ranking(scores)) {
    if (positives[i]) {
      ++tp;
      const double wtp = w * static_cast<double>(tp);
      sum += wtp / (wtp + static_cast<double>(fp));
    } else {
      ++fp;
    }
  }
  return sum / static_cast<double>(n_pos);
}

void ScoredFrames::validate() const {
  if (scores.rows() != labels.size()) throw ShapeError("score rows do not match label count");
  if (scores.cols() < 2) throw ShapeError("scores need background plus at least one action class");
  for (int y : labels) {
    if (y < 0 || static_cast<std::size_t>(y) >= scores.cols()) throw FormatError("label out of range");
  }
  require_finite(scores, "scores");
}

MapReport map_mcap(const ScoredFrames& frames) {
  frames.validate();
  const std::size_t n = frames.labels.size();
  MapReport report;
  std::vector<double> column(n);
  std::vector<std::uint8_t> pos(n);
  for (std::size_t k = 1; k < frames.scores.cols(); ++k) {
    for (std::size_t i = 0; i < n; ++i) {
      column[i] = frames.scores(i, k);
      pos[i] = frames.labels[i] == static_cast<int>(k);
    }
    const std::size_t n_pos = count_positives(pos);
    if (n_pos == 0 || n_pos == n) {
      report.skipped.push_back(static_cast<int>(k));
      continue;
    }
    ClassMetric m;
    m.cls = static_cast<int>(k);
    m.positives = n_pos;
    m.w = static_cast<double>(n - n_pos) / static_cast<double>(n_pos);
    m.ap = average_precision(column, pos);
    m.cap = calibrated_ap(column, pos);
    report.classes.push_back(m);
  }
  if (report.classes.empty()) throw UndefinedMetric("no action class has both positives and negatives");
  for (const auto& c : report.classes) {
    report.map += c.ap;
    report.mcap += c.cap;
  }
  report.map /= static_cast<double>(report.classes.size());
  report.mcap /= static_cast<double>(report.classes.size());
  return report;
}

std::vector<int> progress_buckets(std::span<const int> labels) {
  std::vector<int> out(labels.size(), -1);
  std::size_t i = 0;
  while (i < labels.size()) {
    std::size_t j = i + 1;
    while (j < labels.size() && labels[j] == labels[i]) ++j;
    if (labels[i] != 0) {
      const std::size_t len = j - i;
      for (std::size_t p = 0; p < len; ++p) out[i + p] = static_cast<int>(kPortionBuckets * p / len);
    }
    i = j;
  }
  return out;
}

PortionReport portion_map(const ScoredFrames& frames, std::span<const int> buckets) {
  frames.validate();
  if (buckets.size() != frames.labels.size()) throw ShapeError("bucket count does not match frames");
  const std::size_t n = frames.labels.size();
  PortionReport report;
  std::vector<double> column;
  std::vector<std::uint8_t> pos;
  for (std::size_t b = 0; b < kPortionBuckets; ++b) {
    double sum_ap = 0.0;
    double sum_cap = 0.0;
    std::size_t classes = 0;
    for (std::size_t k = 1; k < frames.scores.cols(); ++k) {
      column.clear();
      pos.clear();
      std::size_t n_pos = 0;
      for (std::size_t i = 0; i < n; ++i) {
        const bool is_k = frames.labels[i] == static_cast<int>(k);
        if (is_k && buckets[i] != static_cast<int>(b)) continue;
        column.push_back(frames.scores(i, k));
        pos.push_back(is_k);
        n_pos += is_k;
      }
      if (n_pos == 0 || n_pos == column.size()) continue;
      sum_ap += average_precision(column, pos);
      sum_cap += calibrated_ap(column, pos);
      ++classes;
    }
    if (classes != 0) {
      report.map[b] = sum_ap / static_cast<double>(classes);
      report.mcap[b] = sum_cap / static_cast<double>(classes);
    }
  }
  return report;
}

std::size_t horizon_index(double seconds, double step_seconds, std::size_t horizon) {
  if (!(seconds > 0.0) || !(step_seconds > 0.0)) throw UsageError("lead time must be positive");
  const double steps = seconds / step_seconds;
  const double rounded = std::round(steps);
  if (std::abs(steps - rounded) > 1e-9) throw UsageError("lead time is not a whole number of steps");
  const auto row = static_cast<std::size_t>(rounded);
  if (row > horizon) {
    throw UsageError("lead time " + format_double(seconds) + " s is beyond the " + std::to_string(horizon) +
                     "-step horizon");
  }
  return row;
}

std::vector<AnticipationPoint> anticipation_eval(const AnticipationScores& scores, std::span<const std::size_t> rows) {
  if (scores.truths.size() != scores.by_horizon.size()) throw ShapeError("anticipation truths do not match horizon");
  std::vector<std::size_t> wanted(rows.begin(), rows.end());
  if (wanted.empty()) {
    for (std::size_t j = 1; j <= scores.horizon(); ++j) wanted.push_back(j);
  }
  std::vector<AnticipationPoint> curve;
  for (std::size_t j : wanted) {
    if (j == 0 || j > scores.horizon()) {
      throw UsageError("horizon row " + std::to_string(j) + " outside 1.." + std::to_string(scores.horizon()));
    }
    AnticipationPoint p;
    p.step = j;
    p.seconds = static_cast<double>(j) * scores.step_seconds;
    p.metrics = map_mcap(ScoredFrames{scores.by_horizon[j - 1], scores.truths[j - 1]});
    curve.push_back(std::move(p));
  }
  return curve;
}

double GateReport::separation() const {
  if (!mean_relevant) throw UndefinedMetric("gate report: no relevant past chunks");
  if (!mean_irrelevant) throw UndefinedMetric("gate report: no irrelevant past chunks");
  return *mean_relevant - *mean_irrelevant;
}

GateReport gate_relevance_report(const DetectorModel& model, const WindowSet& windows, std::size_t max_windows) {
  if (!has_update_gate(model.config.cell)) {
    throw UsageError(std::string(to_string(model.config.cell)) + " has no update gate");
  }
  const std::size_t past = windows.past;
  std::vector<double> sum_rel(past, 0.0), sum_irr(past, 0.0);
  std::vector<std::size_t> n_rel(past, 0), n_irr(past, 0);
  const std::vector<std::size_t> chosen = spread(windows.size(), max_windows);

  for (std::size_t begin = 0; begin < chosen.size(); begin += kEvalBatch) {
    const std::span<const std::size_t> idx(chosen.data() + begin, std::min(chosen.size() - begin, kEvalBatch));
    const SequenceBatch batch = assemble(windows, idx);
    Tape tape;
    const ModelBinding w = bind(tape, model);
    const DetectorForward fwd = idn_forward(model, w, batch);
    for (std::size_t s = 0; s < past; ++s) {
      const Matrix& z = fwd.steps[s].z.value();
      for (std::size_t b = 0; b < idx.size(); ++b) {
        if (windows.positions[idx[b]] + s < past) continue;  // left padding
        const auto row = z.row(b);
        const double mean = std::accumulate(row.begin(), row.end(), 0.0) / static_cast<double>(row.size());
        if (batch.relevance[s][b]) {
          sum_rel[s] += mean;
          ++n_rel[s];
        } else {
          sum_irr[s] += mean;
          ++n_irr[s];
        }
      }
    }
  }

  GateReport r;
  double total_rel = 0.0, total_irr = 0.0;
  for (std::size_t s = 0; s < past; ++s) {
    GateStep g;
    g.offset = static_cast<int>(s) - static_cast<int>(past);
    g.relevant = n_rel[s];
    g.irrelevant = n_irr[s];
    if (n_rel[s]) g.mean_relevant = sum_rel[s] / static_cast<double>(n_rel[s]);
    if (n_irr[s]) g.mean_irrelevant = sum_irr[s] / static_cast<double>(n_irr[s]);
    r.relevant += n_rel[s];
    r.irrelevant += n_irr[s];
    total_rel += sum_rel[s];
    total_irr += sum_irr[s];
    r.steps.push_back(g);
  }
  if (r.relevant) r.mean_relevant = total_rel / static_cast<double>(r.relevant);
  if (r.irrelevant) r.mean_irrelevant = total_irr / static_cast<double>(r.irrelevant);
  return r;
}

ScoredFrames score_stream(const DetectorModel& model, const FeatureStream& stream, std::size_t past) {
  if (stream.width() != model.config.feature_width || stream.num_classes != model.config.num_classes) {
    throw FormatError("checkpoint and data disagree on feature width or class count");
  }
  const WindowSet windows = make_windows(stream, past, 0);
  ScoredFrames out{Matrix(stream.length(), model.config.num_classes), stream.labels};
  for_batches(windows.size(), [&](std::span<const std::size_t> idx) {
    const Matrix p = predict_current(model, assemble(windows, idx));
    for (std::size_t i = 0; i < idx.size(); ++i) {
      std::copy(p.row(i).begin(), p.row(i).end(), out.scores.row(windows.positions[idx[i]]).begin());
    }
  });
  return out;
}

AnticipationScores anticipate_stream(const AnticipatorModel& model, const FeatureStream& stream,
                                     const std::vector<int>& label_track, std::size_t past) {
  const AnticipatorConfig& c = model.config;
  if (stream.width() != c.feature_width || stream.num_classes != c.num_classes) {
    throw FormatError("checkpoint and data disagree on feature width or class count");
  }
  if (label_track.size() != stream.length()) throw ShapeError("label track length does not match the data");
  const WindowSet windows = make_windows(stream, past, c.horizon);
  AnticipationScores out;
  out.step_seconds = stream.chunk_seconds;
  out.by_horizon.assign(c.horizon, Matrix(windows.size(), c.num_classes));
  out.truths.assign(c.horizon, std::vector<int>(windows.size()));
  for_batches(windows.size(), [&](std::span<const std::size_t> idx) {
    const SequenceBatch batch = assemble(windows, idx, &label_track);
    const std::vector<Matrix> q = predict_future(model, batch);
    for (std::size_t j = 0; j < c.horizon; ++j) {
      for (std::size_t i = 0; i < idx.size(); ++i) {
        std::copy(q[j].row(i).begin(), q[j].row(i).end(), out.by_horizon[j].row(idx[i]).begin());
        out.truths[j][idx[i]] = batch.future[j][i];
      }
    }
  });
  return out;
}

void write_text(std::ostream& out, const MapReport& r, std::string_view prefix) {
  const std::string p(prefix);
  out << p << "map=" << format_double(r.map) << '\n' << p << "mcap=" << format_double(r.mcap) << '\n';
  for (const auto& c : r.classes) {
    out << p << "class." << c.cls << ".ap=" << format_double(c.ap) << '\n'
        << p << "class." << c.cls << ".cap=" << format_double(c.cap) << '\n'
        << p << "class." << c.cls << ".w=" << format_double(c.w) << '\n';
  }
  for (int k : r.skipped) out << p << "class." << k << ".skipped=no positives or no negatives\n";
}

void write_csv(std::ostream& out, const MapReport& r) {
  out << "class,positives,w,ap,cap\n";
  for (const auto& c : r.classes) {
    out << c.cls << ',' << c.positives << ',' << format_double(c.w) << ',' << format_double(c.ap) << ','
        << format_double(c.cap) << '\n';
  }
  out << "mean,,," << format_double(r.map) << ',' << format_double(r.mcap) << '\n';
}

void write_text(std::ostream& out, const PortionReport& r) {
  for (std::size_t b = 0; b < kPortionBuckets; ++b) {
    out << "portion." << b * 10 << "-" << (b + 1) * 10 << ".mcap=" << opt_text(r.mcap[b]) << '\n';
  }
}

void write_csv(std::ostream& out, const PortionReport& r) {
  out << "portion,map,mcap\n";
  for (std::size_t b = 0; b < kPortionBuckets; ++b) {
    out << b * 10 << "%-" << (b + 1) * 10 << "%," << opt_text(r.map[b]) << ',' << opt_text(r.mcap[b]) << '\n';
  }
}

void write_text(std::ostream& out, std::span<const AnticipationPoint> curve) {
  for (const auto& p : curve) {
    out << "anticipation." << format_double(p.seconds) << "s.map=" << format_double(p.metrics.map) << '\n'
        << "anticipation." << format_double(p.seconds) << "s.mcap=" << format_double(p.metrics.mcap) << '\n';
  }
}

void write_csv(std::ostream& out, std::span<const AnticipationPoint> curve) {
  out << "seconds,map,mcap\n";
  for (const auto& p : curve) {
    out << format_double(p.seconds) << ',' << format_double(p.metrics.map) << ',' << format_double(p.metrics.mcap)
        << '\n';
  }
}

void write_text(std::ostream& out, const GateReport& r) {
  out << "gate.relevant_chunks=" << r.relevant << '\n'
      << "gate.irrelevant_chunks=" << r.irrelevant << '\n'
      << "gate.mean_relevant=" << opt_text(r.mean_relevant) << '\n'
      << "gate.mean_irrelevant=" << opt_text(r.mean_irrelevant) << '\n';
  if (r.mean_relevant && r.mean_irrelevant) {
    out << "gate.separation=" << format_double(r.separation()) << '\n';
  } else {
    out << "gate.separation=absent\n";
  }
}

void write_csv(std::ostream& out, const GateReport& r) {
  out << "t,relevant,irrelevant,mean_z_relevant,mean_z_irrelevant\n";
  for (const auto& s : r.steps) {
    out << s.offset << ',' << s.relevant << ',' << s.irrelevant << ',' << opt_text(s.mean_relevant) << ','
        << opt_text(s.mean_irrelevant) << '\n';
  }
}

void write_config(std::ostream& out, const ConfigRecord& config) {
  for (const auto& [k, v] : config) out << "config." << k << '=' << v << '\n';
}

}  // namespace idu
