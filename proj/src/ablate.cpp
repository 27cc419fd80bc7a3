// SPDX-License-Identifier: Apache-2.0
#include "idu/ablate.hpp"

#include <cmath>
#include <cstdio>
#include <ostream>

#include "idu/error.hpp"
#include "idu/eval.hpp"

namespace idu {

namespace {

struct Split {
  FeatureStream train;
  FeatureStream test;
};

Split split_stream(const FeatureStream& data, double test_fraction) {
  if (!(test_fraction > 0.0 && test_fraction < 1.0)) throw UsageError("test fraction must lie in (0, 1)");
  const auto cut = static_cast<std::size_t>(std::llround(static_cast<double>(data.length()) * (1.0 - test_fraction)));
  if (cut == 0 || cut == data.length()) throw FormatError("stream too short to split into train and test parts");
  return {slice_stream(data, 0, cut), slice_stream(data, cut, data.length())};
}

AblationRow detector_row(const std::string& name, CellKind cell, std::uint64_t seed, const AblationSettings& s,
                         const Split& split) {
  TrainConfig tc = s.detector_train;
  tc.seed = seed;
  DetectorConfig dc = s.detector;
  dc.cell = cell;
  const DetectorRun run = train_idn(tc, dc, split.train);
  const MapReport m = map_mcap(score_stream(run.model, split.test, tc.past));
  AblationRow row{name, seed, m.map, m.mcap, {}, {}, {}};
  if (s.gate_windows != 0 && has_update_gate(cell)) {
    const GateReport g = gate_relevance_report(run.model, make_windows(split.test, tc.past, 0), s.gate_windows);
    if (g.mean_relevant && g.mean_irrelevant) row.gate_separation = g.separation();
  }
  return row;
}

struct Tracks {
  std::vector<int> train;
  std::vector<int> test;
};

AblationRow anticipator_row(const std::string& name, CellKind cell, IntegrationMode mode, const Tracks& tracks,
                            std::uint64_t seed, const AblationSettings& s, const Split& split) {
  TrainConfig tc = s.anticipator_train;
  tc.seed = seed;
  AnticipatorConfig ac = s.anticipator;
  ac.cell = cell;
  ac.integration = mode;
  const AnticipatorRun run = train_iin(tc, ac, split.train, tracks.train);
  const auto curve = anticipation_eval(anticipate_stream(run.model, split.test, tracks.test, tc.past));
  AblationRow row{name, seed, 0.0, 0.0, {}, {}, {}};
  for (const auto& p : curve) {
    row.map += p.metrics.map;
    row.mcap += p.metrics.mcap;
  }
  row.map /= static_cast<double>(curve.size());
  row.mcap /= static_cast<double>(curve.size());
  row.map_last = curve.back().metrics.map;
  row.mcap_last = curve.back().metrics.mcap;
  return row;
}

Tracks make_tracks(LabelSource source, std::uint64_t seed, const AblationSettings& s, const Split& split) {
  if (source == LabelSource::Oracle) return {split.train.labels, split.test.labels};
  TrainConfig tc = s.detector_train;
  tc.seed = seed;
  DetectorConfig dc = s.detector;
  dc.cell = CellKind::Idu;
  const DetectorRun det = train_idn(tc, dc, split.train);
  const std::size_t past = s.anticipator_train.past;
  return {label_track(split.train, source, &det.model, past), label_track(split.test, source, &det.model, past)};
}

std::string fmt(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.4f", v);
  return buf;
}

std::string fmt(const std::optional<double>& v) { return v ? fmt(*v) : "-"; }

}  // namespace

std::string_view to_string(Suite suite) noexcept {
  switch (suite) {
    case Suite::Oad: return "oad";
    case Suite::Aa: return "aa";
    case Suite::Integration: return "integration";
  }
  return "?";
}

Suite parse_suite(std::string_view name) {
  for (Suite s : {Suite::Oad, Suite::Aa, Suite::Integration}) {
    if (to_string(s) == name) return s;
  }
  throw UsageError("unknown ablation suite '" + std::string(name) + "'");
}

std::vector<std::string> suite_variants(Suite suite) {
  switch (suite) {
    case Suite::Oad: return {"rnn", "lstm", "gru", "ci", "idn"};
    case Suite::Aa: return {"rnn", "lstm", "idu", "gru", "iiu", "iiu-oracle"};
    case Suite::Integration: return {"full", "no-hcomb", "no-hcomb-no-weighting"};
  }
  return {};
}

double AblationTable::mean(std::string_view variant, double AblationRow::*column) const {
  double sum = 0.0;
  std::size_t n = 0;
  for (const auto& r : rows) {
    if (r.variant == variant) {
      sum += r.*column;
      ++n;
    }
  }
  if (n == 0) throw UsageError("no rows for variant '" + std::string(variant) + "'");
  return sum / static_cast<double>(n);
}

AblationTable run_ablation(Suite suite, const AblationSettings& s, const FeatureStream& data,
                           const ProgressFn& progress) {
  if (s.seeds == 0) throw UsageError("need at least one seed");
  const Split split = split_stream(data, s.test_fraction);
  AblationTable table;
  table.suite = suite;
  table.variants = suite_variants(suite);
  auto add = [&](AblationRow row) {
    if (progress) progress(row);
    table.rows.push_back(std::move(row));
  };

  for (std::uint64_t seed = s.first_seed; seed < s.first_seed + s.seeds; ++seed) {
    if (suite == Suite::Oad) {
      for (const auto& v : table.variants) {
        add(detector_row(v, v == "idn" ? CellKind::Idu : parse_cell_kind(v), seed, s, split));
      }
      continue;
    }
    const Tracks tracks = make_tracks(s.labels, seed, s, split);
    if (suite == Suite::Aa) {
      for (const auto& v : table.variants) {
        if (v == "iiu-oracle") {
          const Tracks oracle = make_tracks(LabelSource::Oracle, seed, s, split);
          add(anticipator_row(v, CellKind::Iiu, IntegrationMode::Full, oracle, seed, s, split));
        } else {
          add(anticipator_row(v, parse_cell_kind(v), IntegrationMode::Full, tracks, seed, s, split));
        }
      }
    } else {
      for (const auto& v : table.variants) {
        add(anticipator_row(v, CellKind::Iiu, parse_integration_mode(v), tracks, seed, s, split));
      }
    }
  }
  return table;
}

void write_text(std::ostream& out, const AblationTable& t) {
  out << "suite=" << to_string(t.suite) << '\n';
  for (const auto& v : t.variants) {
    out << "mean." << v << ".map=" << format_double(t.mean(v, &AblationRow::map)) << '\n'
        << "mean." << v << ".mcap=" << format_double(t.mean(v, &AblationRow::mcap)) << '\n';
  }
}

void write_csv(std::ostream& out, const AblationTable& t) {
  out << "variant,seed,map,mcap,map_last,mcap_last,gate_separation\n";
  for (const auto& r : t.rows) {
    out << r.variant << ',' << r.seed << ',' << fmt(r.map) << ',' << fmt(r.mcap) << ',' << fmt(r.map_last) << ','
        << fmt(r.mcap_last) << ',' << fmt(r.gate_separation) << '\n';
  }
  for (const auto& v : t.variants) {
    out << v << ",mean," << fmt(t.mean(v, &AblationRow::map)) << ',' << fmt(t.mean(v, &AblationRow::mcap))
        << ",,,\n";
  }
}

}  // namespace idu
