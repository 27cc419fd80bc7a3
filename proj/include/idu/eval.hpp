// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <iosfwd>
#include <optional>
#include <span>
#include <vector>

#include "idu/checkpoint.hpp"
#include "idu/data.hpp"
#include "idu/error.hpp"
#include "idu/matrix.hpp"
#include "idu/networks.hpp"

namespace idu {

/// A metric with no defined value for its input (no positives, or no
/// negatives for the calibrated variant).
class UndefinedMetric : public FormatError {
 public:
  using FormatError::FormatError;
};

// Ranking is by descending score; equal scores keep their original order
// (lower index ranks first).

/// Mean of precision@rank over the ranks of the positives.
double average_precision(std::span<const double> scores, std::span<const std::uint8_t> positives);
/// Like AP with precision reweighted by w = negatives / positives:
/// cPrec = w TP / (w TP + FP).
double calibrated_ap(std::span<const double> scores, std::span<const std::uint8_t> positives);

/// One score row per chunk (the scoring unit) and its ground-truth label.
struct ScoredFrames {
  Matrix scores;  // N x (K + 1)
  std::vector<int> labels;

  void validate() const;
};

struct ClassMetric {
  int cls = 0;
  std::size_t positives = 0;
  double w = 0.0;
  double ap = 0.0;
  double cap = 0.0;
};

struct MapReport {
  std::vector<ClassMetric> classes;  // action classes that have positives
  std::vector<int> skipped;          // action classes without positives
  double map = 0.0;
  double mcap = 0.0;
};

/// One-vs-rest AP/cAP for action classes 1..K (background excluded) and
/// their unweighted means over classes with at least one positive.
MapReport map_mcap(const ScoredFrames& frames);

constexpr std::size_t kPortionBuckets = 10;

/// Progress bucket of every chunk within its action instance (a maximal run
/// of one action label): chunk i of an L-chunk instance lands in 10 i / L.
/// Background chunks get -1.
std::vector<int> progress_buckets(std::span<const int> labels);

struct PortionReport {
  std::array<std::optional<double>, kPortionBuckets> mcap;  // nullopt: no positives in the bucket
  std::array<std::optional<double>, kPortionBuckets> map;
};

/// mcAP per progress bucket. A bucket keeps the positives whose progress
/// falls in it; every class's negatives are shared by all buckets.
PortionReport portion_map(const ScoredFrames& frames, std::span<const int> buckets);

/// Anticipation scores arranged by horizon: by_horizon[j - 1] holds the
/// predicted distributions j steps ahead (N x (K + 1)) and truths[j - 1]
/// the labels there.
struct AnticipationScores {
  std::vector<Matrix> by_horizon;
  std::vector<std::vector<int>> truths;
  double step_seconds = 0.25;

  std::size_t horizon() const noexcept { return by_horizon.size(); }
};

/// Horizon row for a lead time in seconds (2.0 s at 0.25 s per step -> 8).
std::size_t horizon_index(double seconds, double step_seconds, std::size_t horizon);

struct AnticipationPoint {
  std::size_t step = 0;
  double seconds = 0.0;
  MapReport metrics;
};

/// mAP/mcAP at each requested horizon row (all rows when `rows` is empty).
std::vector<AnticipationPoint> anticipation_eval(const AnticipationScores& scores,
                                                 std::span<const std::size_t> rows = {});

struct GateStep {
  int offset = 0;  // t, from -T to -1
  std::size_t relevant = 0;
  std::size_t irrelevant = 0;
  std::optional<double> mean_relevant;
  std::optional<double> mean_irrelevant;
};

/// Update-gate activity on past chunks grouped by relevance to the current
/// chunk. The gate value of a chunk is z_t averaged over hidden units.
/// Left padding and the current chunk itself are excluded.
struct GateReport {
  std::vector<GateStep> steps;
  std::size_t relevant = 0;
  std::size_t irrelevant = 0;
  std::optional<double> mean_relevant;
  std::optional<double> mean_irrelevant;

  /// mean_relevant - mean_irrelevant; UndefinedMetric if a group is empty.
  double separation() const;
};

GateReport gate_relevance_report(const DetectorModel& model, const WindowSet& windows,
                                 std::size_t max_windows = 0);

/// p_0 of the window ending at every chunk of the stream.
ScoredFrames score_stream(const DetectorModel& model, const FeatureStream& stream, std::size_t past);
/// Eval-mode anticipation for every chunk of the stream.
AnticipationScores anticipate_stream(const AnticipatorModel& model, const FeatureStream& stream,
                                     const std::vector<int>& label_track, std::size_t past);

// Reports: "key=value" text records and comma-separated tables.
void write_text(std::ostream& out, const MapReport& r, std::string_view prefix);
void write_csv(std::ostream& out, const MapReport& r);
void write_text(std::ostream& out, const PortionReport& r);
void write_csv(std::ostream& out, const PortionReport& r);
void write_text(std::ostream& out, std::span<const AnticipationPoint> curve);
void write_csv(std::ostream& out, std::span<const AnticipationPoint> curve);
void write_text(std::ostream& out, const GateReport& r);
void write_csv(std::ostream& out, const GateReport& r);
void write_config(std::ostream& out, const ConfigRecord& config);

}  // namespace idu
