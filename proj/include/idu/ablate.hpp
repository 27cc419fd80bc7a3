// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <iosfwd>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "idu/data.hpp"
#include "idu/networks.hpp"
#include "idu/train.hpp"

namespace idu {

// Ablation grids. Every variant of a suite is trained per seed on the head
// of a stream and evaluated on its tail.
//   oad:         rnn, lstm, gru, ci, idn (detectors)
//   aa:          rnn, lstm, idu, gru, iiu with pseudo labels, iiu-oracle
//   integration: iiu with each integration-module ablation

enum class Suite : std::uint8_t { Oad, Aa, Integration };

std::string_view to_string(Suite suite) noexcept;
Suite parse_suite(std::string_view name);

struct AblationSettings {
  TrainConfig detector_train = idn_defaults();
  TrainConfig anticipator_train = iin_defaults();
  DetectorConfig detector;        // cell is set per variant
  AnticipatorConfig anticipator;  // cell and integration are set per variant
  LabelSource labels = LabelSource::Pseudo;
  double test_fraction = 0.2;
  std::size_t seeds = 3;
  std::uint64_t first_seed = 0;
  std::size_t gate_windows = 1000;  // 0 disables the gate report
};

struct AblationRow {
  std::string variant;
  std::uint64_t seed = 0;
  double map = 0.0;   // detection: frame mAP; anticipation: mean over horizons
  double mcap = 0.0;
  std::optional<double> map_last;   // anticipation at the longest horizon
  std::optional<double> mcap_last;
  std::optional<double> gate_separation;
};

struct AblationTable {
  Suite suite = Suite::Oad;
  std::vector<std::string> variants;
  std::vector<AblationRow> rows;

  /// Mean of a column over seeds for one variant.
  double mean(std::string_view variant, double AblationRow::*column) const;
};

std::vector<std::string> suite_variants(Suite suite);

using ProgressFn = std::function<void(const AblationRow&)>;

AblationTable run_ablation(Suite suite, const AblationSettings& settings, const FeatureStream& data,
                           const ProgressFn& progress = {});

void write_text(std::ostream& out, const AblationTable& table);
void write_csv(std::ostream& out, const AblationTable& table);

}  // namespace idu
