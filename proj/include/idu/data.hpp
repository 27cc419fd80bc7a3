// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

#include "idu/matrix.hpp"

namespace idu {

/// Per-chunk features of one video stream with class labels (0 = background).
/// Values are float-representable so the on-disk f32 payload round-trips.
struct FeatureStream {
  Matrix features;  // length x width
  std::vector<int> labels;
  std::size_t num_classes = 0;  // K + 1
  double chunk_seconds = 6.0 / 24.0;

  std::size_t length() const noexcept { return labels.size(); }
  std::size_t width() const noexcept { return features.cols(); }

  friend bool operator==(const FeatureStream&, const FeatureStream&) = default;
};

struct SynthConfig {
  std::size_t action_classes = 20;  // K
  std::size_t feature_width = 64;   // d_x, at least K + 1
  double separation = 4.0;          // pairwise distance between class means
  double noise = 1.0;               // per-coordinate Gaussian sigma
  double action_length_mean = 16.0; // chunks
  double length_spread = 0.5;       // lengths uniform in mean * [1 - s, 1 + s]
  double background_fraction = 0.71;
  std::size_t length = 10000;       // chunks
  std::uint64_t seed = 0;
};

void validate(const SynthConfig& cfg);

/// Alternating background/action segments; each action segment has a
/// uniformly drawn class. Class k's mean sits at (separation / sqrt 2) e_k,
/// so all means are exactly `separation` apart. Deterministic in the seed.
FeatureStream gen_synthetic(const SynthConfig& cfg);

// "IDUF1" container: magic "IDUF1\0", u32 chunk count, u32 width, u16 class
// count, then per chunk a u16 label and `width` f32 features. Little-endian.
std::vector<std::uint8_t> encode_features(const FeatureStream& stream);
FeatureStream decode_features(std::span<const std::uint8_t> bytes);
void write_features(const FeatureStream& stream, const std::filesystem::path& path);
FeatureStream read_features(const std::filesystem::path& path);

/// Splits a stream at a chunk index (train/test partitions).
FeatureStream slice_stream(const FeatureStream& stream, std::size_t begin, std::size_t end);

/// One detection window, oldest chunk first: rows t = -T .. 0.
struct ChunkSequence {
  Matrix features;              // (T + 1) x width
  std::vector<int> labels;      // T + 1
  std::vector<int> relevance;   // R_t = 1 iff labels[t] == labels.back()
};

/// Windows over a stream, stored as end positions. Positions with fewer than
/// T predecessors are left-padded with zero features labelled background;
/// anticipation targets past the stream end are background.
struct WindowSet {
  const FeatureStream* stream = nullptr;
  std::size_t past = 15;     // T
  std::size_t horizon = 8;   // T_a
  std::vector<std::size_t> positions;

  std::size_t size() const noexcept { return positions.size(); }
  std::size_t steps() const noexcept { return past + 1; }
  int label_at(std::size_t window, std::size_t step) const;
  int current_label(std::size_t window) const;
  std::vector<int> future_labels(std::size_t window) const;
  ChunkSequence sequence(std::size_t window) const;
};

WindowSet make_windows(const FeatureStream& stream, std::size_t past, std::size_t horizon,
                       std::size_t stride = 1);

/// A batch laid out step-major for unrolling.
struct SequenceBatch {
  std::vector<Matrix> steps;                 // T + 1 entries of B x width
  std::vector<std::vector<int>> labels;      // [t][b]
  std::vector<std::vector<int>> relevance;   // [t][b]
  std::vector<std::vector<int>> label_input; // [t][b], label stream fed to an anticipator
  std::vector<std::vector<int>> future;      // [j][b], j = 1 .. T_a

  std::size_t batch_size() const noexcept { return labels.empty() ? 0 : labels.front().size(); }
  std::size_t num_steps() const noexcept { return steps.size(); }
};

/// Gathers windows into a batch. `label_track`, when given, supplies the
/// per-chunk label inputs (pseudo or ground-truth labels) aligned with the
/// stream; otherwise the ground truth is used.
SequenceBatch assemble(const WindowSet& windows, std::span<const std::size_t> indices,
                       const std::vector<int>* label_track = nullptr);
SequenceBatch assemble(std::span<const ChunkSequence> sequences);

/// Class-balanced sampling by the label of the current chunk: every batch
/// has floor(B/2) background windows and ceil(B/2) action windows, drawn
/// without replacement within an epoch and reshuffled per epoch.
class BalancedSampler {
 public:
  BalancedSampler(const WindowSet& windows, std::size_t batch_size, std::uint64_t seed);

  std::size_t batches_per_epoch() const noexcept { return batches_; }
  std::vector<std::vector<std::size_t>> epoch(std::size_t index) const;

 private:
  std::vector<std::size_t> background_;
  std::vector<std::size_t> action_;
  std::size_t batch_size_;
  std::size_t batches_ = 0;
  std::uint64_t seed_;
};

}  // namespace idu
