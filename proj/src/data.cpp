// SPDX-License-Identifier: Apache-2.0
#include "idu/data.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <iterator>
#include <string>

#include "idu/error.hpp"
#include "idu/rng.hpp"
#include "bytes.hpp"

namespace idu {

using bytes::put_u16;
using bytes::put_u32;

namespace {

constexpr std::uint8_t kMagic[6] = {'I', 'D', 'U', 'F', '1', '\0'};

}  // namespace

void validate(const SynthConfig& cfg) {
  if (cfg.action_classes == 0) throw UsageError("synthetic data needs at least one action class");
  if (cfg.feature_width < cfg.action_classes + 1) {
    throw UsageError("feature width must be at least K + 1 for separated class means");
  }
  if (!(cfg.separation > 0.0)) throw UsageError("class separation must be positive");
  if (!(cfg.noise >= 0.0)) throw UsageError("noise scale must be nonnegative");
  if (!(cfg.background_fraction >= 0.0 && cfg.background_fraction < 1.0)) {
    throw UsageError("background fraction must lie in [0, 1)");
  }
  if (!(cfg.action_length_mean >= 1.0)) throw UsageError("mean action length must be >= 1 chunk");
  if (!(cfg.length_spread >= 0.0 && cfg.length_spread < 1.0)) {
    throw UsageError("length spread must lie in [0, 1)");
  }
  if (cfg.action_classes + 1 > 0xFFFF) throw UsageError("too many classes for the file format");
}

FeatureStream gen_synthetic(const SynthConfig& cfg) {
  validate(cfg);
  Rng rng(cfg.seed);
  FeatureStream s;
  s.num_classes = cfg.action_classes + 1;
  s.labels.reserve(cfg.length);

  const double bg_mean =
      cfg.action_length_mean * cfg.background_fraction / (1.0 - cfg.background_fraction);
  auto draw_length = [&](double mean) -> std::size_t {
    const double lo = mean * (1.0 - cfg.length_spread);
    const double hi = mean * (1.0 + cfg.length_spread);
    return static_cast<std::size_t>(std::llround(rng.uniform(lo, hi)));
  };
  bool background = bg_mean > 0.0;
  while (s.labels.size() < cfg.length) {
    std::size_t len;
    int label;
    if (background) {
      len = draw_length(bg_mean);
      label = 0;
    } else {
      len = std::max<std::size_t>(1, draw_length(cfg.action_length_mean));
      label = 1 + static_cast<int>(rng.below(cfg.action_classes));
    }
    for (std::size_t i = 0; i < len && s.labels.size() < cfg.length; ++i) s.labels.push_back(label);
    if (bg_mean > 0.0) background = !background;
  }

  const double corner = cfg.separation / std::sqrt(2.0);
  s.features = Matrix(cfg.length, cfg.feature_width);
  for (std::size_t i = 0; i < cfg.length; ++i) {
    auto row = s.features.row(i);
    for (std::size_t j = 0; j < row.size(); ++j) {
      double v = cfg.noise > 0.0 ? cfg.noise * rng.normal() : 0.0;
      if (j == static_cast<std::size_t>(s.labels[i])) v += corner;
      row[j] = static_cast<double>(static_cast<float>(v));
    }
  }
  return s;
}

std::vector<std::uint8_t> encode_features(const FeatureStream& stream) {
  if (stream.features.rows() != stream.length()) throw ShapeError("IDUF1: feature/label count mismatch");
  if (stream.num_classes == 0 || stream.num_classes > 0xFFFF) throw FormatError("IDUF1: class count out of range");
  std::vector<std::uint8_t> out(std::begin(kMagic), std::end(kMagic));
  put_u32(out, static_cast<std::uint32_t>(stream.length()));
  put_u32(out, static_cast<std::uint32_t>(stream.width()));
  put_u16(out, static_cast<std::uint16_t>(stream.num_classes));
  out.reserve(out.size() + stream.length() * (2 + 4 * stream.width()));
  for (std::size_t i = 0; i < stream.length(); ++i) {
    const int label = stream.labels[i];
    if (label < 0 || static_cast<std::size_t>(label) >= stream.num_classes) {
      throw FormatError("IDUF1: label " + std::to_string(label) + " out of range");
    }
    put_u16(out, static_cast<std::uint16_t>(label));
    for (double v : stream.features.row(i)) put_u32(out, std::bit_cast<std::uint32_t>(static_cast<float>(v)));
  }
  return out;
}

FeatureStream decode_features(std::span<const std::uint8_t> raw) {
  bytes::Reader in(raw, "IDUF1");
  if (raw.size() < sizeof(kMagic) || !std::equal(std::begin(kMagic), std::end(kMagic), raw.begin())) {
    throw FormatError("IDUF1: bad magic");
  }
  in.take(sizeof(kMagic));
  const std::uint32_t count = in.u32();
  const std::uint32_t width = in.u32();
  const std::uint16_t classes = in.u16();
  if (classes == 0) throw FormatError("IDUF1: zero classes");
  const std::size_t record = 2 + 4 * static_cast<std::size_t>(width);
  if (in.remaining() < static_cast<std::size_t>(count) * record) throw FormatError("IDUF1: truncated payload");
  if (in.remaining() > static_cast<std::size_t>(count) * record) throw FormatError("IDUF1: trailing bytes");

  FeatureStream s;
  s.num_classes = classes;
  s.labels.resize(count);
  std::vector<double> values(static_cast<std::size_t>(count) * width);
  for (std::size_t i = 0; i < count; ++i) {
    const std::uint16_t label = in.u16();
    if (label >= classes) throw FormatError("IDUF1: label " + std::to_string(label) + " out of range");
    s.labels[i] = label;
    for (std::size_t j = 0; j < width; ++j) {
      const float f = std::bit_cast<float>(in.u32());
      if (!std::isfinite(f)) throw FormatError("IDUF1: non-finite feature");
      values[i * width + j] = static_cast<double>(f);
    }
  }
  s.features = Matrix(count, width, std::move(values));
  return s;
}

void write_features(const FeatureStream& stream, const std::filesystem::path& path) {
  bytes::write_file(path, encode_features(stream));
}

FeatureStream read_features(const std::filesystem::path& path) {
  return decode_features(bytes::read_file(path));
}

FeatureStream slice_stream(const FeatureStream& stream, std::size_t begin, std::size_t end) {
  if (begin > end || end > stream.length()) throw ShapeError("slice_stream: range out of bounds");
  FeatureStream s;
  s.num_classes = stream.num_classes;
  s.chunk_seconds = stream.chunk_seconds;
  s.labels.assign(stream.labels.begin() + static_cast<std::ptrdiff_t>(begin),
                  stream.labels.begin() + static_cast<std::ptrdiff_t>(end));
  const std::size_t w = stream.width();
  auto src = stream.features.data().subspan(begin * w, (end - begin) * w);
  s.features = Matrix(end - begin, w, std::vector<double>(src.begin(), src.end()));
  return s;
}

int WindowSet::label_at(std::size_t window, std::size_t step) const {
  const std::size_t pos = positions[window];
  if (pos + step < past) return 0;
  return stream->labels[pos + step - past];
}

int WindowSet::current_label(std::size_t window) const { return stream->labels[positions[window]]; }

std::vector<int> WindowSet::future_labels(std::size_t window) const {
  std::vector<int> out(horizon, 0);
  const std::size_t pos = positions[window];
  for (std::size_t j = 0; j < horizon; ++j) {
    if (pos + 1 + j < stream->length()) out[j] = stream->labels[pos + 1 + j];
  }
  return out;
}

ChunkSequence WindowSet::sequence(std::size_t window) const {
  ChunkSequence seq;
  const std::size_t pos = positions[window];
  seq.features = Matrix(steps(), stream->width());
  seq.labels.resize(steps());
  seq.relevance.resize(steps());
  for (std::size_t t = 0; t < steps(); ++t) {
    seq.labels[t] = label_at(window, t);
    if (pos + t >= past) {
      auto src = stream->features.row(pos + t - past);
      std::copy(src.begin(), src.end(), seq.features.row(t).begin());
    }
  }
  for (std::size_t t = 0; t < steps(); ++t) seq.relevance[t] = seq.labels[t] == seq.labels.back();
  return seq;
}

WindowSet make_windows(const FeatureStream& stream, std::size_t past, std::size_t horizon,
                       std::size_t stride) {
  if (stride == 0) throw UsageError("window stride must be positive");
  WindowSet w;
  w.stream = &stream;
  w.past = past;
  w.horizon = horizon;
  for (std::size_t pos = 0; pos < stream.length(); pos += stride) w.positions.push_back(pos);
  return w;
}

SequenceBatch assemble(const WindowSet& windows, std::span<const std::size_t> indices,
                       const std::vector<int>* label_track) {
  if (label_track && label_track->size() != windows.stream->length()) {
    throw ShapeError("label track length does not match the stream");
  }
  const std::size_t b = indices.size();
  const std::size_t steps = windows.steps();
  const std::size_t width = windows.stream->width();
  SequenceBatch batch;
  batch.steps.assign(steps, Matrix(b, width));
  batch.labels.assign(steps, std::vector<int>(b));
  batch.relevance.assign(steps, std::vector<int>(b));
  batch.label_input.assign(steps, std::vector<int>(b));
  batch.future.assign(windows.horizon, std::vector<int>(b));
  for (std::size_t i = 0; i < b; ++i) {
    const std::size_t w = indices[i];
    const std::size_t pos = windows.positions[w];
    const int current = windows.current_label(w);
    for (std::size_t t = 0; t < steps; ++t) {
      const int label = windows.label_at(w, t);
      batch.labels[t][i] = label;
      batch.relevance[t][i] = label == current;
      if (pos + t >= windows.past) {
        const std::size_t chunk = pos + t - windows.past;
        auto src = windows.stream->features.row(chunk);
        std::copy(src.begin(), src.end(), batch.steps[t].row(i).begin());
        batch.label_input[t][i] = label_track ? (*label_track)[chunk] : label;
      }
    }
    const auto future = windows.future_labels(w);
    for (std::size_t j = 0; j < windows.horizon; ++j) batch.future[j][i] = future[j];
  }
  return batch;
}

SequenceBatch assemble(std::span<const ChunkSequence> sequences) {
  SequenceBatch batch;
  if (sequences.empty()) return batch;
  const std::size_t steps = sequences.front().labels.size();
  const std::size_t width = sequences.front().features.cols();
  const std::size_t b = sequences.size();
  batch.steps.assign(steps, Matrix(b, width));
  batch.labels.assign(steps, std::vector<int>(b));
  batch.relevance.assign(steps, std::vector<int>(b));
  for (std::size_t i = 0; i < b; ++i) {
    const auto& seq = sequences[i];
    if (seq.labels.size() != steps || seq.features.rows() != steps || seq.features.cols() != width) {
      throw ShapeError("assemble: sequences differ in length or width");
    }
    for (std::size_t t = 0; t < steps; ++t) {
      std::copy(seq.features.row(t).begin(), seq.features.row(t).end(), batch.steps[t].row(i).begin());
      batch.labels[t][i] = seq.labels[t];
      batch.relevance[t][i] = seq.labels[t] == seq.labels.back();
    }
  }
  batch.label_input = batch.labels;
  return batch;
}

BalancedSampler::BalancedSampler(const WindowSet& windows, std::size_t batch_size, std::uint64_t seed)
    : batch_size_(batch_size), seed_(seed) {
  if (batch_size == 0) throw UsageError("batch size must be positive");
  for (std::size_t i = 0; i < windows.size(); ++i) {
    (windows.current_label(i) == 0 ? background_ : action_).push_back(i);
  }
  const std::size_t need_bg = batch_size / 2;
  const std::size_t need_act = batch_size - need_bg;
  if (need_bg > 0 && background_.empty()) throw UsageError("balanced batches: background stratum is empty");
  if (action_.empty()) throw UsageError("balanced batches: action stratum is empty");
  batches_ = action_.size() / need_act;
  if (need_bg > 0) batches_ = std::min(batches_, background_.size() / need_bg);
  if (batches_ == 0) throw UsageError("balanced batches: too few windows for one batch");
}

std::vector<std::vector<std::size_t>> BalancedSampler::epoch(std::size_t index) const {
  Rng rng(Rng::mix(seed_, index));
  auto shuffled = [&](std::vector<std::size_t> v) {
    for (std::size_t i = v.size(); i > 1; --i) std::swap(v[i - 1], v[rng.below(i)]);
    return v;
  };
  const auto bg = shuffled(background_);
  const auto act = shuffled(action_);
  const std::size_t need_bg = batch_size_ / 2;
  const std::size_t need_act = batch_size_ - need_bg;
  std::vector<std::vector<std::size_t>> out(batches_);
  for (std::size_t b = 0; b < batches_; ++b) {
    out[b].insert(out[b].end(), bg.begin() + static_cast<std::ptrdiff_t>(b * need_bg),
                  bg.begin() + static_cast<std::ptrdiff_t>((b + 1) * need_bg));
    out[b].insert(out[b].end(), act.begin() + static_cast<std::ptrdiff_t>(b * need_act),
                  act.begin() + static_cast<std::ptrdiff_t>((b + 1) * need_act));
  }
  return out;
}

}  // namespace idu
