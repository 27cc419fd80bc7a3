// SPDX-License-Identifier: Apache-2.0
#include "idu/checkpoint.hpp"

#include <algorithm>
#include <bit>
#include <charconv>
#include <cmath>
#include <iterator>

#include "bytes.hpp"
#include "idu/error.hpp"

namespace idu {

namespace {

constexpr char kMagic[8] = {'I', 'D', 'U', 'C', 'K', 'P', 'T', '1'};

void put_config(std::vector<std::uint8_t>& out, const ConfigRecord& config) {
  std::string text;
  for (const auto& [k, v] : config) {
    if (k.empty() || k.find_first_of("=\n") != std::string::npos || v.find('\n') != std::string::npos) {
      throw FormatError("IDUCKPT1: config entry '" + k + "' is not representable");
    }
    text += k + '=' + v + '\n';
  }
  bytes::put_u32(out, static_cast<std::uint32_t>(text.size()));
  out.insert(out.end(), text.begin(), text.end());
}

ConfigRecord parse_config(std::string_view text) {
  ConfigRecord config;
  while (!text.empty()) {
    const auto nl = text.find('\n');
    if (nl == std::string_view::npos) throw FormatError("IDUCKPT1: unterminated config line");
    const std::string_view line = text.substr(0, nl);
    text.remove_prefix(nl + 1);
    const auto eq = line.find('=');
    if (eq == std::string_view::npos || eq == 0) throw FormatError("IDUCKPT1: malformed config line");
    if (!config.emplace(std::string(line.substr(0, eq)), std::string(line.substr(eq + 1))).second) {
      throw FormatError("IDUCKPT1: duplicate config key");
    }
  }
  return config;
}

void add_prefixed(ParamSet& out, const ParamSet& from, std::string_view prefix) { out.append(from, prefix); }

ParamSet take_prefixed(const ParamSet& tensors, std::string_view prefix) {
  ParamSet out;
  for (std::size_t i = 0; i < tensors.size(); ++i) {
    const std::string& n = tensors.name(i);
    if (n.starts_with(prefix)) out.add(n.substr(prefix.size()), tensors.value(i));
  }
  return out;
}

void require_exact(const ParamSet& got, std::span<const ParamShape> layout, std::string_view what) {
  if (got.size() != layout.size()) {
    throw FormatError("IDUCKPT1: " + std::string(what) + " has " + std::to_string(got.size()) +
                      " tensors, expected " + std::to_string(layout.size()));
  }
  try {
    got.require_layout(layout, what);
  } catch (const ShapeError& e) {
    throw FormatError(std::string("IDUCKPT1: ") + e.what());
  }
}

std::string size_text(std::size_t v) { return std::to_string(v); }

}  // namespace

std::string format_double(double v) {
  char buf[64];
  auto res = std::to_chars(buf, buf + sizeof buf, v);
  return {buf, res.ptr};
}

double parse_double(std::string_view text, std::string_view key) {
  double v = 0.0;
  auto res = std::from_chars(text.data(), text.data() + text.size(), v);
  if (res.ec != std::errc() || res.ptr != text.data() + text.size() || !std::isfinite(v)) {
    throw UsageError("'" + std::string(key) + "': expected a number, got '" + std::string(text) + "'");
  }
  return v;
}

std::size_t parse_size(std::string_view text, std::string_view key) {
  std::size_t v = 0;
  auto res = std::from_chars(text.data(), text.data() + text.size(), v);
  if (res.ec != std::errc() || res.ptr != text.data() + text.size()) {
    throw UsageError("'" + std::string(key) + "': expected a non-negative integer, got '" + std::string(text) + "'");
  }
  return v;
}

const std::string& require_key(const ConfigRecord& config, std::string_view key) {
  auto it = config.find(key);
  if (it == config.end()) throw FormatError("missing config key '" + std::string(key) + "'");
  return it->second;
}

std::vector<std::uint8_t> encode_checkpoint(const Checkpoint& ckpt) {
  std::vector<std::uint8_t> out(std::begin(kMagic), std::end(kMagic));
  bytes::put_u32(out, Checkpoint::kVersion);
  put_config(out, ckpt.config);
  bytes::put_u32(out, static_cast<std::uint32_t>(ckpt.tensors.size()));
  for (std::size_t i = 0; i < ckpt.tensors.size(); ++i) {
    const std::string& name = ckpt.tensors.name(i);
    const Matrix& m = ckpt.tensors.value(i);
    if (name.size() > 0xFFFF) throw FormatError("IDUCKPT1: tensor name too long");
    bytes::put_u16(out, static_cast<std::uint16_t>(name.size()));
    out.insert(out.end(), name.begin(), name.end());
    bytes::put_u32(out, static_cast<std::uint32_t>(m.rows()));
    bytes::put_u32(out, static_cast<std::uint32_t>(m.cols()));
    for (double v : m.data()) bytes::put_u64(out, std::bit_cast<std::uint64_t>(v));
  }
  return out;
}

Checkpoint decode_checkpoint(std::span<const std::uint8_t> raw) {
  if (raw.size() < sizeof(kMagic) || !std::equal(std::begin(kMagic), std::end(kMagic), raw.begin())) {
    throw FormatError("IDUCKPT1: bad magic");
  }
  bytes::Reader in(raw, "IDUCKPT1");
  in.take(sizeof(kMagic));
  const std::uint32_t version = in.u32();
  if (version != Checkpoint::kVersion) {
    throw FormatError("IDUCKPT1: unsupported version " + std::to_string(version));
  }
  Checkpoint ckpt;
  const std::uint32_t config_len = in.u32();
  auto text = in.take(config_len);
  ckpt.config = parse_config(std::string_view(reinterpret_cast<const char*>(text.data()), text.size()));

  const std::uint32_t count = in.u32();
  for (std::uint32_t t = 0; t < count; ++t) {
    auto name_bytes = in.take(in.u16());
    std::string name(name_bytes.begin(), name_bytes.end());
    if (ckpt.tensors.contains(name)) throw FormatError("IDUCKPT1: duplicate tensor '" + name + "'");
    const std::size_t rows = in.u32();
    const std::size_t cols = in.u32();
    if (in.remaining() / 8 < rows * cols) throw FormatError("IDUCKPT1: truncated payload");
    std::vector<double> values(rows * cols);
    for (double& v : values) {
      v = std::bit_cast<double>(in.u64());
      if (!std::isfinite(v)) throw FormatError("IDUCKPT1: non-finite value in '" + name + "'");
    }
    ckpt.tensors.add(std::move(name), Matrix(rows, cols, std::move(values)));
  }
  if (in.remaining() != 0) throw FormatError("IDUCKPT1: trailing bytes");
  return ckpt;
}

void write_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& path) {
  bytes::write_file(path, encode_checkpoint(ckpt));
}

Checkpoint read_checkpoint(const std::filesystem::path& path) {
  return decode_checkpoint(bytes::read_file(path));
}

Checkpoint to_checkpoint(const DetectorModel& model) {
  const DetectorConfig& c = model.config;
  Checkpoint ckpt;
  ckpt.config["model.family"] = "detector";
  ckpt.config["model.cell"] = std::string(to_string(c.cell));
  ckpt.config["model.feature_width"] = size_text(c.feature_width);
  ckpt.config["model.hidden"] = size_text(c.hidden);
  ckpt.config["model.num_classes"] = size_text(c.num_classes);
  add_prefixed(ckpt.tensors, model.cell, "cell.");
  add_prefixed(ckpt.tensors, model.head, "head.");
  return ckpt;
}

Checkpoint to_checkpoint(const AnticipatorModel& model) {
  const AnticipatorConfig& c = model.config;
  Checkpoint ckpt;
  ckpt.config["model.family"] = "anticipator";
  ckpt.config["model.cell"] = std::string(to_string(c.cell));
  ckpt.config["model.integration"] = std::string(to_string(c.integration));
  ckpt.config["model.feature_width"] = size_text(c.feature_width);
  ckpt.config["model.reduced_width"] = size_text(c.reduced_width);
  ckpt.config["model.label_width"] = size_text(c.label_width);
  ckpt.config["model.hidden"] = size_text(c.hidden);
  ckpt.config["model.num_classes"] = size_text(c.num_classes);
  ckpt.config["model.horizon"] = size_text(c.horizon);
  ckpt.config["model.head_hidden1"] = size_text(c.head_hidden1);
  ckpt.config["model.head_hidden2"] = size_text(c.head_hidden2);
  ckpt.config["model.reduction"] = std::string(to_string(c.reduction));
  ckpt.config["model.norm_momentum"] = format_double(c.norm_momentum);
  add_prefixed(ckpt.tensors, model.cell, "cell.");
  add_prefixed(ckpt.tensors, model.head, "head.");
  add_prefixed(ckpt.tensors, model.buffers, "buffer.");
  return ckpt;
}

std::string_view model_family(const Checkpoint& ckpt) {
  const std::string& f = require_key(ckpt.config, "model.family");
  if (f == "detector") return "detector";
  if (f == "anticipator") return "anticipator";
  throw FormatError("unknown model family '" + f + "'");
}

DetectorModel detector_from_checkpoint(const Checkpoint& ckpt) {
  if (model_family(ckpt) != "detector") throw FormatError("checkpoint holds an anticipation model");
  const auto& cfg = ckpt.config;
  DetectorModel m;
  try {
    m.config.cell = parse_cell_kind(require_key(cfg, "model.cell"));
    m.config.feature_width = parse_size(require_key(cfg, "model.feature_width"), "model.feature_width");
    m.config.hidden = parse_size(require_key(cfg, "model.hidden"), "model.hidden");
    m.config.num_classes = parse_size(require_key(cfg, "model.num_classes"), "model.num_classes");
  } catch (const UsageError& e) {
    throw FormatError(e.what());
  }
  m.cell = take_prefixed(ckpt.tensors, "cell.");
  m.head = take_prefixed(ckpt.tensors, "head.");
  require_exact(m.cell, cell_layout(m.config.cell, m.cell_dims()), "cell");
  require_exact(m.head, DetectorModel::head_layout(m.config), "head");
  if (m.cell.size() + m.head.size() != ckpt.tensors.size()) throw FormatError("IDUCKPT1: unexpected tensors");
  return m;
}

AnticipatorModel anticipator_from_checkpoint(const Checkpoint& ckpt) {
  if (model_family(ckpt) != "anticipator") throw FormatError("checkpoint holds a detection model");
  const auto& cfg = ckpt.config;
  AnticipatorModel m;
  auto size = [&](const char* key) { return parse_size(require_key(cfg, key), key); };
  try {
    AnticipatorConfig& c = m.config;
    c.cell = parse_cell_kind(require_key(cfg, "model.cell"));
    c.integration = parse_integration_mode(require_key(cfg, "model.integration"));
    c.feature_width = size("model.feature_width");
    c.reduced_width = size("model.reduced_width");
    c.label_width = size("model.label_width");
    c.hidden = size("model.hidden");
    c.num_classes = size("model.num_classes");
    c.horizon = size("model.horizon");
    c.head_hidden1 = size("model.head_hidden1");
    c.head_hidden2 = size("model.head_hidden2");
    c.reduction = parse_reduction(require_key(cfg, "model.reduction"));
    c.norm_momentum = parse_double(require_key(cfg, "model.norm_momentum"), "model.norm_momentum");
  } catch (const UsageError& e) {
    throw FormatError(e.what());
  }
  m.cell = take_prefixed(ckpt.tensors, "cell.");
  m.head = take_prefixed(ckpt.tensors, "head.");
  m.buffers = take_prefixed(ckpt.tensors, "buffer.");
  require_exact(m.cell, cell_layout(m.config.cell, m.cell_dims()), "cell");
  require_exact(m.head, AnticipatorModel::head_layout(m.config), "head");
  const std::size_t d_g = m.config.label_width;
  const std::vector<ParamShape> buffers = {
      {"G_1.mean", 1, d_g}, {"G_1.var", 1, d_g}, {"G_2.mean", 1, d_g}, {"G_2.var", 1, d_g}};
  require_exact(m.buffers, buffers, "buffers");
  if (m.cell.size() + m.head.size() + m.buffers.size() != ckpt.tensors.size()) {
    throw FormatError("IDUCKPT1: unexpected tensors");
  }
  return m;
}

}  // namespace idu
