// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "idu/networks.hpp"
#include "idu/params.hpp"

namespace idu {

/// Flat key=value configuration record. Ordered, so serialization is stable.
using ConfigRecord = std::map<std::string, std::string, std::less<>>;

/// Exact text form of a double (shortest round-trip representation).
std::string format_double(double v);
double parse_double(std::string_view text, std::string_view key);
std::size_t parse_size(std::string_view text, std::string_view key);

const std::string& require_key(const ConfigRecord& config, std::string_view key);

// "IDUCKPT1" container:
//   magic "IDUCKPT1", u32 version,
//   u32 config byte length, config text ("key=value\n" lines, sorted),
//   u32 tensor count, then per tensor: u16 name length, name bytes,
//   u32 rows, u32 cols, rows*cols f64.
// All integers and doubles little-endian.
struct Checkpoint {
  static constexpr std::uint32_t kVersion = 1;

  ConfigRecord config;
  ParamSet tensors;

  friend bool operator==(const Checkpoint&, const Checkpoint&) = default;
};

std::vector<std::uint8_t> encode_checkpoint(const Checkpoint& ckpt);
Checkpoint decode_checkpoint(std::span<const std::uint8_t> bytes);
void write_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& path);
Checkpoint read_checkpoint(const std::filesystem::path& path);

// Model <-> checkpoint. Tensor names carry "cell.", "head." and "buffer."
// prefixes; the model configuration is stored under "model.*" keys.
// Unrelated keys (run settings) pass through untouched.
Checkpoint to_checkpoint(const DetectorModel& model);
Checkpoint to_checkpoint(const AnticipatorModel& model);
/// "detector" or "anticipator".
std::string_view model_family(const Checkpoint& ckpt);
DetectorModel detector_from_checkpoint(const Checkpoint& ckpt);
AnticipatorModel anticipator_from_checkpoint(const Checkpoint& ckpt);

}  // namespace idu
