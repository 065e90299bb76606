#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "padrec/model.hpp"
#include "padrec/tensor.hpp"

namespace padrec {

enum class Dtype : std::uint8_t { f64 = 0, f32 = 1 };

struct CheckpointSection {
  std::string name;
  Dtype dtype = Dtype::f64;
  Tensor value;
};

/// "PADCKPT1", u32 section count, then per section a u32-length-prefixed
/// name, u8 dtype, u32 rank, u32 dims and the raw little-endian payload; a
/// trailing u32-length-prefixed JSON document holds config and metadata.
struct Checkpoint {
  std::vector<CheckpointSection> sections;
  std::string metadata;  // JSON text

  const CheckpointSection* find(std::string_view name) const;
};

std::string serialize_checkpoint(const Checkpoint& ckpt);
/// Errors name `source` and what was malformed.
Checkpoint parse_checkpoint(std::string_view bytes, const std::string& source = "<checkpoint>");

/// Written to a temporary sibling then renamed into place.
void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt);
Checkpoint load_checkpoint(const std::filesystem::path& path);

/// Every model parameter (frozen text included) as a section. In f32 mode the
/// values are stored as float; values already float-representable round-trip
/// exactly.
Checkpoint snapshot(PadModel& model, Dtype dtype, std::string metadata);

/// Copies sections into the model. A section that names no model parameter,
/// or whose shape differs, is an error. When `only` is non-empty, sections for
/// other parameters are validated but not applied.
void restore(PadModel& model, const Checkpoint& ckpt, std::span<Parameter* const> only = {});

}  // namespace padrec
