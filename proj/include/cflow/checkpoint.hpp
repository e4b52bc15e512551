#pragma once

#include <cstdint>
#include <string>
#include <string_view>

#include "cflow/error.hpp"
#include "cflow/estimators.hpp"
#include "cflow/flow.hpp"

namespace cflow {

/// Any failure to read a checkpoint or sample-set file.
class FormatError : public Error {
 public:
  using Error::Error;
};
class TruncatedFileError : public FormatError {
 public:
  using FormatError::FormatError;
};
class ChecksumError : public FormatError {
 public:
  using FormatError::FormatError;
};
class VersionError : public FormatError {
 public:
  using FormatError::FormatError;
};
class KindMismatchError : public FormatError {
 public:
  using FormatError::FormatError;
};

enum class ModelKind : std::uint32_t { kBase = 0, kPregen = 1, kConditional = 2 };

const char* model_kind_name(ModelKind kind);

inline constexpr std::uint32_t kCheckpointVersion = 1;

struct Checkpoint {
  ModelKind kind = ModelKind::kBase;
  FlowModel model;
};

/// Layout, all little-endian:
///   "FLWC" | u32 version | u64 total bytes | u32 kind | u64 d | u64 context width
///   | u64 layer count | layer descriptors | u64 parameter count | f64 parameters
///   | u32 CRC-32 of every preceding byte
std::string encode_checkpoint(const FlowModel& model, ModelKind kind);
Checkpoint decode_checkpoint(std::string_view bytes);

void save_checkpoint(const FlowModel& model, ModelKind kind, const std::string& path);
Checkpoint load_checkpoint(const std::string& path);
/// Throws KindMismatchError when the stored kind differs.
FlowModel load_checkpoint(const std::string& path, ModelKind expected);

/// "FLWS" | u32 version | u64 total bytes | u32 provenance | u64 seed | u64 n | u64 d
/// | f64 rows | u32 CRC-32
std::string encode_sample_set(const SampleSet& set);
SampleSet decode_sample_set(std::string_view bytes);
void save_sample_set(const SampleSet& set, const std::string& path);
SampleSet load_sample_set(const std::string& path);

std::string read_file_bytes(const std::string& path);
void write_file_bytes(const std::string& path, std::string_view bytes);

}  // namespace cflow
