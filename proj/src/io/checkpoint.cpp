#include "cflow/checkpoint.hpp"

#include <fstream>
#include <iterator>
#include <sstream>

#include "binary.hpp"

namespace cflow {

namespace {

constexpr std::string_view kCheckpointMagic = "FLWC";
constexpr std::string_view kSampleMagic = "FLWS";
constexpr std::uint32_t kSampleVersion = 1;
constexpr std::uint32_t kCouplingTag = 0;
constexpr std::uint32_t kPermutationTag = 1;

void write_indices(binary::Writer& w, const std::vector<std::size_t>& v) {
  w.u64(v.size());
  for (std::size_t i : v) w.u64(i);
}

std::vector<std::size_t> read_indices(binary::Reader& r) {
  std::vector<std::size_t> v(r.count(8));
  for (std::size_t& i : v) i = static_cast<std::size_t>(r.u64());
  return v;
}

}  // namespace

const char* model_kind_name(ModelKind kind) {
  switch (kind) {
    case ModelKind::kBase:
      return "base";
    case ModelKind::kPregen:
      return "pregen";
    case ModelKind::kConditional:
      return "conditional";
  }
  return "unknown";
}

std::string encode_checkpoint(const FlowModel& model, ModelKind kind) {
  binary::Writer w(kCheckpointMagic, kCheckpointVersion);
  w.u32(static_cast<std::uint32_t>(kind));
  w.u64(model.dim());
  w.u64(model.context_width());
  w.u64(model.layers().size());
  for (const FlowLayer& layer : model.layers()) {
    if (const auto* c = std::get_if<CouplingLayer>(&layer)) {
      w.u32(kCouplingTag);
      w.u32(static_cast<std::uint32_t>(c->kind));
      write_indices(w, c->conditioning);
      write_indices(w, c->transformed);
      w.u64(c->context_width);
      write_indices(w, c->conditioner.widths);
    } else {
      w.u32(kPermutationTag);
      write_indices(w, std::get<Permutation>(layer).order);
    }
  }
  const std::vector<double> params = model.flat_parameters();
  w.u64(params.size());
  for (double v : params) w.f64(v);
  return w.finish();
}

Checkpoint decode_checkpoint(std::string_view bytes) {
  binary::Reader r(bytes, kCheckpointMagic, kCheckpointVersion, "checkpoint");
  Checkpoint out;
  const std::uint32_t kind = r.u32();
  if (kind > static_cast<std::uint32_t>(ModelKind::kConditional)) {
    throw FormatError("checkpoint: unknown model kind " + std::to_string(kind));
  }
  out.kind = static_cast<ModelKind>(kind);
  const auto dim = static_cast<std::size_t>(r.u64());
  const auto context_width = static_cast<std::size_t>(r.u64());
  std::vector<FlowLayer> layers(r.count(4));
  for (FlowLayer& layer : layers) {
    const std::uint32_t tag = r.u32();
    if (tag == kCouplingTag) {
      CouplingLayer c;
      const std::uint32_t coupling = r.u32();
      if (coupling > static_cast<std::uint32_t>(CouplingKind::kAffine)) {
        throw FormatError("checkpoint: unknown coupling kind " + std::to_string(coupling));
      }
      c.kind = static_cast<CouplingKind>(coupling);
      c.conditioning = read_indices(r);
      c.transformed = read_indices(r);
      c.context_width = static_cast<std::size_t>(r.u64());
      c.conditioner.widths = read_indices(r);
      if (c.conditioner.widths.size() < 2) throw FormatError("checkpoint: conditioner needs at least two widths");
      for (std::size_t i = 0; i + 1 < c.conditioner.widths.size(); ++i) {
        c.conditioner.weights.emplace_back(Shape{c.conditioner.widths[i], c.conditioner.widths[i + 1]});
        c.conditioner.biases.emplace_back(Shape{1, c.conditioner.widths[i + 1]});
      }
      layer = std::move(c);
    } else if (tag == kPermutationTag) {
      layer = Permutation{read_indices(r)};
    } else {
      throw FormatError("checkpoint: unknown layer tag " + std::to_string(tag));
    }
  }
  std::vector<double> params(r.count(8));
  for (double& v : params) v = r.f64();
  r.finish();
  try {
    out.model = FlowModel(dim, std::move(layers), context_width);
    if (out.model.parameter_count() != params.size()) {
      throw FormatError("checkpoint: descriptors imply " + std::to_string(out.model.parameter_count()) +
                        " parameters, blob holds " + std::to_string(params.size()));
    }
    out.model.set_flat_parameters(params);
  } catch (const FormatError&) {
    throw;
  } catch (const Error& e) {
    throw FormatError(std::string("checkpoint: invalid layer descriptors: ") + e.what());
  }
  return out;
}

void save_checkpoint(const FlowModel& model, ModelKind kind, const std::string& path) {
  write_file_bytes(path, encode_checkpoint(model, kind));
}

Checkpoint load_checkpoint(const std::string& path) { return decode_checkpoint(read_file_bytes(path)); }

FlowModel load_checkpoint(const std::string& path, ModelKind expected) {
  Checkpoint c = load_checkpoint(path);
  if (c.kind != expected) {
    throw KindMismatchError("checkpoint " + path + " holds a " + model_kind_name(c.kind) + " model, expected " +
                            model_kind_name(expected));
  }
  return std::move(c.model);
}

std::string encode_sample_set(const SampleSet& set) {
  binary::Writer w(kSampleMagic, kSampleVersion);
  w.u32(static_cast<std::uint32_t>(set.provenance));
  w.u64(set.seed);
  w.u64(set.size());
  w.u64(set.dim());
  for (double v : set.samples.data()) w.f64(v);
  return w.finish();
}

SampleSet decode_sample_set(std::string_view bytes) {
  binary::Reader r(bytes, kSampleMagic, kSampleVersion, "sample set");
  const std::uint32_t provenance = r.u32();
  if (provenance > static_cast<std::uint32_t>(Provenance::kAmortized)) {
    throw FormatError("sample set: unknown provenance " + std::to_string(provenance));
  }
  const std::uint64_t seed = r.u64();
  const std::uint64_t n = r.u64();
  const std::uint64_t d = r.u64();
  if (n == 0 || d == 0) throw FormatError("sample set: empty");
  if (n > r.remaining() / 8 / d) throw FormatError("sample set: row count exceeds file size");
  std::vector<double> data(n * d);
  for (double& v : data) v = r.f64();
  r.finish();
  return SampleSet(Tensor(Shape{n, d}, std::move(data)), static_cast<Provenance>(provenance), seed);
}

void save_sample_set(const SampleSet& set, const std::string& path) { write_file_bytes(path, encode_sample_set(set)); }

SampleSet load_sample_set(const std::string& path) { return decode_sample_set(read_file_bytes(path)); }

std::string read_file_bytes(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError("cannot open " + path);
  return std::string(std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>());
}

void write_file_bytes(const std::string& path, std::string_view bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error("cannot write " + path);
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw Error("short write to " + path);
}

}  // namespace cflow
