#include "flowpose/checkpoint.hpp"

#include <cstring>

#include "flowpose/binary_io.hpp"

namespace flowpose {

namespace {
constexpr char kMagic[8] = {'F', 'P', 'C', 'K', 'P', 'T', '0', '1'};
}

void save_checkpoint(const std::string& path, const ParameterStore& params) {
  io::Writer w;
  w.bytes(kMagic, sizeof kMagic);
  w.u32(kCheckpointVersion);
  w.u64(params.size());
  for (const auto& [name, t] : params.entries()) {
    w.str(name);
    w.u32(static_cast<std::uint32_t>(t.rank()));
    for (auto e : t.shape()) w.u64(e);
    w.f64s(t.values());
  }
  w.save(path);
}

CheckpointEntries load_checkpoint(const std::string& path) {
  auto r = io::Reader::open(path, "checkpoint '" + path + "'");
  char magic[8];
  r.bytes(magic, sizeof magic);
  if (std::memcmp(magic, kMagic, sizeof magic) != 0) throw FormatError(r.what() + ": bad magic");
  const auto version = r.u32();
  if (version != kCheckpointVersion) {
    throw FormatError(r.what() + ": unsupported format version " + std::to_string(version));
  }
  const auto count = r.u64();
  CheckpointEntries out;
  for (std::uint64_t i = 0; i < count; ++i) {
    std::string name = r.str();
    const auto rank = r.u32();
    if (rank > 8) throw FormatError(r.what() + ": implausible rank for '" + name + "'");
    Shape shape(rank);
    for (auto& e : shape) e = r.u64();
    auto values = r.f64s();
    if (values.size() != shape_numel(shape)) throw FormatError(r.what() + ": size mismatch for '" + name + "'");
    out.emplace_back(std::move(name), Tensor(std::move(shape), std::move(values)));
  }
  if (!r.at_end()) throw FormatError(r.what() + ": trailing bytes");
  return out;
}

}  // namespace flowpose
