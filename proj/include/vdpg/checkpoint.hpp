#pragma once

#include <string>
#include <vector>

#include <json.hpp>

#include "vdpg/io.hpp"
#include "vdpg/model.hpp"
#include "vdpg/params.hpp"

namespace vdpg {

// Versioned checkpoint container: "VDPC" magic, u16 version, JSON meta blob,
// then a self-describing tensor table (name, dtype, trainable, shape, data
// offset) followed by the raw little-endian payloads. f64 by default; f32 is
// a storage-only option.

constexpr std::uint16_t kCheckpointVersion = 1;

struct Checkpoint {
  ParamStore params;
  nlohmann::json meta;
};

inline void save_checkpoint(const ParamStore& params, const nlohmann::json& meta,
                            const std::string& path,
                            StorageKind storage = StorageKind::kF64) {
  BinaryWriter w(path);
  const char magic[4] = {'V', 'D', 'P', 'C'};
  w.put_bytes(magic, 4);
  w.put<std::uint16_t>(kCheckpointVersion);
  w.put<std::uint8_t>(static_cast<std::uint8_t>(storage));
  w.put_string(meta.dump());
  w.put<std::uint64_t>(params.size());

  // table size is known upfront, so data offsets can be computed in one pass
  std::uint64_t table_bytes = 0;
  for (const auto& [name, e] : params)
    table_bytes += 4 + name.size() + 1 + 1 + 8 + 8 + 8;
  const std::size_t elem =
      storage == StorageKind::kF64 ? sizeof(double) : sizeof(float);

  std::uint64_t data_off = w.offset() + table_bytes;
  for (const auto& [name, e] : params) {
    w.put_string(name);
    w.put<std::uint8_t>(static_cast<std::uint8_t>(storage));
    w.put<std::uint8_t>(e.trainable ? 1 : 0);
    w.put<std::uint64_t>(e.value.rows());
    w.put<std::uint64_t>(e.value.cols());
    w.put<std::uint64_t>(data_off);
    data_off += e.value.size() * elem;
  }
  for (const auto& [name, e] : params) {
    if (storage == StorageKind::kF64) {
      w.put_bytes(e.value.data(), e.value.size() * sizeof(double));
    } else {
      for (std::size_t i = 0; i < e.value.size(); ++i)
        w.put<float>(static_cast<float>(e.value[i]));
    }
  }
  w.close();
}

inline Checkpoint load_checkpoint(const std::string& path) {
  BinaryReader r(path);
  char magic[4];
  r.get_bytes(magic, 4);
  if (!(magic[0] == 'V' && magic[1] == 'D' && magic[2] == 'P' && magic[3] == 'C'))
    throw FormatError("bad checkpoint magic in '" + path + "'", 0);
  const auto version = r.get<std::uint16_t>();
  if (version != kCheckpointVersion)
    throw FormatError("unsupported checkpoint version " + std::to_string(version), 4);
  const auto storage_raw = r.get<std::uint8_t>();
  if (storage_raw > 1) throw FormatError("invalid checkpoint storage enum", 6);
  const auto storage = static_cast<StorageKind>(storage_raw);

  Checkpoint ck;
  const std::string meta_str = r.get_string();
  try {
    ck.meta = nlohmann::json::parse(meta_str);
  } catch (const nlohmann::json::exception& e) {
    throw FormatError("unparsable checkpoint meta: " + std::string(e.what()), 7);
  }
  const auto count = r.get<std::uint64_t>();
  struct Entry {
    std::string name;
    bool trainable;
    std::uint64_t rows, cols, offset;
  };
  std::vector<Entry> table;
  table.reserve(count);
  for (std::uint64_t i = 0; i < count; ++i) {
    Entry e;
    e.name = r.get_string();
    const auto dt = r.get<std::uint8_t>();
    if (dt != storage_raw)
      throw FormatError("tensor '" + e.name + "' dtype differs from container",
                        r.offset() - 1);
    e.trainable = r.get<std::uint8_t>() != 0;
    e.rows = r.get<std::uint64_t>();
    e.cols = r.get<std::uint64_t>();
    e.offset = r.get<std::uint64_t>();
    table.push_back(std::move(e));
  }
  const std::size_t elem =
      storage == StorageKind::kF64 ? sizeof(double) : sizeof(float);
  for (const auto& e : table) {
    r.seek(e.offset);
    Tensor t(e.rows, e.cols);
    if (storage == StorageKind::kF64) {
      r.get_bytes(t.data(), t.size() * sizeof(double));
    } else {
      for (std::size_t i = 0; i < t.size(); ++i)
        t[i] = static_cast<double>(r.get<float>());
    }
    (void)elem;
    ck.params.add(e.name, std::move(t), e.trainable);
  }
  return ck;
}

// Shape compatibility against a config; names the first offending tensor.
inline void validate_checkpoint_shapes(const ParamStore& loaded,
                                       const ModelConfig& cfg) {
  const ParamStore expected = init_params(cfg, 0);
  for (const auto& [name, e] : expected) {
    if (!loaded.contains(name))
      throw ConfigError("checkpoint missing tensor '" + name + "'");
    const Tensor& got = loaded.at(name);
    if (got.rows() != e.value.rows() || got.cols() != e.value.cols())
      throw ConfigError("checkpoint tensor '" + name + "' has shape " +
                        got.shape_str() + ", config expects " +
                        e.value.shape_str());
  }
  for (const auto& [name, e] : loaded)
    if (!expected.contains(name))
      throw ConfigError("checkpoint carries unexpected tensor '" + name + "'");
}

}  // namespace vdpg
