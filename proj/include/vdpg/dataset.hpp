#pragma once

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <limits>
#include <sstream>
#include <string>
#include <vector>

#include "vdpg/io.hpp"
#include "vdpg/tensor.hpp"

namespace vdpg {

// On-disk embedding dataset: "VDPG" magic, versioned little-endian header
// (CRC-guarded), then records as [domain_id u32][label i64 | target f64]
// [l*d floats row-major] in the declared storage width.

enum class TaskKind : std::uint8_t { kClassification = 0, kRegression = 1 };
enum class StorageKind : std::uint8_t { kF32 = 0, kF64 = 1 };

constexpr std::int64_t kUnlabeled = -1;
constexpr std::uint16_t kDatasetFormatVersion = 1;

struct DatasetHeader {
  std::uint16_t format_version = kDatasetFormatVersion;
  std::uint32_t d = 0;
  std::uint32_t l = 0;
  std::uint64_t num_records = 0;
  std::uint32_t num_classes = 0;  // 0 for regression
  TaskKind task = TaskKind::kClassification;
  StorageKind storage = StorageKind::kF64;
};

struct EmbeddingRecord {
  std::uint32_t domain_id = 0;
  std::int64_t label = kUnlabeled;  // classification; -1 = unlabeled
  double target = std::numeric_limits<double>::quiet_NaN();  // regression
  Tensor tokens;  // l x d

  bool labeled(TaskKind task) const {
    return task == TaskKind::kClassification ? label != kUnlabeled
                                             : !std::isnan(target);
  }
};

struct Dataset {
  DatasetHeader header;
  std::vector<EmbeddingRecord> records;

  std::uint64_t content_hash() const {
    std::uint64_t h = 0xcbf29ce484222325ull;
    h = fnv1a64_u64(header.d, h);
    h = fnv1a64_u64(header.l, h);
    h = fnv1a64_u64(header.num_classes, h);
    h = fnv1a64_u64(static_cast<std::uint64_t>(header.task), h);
    for (const auto& r : records) {
      h = fnv1a64_u64(r.domain_id, h);
      h = fnv1a64_u64(static_cast<std::uint64_t>(r.label), h);
      h = fnv1a64(&r.target, sizeof(double), h);
      h = r.tokens.hash(h);
    }
    return h;
  }

  std::vector<std::uint32_t> domain_ids() const {
    std::vector<std::uint32_t> ids;
    for (const auto& r : records) {
      bool seen = false;
      for (auto id : ids) seen = seen || id == r.domain_id;
      if (!seen) ids.push_back(r.domain_id);
    }
    return ids;
  }
};

namespace detail {

inline void validate_against_header(const DatasetHeader& h,
                                    const std::vector<EmbeddingRecord>& records) {
  if (h.num_records != records.size())
    throw ContractError("dataset header num_records=" +
                        std::to_string(h.num_records) + " but " +
                        std::to_string(records.size()) + " records given");
  if (h.task == TaskKind::kRegression && h.num_classes != 0)
    throw ContractError("regression dataset must declare num_classes=0");
  for (std::size_t i = 0; i < records.size(); ++i) {
    const auto& r = records[i];
    if (r.tokens.rows() != h.l || r.tokens.cols() != h.d)
      throw ContractError("record " + std::to_string(i) + " tokens " +
                          r.tokens.shape_str() + " do not match header l=" +
                          std::to_string(h.l) + " d=" + std::to_string(h.d));
    if (h.task == TaskKind::kClassification && r.label != kUnlabeled &&
        (r.label < 0 || r.label >= static_cast<std::int64_t>(h.num_classes)))
      throw ContractError("record " + std::to_string(i) + " label " +
                          std::to_string(r.label) + " outside [0, " +
                          std::to_string(h.num_classes) + ")");
  }
}

inline void put_header(BinaryWriter& w, const DatasetHeader& h) {
  std::vector<std::uint8_t> raw;
  auto push = [&raw](const void* p, std::size_t n) {
    const auto* b = static_cast<const std::uint8_t*>(p);
    raw.insert(raw.end(), b, b + n);
  };
  const char magic[4] = {'V', 'D', 'P', 'G'};
  push(magic, 4);
  push(&h.format_version, 2);
  push(&h.d, 4);
  push(&h.l, 4);
  push(&h.num_records, 8);
  push(&h.num_classes, 4);
  const auto task = static_cast<std::uint8_t>(h.task);
  const auto storage = static_cast<std::uint8_t>(h.storage);
  push(&task, 1);
  push(&storage, 1);
  w.put_bytes(raw.data(), raw.size());
  w.put<std::uint32_t>(crc32(raw.data(), raw.size()));
}

inline DatasetHeader get_header(BinaryReader& r) {
  const std::uint64_t start = r.offset();
  std::array<std::uint8_t, 28> raw{};
  r.get_bytes(raw.data(), raw.size());
  if (!(raw[0] == 'V' && raw[1] == 'D' && raw[2] == 'P' && raw[3] == 'G'))
    throw FormatError("bad magic in '" + r.path() + "'", start);
  const std::uint32_t stored_crc = r.get<std::uint32_t>();
  if (stored_crc != crc32(raw.data(), raw.size()))
    throw FormatError("header checksum mismatch in '" + r.path() + "'", start);
  DatasetHeader h;
  std::memcpy(&h.format_version, raw.data() + 4, 2);
  if (h.format_version != kDatasetFormatVersion)
    throw FormatError("unsupported dataset format version " +
                          std::to_string(h.format_version),
                      start + 4);
  std::memcpy(&h.d, raw.data() + 6, 4);
  std::memcpy(&h.l, raw.data() + 10, 4);
  std::memcpy(&h.num_records, raw.data() + 14, 8);
  std::memcpy(&h.num_classes, raw.data() + 22, 4);
  if (raw[26] > 1) throw FormatError("invalid task enum", start + 26);
  if (raw[27] > 1) throw FormatError("invalid storage enum", start + 27);
  h.task = static_cast<TaskKind>(raw[26]);
  h.storage = static_cast<StorageKind>(raw[27]);
  if (h.d == 0 || h.l == 0)
    throw FormatError("header declares zero-sized tokens", start + 6);
  return h;
}

}  // namespace detail

inline void write_dataset(const std::vector<EmbeddingRecord>& records,
                          const DatasetHeader& header, const std::string& path) {
  detail::validate_against_header(header, records);
  BinaryWriter w(path);
  detail::put_header(w, header);
  for (const auto& r : records) {
    w.put<std::uint32_t>(r.domain_id);
    if (header.task == TaskKind::kClassification)
      w.put<std::int64_t>(r.label);
    else
      w.put<double>(r.target);
    if (header.storage == StorageKind::kF64) {
      w.put_bytes(r.tokens.data(), r.tokens.size() * sizeof(double));
    } else {
      for (std::size_t i = 0; i < r.tokens.size(); ++i)
        w.put<float>(static_cast<float>(r.tokens[i]));
    }
  }
  w.close();
}

inline Dataset read_dataset(const std::string& path) {
  BinaryReader r(path);
  Dataset ds;
  ds.header = detail::get_header(r);
  const DatasetHeader& h = ds.header;
  ds.records.reserve(h.num_records);
  for (std::uint64_t i = 0; i < h.num_records; ++i) {
    EmbeddingRecord rec;
    rec.domain_id = r.get<std::uint32_t>();
    if (h.task == TaskKind::kClassification) {
      rec.label = r.get<std::int64_t>();
      if (rec.label != kUnlabeled &&
          (rec.label < 0 || rec.label >= static_cast<std::int64_t>(h.num_classes)))
        throw FormatError("record " + std::to_string(i) + " label " +
                              std::to_string(rec.label) + " outside [0, " +
                              std::to_string(h.num_classes) + ")",
                          r.offset() - 8);
    } else {
      rec.target = r.get<double>();
    }
    rec.tokens = Tensor(h.l, h.d);
    if (h.storage == StorageKind::kF64) {
      r.get_bytes(rec.tokens.data(), rec.tokens.size() * sizeof(double));
    } else {
      for (std::size_t k = 0; k < rec.tokens.size(); ++k)
        rec.tokens[k] = static_cast<double>(r.get<float>());
    }
    ds.records.push_back(std::move(rec));
  }
  if (!r.exhausted())
    throw FormatError("trailing bytes after last record in '" + path + "'",
                      r.offset());
  return ds;
}

// Plain-text manifest importer for externally produced embeddings.
//
//   # comments and blank lines ignored
//   d <u32>
//   l <u32>
//   task classification|regression
//   num_classes <u32>          (classification only)
//   storage f32|f64            (token dump element width; default f64)
//   record <domain_id> <label|target|unlabeled> <path-to-raw-token-dump>
//
// Each dump holds exactly l*d little-endian floats, row-major.
inline Dataset import_manifest(const std::string& manifest_path) {
  std::ifstream in(manifest_path);
  if (!in) throw FormatError("cannot open manifest '" + manifest_path + "'", 0);
  const auto base = std::filesystem::path(manifest_path).parent_path();

  DatasetHeader h;
  h.storage = StorageKind::kF64;
  bool have_d = false, have_l = false, have_task = false;
  std::vector<EmbeddingRecord> records;
  std::string line;
  std::size_t lineno = 0;
  auto fail = [&](const std::string& msg) -> void {
    throw FormatError("manifest '" + manifest_path + "' line " +
                          std::to_string(lineno) + ": " + msg,
                      0);
  };
  while (std::getline(in, line)) {
    ++lineno;
    std::istringstream ss(line);
    std::string key;
    if (!(ss >> key) || key[0] == '#') continue;
    if (key == "d") {
      if (!(ss >> h.d) || h.d == 0) fail("expected positive integer after 'd'");
      have_d = true;
    } else if (key == "l") {
      if (!(ss >> h.l) || h.l == 0) fail("expected positive integer after 'l'");
      have_l = true;
    } else if (key == "task") {
      std::string t;
      ss >> t;
      if (t == "classification")
        h.task = TaskKind::kClassification;
      else if (t == "regression")
        h.task = TaskKind::kRegression;
      else
        fail("task must be classification or regression");
      have_task = true;
    } else if (key == "num_classes") {
      if (!(ss >> h.num_classes)) fail("expected integer after 'num_classes'");
    } else if (key == "storage") {
      std::string s;
      ss >> s;
      if (s == "f32")
        h.storage = StorageKind::kF32;
      else if (s == "f64")
        h.storage = StorageKind::kF64;
      else
        fail("storage must be f32 or f64");
    } else if (key == "record") {
      if (!have_d || !have_l || !have_task)
        fail("d, l and task must precede the first record");
      EmbeddingRecord rec;
      std::string label_tok, path_tok;
      if (!(ss >> rec.domain_id >> label_tok >> path_tok))
        fail("expected: record <domain_id> <label|unlabeled> <path>");
      if (label_tok != "unlabeled") {
        try {
          if (h.task == TaskKind::kClassification)
            rec.label = std::stoll(label_tok);
          else
            rec.target = std::stod(label_tok);
        } catch (const std::exception&) {
          fail("unparsable label '" + label_tok + "'");
        }
      }
      std::filesystem::path p(path_tok);
      if (p.is_relative()) p = base / p;
      BinaryReader tokens(p.string());
      const std::size_t elem =
          h.storage == StorageKind::kF64 ? sizeof(double) : sizeof(float);
      const std::size_t want = static_cast<std::size_t>(h.l) * h.d * elem;
      if (tokens.size() != want)
        throw FormatError("token dump '" + p.string() + "' holds " +
                              std::to_string(tokens.size()) +
                              " bytes, expected " + std::to_string(want),
                          0);
      rec.tokens = Tensor(h.l, h.d);
      if (h.storage == StorageKind::kF64) {
        tokens.get_bytes(rec.tokens.data(), want);
      } else {
        for (std::size_t k = 0; k < rec.tokens.size(); ++k)
          rec.tokens[k] = static_cast<double>(tokens.get<float>());
      }
      records.push_back(std::move(rec));
    } else {
      fail("unknown manifest key '" + key + "'");
    }
  }
  h.num_records = records.size();
  detail::validate_against_header(h, records);
  Dataset ds;
  ds.header = h;
  ds.records = std::move(records);
  return ds;
}

}  // namespace vdpg
