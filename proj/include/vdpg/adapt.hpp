#pragma once

#include <map>
#include <span>
#include <string>
#include <vector>

#include "vdpg/io.hpp"
#include "vdpg/model.hpp"

namespace vdpg {

// Deployment path: adaptation is one gradient-free forward pass over at most
// k unlabeled records. Gradient-freeness is asserted, not assumed — the
// parameter checksum is taken before and after every adapt/infer call.

constexpr std::size_t kDefaultAdaptK = 16;

inline DomainPrompt adapt(const ParamStore& params, const ModelConfig& cfg,
                          std::span<const EmbeddingRecord* const> unlabeled,
                          std::size_t k = kDefaultAdaptK,
                          std::string domain_key = {}) {
  if (unlabeled.empty()) throw ContractError("adapt: no unlabeled records");
  const std::size_t use = std::min(k, unlabeled.size());
  const std::uint64_t before = params.checksum();
  DomainPrompt p = generate_prompt(params, cfg, unlabeled.subspan(0, use),
                                   std::move(domain_key));
  if (params.checksum() != before)
    throw ContractError("adapt: parameters mutated during a forward-only pass");
  p.prov.n_condition = static_cast<std::uint32_t>(use);
  return p;
}

inline std::vector<Tensor> infer(const ParamStore& params,
                                 const ModelConfig& cfg,
                                 const DomainPrompt& prompt,
                                 std::span<const EmbeddingRecord* const> records) {
  const std::uint64_t before = params.checksum();
  std::vector<Tensor> out;
  out.reserve(records.size());
  for (const auto* r : records)
    out.push_back(guide_and_predict(params, cfg, prompt, *r));
  if (params.checksum() != before)
    throw ContractError("infer: parameters mutated during a forward-only pass");
  return out;
}

// One prompt per domain key, generated once and reused for every subsequent
// inference on that domain.
class PromptCache {
 public:
  const DomainPrompt& get_or_generate(
      const std::string& key, const ParamStore& params, const ModelConfig& cfg,
      std::span<const EmbeddingRecord* const> unlabeled,
      std::size_t k = kDefaultAdaptK) {
    auto it = cache_.find(key);
    if (it != cache_.end()) return it->second;
    DomainPrompt p = adapt(params, cfg, unlabeled, k, key);
    return cache_.emplace(key, std::move(p)).first->second;
  }

  const DomainPrompt* find(const std::string& key) const {
    auto it = cache_.find(key);
    return it == cache_.end() ? nullptr : &it->second;
  }

  void put(const std::string& key, DomainPrompt p) {
    cache_.insert_or_assign(key, std::move(p));
  }

  std::size_t size() const { return cache_.size(); }

 private:
  std::map<std::string, DomainPrompt> cache_;
};

// --- prompt container ("VDPP") so prompts can move between hosts -----------

constexpr std::uint16_t kPromptFormatVersion = 1;

inline void save_prompt(const DomainPrompt& prompt, const std::string& path) {
  BinaryWriter w(path);
  const char magic[4] = {'V', 'D', 'P', 'P'};
  w.put_bytes(magic, 4);
  w.put<std::uint16_t>(kPromptFormatVersion);
  w.put<std::uint64_t>(prompt.p.rows());
  w.put<std::uint64_t>(prompt.p.cols());
  w.put<std::uint8_t>(static_cast<std::uint8_t>(prompt.prov.kind));
  w.put_string(prompt.prov.domain_key);
  w.put<std::uint32_t>(prompt.prov.n_condition);
  w.put<std::uint64_t>(prompt.prov.seed);
  w.put_bytes(prompt.p.data(), prompt.p.size() * sizeof(double));
  w.close();
}

inline DomainPrompt load_prompt(const std::string& path) {
  BinaryReader r(path);
  char magic[4];
  r.get_bytes(magic, 4);
  if (!(magic[0] == 'V' && magic[1] == 'D' && magic[2] == 'P' && magic[3] == 'P'))
    throw FormatError("bad prompt magic in '" + path + "'", 0);
  const auto version = r.get<std::uint16_t>();
  if (version != kPromptFormatVersion)
    throw FormatError("unsupported prompt version " + std::to_string(version), 4);
  const auto rows = r.get<std::uint64_t>();
  const auto cols = r.get<std::uint64_t>();
  DomainPrompt p;
  const auto kind = r.get<std::uint8_t>();
  if (kind > 3) throw FormatError("invalid prompt provenance", r.offset() - 1);
  p.prov.kind = static_cast<PromptKind>(kind);
  p.prov.domain_key = r.get_string();
  p.prov.n_condition = r.get<std::uint32_t>();
  p.prov.seed = r.get<std::uint64_t>();
  p.p = Tensor(rows, cols);
  r.get_bytes(p.p.data(), p.p.size() * sizeof(double));
  if (!r.exhausted())
    throw FormatError("trailing bytes in prompt file '" + path + "'", r.offset());
  return p;
}

}  // namespace vdpg
