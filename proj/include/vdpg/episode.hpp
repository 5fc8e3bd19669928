#pragma once

#include <map>
#include <set>
#include <span>
#include <string>
#include <vector>

#include "vdpg/dataset.hpp"
#include "vdpg/rng.hpp"

namespace vdpg {

// Immutable view over one or more loaded datasets, indexed by domain.
// Samplers hold only pointers; datasets must outlive the pool.
class DataPool {
 public:
  explicit DataPool(std::span<const Dataset> datasets) {
    if (datasets.empty()) throw ConfigError("DataPool: no datasets");
    header_ = datasets[0].header;
    for (const auto& ds : datasets) {
      if (ds.header.d != header_.d || ds.header.l != header_.l ||
          ds.header.task != header_.task ||
          ds.header.num_classes != header_.num_classes)
        throw ConfigError("DataPool: datasets disagree on d/l/task/num_classes");
      for (const auto& r : ds.records) by_domain_[r.domain_id].push_back(&r);
      hash_ = fnv1a64_u64(ds.content_hash(), hash_);
    }
  }

  const DatasetHeader& header() const { return header_; }
  std::uint64_t content_hash() const { return hash_; }

  std::size_t num_domains() const { return by_domain_.size(); }

  std::vector<std::uint32_t> domain_ids() const {
    std::vector<std::uint32_t> ids;
    ids.reserve(by_domain_.size());
    for (const auto& [id, recs] : by_domain_) ids.push_back(id);
    return ids;
  }

  const std::vector<const EmbeddingRecord*>& domain(std::uint32_t id) const {
    auto it = by_domain_.find(id);
    if (it == by_domain_.end())
      throw ContractError("DataPool: unknown domain_id " + std::to_string(id));
    return it->second;
  }

  std::size_t total_records() const {
    std::size_t n = 0;
    for (const auto& [id, recs] : by_domain_) n += recs.size();
    return n;
  }

 private:
  DatasetHeader header_;
  std::map<std::uint32_t, std::vector<const EmbeddingRecord*>> by_domain_;
  std::uint64_t hash_ = 0xcbf29ce484222325ull;
};

enum class DomainSampling { kUniform, kSizeProportional };

struct EpisodeConfig {
  std::size_t n_support = 16;
  std::size_t n_query = 48;
  std::size_t contrastive_domains = 2;  // C
  std::size_t per_domain = 8;
  bool include_query_in_x = true;
  DomainSampling sampling = DomainSampling::kUniform;
};

// One meta-training unit. Support and query are disjoint by record identity
// and share one domain; the contrastive batch X additionally carries records
// from other domains, each tagged with its domain id.
struct Episode {
  std::uint32_t domain_id = 0;
  std::vector<const EmbeddingRecord*> support;  // used as an unlabeled view
  std::vector<const EmbeddingRecord*> query;
  std::vector<std::pair<const EmbeddingRecord*, std::uint32_t>> contrastive;

  void check_invariants() const {
    std::set<const EmbeddingRecord*> sup(support.begin(), support.end());
    for (const auto* q : query)
      if (sup.count(q))
        throw ContractError("episode: support and query overlap");
    for (const auto* r : support)
      if (r->domain_id != domain_id)
        throw ContractError("episode: support record from foreign domain");
    for (const auto* r : query)
      if (r->domain_id != domain_id)
        throw ContractError("episode: query record from foreign domain");
  }
};

namespace detail {

inline std::uint32_t pick_domain(const DataPool& pool, Rng& rng,
                                 DomainSampling sampling,
                                 const std::vector<std::uint32_t>& eligible) {
  if (eligible.empty()) throw ConfigError("pick_domain: no eligible domains");
  if (sampling == DomainSampling::kUniform)
    return eligible[rng.index(eligible.size())];
  std::size_t total = 0;
  for (auto id : eligible) total += pool.domain(id).size();
  std::size_t ticket = rng.index(total);
  for (auto id : eligible) {
    const std::size_t n = pool.domain(id).size();
    if (ticket < n) return id;
    ticket -= n;
  }
  return eligible.back();
}

// Shrink query first (floor 8), then support (floor 4); never resample.
inline std::pair<std::size_t, std::size_t> fit_split(std::size_t available,
                                                     std::size_t n_support,
                                                     std::size_t n_query) {
  std::size_t s = n_support, q = n_query;
  if (available < s + q) {
    q = std::max<std::size_t>(std::min(q, available > s ? available - s : 0),
                              std::min<std::size_t>(8, n_query));
    if (available < s + q)
      s = std::max<std::size_t>(available > q ? available - q : 0,
                                std::min<std::size_t>(4, n_support));
  }
  return {s, q};
}

}  // namespace detail

inline bool domain_supports_episode(std::size_t available,
                                    const EpisodeConfig& cfg) {
  auto [s, q] = detail::fit_split(available, cfg.n_support, cfg.n_query);
  return s >= 1 && q >= 1 && s + q <= available;
}

// Samples the episode domain from p(s) and draws disjoint support/query sets
// without replacement. The contrastive batch X is left unset.
inline Episode sample_episode(const DataPool& pool, Rng& rng,
                              const EpisodeConfig& cfg = {}) {
  std::vector<std::uint32_t> eligible;
  for (auto id : pool.domain_ids())
    if (domain_supports_episode(pool.domain(id).size(), cfg))
      eligible.push_back(id);
  if (eligible.empty())
    throw ConfigError("sample_episode: no domain has enough records for even "
                      "the minimum 4 support + 8 query split");

  Episode ep;
  ep.domain_id = detail::pick_domain(pool, rng, cfg.sampling, eligible);
  const auto& recs = pool.domain(ep.domain_id);
  auto [s, q] = detail::fit_split(recs.size(), cfg.n_support, cfg.n_query);
  if (s != cfg.n_support || q != cfg.n_query)
    log_info("episode domain " + std::to_string(ep.domain_id) +
             " shrunk to support=" + std::to_string(s) +
             " query=" + std::to_string(q) + " (has " +
             std::to_string(recs.size()) + " records)");

  const auto idx = rng.sample_without_replacement(recs.size(), s + q);
  ep.support.reserve(s);
  ep.query.reserve(q);
  for (std::size_t i = 0; i < s; ++i) ep.support.push_back(recs[idx[i]]);
  for (std::size_t i = s; i < s + q; ++i) ep.query.push_back(recs[idx[i]]);
  return ep;
}

// Fills X = support [+ query] + a batch from each of C distinct other
// domains. C is clamped to what exists; a single-domain X is legal and the
// contrastive loss on it is defined as zero.
inline void build_contrastive_batch(const DataPool& pool, Episode& ep, Rng& rng,
                                    const EpisodeConfig& cfg = {}) {
  ep.contrastive.clear();
  for (const auto* r : ep.support) ep.contrastive.emplace_back(r, ep.domain_id);
  if (cfg.include_query_in_x)
    for (const auto* r : ep.query) ep.contrastive.emplace_back(r, ep.domain_id);

  std::vector<std::uint32_t> others;
  for (auto id : pool.domain_ids())
    if (id != ep.domain_id && !pool.domain(id).empty()) others.push_back(id);

  std::size_t c = cfg.contrastive_domains;
  if (c > others.size()) {
    log_warn("contrastive batch: only " + std::to_string(others.size()) +
             " other domains available, clamping C from " + std::to_string(c));
    c = others.size();
  }
  if (c == 0) {
    if (cfg.contrastive_domains > 0)
      log_warn("contrastive batch has a single domain; domain contrastive "
               "loss will be 0 for this episode");
    return;
  }

  const auto picked = rng.sample_without_replacement(others.size(), c);
  for (std::size_t pi : picked) {
    const std::uint32_t id = others[pi];
    const auto& recs = pool.domain(id);
    const std::size_t take = std::min(cfg.per_domain, recs.size());
    if (take < cfg.per_domain)
      log_info("contrastive domain " + std::to_string(id) + " supplies only " +
               std::to_string(take) + " records");
    for (std::size_t i : rng.sample_without_replacement(recs.size(), take))
      ep.contrastive.emplace_back(recs[i], id);
  }
}

}  // namespace vdpg
