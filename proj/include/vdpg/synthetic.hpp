#pragma once

#include <cmath>
#include <map>
#include <string>
#include <vector>

#include <json.hpp>

#include "vdpg/dataset.hpp"
#include "vdpg/rng.hpp"
#include "vdpg/tensor.hpp"

namespace vdpg {

// Synthetic domain-shift benchmark. Classes live as Gaussian clusters around
// latent means; each domain applies its own bounded rotation, shift and scale
// to every token row. Keeping the generative parameters makes the exact Bayes
// classifier available as a verifiable accuracy ceiling.

struct SyntheticConfig {
  std::uint32_t d = 16;
  std::uint32_t l = 8;
  std::uint32_t num_classes = 5;
  std::uint32_t num_source_domains = 6;
  std::uint32_t num_target_domains = 3;
  std::uint32_t samples_per_domain = 300;
  double class_separation = 4.0;
  double token_noise_sigma = 0.6;
  double domain_rotation_angle_max = 1.2;  // radians
  double domain_shift_sigma = 1.0;
  double domain_scale_lo = 0.85;
  double domain_scale_hi = 1.2;
  std::uint64_t seed = 1;

  void validate() const {
    if (d == 0 || l == 0) throw ConfigError("synthetic: d and l must be >= 1");
    if (num_classes == 0) throw ConfigError("synthetic: zero classes");
    if (samples_per_domain == 0) throw ConfigError("synthetic: zero samples per domain");
    if (num_source_domains < 2)
      throw ConfigError("synthetic: need >= 2 source domains (the domain "
                        "contrastive loss is undefined with one)");
    if (num_target_domains == 0) throw ConfigError("synthetic: zero target domains");
    if (class_separation < 0 || token_noise_sigma < 0 ||
        domain_rotation_angle_max < 0 || domain_shift_sigma < 0)
      throw ConfigError("synthetic: negative scale parameter");
    if (!(domain_scale_lo > 0) || domain_scale_lo > domain_scale_hi)
      throw ConfigError("synthetic: scale range must satisfy 0 < lo <= hi");
  }

  bool no_shift() const {
    return domain_rotation_angle_max == 0.0 && domain_shift_sigma == 0.0 &&
           domain_scale_lo == 1.0 && domain_scale_hi == 1.0;
  }
};

struct DomainTransform {
  std::uint32_t domain_id = 0;
  Tensor rotation;  // d x d orthogonal
  Tensor shift;     // 1 x d
  double scale_factor = 1.0;
};

struct GenerativeParams {
  SyntheticConfig cfg;
  Tensor class_means;  // K x d
  std::map<std::uint32_t, DomainTransform> domains;
};

struct SyntheticData {
  std::vector<Dataset> sources;   // domain ids 0 .. N-1
  std::vector<Dataset> targets;   // domain ids N .. N+M-1
  GenerativeParams params;
};

namespace detail {

// Random orthonormal basis via modified Gram-Schmidt on a Gaussian matrix.
inline Tensor random_orthonormal(Rng& rng, std::size_t d) {
  Tensor q(d, d);
  for (std::size_t attempt = 0;; ++attempt) {
    for (std::size_t i = 0; i < q.size(); ++i) q[i] = rng.normal();
    bool ok = true;
    for (std::size_t i = 0; i < d && ok; ++i) {
      for (std::size_t k = 0; k < i; ++k) {
        double proj = 0.0;
        for (std::size_t j = 0; j < d; ++j) proj += q.at(i, j) * q.at(k, j);
        for (std::size_t j = 0; j < d; ++j) q.at(i, j) -= proj * q.at(k, j);
      }
      double nrm = 0.0;
      for (std::size_t j = 0; j < d; ++j) nrm += q.at(i, j) * q.at(i, j);
      nrm = std::sqrt(nrm);
      if (nrm < 1e-10) {
        ok = false;
        break;
      }
      for (std::size_t j = 0; j < d; ++j) q.at(i, j) /= nrm;
    }
    if (ok) return q;
    if (attempt > 16) throw NumericError("random_orthonormal failed to converge");
  }
}

// Orthogonal map whose principal rotation angles are all <= angle_max:
// R = Q^T blockdiag(rot(theta_1), ..., rot(theta_{d/2})) Q.
inline Tensor bounded_rotation(Rng& rng, std::size_t d, double angle_max) {
  Tensor q = random_orthonormal(rng, d);
  Tensor block(d, d);
  std::size_t i = 0;
  for (; i + 1 < d; i += 2) {
    const double theta = rng.uniform(-angle_max, angle_max);
    block.at(i, i) = std::cos(theta);
    block.at(i, i + 1) = -std::sin(theta);
    block.at(i + 1, i) = std::sin(theta);
    block.at(i + 1, i + 1) = std::cos(theta);
  }
  if (i < d) block.at(i, i) = 1.0;
  return matmul(transpose(q), matmul(block, q));
}

inline Tensor sample_class_means(Rng& rng, std::uint32_t k, std::uint32_t d,
                                 double separation) {
  for (int attempt = 0; attempt < 64; ++attempt) {
    Tensor means(k, d);
    for (std::size_t i = 0; i < means.size(); ++i) means[i] = rng.normal();
    if (k == 1) return means;
    double min_dist = std::numeric_limits<double>::infinity();
    for (std::uint32_t a = 0; a < k; ++a)
      for (std::uint32_t b = a + 1; b < k; ++b)
        min_dist = std::min(min_dist,
                            std::sqrt(squared_distance(means.row(a), means.row(b))));
    if (min_dist < 1e-9) continue;
    // rescale so the closest pair sits exactly at the requested separation
    if (min_dist < separation) {
      const double f = separation / min_dist;
      for (std::size_t i = 0; i < means.size(); ++i) means[i] *= f;
    }
    return means;
  }
  throw NumericError("sample_class_means: degenerate draws");
}

inline Dataset make_domain(const SyntheticConfig& cfg, const Tensor& means,
                           const DomainTransform& tf, Rng& rng) {
  Dataset ds;
  ds.header.d = cfg.d;
  ds.header.l = cfg.l;
  ds.header.num_classes = cfg.num_classes;
  ds.header.task = TaskKind::kClassification;
  ds.header.storage = StorageKind::kF64;
  ds.header.num_records = cfg.samples_per_domain;
  ds.records.reserve(cfg.samples_per_domain);
  for (std::uint32_t i = 0; i < cfg.samples_per_domain; ++i) {
    const std::uint32_t c = i % cfg.num_classes;  // balanced classes
    EmbeddingRecord rec;
    rec.domain_id = tf.domain_id;
    rec.label = c;
    rec.tokens = Tensor(cfg.l, cfg.d);
    Tensor latent(1, cfg.d);
    for (std::uint32_t t = 0; t < cfg.l; ++t) {
      for (std::uint32_t j = 0; j < cfg.d; ++j)
        latent[j] = means.at(c, j) + cfg.token_noise_sigma * rng.normal();
      Tensor mapped = matmul(latent, transpose(tf.rotation));
      for (std::uint32_t j = 0; j < cfg.d; ++j)
        rec.tokens.at(t, j) = tf.scale_factor * mapped[j] + tf.shift[j];
    }
    ds.records.push_back(std::move(rec));
  }
  return ds;
}

}  // namespace detail

inline SyntheticData synth_generate(const SyntheticConfig& cfg) {
  cfg.validate();
  SyntheticData out;
  out.params.cfg = cfg;

  Rng means_rng = Rng::derive(cfg.seed, 0);
  out.params.class_means = detail::sample_class_means(
      means_rng, cfg.num_classes, cfg.d, cfg.class_separation);

  const std::uint32_t total = cfg.num_source_domains + cfg.num_target_domains;
  for (std::uint32_t m = 0; m < total; ++m) {
    Rng dom_rng = Rng::derive(cfg.seed, 1 + m);
    DomainTransform tf;
    tf.domain_id = m;
    tf.rotation = detail::bounded_rotation(dom_rng, cfg.d,
                                           cfg.domain_rotation_angle_max);
    tf.shift = Tensor(1, cfg.d);
    for (std::uint32_t j = 0; j < cfg.d; ++j)
      tf.shift[j] = cfg.domain_shift_sigma * dom_rng.normal();
    tf.scale_factor = dom_rng.uniform(cfg.domain_scale_lo, cfg.domain_scale_hi);

    Dataset ds = detail::make_domain(cfg, out.params.class_means, tf, dom_rng);
    out.params.domains.emplace(m, tf);
    if (m < cfg.num_source_domains)
      out.sources.push_back(std::move(ds));
    else
      out.targets.push_back(std::move(ds));
  }
  return out;
}

// Exact posterior classifier under the known generative model: undo the
// domain transform, score token rows against every class mean, argmax the
// posterior (argmin total squared distance). Ties break to the lower class.
inline std::int64_t bayes_oracle(const GenerativeParams& gp,
                                 const EmbeddingRecord& record) {
  auto it = gp.domains.find(record.domain_id);
  if (it == gp.domains.end())
    throw ContractError("bayes_oracle: unknown domain_id " +
                        std::to_string(record.domain_id));
  const DomainTransform& tf = it->second;
  const std::uint32_t k = gp.cfg.num_classes;
  const std::size_t l = record.tokens.rows(), d = record.tokens.cols();

  std::vector<double> score(k, 0.0);
  Tensor row(1, d);
  for (std::size_t t = 0; t < l; ++t) {
    for (std::size_t j = 0; j < d; ++j)
      row[j] = (record.tokens.at(t, j) - tf.shift[j]) / tf.scale_factor;
    Tensor latent = matmul(row, tf.rotation);  // row * R == (R^T row^T)^T
    for (std::uint32_t c = 0; c < k; ++c)
      score[c] += squared_distance(latent, gp.class_means.row(c));
  }
  std::int64_t best = 0;
  for (std::uint32_t c = 1; c < k; ++c)
    if (score[c] < score[best]) best = c;
  return best;
}

inline double oracle_accuracy(const GenerativeParams& gp, const Dataset& ds) {
  if (ds.records.empty()) return 0.0;
  std::size_t hits = 0;
  for (const auto& r : ds.records)
    if (bayes_oracle(gp, r) == r.label) ++hits;
  return static_cast<double>(hits) / static_cast<double>(ds.records.size());
}

// --- JSON serialization of the generative parameters -----------------------

inline nlohmann::json tensor_to_json(const Tensor& t) {
  nlohmann::json rows = nlohmann::json::array();
  for (std::size_t i = 0; i < t.rows(); ++i) {
    nlohmann::json row = nlohmann::json::array();
    for (std::size_t j = 0; j < t.cols(); ++j) row.push_back(t.at(i, j));
    rows.push_back(std::move(row));
  }
  return rows;
}

inline Tensor tensor_from_json(const nlohmann::json& j) {
  if (!j.is_array() || j.empty()) throw ConfigError("tensor json: expected rows");
  const std::size_t r = j.size(), c = j[0].size();
  Tensor t(r, c);
  for (std::size_t i = 0; i < r; ++i) {
    if (j[i].size() != c) throw ConfigError("tensor json: ragged rows");
    for (std::size_t k = 0; k < c; ++k) t.at(i, k) = j[i][k].get<double>();
  }
  return t;
}

inline nlohmann::json synthetic_config_to_json(const SyntheticConfig& c) {
  return {{"d", c.d},
          {"l", c.l},
          {"num_classes", c.num_classes},
          {"num_source_domains", c.num_source_domains},
          {"num_target_domains", c.num_target_domains},
          {"samples_per_domain", c.samples_per_domain},
          {"class_separation", c.class_separation},
          {"token_noise_sigma", c.token_noise_sigma},
          {"domain_rotation_angle_max", c.domain_rotation_angle_max},
          {"domain_shift_sigma", c.domain_shift_sigma},
          {"domain_scale_range", {c.domain_scale_lo, c.domain_scale_hi}},
          {"seed", c.seed}};
}

inline nlohmann::json generative_params_to_json(const GenerativeParams& gp) {
  nlohmann::json domains = nlohmann::json::array();
  for (const auto& [id, tf] : gp.domains) {
    domains.push_back({{"domain_id", id},
                       {"rotation", tensor_to_json(tf.rotation)},
                       {"shift", tensor_to_json(tf.shift)},
                       {"scale", tf.scale_factor}});
  }
  return {{"config", synthetic_config_to_json(gp.cfg)},
          {"class_means", tensor_to_json(gp.class_means)},
          {"domains", std::move(domains)}};
}

inline GenerativeParams generative_params_from_json(const nlohmann::json& j) {
  GenerativeParams gp;
  const auto& c = j.at("config");
  gp.cfg.d = c.at("d").get<std::uint32_t>();
  gp.cfg.l = c.at("l").get<std::uint32_t>();
  gp.cfg.num_classes = c.at("num_classes").get<std::uint32_t>();
  gp.cfg.num_source_domains = c.at("num_source_domains").get<std::uint32_t>();
  gp.cfg.num_target_domains = c.at("num_target_domains").get<std::uint32_t>();
  gp.cfg.samples_per_domain = c.at("samples_per_domain").get<std::uint32_t>();
  gp.cfg.class_separation = c.at("class_separation").get<double>();
  gp.cfg.token_noise_sigma = c.at("token_noise_sigma").get<double>();
  gp.cfg.domain_rotation_angle_max =
      c.at("domain_rotation_angle_max").get<double>();
  gp.cfg.domain_shift_sigma = c.at("domain_shift_sigma").get<double>();
  gp.cfg.domain_scale_lo = c.at("domain_scale_range").at(0).get<double>();
  gp.cfg.domain_scale_hi = c.at("domain_scale_range").at(1).get<double>();
  gp.cfg.seed = c.at("seed").get<std::uint64_t>();
  gp.class_means = tensor_from_json(j.at("class_means"));
  for (const auto& dj : j.at("domains")) {
    DomainTransform tf;
    tf.domain_id = dj.at("domain_id").get<std::uint32_t>();
    tf.rotation = tensor_from_json(dj.at("rotation"));
    tf.shift = tensor_from_json(dj.at("shift"));
    tf.scale_factor = dj.at("scale").get<double>();
    gp.domains.emplace(tf.domain_id, tf);
  }
  return gp;
}

}  // namespace vdpg
