#pragma once

#include <set>
#include <span>
#include <string>
#include <vector>

#include "vdpg/adapt.hpp"
#include "vdpg/episode.hpp"
#include "vdpg/metrics.hpp"
#include "vdpg/model.hpp"

namespace vdpg {

enum class EvalProtocol {
  kAdaptPerDomain,  // per domain: prompt from k unlabeled records, test the rest
  kZeroPrompt,
  kGivenPrompt,
};

struct EvalOptions {
  EvalProtocol protocol = EvalProtocol::kAdaptPerDomain;
  std::size_t k = kDefaultAdaptK;
  std::uint64_t seed = 0;
  const DomainPrompt* given = nullptr;
};

struct DomainResult {
  std::uint32_t domain_id = 0;
  std::size_t adapt_records = 0;
  Metrics metrics;
};

struct EvalReport {
  Metrics overall;                    // micro over every evaluated record
  std::vector<DomainResult> per_domain;
  Metrics worst_case;                 // worst per-domain value per metric
};

namespace detail {

inline Metrics worst_of(const std::vector<DomainResult>& per_domain) {
  Metrics w;
  bool first = true;
  for (const auto& d : per_domain) {
    if (d.metrics.count == 0) continue;
    if (first) {
      w = d.metrics;
      first = false;
      continue;
    }
    w.accuracy = std::min(w.accuracy, d.metrics.accuracy);
    w.macro_f1 = std::min(w.macro_f1, d.metrics.macro_f1);
    w.mse = std::max(w.mse, d.metrics.mse);
    w.pearson_r = std::min(w.pearson_r, d.metrics.pearson_r);
    w.count += d.metrics.count;
  }
  return w;
}

}  // namespace detail

// Evaluates target domains under one of the prompt protocols. Adaptation
// records never overlap the records they are evaluated on; the split is
// audited per domain.
inline EvalReport eval_model(const ParamStore& params, const ModelConfig& cfg,
                             const DataPool& pool, const EvalOptions& opts = {}) {
  EvalReport report;
  std::vector<std::int64_t> all_preds, all_labels;
  std::vector<double> all_regs, all_targets;

  for (std::uint32_t domain_id : pool.domain_ids()) {
    const auto& recs = pool.domain(domain_id);
    DomainResult dr;
    dr.domain_id = domain_id;

    std::vector<const EmbeddingRecord*> adapt_set, eval_set;
    if (opts.protocol == EvalProtocol::kAdaptPerDomain) {
      std::size_t k = opts.k;
      if (k >= recs.size()) {
        log_warn("eval: domain " + std::to_string(domain_id) + " has only " +
                 std::to_string(recs.size()) +
                 " records; using all for adaptation leaves none to score");
        k = recs.size();
      }
      Rng rng = Rng::derive(opts.seed, 0xe5a1u ^ domain_id);
      std::set<std::size_t> chosen;
      for (std::size_t i : rng.sample_without_replacement(recs.size(), k))
        chosen.insert(i);
      for (std::size_t i = 0; i < recs.size(); ++i)
        (chosen.count(i) ? adapt_set : eval_set).push_back(recs[i]);
    } else {
      eval_set = recs;
    }

    // disjointness audit
    {
      std::set<const EmbeddingRecord*> a(adapt_set.begin(), adapt_set.end());
      for (const auto* r : eval_set)
        if (a.count(r))
          throw ContractError("eval: adaptation record reused for scoring in "
                              "domain " + std::to_string(domain_id));
    }
    dr.adapt_records = adapt_set.size();
    if (eval_set.empty()) {
      report.per_domain.push_back(dr);
      continue;
    }

    DomainPrompt prompt;
    switch (opts.protocol) {
      case EvalProtocol::kAdaptPerDomain:
        prompt = adapt(params, cfg, adapt_set, adapt_set.size(),
                       std::to_string(domain_id));
        break;
      case EvalProtocol::kZeroPrompt:
        prompt = zeros_prompt(cfg);
        break;
      case EvalProtocol::kGivenPrompt:
        if (!opts.given) throw ContractError("eval: given-prompt protocol needs a prompt");
        prompt = *opts.given;
        break;
    }

    const std::vector<Tensor> outputs = infer(params, cfg, prompt, eval_set);
    if (cfg.task == TaskKind::kClassification) {
      std::vector<std::int64_t> preds, labels;
      preds.reserve(eval_set.size());
      for (std::size_t i = 0; i < eval_set.size(); ++i) {
        preds.push_back(argmax_class(outputs[i]));
        labels.push_back(eval_set[i]->label);
      }
      dr.metrics = classification_metrics(preds, labels, cfg.num_classes);
      all_preds.insert(all_preds.end(), preds.begin(), preds.end());
      all_labels.insert(all_labels.end(), labels.begin(), labels.end());
    } else {
      std::vector<double> preds, targets;
      for (std::size_t i = 0; i < eval_set.size(); ++i) {
        preds.push_back(outputs[i][0]);
        targets.push_back(eval_set[i]->target);
      }
      dr.metrics = regression_metrics(preds, targets);
      all_regs.insert(all_regs.end(), preds.begin(), preds.end());
      all_targets.insert(all_targets.end(), targets.begin(), targets.end());
    }
    report.per_domain.push_back(dr);
  }

  report.overall = cfg.task == TaskKind::kClassification
                       ? classification_metrics(all_preds, all_labels, cfg.num_classes)
                       : regression_metrics(all_regs, all_targets);
  report.worst_case = detail::worst_of(report.per_domain);
  return report;
}

}  // namespace vdpg
