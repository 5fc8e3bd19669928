#pragma once

#include <cmath>
#include <span>
#include <string>
#include <vector>

#include "vdpg/autodiff.hpp"
#include "vdpg/dataset.hpp"

namespace vdpg {

struct LossWeights {
  double lambda_corr = 0.1;
  double gamma_dac = 0.1;
  double tau = 0.1;

  void validate() const {
    if (!(tau > 0)) throw ConfigError("loss weights: tau must be positive");
  }
};

// "L2 loss" in the bank penalty is read as the Frobenius norm of the
// off-diagonal Gram matrix by default; the squared variant is selectable.
enum class CorrNorm { kFrobenius, kSquaredFrobenius };

// Prompt distance defaults to the mean squared elementwise difference so the
// temperature stays meaningful independent of Z and d; plain L2 selectable.
enum class PromptDistance { kMeanSquared, kL2Norm };

// Off-diagonal energy of B B^T. Zero iff bank rows are pairwise orthogonal.
inline Var corr_loss(Tape& t, Var bank, CorrNorm norm = CorrNorm::kFrobenius) {
  const Tensor& b = t.value(bank);
  Var gram = t.matmul(bank, t.transpose(bank));
  Tensor mask(b.rows(), b.rows(), 1.0);
  for (std::size_t i = 0; i < b.rows(); ++i) mask.at(i, i) = 0.0;
  Var off = t.mul(gram, t.constant(mask));
  Var energy = t.sum_all(t.square(off));
  return norm == CorrNorm::kFrobenius ? t.sqrt(energy) : energy;
}

inline Var prompt_distance_var(Tape& t, Var a, Var b, PromptDistance kind) {
  Var sq = t.square(t.sub(a, b));
  return kind == PromptDistance::kMeanSquared ? t.mean_all(sq)
                                              : t.sqrt(t.sum_all(sq));
}

inline double prompt_distance(const Tensor& a, const Tensor& b,
                              PromptDistance kind) {
  const double sq = squared_distance(a, b);
  return kind == PromptDistance::kMeanSquared
             ? sq / static_cast<double>(a.size())
             : std::sqrt(sq);
}

// Soft-nearest-neighbor loss over per-image prompts: for each record, the
// log-ratio of same-domain affinity mass to total affinity mass, averaged
// over records that have at least one same-domain partner. Records without a
// partner contribute nothing. All exponentials go through log-sum-exp.
inline Var dac_loss(Tape& t, std::span<const Var> prompts,
                    std::span<const std::uint32_t> domain_ids, double tau,
                    PromptDistance dist = PromptDistance::kMeanSquared,
                    bool* degenerate = nullptr) {
  if (prompts.size() != domain_ids.size())
    throw ContractError("dac_loss: prompts and domain_ids differ in length");
  if (degenerate) *degenerate = false;
  const std::size_t n = prompts.size();
  if (n < 2) {
    if (degenerate) *degenerate = true;
    log_warn("dac_loss: fewer than 2 records, returning 0");
    return t.constant(0.0);
  }
  bool single_domain = true;
  for (std::size_t i = 1; i < n && single_domain; ++i)
    single_domain = domain_ids[i] == domain_ids[0];
  if (single_domain) {
    if (degenerate) *degenerate = true;
    log_warn("dac_loss: contrastive batch has a single domain, returning 0");
    return t.constant(0.0);
  }

  // pairwise negative scaled distances, upper triangle only
  std::vector<Var> neg(n * n);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = i + 1; j < n; ++j) {
      Var e = t.scale(prompt_distance_var(t, prompts[i], prompts[j], dist),
                      -1.0 / tau);
      neg[i * n + j] = e;
      neg[j * n + i] = e;
    }

  std::vector<Var> terms;
  terms.reserve(n);
  for (std::size_t i = 0; i < n; ++i) {
    std::vector<Var> same, all;
    for (std::size_t j = 0; j < n; ++j) {
      if (j == i) continue;
      all.push_back(neg[i * n + j]);
      if (domain_ids[j] == domain_ids[i]) same.push_back(neg[i * n + j]);
    }
    if (same.empty()) continue;  // no partner: excluded from the average
    Var lse_same = t.logsumexp_all(t.concat_cols(same));
    Var lse_all = t.logsumexp_all(t.concat_cols(all));
    terms.push_back(t.sub(lse_all, lse_same));
  }
  if (terms.empty()) {
    if (degenerate) *degenerate = true;
    log_warn("dac_loss: no record has a same-domain partner, returning 0");
    return t.constant(0.0);
  }
  Var total = terms[0];
  for (std::size_t i = 1; i < terms.size(); ++i) total = t.add(total, terms[i]);
  return t.scale(total, 1.0 / static_cast<double>(terms.size()));
}

// Mean cross-entropy with log-sum-exp stabilization over an [n x K] logit
// batch, or mean squared error for regression.
inline Var task_loss_ce(Tape& t, Var logits,
                        std::span<const std::int64_t> targets) {
  const Tensor& lv = t.value(logits);
  if (lv.rows() != targets.size())
    throw ContractError("task_loss_ce: " + std::to_string(targets.size()) +
                        " targets for " + lv.shape_str() + " logits");
  const std::size_t k = lv.cols();
  Tensor pick(lv.rows(), k);
  Tensor rowmax(lv.rows(), 1);
  for (std::size_t i = 0; i < lv.rows(); ++i) {
    const std::int64_t y = targets[i];
    if (y < 0 || y >= static_cast<std::int64_t>(k))
      throw ContractError("task_loss_ce: target " + std::to_string(y) +
                          " outside [0, " + std::to_string(k) + ")");
    pick.at(i, static_cast<std::size_t>(y)) = 1.0;
    double mx = lv.at(i, 0);
    for (std::size_t j = 1; j < k; ++j) mx = std::max(mx, lv.at(i, j));
    rowmax.at(i, 0) = mx;  // detached shift; exact for value and gradient
  }
  Var shifted = t.sub(logits, t.constant(rowmax));
  Var lse = t.add(t.log(t.row_sum(t.exp(shifted))), t.constant(rowmax));
  Var picked = t.row_sum(t.mul(logits, t.constant(pick)));
  return t.mean_all(t.sub(lse, picked));
}

inline Var task_loss_mse(Tape& t, Var predictions,
                         std::span<const double> targets) {
  const Tensor& pv = t.value(predictions);
  if (pv.size() != targets.size())
    throw ContractError("task_loss_mse: " + std::to_string(targets.size()) +
                        " targets for " + pv.shape_str() + " predictions");
  Tensor y(pv.rows(), pv.cols());
  for (std::size_t i = 0; i < y.size(); ++i) {
    if (!std::isfinite(targets[i]))
      throw ContractError("task_loss_mse: non-finite target");
    y[i] = targets[i];
  }
  return t.mean_all(t.square(t.sub(predictions, t.constant(y))));
}

// L_all = L_task + lambda * L_corr + gamma * L_dac.
inline Var total_loss(Tape& t, Var task, Var corr, Var dac,
                      const LossWeights& w) {
  Var out = task;
  out = t.add(out, t.scale(corr, w.lambda_corr));
  out = t.add(out, t.scale(dac, w.gamma_dac));
  return out;
}

}  // namespace vdpg
