#pragma once

#include <cmath>
#include <cstdint>
#include <functional>
#include <map>
#include <numbers>
#include <string>
#include <vector>

#include "vdpg/params.hpp"
#include "vdpg/rng.hpp"

namespace vdpg {

// Plain SGD with cosine learning-rate decay:
//   lr(step) = base_lr * 0.5 * (1 + cos(pi * step / total_steps)).
// Momentum and weight decay exist as knobs but default to off.
struct OptimizerState {
  double base_lr = 3e-3;
  std::size_t step = 0;
  std::size_t total_steps = 1;
  double momentum = 0.0;
  double weight_decay = 0.0;
  std::map<std::string, Tensor> velocity;

  double lr() const { return lr_at(step); }

  double lr_at(std::size_t s) const {
    if (total_steps == 0) return base_lr;
    const double frac =
        static_cast<double>(s) / static_cast<double>(total_steps);
    return base_lr * 0.5 * (1.0 + std::cos(std::numbers::pi * frac));
  }
};

// One update over every trainable parameter; frozen tensors untouched.
inline void sgd_step(ParamStore& params, const GradMap& grads,
                     OptimizerState& opt) {
  const double lr = opt.lr();
  for (const auto& [name, entry] : params) {
    if (!entry.trainable) continue;
    auto it = grads.find(name);
    if (it == grads.end())
      throw ContractError("sgd_step: missing gradient for trainable parameter '" +
                          name + "'");
    const Tensor& g = it->second;
    Tensor& theta = params.at(name);
    if (!g.same_shape(theta))
      throw ShapeError("sgd_step: gradient shape " + g.shape_str() +
                       " vs parameter " + theta.shape_str() + " for '" + name + "'");
    if (opt.momentum > 0.0) {
      Tensor& v = opt.velocity.try_emplace(name, theta.rows(), theta.cols())
                      .first->second;
      for (std::size_t i = 0; i < theta.size(); ++i) {
        double gi = g[i] + opt.weight_decay * theta[i];
        v[i] = opt.momentum * v[i] + gi;
        theta[i] -= lr * v[i];
      }
    } else {
      for (std::size_t i = 0; i < theta.size(); ++i) {
        double gi = g[i] + opt.weight_decay * theta[i];
        theta[i] -= lr * gi;
      }
    }
  }
  ++opt.step;
}

struct LossEval {
  double value = 0.0;
  GradMap grads;
};

// value + analytic gradients when want_grads, value only otherwise.
using LossFn = std::function<LossEval(const ParamStore&, bool want_grads)>;

struct GradCheckOptions {
  double eps = 1e-5;
  // 0 = sweep every entry; otherwise a seeded random subsample of at least
  // this many entries (clamped up to 200 when positive).
  std::size_t subsample = 0;
  std::uint64_t seed = 0;
};

struct GradCheckReport {
  double max_rel_error = 0.0;
  std::size_t entries_checked = 0;
  std::string worst_entry;
};

// Central finite differences against the analytic gradient. Relative error
// uses max(|analytic|, |numeric|, 1e-8) as denominator.
inline GradCheckReport grad_check(const LossFn& loss_fn, const ParamStore& params,
                                  const GradCheckOptions& opts = {}) {
  if (!(opts.eps >= 1e-7 && opts.eps <= 1e-3))
    throw ContractError("grad_check: eps must lie in [1e-7, 1e-3]");

  const LossEval base = loss_fn(params, true);
  const LossEval repeat = loss_fn(params, false);
  if (base.value != repeat.value)
    throw ContractError("grad_check: loss_fn is non-deterministic across evaluations");

  struct EntryRef {
    std::string name;
    std::size_t flat;
  };
  std::vector<EntryRef> entries;
  for (const auto& [name, e] : params) {
    if (!e.trainable) continue;
    for (std::size_t i = 0; i < e.value.size(); ++i) entries.push_back({name, i});
  }

  std::vector<std::size_t> chosen;
  if (opts.subsample > 0 && opts.subsample < entries.size()) {
    const std::size_t want = std::max<std::size_t>(opts.subsample, 200);
    Rng rng = Rng::derive(opts.seed, 0x67636863u);  // grad-check stream
    chosen = rng.sample_without_replacement(
        entries.size(), std::min(want, entries.size()));
  } else {
    chosen.resize(entries.size());
    for (std::size_t i = 0; i < entries.size(); ++i) chosen[i] = i;
  }

  GradCheckReport report;
  ParamStore work = params;
  for (std::size_t pick : chosen) {
    const EntryRef& ref = entries[pick];
    Tensor& t = work.at(ref.name);
    const double saved = t[ref.flat];
    t[ref.flat] = saved + opts.eps;
    const double fp = loss_fn(work, false).value;
    t[ref.flat] = saved - opts.eps;
    const double fm = loss_fn(work, false).value;
    t[ref.flat] = saved;

    const double numeric = (fp - fm) / (2.0 * opts.eps);
    auto git = base.grads.find(ref.name);
    const double analytic = git == base.grads.end() ? 0.0 : git->second[ref.flat];
    const double denom =
        std::max({std::fabs(analytic), std::fabs(numeric), 1e-8});
    const double rel = std::fabs(analytic - numeric) / denom;
    if (rel > report.max_rel_error) {
      report.max_rel_error = rel;
      report.worst_entry = ref.name + "[" + std::to_string(ref.flat) + "]";
    }
    ++report.entries_checked;
  }
  return report;
}

}  // namespace vdpg
