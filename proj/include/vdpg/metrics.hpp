#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <span>
#include <vector>

#include "vdpg/common.hpp"

namespace vdpg {

struct Metrics {
  std::size_t count = 0;
  double accuracy = 0.0;
  double macro_f1 = 0.0;
  double mse = 0.0;
  double pearson_r = 0.0;
};

inline Metrics classification_metrics(std::span<const std::int64_t> preds,
                                      std::span<const std::int64_t> labels,
                                      std::size_t num_classes) {
  if (preds.size() != labels.size())
    throw ContractError("classification_metrics: size mismatch");
  Metrics m;
  m.count = preds.size();
  if (preds.empty()) return m;

  std::size_t hits = 0;
  std::vector<std::size_t> tp(num_classes, 0), fp(num_classes, 0),
      fn(num_classes, 0);
  for (std::size_t i = 0; i < preds.size(); ++i) {
    const auto p = preds[i], y = labels[i];
    if (p == y) {
      ++hits;
      ++tp[static_cast<std::size_t>(y)];
    } else {
      if (p >= 0 && p < static_cast<std::int64_t>(num_classes))
        ++fp[static_cast<std::size_t>(p)];
      if (y >= 0 && y < static_cast<std::int64_t>(num_classes))
        ++fn[static_cast<std::size_t>(y)];
    }
  }
  m.accuracy = static_cast<double>(hits) / static_cast<double>(preds.size());
  // macro-F1 over all classes; an undefined per-class F1 counts as 0
  double f1_sum = 0.0;
  for (std::size_t c = 0; c < num_classes; ++c) {
    const double denom_p = static_cast<double>(tp[c] + fp[c]);
    const double denom_r = static_cast<double>(tp[c] + fn[c]);
    const double prec = denom_p > 0 ? tp[c] / denom_p : 0.0;
    const double rec = denom_r > 0 ? tp[c] / denom_r : 0.0;
    f1_sum += (prec + rec) > 0 ? 2.0 * prec * rec / (prec + rec) : 0.0;
  }
  m.macro_f1 = f1_sum / static_cast<double>(num_classes);
  return m;
}

inline double pearson(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size() || a.empty())
    throw ContractError("pearson: invalid inputs");
  const double n = static_cast<double>(a.size());
  double ma = 0, mb = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    ma += a[i];
    mb += b[i];
  }
  ma /= n;
  mb /= n;
  double cov = 0, va = 0, vb = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    cov += (a[i] - ma) * (b[i] - mb);
    va += (a[i] - ma) * (a[i] - ma);
    vb += (b[i] - mb) * (b[i] - mb);
  }
  if (va <= 0 || vb <= 0) return 0.0;  // constant input: correlation undefined
  return cov / std::sqrt(va * vb);
}

inline Metrics regression_metrics(std::span<const double> preds,
                                  std::span<const double> targets) {
  if (preds.size() != targets.size())
    throw ContractError("regression_metrics: size mismatch");
  Metrics m;
  m.count = preds.size();
  if (preds.empty()) return m;
  double se = 0.0;
  for (std::size_t i = 0; i < preds.size(); ++i) {
    const double d = preds[i] - targets[i];
    se += d * d;
  }
  m.mse = se / static_cast<double>(preds.size());
  m.pearson_r = pearson(preds, targets);
  return m;
}

// Spearman rank correlation with average ranks on ties.
inline double spearman(std::span<const double> a, std::span<const double> b) {
  auto ranks = [](std::span<const double> v) {
    const std::size_t n = v.size();
    std::vector<std::size_t> order(n);
    for (std::size_t i = 0; i < n; ++i) order[i] = i;
    std::sort(order.begin(), order.end(),
              [&](std::size_t x, std::size_t y) { return v[x] < v[y]; });
    std::vector<double> r(n);
    std::size_t i = 0;
    while (i < n) {
      std::size_t j = i;
      while (j + 1 < n && v[order[j + 1]] == v[order[i]]) ++j;
      const double avg = 0.5 * static_cast<double>(i + j) + 1.0;
      for (std::size_t k = i; k <= j; ++k) r[order[k]] = avg;
      i = j + 1;
    }
    return r;
  };
  const auto ra = ranks(a);
  const auto rb = ranks(b);
  return pearson(ra, rb);
}

}  // namespace vdpg
