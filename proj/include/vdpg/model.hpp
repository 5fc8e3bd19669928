#pragma once

#include <cmath>
#include <span>
#include <string>
#include <vector>

#include "vdpg/autodiff.hpp"
#include "vdpg/dataset.hpp"
#include "vdpg/params.hpp"
#include "vdpg/rng.hpp"

namespace vdpg {

// Architecture: a learnable knowledge bank B [Z x d]; a prompt generator G of
// stacked cross-attention blocks with bank rows as queries and one image's
// token embeddings as keys/values, batch-averaged into a domain prompt
// P [Z x d]; a guidance module GM of two-way blocks mixing [P; CLS] with the
// image tokens; an MLP head on the final CLS row.
//
// Block interiors (pre-norm, residual, 2x feed-forward) are standard
// transformer practice and individually toggleable, so the bare
// attention-only stack remains testable.

struct ModelConfig {
  std::uint32_t d = 16;
  std::uint32_t heads = 8;
  std::uint32_t bank_size = 4;  // Z
  std::uint32_t generator_blocks = 2;
  std::uint32_t guidance_blocks = 2;
  std::uint32_t ffn_mult = 2;
  bool use_residual = true;
  bool use_norm = true;
  bool use_ffn = true;
  TaskKind task = TaskKind::kClassification;
  std::uint32_t num_classes = 5;

  void validate() const {
    if (d == 0 || bank_size == 0 || generator_blocks == 0 || guidance_blocks == 0)
      throw ConfigError("model: d, Z and block counts must be >= 1");
    if (heads == 0 || d % heads != 0)
      throw ConfigError("model: feature dimension " + std::to_string(d) +
                        " not divisible by heads=" + std::to_string(heads));
    if (ffn_mult == 0) throw ConfigError("model: ffn_mult must be >= 1");
    if (task == TaskKind::kClassification && num_classes == 0)
      throw ConfigError("model: classification needs num_classes >= 1");
  }

  std::uint32_t head_out() const {
    return task == TaskKind::kClassification ? num_classes : 1;
  }
};

enum class PromptKind : std::uint8_t {
  kGenerated = 0,
  kZeros = 1,
  kRandom = 2,
  kBankCopy = 3,
};

struct PromptProvenance {
  PromptKind kind = PromptKind::kGenerated;
  std::string domain_key;
  std::uint32_t n_condition = 0;
  std::uint64_t seed = 0;
};

struct DomainPrompt {
  Tensor p;  // Z x d
  PromptProvenance prov;
};

namespace nn {

inline Tensor uniform_fan_in(Rng& rng, std::size_t fan_in, std::size_t rows,
                             std::size_t cols) {
  const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
  Tensor t(rows, cols);
  for (std::size_t i = 0; i < t.size(); ++i) t[i] = rng.uniform(-bound, bound);
  return t;
}

inline Tensor gaussian(Rng& rng, std::size_t rows, std::size_t cols, double sd) {
  Tensor t(rows, cols);
  for (std::size_t i = 0; i < t.size(); ++i) t[i] = sd * rng.normal();
  return t;
}

inline Var layer_norm(Tape& t, Var x, Var gamma, Var beta) {
  Var mu = t.row_mean(x);
  Var xc = t.sub(x, mu);
  Var var = t.row_mean(t.square(xc));
  // 1/sqrt(var + eps) via exp(-0.5 log(.)), staying inside the primitive set
  Var rstd = t.exp(t.scale(t.log(t.add_scalar(var, 1e-5)), -0.5));
  return t.add(t.mul(t.mul(xc, rstd), gamma), beta);
}

inline Var softplus(Tape& t, Var x) {
  return t.log(t.add_scalar(t.exp(x), 1.0));
}

struct AttnRefs {
  Var wq, wk, wv, wo;
};

// softmax(Q K^T / sqrt(d_head)) V per head slice, then the output projection.
inline Var attention(Tape& t, const AttnRefs& w, Var q_stream, Var kv_stream,
                     std::uint32_t heads) {
  Var q = t.matmul(q_stream, w.wq);
  Var k = t.matmul(kv_stream, w.wk);
  Var v = t.matmul(kv_stream, w.wv);
  const std::size_t n = t.value(q).rows();
  const std::size_t m = t.value(k).rows();
  const std::size_t h = t.value(q).cols();
  const std::size_t dh = h / heads;
  const double inv_scale = 1.0 / std::sqrt(static_cast<double>(dh));

  std::vector<Var> outs;
  outs.reserve(heads);
  for (std::uint32_t i = 0; i < heads; ++i) {
    const std::size_t c0 = i * dh, c1 = (i + 1) * dh;
    Var qh = heads == 1 ? q : t.slice(q, 0, n, c0, c1);
    Var kh = heads == 1 ? k : t.slice(k, 0, m, c0, c1);
    Var vh = heads == 1 ? v : t.slice(v, 0, m, c0, c1);
    Var scores = t.scale(t.matmul(qh, t.transpose(kh)), inv_scale);
    outs.push_back(t.matmul(t.softmax_rows(scores), vh));
  }
  Var cat = heads == 1 ? outs[0] : t.concat_cols(outs);
  return t.matmul(cat, w.wo);
}

struct LnRefs {
  Var gamma, beta;
};

struct FfnRefs {
  Var w1, b1, w2, b2;
};

inline Var ffn(Tape& t, const FfnRefs& w, Var x) {
  Var hidden = softplus(t, t.add(t.matmul(x, w.w1), w.b1));
  return t.add(t.matmul(hidden, w.w2), w.b2);
}

struct CrossBlockRefs {
  AttnRefs attn;
  LnRefs ln_q, ln_kv, ln_f;
  FfnRefs f;
};

inline Var cross_block(Tape& t, const ModelConfig& cfg, const CrossBlockRefs& w,
                       Var x_q, Var x_kv) {
  Var qin = cfg.use_norm ? layer_norm(t, x_q, w.ln_q.gamma, w.ln_q.beta) : x_q;
  Var kvin =
      cfg.use_norm ? layer_norm(t, x_kv, w.ln_kv.gamma, w.ln_kv.beta) : x_kv;
  Var a = attention(t, w.attn, qin, kvin, cfg.heads);
  Var x1 = cfg.use_residual ? t.add(x_q, a) : a;
  if (cfg.use_ffn) {
    Var fin = cfg.use_norm ? layer_norm(t, x1, w.ln_f.gamma, w.ln_f.beta) : x1;
    Var f = ffn(t, w.f, fin);
    x1 = cfg.use_residual ? t.add(x1, f) : f;
  }
  return x1;
}

inline AttnRefs attn_refs(const BoundParams& b, const std::string& prefix) {
  return {b(prefix + ".wq"), b(prefix + ".wk"), b(prefix + ".wv"),
          b(prefix + ".wo")};
}

inline LnRefs ln_refs(const BoundParams& b, const std::string& prefix) {
  return {b(prefix + ".gamma"), b(prefix + ".beta")};
}

inline FfnRefs ffn_refs(const BoundParams& b, const std::string& prefix) {
  return {b(prefix + ".w1"), b(prefix + ".b1"), b(prefix + ".w2"),
          b(prefix + ".b2")};
}

inline CrossBlockRefs cross_block_refs(const BoundParams& b,
                                       const std::string& prefix) {
  return {attn_refs(b, prefix + ".attn"), ln_refs(b, prefix + ".ln_q"),
          ln_refs(b, prefix + ".ln_kv"), ln_refs(b, prefix + ".ln_f"),
          ffn_refs(b, prefix + ".ffn")};
}

}  // namespace nn

// All trainables, deterministically initialized from the seed.
inline ParamStore init_params(const ModelConfig& cfg, std::uint64_t seed) {
  cfg.validate();
  Rng rng = Rng::derive(seed, 0x6d6f64656cull);
  const std::size_t d = cfg.d;
  const std::size_t f = d * cfg.ffn_mult;
  const double bank_sd = 1.0 / std::sqrt(static_cast<double>(d));

  ParamStore p;
  p.add("bank", nn::gaussian(rng, cfg.bank_size, d, bank_sd));
  p.add("cls", nn::gaussian(rng, 1, d, bank_sd));

  auto add_attn = [&](const std::string& prefix) {
    p.add(prefix + ".wq", nn::uniform_fan_in(rng, d, d, d));
    p.add(prefix + ".wk", nn::uniform_fan_in(rng, d, d, d));
    p.add(prefix + ".wv", nn::uniform_fan_in(rng, d, d, d));
    p.add(prefix + ".wo", nn::uniform_fan_in(rng, d, d, d));
  };
  auto add_ln = [&](const std::string& prefix) {
    p.add(prefix + ".gamma", Tensor(1, d, 1.0));
    p.add(prefix + ".beta", Tensor(1, d, 0.0));
  };
  auto add_ffn = [&](const std::string& prefix) {
    p.add(prefix + ".w1", nn::uniform_fan_in(rng, d, d, f));
    p.add(prefix + ".b1", Tensor(1, f, 0.0));
    p.add(prefix + ".w2", nn::uniform_fan_in(rng, f, f, d));
    p.add(prefix + ".b2", Tensor(1, d, 0.0));
  };
  auto add_cross_block = [&](const std::string& prefix) {
    add_attn(prefix + ".attn");
    add_ln(prefix + ".ln_q");
    add_ln(prefix + ".ln_kv");
    add_ln(prefix + ".ln_f");
    add_ffn(prefix + ".ffn");
  };

  for (std::uint32_t i = 0; i < cfg.generator_blocks; ++i)
    add_cross_block("gen." + std::to_string(i));

  for (std::uint32_t i = 0; i < cfg.guidance_blocks; ++i) {
    const std::string g = "guide." + std::to_string(i);
    add_attn(g + ".self.attn");
    add_ln(g + ".self.ln");
    add_attn(g + ".pi.attn");
    add_ln(g + ".pi.ln_q");
    add_ln(g + ".pi.ln_kv");
    add_ffn(g + ".ffn");
    add_ln(g + ".ln_f");
    add_attn(g + ".ip.attn");
    add_ln(g + ".ip.ln_q");
    add_ln(g + ".ip.ln_kv");
  }

  p.add("head.w1", nn::uniform_fan_in(rng, d, d, d));
  p.add("head.b1", Tensor(1, d, 0.0));
  p.add("head.w2", nn::uniform_fan_in(rng, d, d, cfg.head_out()));
  p.add("head.b2", Tensor(1, cfg.head_out(), 0.0));
  return p;
}

// G applied to one image: bank rows are the query stream, the l token rows
// the key/value stream, through every generator block. Returns [Z x d].
inline Var generator_forward(Tape& t, const BoundParams& b,
                             const ModelConfig& cfg, Var tokens) {
  if (t.value(tokens).cols() != cfg.d)
    throw ShapeError("generator_forward: tokens " +
                     t.value(tokens).shape_str() + " vs embedding dim d=" +
                     std::to_string(cfg.d));
  Var p = b("bank");
  for (std::uint32_t i = 0; i < cfg.generator_blocks; ++i)
    p = nn::cross_block(t, cfg, nn::cross_block_refs(b, "gen." + std::to_string(i)),
                        p, tokens);
  return p;
}

// Pooled prompt over a condition batch: per-image stack outputs averaged
// elementwise in batch order.
inline Var generate_prompt_var(Tape& t, const BoundParams& b,
                               const ModelConfig& cfg,
                               std::span<const Var> token_batch) {
  if (token_batch.empty())
    throw ContractError("generate_prompt: empty condition batch");
  std::vector<Var> per_image;
  per_image.reserve(token_batch.size());
  for (Var tok : token_batch)
    per_image.push_back(generator_forward(t, b, cfg, tok));
  return t.mean_of(per_image);
}

// One two-way block: prompt self-attention, prompt->image cross-attention,
// feed-forward on the prompt stream, then image->prompt cross-attention.
inline std::pair<Var, Var> guidance_block(Tape& t, const BoundParams& b,
                                          const ModelConfig& cfg,
                                          const std::string& prefix,
                                          Var prompt_stream, Var image_stream) {
  using namespace nn;
  Var ts = prompt_stream;
  {
    Var in = cfg.use_norm ? layer_norm(t, ts, b(prefix + ".self.ln.gamma"),
                                       b(prefix + ".self.ln.beta"))
                          : ts;
    Var a = attention(t, attn_refs(b, prefix + ".self.attn"), in, in, cfg.heads);
    ts = cfg.use_residual ? t.add(ts, a) : a;
  }
  {
    Var qin = cfg.use_norm ? layer_norm(t, ts, b(prefix + ".pi.ln_q.gamma"),
                                        b(prefix + ".pi.ln_q.beta"))
                           : ts;
    Var kvin = cfg.use_norm
                   ? layer_norm(t, image_stream, b(prefix + ".pi.ln_kv.gamma"),
                                b(prefix + ".pi.ln_kv.beta"))
                   : image_stream;
    Var a = attention(t, attn_refs(b, prefix + ".pi.attn"), qin, kvin, cfg.heads);
    ts = cfg.use_residual ? t.add(ts, a) : a;
  }
  if (cfg.use_ffn) {
    Var fin = cfg.use_norm ? layer_norm(t, ts, b(prefix + ".ln_f.gamma"),
                                        b(prefix + ".ln_f.beta"))
                           : ts;
    Var f = ffn(t, ffn_refs(b, prefix + ".ffn"), fin);
    ts = cfg.use_residual ? t.add(ts, f) : f;
  }
  Var is = image_stream;
  {
    Var qin = cfg.use_norm ? layer_norm(t, is, b(prefix + ".ip.ln_q.gamma"),
                                        b(prefix + ".ip.ln_q.beta"))
                           : is;
    Var kvin = cfg.use_norm ? layer_norm(t, ts, b(prefix + ".ip.ln_kv.gamma"),
                                         b(prefix + ".ip.ln_kv.beta"))
                            : ts;
    Var a = attention(t, attn_refs(b, prefix + ".ip.attn"), qin, kvin, cfg.heads);
    is = cfg.use_residual ? t.add(is, a) : a;
  }
  return {ts, is};
}

// GM([P; CLS], E(x)) followed by the MLP head on the final CLS row.
// Returns [1 x num_classes] logits (or [1 x 1] for regression).
inline Var guidance_forward(Tape& t, const BoundParams& b,
                            const ModelConfig& cfg, Var prompt, Var tokens) {
  const Tensor& pv = t.value(prompt);
  if (pv.rows() != cfg.bank_size || pv.cols() != cfg.d)
    throw ShapeError("guidance_forward: prompt " + pv.shape_str() +
                     " vs expected [" + std::to_string(cfg.bank_size) + "x" +
                     std::to_string(cfg.d) + "]");
  if (t.value(tokens).cols() != cfg.d)
    throw ShapeError("guidance_forward: tokens " + t.value(tokens).shape_str() +
                     " vs embedding dim d=" + std::to_string(cfg.d));
  Var ts = t.concat_rows(std::vector<Var>{prompt, b("cls")});
  Var is = tokens;
  for (std::uint32_t i = 0; i < cfg.guidance_blocks; ++i) {
    auto [nts, nis] = guidance_block(t, b, cfg, "guide." + std::to_string(i), ts, is);
    ts = nts;
    is = nis;
  }
  Var cls_row = t.row(ts, cfg.bank_size);  // last row of [P; CLS]
  Var hidden = nn::softplus(
      t, t.add(t.matmul(cls_row, b("head.w1")), b("head.b1")));
  return t.add(t.matmul(hidden, b("head.w2")), b("head.b2"));
}

// --- pure value-level wrappers ---------------------------------------------

inline DomainPrompt generate_prompt(const ParamStore& params,
                                    const ModelConfig& cfg,
                                    std::span<const EmbeddingRecord* const> batch,
                                    std::string domain_key = {}) {
  if (batch.empty()) throw ContractError("generate_prompt: empty condition batch");
  Tape t;
  BoundParams b(t, params);
  std::vector<Var> toks;
  toks.reserve(batch.size());
  for (const auto* r : batch) toks.push_back(t.constant(r->tokens));
  Var p = generate_prompt_var(t, b, cfg, toks);
  DomainPrompt out;
  out.p = t.value(p);
  out.prov.kind = PromptKind::kGenerated;
  out.prov.domain_key = std::move(domain_key);
  out.prov.n_condition = static_cast<std::uint32_t>(batch.size());
  return out;
}

inline DomainPrompt generate_prompt_single(const ParamStore& params,
                                           const ModelConfig& cfg,
                                           const EmbeddingRecord& record,
                                           std::string domain_key = {}) {
  const EmbeddingRecord* one[] = {&record};
  return generate_prompt(params, cfg, one, std::move(domain_key));
}

inline Tensor guide_and_predict(const ParamStore& params, const ModelConfig& cfg,
                                const DomainPrompt& prompt,
                                const EmbeddingRecord& record) {
  Tape t;
  BoundParams b(t, params);
  Var out = guidance_forward(t, b, cfg, t.constant(prompt.p),
                             t.constant(record.tokens));
  return t.value(out);
}

inline DomainPrompt zeros_prompt(const ModelConfig& cfg) {
  DomainPrompt p;
  p.p = Tensor(cfg.bank_size, cfg.d);
  p.prov.kind = PromptKind::kZeros;
  return p;
}

// Calibrated control: entries at the bank init scale N(0, 1/sqrt(d)).
inline DomainPrompt random_prompt(const ModelConfig& cfg, std::uint64_t seed) {
  DomainPrompt p;
  Rng rng = Rng::derive(seed, 0x70726d74ull);
  p.p = nn::gaussian(rng, cfg.bank_size, cfg.d,
                     1.0 / std::sqrt(static_cast<double>(cfg.d)));
  p.prov.kind = PromptKind::kRandom;
  p.prov.seed = seed;
  return p;
}

inline DomainPrompt bank_prompt(const ParamStore& params) {
  DomainPrompt p;
  p.p = params.at("bank");
  p.prov.kind = PromptKind::kBankCopy;
  return p;
}

inline std::int64_t argmax_class(const Tensor& logits) {
  std::int64_t best = 0;
  for (std::size_t j = 1; j < logits.size(); ++j)
    if (logits[j] > logits[best]) best = static_cast<std::int64_t>(j);
  return best;
}

}  // namespace vdpg
