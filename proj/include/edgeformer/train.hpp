#pragma once

// Desk-scale training: label-smoothed cross entropy averaged over non-pad
// tokens, Adam with an inverse-sqrt warmup schedule and decoupled weight
// decay, synthetic seq2seq task generators, sequence-level distillation,
// and greedy-decoding evaluation metrics.
//
// Weight sharing needs no special handling here: a group tensor appears in
// the model's parameter list exactly once, its gradient already carries the
// sum over every bound slot, and one Adam step moves it once.

#include <algorithm>
#include <iostream>
#include <limits>
#include <map>

#include "edgeformer/decode.hpp"
#include "edgeformer/model.hpp"

namespace edgeformer {

// ---- configuration ----------------------------------------------------------

struct TrainConfig {
  double lr_peak = 1e-3;
  int warmup_steps = 400;
  double beta1 = 0.9;
  double beta2 = 0.99;
  double eps = 1e-8;
  double weight_decay = 1e-5;
  double clip_norm = 1.0;  // 0 disables clipping
  double label_smoothing = 0.1;
  double dropout = 0.1;
  int batch_size = 16;
  int max_steps = 2000;
  int eval_every = 250;
  std::uint64_t seed = 1;

  void validate() const {
    if (lr_peak <= 0) throw ConfigError("train.lr_peak must be positive");
    if (warmup_steps < 1) throw ConfigError("train.warmup_steps must be at least 1");
    if (beta1 < 0 || beta1 >= 1 || beta2 < 0 || beta2 >= 1)
      throw ConfigError("train.betas must lie in [0, 1)");
    if (eps <= 0) throw ConfigError("train.eps must be positive");
    if (weight_decay < 0) throw ConfigError("train.weight_decay must be >= 0");
    if (clip_norm < 0) throw ConfigError("train.clip_norm must be >= 0");
    if (label_smoothing < 0 || label_smoothing >= 1)
      throw ConfigError("train.label_smoothing must lie in [0, 1)");
    if (dropout < 0 || dropout >= 1) throw ConfigError("train.dropout must lie in [0, 1)");
    if (batch_size < 1) throw ConfigError("train.batch_size must be at least 1");
    if (max_steps < 0) throw ConfigError("train.max_steps must be >= 0");
    if (eval_every < 1) throw ConfigError("train.eval_every must be at least 1");
  }
};

inline TrainConfig train_config_from_json(const json& j) {
  require_object(j, "train");
  reject_unknown_keys(j,
                              {"lr_peak", "warmup_steps", "beta1", "beta2", "eps",
                               "weight_decay", "clip_norm", "label_smoothing", "dropout",
                               "batch_size", "max_steps", "eval_every", "seed"},
                              "train");
  TrainConfig c;
  c.lr_peak = get_or(j, "lr_peak", c.lr_peak, "train");
  c.warmup_steps = get_or(j, "warmup_steps", c.warmup_steps, "train");
  c.beta1 = get_or(j, "beta1", c.beta1, "train");
  c.beta2 = get_or(j, "beta2", c.beta2, "train");
  c.eps = get_or(j, "eps", c.eps, "train");
  c.weight_decay = get_or(j, "weight_decay", c.weight_decay, "train");
  c.clip_norm = get_or(j, "clip_norm", c.clip_norm, "train");
  c.label_smoothing = get_or(j, "label_smoothing", c.label_smoothing, "train");
  c.dropout = get_or(j, "dropout", c.dropout, "train");
  c.batch_size = get_or(j, "batch_size", c.batch_size, "train");
  c.max_steps = get_or(j, "max_steps", c.max_steps, "train");
  c.eval_every = get_or(j, "eval_every", c.eval_every, "train");
  c.seed = get_or(j, "seed", c.seed, "train");
  c.validate();
  return c;
}

inline json train_config_to_json(const TrainConfig& c) {
  return json{{"lr_peak", c.lr_peak},
              {"warmup_steps", c.warmup_steps},
              {"beta1", c.beta1},
              {"beta2", c.beta2},
              {"eps", c.eps},
              {"weight_decay", c.weight_decay},
              {"clip_norm", c.clip_norm},
              {"label_smoothing", c.label_smoothing},
              {"dropout", c.dropout},
              {"batch_size", c.batch_size},
              {"max_steps", c.max_steps},
              {"eval_every", c.eval_every},
              {"seed", c.seed}};
}

// lr(t) = lr_peak * min(t / warmup, sqrt(warmup / t)), t counted from 1.
inline double lr_at(std::int64_t step, const TrainConfig& c) {
  const double t = double(step), w = double(c.warmup_steps);
  return c.lr_peak * std::min(t / w, std::sqrt(w / t));
}

// ---- loss ---------------------------------------------------------------------

// Mean label-smoothed cross entropy over non-pad target positions.  An
// all-pad batch has no signal; its loss is defined as zero and flagged.
template <typename T>
Tensor<T> label_smoothed_ce(const Tensor<T>& logits, const std::vector<std::int32_t>& targets,
                            double smoothing, std::int32_t pad_id,
                            std::size_t* non_pad = nullptr) {
  std::size_t count = 0;
  auto sum = label_smoothed_ce_sum(logits, targets, T(smoothing), pad_id, &count);
  if (non_pad) *non_pad = count;
  if (count == 0) {
    std::cerr << "warning: all-pad targets; loss defined as zero\n";
    return Tensor<T>::zeros({1});
  }
  return scale(sum, T(1.0 / double(count)));
}

// ---- optimizer ------------------------------------------------------------------

// Adam with bias correction, optional global-norm clipping, and decoupled
// weight decay.  Accumulator slots are kept in double regardless of T.
template <typename T>
class Adam {
 public:
  Adam(std::vector<std::pair<std::string, Tensor<T>>> params, TrainConfig cfg)
      : params_(std::move(params)), cfg_(std::move(cfg)) {
    cfg_.validate();
    m_.resize(params_.size());
    v_.resize(params_.size());
    for (std::size_t i = 0; i < params_.size(); ++i) {
      m_[i].assign(params_[i].second.numel(), 0.0);
      v_[i].assign(params_[i].second.numel(), 0.0);
    }
  }

  // Applies one update from the gradients currently on the parameters and
  // returns the pre-clip global gradient norm.  Every parameter moves at
  // most once per call, whatever number of slots shares it.
  double step() {
    ++t_;
    const double lr = lr_at(t_, cfg_);
    double sq = 0.0;
    for (auto& [name, p] : params_) {
      if (!p.has_grad()) continue;
      for (std::size_t e = 0; e < p.numel(); ++e) {
        const double g = double(p.grad()[e]);
        if (!std::isfinite(g))
          throw std::runtime_error("non-finite gradient in " + name + " at step " +
                                   std::to_string(t_));
        sq += g * g;
      }
    }
    const double norm = std::sqrt(sq);
    const double clip =
        (cfg_.clip_norm > 0 && norm > cfg_.clip_norm) ? cfg_.clip_norm / norm : 1.0;
    const double bc1 = 1.0 - std::pow(cfg_.beta1, double(t_));
    const double bc2 = 1.0 - std::pow(cfg_.beta2, double(t_));
    for (std::size_t i = 0; i < params_.size(); ++i) {
      auto& p = params_[i].second;
      const bool has = p.has_grad();
      for (std::size_t e = 0; e < p.numel(); ++e) {
        const double g = has ? double(p.grad()[e]) * clip : 0.0;
        double& m = m_[i][e];
        double& v = v_[i][e];
        m = cfg_.beta1 * m + (1.0 - cfg_.beta1) * g;
        v = cfg_.beta2 * v + (1.0 - cfg_.beta2) * g * g;
        const double update = lr * (m / bc1) / (std::sqrt(v / bc2) + cfg_.eps);
        const double decayed = double(p.at(e)) - update - lr * cfg_.weight_decay * double(p.at(e));
        p.at(e) = T(decayed);
      }
    }
    return norm;
  }

  std::int64_t steps_done() const { return t_; }
  const TrainConfig& config() const { return cfg_; }
  const std::vector<std::pair<std::string, Tensor<T>>>& params() const { return params_; }
  const std::vector<std::vector<double>>& slot_m() const { return m_; }
  const std::vector<std::vector<double>>& slot_v() const { return v_; }

  void restore(std::vector<std::vector<double>> m, std::vector<std::vector<double>> v,
               std::int64_t t) {
    if (m.size() != params_.size() || v.size() != params_.size())
      throw ConfigError("optimizer state has wrong slot count");
    for (std::size_t i = 0; i < params_.size(); ++i)
      if (m[i].size() != params_[i].second.numel() || v[i].size() != params_[i].second.numel())
        throw ConfigError("optimizer state shape mismatch for " + params_[i].first);
    m_ = std::move(m);
    v_ = std::move(v);
    t_ = t;
  }

 private:
  std::vector<std::pair<std::string, Tensor<T>>> params_;
  TrainConfig cfg_;
  std::vector<std::vector<double>> m_, v_;
  std::int64_t t_ = 0;
};

template <typename T>
void zero_all_grads(Model<T>& m) {
  for (auto& [name, p] : m.named_params) p.zero_grad();
}

// ---- synthetic tasks ------------------------------------------------------------

enum class TaskKind { Copy, Reverse, Cipher, SpanInfill };

inline std::string to_string(TaskKind k) {
  switch (k) {
    case TaskKind::Copy: return "copy";
    case TaskKind::Reverse: return "reverse";
    case TaskKind::Cipher: return "cipher";
    case TaskKind::SpanInfill: return "span_infill";
  }
  return "?";
}

inline TaskKind task_kind_from_string(const std::string& s) {
  if (s == "copy") return TaskKind::Copy;
  if (s == "reverse") return TaskKind::Reverse;
  if (s == "cipher") return TaskKind::Cipher;
  if (s == "span_infill") return TaskKind::SpanInfill;
  throw ConfigError("unknown task '" + s + "' (copy, reverse, cipher, span_infill)");
}

struct TaskSpec {
  TaskKind kind = TaskKind::Copy;
  int vocab_size = 16;
  int min_len = 1;
  int max_len = 12;
  int sentinels = 4;             // reserved span markers, span_infill only
  double corruption_rate = 0.15;  // span_infill: fraction of tokens masked
  double mean_span_len = 3.0;

  int content_base() const {
    return kNumReservedIds + (kind == TaskKind::SpanInfill ? sentinels : 0);
  }

  void validate() const {
    if (vocab_size <= content_base())
      throw ConfigError("task.vocab_size " + std::to_string(vocab_size) +
                        " leaves no content tokens after " + std::to_string(content_base()) +
                        " reserved ids");
    if (min_len < 1 || max_len < min_len)
      throw ConfigError("task length range [" + std::to_string(min_len) + ", " +
                        std::to_string(max_len) + "] is invalid");
    if (kind == TaskKind::SpanInfill) {
      if (sentinels < 1) throw ConfigError("task.sentinels must be at least 1 for span_infill");
      if (corruption_rate < 0 || corruption_rate >= 1)
        throw ConfigError("task.corruption_rate must lie in [0, 1)");
      if (mean_span_len < 1) throw ConfigError("task.mean_span_len must be at least 1");
    }
  }
};

inline TaskSpec task_spec_from_json(const json& j) {
  require_object(j, "task");
  reject_unknown_keys(j,
                              {"kind", "vocab_size", "min_len", "max_len", "sentinels",
                               "corruption_rate", "mean_span_len"},
                              "task");
  TaskSpec t;
  t.kind = task_kind_from_string(get_or<std::string>(j, "kind", "copy", "task"));
  t.vocab_size = get_or(j, "vocab_size", t.vocab_size, "task");
  t.min_len = get_or(j, "min_len", t.min_len, "task");
  t.max_len = get_or(j, "max_len", t.max_len, "task");
  t.sentinels = get_or(j, "sentinels", t.sentinels, "task");
  t.corruption_rate = get_or(j, "corruption_rate", t.corruption_rate, "task");
  t.mean_span_len = get_or(j, "mean_span_len", t.mean_span_len, "task");
  t.validate();
  return t;
}

inline json task_spec_to_json(const TaskSpec& t) {
  return json{{"kind", to_string(t.kind)},     {"vocab_size", t.vocab_size},
              {"min_len", t.min_len},          {"max_len", t.max_len},
              {"sentinels", t.sentinels},      {"corruption_rate", t.corruption_rate},
              {"mean_span_len", t.mean_span_len}};
}

struct Example {
  std::vector<std::int32_t> src, tgt;
  bool operator==(const Example&) const = default;
};

namespace detail {

// The tokenwise substitution used by the cipher task: a fixed permutation
// of the content ids, derived from the dataset seed alone.
inline std::vector<std::int32_t> cipher_permutation(const TaskSpec& spec, std::uint64_t seed) {
  const int base = spec.content_base();
  std::vector<std::int32_t> perm(spec.vocab_size - base);
  for (std::size_t i = 0; i < perm.size(); ++i) perm[i] = base + std::int32_t(i);
  std::mt19937_64 rng(seed ^ 0xc1f8e2b5a7d3906fULL);
  std::shuffle(perm.begin(), perm.end(), rng);
  return perm;
}

}  // namespace detail

// One example as a pure function of (spec, seed, index).
inline Example make_example(const TaskSpec& spec, std::uint64_t seed, std::uint64_t index) {
  spec.validate();
  std::mt19937_64 rng(seed ^ (0x9e3779b97f4a7c15ULL * (index + 1)));
  const int base = spec.content_base();
  std::uniform_int_distribution<int> len_dist(spec.min_len, spec.max_len);
  std::uniform_int_distribution<std::int32_t> tok_dist(base, spec.vocab_size - 1);
  const int len = len_dist(rng);
  Example ex;
  ex.src.resize(len);
  for (auto& t : ex.src) t = tok_dist(rng);

  switch (spec.kind) {
    case TaskKind::Copy:
      ex.tgt = ex.src;
      break;
    case TaskKind::Reverse:
      ex.tgt.assign(ex.src.rbegin(), ex.src.rend());
      break;
    case TaskKind::Cipher: {
      const auto perm = detail::cipher_permutation(spec, seed);
      ex.tgt.resize(len);
      for (int i = 0; i < len; ++i) ex.tgt[i] = perm[ex.src[i] - base];
      for (int i = 0; i + 1 < len; i += 2) std::swap(ex.tgt[i], ex.tgt[i + 1]);
      break;
    }
    case TaskKind::SpanInfill: {
      // Single left-to-right pass: each position may open a span whose
      // tokens move to the target behind a sentinel marker.
      const double start_p =
          spec.corruption_rate > 0 ? spec.corruption_rate / spec.mean_span_len : 0.0;
      std::uniform_real_distribution<double> unit(0.0, 1.0);
      std::vector<std::int32_t> corrupted, target;
      int used_sentinels = 0;
      int i = 0;
      while (i < len) {
        if (used_sentinels < spec.sentinels && start_p > 0 && unit(rng) < start_p) {
          std::uniform_int_distribution<int> span_dist(1, 2 * int(spec.mean_span_len) - 1);
          const int span = std::min(span_dist(rng), len - i);
          const std::int32_t sentinel = kNumReservedIds + used_sentinels++;
          corrupted.push_back(sentinel);
          target.push_back(sentinel);
          for (int k = 0; k < span; ++k) target.push_back(ex.src[i + k]);
          i += span;
        } else {
          corrupted.push_back(ex.src[i++]);
        }
      }
      ex.src = std::move(corrupted);
      ex.tgt = std::move(target);
      break;
    }
  }
  return ex;
}

// The seed fixes the task instance (e.g. the cipher table), the index picks
// the example: held-out data is drawn from the same seed at fresh indices.
inline std::vector<Example> generate_task(const TaskSpec& spec, std::size_t n_samples,
                                          std::uint64_t seed, std::uint64_t first_index = 0) {
  std::vector<Example> out;
  out.reserve(n_samples);
  for (std::size_t i = 0; i < n_samples; ++i)
    out.push_back(make_example(spec, seed, first_index + i));
  return out;
}

// ---- batching and steps -----------------------------------------------------------

// Fixed-count batch, rows padded to the widest member.  Target rows are the
// BOS-shifted decoder input and the EOS-terminated labels.
struct Batch {
  std::vector<std::vector<std::int32_t>> src;
  std::vector<std::vector<std::int32_t>> tgt_in;
  std::vector<std::vector<std::int32_t>> labels;
};

inline Batch make_batch(const std::vector<Example>& data, std::int64_t step, int batch_size) {
  if (data.empty()) throw ConfigError("training dataset is empty");
  Batch b;
  std::size_t src_w = 0, tgt_w = 0;
  for (int j = 0; j < batch_size; ++j) {
    const auto& ex = data[std::size_t((step * batch_size + j) % std::int64_t(data.size()))];
    src_w = std::max(src_w, ex.src.size());
    tgt_w = std::max(tgt_w, ex.tgt.size() + 1);  // room for BOS / EOS
    b.src.push_back(ex.src);
    b.tgt_in.push_back(ex.tgt);
    b.labels.push_back(ex.tgt);
  }
  for (int j = 0; j < batch_size; ++j) {
    b.src[j].resize(src_w, kPadId);
    b.tgt_in[j].insert(b.tgt_in[j].begin(), kBosId);
    b.tgt_in[j].resize(tgt_w, kPadId);
    b.labels[j].push_back(kEosId);
    b.labels[j].resize(tgt_w, kPadId);
  }
  return b;
}

struct StepStats {
  std::int64_t step = 0;  // 1-based, equals optimizer steps done
  double loss = 0.0;      // mean over non-pad label tokens
  double lr = 0.0;
  double grad_norm = 0.0;
  std::size_t tokens = 0;
};

// One optimizer step over the deterministic batch for `step` (0-based).
template <typename T>
StepStats train_step(Model<T>& model, Adam<T>& opt, const std::vector<Example>& data,
                     std::int64_t step, std::mt19937_64& dropout_rng) {
  const TrainConfig& cfg = opt.config();
  Batch batch = make_batch(data, step, cfg.batch_size);
  zero_all_grads(model);

  ForwardCtx<T> ctx{cfg.dropout, &dropout_rng};
  Tensor<T> loss_sum;
  std::size_t total_tokens = 0;
  for (std::size_t j = 0; j < batch.src.size(); ++j) {
    auto logits = model_forward(model, batch.src[j], batch.tgt_in[j], ctx);
    std::size_t count = 0;
    auto s = label_smoothed_ce_sum(logits, batch.labels[j], T(cfg.label_smoothing), kPadId,
                                   &count);
    total_tokens += count;
    loss_sum = loss_sum.defined() ? add(loss_sum, s) : s;
  }

  StepStats stats;
  stats.tokens = total_tokens;
  if (total_tokens == 0) {
    std::cerr << "warning: batch at step " << step << " holds only pad labels; skipped\n";
    stats.step = opt.steps_done();
    return stats;
  }
  auto loss = scale(loss_sum, T(1.0 / double(total_tokens)));
  backward(loss);
  stats.grad_norm = opt.step();
  stats.step = opt.steps_done();
  stats.loss = double(loss.at(0));
  stats.lr = lr_at(stats.step, cfg);
  return stats;
}

// ---- distillation -------------------------------------------------------------------

// Replaces every target with the teacher's beam output for its source.  An
// empty teacher emission keeps the original target and is counted.
template <typename T>
std::vector<Example> seq_kd_distill(const Model<T>& teacher, const std::vector<Example>& data,
                                    int beam_width, double alpha = 0.6,
                                    std::size_t* kept_original = nullptr) {
  std::vector<Example> out;
  out.reserve(data.size());
  std::size_t kept = 0;
  for (const auto& ex : data) {
    auto tgt = beam_decode(teacher, ex.src, beam_width, alpha);
    if (tgt.empty()) {
      ++kept;
      tgt = ex.tgt;
    }
    out.push_back({ex.src, std::move(tgt)});
  }
  if (kept_original) *kept_original = kept;
  return out;
}

// ---- metrics -------------------------------------------------------------------------

// Corpus BLEU-4: clipped n-gram precision with brevity penalty, on a 0-100
// scale.  Any empty n-gram precision zeroes the score (no smoothing).
inline double corpus_bleu(const std::vector<std::vector<std::int32_t>>& hyps,
                          const std::vector<std::vector<std::int32_t>>& refs) {
  if (hyps.size() != refs.size())
    throw std::invalid_argument("corpus_bleu: hypothesis/reference count mismatch");
  std::size_t hyp_len = 0, ref_len = 0;
  double log_prec = 0.0;
  for (int n = 1; n <= 4; ++n) {
    std::size_t matched = 0, total = 0;
    for (std::size_t s = 0; s < hyps.size(); ++s) {
      const auto& h = hyps[s];
      const auto& r = refs[s];
      if (n == 1) {
        hyp_len += h.size();
        ref_len += r.size();
      }
      if (h.size() + 1 <= std::size_t(n)) continue;
      std::map<std::vector<std::int32_t>, std::size_t> ref_counts;
      for (std::size_t i = 0; i + n <= r.size(); ++i)
        ++ref_counts[{r.begin() + i, r.begin() + i + n}];
      std::map<std::vector<std::int32_t>, std::size_t> hyp_counts;
      for (std::size_t i = 0; i + n <= h.size(); ++i)
        ++hyp_counts[{h.begin() + i, h.begin() + i + n}];
      for (const auto& [gram, c] : hyp_counts) {
        total += c;
        auto it = ref_counts.find(gram);
        if (it != ref_counts.end()) matched += std::min(c, it->second);
      }
    }
    if (matched == 0) return 0.0;
    log_prec += 0.25 * std::log(double(matched) / double(total));
  }
  if (hyp_len == 0) return 0.0;
  const double bp = hyp_len >= ref_len ? 1.0 : std::exp(1.0 - double(ref_len) / double(hyp_len));
  return 100.0 * bp * std::exp(log_prec);
}

struct EvalResult {
  double token_accuracy = 0.0;  // positionwise greedy-vs-reference agreement
  double exact_match = 0.0;
  double bleu = 0.0;
};

template <typename T>
EvalResult evaluate(const Model<T>& model, const std::vector<Example>& data) {
  if (data.empty()) throw std::invalid_argument("evaluate: dataset is empty");
  std::vector<std::vector<std::int32_t>> hyps;
  hyps.reserve(data.size());
  std::size_t token_hits = 0, token_total = 0, exact = 0;
  for (const auto& ex : data) {
    auto hyp = greedy_decode(model, ex.src);
    for (std::size_t i = 0; i < ex.tgt.size(); ++i)
      token_hits += i < hyp.size() && hyp[i] == ex.tgt[i] ? 1 : 0;
    token_total += ex.tgt.size();
    exact += hyp == ex.tgt ? 1 : 0;
    hyps.push_back(std::move(hyp));
  }
  std::vector<std::vector<std::int32_t>> refs;
  refs.reserve(data.size());
  for (const auto& ex : data) refs.push_back(ex.tgt);
  EvalResult r;
  r.token_accuracy = token_total == 0 ? 1.0 : double(token_hits) / double(token_total);
  r.exact_match = double(exact) / double(data.size());
  r.bleu = corpus_bleu(hyps, refs);
  return r;
}

// ---- dataset files --------------------------------------------------------------------

// One example per line: source ids, a tab, target ids; ids space-separated.
inline std::string format_example(const Example& ex) {
  std::string line;
  for (std::size_t i = 0; i < ex.src.size(); ++i)
    line += (i ? " " : "") + std::to_string(ex.src[i]);
  line += '\t';
  for (std::size_t i = 0; i < ex.tgt.size(); ++i)
    line += (i ? " " : "") + std::to_string(ex.tgt[i]);
  return line;
}

inline std::vector<std::int32_t> parse_token_ids(const std::string& text,
                                                 const std::string& where) {
  std::vector<std::int32_t> ids;
  std::size_t i = 0;
  while (i < text.size()) {
    if (text[i] == ' ') {
      ++i;
      continue;
    }
    std::size_t j = i;
    bool neg = text[j] == '-';
    if (neg) ++j;
    std::size_t digits = 0;
    std::int64_t value = 0;
    while (j < text.size() && text[j] >= '0' && text[j] <= '9') {
      value = value * 10 + (text[j] - '0');
      if (value > std::numeric_limits<std::int32_t>::max())
        throw std::invalid_argument(where + ": token id out of range");
      ++j;
      ++digits;
    }
    if (digits == 0 || (j < text.size() && text[j] != ' '))
      throw std::invalid_argument(where + ": expected space-separated token ids, got '" + text +
                                  "'");
    ids.push_back(std::int32_t(neg ? -value : value));
    i = j;
  }
  return ids;
}

inline Example parse_example(const std::string& line, const std::string& where) {
  const auto tab = line.find('\t');
  if (tab == std::string::npos)
    throw std::invalid_argument(where + ": expected 'src<TAB>tgt', got '" + line + "'");
  Example ex;
  ex.src = parse_token_ids(line.substr(0, tab), where);
  ex.tgt = parse_token_ids(line.substr(tab + 1), where);
  return ex;
}

}  // namespace edgeformer
