#ifndef REMOVALNET_REMOVAL_REMOVAL_HPP
#define REMOVALNET_REMOVAL_REMOVAL_HPP

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <numeric>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "removalnet/errors.hpp"
#include "removalnet/kvfile.hpp"
#include "removalnet/nnkit/loss.hpp"
#include "removalnet/nnkit/model.hpp"

namespace rnet {

struct RemovalConfig {
  double alpha = 0.2;
  double beta = 2.0;
  double eta = 0.01;
  double lr = 0.01;
  double momentum = 0.9;
  long iterations = 1000;
  int batch_size = 128;
  int split_layer = 0;  // 0 selects the architecture default
  double shuffle_ratio = 0.1;
  int inner_steps = 10;
  double barrier_eps = 1e-6;
  std::vector<double> lambda_grid{0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9, 1.0};
  std::uint64_t seed = 0;
  long checkpoint_every = 100;
  long eval_every = 50;

  void validate() const;
  KeyValues to_kv() const;
  static RemovalConfig from_kv(const KeyValues& kv, const std::string& prefix = "");
};

/// Resolves split_layer against a model (0 means the architecture default).
int resolve_split(const RemovalConfig& cfg, const ModelF& model);

/// Reversed latents for a batch, one column per sample.
template <typename Scalar>
struct LatentTargets {
  Mat<Scalar> z1;
  Mat<Scalar> source;       // victim latent z1'
  std::vector<int> labels;  // victim predictions
  std::vector<bool> fallback;

  long fallbacks() const { return static_cast<long>(std::count(fallback.begin(), fallback.end(), true)); }
  Mat<Scalar> delta() const { return z1 - source; }
};

template <typename Scalar>
struct LogitTargets {
  Mat<Scalar> z2;
  std::vector<double> lambda;
  std::vector<long> partner;
};

/// Picks ceil(ratio * C) channels and permutes them among themselves. The same
/// permutation is applied to every column of the batch.
template <typename Scalar>
Mat<Scalar> feature_shuffle(const Mat<Scalar>& z, const Shape& shape, double ratio, std::uint64_t seed) {
  if (!(ratio >= 0 && ratio <= 1)) throw DomainError("feature_shuffle: ratio must lie in [0,1]");
  if (z.rows() != shape.size()) throw DomainError("feature_shuffle: latent size does not match shape");
  const int channels = shape.channels;
  const int picked = static_cast<int>(std::ceil(ratio * channels - 1e-12));
  if (picked < 2) return z;
  std::mt19937_64 rng(seed);
  std::vector<int> all(static_cast<std::size_t>(channels));
  std::iota(all.begin(), all.end(), 0);
  std::shuffle(all.begin(), all.end(), rng);
  std::vector<int> chosen(all.begin(), all.begin() + picked);
  std::vector<int> target = chosen;
  std::shuffle(target.begin(), target.end(), rng);
  Mat<Scalar> out = z;
  const Eigen::Index hw = shape.spatial();
  for (int k = 0; k < picked; ++k) {
    out.middleRows(target[static_cast<std::size_t>(k)] * hw, hw) = z.middleRows(chosen[static_cast<std::size_t>(k)] * hw, hw);
  }
  return out;
}

/// Sum over the batch of CE(F_S^{l+}(z1), y) - 0.5 log(||z1 - z1'||^2 + eps),
/// with the gradient with respect to z1. eps keeps the barrier finite when z1
/// sits on top of z1'.
template <typename Scalar>
LossGrad<Scalar> latent_reverse_loss(const LayeredModel<Scalar>& surrogate, int split, const Mat<Scalar>& z1,
                                     const Mat<Scalar>& source, const std::vector<int>& labels, double eps = 1e-6) {
  surrogate.check_split(split);
  Tape<Scalar> tape;
  const Mat<Scalar> logits = surrogate.forward_units(split - 1, surrogate.num_units(), z1, &tape);
  const LossGrad<Scalar> ce = cross_entropy_sum(logits, labels);
  LossGrad<Scalar> out;
  out.value = ce.value;
  out.grad = surrogate.backward(tape, ce.grad, nullptr);
  for (Eigen::Index j = 0; j < z1.cols(); ++j) {
    const Vec<Scalar> d = z1.col(j) - source.col(j);
    const Scalar n2 = d.squaredNorm() + static_cast<Scalar>(eps);
    out.value -= Scalar(0.5) * std::log(n2);
    out.grad.col(j) -= d / n2;
  }
  return out;
}

namespace detail {

inline std::uint64_t mix_seed(std::uint64_t a, std::uint64_t b, std::uint64_t c = 0) {
  std::seed_seq seq{static_cast<std::uint32_t>(a), static_cast<std::uint32_t>(a >> 32), static_cast<std::uint32_t>(b),
                    static_cast<std::uint32_t>(b >> 32), static_cast<std::uint32_t>(c), static_cast<std::uint32_t>(c >> 32)};
  std::uint32_t words[2];
  seq.generate(words, words + 2);
  return (static_cast<std::uint64_t>(words[0]) << 32) | words[1];
}

template <typename Scalar>
void require_same_layout(const LayeredModel<Scalar>& a, const LayeredModel<Scalar>& b) {
  bool same = a.arch_id == b.arch_id && a.params.size() == b.params.size() && a.input_shape == b.input_shape;
  for (std::size_t i = 0; same && i < a.params.size(); ++i) {
    same = a.params[i].value.rows() == b.params[i].value.rows() && a.params[i].value.cols() == b.params[i].value.cols();
  }
  if (!same) throw ConfigError("victim and surrogate must share an architecture");
}

}  // namespace detail

/// Latent-space reversal: starting from the victim latent, alternates channel
/// shuffling with gradient steps on latent_reverse_loss. Samples whose final
/// z1 no longer maps to the victim label under the surrogate suffix fall back
/// to z1 = z1'.
template <typename Scalar>
LatentTargets<Scalar> reverse_latent(const LayeredModel<Scalar>& victim, const LayeredModel<Scalar>& surrogate,
                                     const Mat<Scalar>& x, const RemovalConfig& cfg, int split, long iteration = 0) {
  detail::require_same_layout(victim, surrogate);
  victim.check_split(split);
  const Shape shape = victim.latent_shape(split);
  const SplitOutput<Scalar> vo = victim.split_forward(split, x);
  LatentTargets<Scalar> t;
  t.source = vo.latent;
  t.labels = argmax_columns(vo.logits);
  t.z1 = t.source;
  const auto eta = static_cast<Scalar>(cfg.eta);
  for (int s = 0; s < cfg.inner_steps; ++s) {
    t.z1 = feature_shuffle(t.z1, shape, cfg.shuffle_ratio,
                           detail::mix_seed(cfg.seed, static_cast<std::uint64_t>(iteration), static_cast<std::uint64_t>(s)));
    const LossGrad<Scalar> lg = latent_reverse_loss(surrogate, split, t.z1, t.source, t.labels, cfg.barrier_eps);
    if (!std::isfinite(static_cast<double>(lg.value)) || !lg.grad.allFinite()) {
      throw RemovalError("non-finite latent reversal loss", iteration);
    }
    t.z1 -= eta * lg.grad;
  }
  const std::vector<int> pred = argmax_columns(surrogate.forward_units(split - 1, surrogate.num_units(), t.z1));
  t.fallback.assign(static_cast<std::size_t>(x.cols()), false);
  for (Eigen::Index j = 0; j < x.cols(); ++j) {
    if (pred[static_cast<std::size_t>(j)] != t.labels[static_cast<std::size_t>(j)]) {
      t.fallback[static_cast<std::size_t>(j)] = true;
      t.z1.col(j) = t.source.col(j);
    }
  }
  return t;
}

/// Iterative least-like boundary strategy over victim logits: each column is
/// paired with the column farthest from it in L2, and the target is the
/// interpolation lambda*z_i + (1-lambda)*z_j for the smallest grid lambda that
/// keeps the victim's argmax.
template <typename Scalar>
LogitTargets<Scalar> ilbs(const Mat<Scalar>& victim_logits, const std::vector<double>& lambda_grid) {
  const Eigen::Index n = victim_logits.cols();
  if (n < 2) throw DomainError("ilbs: batch needs at least two samples");
  LogitTargets<Scalar> t;
  t.z2 = victim_logits;
  t.partner.resize(static_cast<std::size_t>(n));
  t.lambda.assign(static_cast<std::size_t>(n), 1.0);
  for (Eigen::Index i = 0; i < n; ++i) {
    Scalar best = 0;
    Eigen::Index idx = i;
    for (Eigen::Index j = 0; j < n; ++j) {
      const Scalar d = (victim_logits.col(i) - victim_logits.col(j)).norm();
      if (best < d) {
        best = d;
        idx = j;
      }
    }
    t.partner[static_cast<std::size_t>(i)] = idx;
    const int label = argmax(victim_logits.col(i));
    for (double lambda : lambda_grid) {
      const auto l = static_cast<Scalar>(lambda);
      const Vec<Scalar> z = l * victim_logits.col(i) + (Scalar(1) - l) * victim_logits.col(idx);
      if (argmax(z) == label) {
        t.z2.col(i) = z;
        t.lambda[static_cast<std::size_t>(i)] = lambda;
        break;
      }
    }
  }
  return t;
}

template <typename Scalar>
LogitTargets<Scalar> ilbs(const LayeredModel<Scalar>& victim, const Mat<Scalar>& x, const std::vector<double>& lambda_grid) {
  return ilbs(victim.forward(x), lambda_grid);
}

/// Value and output gradients of
///   alpha*CE(s, y) + (1-alpha)*KL(softmax(s) || softmax(z2)) + beta*mean||h - z1||_2
/// where s are surrogate logits, y = argmax of the victim logits and h the
/// surrogate latent. Targets are constants.
template <typename Scalar>
struct RemovalLoss {
  double ce = 0, kl = 0, feat = 0, total = 0;
  Mat<Scalar> grad_logits;
  Mat<Scalar> grad_latent;
};

template <typename Scalar>
RemovalLoss<Scalar> removal_loss(const Mat<Scalar>& surrogate_out, const Mat<Scalar>& victim_out, const Mat<Scalar>& z2,
                                 const Mat<Scalar>& surrogate_latent, const Mat<Scalar>& z1, const RemovalConfig& cfg,
                                 long iteration = 0) {
  if (surrogate_out.rows() != victim_out.rows() || surrogate_out.cols() != victim_out.cols() ||
      z2.rows() != surrogate_out.rows() || z2.cols() != surrogate_out.cols() ||
      surrogate_latent.rows() != z1.rows() || surrogate_latent.cols() != z1.cols() || z1.cols() != surrogate_out.cols()) {
    throw DomainError("removal_loss: inconsistent shapes");
  }
  const auto alpha = static_cast<Scalar>(cfg.alpha);
  const auto beta = static_cast<Scalar>(cfg.beta);
  const LossGrad<Scalar> ce = cross_entropy(surrogate_out, argmax_columns(victim_out));
  const LossGrad<Scalar> kl = kl_to_target(surrogate_out, z2);
  const LossGrad<Scalar> feat = mean_l2_distance(surrogate_latent, z1);
  RemovalLoss<Scalar> out;
  out.ce = static_cast<double>(ce.value);
  out.kl = static_cast<double>(kl.value);
  out.feat = static_cast<double>(feat.value);
  out.total = static_cast<double>(alpha * ce.value + (Scalar(1) - alpha) * kl.value + beta * feat.value);
  if (!std::isfinite(out.total)) throw RemovalError("non-finite removal loss", iteration);
  out.grad_logits = alpha * ce.grad + (Scalar(1) - alpha) * kl.grad;
  out.grad_latent = beta * feat.grad;
  return out;
}

/// Evaluates removal_loss for the surrogate on x and accumulates its parameter
/// gradients into grads.
template <typename Scalar>
RemovalLoss<Scalar> removal_gradients(const LayeredModel<Scalar>& surrogate, const Mat<Scalar>& x,
                                      const Mat<Scalar>& victim_out, const LatentTargets<Scalar>& latent,
                                      const LogitTargets<Scalar>& logit, const RemovalConfig& cfg, int split,
                                      Gradients<Scalar>& grads, long iteration = 0) {
  Tape<Scalar> prefix, suffix;
  const Mat<Scalar> h = surrogate.forward_units(0, split - 1, x, &prefix);
  const Mat<Scalar> s = surrogate.forward_units(split - 1, surrogate.num_units(), h, &suffix);
  RemovalLoss<Scalar> loss = removal_loss(s, victim_out, logit.z2, h, latent.z1, cfg, iteration);
  const Mat<Scalar> gh = surrogate.backward(suffix, loss.grad_logits, &grads) + loss.grad_latent;
  surrogate.backward(prefix, gh, &grads);
  return loss;
}

struct TraceRow {
  long iter = 0;
  double l_ce = NAN, l_kl = NAN, l_feat = NAN, total = NAN;
  double fidelity = NAN;  // NaN when not evaluated at this iteration
  long fallbacks = 0;
};

void write_trace_csv(const std::filesystem::path& path, const std::vector<TraceRow>& trace);
std::vector<TraceRow> read_trace_csv(const std::filesystem::path& path);

struct RemovalRunOptions {
  std::filesystem::path run_dir;      // empty: no checkpoints or trace file
  const LabeledSet* eval = nullptr;   // fidelity is accuracy on this set
  bool resume = true;
};

struct RemovalResult {
  ModelF surrogate;
  std::vector<TraceRow> trace;
  long resumed_from = 0;
};

/// Min-max removal loop. The surrogate starts as a copy of the victim; each
/// iteration draws a batch from the substitute set, builds latent and logit
/// targets from the victim and takes one momentum-SGD step.
RemovalResult run_removal(const ModelF& victim, const LabeledSet& substitute, const RemovalConfig& cfg,
                          const RemovalRunOptions& options = {});

/// Batch indices drawn for a given iteration (deterministic in seed and
/// iteration, so runs resume exactly).
std::vector<long> removal_batch(long pool, int batch_size, std::uint64_t seed, long iteration);

}  // namespace rnet

#endif  // REMOVALNET_REMOVAL_REMOVAL_HPP
