#ifndef REMOVALNET_PROBES_PROBES_HPP
#define REMOVALNET_PROBES_PROBES_HPP

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <numeric>
#include <random>
#include <string>
#include <vector>

#include "removalnet/errors.hpp"
#include "removalnet/kvfile.hpp"
#include "removalnet/nnkit/dataset.hpp"
#include "removalnet/nnkit/loss.hpp"
#include "removalnet/nnkit/model.hpp"

namespace rnet {

enum class FingerprintKind { Boundary, RandomProbe, Adversarial };

inline std::string to_string(FingerprintKind k) {
  switch (k) {
    case FingerprintKind::Boundary: return "boundary";
    case FingerprintKind::RandomProbe: return "random-probe";
    case FingerprintKind::Adversarial: return "adversarial";
  }
  return "?";
}

FingerprintKind parse_fingerprint_kind(const std::string& s);

struct FingerprintSet {
  MatF samples;                 // one probe per column, values in [0,1]
  std::vector<int> victim_labels;
  Shape shape;
  FingerprintKind kind = FingerprintKind::Boundary;
  KeyValues generator;          // attack parameters and seed
  long requested = 0;
  bool shortfall = false;       // fewer than `requested` points qualified

  long size() const { return static_cast<long>(victim_labels.size()); }
};

void save_fingerprints(const std::filesystem::path& dir, const FingerprintSet& fp);
FingerprintSet load_fingerprints(const std::filesystem::path& dir);

/// L-infinity attack budget.
struct AdvConfig {
  double epsilon = 8.0 / 255.0;
  double step_size = 2.0 / 255.0;
  int steps = 10;
  std::uint64_t seed = 0;

  void validate() const {
    if (!(epsilon >= 0)) throw ConfigError("AdvConfig: epsilon must be >= 0");
    if (steps < 1) throw ConfigError("AdvConfig: steps must be >= 1");
    if (!(step_size >= 0) || step_size > epsilon) {
      throw ConfigError("AdvConfig: step_size must lie in [0, epsilon]");
    }
  }
};

/// Gradient of the per-sample cross-entropy with respect to the inputs.
template <typename Scalar>
Mat<Scalar> input_gradient(const LayeredModel<Scalar>& model, const Mat<Scalar>& x, const std::vector<int>& labels) {
  Mat<Scalar> g(x.rows(), x.cols());
  constexpr Eigen::Index chunk = 256;
  for (Eigen::Index c = 0; c < x.cols(); c += chunk) {
    const Eigen::Index n = std::min(chunk, x.cols() - c);
    Tape<Scalar> tape;
    const Mat<Scalar> logits = model.forward_units(0, model.num_units(), x.middleCols(c, n), &tape);
    const std::vector<int> y(labels.begin() + c, labels.begin() + c + n);
    g.middleCols(c, n) = model.backward(tape, cross_entropy_sum(logits, y).grad, nullptr);
  }
  return g;
}

namespace detail {

template <typename Scalar>
Mat<Scalar> sign_of(const Mat<Scalar>& g, long iteration) {
  if (!g.allFinite()) throw AttackError("non-finite input gradient", iteration);
  return g.unaryExpr([](Scalar v) { return Scalar((v > 0) - (v < 0)); });
}

/// One signed-gradient ascent step followed by projection onto the
/// epsilon-ball around x0 and the [0,1] box.
template <typename Scalar>
Mat<Scalar> signed_step(const Mat<Scalar>& x, const Mat<Scalar>& x0, const Mat<Scalar>& sign, Scalar step, Scalar eps) {
  const Mat<Scalar> out = x + step * sign;
  return out.array().min(x0.array() + eps).max(x0.array() - eps).max(Scalar(0)).min(Scalar(1)).matrix();
}

}  // namespace detail

/// Single-step attack: clip(x + eps * sign(grad_x CE), 0, 1). Labels are kept.
template <typename Scalar>
LabeledSet fgsm(const LayeredModel<Scalar>& model, const LabeledSet& samples, const AdvConfig& cfg) {
  if (samples.empty()) throw DomainError("fgsm: empty sample set");
  cfg.validate();
  const Mat<Scalar> x = samples.x.template cast<Scalar>();
  const auto eps = static_cast<Scalar>(cfg.epsilon);
  const Mat<Scalar> sign = detail::sign_of(input_gradient(model, x, samples.y), 0);
  LabeledSet out = samples;
  out.x = detail::signed_step(x, x, sign, eps, eps).template cast<float>();
  return out;
}

/// Iterated signed-gradient steps with projection after each step; starts at
/// the clean input, so one step of size eps equals fgsm.
template <typename Scalar>
LabeledSet pgd(const LayeredModel<Scalar>& model, const LabeledSet& samples, const AdvConfig& cfg) {
  if (samples.empty()) throw DomainError("pgd: empty sample set");
  cfg.validate();
  const Mat<Scalar> x0 = samples.x.template cast<Scalar>();
  const auto eps = static_cast<Scalar>(cfg.epsilon);
  const auto step = static_cast<Scalar>(cfg.step_size);
  Mat<Scalar> x = x0;
  for (int it = 0; it < cfg.steps; ++it) {
    const Mat<Scalar> sign = detail::sign_of(input_gradient(model, x, samples.y), it);
    x = detail::signed_step(x, x0, sign, step, eps);
  }
  LabeledSet out = samples;
  out.x = x.template cast<float>();
  return out;
}

/// Top-1 minus top-2 output per column.
template <typename Scalar>
std::vector<double> logit_gaps(const Mat<Scalar>& logits) {
  std::vector<double> gaps;
  gaps.reserve(static_cast<std::size_t>(logits.cols()));
  for (Eigen::Index j = 0; j < logits.cols(); ++j) {
    double first = -INFINITY, second = -INFINITY;
    for (Eigen::Index k = 0; k < logits.rows(); ++k) {
      const double v = static_cast<double>(logits(k, j));
      if (v > first) {
        second = first;
        first = v;
      } else if (v > second) {
        second = v;
      }
    }
    gaps.push_back(first - second);
  }
  return gaps;
}

struct BoundaryConfig {
  AdvConfig attack{0.3, 0.01, 60, 0};  // search budget for the first label flip
  int bisection_steps = 10;
  double gap_bound = 0.5;
  int stability_checks = 3;
};

/// Near-boundary probes: each seed is pushed by untargeted PGD until the
/// victim's label first flips, then the segment between the last pre-flip and
/// first post-flip point is bisected. The post-flip end is preferred, the
/// pre-flip end is the fallback; a point is kept when its top-1/top-2 logit
/// gap is below gap_bound and its argmax is stable over repeated forwards.
/// Seeds are consumed in order until n points are found.
template <typename Scalar>
FingerprintSet boundary_fingerprints(const LayeredModel<Scalar>& victim, const MatF& seeds, long n,
                                     const BoundaryConfig& cfg = {}) {
  if (seeds.cols() == 0) throw DomainError("boundary_fingerprints: no seeds");
  cfg.attack.validate();
  FingerprintSet fp;
  fp.shape = victim.input_shape;
  fp.kind = FingerprintKind::Boundary;
  fp.requested = n;
  fp.generator.set("generator", "pgd-flip-bisect");
  fp.generator.set("epsilon", cfg.attack.epsilon);
  fp.generator.set("step_size", cfg.attack.step_size);
  fp.generator.set("steps", cfg.attack.steps);
  fp.generator.set("bisection_steps", cfg.bisection_steps);
  fp.generator.set("gap_bound", cfg.gap_bound);
  fp.generator.set("seed", static_cast<long>(cfg.attack.seed));

  std::vector<Vec<float>> found;
  const auto eps = static_cast<Scalar>(cfg.attack.epsilon);
  const auto step = static_cast<Scalar>(cfg.attack.step_size);
  constexpr Eigen::Index chunk = 64;
  for (Eigen::Index c = 0; c < seeds.cols() && static_cast<long>(found.size()) < n; c += chunk) {
    const Eigen::Index m = std::min(chunk, seeds.cols() - c);
    const Mat<Scalar> x0 = seeds.middleCols(c, m).template cast<Scalar>();
    const std::vector<int> y0 = argmax_columns(victim.forward(x0));
    Mat<Scalar> x = x0;
    Mat<Scalar> before = x0;
    Mat<Scalar> after = x0;
    std::vector<bool> flipped(static_cast<std::size_t>(m), false);
    for (int it = 0; it < cfg.attack.steps; ++it) {
      const Mat<Scalar> sign = detail::sign_of(input_gradient(victim, x, y0), it);
      const Mat<Scalar> next = detail::signed_step(x, x0, sign, step, eps);
      const std::vector<int> labels = argmax_columns(victim.forward(next));
      bool all = true;
      for (Eigen::Index j = 0; j < m; ++j) {
        const auto sj = static_cast<std::size_t>(j);
        if (flipped[sj]) continue;
        if (labels[sj] != y0[sj]) {
          flipped[sj] = true;
          before.col(j) = x.col(j);
          after.col(j) = next.col(j);
        } else {
          all = false;
        }
      }
      x = next;
      if (all) break;
    }
    for (int b = 0; b < cfg.bisection_steps; ++b) {
      const Mat<Scalar> mid = (before + after) * Scalar(0.5);
      const std::vector<int> labels = argmax_columns(victim.forward(mid));
      for (Eigen::Index j = 0; j < m; ++j) {
        if (!flipped[static_cast<std::size_t>(j)]) continue;
        if (labels[static_cast<std::size_t>(j)] == y0[static_cast<std::size_t>(j)]) {
          before.col(j) = mid.col(j);
        } else {
          after.col(j) = mid.col(j);
        }
      }
    }
    for (const Mat<Scalar>* side : {&after, &before}) {
      const Mat<Scalar> logits = victim.forward(*side);
      const std::vector<double> gaps = logit_gaps(logits);
      const std::vector<int> labels = argmax_columns(logits);
      for (Eigen::Index j = 0; j < m && static_cast<long>(found.size()) < n; ++j) {
        const auto sj = static_cast<std::size_t>(j);
        if (!flipped[sj] || gaps[sj] >= cfg.gap_bound) continue;
        bool stable = true;
        const Mat<Scalar> single = side->col(j);
        for (int r = 0; r < cfg.stability_checks && stable; ++r) {
          stable = argmax(victim.forward(single).col(0)) == labels[sj];
        }
        if (!stable) continue;
        found.push_back(side->col(j).template cast<float>());
        fp.victim_labels.push_back(labels[sj]);
        flipped[sj] = false;  // one point per seed
      }
    }
  }
  fp.samples.resize(seeds.rows(), static_cast<Eigen::Index>(found.size()));
  for (std::size_t i = 0; i < found.size(); ++i) fp.samples.col(static_cast<Eigen::Index>(i)) = found[i];
  fp.shortfall = static_cast<long>(found.size()) < n;
  return fp;
}

/// Wraps plain samples as a probe set labelled by the victim.
template <typename Scalar>
FingerprintSet label_probes(const LayeredModel<Scalar>& victim, const MatF& samples, FingerprintKind kind) {
  FingerprintSet fp;
  fp.samples = samples;
  fp.shape = victim.input_shape;
  fp.kind = kind;
  fp.requested = samples.cols();
  fp.victim_labels = argmax_columns(victim.predict(samples.template cast<Scalar>()));
  return fp;
}

/// Class-stratified draw of n samples without replacement: per-class counts
/// differ by at most one whenever every class has enough samples. Deterministic
/// in seed.
std::vector<long> stratified_indices(const LabeledSet& pool, long n, std::uint64_t seed);

/// Reference inputs for the weight-space comparison, drawn from the test split.
LabeledSet zest_reference_set(const DatasetBundle& data, long n, std::uint64_t seed);

/// Class-balanced substitute subset of a pool (a slice of the training data or
/// a sibling dataset).
LabeledSet select_substitute(const LabeledSet& pool, long count, std::uint64_t seed);
LabeledSet select_substitute_fraction(const LabeledSet& pool, double fraction, std::uint64_t seed);

}  // namespace rnet

#endif  // REMOVALNET_PROBES_PROBES_HPP
