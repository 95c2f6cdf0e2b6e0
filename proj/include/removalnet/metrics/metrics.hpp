#ifndef REMOVALNET_METRICS_METRICS_HPP
#define REMOVALNET_METRICS_METRICS_HPP

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <random>
#include <string>
#include <utility>
#include <vector>

#include "removalnet/errors.hpp"
#include "removalnet/nnkit/loss.hpp"
#include "removalnet/nnkit/model.hpp"

namespace rnet {

enum class Direction {
  Distance,    // larger means more different
  Similarity,  // larger means more alike
};

inline const char* to_string(Direction d) {
  return d == Direction::Distance ? "distance" : "similarity";
}

enum class Metric { Lod, Lad, ZestL2, ZestCosine, Ddv, Mr };

inline const std::vector<Metric>& all_metrics() {
  static const std::vector<Metric> m = {Metric::Lod,        Metric::Lad, Metric::ZestL2,
                                        Metric::ZestCosine, Metric::Ddv, Metric::Mr};
  return m;
}

inline std::string metric_name(Metric m) {
  switch (m) {
    case Metric::Lod: return "DJ-LOD";
    case Metric::Lad: return "DJ-LAD";
    case Metric::ZestL2: return "ZEST-L2";
    case Metric::ZestCosine: return "ZEST-Cosine";
    case Metric::Ddv: return "ModelDiff-DDV";
    case Metric::Mr: return "IPGuard-MR";
  }
  return "?";
}

/// Full names as printed by metric_name, or lod, lad, zest_l2, zest_cos, ddv, mr.
inline Metric parse_metric(const std::string& name) {
  for (Metric m : all_metrics()) {
    if (metric_name(m) == name) return m;
  }
  static const std::pair<const char*, Metric> aliases[] = {{"lod", Metric::Lod},         {"lad", Metric::Lad},
                                                           {"zest_l2", Metric::ZestL2},  {"zest_cos", Metric::ZestCosine},
                                                           {"ddv", Metric::Ddv},         {"mr", Metric::Mr}};
  for (const auto& [alias, m] : aliases) {
    if (name == alias) return m;
  }
  throw ConfigError("unknown metric '" + name + "'");
}

inline Direction metric_direction(Metric m) {
  return (m == Metric::Ddv || m == Metric::Mr) ? Direction::Similarity : Direction::Distance;
}

/// White-box metrics read intermediate layers and need matching architectures.
inline bool metric_is_white_box(Metric m) { return m == Metric::Lod || m == Metric::Lad; }

struct DistanceReport {
  std::string metric_name;
  double value = 0;
  std::vector<double> per_sample;
  Direction direction = Direction::Distance;
  long n_probes = 0;
};

struct ActivationProfile {
  int split = 0;
  int neurons = 0;
  double threshold = 0;  // applied to post-activation outputs
};

template <typename Scalar>
void require_same_architecture(const LayeredModel<Scalar>& a, const LayeredModel<Scalar>& b) {
  bool same = a.arch_id == b.arch_id && a.params.size() == b.params.size();
  for (std::size_t i = 0; same && i < a.params.size(); ++i) {
    same = a.params[i].value.rows() == b.params[i].value.rows() &&
           a.params[i].value.cols() == b.params[i].value.cols();
  }
  if (!same) {
    throw MetricInapplicable("white-box metric needs identical architectures (" + a.arch_id + " vs " +
                             b.arch_id + ")");
  }
}

namespace detail {

inline void require_probes(const MatF& probes, long minimum, const char* metric) {
  if (probes.cols() < minimum) {
    throw DomainError(std::string(metric) + " needs at least " + std::to_string(minimum) +
                      " probes, got " + std::to_string(probes.cols()));
  }
}

/// Output of the first split-1 units, evaluated in chunks, as double.
template <typename Scalar>
MatD layer_output(const LayeredModel<Scalar>& m, int split, const MatF& x) {
  m.check_split(split);
  MatD out(m.latent_size(split), x.cols());
  constexpr Eigen::Index chunk = 256;
  for (Eigen::Index c = 0; c < x.cols(); c += chunk) {
    const Eigen::Index n = std::min(chunk, x.cols() - c);
    out.middleCols(c, n) =
        m.forward_units(0, split - 1, x.middleCols(c, n).template cast<Scalar>()).template cast<double>();
  }
  return out;
}

template <typename Scalar>
MatD outputs(const LayeredModel<Scalar>& m, const MatF& x) {
  return m.predict(x.template cast<Scalar>()).template cast<double>();
}

inline double cosine_similarity(const Eigen::VectorXd& a, const Eigen::VectorXd& b) {
  const double na = a.norm();
  const double nb = b.norm();
  if (na == 0 || nb == 0) return (na == 0 && nb == 0) ? 1.0 : 0.0;
  return a.dot(b) / (na * nb);
}

inline double mean(const std::vector<double>& v) {
  double s = 0;
  for (double x : v) s += x;
  return v.empty() ? 0.0 : s / static_cast<double>(v.size());
}

}  // namespace detail

/// Layer output distance: mean over probes of ||F_V^l(x) - F_S^l(x)||_p.
template <typename Scalar>
DistanceReport lod(const LayeredModel<Scalar>& victim, const LayeredModel<Scalar>& suspect,
                   const MatF& probes, int split, double p = 2.0) {
  require_same_architecture(victim, suspect);
  detail::require_probes(probes, 1, "LOD");
  if (!(p >= 1)) throw ConfigError("LOD norm order must be >= 1");
  const MatD diff = detail::layer_output(victim, split, probes) - detail::layer_output(suspect, split, probes);
  DistanceReport r{metric_name(Metric::Lod), 0, {}, Direction::Distance, probes.cols()};
  for (Eigen::Index j = 0; j < diff.cols(); ++j) {
    double d;
    if (std::isinf(p)) {
      d = diff.col(j).cwiseAbs().maxCoeff();
    } else if (p == 2.0) {
      d = diff.col(j).norm();
    } else {
      d = std::pow(diff.col(j).cwiseAbs().array().pow(p).sum(), 1.0 / p);
    }
    r.per_sample.push_back(d);
  }
  r.value = detail::mean(r.per_sample);
  return r;
}

/// Layer activation distance: fraction of (neuron, probe) cells whose
/// on/off state (output > threshold) differs between the two models.
template <typename Scalar>
DistanceReport lad(const LayeredModel<Scalar>& victim, const LayeredModel<Scalar>& suspect,
                   const MatF& probes, const ActivationProfile& profile) {
  require_same_architecture(victim, suspect);
  detail::require_probes(probes, 1, "LAD");
  const MatD a = detail::layer_output(victim, profile.split, probes);
  const MatD b = detail::layer_output(suspect, profile.split, probes);
  if (profile.neurons != 0 && profile.neurons != a.rows()) {
    throw DomainError("activation profile expects " + std::to_string(profile.neurons) +
                      " neurons, layer has " + std::to_string(a.rows()));
  }
  DistanceReport r{metric_name(Metric::Lad), 0, {}, Direction::Distance, probes.cols()};
  for (Eigen::Index j = 0; j < a.cols(); ++j) {
    const auto on_a = (a.col(j).array() > profile.threshold);
    const auto on_b = (b.col(j).array() > profile.threshold);
    r.per_sample.push_back(static_cast<double>((on_a != on_b).count()) / static_cast<double>(a.rows()));
  }
  r.value = detail::mean(r.per_sample);
  return r;
}

/// LIME-style settings for the weight-space comparison.
struct ZestConfig {
  int grid = 4;            // grid x grid segments per image
  int masks = 100;         // perturbations per reference sample
  double ridge = 1e-3;
  std::uint64_t mask_seed = 0;
  Vec<float> fill;         // per-channel replacement value; empty -> reference mean
};

/// Per-reference-sample linear models, stacked column-wise.
struct LinearSurrogate {
  MatD weights;      // (segments * classes) x n_reference, segment-major
  MatD intercepts;   // classes x n_reference
  int segments = 0;
  int classes = 0;
  int masks = 0;
  double ridge = 0;
};

/// Binary segment masks for one reference sample (masks x segments),
/// determined by (mask_seed, sample index) only.
inline MatD zest_masks(const ZestConfig& cfg, Eigen::Index sample) {
  const int segments = cfg.grid * cfg.grid;
  std::mt19937_64 rng(cfg.mask_seed * 1000003ULL + static_cast<std::uint64_t>(sample));
  std::bernoulli_distribution keep(0.5);
  MatD m(cfg.masks, segments);
  for (int i = 0; i < cfg.masks; ++i)
    for (int s = 0; s < segments; ++s) m(i, s) = keep(rng) ? 1.0 : 0.0;
  return m;
}

/// Replaces the masked-out grid segments of x by the fill value.
inline MatF apply_segment_masks(const Eigen::Ref<const Vec<float>>& x, const Shape& shape, const MatD& masks,
                                int grid, const Vec<float>& fill) {
  MatF out(x.size(), masks.rows());
  for (Eigen::Index i = 0; i < masks.rows(); ++i) {
    out.col(i) = x;
    for (int c = 0; c < shape.channels; ++c) {
      for (int yy = 0; yy < shape.height; ++yy) {
        const int sy = yy * grid / shape.height;
        for (int xx = 0; xx < shape.width; ++xx) {
          const int sx = xx * grid / shape.width;
          if (masks(i, sy * grid + sx) == 0.0) out((c * shape.height + yy) * shape.width + xx, i) = fill(c);
        }
      }
    }
  }
  return out;
}

/// Fits a centred ridge regression from segment masks to softmax outputs for
/// every reference sample. The ridge term keeps the system nonsingular.
template <typename Scalar>
LinearSurrogate fit_linear_surrogate(const LayeredModel<Scalar>& model, const MatF& reference,
                                     const ZestConfig& cfg) {
  detail::require_probes(reference, 1, "ZEST");
  const Shape shape = model.input_shape;
  Vec<float> fill = cfg.fill;
  if (fill.size() == 0) {
    fill.resize(shape.channels);
    for (int c = 0; c < shape.channels; ++c) {
      fill(c) = static_cast<float>(
          reference.middleRows(static_cast<Eigen::Index>(c) * shape.spatial(), shape.spatial())
              .template cast<double>().mean());
    }
  }
  LinearSurrogate s;
  s.segments = cfg.grid * cfg.grid;
  s.classes = model.num_classes;
  s.masks = cfg.masks;
  s.ridge = cfg.ridge;
  s.weights.resize(static_cast<Eigen::Index>(s.segments) * s.classes, reference.cols());
  s.intercepts.resize(s.classes, reference.cols());
  for (Eigen::Index j = 0; j < reference.cols(); ++j) {
    const MatD masks = zest_masks(cfg, j);
    const MatF inputs = apply_segment_masks(reference.col(j), shape, masks, cfg.grid, fill);
    const MatD targets = softmax(detail::outputs(model, inputs)).transpose();  // masks x classes
    const Eigen::RowVectorXd xmean = masks.colwise().mean();
    const Eigen::RowVectorXd ymean = targets.colwise().mean();
    const MatD xc = masks.rowwise() - xmean;
    const MatD yc = targets.rowwise() - ymean;
    MatD gram = xc.transpose() * xc;
    gram.diagonal().array() += cfg.ridge;
    const MatD w = gram.ldlt().solve(xc.transpose() * yc);  // segments x classes
    s.weights.col(j) = Eigen::Map<const Eigen::VectorXd>(w.data(), w.size());
    s.intercepts.col(j) = (ymean - xmean * w).transpose();
  }
  return s;
}

enum class ZestMode { L2, Cosine };

inline DistanceReport zest_distance(const LinearSurrogate& a, const LinearSurrogate& b, ZestMode mode) {
  const Metric m = mode == ZestMode::L2 ? Metric::ZestL2 : Metric::ZestCosine;
  DistanceReport r{metric_name(m), 0, {}, Direction::Distance, a.weights.cols()};
  const Eigen::Map<const Eigen::VectorXd> wa(a.weights.data(), a.weights.size());
  const Eigen::Map<const Eigen::VectorXd> wb(b.weights.data(), b.weights.size());
  if (mode == ZestMode::L2) {
    r.value = (wa - wb).norm();
    for (Eigen::Index j = 0; j < a.weights.cols(); ++j) r.per_sample.push_back((a.weights.col(j) - b.weights.col(j)).norm());
  } else {
    r.value = 1.0 - detail::cosine_similarity(wa, wb);
    for (Eigen::Index j = 0; j < a.weights.cols(); ++j)
      r.per_sample.push_back(1.0 - detail::cosine_similarity(a.weights.col(j), b.weights.col(j)));
  }
  return r;
}

/// L2 distance or (1 - cosine similarity) between the stacked surrogate weights
/// of the two models, fitted over identical masks.
template <typename Scalar>
DistanceReport zest_distance(const LayeredModel<Scalar>& victim, const LayeredModel<Scalar>& suspect,
                             const MatF& reference, ZestMode mode, const ZestConfig& cfg = {}) {
  const LinearSurrogate a = fit_linear_surrogate(victim, reference, cfg);
  const LinearSurrogate b = fit_linear_surrogate(suspect, reference, cfg);
  if (a.weights.rows() != b.weights.rows()) {
    throw MetricInapplicable("ZEST needs models with the same class count");
  }
  return zest_distance(a, b, mode);
}

/// Pairwise L2 distances between softmax outputs over probes, i < j, in
/// row-major pair order.
inline Eigen::VectorXd decision_distance_vector(const MatD& probs) {
  const Eigen::Index n = probs.cols();
  Eigen::VectorXd ddv(n * (n - 1) / 2);
  Eigen::Index k = 0;
  for (Eigen::Index i = 0; i < n; ++i)
    for (Eigen::Index j = i + 1; j < n; ++j) ddv(k++) = (probs.col(i) - probs.col(j)).norm();
  return ddv;
}

/// Cosine similarity between the two models' decision distance vectors.
template <typename Scalar>
DistanceReport ddv_similarity(const LayeredModel<Scalar>& victim, const LayeredModel<Scalar>& suspect,
                              const MatF& probes) {
  detail::require_probes(probes, 2, "DDV");
  const Eigen::VectorXd a = decision_distance_vector(softmax(detail::outputs(victim, probes)));
  const Eigen::VectorXd b = decision_distance_vector(softmax(detail::outputs(suspect, probes)));
  DistanceReport r{metric_name(Metric::Ddv), detail::cosine_similarity(a, b), {}, Direction::Similarity,
                   probes.cols()};
  return r;
}

/// Fraction of probes on which both models predict the same class.
template <typename Scalar>
DistanceReport matching_rate(const LayeredModel<Scalar>& victim, const LayeredModel<Scalar>& suspect,
                             const MatF& probes) {
  detail::require_probes(probes, 1, "MR");
  const auto a = argmax_columns(detail::outputs(victim, probes));
  const auto b = argmax_columns(detail::outputs(suspect, probes));
  DistanceReport r{metric_name(Metric::Mr), 0, {}, Direction::Similarity, probes.cols()};
  for (std::size_t i = 0; i < a.size(); ++i) r.per_sample.push_back(a[i] == b[i] ? 1.0 : 0.0);
  r.value = detail::mean(r.per_sample);
  return r;
}

struct Robustness {
  double victim = 0;   // accuracy of the victim on the adversarial set
  double suspect = 0;
  double distance = 0; // |victim - suspect|
};

template <typename Scalar>
Robustness rob_and_robd(const LayeredModel<Scalar>& victim, const LayeredModel<Scalar>& suspect,
                        const LabeledSet& adversarial) {
  if (adversarial.empty()) throw DomainError("Rob: empty adversarial set");
  Robustness r;
  r.victim = evaluate_accuracy(victim, adversarial);
  r.suspect = evaluate_accuracy(suspect, adversarial);
  r.distance = std::abs(r.victim - r.suspect);
  return r;
}

}  // namespace rnet

#endif  // REMOVALNET_METRICS_METRICS_HPP
