#include "removalnet/baselines/baselines.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include "removalnet/errors.hpp"
#include "removalnet/nnkit/loss.hpp"
#include "removalnet/nnkit/registry.hpp"
#include "removalnet/nnkit/train.hpp"

namespace rnet {

std::string to_string(BaselineKind k) {
  switch (k) {
    case BaselineKind::Finetune: return "finetune";
    case BaselineKind::Prune: return "prune";
    case BaselineKind::Distill: return "distill";
  }
  return "?";
}

BaselineKind parse_baseline_kind(const std::string& s) {
  if (s == "finetune" || s == "ft") return BaselineKind::Finetune;
  if (s == "prune" || s == "wp") return BaselineKind::Prune;
  if (s == "distill") return BaselineKind::Distill;
  throw ConfigError("unknown baseline kind '" + s + "'");
}

void BaselineSpec::validate() const {
  if (!(fraction > 0 && fraction <= 1)) throw ConfigError("baseline: fraction must lie in (0,1]");
  if (kind == BaselineKind::Prune) {
    if (fraction >= 1) throw ConfigError("baseline: prune fraction must be < 1");
    if (finetune_iters < 100 || finetune_iters > 500) {
      throw ConfigError("baseline: prune finetune_iters must lie in [100,500]");
    }
  }
  if (finetune_iters < 1 || distill_iters < 1) throw ConfigError("baseline: iteration counts must be >= 1");
  if (!(lr > 0)) throw ConfigError("baseline: lr must be positive");
  if (batch_size < 1) throw ConfigError("baseline: batch_size must be >= 1");
  if (!(temperature > 0)) throw ConfigError("baseline: temperature must be positive");
  if (!(feature_weight >= 0)) throw ConfigError("baseline: feature_weight must be >= 0");
}

std::string BaselineSpec::label() const {
  std::ostringstream s;
  switch (kind) {
    case BaselineKind::Finetune: s << "FT(" << fraction << ")"; break;
    case BaselineKind::Prune: s << "WP(" << fraction << ")"; break;
    case BaselineKind::Distill: s << "Distill"; break;
  }
  return s.str();
}

KeyValues BaselineSpec::to_kv() const {
  KeyValues kv;
  kv.set("kind", to_string(kind));
  kv.set("fraction", fraction);
  kv.set("finetune_iters", finetune_iters);
  kv.set("seed", static_cast<long>(seed));
  kv.set("lr", lr);
  kv.set("momentum", momentum);
  kv.set("batch_size", batch_size);
  kv.set("distill_iters", distill_iters);
  kv.set("temperature", temperature);
  kv.set("feature_weight", feature_weight);
  kv.set("split_layer", split_layer);
  return kv;
}

BaselineSpec BaselineSpec::from_kv(const KeyValues& kv, const std::string& prefix) {
  BaselineSpec b;
  const auto key = [&](const char* k) { return prefix + k; };
  b.kind = parse_baseline_kind(kv.get_or(key("kind"), to_string(b.kind)));
  b.fraction = kv.get_double_or(key("fraction"), b.fraction);
  b.finetune_iters = kv.get_long_or(key("finetune_iters"), b.finetune_iters);
  b.seed = static_cast<std::uint64_t>(kv.get_long_or(key("seed"), static_cast<long>(b.seed)));
  b.lr = kv.get_double_or(key("lr"), b.lr);
  b.momentum = kv.get_double_or(key("momentum"), b.momentum);
  b.batch_size = static_cast<int>(kv.get_long_or(key("batch_size"), b.batch_size));
  b.distill_iters = kv.get_long_or(key("distill_iters"), b.distill_iters);
  b.temperature = kv.get_double_or(key("temperature"), b.temperature);
  b.feature_weight = kv.get_double_or(key("feature_weight"), b.feature_weight);
  b.split_layer = static_cast<int>(kv.get_long_or(key("split_layer"), b.split_layer));
  b.validate();
  return b;
}

namespace {

TrainConfig finetune_config(const BaselineSpec& spec, long iterations) {
  TrainConfig cfg;
  cfg.learning_rate = spec.lr;
  cfg.momentum = spec.momentum;
  cfg.batch_size = spec.batch_size;
  cfg.seed = spec.seed;
  cfg.iterations = iterations;
  return cfg;
}

const auto kCrossEntropy = [](const ModelF& m, const LabeledSet& batch, Gradients<float>& grads) {
  Tape<float> tape;
  const MatF logits = m.forward_units(0, m.num_units(), batch.x, &tape);
  const LossGrad<float> l = cross_entropy(logits, batch.y);
  m.backward(tape, l.grad, &grads);
  return l.value;
};

}  // namespace

ModelF finetune_last_fraction(const ModelF& victim, const LabeledSet& data, const BaselineSpec& spec) {
  spec.validate();
  ModelF model = victim;
  const int layers = model.num_units();
  const int frozen = static_cast<int>(std::floor((1.0 - spec.fraction) * layers + 1e-9));
  if (frozen >= layers) throw ConfigError("finetune: fraction leaves no trainable layer");
  SgdMomentum<float> opt(model, spec.lr, spec.momentum);
  for (std::size_t i = 0; i < model.params.size(); ++i) opt.trainable[i] = model.unit_of_param(i) >= frozen;
  fit(model, data, finetune_config(spec, spec.finetune_iters), opt, kCrossEntropy);
  return model;
}

std::vector<MatF> magnitude_masks(const ModelF& model, double fraction) {
  if (!(fraction >= 0 && fraction < 1)) throw ConfigError("prune: fraction must lie in [0,1)");
  std::vector<std::pair<float, std::size_t>> order;  // (|w|, flat position)
  std::vector<std::pair<std::size_t, Eigen::Index>> where;
  for (std::size_t p = 0; p < model.params.size(); ++p) {
    if (model.params[p].is_bias) continue;
    const MatF& w = model.params[p].value;
    for (Eigen::Index k = 0; k < w.size(); ++k) {
      order.emplace_back(std::abs(w.data()[k]), where.size());
      where.emplace_back(p, k);
    }
  }
  const auto cut = static_cast<std::size_t>(std::ceil(fraction * static_cast<double>(order.size()) - 1e-9));
  std::nth_element(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(cut), order.end());
  std::vector<MatF> masks(model.params.size());
  for (std::size_t p = 0; p < model.params.size(); ++p) {
    if (!model.params[p].is_bias) masks[p] = MatF::Ones(model.params[p].value.rows(), model.params[p].value.cols());
  }
  for (std::size_t i = 0; i < cut; ++i) {
    const auto [p, k] = where[order[i].second];
    masks[p].data()[k] = 0.f;
  }
  return masks;
}

void apply_masks(ModelF& model, const std::vector<MatF>& masks) {
  for (std::size_t p = 0; p < model.params.size() && p < masks.size(); ++p) {
    if (masks[p].size() > 0) model.params[p].value.array() *= masks[p].array();
  }
}

ModelF weight_prune(const ModelF& victim, const LabeledSet& data, const BaselineSpec& spec) {
  spec.validate();
  ModelF model = victim;
  const std::vector<MatF> masks = magnitude_masks(model, spec.fraction);
  apply_masks(model, masks);
  SgdMomentum<float> opt(model, spec.lr, spec.momentum);
  opt.masks = masks;
  fit(model, data, finetune_config(spec, spec.finetune_iters), opt, kCrossEntropy);
  return model;
}

ModelF distill(const ModelF& victim, const LabeledSet& data, const BaselineSpec& spec) {
  spec.validate();
  if (data.empty()) throw DomainError("distill: empty data");
  const int split = spec.split_layer == 0 ? default_split(victim) : spec.split_layer;
  victim.check_split(split);
  ModelF student = build_model({victim.arch_id, victim.input_shape, victim.num_classes}, spec.seed);
  const auto temperature = static_cast<float>(spec.temperature);
  const auto weight = static_cast<float>(spec.feature_weight);
  SgdMomentum<float> opt(student, spec.lr, spec.momentum);
  fit(student, data, finetune_config(spec, spec.distill_iters), opt,
      [&](const ModelF& m, const LabeledSet& batch, Gradients<float>& grads) {
        const SplitOutput<float> teacher = victim.split_forward(split, batch.x);
        Tape<float> prefix, suffix;
        const MatF h = m.forward_units(0, split - 1, batch.x, &prefix);
        const MatF s = m.forward_units(split - 1, m.num_units(), h, &suffix);
        const LossGrad<float> kl = distillation_kl(s, teacher.logits, temperature);
        const LossGrad<float> feat = mean_l2_distance(h, teacher.latent);
        const MatF gh = m.backward(suffix, kl.grad, &grads) + weight * feat.grad;
        m.backward(prefix, gh, &grads);
        return kl.value + weight * feat.value;
      });
  return student;
}

ModelF run_baseline(const ModelF& victim, const LabeledSet& data, const BaselineSpec& spec) {
  switch (spec.kind) {
    case BaselineKind::Finetune: return finetune_last_fraction(victim, data, spec);
    case BaselineKind::Prune: return weight_prune(victim, data, spec);
    case BaselineKind::Distill: return distill(victim, data, spec);
  }
  throw ConfigError("unknown baseline kind");
}

}  // namespace rnet
