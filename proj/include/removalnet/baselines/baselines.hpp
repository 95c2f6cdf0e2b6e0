#ifndef REMOVALNET_BASELINES_BASELINES_HPP
#define REMOVALNET_BASELINES_BASELINES_HPP

#include <cstdint>
#include <string>
#include <vector>

#include "removalnet/kvfile.hpp"
#include "removalnet/nnkit/model.hpp"

namespace rnet {

enum class BaselineKind { Finetune, Prune, Distill };

std::string to_string(BaselineKind k);
BaselineKind parse_baseline_kind(const std::string& s);

struct BaselineSpec {
  BaselineKind kind = BaselineKind::Finetune;
  double fraction = 0.5;
  long finetune_iters = 300;
  std::uint64_t seed = 0;
  double lr = 0.01;
  double momentum = 0.9;
  int batch_size = 64;
  // distillation only
  long distill_iters = 3000;
  double temperature = 2.0;
  double feature_weight = 1.0;
  int split_layer = 0;  // 0 selects the architecture default

  void validate() const;
  /// "FT(0.5)", "WP(0.8)", "Distill"
  std::string label() const;
  KeyValues to_kv() const;
  static BaselineSpec from_kv(const KeyValues& kv, const std::string& prefix = "");
};

/// Copies the victim, freezes the first floor((1 - fraction) * P) of its P
/// parameterized layers and trains the rest with cross-entropy on data.
ModelF finetune_last_fraction(const ModelF& victim, const LabeledSet& data, const BaselineSpec& spec);

/// Zero-one masks (one per parameter; biases unmasked) zeroing the
/// ceil(fraction * |w|) smallest-magnitude weights over all weight tensors.
std::vector<MatF> magnitude_masks(const ModelF& model, double fraction);

/// Applies masks in place. Idempotent.
void apply_masks(ModelF& model, const std::vector<MatF>& masks);

/// Global magnitude pruning followed by masked fine-tuning.
ModelF weight_prune(const ModelF& victim, const LabeledSet& data, const BaselineSpec& spec);

/// Trains a freshly initialized student of the same architecture on
/// T^2 * KL(victim || student) at temperature T plus feature_weight times the
/// L2 distance between split-layer features.
ModelF distill(const ModelF& victim, const LabeledSet& data, const BaselineSpec& spec);

ModelF run_baseline(const ModelF& victim, const LabeledSet& data, const BaselineSpec& spec);

}  // namespace rnet

#endif  // REMOVALNET_BASELINES_BASELINES_HPP
