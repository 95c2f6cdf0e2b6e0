#ifndef REMOVALNET_HARNESS_HARNESS_HPP
#define REMOVALNET_HARNESS_HARNESS_HPP

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "removalnet/kvfile.hpp"
#include "removalnet/metrics/metrics.hpp"
#include "removalnet/nnkit/dataset.hpp"
#include "removalnet/nnkit/registry.hpp"
#include "removalnet/nnkit/train.hpp"
#include "removalnet/probes/probes.hpp"

namespace rnet {

struct VictimSpec {
  ArchSpec arch{"smallcnn", {1, 28, 28}, 10};
  TrainConfig train;
  std::uint64_t seed = 0;  // initialization seed
};

/// Hyperparameters actually used for one negative model.
struct NegativeRecipe {
  std::uint64_t init_seed = 0;
  double learning_rate = 0;
  int epochs = 0;
};

/// k recipes with fresh initialization seeds and learning rate and epochs each
/// scaled by an independent uniform factor in [0.9, 1.1].
std::vector<NegativeRecipe> negative_recipes(const VictimSpec& victim, int k, std::uint64_t seed);

ModelF train_negative(const VictimSpec& victim, const LabeledSet& data, const NegativeRecipe& recipe);

/// Trains k >= 2 negatives. A failure is rethrown as TrainingError naming the
/// model index.
std::vector<ModelF> train_negatives(const VictimSpec& victim, const LabeledSet& data, int k, std::uint64_t seed);

struct ProbeConfig {
  long fingerprints = 100;
  long seed_pool = 300;       // test samples offered to the boundary search
  long natural = 100;         // extra clean test samples for LOD/LAD
  long zest_reference = 20;
  int split = 0;              // LOD/LAD layer, 0 = architecture default
  BoundaryConfig boundary;
  std::uint64_t seed = 0;

  void validate() const;
  KeyValues to_kv() const;
  static ProbeConfig from_kv(const KeyValues& kv, const std::string& prefix = "");
};

/// Everything the six metrics look at in one trial.
struct ProbeSet {
  FingerprintSet fingerprints;  // DDV, MR
  MatF white_box;               // LOD, LAD: fingerprints followed by natural samples
  MatF zest_reference;
  int split = 0;
  int trial = 0;
};

/// Completes a probe set around already generated fingerprints.
ProbeSet assemble_probes(FingerprintSet fingerprints, const ModelF& victim, const DatasetBundle& data,
                         const ProbeConfig& cfg, int trial);

/// Trial t draws its boundary seeds, natural samples and ZEST reference with
/// seed + t; the generator settings stay fixed.
ProbeSet make_probes(const ModelF& victim, const DatasetBundle& data, const ProbeConfig& cfg, int trial);

DistanceReport evaluate_metric(Metric metric, const ModelF& victim, const ModelF& suspect, const ProbeSet& probes);

struct ThresholdEntry {
  Metric metric = Metric::Lod;
  double tau = 0;
};

struct ThresholdTable {
  std::vector<ThresholdEntry> entries;
  long negatives = 0;
  int trials = 0;
  std::vector<std::uint64_t> seeds;

  const ThresholdEntry* find(Metric m) const;
  /// Distance metrics flag copy below tau, similarity metrics above it.
  bool flags_copy(Metric m, double value) const;

  KeyValues to_kv() const;
  static ThresholdTable from_kv(const KeyValues& kv);
  void save(const std::filesystem::path& path) const { to_kv().write(path); }
  static ThresholdTable load(const std::filesystem::path& path) { return from_kv(KeyValues::read(path)); }
};

/// min of values for a distance metric, max for a similarity metric.
double calibrate_tau(Metric metric, const std::vector<double>& values);

/// tau = min (distance) or max (similarity) of metric(victim, negative) over all
/// negatives and all probe sets. Metrics that throw MetricInapplicable are
/// skipped and reported through warnings.
ThresholdTable calibrate_thresholds(const ModelF& victim, const std::vector<ModelF>& negatives,
                                    const std::vector<ProbeSet>& probes, const std::vector<Metric>& metrics,
                                    std::vector<std::string>* warnings = nullptr);

enum class Aggregate { Or, And };

std::string to_string(Aggregate a);
Aggregate parse_aggregate(const std::string& s);

struct MetricVerdict {
  Metric metric = Metric::Lod;
  std::vector<double> values;  // one per trial
  int copies = 0;              // trials flagged copy
  bool copy = false;           // flagged in a strict majority of trials

  double mean() const;
  double stddev() const;  // sample standard deviation, 0 for one trial
};

struct Verdict {
  std::vector<MetricVerdict> metrics;
  int trials = 0;
  int tally = 0;  // trials in which the aggregate rule fired
  Aggregate rule = Aggregate::Or;
  bool yes = false;

  const MetricVerdict* find(Metric m) const;
  /// "Yes (10/10)"
  std::string summary() const;
};

/// Verdict from precomputed values: values[m][t] is metric table.entries[m] in
/// trial t.
Verdict decide_ownership(const ThresholdTable& table, const std::vector<std::vector<double>>& values,
                         Aggregate rule = Aggregate::Or);

/// One trial per probe set. A trial fires when any (Or) or every (And) metric
/// flags copy; the verdict is Yes when the per-metric majorities combine to a
/// copy under the same rule.
Verdict verify_ownership(const ModelF& victim, const ModelF& suspect, const std::vector<ProbeSet>& probes,
                         const ThresholdTable& table, Aggregate rule = Aggregate::Or);

}  // namespace rnet

#endif  // REMOVALNET_HARNESS_HARNESS_HPP
