#ifndef REMOVALNET_HARNESS_EXPERIMENT_HPP
#define REMOVALNET_HARNESS_EXPERIMENT_HPP

#include <filesystem>
#include <iosfwd>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "removalnet/baselines/baselines.hpp"
#include "removalnet/harness/harness.hpp"
#include "removalnet/harness/report.hpp"
#include "removalnet/removal/removal.hpp"

namespace rnet {

enum class AttackKind { Removal, Finetune, Prune, Distill };

std::string to_string(AttackKind k);
/// Accepts removal, ft|finetune, wp|prune, distill.
AttackKind parse_attack_kind(const std::string& s);

struct AttackPlan {
  std::string name;
  AttackKind kind = AttackKind::Removal;
  RemovalConfig removal;
  BaselineSpec baseline;

  std::string label() const;
  KeyValues to_kv() const;
};

/// S_LTD draws the substitute set from the victim's training data, S_LSD from a
/// sibling dataset of the same task.
enum class Scenario { LimitedTraining, LimitedSurrogate };

std::string to_string(Scenario s);
Scenario parse_scenario(const std::string& s);

/// Config keys (all optional):
///   dataset, surrogate_dataset, data_root, out, seed, scenario (ltd|lsd),
///   substitute_ratio, ratios, trials, negatives, aggregate (or|and), metrics,
///   attacks (comma list of names), arch,
///   victim.{epochs,lr,momentum,batch_size,seed}, negatives.seed,
///   substitute.seed, probes.*, rob.{epsilon,step_size,steps,samples},
///   <attack name>.kind plus RemovalConfig or BaselineSpec keys under
///   "<attack name>.".
struct ExperimentPlan {
  std::string dataset = "mnist5k";
  std::string surrogate_dataset = "digits28";
  std::filesystem::path data_root;
  std::filesystem::path out = "runs/default";
  std::uint64_t seed = 0;

  VictimSpec victim;
  int negatives = 5;
  std::uint64_t negative_seed = 1000;

  Scenario scenario = Scenario::LimitedTraining;
  double substitute_ratio = 0.2;
  std::uint64_t substitute_seed = 11;
  std::vector<double> ratios;  // substitute-ratio sweep

  std::vector<AttackPlan> attacks;
  std::vector<Metric> metrics = all_metrics();
  int trials = 10;
  Aggregate aggregate = Aggregate::Or;
  ProbeConfig probes;
  AdvConfig robustness{0.1, 0.02, 10, 0};
  long robustness_samples = 500;

  void validate() const;
  const AttackPlan* find_attack(const std::string& name) const;
  KeyValues to_kv() const;
  /// Seed-derived defaults are applied before explicit keys.
  static ExperimentPlan from_kv(const KeyValues& kv);
  static ExperimentPlan load(const std::filesystem::path& path);
  /// Default desk plan: smallcnn on mnist5k, attacks removal, ft, wp, distill.
  static ExperimentPlan desk();
};

/// Key-value form of the default attacks, for layering a config file on top.
KeyValues default_attack_kv();

struct SuspectResult {
  std::string name;
  std::string role;  // victim, negative, attack, sweep
  double accuracy = 0;
  Verdict verdict;
  Robustness robustness;
};

struct SweepPoint {
  double ratio = 0;
  long substitute_size = 0;
  SuspectResult result;
  std::vector<TraceRow> trace;
};

struct ExperimentReport {
  double victim_accuracy = 0;
  ThresholdTable thresholds;
  std::vector<SuspectResult> suspects;
  std::map<std::string, std::vector<TraceRow>> traces;
  std::vector<SweepPoint> sweep;
  std::vector<std::string> failures;  // "stage: message"

  const SuspectResult* find(const std::string& name) const;
};

/// Stage-by-stage access to one experiment directory. Every stage persists its
/// artifacts under plan.out together with the settings that produced them and
/// reloads them when those settings match, so repeated calls and repeated runs
/// reuse finished work.
class Experiment {
 public:
  explicit Experiment(ExperimentPlan plan, std::ostream* echo = nullptr);
  ~Experiment();
  Experiment(const Experiment&) = delete;
  Experiment& operator=(const Experiment&) = delete;

  const ExperimentPlan& plan() const { return plan_; }
  RunLog& log() { return log_; }

  const DatasetBundle& data();
  LabeledSet substitute(double ratio);
  const ModelF& victim();
  const std::vector<ModelF>& negatives();
  const std::vector<ProbeSet>& probes();
  const ThresholdTable& thresholds();
  const LabeledSet& adversarial();

  /// Trains or loads the attack at the given substitute ratio (plan ratio when
  /// empty). Removal traces land in the attack's run directory.
  ModelF attack(const AttackPlan& attack, std::optional<double> ratio = std::nullopt);
  std::vector<TraceRow> trace(const AttackPlan& attack, std::optional<double> ratio = std::nullopt);

  /// Metric values per trial are cached under evals/<name>.csv.
  SuspectResult evaluate(const std::string& name, const std::string& role, const ModelF& suspect);

  /// The first removal attack of the plan, or a default one.
  AttackPlan sweep_attack() const;
  /// Runs (or loads) the sweep attack at one substitute ratio and evaluates it.
  SweepPoint sweep_point(double ratio);

  std::filesystem::path attack_dir(const AttackPlan& attack, std::optional<double> ratio = std::nullopt) const;

 private:
  KeyValues victim_key() const;
  KeyValues probe_key() const;
  KeyValues attack_key(const AttackPlan& attack, double ratio) const;

  ExperimentPlan plan_;
  RunLog log_;
  std::unique_ptr<DatasetBundle> data_;
  std::unique_ptr<DatasetBundle> surrogate_data_;
  std::optional<ModelF> victim_;
  std::optional<std::vector<ModelF>> negatives_;
  std::optional<std::vector<ProbeSet>> probes_;
  std::optional<ThresholdTable> thresholds_;
  std::optional<LabeledSet> adversarial_;
};

/// Full pipeline: victim, negatives, probes, calibration, every attack, the
/// ratio sweep when plan.ratios is non-empty, verdicts and the report bundle
/// (report.csv, verdicts.csv, robustness.csv, thresholds.kv, curves/*.csv,
/// plots/*.svg, run.log). Attack and sweep failures are logged and collected;
/// the remaining stages still run.
ExperimentReport run_experiment(const ExperimentPlan& plan, std::ostream* echo = nullptr);

/// Writes the report bundle files for an assembled report.
void write_report(const ExperimentPlan& plan, const ExperimentReport& report);

/// Only the sweep part: curves/ratio_sweep.csv, sweep fidelity curves and the
/// ratio plots.
void write_sweep_report(const ExperimentPlan& plan, const ExperimentReport& report);

}  // namespace rnet

#endif  // REMOVALNET_HARNESS_EXPERIMENT_HPP
