#include "removalnet/harness/harness.hpp"

#include <algorithm>
#include <cmath>
#include <random>
#include <sstream>

#include "removalnet/errors.hpp"
#include "removalnet/removal/removal.hpp"

namespace rnet {

std::vector<NegativeRecipe> negative_recipes(const VictimSpec& victim, int k, std::uint64_t seed) {
  if (k < 2) throw ConfigError("negatives: need at least 2 models");
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> jitter(0.9, 1.1);
  std::vector<NegativeRecipe> out;
  for (int i = 0; i < k; ++i) {
    NegativeRecipe r;
    r.init_seed = detail::mix_seed(seed, static_cast<std::uint64_t>(i), 0x6e6567);
    if (r.init_seed == victim.seed) ++r.init_seed;
    r.learning_rate = victim.train.learning_rate * jitter(rng);
    r.epochs = std::max(1, static_cast<int>(std::lround(victim.train.epochs * jitter(rng))));
    out.push_back(r);
  }
  return out;
}

ModelF train_negative(const VictimSpec& victim, const LabeledSet& data, const NegativeRecipe& recipe) {
  TrainConfig cfg = victim.train;
  cfg.learning_rate = recipe.learning_rate;
  cfg.epochs = recipe.epochs;
  cfg.seed = recipe.init_seed;
  return train(build_model(victim.arch, recipe.init_seed), data, cfg);
}

std::vector<ModelF> train_negatives(const VictimSpec& victim, const LabeledSet& data, int k, std::uint64_t seed) {
  std::vector<ModelF> out;
  const auto recipes = negative_recipes(victim, k, seed);
  for (std::size_t i = 0; i < recipes.size(); ++i) {
    try {
      out.push_back(train_negative(victim, data, recipes[i]));
    } catch (const TrainingError& e) {
      throw TrainingError("negative " + std::to_string(i) + ": " + e.what(), e.iteration());
    }
  }
  return out;
}

void ProbeConfig::validate() const {
  if (fingerprints < 2) throw ConfigError("probes: need at least 2 fingerprints");
  if (seed_pool < fingerprints) throw ConfigError("probes: seed_pool must be >= fingerprints");
  if (natural < 0 || zest_reference < 1) throw ConfigError("probes: bad natural or zest_reference count");
  boundary.attack.validate();
}

KeyValues ProbeConfig::to_kv() const {
  KeyValues kv;
  kv.set("fingerprints", fingerprints);
  kv.set("seed_pool", seed_pool);
  kv.set("natural", natural);
  kv.set("zest_reference", zest_reference);
  kv.set("split", split);
  kv.set("boundary.epsilon", boundary.attack.epsilon);
  kv.set("boundary.step_size", boundary.attack.step_size);
  kv.set("boundary.steps", boundary.attack.steps);
  kv.set("boundary.bisection_steps", boundary.bisection_steps);
  kv.set("boundary.gap_bound", boundary.gap_bound);
  kv.set("seed", static_cast<long>(seed));
  return kv;
}

ProbeConfig ProbeConfig::from_kv(const KeyValues& kv, const std::string& prefix) {
  ProbeConfig c;
  const auto key = [&](const char* k) { return prefix + k; };
  c.fingerprints = kv.get_long_or(key("fingerprints"), c.fingerprints);
  c.seed_pool = kv.get_long_or(key("seed_pool"), c.seed_pool);
  c.natural = kv.get_long_or(key("natural"), c.natural);
  c.zest_reference = kv.get_long_or(key("zest_reference"), c.zest_reference);
  c.split = static_cast<int>(kv.get_long_or(key("split"), c.split));
  c.boundary.attack.epsilon = kv.get_double_or(key("boundary.epsilon"), c.boundary.attack.epsilon);
  c.boundary.attack.step_size = kv.get_double_or(key("boundary.step_size"), c.boundary.attack.step_size);
  c.boundary.attack.steps = static_cast<int>(kv.get_long_or(key("boundary.steps"), c.boundary.attack.steps));
  c.boundary.bisection_steps =
      static_cast<int>(kv.get_long_or(key("boundary.bisection_steps"), c.boundary.bisection_steps));
  c.boundary.gap_bound = kv.get_double_or(key("boundary.gap_bound"), c.boundary.gap_bound);
  c.seed = static_cast<std::uint64_t>(kv.get_long_or(key("seed"), static_cast<long>(c.seed)));
  c.validate();
  return c;
}

ProbeSet assemble_probes(FingerprintSet fingerprints, const ModelF& victim, const DatasetBundle& data,
                         const ProbeConfig& cfg, int trial) {
  const auto t = static_cast<std::uint64_t>(trial);
  ProbeSet p;
  p.trial = trial;
  p.split = cfg.split == 0 ? default_split(victim) : cfg.split;
  victim.check_split(p.split);
  p.fingerprints = std::move(fingerprints);
  const MatF natural =
      cfg.natural > 0 ? select_substitute(data.test, cfg.natural, detail::mix_seed(cfg.seed, t, 2)).x : MatF();
  p.white_box.resize(p.fingerprints.samples.rows(), p.fingerprints.samples.cols() + natural.cols());
  p.white_box << p.fingerprints.samples, natural;
  p.zest_reference = zest_reference_set(data, cfg.zest_reference, detail::mix_seed(cfg.seed, t, 3)).x;
  return p;
}

ProbeSet make_probes(const ModelF& victim, const DatasetBundle& data, const ProbeConfig& cfg, int trial) {
  cfg.validate();
  const auto t = static_cast<std::uint64_t>(trial);
  const LabeledSet seeds = select_substitute(data.test, cfg.seed_pool, detail::mix_seed(cfg.seed, t, 1));
  BoundaryConfig bc = cfg.boundary;
  bc.attack.seed = cfg.seed + t;
  return assemble_probes(boundary_fingerprints(victim, seeds.x, cfg.fingerprints, bc), victim, data, cfg, trial);
}

DistanceReport evaluate_metric(Metric metric, const ModelF& victim, const ModelF& suspect, const ProbeSet& probes) {
  switch (metric) {
    case Metric::Lod: return lod(victim, suspect, probes.white_box, probes.split);
    case Metric::Lad: return lad(victim, suspect, probes.white_box, {probes.split, 0, 0});
    case Metric::ZestL2: return zest_distance(victim, suspect, probes.zest_reference, ZestMode::L2);
    case Metric::ZestCosine: return zest_distance(victim, suspect, probes.zest_reference, ZestMode::Cosine);
    case Metric::Ddv: return ddv_similarity(victim, suspect, probes.fingerprints.samples);
    case Metric::Mr: return matching_rate(victim, suspect, probes.fingerprints.samples);
  }
  throw ConfigError("unknown metric");
}

const ThresholdEntry* ThresholdTable::find(Metric m) const {
  for (const auto& e : entries)
    if (e.metric == m) return &e;
  return nullptr;
}

bool ThresholdTable::flags_copy(Metric m, double value) const {
  const ThresholdEntry* e = find(m);
  if (!e) throw ConfigError("no threshold for metric " + metric_name(m));
  return metric_direction(m) == Direction::Distance ? value < e->tau : value > e->tau;
}

KeyValues ThresholdTable::to_kv() const {
  KeyValues kv;
  std::string names;
  for (const auto& e : entries) {
    names += (names.empty() ? "" : ",") + metric_name(e.metric);
    kv.set("tau." + metric_name(e.metric), e.tau);
    kv.set("mode." + metric_name(e.metric), metric_direction(e.metric) == Direction::Distance
                                                  ? "min-distance-of-negatives"
                                                  : "max-similarity-of-negatives");
  }
  kv.set("metrics", names);
  kv.set("negatives", negatives);
  kv.set("trials", trials);
  std::string s;
  for (auto v : seeds) s += (s.empty() ? "" : ",") + std::to_string(v);
  kv.set("seeds", s);
  return kv;
}

ThresholdTable ThresholdTable::from_kv(const KeyValues& kv) {
  ThresholdTable t;
  for (const auto& name : kv.get_list_or("metrics", {})) {
    const Metric m = parse_metric(name);
    t.entries.push_back({m, kv.get_double("tau." + name)});
  }
  t.negatives = kv.get_long_or("negatives", 0);
  t.trials = static_cast<int>(kv.get_long_or("trials", 0));
  for (const auto& s : kv.get_list_or("seeds", {})) t.seeds.push_back(std::stoull(s));
  return t;
}

double calibrate_tau(Metric metric, const std::vector<double>& values) {
  if (values.empty()) throw DomainError("calibration: no values for " + metric_name(metric));
  return metric_direction(metric) == Direction::Distance ? *std::min_element(values.begin(), values.end())
                                                         : *std::max_element(values.begin(), values.end());
}

ThresholdTable calibrate_thresholds(const ModelF& victim, const std::vector<ModelF>& negatives,
                                    const std::vector<ProbeSet>& probes, const std::vector<Metric>& metrics,
                                    std::vector<std::string>* warnings) {
  if (negatives.size() < 2) throw ConfigError("calibration needs at least 2 negatives");
  if (probes.empty()) throw ConfigError("calibration needs at least one probe set");
  ThresholdTable table;
  table.negatives = static_cast<long>(negatives.size());
  table.trials = static_cast<int>(probes.size());
  for (Metric m : metrics) {
    std::vector<double> values;
    try {
      for (const auto& neg : negatives)
        for (const auto& p : probes) values.push_back(evaluate_metric(m, victim, neg, p).value);
    } catch (const MetricInapplicable& e) {
      if (warnings) warnings->push_back(metric_name(m) + " skipped: " + e.what());
      continue;
    }
    table.entries.push_back({m, calibrate_tau(m, values)});
  }
  return table;
}

std::string to_string(Aggregate a) { return a == Aggregate::Or ? "or" : "and"; }

Aggregate parse_aggregate(const std::string& s) {
  if (s == "or") return Aggregate::Or;
  if (s == "and") return Aggregate::And;
  throw ConfigError("aggregate must be 'or' or 'and', got '" + s + "'");
}

double MetricVerdict::mean() const {
  double s = 0;
  for (double v : values) s += v;
  return values.empty() ? 0.0 : s / static_cast<double>(values.size());
}

double MetricVerdict::stddev() const {
  if (values.size() < 2) return 0.0;
  const double m = mean();
  double ss = 0;
  for (double v : values) ss += (v - m) * (v - m);
  return std::sqrt(ss / static_cast<double>(values.size() - 1));
}

const MetricVerdict* Verdict::find(Metric m) const {
  for (const auto& v : metrics)
    if (v.metric == m) return &v;
  return nullptr;
}

std::string Verdict::summary() const {
  std::ostringstream s;
  s << (yes ? "Yes" : "No") << " (" << tally << "/" << trials << ")";
  return s.str();
}

Verdict decide_ownership(const ThresholdTable& table, const std::vector<std::vector<double>>& values,
                         Aggregate rule) {
  if (table.entries.empty()) throw ConfigError("threshold table is empty");
  if (values.size() != table.entries.size()) throw DomainError("verdict: one value row per metric expected");
  Verdict v;
  v.rule = rule;
  v.trials = static_cast<int>(values.front().size());
  if (v.trials < 1) throw ConfigError("verification needs at least one trial");
  std::vector<int> fired(static_cast<std::size_t>(v.trials), rule == Aggregate::Or ? 0 : 1);
  for (std::size_t m = 0; m < table.entries.size(); ++m) {
    if (static_cast<int>(values[m].size()) != v.trials) throw DomainError("verdict: ragged trial values");
    MetricVerdict mv;
    mv.metric = table.entries[m].metric;
    mv.values = values[m];
    for (std::size_t t = 0; t < values[m].size(); ++t) {
      const bool copy = table.flags_copy(mv.metric, values[m][t]);
      mv.copies += copy;
      fired[t] = rule == Aggregate::Or ? (fired[t] || copy) : (fired[t] && copy);
    }
    mv.copy = 2 * mv.copies > v.trials;
    v.metrics.push_back(mv);
  }
  v.tally = static_cast<int>(std::count(fired.begin(), fired.end(), 1));
  const auto copy = [](const MetricVerdict& m) { return m.copy; };
  v.yes = rule == Aggregate::Or ? std::any_of(v.metrics.begin(), v.metrics.end(), copy)
                                : std::all_of(v.metrics.begin(), v.metrics.end(), copy);
  return v;
}

Verdict verify_ownership(const ModelF& victim, const ModelF& suspect, const std::vector<ProbeSet>& probes,
                         const ThresholdTable& table, Aggregate rule) {
  if (probes.empty()) throw ConfigError("verification needs at least one trial");
  std::vector<std::vector<double>> values;
  for (const auto& e : table.entries) {
    values.emplace_back();
    for (const auto& p : probes) values.back().push_back(evaluate_metric(e.metric, victim, suspect, p).value);
  }
  return decide_ownership(table, values, rule);
}

}  // namespace rnet
