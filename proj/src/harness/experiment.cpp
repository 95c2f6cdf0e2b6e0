#include "removalnet/harness/experiment.hpp"

#include <algorithm>
#include <cctype>
#include <chrono>
#include <cmath>
#include <cstring>
#include <iostream>
#include <sstream>

#include "removalnet/errors.hpp"
#include "removalnet/nnkit/checkpoint.hpp"

#ifndef REMOVALNET_DEFAULT_DATA_DIR
#define REMOVALNET_DEFAULT_DATA_DIR "data"
#endif

namespace rnet {

namespace fs = std::filesystem;

std::string to_string(AttackKind k) {
  switch (k) {
    case AttackKind::Removal: return "removal";
    case AttackKind::Finetune: return "ft";
    case AttackKind::Prune: return "wp";
    case AttackKind::Distill: return "distill";
  }
  return "?";
}

AttackKind parse_attack_kind(const std::string& s) {
  if (s == "removal") return AttackKind::Removal;
  if (s == "ft" || s == "finetune") return AttackKind::Finetune;
  if (s == "wp" || s == "prune") return AttackKind::Prune;
  if (s == "distill") return AttackKind::Distill;
  throw ConfigError("unknown attack kind '" + s + "'");
}

std::string AttackPlan::label() const { return kind == AttackKind::Removal ? "RemovalNet" : baseline.label(); }

KeyValues AttackPlan::to_kv() const {
  KeyValues kv;
  kv.set("kind", to_string(kind));
  for (const auto& [k, v] : (kind == AttackKind::Removal ? removal.to_kv() : baseline.to_kv()).entries()) {
    if (k != "kind") kv.set(k, v);
  }
  return kv;
}

std::string to_string(Scenario s) { return s == Scenario::LimitedTraining ? "ltd" : "lsd"; }

Scenario parse_scenario(const std::string& s) {
  if (s == "ltd") return Scenario::LimitedTraining;
  if (s == "lsd") return Scenario::LimitedSurrogate;
  throw ConfigError("scenario must be 'ltd' or 'lsd', got '" + s + "'");
}

namespace {

BaselineKind baseline_kind(AttackKind k) {
  switch (k) {
    case AttackKind::Finetune: return BaselineKind::Finetune;
    case AttackKind::Prune: return BaselineKind::Prune;
    case AttackKind::Distill: return BaselineKind::Distill;
    case AttackKind::Removal: break;
  }
  throw ConfigError("removal is not a baseline");
}

bool valid_name(const std::string& s) {
  return !s.empty() && std::all_of(s.begin(), s.end(), [](char c) {
    return std::isalnum(static_cast<unsigned char>(c)) || c == '_' || c == '-' || c == '.';
  });
}

std::string join(const std::vector<std::string>& v, char sep = ',') {
  std::string s;
  for (const auto& x : v) s += (s.empty() ? "" : std::string(1, sep)) + x;
  return s;
}

std::string ratio_tag(double r) {
  std::ostringstream s;
  s << r;
  return s.str();
}

void prefixed(KeyValues& into, const std::string& prefix, const KeyValues& from) {
  for (const auto& [k, v] : from.entries()) into.set(prefix + k, v);
}

// A stage directory is reusable when stage.kv matches the settings that would
// produce it; pending.kv marks an unfinished stage that may resume.
bool stage_done(const fs::path& dir, const KeyValues& key) {
  const fs::path f = dir / "stage.kv";
  return fs::exists(f) && KeyValues::read(f).serialize() == key.serialize();
}

bool stage_begin(const fs::path& dir, const KeyValues& key) {
  const fs::path pending = dir / "pending.kv";
  const bool resumable = fs::exists(pending) && KeyValues::read(pending).serialize() == key.serialize();
  if (!resumable) fs::remove_all(dir);
  fs::create_directories(dir);
  key.write(pending);
  return resumable;
}

void stage_commit(const fs::path& dir, const KeyValues& key) {
  key.write(dir / "stage.kv");
  fs::remove(dir / "pending.kv");
}

std::uint64_t model_hash(const ModelF& m) {
  std::uint64_t h = 1469598103934665603ULL;
  const auto mix = [&](const void* data, std::size_t n) {
    const auto* p = static_cast<const unsigned char*>(data);
    for (std::size_t i = 0; i < n; ++i) h = (h ^ p[i]) * 1099511628211ULL;
  };
  mix(m.arch_id.data(), m.arch_id.size());
  for (const auto& p : m.params) mix(p.value.data(), sizeof(float) * static_cast<std::size_t>(p.value.size()));
  return h;
}

class Stopwatch {
 public:
  double seconds() const {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - start_).count();
  }

 private:
  std::chrono::steady_clock::time_point start_ = std::chrono::steady_clock::now();
};

std::string seconds(double s) {
  std::ostringstream o;
  o.precision(1);
  o << std::fixed << s << "s";
  return o.str();
}

}  // namespace

KeyValues default_attack_kv() {
  KeyValues kv;
  kv.set("attacks", "removal,ft,wp,distill");
  kv.set("ft.kind", "ft");
  kv.set("wp.kind", "wp");
  kv.set("distill.kind", "distill");
  return kv;
}

void ExperimentPlan::validate() const {
  if (trials < 1) throw ConfigError("plan: trials must be >= 1");
  if (negatives < 2) throw ConfigError("plan: negatives must be >= 2");
  if (!(substitute_ratio > 0 && substitute_ratio <= 1)) throw ConfigError("plan: substitute_ratio must lie in (0,1]");
  for (double r : ratios)
    if (!(r > 0 && r <= 1)) throw ConfigError("plan: sweep ratios must lie in (0,1]");
  if (metrics.empty()) throw ConfigError("plan: no metrics");
  if (robustness_samples < 1) throw ConfigError("plan: rob.samples must be >= 1");
  victim.train.validate();
  probes.validate();
  robustness.validate();
  std::vector<std::string> names;
  for (const auto& a : attacks) {
    if (!valid_name(a.name)) throw ConfigError("plan: bad attack name '" + a.name + "'");
    if (std::find(names.begin(), names.end(), a.name) != names.end()) {
      throw ConfigError("plan: duplicate attack '" + a.name + "'");
    }
    names.push_back(a.name);
    if (a.kind == AttackKind::Removal) {
      a.removal.validate();
    } else {
      a.baseline.validate();
    }
  }
}

const AttackPlan* ExperimentPlan::find_attack(const std::string& name) const {
  for (const auto& a : attacks)
    if (a.name == name) return &a;
  return nullptr;
}

KeyValues ExperimentPlan::to_kv() const {
  KeyValues kv;
  kv.set("dataset", dataset);
  kv.set("surrogate_dataset", surrogate_dataset);
  kv.set("data_root", data_root.string());
  kv.set("out", out.string());
  kv.set("seed", static_cast<long>(seed));
  kv.set("arch", victim.arch.id);
  kv.set("victim.epochs", victim.train.epochs);
  kv.set("victim.lr", victim.train.learning_rate);
  kv.set("victim.momentum", victim.train.momentum);
  kv.set("victim.batch_size", victim.train.batch_size);
  kv.set("victim.seed", static_cast<long>(victim.seed));
  kv.set("negatives", negatives);
  kv.set("negatives.seed", static_cast<long>(negative_seed));
  kv.set("scenario", to_string(scenario));
  kv.set("substitute_ratio", substitute_ratio);
  kv.set("substitute.seed", static_cast<long>(substitute_seed));
  std::vector<std::string> r;
  for (double x : ratios) r.push_back(ratio_tag(x));
  kv.set("ratios", join(r));
  std::vector<std::string> m;
  for (Metric x : metrics) m.push_back(metric_name(x));
  kv.set("metrics", join(m));
  kv.set("trials", trials);
  kv.set("aggregate", to_string(aggregate));
  prefixed(kv, "probes.", probes.to_kv());
  kv.set("rob.epsilon", robustness.epsilon);
  kv.set("rob.step_size", robustness.step_size);
  kv.set("rob.steps", robustness.steps);
  kv.set("rob.samples", robustness_samples);
  std::vector<std::string> names;
  for (const auto& a : attacks) {
    names.push_back(a.name);
    prefixed(kv, a.name + ".", a.to_kv());
  }
  kv.set("attacks", join(names));
  return kv;
}

ExperimentPlan ExperimentPlan::from_kv(const KeyValues& kv) {
  ExperimentPlan p;
  p.seed = static_cast<std::uint64_t>(kv.get_long_or("seed", 0));
  const auto seeded = [&](const std::string& key, std::uint64_t offset) {
    return static_cast<std::uint64_t>(kv.get_long_or(key, static_cast<long>(p.seed + offset)));
  };
  p.dataset = kv.get_or("dataset", p.dataset);
  p.surrogate_dataset = kv.get_or("surrogate_dataset", p.surrogate_dataset);
  p.data_root = kv.get_or("data_root", REMOVALNET_DEFAULT_DATA_DIR);
  p.out = kv.get_or("out", p.out.string());

  p.victim.arch.id = kv.get_or("arch", p.victim.arch.id);
  p.victim.train.epochs = static_cast<int>(kv.get_long_or("victim.epochs", 10));
  p.victim.train.learning_rate = kv.get_double_or("victim.lr", 0.01);
  p.victim.train.momentum = kv.get_double_or("victim.momentum", 0.9);
  p.victim.train.batch_size = static_cast<int>(kv.get_long_or("victim.batch_size", 64));
  p.victim.seed = seeded("victim.seed", 0);
  p.victim.train.seed = p.victim.seed;

  p.negatives = static_cast<int>(kv.get_long_or("negatives", p.negatives));
  p.negative_seed = seeded("negatives.seed", 1000);
  p.scenario = parse_scenario(kv.get_or("scenario", "ltd"));
  p.substitute_ratio = kv.get_double_or("substitute_ratio", p.substitute_ratio);
  p.substitute_seed = seeded("substitute.seed", 11);
  p.ratios = kv.get_doubles_or("ratios", {});

  const auto metric_names = kv.get_list_or("metrics", {});
  if (!metric_names.empty()) {
    p.metrics.clear();
    for (const auto& n : metric_names) p.metrics.push_back(parse_metric(n));
  }
  p.trials = static_cast<int>(kv.get_long_or("trials", p.trials));
  p.aggregate = parse_aggregate(kv.get_or("aggregate", "or"));

  KeyValues probe_kv;
  for (const auto& [k, v] : kv.entries())
    if (k.rfind("probes.", 0) == 0) probe_kv.set(k.substr(7), v);
  if (!probe_kv.has("seed")) probe_kv.set("seed", static_cast<long>(p.seed + 5));
  p.probes = ProbeConfig::from_kv(probe_kv);

  p.robustness.epsilon = kv.get_double_or("rob.epsilon", p.robustness.epsilon);
  p.robustness.step_size = kv.get_double_or("rob.step_size", p.robustness.step_size);
  p.robustness.steps = static_cast<int>(kv.get_long_or("rob.steps", p.robustness.steps));
  p.robustness_samples = kv.get_long_or("rob.samples", p.robustness_samples);

  for (const auto& name : kv.get_list_or("attacks", {})) {
    AttackPlan a;
    a.name = name;
    a.kind = parse_attack_kind(kv.get_or(name + ".kind", name));
    if (a.kind == AttackKind::Removal) {
      KeyValues r = kv;
      if (!kv.has(name + ".seed")) r.set(name + ".seed", static_cast<long>(p.seed));
      a.removal = RemovalConfig::from_kv(r, name + ".");
    } else {
      KeyValues b = kv;
      b.set(name + ".kind", to_string(baseline_kind(a.kind)));
      if (!kv.has(name + ".seed")) b.set(name + ".seed", static_cast<long>(p.seed + 77));
      a.baseline = BaselineSpec::from_kv(b, name + ".");
    }
    p.attacks.push_back(a);
  }
  p.validate();
  return p;
}

ExperimentPlan ExperimentPlan::load(const fs::path& path) {
  KeyValues kv = default_attack_kv();
  for (const auto& [k, v] : KeyValues::read(path).entries()) kv.set(k, v);
  return from_kv(kv);
}

ExperimentPlan ExperimentPlan::desk() { return from_kv(default_attack_kv()); }

const SuspectResult* ExperimentReport::find(const std::string& name) const {
  for (const auto& s : suspects)
    if (s.name == name) return &s;
  return nullptr;
}

Experiment::Experiment(ExperimentPlan plan, std::ostream* echo) : plan_(std::move(plan)) {
  plan_.validate();
  fs::create_directories(plan_.out);
  log_ = RunLog(plan_.out / "run.log", echo);
  plan_.to_kv().write(plan_.out / "plan.kv");
}

Experiment::~Experiment() = default;

const DatasetBundle& Experiment::data() {
  if (!data_) {
    data_ = std::make_unique<DatasetBundle>(load_bundle(plan_.dataset, plan_.data_root));
    data_->validate();
    plan_.victim.arch.input = data_->train.shape;
    plan_.victim.arch.num_classes = data_->class_count;
  }
  return *data_;
}

LabeledSet Experiment::substitute(double ratio) {
  if (plan_.scenario == Scenario::LimitedTraining) {
    return select_substitute_fraction(data().train, ratio, plan_.substitute_seed);
  }
  if (!surrogate_data_) {
    surrogate_data_ = std::make_unique<DatasetBundle>(load_bundle(plan_.surrogate_dataset, plan_.data_root));
    if (surrogate_data_->train.shape != data().train.shape || surrogate_data_->class_count != data().class_count) {
      throw ConfigError("surrogate dataset " + plan_.surrogate_dataset + " does not match the victim task");
    }
  }
  return select_substitute_fraction(surrogate_data_->train, ratio, plan_.substitute_seed);
}

KeyValues Experiment::victim_key() const {
  KeyValues kv;
  kv.set("dataset", plan_.dataset);
  kv.set("arch", plan_.victim.arch.id);
  kv.set("epochs", plan_.victim.train.epochs);
  kv.set("lr", plan_.victim.train.learning_rate);
  kv.set("momentum", plan_.victim.train.momentum);
  kv.set("batch_size", plan_.victim.train.batch_size);
  kv.set("seed", static_cast<long>(plan_.victim.seed));
  return kv;
}

KeyValues Experiment::probe_key() const {
  KeyValues kv = victim_key();
  prefixed(kv, "probes.", plan_.probes.to_kv());
  return kv;
}

KeyValues Experiment::attack_key(const AttackPlan& attack, double ratio) const {
  KeyValues kv = victim_key();
  prefixed(kv, "attack.", attack.to_kv());
  kv.set("scenario", to_string(plan_.scenario));
  if (plan_.scenario == Scenario::LimitedSurrogate) kv.set("surrogate_dataset", plan_.surrogate_dataset);
  kv.set("ratio", ratio);
  kv.set("substitute.seed", static_cast<long>(plan_.substitute_seed));
  return kv;
}

const ModelF& Experiment::victim() {
  if (victim_) return *victim_;
  const fs::path dir = plan_.out / "victim";
  const KeyValues key = victim_key();
  data();
  if (stage_done(dir, key)) {
    victim_ = load_checkpoint(dir / "model").model;
    return *victim_;
  }
  Stopwatch sw;
  log_.info("training victim " + plan_.victim.arch.id + " on " + plan_.dataset);
  stage_begin(dir, key);
  ModelF m = train(build_model(plan_.victim.arch, plan_.victim.seed), data().train, plan_.victim.train);
  KeyValues meta;
  meta.set("role", "victim");
  meta.set("seed", static_cast<long>(plan_.victim.seed));
  meta.set("epochs", plan_.victim.train.epochs);
  meta.set("dataset", plan_.dataset);
  meta.set("accuracy", evaluate_accuracy(m, data().test));
  save_checkpoint(dir / "model", m, meta);
  stage_commit(dir, key);
  log_.info("victim accuracy " + meta.get("accuracy") + " (" + seconds(sw.seconds()) + ")");
  victim_ = std::move(m);
  return *victim_;
}

const std::vector<ModelF>& Experiment::negatives() {
  if (negatives_) return *negatives_;
  data();
  const auto recipes = negative_recipes(plan_.victim, plan_.negatives, plan_.negative_seed);
  std::vector<ModelF> out;
  for (std::size_t i = 0; i < recipes.size(); ++i) {
    const fs::path dir = plan_.out / "negatives" / ("neg_" + std::to_string(i));
    KeyValues key = victim_key();
    key.set("negative.init_seed", static_cast<long>(recipes[i].init_seed));
    key.set("negative.lr", recipes[i].learning_rate);
    key.set("negative.epochs", recipes[i].epochs);
    if (stage_done(dir, key)) {
      out.push_back(load_checkpoint(dir / "model").model);
      continue;
    }
    Stopwatch sw;
    stage_begin(dir, key);
    ModelF m;
    try {
      m = train_negative(plan_.victim, data().train, recipes[i]);
    } catch (const TrainingError& e) {
      throw TrainingError("negative " + std::to_string(i) + ": " + e.what(), e.iteration());
    }
    KeyValues meta;
    meta.set("role", "negative");
    meta.set("seed", static_cast<long>(recipes[i].init_seed));
    meta.set("lr", recipes[i].learning_rate);
    meta.set("epochs", recipes[i].epochs);
    meta.set("dataset", plan_.dataset);
    meta.set("accuracy", evaluate_accuracy(m, data().test));
    save_checkpoint(dir / "model", m, meta);
    stage_commit(dir, key);
    log_.info("negative " + std::to_string(i) + " accuracy " + meta.get("accuracy") + " (" + seconds(sw.seconds()) +
              ")");
    out.push_back(std::move(m));
  }
  negatives_ = std::move(out);
  return *negatives_;
}

const std::vector<ProbeSet>& Experiment::probes() {
  if (probes_) return *probes_;
  const ModelF& v = victim();
  std::vector<ProbeSet> out;
  Stopwatch sw;
  for (int t = 0; t < plan_.trials; ++t) {
    const fs::path dir = plan_.out / "probes" / ("trial_" + std::to_string(t));
    KeyValues key = probe_key();
    key.set("trial", t);
    if (stage_done(dir, key)) {
      out.push_back(assemble_probes(load_fingerprints(dir / "fingerprints"), v, data(), plan_.probes, t));
      continue;
    }
    stage_begin(dir, key);
    ProbeSet p = make_probes(v, data(), plan_.probes, t);
    if (p.fingerprints.shortfall) {
      log_.warn("trial " + std::to_string(t) + ": only " + std::to_string(p.fingerprints.size()) + " of " +
                std::to_string(plan_.probes.fingerprints) + " boundary fingerprints qualified");
    }
    save_fingerprints(dir / "fingerprints", p.fingerprints);
    stage_commit(dir, key);
    out.push_back(std::move(p));
  }
  log_.info("probe sets ready for " + std::to_string(plan_.trials) + " trials (" + seconds(sw.seconds()) + ")");
  probes_ = std::move(out);
  return *probes_;
}

const LabeledSet& Experiment::adversarial() {
  if (!adversarial_) {
    const LabeledSet clean = select_substitute(data().test, plan_.robustness_samples, plan_.seed + 7);
    adversarial_ = pgd(victim(), clean, plan_.robustness);
  }
  return *adversarial_;
}

SuspectResult Experiment::evaluate(const std::string& name, const std::string& role, const ModelF& suspect) {
  const ModelF& v = victim();
  const fs::path dir = plan_.out / "evals" / name;
  KeyValues key = probe_key();
  key.set("trials", plan_.trials);
  key.set("suspect", std::to_string(model_hash(suspect)));
  std::vector<std::string> m;
  for (Metric x : plan_.metrics) m.push_back(metric_name(x));
  key.set("metrics", join(m));
  key.set("rob.epsilon", plan_.robustness.epsilon);
  key.set("rob.step_size", plan_.robustness.step_size);
  key.set("rob.steps", plan_.robustness.steps);
  key.set("rob.samples", plan_.robustness_samples);

  SuspectResult r;
  r.name = name;
  r.role = role;
  std::vector<std::vector<double>> values;
  if (stage_done(dir, key)) {
    const KeyValues kv = KeyValues::read(dir / "values.kv");
    r.accuracy = kv.get_double("accuracy");
    r.robustness.victim = kv.get_double("rob_victim");
    r.robustness.suspect = kv.get_double("rob_suspect");
    r.robustness.distance = kv.get_double("robd");
    for (Metric x : plan_.metrics) {
      values.push_back(kv.get_doubles_or("values." + metric_name(x), {}));
    }
  } else {
    Stopwatch sw;
    stage_begin(dir, key);
    r.accuracy = evaluate_accuracy(suspect, data().test);
    r.robustness = rob_and_robd(v, suspect, adversarial());
    KeyValues kv;
    kv.set("accuracy", r.accuracy);
    kv.set("rob_victim", r.robustness.victim);
    kv.set("rob_suspect", r.robustness.suspect);
    kv.set("robd", r.robustness.distance);
    for (Metric x : plan_.metrics) {
      std::vector<std::string> cells;
      values.emplace_back();
      for (const ProbeSet& p : probes()) {
        values.back().push_back(evaluate_metric(x, v, suspect, p).value);
        cells.push_back(format_number(values.back().back()));
      }
      kv.set("values." + metric_name(x), join(cells));
    }
    kv.write(dir / "values.kv");
    stage_commit(dir, key);
    log_.info("evaluated " + name + " (" + seconds(sw.seconds()) + ")");
  }
  if (!thresholds_) {
    // Calibration in progress: values only.
    r.verdict.trials = plan_.trials;
    for (std::size_t i = 0; i < plan_.metrics.size(); ++i) {
      MetricVerdict mv;
      mv.metric = plan_.metrics[i];
      mv.values = values[i];
      r.verdict.metrics.push_back(mv);
    }
    return r;
  }
  std::vector<std::vector<double>> aligned;
  for (const auto& e : thresholds_->entries) {
    const auto it = std::find(plan_.metrics.begin(), plan_.metrics.end(), e.metric);
    aligned.push_back(values[static_cast<std::size_t>(it - plan_.metrics.begin())]);
  }
  r.verdict = decide_ownership(*thresholds_, aligned, plan_.aggregate);
  return r;
}

const ThresholdTable& Experiment::thresholds() {
  if (thresholds_) return *thresholds_;
  const auto& negs = negatives();
  probes();
  std::vector<std::vector<double>> pooled(plan_.metrics.size());
  for (std::size_t i = 0; i < negs.size(); ++i) {
    const SuspectResult r = evaluate("neg_" + std::to_string(i), "negative", negs[i]);
    for (std::size_t m = 0; m < plan_.metrics.size(); ++m) {
      pooled[m].insert(pooled[m].end(), r.verdict.metrics[m].values.begin(), r.verdict.metrics[m].values.end());
    }
  }
  ThresholdTable t;
  t.negatives = static_cast<long>(negs.size());
  t.trials = plan_.trials;
  for (const auto& recipe : negative_recipes(plan_.victim, plan_.negatives, plan_.negative_seed)) {
    t.seeds.push_back(recipe.init_seed);
  }
  for (std::size_t m = 0; m < plan_.metrics.size(); ++m) {
    t.entries.push_back({plan_.metrics[m], calibrate_tau(plan_.metrics[m], pooled[m])});
  }
  t.save(plan_.out / "thresholds.kv");
  std::ostringstream s;
  for (const auto& e : t.entries) s << " " << metric_name(e.metric) << "=" << format_number(e.tau);
  log_.info("thresholds" + s.str());
  thresholds_ = std::move(t);
  return *thresholds_;
}

fs::path Experiment::attack_dir(const AttackPlan& attack, std::optional<double> ratio) const {
  if (!ratio || *ratio == plan_.substitute_ratio) return plan_.out / "attacks" / attack.name;
  return plan_.out / "sweep" / (attack.name + "_r" + ratio_tag(*ratio));
}

ModelF Experiment::attack(const AttackPlan& attack, std::optional<double> ratio) {
  const double r = ratio.value_or(plan_.substitute_ratio);
  const fs::path dir = attack_dir(attack, ratio);
  const ModelF& v = victim();
  const KeyValues key = attack_key(attack, r);
  if (stage_done(dir, key)) return load_checkpoint(dir / "model").model;

  const bool resume = stage_begin(dir, key);
  const LabeledSet sub = substitute(r);
  log_.info("attack " + attack.name + " (" + attack.label() + ") on " + std::to_string(sub.size()) +
            " substitute samples" + (resume ? ", resuming" : ""));
  Stopwatch sw;
  ModelF m;
  KeyValues meta;
  if (attack.kind == AttackKind::Removal) {
    RemovalResult rr = run_removal(v, sub, attack.removal, {dir / "run", &data().test, resume});
    m = std::move(rr.surrogate);
    meta.set("role", "surrogate");
  } else {
    m = run_baseline(v, sub, attack.baseline);
    meta.set("role", "baseline");
  }
  meta.set("attack", attack.name);
  meta.set("substitute_ratio", r);
  meta.set("dataset", plan_.dataset);
  meta.set("accuracy", evaluate_accuracy(m, data().test));
  save_checkpoint(dir / "model", m, meta);
  stage_commit(dir, key);
  log_.info("attack " + attack.name + " accuracy " + meta.get("accuracy") + " (" + seconds(sw.seconds()) + ")");
  return m;
}

std::vector<TraceRow> Experiment::trace(const AttackPlan& attack, std::optional<double> ratio) {
  const fs::path f = attack_dir(attack, ratio) / "run" / "trace.csv";
  if (attack.kind != AttackKind::Removal || !fs::exists(f)) return {};
  return read_trace_csv(f);
}

AttackPlan Experiment::sweep_attack() const {
  for (const auto& a : plan_.attacks)
    if (a.kind == AttackKind::Removal) return a;
  AttackPlan fallback;
  fallback.name = "removal";
  fallback.removal.seed = plan_.seed;
  return fallback;
}

SweepPoint Experiment::sweep_point(double ratio) {
  const AttackPlan a = sweep_attack();
  thresholds();
  SweepPoint p;
  p.ratio = ratio;
  p.substitute_size = substitute(ratio).size();
  const ModelF m = attack(a, ratio);
  p.result = evaluate("sweep_" + a.name + "_r" + ratio_tag(ratio), "sweep", m);
  p.trace = trace(a, ratio);
  return p;
}

namespace {

void write_trace_curve(const fs::path& path, const std::vector<TraceRow>& trace) {
  CsvTable t;
  t.header = {"iter", "fidelity", "l_ce", "l_kl", "l_feat", "total"};
  for (const auto& r : trace) {
    if (std::isnan(r.fidelity)) continue;
    t.add({std::to_string(r.iter), format_number(r.fidelity), format_number(r.l_ce), format_number(r.l_kl),
           format_number(r.l_feat), format_number(r.total)});
  }
  t.write(path);
}

Series fidelity_series(const std::string& label, const std::vector<TraceRow>& trace) {
  Series s;
  s.label = label;
  for (const auto& r : trace) {
    if (std::isnan(r.fidelity)) continue;
    s.x.push_back(static_cast<double>(r.iter));
    s.y.push_back(r.fidelity);
  }
  return s;
}

}  // namespace

void write_report(const ExperimentPlan& plan, const ExperimentReport& report) {
  const fs::path out = plan.out;
  CsvTable rows;
  rows.header = {"attack", "metric", "mean", "std", "flag"};
  CsvTable verdicts;
  verdicts.header = {"suspect", "role", "ownership", "tally", "trials", "flagged_metrics"};
  CsvTable rob;
  rob.header = {"suspect", "accuracy", "rob_victim", "rob_suspect", "robd"};
  for (const auto& s : report.suspects) {
    rows.add({s.name, "fidelity", format_number(s.accuracy), "0", "n/a"});
    std::vector<std::string> flagged;
    for (const auto& m : s.verdict.metrics) {
      rows.add({s.name, metric_name(m.metric), format_number(m.mean()), format_number(m.stddev()),
                m.copy ? "copy" : "not-copy"});
      if (m.copy) flagged.push_back(metric_name(m.metric) + "(" + std::to_string(m.copies) + ")");
    }
    verdicts.add({s.name, s.role, s.verdict.yes ? "Yes" : "No", std::to_string(s.verdict.tally),
                  std::to_string(s.verdict.trials), join(flagged, ';')});
    rob.add({s.name, format_number(s.accuracy), format_number(s.robustness.victim),
             format_number(s.robustness.suspect), format_number(s.robustness.distance)});
  }
  rows.write(out / "report.csv");
  verdicts.write(out / "verdicts.csv");
  rob.write(out / "robustness.csv");
  report.thresholds.save(out / "thresholds.kv");

  std::vector<Series> fidelity;
  for (const auto& [name, trace] : report.traces) {
    write_trace_curve(out / "curves" / (name + "_fidelity.csv"), trace);
    fidelity.push_back(fidelity_series(name, trace));
  }
  for (const auto& p : report.sweep) {
    if (!p.trace.empty()) fidelity.push_back(fidelity_series("ratio " + ratio_tag(p.ratio), p.trace));
  }
  if (!fidelity.empty()) {
    write_line_plot_svg(out / "plots" / "fidelity_vs_iteration.svg",
                        {"Surrogate fidelity during removal", "iteration", "test accuracy", true,
                         report.victim_accuracy},
                        fidelity);
  }

  write_sweep_report(plan, report);
}

void write_sweep_report(const ExperimentPlan& plan, const ExperimentReport& report) {
  if (report.sweep.empty()) return;
  const fs::path out = plan.out;
  CsvTable sweep;
  sweep.header = {"ratio", "substitute_size", "fidelity", "ownership"};
  for (const auto& e : report.thresholds.entries) sweep.header.push_back(metric_name(e.metric));
  std::vector<Series> dist(report.thresholds.entries.size());
  for (std::size_t m = 0; m < dist.size(); ++m) dist[m].label = metric_name(report.thresholds.entries[m].metric);
  Series fid{"fidelity", {}, {}};
  for (const auto& p : report.sweep) {
    std::vector<std::string> row = {ratio_tag(p.ratio), std::to_string(p.substitute_size),
                                    format_number(p.result.accuracy), p.result.verdict.yes ? "Yes" : "No"};
    for (std::size_t m = 0; m < dist.size(); ++m) {
      const MetricVerdict* mv = p.result.verdict.find(report.thresholds.entries[m].metric);
      const double mean = mv ? mv->mean() : NAN;
      row.push_back(format_number(mean));
      const double tau = report.thresholds.entries[m].tau;
      dist[m].x.push_back(p.ratio);
      dist[m].y.push_back(tau != 0 ? mean / tau : NAN);
    }
    if (!p.trace.empty()) {
      write_trace_curve(out / "curves" / ("sweep_r" + ratio_tag(p.ratio) + "_fidelity.csv"), p.trace);
    }
    fid.x.push_back(p.ratio);
    fid.y.push_back(p.result.accuracy);
    sweep.add(row);
  }
  sweep.write(out / "curves" / "ratio_sweep.csv");
  write_line_plot_svg(out / "plots" / "distance_vs_ratio.svg",
                      {"Metric value relative to threshold", "substitute ratio", "value / tau", true, 1.0}, dist);
  write_line_plot_svg(out / "plots" / "fidelity_vs_ratio.svg",
                      {"Surrogate fidelity by substitute ratio", "substitute ratio", "test accuracy", true,
                       report.victim_accuracy},
                      {fid});
}

ExperimentReport run_experiment(const ExperimentPlan& plan, std::ostream* echo) {
  Experiment e(plan, echo);
  ExperimentReport report;
  Stopwatch total;
  const auto fatal = [&](const char* stage, auto&& fn) {
    try {
      fn();
    } catch (const ConfigError&) {
      throw;
    } catch (const std::exception& ex) {
      e.log().error(std::string(stage) + " failed: " + ex.what());
      throw StageError(std::string(stage) + ": " + ex.what());
    }
  };
  fatal("victim", [&] { e.victim(); });
  fatal("negatives", [&] { e.negatives(); });
  fatal("probes", [&] { e.probes(); });
  fatal("calibration", [&] { report.thresholds = e.thresholds(); });

  report.suspects.push_back(e.evaluate("victim", "victim", e.victim()));
  report.victim_accuracy = report.suspects.back().accuracy;
  for (std::size_t i = 0; i < e.negatives().size(); ++i) {
    report.suspects.push_back(e.evaluate("neg_" + std::to_string(i), "negative", e.negatives()[i]));
  }
  for (const auto& a : e.plan().attacks) {
    try {
      const ModelF m = e.attack(a);
      report.suspects.push_back(e.evaluate(a.name, "attack", m));
      if (a.kind == AttackKind::Removal) report.traces[a.name] = e.trace(a);
      e.log().info(a.name + ": " + report.suspects.back().verdict.summary());
    } catch (const ConfigError&) {
      throw;
    } catch (const std::exception& ex) {
      e.log().error("attack " + a.name + " failed: " + ex.what());
      report.failures.push_back("attack " + a.name + ": " + ex.what());
    }
  }
  for (double r : e.plan().ratios) {
    try {
      report.sweep.push_back(e.sweep_point(r));
    } catch (const ConfigError&) {
      throw;
    } catch (const std::exception& ex) {
      e.log().error("sweep ratio " + ratio_tag(r) + " failed: " + ex.what());
      report.failures.push_back("sweep " + ratio_tag(r) + ": " + ex.what());
    }
  }
  write_report(e.plan(), report);
  e.log().info("report written to " + e.plan().out.string() + " (" + seconds(total.seconds()) + ", " +
               std::to_string(report.failures.size()) + " failed stages)");
  return report;
}

}  // namespace rnet
