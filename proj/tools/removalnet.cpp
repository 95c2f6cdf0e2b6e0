#include <CLI11.hpp>

#include <iomanip>
#include <iostream>

#include "removalnet/errors.hpp"
#include "removalnet/harness/experiment.hpp"
#include "removalnet/nnkit/checkpoint.hpp"

using namespace rnet;

namespace {

constexpr int kOk = 0;
constexpr int kConfig = 2;
constexpr int kStage = 3;

struct Globals {
  std::string config;
  long seed = -1;
  std::string out;
  std::vector<std::string> overrides;
};

ExperimentPlan load_plan(const Globals& g) {
  KeyValues kv = default_attack_kv();
  if (!g.config.empty()) {
    for (const auto& [k, v] : KeyValues::read(g.config).entries()) kv.set(k, v);
  }
  for (const auto& o : g.overrides) {
    const auto eq = o.find('=');
    if (eq == std::string::npos) throw ConfigError("--set expects key=value, got '" + o + "'");
    kv.set(trim(o.substr(0, eq)), trim(o.substr(eq + 1)));
  }
  if (g.seed >= 0) kv.set("seed", g.seed);
  if (!g.out.empty()) kv.set("out", g.out);
  return ExperimentPlan::from_kv(kv);
}

AttackPlan pick_attack(const ExperimentPlan& plan, const std::string& kind, const std::string& name) {
  if (!name.empty()) {
    const AttackPlan* a = plan.find_attack(name);
    if (!a) throw ConfigError("no attack named '" + name + "' in the plan");
    return *a;
  }
  const AttackKind k = parse_attack_kind(kind);
  for (const auto& a : plan.attacks)
    if (a.kind == k) return a;
  KeyValues kv = default_attack_kv();
  kv.set("attacks", to_string(k));
  kv.set("seed", static_cast<long>(plan.seed));
  return ExperimentPlan::from_kv(kv).attacks.front();
}

void print_verdict(const std::string& name, const SuspectResult& r, const ThresholdTable& t) {
  std::cout << name << "  accuracy " << std::fixed << std::setprecision(4) << r.accuracy << "  ownership "
            << r.verdict.summary() << "\n";
  for (const auto& m : r.verdict.metrics) {
    const ThresholdEntry* e = t.find(m.metric);
    std::cout << "  " << std::left << std::setw(14) << metric_name(m.metric) << std::right << " mean "
              << std::setw(9) << m.mean() << " std " << std::setw(8) << m.stddev() << " tau " << std::setw(9)
              << (e ? e->tau : NAN) << "  " << (m.copy ? "copy" : "not-copy") << " (" << m.copies << "/"
              << r.verdict.trials << ")\n";
  }
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"DNN fingerprint verification and the RemovalNet attack"};
  app.require_subcommand(1);
  Globals g;
  app.add_option("--config", g.config, "key=value experiment config file")->check(CLI::ExistingFile);
  app.add_option("--seed", g.seed, "base seed (other seeds derive from it unless set explicitly)");
  app.add_option("--out", g.out, "experiment directory");
  app.add_option("--set", g.overrides, "extra key=value settings, applied after --config")->take_all();

  auto* train_cmd = app.add_subcommand("train", "train or load the victim");
  auto* neg_cmd = app.add_subcommand("negatives", "train or load the negative models");
  auto* fp_cmd = app.add_subcommand("fingerprint", "generate the probe sets for every trial");

  auto* attack_cmd = app.add_subcommand("attack", "run one attack against the victim");
  std::string attack_kind, attack_name;
  double attack_ratio = 0;
  attack_cmd->add_option("kind", attack_kind, "removal | ft | wp | distill")
      ->required()
      ->check(CLI::IsMember({"removal", "ft", "wp", "distill"}));
  attack_cmd->add_option("--name", attack_name, "attack name from the config (default: first of that kind)");
  attack_cmd->add_option("--ratio", attack_ratio, "substitute ratio (default: plan substitute_ratio)");

  auto* cal_cmd = app.add_subcommand("calibrate", "calibrate thresholds from the negatives");

  auto* verify_cmd = app.add_subcommand("verify", "ownership verdicts");
  std::vector<std::string> suspects;
  std::string checkpoint;
  verify_cmd->add_option("--suspect", suspects, "attack names (default: every attack in the plan)");
  verify_cmd->add_option("--checkpoint", checkpoint, "verify a model checkpoint directory instead");

  auto* report_cmd = app.add_subcommand("report", "run the full pipeline and write the report bundle");

  auto* sweep_cmd = app.add_subcommand("sweep", "substitute-ratio sweep with the removal attack");
  std::vector<double> ratios;
  sweep_cmd->add_option("--ratios", ratios, "ratios (default: plan ratios, else 0.02 0.1 0.2)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kOk : kConfig;
  }

  try {
    ExperimentPlan plan = load_plan(g);
    if (*report_cmd) {
      const ExperimentReport r = run_experiment(plan, &std::cerr);
      for (const auto& s : r.suspects) print_verdict(s.name, s, r.thresholds);
      for (const auto& f : r.failures) std::cerr << "failed: " << f << "\n";
      return r.failures.empty() ? kOk : kStage;
    }
    if (*sweep_cmd) {
      if (!ratios.empty()) plan.ratios = ratios;
      if (plan.ratios.empty()) plan.ratios = {0.02, 0.1, 0.2};
      Experiment e(plan, &std::cerr);
      ExperimentReport r;
      r.thresholds = e.thresholds();
      r.victim_accuracy = evaluate_accuracy(e.victim(), e.data().test);
      int failed = 0;
      for (double ratio : e.plan().ratios) {
        try {
          r.sweep.push_back(e.sweep_point(ratio));
          const SweepPoint& p = r.sweep.back();
          print_verdict("ratio " + std::to_string(ratio) + " (" + std::to_string(p.substitute_size) + " samples)",
                        p.result, r.thresholds);
        } catch (const ConfigError&) {
          throw;
        } catch (const std::exception& ex) {
          e.log().error("sweep ratio " + std::to_string(ratio) + " failed: " + ex.what());
          ++failed;
        }
      }
      write_sweep_report(e.plan(), r);
      return failed ? kStage : kOk;
    }

    Experiment e(plan, &std::cerr);
    if (*train_cmd) {
      const double acc = evaluate_accuracy(e.victim(), e.data().test);
      std::cout << "victim accuracy " << acc << " at " << (e.plan().out / "victim").string() << "\n";
    } else if (*neg_cmd) {
      const auto& negs = e.negatives();
      for (std::size_t i = 0; i < negs.size(); ++i) {
        std::cout << "neg_" << i << " accuracy " << evaluate_accuracy(negs[i], e.data().test) << "\n";
      }
    } else if (*fp_cmd) {
      for (const auto& p : e.probes()) {
        std::cout << "trial " << p.trial << ": " << p.fingerprints.size() << " fingerprints"
                  << (p.fingerprints.shortfall ? " (shortfall)" : "") << ", " << p.white_box.cols()
                  << " white-box probes, " << p.zest_reference.cols() << " ZEST references\n";
      }
    } else if (*attack_cmd) {
      const AttackPlan a = pick_attack(e.plan(), attack_kind, attack_name);
      const std::optional<double> r = attack_ratio > 0 ? std::optional<double>(attack_ratio) : std::nullopt;
      const ModelF m = e.attack(a, r);
      std::cout << a.name << " (" << a.label() << ") accuracy " << evaluate_accuracy(m, e.data().test) << " at "
                << (e.attack_dir(a, r) / "model").string() << "\n";
    } else if (*cal_cmd) {
      for (const auto& t : e.thresholds().entries) {
        std::cout << std::left << std::setw(14) << metric_name(t.metric) << " tau " << t.tau << "  ("
                  << to_string(metric_direction(t.metric)) << ")\n";
      }
    } else if (*verify_cmd) {
      const ThresholdTable& t = e.thresholds();
      if (!checkpoint.empty()) {
        const ModelF m = load_checkpoint(checkpoint).model;
        print_verdict(checkpoint, e.evaluate("checkpoint_" + std::to_string(std::hash<std::string>{}(checkpoint)),
                                             "suspect", m),
                      t);
      } else {
        if (suspects.empty())
          for (const auto& a : e.plan().attacks) suspects.push_back(a.name);
        int failed = 0;
        for (const auto& name : suspects) {
          const AttackPlan* a = e.plan().find_attack(name);
          if (!a) throw ConfigError("no attack named '" + name + "' in the plan");
          try {
            print_verdict(name, e.evaluate(name, "attack", e.attack(*a)), t);
          } catch (const ConfigError&) {
            throw;
          } catch (const std::exception& ex) {
            e.log().error("attack " + name + " failed: " + ex.what());
            ++failed;
          }
        }
        if (failed) return kStage;
      }
    }
    return kOk;
  } catch (const ConfigError& ex) {
    std::cerr << "configuration error: " << ex.what() << "\n";
    return kConfig;
  } catch (const std::exception& ex) {
    std::cerr << "stage failure: " << ex.what() << "\n";
    return kStage;
  }
}
