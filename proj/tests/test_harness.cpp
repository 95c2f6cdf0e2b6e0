#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <random>
#include <set>

#include "removalnet/errors.hpp"
#include "removalnet/harness/experiment.hpp"
#include "removalnet/nnkit/checkpoint.hpp"
#include "support/fixtures.hpp"

using namespace rnet;

namespace {

VictimSpec quick_spec() {
  VictimSpec v;
  v.train.epochs = 1;
  v.train.batch_size = 32;
  v.seed = 0;
  return v;
}

const std::vector<ModelF>& quick_negatives() {
  static const std::vector<ModelF> n =
      train_negatives(quick_spec(), fixtures::first_n(fixtures::mnist().train, 1000), 3, 41);
  return n;
}

ProbeConfig quick_probes() {
  ProbeConfig c;
  c.fingerprints = 20;
  c.seed_pool = 60;
  c.natural = 20;
  c.zest_reference = 10;
  c.seed = 9;
  return c;
}

const std::vector<ProbeSet>& quick_probe_sets() {
  static const std::vector<ProbeSet> p = [] {
    std::vector<ProbeSet> out;
    for (int t = 0; t < 2; ++t) out.push_back(make_probes(fixtures::quick_victim(), fixtures::mnist(), quick_probes(), t));
    return out;
  }();
  return p;
}

const ThresholdTable& quick_table() {
  static const ThresholdTable t =
      calibrate_thresholds(fixtures::quick_victim(), quick_negatives(), quick_probe_sets(), all_metrics());
  return t;
}

ThresholdTable table_of(std::vector<std::pair<Metric, double>> taus) {
  ThresholdTable t;
  for (auto [m, tau] : taus) t.entries.push_back({m, tau});
  return t;
}

KeyValues tiny_plan_kv(const std::filesystem::path& out, const std::string& attacks) {
  KeyValues kv = default_attack_kv();
  kv.set("out", out.string());
  kv.set("data_root", fixtures::data_dir().string());
  kv.set("attacks", attacks);
  kv.set("victim.epochs", 1);
  kv.set("negatives", 2);
  kv.set("trials", 2);
  kv.set("probes.fingerprints", 10);
  kv.set("probes.seed_pool", 30);
  kv.set("probes.natural", 10);
  kv.set("probes.zest_reference", 5);
  kv.set("removal.iterations", 20);
  kv.set("removal.eval_every", 10);
  kv.set("ft.finetune_iters", 100);
  kv.set("rob.samples", 20);
  return kv;
}

std::string slurp(const std::filesystem::path& p) {
  std::ifstream f(p);
  return {std::istreambuf_iterator<char>(f), std::istreambuf_iterator<char>()};
}

}  // namespace

TEST_SUITE("negatives") {
  TEST_CASE("five recipes with distinct seeds and jitter inside ten percent") {
    VictimSpec v = quick_spec();
    v.train.epochs = 10;
    const auto r = negative_recipes(v, 5, 123);
    REQUIRE(r.size() == 5);
    std::set<std::uint64_t> seeds;
    for (const auto& x : r) {
      seeds.insert(x.init_seed);
      CHECK(x.init_seed != v.seed);
      CHECK(x.learning_rate >= 0.9 * v.train.learning_rate);
      CHECK(x.learning_rate <= 1.1 * v.train.learning_rate);
      CHECK(x.epochs >= 9);
      CHECK(x.epochs <= 11);
    }
    CHECK(seeds.size() == 5);
    const auto again = negative_recipes(v, 5, 123);
    CHECK(again[3].learning_rate == r[3].learning_rate);
  }

  TEST_CASE("fewer than two negatives is a configuration error") {
    CHECK_THROWS_AS(negative_recipes(quick_spec(), 1, 0), ConfigError);
  }

  TEST_CASE("negatives differ from the victim and from each other") {
    const ModelF& v = fixtures::quick_victim();
    const auto& n = quick_negatives();
    REQUIRE(n.size() == 3);
    for (const auto& m : n) {
      CHECK(m.arch_id == v.arch_id);
      CHECK(m.params[0].value != v.params[0].value);
    }
    CHECK(n[0].params[0].value != n[1].params[0].value);
  }
}

TEST_SUITE("calibration") {
  TEST_CASE("tau is the min distance or the max similarity") {
    CHECK(calibrate_tau(Metric::Lod, {3, 1.5, 2}) == 1.5);
    CHECK(calibrate_tau(Metric::Ddv, {0.2, 0.7, 0.4}) == 0.7);
    CHECK(calibrate_tau(Metric::Mr, {0.1}) == 0.1);
  }

  TEST_CASE("one entry per metric and every negative is not-copy") {
    const ThresholdTable& t = quick_table();
    CHECK(t.entries.size() == all_metrics().size());
    CHECK(t.negatives == 3);
    CHECK(t.trials == 2);
    for (const auto& neg : quick_negatives()) {
      const Verdict v = verify_ownership(fixtures::quick_victim(), neg, quick_probe_sets(), t);
      CHECK_FALSE(v.yes);
      CHECK(v.tally == 0);
      for (const auto& m : v.metrics) CHECK(m.copies == 0);
    }
  }

  TEST_CASE("the victim against itself is a copy under every metric") {
    const Verdict v = verify_ownership(fixtures::quick_victim(), fixtures::quick_victim(), quick_probe_sets(),
                                       quick_table(), Aggregate::And);
    CHECK(v.yes);
    CHECK(v.summary() == "Yes (2/2)");
    for (const auto& m : v.metrics) CHECK(m.copy);
  }

  TEST_CASE("table save and load") {
    const auto dir = fixtures::scratch_dir("thresholds");
    quick_table().save(dir / "t.kv");
    const ThresholdTable back = ThresholdTable::load(dir / "t.kv");
    REQUIRE(back.entries.size() == quick_table().entries.size());
    for (std::size_t i = 0; i < back.entries.size(); ++i) {
      CHECK(back.entries[i].metric == quick_table().entries[i].metric);
      CHECK(back.entries[i].tau == quick_table().entries[i].tau);
    }
    CHECK(back.negatives == quick_table().negatives);
    CHECK(back.seeds == quick_table().seeds);
  }

  TEST_CASE("distinct probe trials use distinct boundary seeds") {
    const auto& p = quick_probe_sets();
    CHECK(p[0].trial == 0);
    CHECK(p[1].trial == 1);
    CHECK(p[0].white_box.cols() == p[0].fingerprints.size() + 20);
    CHECK_FALSE(p[0].fingerprints.samples.isApprox(p[1].fingerprints.samples));
  }
}

TEST_SUITE("verdicts") {
  TEST_CASE("distance flags strictly below tau and similarity strictly above") {
    const ThresholdTable t = table_of({{Metric::Lod, 2.0}, {Metric::Ddv, 0.5}});
    CHECK(t.flags_copy(Metric::Lod, 1.99));
    CHECK_FALSE(t.flags_copy(Metric::Lod, 2.0));
    CHECK(t.flags_copy(Metric::Ddv, 0.51));
    CHECK_FALSE(t.flags_copy(Metric::Ddv, 0.5));
  }

  TEST_CASE("std is the sample standard deviation") {
    MetricVerdict m;
    m.values = {1, 2, 3, 4};
    CHECK(m.mean() == doctest::Approx(2.5));
    CHECK(m.stddev() == doctest::Approx(std::sqrt(5.0 / 3.0)));
    m.values = {7};
    CHECK(m.stddev() == 0);
  }

  TEST_CASE("majority per metric, or and and across metrics") {
    const ThresholdTable t = table_of({{Metric::Lod, 10}, {Metric::Mr, 0.5}});
    // LOD copy in 2 of 3 trials, MR in 1 of 3
    const std::vector<std::vector<double>> values = {{5, 20, 5}, {0.9, 0.1, 0.1}};
    const Verdict any = decide_ownership(t, values, Aggregate::Or);
    CHECK(any.yes);
    CHECK(any.find(Metric::Lod)->copy);
    CHECK_FALSE(any.find(Metric::Mr)->copy);
    CHECK(any.tally == 2);
    CHECK(any.trials == 3);
    const Verdict all = decide_ownership(t, values, Aggregate::And);
    CHECK_FALSE(all.yes);
    CHECK(all.tally == 1);
    CHECK(all.summary() == "No (1/3)");
  }

  TEST_CASE("an even split is not a majority") {
    const ThresholdTable t = table_of({{Metric::Lod, 10}});
    CHECK_FALSE(decide_ownership(t, {{5, 20}}).yes);
  }

  TEST_CASE("a looser tau only adds copy flags") {
    std::mt19937 rng(4);
    std::uniform_real_distribution<double> u(0, 1);
    for (int rep = 0; rep < 200; ++rep) {
      std::vector<std::vector<double>> values(2, std::vector<double>(5));
      for (auto& row : values)
        for (auto& x : row) x = u(rng);
      const double a = u(rng), b = u(rng);
      const ThresholdTable low = table_of({{Metric::Lad, std::min(a, b)}, {Metric::Ddv, std::max(a, b)}});
      const ThresholdTable high = table_of({{Metric::Lad, std::max(a, b)}, {Metric::Ddv, std::min(a, b)}});
      const Verdict v0 = decide_ownership(low, values);
      const Verdict v1 = decide_ownership(high, values);
      for (std::size_t m = 0; m < 2; ++m) CHECK(v1.metrics[m].copies >= v0.metrics[m].copies);
      CHECK((!v0.yes || v1.yes));
      CHECK(v1.tally >= v0.tally);
    }
  }

  TEST_CASE("malformed value tables are rejected") {
    const ThresholdTable t = table_of({{Metric::Lod, 1}, {Metric::Lad, 1}});
    CHECK_THROWS_AS(decide_ownership(t, {{1, 2}}), DomainError);
    CHECK_THROWS_AS(decide_ownership(t, {{1, 2}, {1}}), DomainError);
    CHECK_THROWS_AS(decide_ownership(ThresholdTable{}, {}), ConfigError);
    CHECK_THROWS_AS(parse_aggregate("xor"), ConfigError);
  }
}

TEST_SUITE("plan") {
  TEST_CASE("seed-derived defaults and explicit overrides") {
    KeyValues kv = default_attack_kv();
    kv.set("seed", 7);
    kv.set("ft.seed", 3);
    const ExperimentPlan p = ExperimentPlan::from_kv(kv);
    CHECK(p.negative_seed == 1007);
    CHECK(p.probes.seed == 12);
    CHECK(p.find_attack("ft")->baseline.seed == 3);
    CHECK(p.find_attack("wp")->baseline.seed == 84);
    CHECK(p.find_attack("removal")->removal.seed == 7);
    CHECK(p.attacks.size() == 4);
    CHECK(p.trials == 10);
    CHECK(p.negatives == 5);
  }

  TEST_CASE("to_kv round trip") {
    KeyValues kv = default_attack_kv();
    kv.set("ratios", "0.02,0.1,0.2");
    kv.set("aggregate", "and");
    kv.set("removal.eta", 0.5);
    kv.set("wp.fraction", 0.8);
    const ExperimentPlan p = ExperimentPlan::from_kv(kv);
    const ExperimentPlan q = ExperimentPlan::from_kv(p.to_kv());
    CHECK(q.to_kv().serialize() == p.to_kv().serialize());
    CHECK(q.ratios == std::vector<double>{0.02, 0.1, 0.2});
    CHECK(q.aggregate == Aggregate::And);
    CHECK(q.find_attack("removal")->removal.eta == 0.5);
    CHECK(q.find_attack("wp")->baseline.fraction == 0.8);
  }

  TEST_CASE("invalid plans") {
    const auto bad = [](const std::string& k, const std::string& v) {
      KeyValues kv = default_attack_kv();
      kv.set(k, v);
      return kv;
    };
    CHECK_THROWS_AS(ExperimentPlan::from_kv(bad("trials", "0")), ConfigError);
    CHECK_THROWS_AS(ExperimentPlan::from_kv(bad("ratios", "0.1,1.5")), ConfigError);
    CHECK_THROWS_AS(ExperimentPlan::from_kv(bad("ratios", "0")), ConfigError);
    CHECK_THROWS_AS(ExperimentPlan::from_kv(bad("negatives", "1")), ConfigError);
    CHECK_THROWS_AS(ExperimentPlan::from_kv(bad("attacks", "removal,removal")), ConfigError);
    CHECK_THROWS_AS(ExperimentPlan::from_kv(bad("metrics", "lod,bogus")), ConfigError);
    CHECK_THROWS_AS(ExperimentPlan::from_kv(bad("scenario", "both")), ConfigError);
    CHECK_THROWS_AS(parse_attack_kind("knockoff"), ConfigError);
  }
}

TEST_SUITE("experiment") {
  TEST_CASE("a plan with zero attacks reports only the victim and the calibration models") {
    const auto dir = fixtures::scratch_dir("zero_attacks");
    const ExperimentPlan plan = ExperimentPlan::from_kv(tiny_plan_kv(dir, ""));
    const ExperimentReport r = run_experiment(plan);
    CHECK(r.failures.empty());
    REQUIRE(r.suspects.size() == 3);
    CHECK(r.suspects[0].role == "victim");
    CHECK(r.suspects[1].role == "negative");
    CHECK(r.suspects[2].role == "negative");
    CHECK(r.find("victim")->verdict.yes);
    CHECK_FALSE(r.find("neg_0")->verdict.yes);
    const CsvTable csv = CsvTable::read(dir / "report.csv");
    for (const auto& row : csv.rows) CHECK((row[0] == "victim" || row[0].rfind("neg_", 0) == 0));
    CHECK(std::filesystem::exists(dir / "thresholds.kv"));
    CHECK(std::filesystem::exists(dir / "verdicts.csv"));
  }

  TEST_CASE("every attack and metric cell appears once, and a rerun is a no-op") {
    const auto dir = fixtures::scratch_dir("report");
    KeyValues kv = tiny_plan_kv(dir, "removal,ft");
    kv.set("ratios", "0.02,0.05");
    const ExperimentPlan plan = ExperimentPlan::from_kv(kv);
    const ExperimentReport r = run_experiment(plan);
    CHECK(r.failures.empty());

    const CsvTable csv = CsvTable::read(dir / "report.csv");
    CHECK(csv.header == std::vector<std::string>{"attack", "metric", "mean", "std", "flag"});
    for (const std::string attack : {"removal", "ft"}) {
      for (Metric m : plan.metrics) {
        const auto n = std::count_if(csv.rows.begin(), csv.rows.end(), [&](const auto& row) {
          return row[0] == attack && row[1] == metric_name(m);
        });
        CHECK_MESSAGE(n == 1, attack << " " << metric_name(m));
      }
    }
    const SuspectResult* removal = r.find("removal");
    REQUIRE(removal);
    CHECK(removal->verdict.trials == plan.trials);
    for (const auto& mv : removal->verdict.metrics) {
      const auto row = std::find_if(csv.rows.begin(), csv.rows.end(), [&](const auto& x) {
        return x[0] == "removal" && x[1] == metric_name(mv.metric);
      });
      REQUIRE(row != csv.rows.end());
      CHECK(std::stod((*row)[3]) == doctest::Approx(mv.stddev()));
    }

    CHECK(r.sweep.size() == 2);
    CHECK(std::filesystem::exists(dir / "curves" / "ratio_sweep.csv"));
    CHECK(std::filesystem::exists(dir / "curves" / "removal_fidelity.csv"));
    CHECK(std::filesystem::exists(dir / "curves" / "sweep_r0.02_fidelity.csv"));
    CHECK(std::filesystem::exists(dir / "curves" / "sweep_r0.05_fidelity.csv"));
    CHECK(std::filesystem::exists(dir / "plots" / "fidelity_vs_iteration.svg"));
    CHECK(std::filesystem::exists(dir / "plots" / "distance_vs_ratio.svg"));

    const auto stamp = std::filesystem::last_write_time(dir / "victim" / "model");
    const std::string before = slurp(dir / "report.csv");
    const ExperimentReport again = run_experiment(plan);
    CHECK(again.failures.empty());
    CHECK(std::filesystem::last_write_time(dir / "victim" / "model") == stamp);
    CHECK(slurp(dir / "report.csv") == before);
    const std::string log = slurp(dir / "run.log");
    const auto trained = [&](const std::string& what) {
      std::size_t n = 0;
      for (auto p = log.find(what); p != std::string::npos; p = log.find(what, p + 1)) ++n;
      return n;
    };
    CHECK(trained("training victim") == 1);
  }

  TEST_CASE("checkpoints carry their role") {
    const auto dir = fixtures::scratch_dir("roles");
    Experiment e(ExperimentPlan::from_kv(tiny_plan_kv(dir, "")));
    e.victim();
    e.negatives();
    CHECK(load_checkpoint(dir / "victim" / "model").role() == "victim");
    std::set<std::string> seeds;
    for (int i = 0; i < 2; ++i) {
      const Checkpoint c = load_checkpoint(dir / "negatives" / ("neg_" + std::to_string(i)) / "model");
      CHECK(c.role() == "negative");
      seeds.insert(c.meta.get("seed"));
    }
    CHECK(seeds.size() == 2);
  }

  TEST_CASE("a changed setting invalidates only the affected stage") {
    const auto dir = fixtures::scratch_dir("invalidate");
    KeyValues kv = tiny_plan_kv(dir, "ft");
    {
      Experiment e(ExperimentPlan::from_kv(kv));
      e.attack(*e.plan().find_attack("ft"));
    }
    const auto victim_stamp = std::filesystem::last_write_time(dir / "victim" / "model");
    const auto ft_stamp = std::filesystem::last_write_time(dir / "attacks" / "ft" / "stage.kv");
    kv.set("ft.fraction", 1.0);
    Experiment e(ExperimentPlan::from_kv(kv));
    e.attack(*e.plan().find_attack("ft"));
    CHECK(std::filesystem::last_write_time(dir / "victim" / "model") == victim_stamp);
    CHECK(std::filesystem::last_write_time(dir / "attacks" / "ft" / "stage.kv") != ft_stamp);
  }
}

TEST_SUITE("report files") {
  TEST_CASE("csv round trip with quoting") {
    const auto dir = fixtures::scratch_dir("csv");
    CsvTable t;
    t.header = {"a", "b"};
    t.add({"x,y", "say \"hi\""});
    t.add({"1", ""});
    t.write(dir / "t.csv");
    const CsvTable back = CsvTable::read(dir / "t.csv");
    CHECK(back.header == t.header);
    CHECK(back.rows == t.rows);
  }

  TEST_CASE("numbers print in shortest round-trip form") {
    CHECK(format_number(0.1) == "0.1");
    CHECK(std::stod(format_number(1.0 / 3.0)) == 1.0 / 3.0);
  }

  TEST_CASE("line plot is an svg document") {
    const auto dir = fixtures::scratch_dir("svg");
    PlotSpec spec;
    spec.title = "t";
    write_line_plot_svg(dir / "p.svg", spec, {{"s", {0, 1, 2}, {0.5, 0.2, 0.9}}});
    const std::string s = slurp(dir / "p.svg");
    CHECK(s.find("<svg") != std::string::npos);
    CHECK(s.find("</svg>") != std::string::npos);
    CHECK(s.find("polyline") != std::string::npos);
  }
}

TEST_SUITE("config files") {
  TEST_CASE("comments, whitespace and malformed lines") {
    const KeyValues kv = KeyValues::parse("# plan\n trials = 3   # three\nout=runs/a#b\n\nratios = 0.1, 0.2\n", "t");
    CHECK(kv.get_long_or("trials", 0) == 3);
    CHECK(kv.get("out") == "runs/a#b");
    CHECK(kv.get_doubles_or("ratios", {}) == std::vector<double>{0.1, 0.2});
    CHECK_THROWS_AS(KeyValues::parse("trials 3\n", "t"), ConfigError);
    CHECK_THROWS_AS(KeyValues::parse("= 3\n", "t"), ConfigError);
  }

  TEST_CASE("doubles are written in shortest round-trip form") {
    KeyValues kv;
    kv.set("a", 0.962);
    kv.set("b", 1.0 / 3.0);
    CHECK(kv.get("a") == "0.962");
    CHECK(kv.get_double("b") == 1.0 / 3.0);
  }
}
