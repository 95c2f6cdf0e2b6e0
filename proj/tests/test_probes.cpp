#include <doctest.h>

#include <algorithm>
#include <map>

#include "removalnet/probes/probes.hpp"
#include "support/fixtures.hpp"

using namespace rnet;

namespace {

std::map<int, long> class_counts(const std::vector<int>& y) {
  std::map<int, long> counts;
  for (int v : y) ++counts[v];
  return counts;
}

double median(std::vector<double> v) {
  std::sort(v.begin(), v.end());
  return v[v.size() / 2];
}

}  // namespace

TEST_SUITE("adversarial attacks") {
  TEST_CASE("epsilon 0 returns the inputs unchanged") {
    const ModelF& m = fixtures::quick_victim();
    const LabeledSet clean = fixtures::first_n(fixtures::mnist().test, 20);
    AdvConfig cfg;
    cfg.epsilon = 0;
    cfg.step_size = 0;
    CHECK(fgsm(m, clean, cfg).x == clean.x);
    CHECK(pgd(m, clean, cfg).x == clean.x);
  }

  TEST_CASE("outputs stay in the epsilon-ball and the unit box") {
    const ModelF& m = fixtures::quick_victim();
    const LabeledSet clean = fixtures::first_n(fixtures::mnist().test, 50);
    const AdvConfig cfg;
    for (const LabeledSet& adv : {fgsm(m, clean, cfg), pgd(m, clean, cfg)}) {
      CHECK((adv.x - clean.x).cwiseAbs().maxCoeff() <= cfg.epsilon + 1e-6);
      CHECK(adv.x.minCoeff() >= 0.f);
      CHECK(adv.x.maxCoeff() <= 1.f);
      CHECK(adv.y == clean.y);
    }
  }

  TEST_CASE("pgd with one step of size epsilon equals fgsm") {
    const ModelF& m = fixtures::quick_victim();
    const LabeledSet clean = fixtures::first_n(fixtures::mnist().test, 40);
    AdvConfig cfg;
    cfg.steps = 1;
    cfg.step_size = cfg.epsilon;
    CHECK(pgd(m, clean, cfg).x == fgsm(m, clean, cfg).x);
  }

  TEST_CASE("adversarial accuracy is below clean accuracy") {
    const ModelF& m = fixtures::quick_victim();
    const LabeledSet clean = fixtures::first_n(fixtures::mnist().test, 300);
    const double acc = evaluate_accuracy(m, clean);
    const double acc_fgsm = evaluate_accuracy(m, fgsm(m, clean, AdvConfig{}));
    const double acc_pgd = evaluate_accuracy(m, pgd(m, clean, AdvConfig{}));
    MESSAGE("clean " << acc << ", fgsm " << acc_fgsm << ", pgd " << acc_pgd);
    CHECK(acc_fgsm < acc);
    CHECK(acc_pgd < acc);
    CHECK(acc_pgd <= acc_fgsm);
  }

  TEST_CASE("invalid budgets are rejected") {
    const ModelF& m = fixtures::quick_victim();
    const LabeledSet clean = fixtures::first_n(fixtures::mnist().test, 2);
    AdvConfig cfg;
    cfg.step_size = 2 * cfg.epsilon;
    CHECK_THROWS_AS(pgd(m, clean, cfg), ConfigError);
    cfg = AdvConfig{};
    cfg.steps = 0;
    CHECK_THROWS_AS(pgd(m, clean, cfg), ConfigError);
    CHECK_THROWS_AS(fgsm(m, LabeledSet{}, AdvConfig{}), DomainError);
  }
}

TEST_SUITE("boundary fingerprints") {
  TEST_CASE("returned points sit closer to the boundary than their seeds") {
    const ModelF& m = fixtures::quick_victim();
    const MatF seeds = fixtures::first_n(fixtures::mnist().test, 80).x;
    const FingerprintSet fp = boundary_fingerprints(m, seeds, 30);
    REQUIRE(fp.size() > 0);
    CHECK(fp.size() <= 30);
    CHECK(fp.shortfall == (fp.size() < 30));
    const std::vector<double> gaps = logit_gaps(m.forward(fp.samples));
    for (double g : gaps) CHECK(g < 0.5);
    CHECK(median(gaps) < median(logit_gaps(m.forward(seeds))));
    CHECK(argmax_columns(m.forward(fp.samples)) == fp.victim_labels);
    CHECK(fp.samples.minCoeff() >= 0.f);
    CHECK(fp.samples.maxCoeff() <= 1.f);
  }

  TEST_CASE("unreachable counts are flagged as a shortfall") {
    const ModelF& m = fixtures::quick_victim();
    const MatF seeds = fixtures::first_n(fixtures::mnist().test, 5).x;
    const FingerprintSet fp = boundary_fingerprints(m, seeds, 50);
    CHECK(fp.size() <= 5);
    CHECK(fp.shortfall);
  }

  TEST_CASE("deterministic for a fixed victim and seed set") {
    const ModelF& m = fixtures::quick_victim();
    const MatF seeds = fixtures::first_n(fixtures::mnist().test, 20).x;
    const FingerprintSet a = boundary_fingerprints(m, seeds, 10);
    const FingerprintSet b = boundary_fingerprints(m, seeds, 10);
    CHECK(a.samples == b.samples);
    CHECK(a.victim_labels == b.victim_labels);
  }

  TEST_CASE("fingerprint sets survive a save/load round trip") {
    const ModelF& m = fixtures::quick_victim();
    const FingerprintSet fp = boundary_fingerprints(m, fixtures::first_n(fixtures::mnist().test, 20).x, 8);
    const auto dir = fixtures::scratch_dir("fingerprints");
    save_fingerprints(dir, fp);
    const FingerprintSet back = load_fingerprints(dir);
    CHECK(back.samples == fp.samples);
    CHECK(back.victim_labels == fp.victim_labels);
    CHECK(back.kind == fp.kind);
    CHECK(back.shape == fp.shape);
    CHECK(back.shortfall == fp.shortfall);
    CHECK(back.generator.get("gap_bound") == fp.generator.get("gap_bound"));
    CHECK_THROWS_AS(load_fingerprints(dir / "missing"), IoError);
  }
}

TEST_SUITE("sample selection") {
  TEST_CASE("reference set is class-stratified and reproducible") {
    const DatasetBundle& data = fixtures::mnist();
    const LabeledSet ref = zest_reference_set(data, 100, 7);
    CHECK(ref.size() == 100);
    for (const auto& [cls, count] : class_counts(ref.y)) CHECK(count == 10);
    const LabeledSet odd = zest_reference_set(data, 37, 7);
    long lo = 1000, hi = 0;
    for (const auto& [cls, count] : class_counts(odd.y)) {
      lo = std::min(lo, count);
      hi = std::max(hi, count);
    }
    CHECK(hi - lo <= 1);
    CHECK(zest_reference_set(data, 37, 7).x == odd.x);
    CHECK(zest_reference_set(data, 37, 8).x != odd.x);
  }

  TEST_CASE("substitute fraction of the training pool") {
    const LabeledSet& pool = fixtures::mnist().train;
    const LabeledSet sub = select_substitute_fraction(pool, 0.02, 3);
    CHECK(sub.size() == 80);
    for (const auto& [cls, count] : class_counts(sub.y)) CHECK(count == 8);
    CHECK_THROWS_AS(select_substitute_fraction(pool, 0.0, 3), DomainError);
    CHECK_THROWS_AS(select_substitute(pool, pool.size() + 1, 3), DomainError);
  }
}
