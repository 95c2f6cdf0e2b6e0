#include <doctest.h>

#include <cmath>

#include "removalnet/metrics/metrics.hpp"
#include "removalnet/nnkit/registry.hpp"
#include "support/fixtures.hpp"
#include "support/metric_oracles.hpp"

using namespace rnet;

namespace {

const ArchSpec kCnn{"smallcnn", {1, 28, 28}, 10};

/// dense(in -> hidden) + relu, dense(hidden -> classes); split 2 reads the
/// hidden layer.
ModelF two_layer(int in, int hidden, int classes) {
  return StackBuilder("twolayer", {in, 1, 1}, classes, 0).dense("fc1", hidden).relu().dense("fc2", classes).finish();
}

MatF cols(std::initializer_list<std::initializer_list<float>> columns) {
  const auto n = static_cast<Eigen::Index>(columns.size());
  const auto d = static_cast<Eigen::Index>(columns.begin()->size());
  MatF m(d, n);
  Eigen::Index j = 0;
  for (const auto& c : columns) {
    Eigen::Index i = 0;
    for (float v : c) m(i++, j) = v;
    ++j;
  }
  return m;
}

ZestConfig small_zest() {
  ZestConfig z;
  z.masks = 30;
  return z;
}

}  // namespace

TEST_SUITE("metric identity and symmetry") {
  TEST_CASE("suspect == victim gives identity values for all six metrics") {
    const ModelF m = build_model(kCnn, 3);
    const MatF probes = fixtures::random_inputs(kCnn.input, 12, 1);
    CHECK(lod(m, m, probes, 4).value == 0.0);
    CHECK(lad(m, m, probes, {4, 0, 0}).value == 0.0);
    CHECK(zest_distance(m, m, probes.leftCols(4), ZestMode::L2, small_zest()).value == 0.0);
    CHECK(std::abs(zest_distance(m, m, probes.leftCols(4), ZestMode::Cosine, small_zest()).value) <= 1e-9);
    CHECK(std::abs(ddv_similarity(m, m, probes).value - 1.0) <= 1e-9);
    CHECK(matching_rate(m, m, probes).value == 1.0);
  }

  TEST_CASE("all six metrics are symmetric in their model arguments") {
    const ModelF a = build_model(kCnn, 3);
    const ModelF b = build_model(kCnn, 4);
    const MatF probes = fixtures::random_inputs(kCnn.input, 10, 2);
    CHECK(lod(a, b, probes, 4).value == lod(b, a, probes, 4).value);
    CHECK(lad(a, b, probes, {4, 0, 0}).value == lad(b, a, probes, {4, 0, 0}).value);
    CHECK(zest_distance(a, b, probes.leftCols(3), ZestMode::L2, small_zest()).value ==
          doctest::Approx(zest_distance(b, a, probes.leftCols(3), ZestMode::L2, small_zest()).value).epsilon(1e-12));
    CHECK(zest_distance(a, b, probes.leftCols(3), ZestMode::Cosine, small_zest()).value ==
          doctest::Approx(zest_distance(b, a, probes.leftCols(3), ZestMode::Cosine, small_zest()).value).epsilon(1e-12));
    CHECK(ddv_similarity(a, b, probes).value == doctest::Approx(ddv_similarity(b, a, probes).value).epsilon(1e-12));
    CHECK(matching_rate(a, b, probes).value == matching_rate(b, a, probes).value);
  }

  TEST_CASE("ranges: MR and LAD in [0,1], DDV cosine in [-1,1] over random model pairs") {
    for (unsigned seed = 0; seed < 6; ++seed) {
      const ModelD a = fixtures::micro_mlp(seed);
      const ModelD b = fixtures::micro_mlp(seed + 100);
      const MatF probes = fixtures::random_inputs({5, 1, 1}, 8, seed);
      const double mr = matching_rate(a, b, probes).value;
      const double ld = lad(a, b, probes, {2, 0, 0}).value;
      const double dv = ddv_similarity(a, b, probes).value;
      CHECK((mr >= 0 && mr <= 1));
      CHECK((ld >= 0 && ld <= 1));
      CHECK((dv >= -1 && dv <= 1));
    }
  }
}

TEST_SUITE("lod") {
  TEST_CASE("unit-vector layer outputs e1 and e2 are sqrt(2) apart") {
    ModelF a = two_layer(2, 3, 2);
    ModelF b = a;
    for (ModelF* m : {&a, &b}) {
      m->params[0].value.setZero();
      m->params[1].value.setZero();
    }
    a.params[1].value(0, 0) = 1.0f;
    b.params[1].value(1, 0) = 1.0f;
    const MatF probe = cols({{0.3f, 0.7f}});
    CHECK(lod(a, b, probe, 2).value == doctest::Approx(std::sqrt(2.0)).epsilon(1e-12));
  }

  TEST_CASE("architecture mismatch is rejected") {
    const ModelF cnn = build_model(kCnn, 0);
    const ModelF mlp = build_model({"smallmlp", {1, 28, 28}, 10}, 0);
    const MatF probes = fixtures::random_inputs(kCnn.input, 2, 0);
    CHECK_THROWS_AS(lod(cnn, mlp, probes, 2), MetricInapplicable);
    CHECK_THROWS_AS(lad(cnn, mlp, probes, {2, 0, 0}), MetricInapplicable);
  }

  TEST_CASE("no probes is a domain error") {
    const ModelF m = build_model(kCnn, 0);
    CHECK_THROWS_AS(lod(m, m, MatF(784, 0), 4), DomainError);
  }
}

TEST_SUITE("lad") {
  // Probes e1, e2 through an identity first layer give activation patterns
  // (1,0) and (0,1).
  ModelF identity_hidden() {
    ModelF m = two_layer(2, 2, 2);
    m.params[0].value.setIdentity();
    m.params[1].value.setZero();
    return m;
  }

  TEST_CASE("one disagreeing cell out of four gives 0.25") {
    const ModelF a = identity_hidden();
    ModelF b = identity_hidden();
    b.params[0].value << 1, 0, 1, 1;  // x1 -> (1,1), x2 -> (0,1)
    const MatF probes = cols({{1, 0}, {0, 1}});
    CHECK(lad(a, b, probes, {2, 2, 0}).value == 0.25);
  }

  TEST_CASE("every neuron flipped on every probe gives 1") {
    const ModelF a = identity_hidden();
    ModelF b = identity_hidden();
    b.params[0].value << 0, 1, 1, 0;
    const MatF probes = cols({{1, 0}, {0, 1}});
    CHECK(lad(a, b, probes, {2, 2, 0}).value == 1.0);
  }

  TEST_CASE("profile width must match the layer") {
    const ModelF a = identity_hidden();
    CHECK_THROWS_AS(lad(a, a, cols({{1, 0}}), {2, 5, 0}), DomainError);
  }
}

TEST_SUITE("zest") {
  TEST_CASE("constant-output models differ only in intercepts") {
    ModelF a = two_layer(16, 3, 4);
    ModelF b = a;
    for (ModelF* m : {&a, &b}) {
      m->params[2].value.setZero();
      m->params[3].value.setZero();
    }
    a.params[3].value(0, 0) = 2.0f;
    b.params[3].value(2, 0) = -1.0f;
    ZestConfig cfg = small_zest();
    const MatF reference = fixtures::random_inputs({16, 1, 1}, 3, 9);
    // segments are cut from the 2-D image layout
    a.input_shape = b.input_shape = {1, 4, 4};
    const LinearSurrogate sa = fit_linear_surrogate(a, reference, cfg);
    const LinearSurrogate sb = fit_linear_surrogate(b, reference, cfg);
    CHECK(sa.weights.cwiseAbs().maxCoeff() <= 1e-12);
    CHECK(sb.weights.cwiseAbs().maxCoeff() <= 1e-12);
    CHECK((sa.intercepts - sb.intercepts).norm() > 0.1);
    CHECK(zest_distance(a, b, reference, ZestMode::L2, cfg).value <= 1e-12);
  }

  TEST_CASE("fixed mask seed reproduces the surrogate bitwise") {
    const ModelF m = build_model(kCnn, 5);
    const MatF reference = fixtures::random_inputs(kCnn.input, 3, 4);
    const LinearSurrogate s1 = fit_linear_surrogate(m, reference, small_zest());
    const LinearSurrogate s2 = fit_linear_surrogate(m, reference, small_zest());
    CHECK(s1.weights == s2.weights);
    CHECK(s1.weights.rows() == 16 * 10);
    CHECK(s1.weights.cols() == 3);
  }

  TEST_CASE("different mask seeds change the surrogate") {
    const ModelF m = build_model(kCnn, 5);
    const MatF reference = fixtures::random_inputs(kCnn.input, 2, 4);
    ZestConfig other = small_zest();
    other.mask_seed = 7;
    CHECK(fit_linear_surrogate(m, reference, small_zest()).weights != fit_linear_surrogate(m, reference, other).weights);
  }

  TEST_CASE("masking replaces whole grid cells with the fill value") {
    const Shape shape{1, 4, 4};
    Vec<float> x = Vec<float>::Constant(16, 0.9f);
    MatD masks = MatD::Ones(1, 4);
    masks(0, 3) = 0.0;  // bottom-right 2x2 cell on a 2x2 grid
    Vec<float> fill(1);
    fill << 0.25f;
    const MatF out = apply_segment_masks(x, shape, masks, 2, fill);
    CHECK(out(15, 0) == 0.25f);
    CHECK(out(10, 0) == 0.25f);
    CHECK(out(0, 0) == 0.9f);
    CHECK((out.array() == 0.25f).count() == 4);
  }
}

TEST_SUITE("ddv and matching rate") {
  TEST_CASE("three hand-set output vectors: DDV cosine matches direct computation") {
    ModelF a = two_layer(3, 3, 3);
    ModelF b = a;
    for (ModelF* m : {&a, &b}) {
      m->params[0].value.setIdentity();
      m->params[1].value.setZero();
      m->params[3].value.setZero();
    }
    a.params[2].value << 2, 0, 0, 0, 1, 0, 0, 0, 3;
    b.params[2].value << 0, 1, 0, 2, 0, 0, 1, 1, 1;
    const MatF probes = cols({{1, 0, 0}, {0, 1, 0}, {0.5f, 0.5f, 1}});
    const auto oa = oracle::columns(a.forward(probes));
    const auto ob = oracle::columns(b.forward(probes));
    CHECK(oracle::ddv(oa).size() == 3);
    CHECK(ddv_similarity(a, b, probes).value == doctest::Approx(oracle::ddv_similarity(oa, ob)).epsilon(1e-9));
  }

  TEST_CASE("DDV needs two probes") {
    const ModelF m = build_model(kCnn, 0);
    CHECK_THROWS_AS(ddv_similarity(m, m, fixtures::random_inputs(kCnn.input, 1, 0)), DomainError);
  }

  TEST_CASE("cyclically shifted labels never match") {
    ModelF a = two_layer(4, 4, 4);
    for (int i = 0; i < 4; ++i) {
      a.params[i].value.setZero();
    }
    a.params[0].value.setIdentity();
    a.params[2].value.setIdentity();
    ModelF b = a;
    b.params[2].value.setZero();
    for (int k = 0; k < 4; ++k) b.params[2].value((k + 1) % 4, k) = 1.0f;
    const MatF probes = cols({{1, 0, 0, 0}, {0, 1, 0, 0}, {0, 0, 1, 0}, {0, 0, 0.2f, 0.9f}});
    CHECK(matching_rate(a, b, probes).value == 0.0);
  }
}

TEST_SUITE("brute-force oracle equivalence") {
  TEST_CASE("LOD, LAD, DDV, MR agree with loop evaluations on <= 8 probes, <= 4 classes") {
    for (unsigned seed = 0; seed < 10; ++seed) {
      const ModelD a = fixtures::micro_mlp(seed, 5, 4);
      const ModelD b = fixtures::micro_mlp(seed + 50, 5, 4);
      const MatF probes = fixtures::random_inputs({5, 1, 1}, 2 + seed % 7, seed);
      const MatD pd = probes.cast<double>();
      const auto la = oracle::columns(a.forward_units(0, 1, pd));
      const auto lb = oracle::columns(b.forward_units(0, 1, pd));
      const auto oa = oracle::columns(a.forward(pd));
      const auto ob = oracle::columns(b.forward(pd));
      CHECK(std::abs(lod(a, b, probes, 2).value - oracle::lod(la, lb)) < 1e-6);
      CHECK(std::abs(lad(a, b, probes, {2, 0, 0}).value - oracle::lad(la, lb)) < 1e-6);
      CHECK(std::abs(ddv_similarity(a, b, probes).value - oracle::ddv_similarity(oa, ob)) < 1e-6);
      CHECK(std::abs(matching_rate(a, b, probes).value - oracle::matching_rate(oa, ob)) < 1e-6);
    }
  }
}

TEST_SUITE("rob") {
  TEST_CASE("identical models have zero robustness distance, values in [0,1]") {
    const ModelF m = build_model(kCnn, 2);
    const ModelF n = build_model(kCnn, 3);
    const LabeledSet adv = fixtures::random_labeled(kCnn.input, 20, 10, 6);
    const Robustness same = rob_and_robd(m, m, adv);
    CHECK(same.distance == 0.0);
    const Robustness diff = rob_and_robd(m, n, adv);
    CHECK((diff.victim >= 0 && diff.victim <= 1 && diff.suspect >= 0 && diff.suspect <= 1));
    CHECK(diff.distance == doctest::Approx(std::abs(diff.victim - diff.suspect)));
  }

  TEST_CASE("empty adversarial set is a domain error") {
    const ModelF m = build_model(kCnn, 2);
    LabeledSet empty;
    empty.x.resize(784, 0);
    CHECK_THROWS_AS(rob_and_robd(m, m, empty), DomainError);
  }
}
