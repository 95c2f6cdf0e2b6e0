#include <doctest.h>

#include <filesystem>
#include <fstream>

#include "removalnet/errors.hpp"
#include "removalnet/nnkit/checkpoint.hpp"
#include "removalnet/nnkit/dataset.hpp"
#include "removalnet/nnkit/loss.hpp"
#include "removalnet/nnkit/registry.hpp"
#include "removalnet/nnkit/train.hpp"
#include "support/fixtures.hpp"
#include "support/flatten.hpp"
#include "support/oracles.hpp"

using namespace rnet;
using fixtures::flatten;
using fixtures::unflatten;

namespace {

const ArchSpec kCnn{"smallcnn", {1, 28, 28}, 10};
const ArchSpec kMlp{"smallmlp", {1, 28, 28}, 10};

}  // namespace

TEST_SUITE("build_model") {
  TEST_CASE("output width equals class count") {
    const ModelF m = build_model(kCnn, 0);
    const MatF y = m.forward(fixtures::random_inputs(kCnn.input, 3, 1));
    CHECK(y.rows() == 10);
    CHECK(y.cols() == 3);
    CHECK(m.num_units() == 5);
    CHECK(build_model(kMlp, 0).num_units() == 3);
  }

  TEST_CASE("same seed gives identical parameters, different seeds differ") {
    CHECK(build_model(kCnn, 0).same_parameters(build_model(kCnn, 0)));
    CHECK_FALSE(build_model(kCnn, 1).same_parameters(build_model(kCnn, 2)));
  }

  TEST_CASE("unknown architecture is a configuration error") {
    CHECK_THROWS_AS(build_model({"vgg19", {3, 32, 32}, 10}, 0), ConfigError);
  }

  TEST_CASE("default split follows the first half of the units") {
    const ModelF cnn = build_model(kCnn, 0);
    CHECK(default_split(cnn) == 3);
    CHECK(cnn.latent_shape(3) == Shape{16, 7, 7});
    CHECK(default_split(build_model(kMlp, 0)) == 2);
  }
}

TEST_SUITE("split_forward") {
  TEST_CASE("suffix(prefix(x)) equals forward(x) bitwise at every split") {
    for (const ArchSpec& spec : {kCnn, kMlp}) {
      const ModelF m = build_model(spec, 7);
      const MatF x = fixtures::random_inputs(spec.input, 4, 3);
      const MatF direct = m.forward(x);
      for (int l = 2; l <= m.num_units(); ++l) {
        const auto s = m.split_forward(l, x);
        CHECK((s.logits - direct).cwiseAbs().maxCoeff() == 0.0f);
        CHECK(s.latent.rows() == m.latent_size(l));
      }
    }
  }

  TEST_CASE("split at L exposes the penultimate representation") {
    const ModelF m = build_model(kCnn, 1);
    const MatF x = fixtures::random_inputs(kCnn.input, 2, 5);
    const auto s = m.split_forward(m.num_units(), x);
    CHECK(s.latent.rows() == 64);
    CHECK(s.latent == m.forward_units(0, m.num_units() - 1, x));
  }

  TEST_CASE("out-of-range split is a bounds error") {
    const ModelF m = build_model(kCnn, 1);
    const MatF x = fixtures::random_inputs(kCnn.input, 1, 5);
    CHECK_THROWS_AS(m.split_forward(1, x), BoundsError);
    CHECK_THROWS_AS(m.split_forward(6, x), BoundsError);
  }
}

TEST_SUITE("gradients") {
  // Cross-entropy gradients through the hand-written backward pass against
  // central finite differences, in double precision.
  void check_param_gradient(ModelD model, const Shape& in, int classes) {
    const MatD x = fixtures::random_inputs(in, 3, 11).cast<double>();
    const std::vector<int> y = {0, classes - 1, 1};
    Tape<double> tape;
    const MatD logits = model.forward_units(0, model.num_units(), x, &tape);
    Gradients<double> g = model.zero_gradients();
    model.backward(tape, cross_entropy(logits, y).grad, &g);

    const auto f = [&](const Eigen::VectorXd& w) {
      ModelD m = model;
      unflatten(m, w);
      return cross_entropy(m.forward(x), y).value;
    };
    const Eigen::VectorXd fd = oracle::central_difference(f, flatten(model));
    CHECK(oracle::relative_error(flatten(g), fd) < 1e-4);
  }

  TEST_CASE("dense micro-model parameter gradients match finite differences") {
    check_param_gradient(fixtures::micro_mlp(3), {5, 1, 1}, 4);
  }

  TEST_CASE("conv/pool micro-model parameter gradients match finite differences") {
    check_param_gradient(fixtures::micro_cnn(4), {1, 6, 6}, 3);
  }

  TEST_CASE("input gradient matches finite differences") {
    const ModelD model = fixtures::micro_cnn(5);
    const MatD x = fixtures::random_inputs({1, 6, 6}, 1, 2).cast<double>();
    const std::vector<int> y = {2};
    Tape<double> tape;
    const MatD logits = model.forward_units(0, model.num_units(), x, &tape);
    const MatD gx = model.backward(tape, cross_entropy(logits, y).grad, nullptr);
    const auto f = [&](const Eigen::VectorXd& v) {
      return cross_entropy(model.forward(MatD(v)), y).value;
    };
    const Eigen::VectorXd fd = oracle::central_difference(f, Eigen::VectorXd(x.col(0)));
    CHECK(oracle::relative_error(Eigen::VectorXd(gx.col(0)), fd) < 1e-4);
  }
}

TEST_SUITE("train") {
  TEST_CASE("epochs = 0 is rejected") {
    TrainConfig cfg;
    cfg.epochs = 0;
    CHECK_THROWS_AS(train(build_model(kMlp, 0), fixtures::random_labeled(kMlp.input, 8, 10, 1), cfg),
                    ConfigError);
  }

  TEST_CASE("empty training set is a domain error") {
    LabeledSet empty;
    empty.x.resize(784, 0);
    CHECK_THROWS_AS(train(build_model(kMlp, 0), empty, TrainConfig{}), DomainError);
  }

  TEST_CASE("divergence reports the iteration") {
    TrainConfig cfg;
    cfg.learning_rate = 1e30;
    cfg.epochs = 3;
    cfg.batch_size = 4;
    try {
      train(build_model(kMlp, 0), fixtures::random_labeled(kMlp.input, 16, 10, 1), cfg);
      FAIL("expected TrainingError");
    } catch (const TrainingError& e) {
      CHECK(e.iteration() >= 0);
    }
  }

  TEST_CASE("MNIST-1k: loss falls over the first epoch, accuracy floor, determinism") {
    DatasetBundle b = load_bundle("mnist5k", fixtures::data_dir());
    std::vector<long> first(1000);
    for (long i = 0; i < 1000; ++i) first[static_cast<std::size_t>(i)] = i;
    const LabeledSet train1k = b.train.subset(first);

    TrainConfig cfg;
    cfg.epochs = 3;
    cfg.batch_size = 32;
    cfg.learning_rate = 0.01;
    cfg.seed = 5;
    std::vector<double> losses;
    const ModelF m = train(build_model(kCnn, 0), train1k, cfg, &losses);
    const long per_epoch = 1000 / 32 + 1;
    double head = 0, tail = 0;
    for (long i = 0; i < 5; ++i) head += losses[static_cast<std::size_t>(i)];
    for (long i = per_epoch - 5; i < per_epoch; ++i) tail += losses[static_cast<std::size_t>(i)];
    CHECK(tail < head);

    const double acc = evaluate_accuracy(m, b.test);
    MESSAGE("smallcnn on MNIST-1k, 3 epochs: test accuracy " << acc);
    CHECK(acc > 0.85);

    const ModelF again = train(build_model(kCnn, 0), train1k, cfg);
    CHECK(again.same_parameters(m));
    CHECK(evaluate_accuracy(again, b.test) == acc);
  }
}

TEST_SUITE("evaluate_accuracy") {
  TEST_CASE("self-labelled samples score 1") {
    const ModelF m = build_model(kMlp, 3);
    LabeledSet s = fixtures::random_labeled(kMlp.input, 20, 10, 4);
    s.y = argmax_columns(m.forward(s.x));
    CHECK(evaluate_accuracy(m, s) == 1.0);
  }

  TEST_CASE("constant-output model on a balanced set scores exactly 0.1") {
    ModelF m = build_model(kMlp, 3);
    m.params[4].value.setZero();     // fc3.weight
    m.params[5].value.setZero();     // fc3.bias
    m.params[5].value(3, 0) = 1.0f;  // always class 3
    const LabeledSet s = fixtures::random_labeled(kMlp.input, 50, 10, 4);
    CHECK(evaluate_accuracy(m, s) == 0.1);
  }

  TEST_CASE("empty set is a domain error") {
    LabeledSet empty;
    empty.x.resize(784, 0);
    CHECK_THROWS_AS(evaluate_accuracy(build_model(kMlp, 0), empty), DomainError);
  }
}

TEST_SUITE("checkpoint") {
  TEST_CASE("round-trip preserves parameters bitwise and metadata") {
    const auto dir = fixtures::scratch_dir("ckpt_roundtrip");
    const ModelF m = build_model(kCnn, 9);
    KeyValues meta;
    meta.set("role", "victim");
    meta.set("seed", 9L);
    save_checkpoint(dir, m, meta);
    const Checkpoint c = load_checkpoint(dir);
    CHECK(c.model.same_parameters(m));
    CHECK(c.role() == "victim");
    CHECK(c.meta.get_long("seed") == 9);
    CHECK(c.model.arch_id == "smallcnn");
  }

  TEST_CASE("truncated tensor file is an I/O error") {
    const auto dir = fixtures::scratch_dir("ckpt_truncated");
    save_checkpoint(dir, build_model(kMlp, 1), KeyValues{});
    std::filesystem::resize_file(dir / "tensors" / "fc1.weight.bin", 100);
    CHECK_THROWS_AS(load_checkpoint(dir), IoError);
  }

  TEST_CASE("missing checkpoint is an I/O error") {
    CHECK_THROWS_AS(load_checkpoint(fixtures::scratch_dir("ckpt_missing") / "nothing"), IoError);
  }

  TEST_CASE("tensor shapes disagreeing with the architecture are a schema error") {
    const auto dir = fixtures::scratch_dir("ckpt_schema");
    save_checkpoint(dir, build_model(kMlp, 1), KeyValues{});
    KeyValues meta = KeyValues::read(dir / "meta");
    meta.set("arch_id", "smallcnn");
    meta.write(dir / "meta");
    CHECK_THROWS_AS(load_checkpoint(dir), SchemaError);
  }

  TEST_CASE("tensor files are little-endian float32 row-major") {
    const auto dir = fixtures::scratch_dir("ckpt_layout");
    MatF m(2, 3);
    m << 1, 2, 3, 4, 5, 6;
    write_tensor_file(dir / "t.bin", m);
    std::ifstream in(dir / "t.bin", std::ios::binary);
    float raw[6];
    in.read(reinterpret_cast<char*>(raw), sizeof raw);
    for (int i = 0; i < 6; ++i) CHECK(raw[i] == static_cast<float>(i + 1));
  }
}

TEST_SUITE("dataset") {
  TEST_CASE("mnist5k bundle loads with disjoint splits") {
    const DatasetBundle b = load_bundle("mnist5k", fixtures::data_dir());
    CHECK(b.train.size() == 4000);
    CHECK(b.test.size() == 1000);
    CHECK(b.train.x.maxCoeff() <= 1.0f);
    CHECK_NOTHROW(b.validate());
  }

  TEST_CASE("overlap between substitute and test is rejected") {
    DatasetBundle b = load_bundle("mnist5k", fixtures::data_dir());
    b.substitute = b.test.subset({0, 1, 2});
    CHECK_THROWS_AS(b.validate(), DomainError);
  }

  TEST_CASE("missing dataset directory is an I/O error") {
    CHECK_THROWS_AS(load_bundle("nope", fixtures::data_dir()), IoError);
  }
}
