#ifndef REMOVALNET_TESTS_FIXTURES_HPP
#define REMOVALNET_TESTS_FIXTURES_HPP

#include <filesystem>
#include <random>
#include <string>

#include "removalnet/nnkit/dataset.hpp"
#include "removalnet/nnkit/model.hpp"
#include "removalnet/nnkit/registry.hpp"
#include "removalnet/nnkit/train.hpp"

namespace fixtures {

inline std::filesystem::path data_dir() { return REMOVALNET_TEST_DATA_DIR; }

inline std::filesystem::path scratch_dir(const std::string& name) {
  auto p = std::filesystem::temp_directory_path() / ("removalnet_test_" + name);
  std::filesystem::remove_all(p);
  std::filesystem::create_directories(p);
  return p;
}

/// Uniform [0,1] inputs, one column per sample.
inline rnet::MatF random_inputs(const rnet::Shape& shape, long n, unsigned seed) {
  std::mt19937 rng(seed);
  std::uniform_real_distribution<float> u(0.f, 1.f);
  rnet::MatF x(shape.size(), n);
  for (Eigen::Index j = 0; j < x.cols(); ++j)
    for (Eigen::Index i = 0; i < x.rows(); ++i) x(i, j) = u(rng);
  return x;
}

inline rnet::LabeledSet random_labeled(const rnet::Shape& shape, long n, int classes, unsigned seed) {
  rnet::LabeledSet s;
  s.shape = shape;
  s.class_count = classes;
  s.x = random_inputs(shape, n, seed);
  for (long i = 0; i < n; ++i) s.y.push_back(static_cast<int>(i % classes));
  return s;
}

inline rnet::ModelD micro_mlp(unsigned seed, int inputs = 5, int classes = 4) {
  return rnet::build_model({"micromlp", {inputs, 1, 1}, classes}, seed).cast<double>();
}

inline rnet::ModelD micro_cnn(unsigned seed, int classes = 3) {
  return rnet::build_model({"microcnn", {1, 6, 6}, classes}, seed).cast<double>();
}

inline const rnet::DatasetBundle& mnist() {
  static const rnet::DatasetBundle bundle = rnet::load_bundle("mnist5k", data_dir());
  return bundle;
}

inline rnet::LabeledSet first_n(const rnet::LabeledSet& s, long n) {
  std::vector<long> idx(static_cast<std::size_t>(n));
  for (long i = 0; i < n; ++i) idx[static_cast<std::size_t>(i)] = i;
  return s.subset(idx);
}

/// smallcnn trained for two epochs on the first 1000 MNIST training images.
inline const rnet::ModelF& quick_victim() {
  static const rnet::ModelF model = [] {
    rnet::TrainConfig cfg;
    cfg.epochs = 2;
    cfg.batch_size = 32;
    cfg.seed = 5;
    return rnet::train(rnet::build_model({"smallcnn", {1, 28, 28}, 10}, 0), first_n(mnist().train, 1000), cfg);
  }();
  return model;
}

}  // namespace fixtures

#endif  // REMOVALNET_TESTS_FIXTURES_HPP
