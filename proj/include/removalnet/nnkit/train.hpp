#ifndef REMOVALNET_NNKIT_TRAIN_HPP
#define REMOVALNET_NNKIT_TRAIN_HPP

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <random>
#include <string>
#include <vector>

#include "removalnet/errors.hpp"
#include "removalnet/nnkit/loss.hpp"
#include "removalnet/nnkit/model.hpp"

namespace rnet {

struct TrainConfig {
  int epochs = 5;
  double learning_rate = 0.01;
  double momentum = 0.9;
  int batch_size = 64;
  std::uint64_t seed = 0;
  // When positive, replaces epochs * ceil(n / batch_size) as the step count.
  long iterations = 0;

  void validate() const {
    if (epochs < 1) throw ConfigError("TrainConfig: epochs must be >= 1");
    if (batch_size < 1) throw ConfigError("TrainConfig: batch_size must be >= 1");
    if (!(learning_rate > 0)) throw ConfigError("TrainConfig: learning_rate must be positive");
    if (momentum < 0 || momentum >= 1) throw ConfigError("TrainConfig: momentum must be in [0,1)");
  }
};

/// SGD with heavy-ball momentum (v = mu*v + g; w -= lr*v). Parameters can be
/// frozen, and multiplicative masks keep pruned weights at exactly zero.
template <typename Scalar>
class SgdMomentum {
 public:
  SgdMomentum(const LayeredModel<Scalar>& model, double lr, double momentum)
      : lr_(static_cast<Scalar>(lr)), momentum_(static_cast<Scalar>(momentum)) {
    velocity_ = model.zero_gradients();
    trainable.assign(model.params.size(), true);
  }

  std::vector<bool> trainable;
  std::vector<Mat<Scalar>> masks;  // empty, or one per parameter (empty matrix = unmasked)

  void step(LayeredModel<Scalar>& model, Gradients<Scalar>& grads) {
    for (std::size_t i = 0; i < model.params.size(); ++i) {
      if (!trainable[i]) continue;
      const bool masked = i < masks.size() && masks[i].size() > 0;
      if (masked) grads[i].array() *= masks[i].array();
      velocity_[i] = momentum_ * velocity_[i] + grads[i];
      model.params[i].value -= lr_ * velocity_[i];
      if (masked) model.params[i].value.array() *= masks[i].array();
    }
  }

  Gradients<Scalar>& velocity() { return velocity_; }
  const Gradients<Scalar>& velocity() const { return velocity_; }
  void set_learning_rate(double lr) { lr_ = static_cast<Scalar>(lr); }

 private:
  Scalar lr_;
  Scalar momentum_;
  Gradients<Scalar> velocity_;
};

/// Draws minibatch indices epoch by epoch from a seeded shuffle.
class BatchSampler {
 public:
  BatchSampler(long n, int batch_size, std::uint64_t seed)
      : order_(static_cast<std::size_t>(n)), batch_(std::min<long>(batch_size, n)), rng_(seed) {
    std::iota(order_.begin(), order_.end(), 0L);
    std::shuffle(order_.begin(), order_.end(), rng_);
  }

  std::vector<long> next() {
    if (pos_ + batch_ > static_cast<long>(order_.size())) {
      std::shuffle(order_.begin(), order_.end(), rng_);
      pos_ = 0;
    }
    std::vector<long> idx(order_.begin() + pos_, order_.begin() + pos_ + batch_);
    pos_ += batch_;
    return idx;
  }

  long batches_per_epoch() const {
    return (static_cast<long>(order_.size()) + batch_ - 1) / batch_;
  }

 private:
  std::vector<long> order_;
  long batch_;
  long pos_ = 0;
  std::mt19937_64 rng_;
};

/// Generic minibatch loop. loss_fn(model, batch, grads) accumulates parameter
/// gradients into grads and returns the batch loss.
template <typename Scalar, typename LossFn>
void fit(LayeredModel<Scalar>& model, const LabeledSet& data, const TrainConfig& cfg,
         SgdMomentum<Scalar>& opt, LossFn&& loss_fn, std::vector<double>* losses = nullptr) {
  cfg.validate();
  if (data.empty()) throw DomainError("train: empty training set");
  BatchSampler sampler(data.size(), cfg.batch_size, cfg.seed);
  const long steps = cfg.iterations > 0 ? cfg.iterations : cfg.epochs * sampler.batches_per_epoch();
  for (long it = 0; it < steps; ++it) {
    const LabeledSet batch = data.subset(sampler.next());
    Gradients<Scalar> grads = model.zero_gradients();
    const double loss = static_cast<double>(loss_fn(model, batch, grads));
    if (!std::isfinite(loss)) throw TrainingError("non-finite training loss", it);
    if (losses) losses->push_back(loss);
    opt.step(model, grads);
  }
}

/// Cross-entropy training with momentum SGD.
template <typename Scalar>
LayeredModel<Scalar> train(LayeredModel<Scalar> model, const LabeledSet& data, const TrainConfig& cfg,
                           std::vector<double>* losses = nullptr) {
  SgdMomentum<Scalar> opt(model, cfg.learning_rate, cfg.momentum);
  fit(model, data, cfg, opt,
      [](const LayeredModel<Scalar>& m, const LabeledSet& batch, Gradients<Scalar>& grads) {
        Tape<Scalar> tape;
        const Mat<Scalar> logits = m.forward_units(0, m.num_units(), batch.x.template cast<Scalar>(), &tape);
        const LossGrad<Scalar> ce = cross_entropy(logits, batch.y);
        m.backward(tape, ce.grad, &grads);
        return ce.value;
      },
      losses);
  return model;
}

}  // namespace rnet

#endif  // REMOVALNET_NNKIT_TRAIN_HPP
