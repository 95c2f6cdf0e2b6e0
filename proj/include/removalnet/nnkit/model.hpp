#ifndef REMOVALNET_NNKIT_MODEL_HPP
#define REMOVALNET_NNKIT_MODEL_HPP

#include <algorithm>
#include <string>
#include <utility>
#include <vector>

#include "removalnet/errors.hpp"
#include "removalnet/nnkit/layers.hpp"
#include "removalnet/nnkit/types.hpp"

namespace rnet {

template <typename Scalar>
struct NamedTensor {
  std::string name;
  Mat<Scalar> value;
  bool is_bias = false;
};

/// Per-layer state recorded by a forward pass, consumed by backward().
template <typename Scalar>
struct Tape {
  int first_layer = 0;
  int last_layer = 0;
  std::vector<Mat<Scalar>> inputs;
  std::vector<Mat<Scalar>> patches;
  std::vector<std::vector<int>> argmax;
};

/// One gradient matrix per model parameter, same shapes.
template <typename Scalar>
using Gradients = std::vector<Mat<Scalar>>;

template <typename Scalar>
struct SplitOutput {
  Mat<Scalar> latent;
  Mat<Scalar> logits;
};

/// A feed-forward stack of primitive layers grouped into units.
///
/// A unit is a parameterized layer together with the activation and pooling
/// layers that follow it, so the model F has L = num_units() units. A split
/// index l in [2, L] divides F into a prefix made of the first l-1 units and a
/// suffix made of the rest; split l = L puts the latent at the penultimate
/// representation.
template <typename Scalar>
class LayeredModel {
 public:
  std::string arch_id;
  Shape input_shape;
  int num_classes = 0;
  std::vector<LayerSpec> layers;
  std::vector<int> unit_bounds{0};  // unit u spans layers [bounds[u], bounds[u+1])
  std::vector<NamedTensor<Scalar>> params;

  int num_units() const { return static_cast<int>(unit_bounds.size()) - 1; }

  void check_split(int split) const {
    if (split < 2 || split > num_units()) {
      throw BoundsError("split index " + std::to_string(split) + " outside [2, " +
                        std::to_string(num_units()) + "] for " + arch_id);
    }
  }

  /// Shape of the prefix output at split l.
  Shape latent_shape(int split) const {
    check_split(split);
    return layers[static_cast<std::size_t>(unit_bounds[static_cast<std::size_t>(split - 1)] - 1)].out;
  }

  int latent_size(int split) const { return latent_shape(split).size(); }

  Eigen::Index parameter_count() const {
    Eigen::Index n = 0;
    for (const auto& p : params) n += p.value.size();
    return n;
  }

  /// Units [first, last) applied to x. A non-null tape records what backward()
  /// needs.
  Mat<Scalar> forward_units(int first, int last, const Mat<Scalar>& x,
                            Tape<Scalar>* tape = nullptr) const {
    if (first < 0 || last > num_units() || first > last) {
      throw BoundsError("unit range [" + std::to_string(first) + ", " + std::to_string(last) +
                        ") invalid for " + arch_id);
    }
    const int lb = unit_bounds[static_cast<std::size_t>(first)];
    const int le = unit_bounds[static_cast<std::size_t>(last)];
    const Shape expect = layers[static_cast<std::size_t>(lb)].in;
    if (x.rows() != expect.size()) {
      throw DomainError("input has " + std::to_string(x.rows()) + " features, " + arch_id +
                        " expects " + std::to_string(expect.size()));
    }
    if (tape) {
      tape->first_layer = lb;
      tape->last_layer = le;
      tape->inputs.assign(static_cast<std::size_t>(le - lb), {});
      tape->patches.assign(static_cast<std::size_t>(le - lb), {});
      tape->argmax.assign(static_cast<std::size_t>(le - lb), {});
    }
    Mat<Scalar> cur = x;
    Mat<Scalar> scratch;
    std::vector<int> idx;
    for (int i = lb; i < le; ++i) {
      const LayerSpec& s = layers[static_cast<std::size_t>(i)];
      const std::size_t slot = static_cast<std::size_t>(i - lb);
      Mat<Scalar> next;
      switch (s.kind) {
        case LayerKind::Conv:
          next = kernels::conv_forward(s, weight(s), bias(s), cur, scratch);
          if (tape) tape->patches[slot] = std::move(scratch);
          break;
        case LayerKind::Dense:
          next = weight(s) * cur;
          next.colwise() += bias(s).col(0);
          break;
        case LayerKind::Relu:
          next = cur.cwiseMax(Scalar(0));
          break;
        case LayerKind::MaxPool:
          next = kernels::maxpool_forward(s, cur, idx);
          if (tape) tape->argmax[slot] = std::move(idx);
          break;
      }
      if (tape) tape->inputs[slot] = std::move(cur);
      cur = std::move(next);
    }
    return cur;
  }

  Mat<Scalar> forward(const Mat<Scalar>& x) const { return forward_units(0, num_units(), x); }

  /// Forward in column chunks to bound the size of convolution patch buffers.
  Mat<Scalar> predict(const Mat<Scalar>& x, Eigen::Index chunk = 256) const {
    if (x.cols() <= chunk) return forward(x);
    Mat<Scalar> out(num_classes, x.cols());
    for (Eigen::Index c = 0; c < x.cols(); c += chunk) {
      const Eigen::Index n = std::min(chunk, x.cols() - c);
      out.middleCols(c, n) = forward(x.middleCols(c, n));
    }
    return out;
  }

  SplitOutput<Scalar> split_forward(int split, const Mat<Scalar>& x) const {
    check_split(split);
    SplitOutput<Scalar> out;
    out.latent = forward_units(0, split - 1, x);
    out.logits = forward_units(split - 1, num_units(), out.latent);
    return out;
  }

  /// Backpropagates grad_out through the range recorded in tape. Parameter
  /// gradients are accumulated into grads when it is non-null; the returned
  /// matrix is the gradient with respect to the range's input.
  Mat<Scalar> backward(const Tape<Scalar>& tape, const Mat<Scalar>& grad_out,
                       Gradients<Scalar>* grads) const {
    Mat<Scalar> g = grad_out;
    for (int i = tape.last_layer - 1; i >= tape.first_layer; --i) {
      const LayerSpec& s = layers[static_cast<std::size_t>(i)];
      const std::size_t slot = static_cast<std::size_t>(i - tape.first_layer);
      const Mat<Scalar>& in = tape.inputs[slot];
      switch (s.kind) {
        case LayerKind::Conv: {
          Mat<Scalar>* gw = grads ? &(*grads)[static_cast<std::size_t>(s.weight)] : nullptr;
          Mat<Scalar>* gb = grads ? &(*grads)[static_cast<std::size_t>(s.bias)] : nullptr;
          g = kernels::conv_backward(s, weight(s), tape.patches[slot], g, gw, gb);
          break;
        }
        case LayerKind::Dense: {
          if (grads) {
            (*grads)[static_cast<std::size_t>(s.weight)].noalias() += g * in.transpose();
            (*grads)[static_cast<std::size_t>(s.bias)] += g.rowwise().sum();
          }
          Mat<Scalar> next = weight(s).transpose() * g;
          g = std::move(next);
          break;
        }
        case LayerKind::Relu:
          g = (in.array() > Scalar(0)).select(g, Scalar(0));
          break;
        case LayerKind::MaxPool:
          g = kernels::maxpool_backward(s, tape.argmax[slot], g);
          break;
      }
    }
    return g;
  }

  Gradients<Scalar> zero_gradients() const {
    Gradients<Scalar> g;
    g.reserve(params.size());
    for (const auto& p : params) g.push_back(Mat<Scalar>::Zero(p.value.rows(), p.value.cols()));
    return g;
  }

  /// Index of the unit that owns a parameter.
  int unit_of_param(std::size_t param) const {
    for (int u = 0; u < num_units(); ++u) {
      for (int i = unit_bounds[static_cast<std::size_t>(u)]; i < unit_bounds[static_cast<std::size_t>(u) + 1]; ++i) {
        const LayerSpec& s = layers[static_cast<std::size_t>(i)];
        if (s.weight == static_cast<int>(param) || s.bias == static_cast<int>(param)) return u;
      }
    }
    return -1;
  }

  template <typename To>
  LayeredModel<To> cast() const {
    LayeredModel<To> m;
    m.arch_id = arch_id;
    m.input_shape = input_shape;
    m.num_classes = num_classes;
    m.layers = layers;
    m.unit_bounds = unit_bounds;
    for (const auto& p : params) m.params.push_back({p.name, p.value.template cast<To>(), p.is_bias});
    return m;
  }

  /// Bitwise equality of every parameter.
  bool same_parameters(const LayeredModel& other) const {
    if (params.size() != other.params.size()) return false;
    for (std::size_t i = 0; i < params.size(); ++i) {
      const auto& a = params[i].value;
      const auto& b = other.params[i].value;
      if (a.rows() != b.rows() || a.cols() != b.cols()) return false;
      if (!std::equal(a.data(), a.data() + a.size(), b.data())) return false;
    }
    return true;
  }

 private:
  const Mat<Scalar>& weight(const LayerSpec& s) const {
    return params[static_cast<std::size_t>(s.weight)].value;
  }
  const Mat<Scalar>& bias(const LayerSpec& s) const {
    return params[static_cast<std::size_t>(s.bias)].value;
  }
};

using ModelF = LayeredModel<float>;
using ModelD = LayeredModel<double>;

/// Fraction of columns whose argmax equals the label.
template <typename Scalar>
double evaluate_accuracy(const LayeredModel<Scalar>& model, const LabeledSet& samples) {
  if (samples.empty()) throw DomainError("evaluate_accuracy: empty sample set");
  const Mat<Scalar> logits = model.predict(samples.x.template cast<Scalar>());
  long correct = 0;
  for (Eigen::Index j = 0; j < logits.cols(); ++j) {
    if (argmax(logits.col(j)) == samples.y[static_cast<std::size_t>(j)]) ++correct;
  }
  return static_cast<double>(correct) / static_cast<double>(samples.size());
}

}  // namespace rnet

#endif  // REMOVALNET_NNKIT_MODEL_HPP
