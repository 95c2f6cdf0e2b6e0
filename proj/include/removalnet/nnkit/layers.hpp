#ifndef REMOVALNET_NNKIT_LAYERS_HPP
#define REMOVALNET_NNKIT_LAYERS_HPP

#include <limits>
#include <string>
#include <vector>

#include "removalnet/nnkit/types.hpp"

namespace rnet {

enum class LayerKind { Conv, Dense, Relu, MaxPool };

inline const char* to_string(LayerKind k) {
  switch (k) {
    case LayerKind::Conv: return "conv";
    case LayerKind::Dense: return "dense";
    case LayerKind::Relu: return "relu";
    case LayerKind::MaxPool: return "maxpool";
  }
  return "?";
}

struct LayerSpec {
  LayerKind kind = LayerKind::Relu;
  std::string name;
  Shape in;
  Shape out;
  int kernel = 0;   // conv: square kernel; maxpool: window == stride
  int padding = 0;  // conv only, stride is always 1
  int weight = -1;  // index into the model's parameter list
  int bias = -1;

  bool parameterized() const { return weight >= 0; }
};

namespace kernels {

// Patch matrix for a stride-1 convolution: one row per (sample, output
// position), one column per (channel, ky, kx).
template <typename Scalar>
void im2col(const LayerSpec& s, const Mat<Scalar>& in, Mat<Scalar>& patches) {
  const int C = s.in.channels, H = s.in.height, W = s.in.width;
  const int Ho = s.out.height, Wo = s.out.width, k = s.kernel, pad = s.padding;
  const Eigen::Index batch = in.cols();
  const Eigen::Index hw = static_cast<Eigen::Index>(Ho) * Wo;
  patches.setZero(batch * hw, static_cast<Eigen::Index>(C) * k * k);
  for (Eigen::Index b = 0; b < batch; ++b) {
    const Scalar* src = in.col(b).data();
    for (int c = 0; c < C; ++c) {
      for (int ky = 0; ky < k; ++ky) {
        for (int kx = 0; kx < k; ++kx) {
          Scalar* dst = patches.col((c * k + ky) * k + kx).data() + b * hw;
          for (int oy = 0; oy < Ho; ++oy) {
            const int iy = oy - pad + ky;
            if (iy < 0 || iy >= H) continue;
            const Scalar* row = src + (static_cast<Eigen::Index>(c) * H + iy) * W;
            for (int ox = 0; ox < Wo; ++ox) {
              const int ix = ox - pad + kx;
              if (ix >= 0 && ix < W) dst[oy * Wo + ox] = row[ix];
            }
          }
        }
      }
    }
  }
}

template <typename Scalar>
void col2im(const LayerSpec& s, const Mat<Scalar>& patches, Eigen::Index batch, Mat<Scalar>& in_grad) {
  const int C = s.in.channels, H = s.in.height, W = s.in.width;
  const int Ho = s.out.height, Wo = s.out.width, k = s.kernel, pad = s.padding;
  const Eigen::Index hw = static_cast<Eigen::Index>(Ho) * Wo;
  in_grad.setZero(s.in.size(), batch);
  for (Eigen::Index b = 0; b < batch; ++b) {
    Scalar* dst = in_grad.col(b).data();
    for (int c = 0; c < C; ++c) {
      for (int ky = 0; ky < k; ++ky) {
        for (int kx = 0; kx < k; ++kx) {
          const Scalar* src = patches.col((c * k + ky) * k + kx).data() + b * hw;
          for (int oy = 0; oy < Ho; ++oy) {
            const int iy = oy - pad + ky;
            if (iy < 0 || iy >= H) continue;
            Scalar* row = dst + (static_cast<Eigen::Index>(c) * H + iy) * W;
            for (int ox = 0; ox < Wo; ++ox) {
              const int ix = ox - pad + kx;
              if (ix >= 0 && ix < W) row[ix] += src[oy * Wo + ox];
            }
          }
        }
      }
    }
  }
}

template <typename Scalar>
Mat<Scalar> conv_forward(const LayerSpec& s, const Mat<Scalar>& weight, const Mat<Scalar>& bias,
                         const Mat<Scalar>& in, Mat<Scalar>& patches) {
  im2col(s, in, patches);
  const Eigen::Index hw = s.out.spatial();
  const Eigen::Index filters = s.out.channels;
  Mat<Scalar> flat = patches * weight.transpose();  // (batch*hw) x filters
  Mat<Scalar> out(s.out.size(), in.cols());
  for (Eigen::Index b = 0; b < in.cols(); ++b) {
    for (Eigen::Index f = 0; f < filters; ++f) {
      out.col(b).segment(f * hw, hw) =
          flat.col(f).segment(b * hw, hw).array() + bias(f, 0);
    }
  }
  return out;
}

template <typename Scalar>
Mat<Scalar> conv_backward(const LayerSpec& s, const Mat<Scalar>& weight, const Mat<Scalar>& patches,
                          const Mat<Scalar>& grad_out, Mat<Scalar>* grad_weight,
                          Mat<Scalar>* grad_bias) {
  const Eigen::Index hw = s.out.spatial();
  const Eigen::Index filters = s.out.channels;
  const Eigen::Index batch = grad_out.cols();
  Mat<Scalar> flat(batch * hw, filters);
  for (Eigen::Index b = 0; b < batch; ++b) {
    for (Eigen::Index f = 0; f < filters; ++f) {
      flat.col(f).segment(b * hw, hw) = grad_out.col(b).segment(f * hw, hw);
    }
  }
  if (grad_weight) grad_weight->noalias() += flat.transpose() * patches;
  if (grad_bias) *grad_bias += flat.colwise().sum().transpose();
  Mat<Scalar> patch_grad = flat * weight;
  Mat<Scalar> in_grad;
  col2im(s, patch_grad, batch, in_grad);
  return in_grad;
}

template <typename Scalar>
Mat<Scalar> maxpool_forward(const LayerSpec& s, const Mat<Scalar>& in, std::vector<int>& argmax) {
  const int C = s.in.channels, H = s.in.height, W = s.in.width, k = s.kernel;
  const int Ho = s.out.height, Wo = s.out.width;
  const Eigen::Index batch = in.cols();
  Mat<Scalar> out(s.out.size(), batch);
  argmax.assign(static_cast<std::size_t>(out.size()), 0);
  for (Eigen::Index b = 0; b < batch; ++b) {
    for (int c = 0; c < C; ++c) {
      for (int oy = 0; oy < Ho; ++oy) {
        for (int ox = 0; ox < Wo; ++ox) {
          int best = -1;
          Scalar best_v = -std::numeric_limits<Scalar>::infinity();
          for (int dy = 0; dy < k; ++dy) {
            for (int dx = 0; dx < k; ++dx) {
              const int idx = (c * H + oy * k + dy) * W + ox * k + dx;
              if (best < 0 || in(idx, b) > best_v) {
                best = idx;
                best_v = in(idx, b);
              }
            }
          }
          const Eigen::Index o = (static_cast<Eigen::Index>(c) * Ho + oy) * Wo + ox;
          out(o, b) = best_v;
          argmax[static_cast<std::size_t>(b * out.rows() + o)] = best;
        }
      }
    }
  }
  return out;
}

template <typename Scalar>
Mat<Scalar> maxpool_backward(const LayerSpec& s, const std::vector<int>& argmax,
                             const Mat<Scalar>& grad_out) {
  Mat<Scalar> in_grad = Mat<Scalar>::Zero(s.in.size(), grad_out.cols());
  for (Eigen::Index b = 0; b < grad_out.cols(); ++b) {
    for (Eigen::Index o = 0; o < grad_out.rows(); ++o) {
      in_grad(argmax[static_cast<std::size_t>(b * grad_out.rows() + o)], b) += grad_out(o, b);
    }
  }
  return in_grad;
}

}  // namespace kernels
}  // namespace rnet

#endif  // REMOVALNET_NNKIT_LAYERS_HPP
