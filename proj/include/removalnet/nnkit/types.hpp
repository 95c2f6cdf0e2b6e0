#ifndef REMOVALNET_NNKIT_TYPES_HPP
#define REMOVALNET_NNKIT_TYPES_HPP

#include <Eigen/Dense>
#include <cstdint>
#include <string>
#include <vector>

namespace rnet {

// Batches are stored one sample per column; a sample's features are laid out
// channel-major (c * H * W + y * W + x).
template <typename Scalar>
using Mat = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>;
template <typename Scalar>
using Vec = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;

using MatF = Mat<float>;
using MatD = Mat<double>;

struct Shape {
  int channels = 1;
  int height = 1;
  int width = 1;

  int spatial() const { return height * width; }
  int size() const { return channels * height * width; }
  bool operator==(const Shape&) const = default;
};

inline std::string to_string(const Shape& s) {
  return std::to_string(s.channels) + "x" + std::to_string(s.height) + "x" +
         std::to_string(s.width);
}

/// Inputs (one per column, values in [0,1]) plus integer class labels.
struct LabeledSet {
  MatF x;
  std::vector<int> y;
  Shape shape;
  int class_count = 0;

  long size() const { return static_cast<long>(y.size()); }
  bool empty() const { return y.empty(); }

  LabeledSet subset(const std::vector<long>& indices) const {
    LabeledSet out;
    out.shape = shape;
    out.class_count = class_count;
    out.x.resize(x.rows(), static_cast<Eigen::Index>(indices.size()));
    out.y.reserve(indices.size());
    for (std::size_t i = 0; i < indices.size(); ++i) {
      out.x.col(static_cast<Eigen::Index>(i)) = x.col(indices[i]);
      out.y.push_back(y[static_cast<std::size_t>(indices[i])]);
    }
    return out;
  }
};

/// First index of the column maximum; ties resolve to the lowest class.
template <typename Derived>
int argmax(const Eigen::MatrixBase<Derived>& column) {
  Eigen::Index best = 0;
  for (Eigen::Index k = 1; k < column.size(); ++k) {
    if (column(k) > column(best)) best = k;
  }
  return static_cast<int>(best);
}

template <typename Scalar>
std::vector<int> argmax_columns(const Mat<Scalar>& m) {
  std::vector<int> out(static_cast<std::size_t>(m.cols()));
  for (Eigen::Index j = 0; j < m.cols(); ++j) out[static_cast<std::size_t>(j)] = argmax(m.col(j));
  return out;
}

}  // namespace rnet

#endif  // REMOVALNET_NNKIT_TYPES_HPP
