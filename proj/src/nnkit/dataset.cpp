#include "removalnet/nnkit/dataset.hpp"

#include <cstdint>
#include <fstream>
#include <functional>
#include <string_view>
#include <unordered_set>
#include <vector>

#include "removalnet/errors.hpp"

namespace rnet {
namespace {

std::uint32_t read_be32(std::istream& in, const std::filesystem::path& path) {
  unsigned char b[4];
  if (!in.read(reinterpret_cast<char*>(b), 4)) throw IoError("truncated IDX header: " + path.string());
  return (std::uint32_t{b[0]} << 24) | (std::uint32_t{b[1]} << 16) | (std::uint32_t{b[2]} << 8) | b[3];
}

std::size_t column_hash(const MatF& x, Eigen::Index j) {
  const char* p = reinterpret_cast<const char*>(x.col(j).data());
  return std::hash<std::string_view>{}(std::string_view(p, static_cast<std::size_t>(x.rows()) * sizeof(float)));
}

bool shares_sample(const LabeledSet& a, const LabeledSet& b) {
  if (a.empty() || b.empty()) return false;
  std::unordered_set<std::size_t> seen;
  for (Eigen::Index j = 0; j < a.x.cols(); ++j) seen.insert(column_hash(a.x, j));
  for (Eigen::Index j = 0; j < b.x.cols(); ++j) {
    if (!seen.count(column_hash(b.x, j))) continue;
    for (Eigen::Index i = 0; i < a.x.cols(); ++i) {
      if (a.x.col(i) == b.x.col(j)) return true;
    }
  }
  return false;
}

void check_labels(const LabeledSet& s, int class_count, const char* what) {
  for (int y : s.y) {
    if (y < 0 || y >= class_count) {
      throw DomainError(std::string(what) + " label " + std::to_string(y) + " outside [0, " +
                        std::to_string(class_count) + ")");
    }
  }
}

}  // namespace

void DatasetBundle::validate() const {
  check_labels(train, class_count, "train");
  check_labels(test, class_count, "test");
  check_labels(substitute, class_count, "substitute");
  if (adversarial) check_labels(*adversarial, class_count, "adversarial");
  if (shares_sample(train, test)) throw DomainError(id + ": train and test overlap");
  if (shares_sample(substitute, test)) throw DomainError(id + ": substitute and test overlap");
}

LabeledSet load_idx(const std::filesystem::path& images, const std::filesystem::path& labels,
                    int class_count) {
  std::ifstream fi(images, std::ios::binary);
  if (!fi) throw IoError("cannot open " + images.string());
  if (read_be32(fi, images) != 0x00000803) throw IoError("bad IDX image magic: " + images.string());
  const std::uint32_t n = read_be32(fi, images);
  const std::uint32_t h = read_be32(fi, images);
  const std::uint32_t w = read_be32(fi, images);
  std::vector<unsigned char> pixels(static_cast<std::size_t>(n) * h * w);
  if (!fi.read(reinterpret_cast<char*>(pixels.data()), static_cast<std::streamsize>(pixels.size()))) {
    throw IoError("truncated IDX image data: " + images.string());
  }

  std::ifstream fl(labels, std::ios::binary);
  if (!fl) throw IoError("cannot open " + labels.string());
  if (read_be32(fl, labels) != 0x00000801) throw IoError("bad IDX label magic: " + labels.string());
  if (read_be32(fl, labels) != n) throw IoError("image/label count mismatch: " + labels.string());
  std::vector<unsigned char> raw(n);
  if (!fl.read(reinterpret_cast<char*>(raw.data()), static_cast<std::streamsize>(n))) {
    throw IoError("truncated IDX label data: " + labels.string());
  }

  LabeledSet set;
  set.shape = {1, static_cast<int>(h), static_cast<int>(w)};
  set.class_count = class_count;
  set.x.resize(static_cast<Eigen::Index>(h) * w, n);
  for (std::uint32_t j = 0; j < n; ++j) {
    for (std::uint32_t i = 0; i < h * w; ++i) {
      set.x(i, j) = static_cast<float>(pixels[static_cast<std::size_t>(j) * h * w + i]) / 255.0f;
    }
  }
  set.y.assign(raw.begin(), raw.end());
  check_labels(set, class_count, images.filename().string().c_str());
  return set;
}

DatasetBundle load_bundle(const std::string& id, const std::filesystem::path& root) {
  const auto dir = root / id;
  if (!std::filesystem::exists(dir)) {
    throw IoError("dataset directory " + dir.string() + " missing; run scripts/fetch_data.py");
  }
  DatasetBundle b;
  b.id = id;
  b.class_count = 10;
  b.train = load_idx(dir / "train-images-idx3-ubyte", dir / "train-labels-idx1-ubyte", b.class_count);
  if (std::filesystem::exists(dir / "t10k-images-idx3-ubyte")) {
    b.test = load_idx(dir / "t10k-images-idx3-ubyte", dir / "t10k-labels-idx1-ubyte", b.class_count);
  } else {
    b.test.shape = b.train.shape;
    b.test.class_count = b.class_count;
    b.test.x.resize(b.train.x.rows(), 0);
  }
  b.substitute.shape = b.train.shape;
  b.substitute.class_count = b.class_count;
  b.substitute.x.resize(b.train.x.rows(), 0);
  return b;
}

Vec<float> channel_means(const LabeledSet& set) {
  const int c = set.shape.channels;
  const int hw = set.shape.spatial();
  Vec<float> mean = Vec<float>::Zero(c);
  if (set.empty()) return mean;
  for (int ch = 0; ch < c; ++ch) {
    mean(ch) = static_cast<float>(set.x.middleRows(static_cast<Eigen::Index>(ch) * hw, hw).template cast<double>().mean());
  }
  return mean;
}

}  // namespace rnet
