#ifndef REMOVALNET_NNKIT_CHECKPOINT_HPP
#define REMOVALNET_NNKIT_CHECKPOINT_HPP

#include <filesystem>
#include <string>
#include <vector>

#include "removalnet/kvfile.hpp"
#include "removalnet/nnkit/model.hpp"

namespace rnet {

/// Checkpoint directory layout:
///   meta                 key=value lines (arch, task shape, provenance, tensor shapes)
///   tensors/<name>.bin   little-endian float32, row-major
///
/// Provenance keys written by the toolkit: role (victim|negative|surrogate|
/// baseline), seed, epochs, dataset, accuracy.
struct Checkpoint {
  ModelF model;
  KeyValues meta;
  std::vector<NamedTensor<float>> extra;  // e.g. optimizer state for resumable runs

  std::string role() const { return meta.get_or("role", ""); }
};

void write_tensor_file(const std::filesystem::path& path, const MatF& m);
MatF read_tensor_file(const std::filesystem::path& path, Eigen::Index rows, Eigen::Index cols);

void save_checkpoint(const std::filesystem::path& dir, const Checkpoint& ckpt);
void save_checkpoint(const std::filesystem::path& dir, const ModelF& model, const KeyValues& meta);

/// Throws IoError for missing or truncated files and SchemaError when the
/// stored tensors disagree with the registered architecture.
Checkpoint load_checkpoint(const std::filesystem::path& dir);

bool checkpoint_exists(const std::filesystem::path& dir);

}  // namespace rnet

#endif  // REMOVALNET_NNKIT_CHECKPOINT_HPP
