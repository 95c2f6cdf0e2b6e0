#ifndef REMOVALNET_NNKIT_DATASET_HPP
#define REMOVALNET_NNKIT_DATASET_HPP

#include <filesystem>
#include <optional>
#include <string>

#include "removalnet/nnkit/types.hpp"

namespace rnet {

struct DatasetBundle {
  std::string id;
  LabeledSet train;
  LabeledSet test;
  LabeledSet substitute;
  std::optional<LabeledSet> adversarial;
  int class_count = 0;

  /// Label ranges, and no sample shared between train/test or substitute/test.
  /// Throws DomainError on violation.
  void validate() const;
};

/// Reads an IDX image file (magic 0x803) and label file (magic 0x801);
/// pixel values are scaled to [0,1].
LabeledSet load_idx(const std::filesystem::path& images, const std::filesystem::path& labels,
                    int class_count = 10);

/// Loads `<root>/<id>/{train,t10k}-{images-idx3,labels-idx1}-ubyte`. Datasets
/// without a t10k split get an empty test set. The substitute set is left
/// empty for the caller to select.
DatasetBundle load_bundle(const std::string& id, const std::filesystem::path& root);

/// Per-channel mean pixel value.
Vec<float> channel_means(const LabeledSet& set);

}  // namespace rnet

#endif  // REMOVALNET_NNKIT_DATASET_HPP
