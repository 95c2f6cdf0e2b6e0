#ifndef REMOVALNET_NNKIT_REGISTRY_HPP
#define REMOVALNET_NNKIT_REGISTRY_HPP

#include <cstdint>
#include <functional>
#include <random>
#include <string>
#include <vector>

#include "removalnet/nnkit/model.hpp"

namespace rnet {

/// Names a registered architecture and the task it is instantiated for.
struct ArchSpec {
  std::string id = "smallcnn";
  Shape input{1, 28, 28};
  int num_classes = 10;
};

/// Appends layers while tracking shapes, parameter slots and unit boundaries.
class StackBuilder {
 public:
  StackBuilder(std::string arch_id, Shape input, int num_classes, std::uint64_t seed);

  StackBuilder& conv(const std::string& name, int filters, int kernel, int padding);
  StackBuilder& dense(const std::string& name, int width);
  StackBuilder& relu();
  StackBuilder& maxpool(int window);

  ModelF finish();

 private:
  void add_params(LayerSpec& spec, int fan_in, int fan_out);

  ModelF model_;
  Shape cur_;
  std::mt19937_64 rng_;
};

using ArchBuilder = std::function<ModelF(const ArchSpec&, std::uint64_t seed)>;

/// Registers (or replaces) an architecture builder under its id.
void register_architecture(const std::string& id, ArchBuilder builder);
std::vector<std::string> registered_architectures();

/// Deterministic: the same (spec, seed) yields bitwise-identical parameters.
/// Throws ConfigError for an unknown id.
ModelF build_model(const ArchSpec& spec, std::uint64_t seed);

/// Default split index: the latent after the first half of the units
/// (units / 2 + 1), e.g. 3 for smallcnn.
int default_split(const ModelF& model);

}  // namespace rnet

#endif  // REMOVALNET_NNKIT_REGISTRY_HPP
