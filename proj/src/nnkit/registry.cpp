#include "removalnet/nnkit/registry.hpp"

#include <cmath>
#include <map>
#include <mutex>

namespace rnet {

StackBuilder::StackBuilder(std::string arch_id, Shape input, int num_classes, std::uint64_t seed)
    : cur_(input), rng_(seed) {
  model_.arch_id = std::move(arch_id);
  model_.input_shape = input;
  model_.num_classes = num_classes;
}

void StackBuilder::add_params(LayerSpec& spec, int fan_in, int fan_out) {
  // He-normal weights, zero biases.
  std::normal_distribution<double> normal(0.0, std::sqrt(2.0 / fan_in));
  MatF w(fan_out, fan_in);
  for (Eigen::Index j = 0; j < w.cols(); ++j) {
    for (Eigen::Index i = 0; i < w.rows(); ++i) w(i, j) = static_cast<float>(normal(rng_));
  }
  spec.weight = static_cast<int>(model_.params.size());
  model_.params.push_back({spec.name + ".weight", std::move(w), false});
  spec.bias = static_cast<int>(model_.params.size());
  model_.params.push_back({spec.name + ".bias", MatF::Zero(fan_out, 1), true});
}

StackBuilder& StackBuilder::conv(const std::string& name, int filters, int kernel, int padding) {
  if (model_.layers.size() > 0) model_.unit_bounds.push_back(static_cast<int>(model_.layers.size()));
  LayerSpec s;
  s.kind = LayerKind::Conv;
  s.name = name;
  s.in = cur_;
  s.kernel = kernel;
  s.padding = padding;
  s.out = {filters, cur_.height + 2 * padding - kernel + 1, cur_.width + 2 * padding - kernel + 1};
  if (s.out.height <= 0 || s.out.width <= 0) throw ConfigError("conv " + name + " collapses input");
  add_params(s, cur_.channels * kernel * kernel, filters);
  cur_ = s.out;
  model_.layers.push_back(std::move(s));
  return *this;
}

StackBuilder& StackBuilder::dense(const std::string& name, int width) {
  if (model_.layers.size() > 0) model_.unit_bounds.push_back(static_cast<int>(model_.layers.size()));
  LayerSpec s;
  s.kind = LayerKind::Dense;
  s.name = name;
  s.in = cur_;
  s.out = {width, 1, 1};
  add_params(s, cur_.size(), width);
  cur_ = s.out;
  model_.layers.push_back(std::move(s));
  return *this;
}

StackBuilder& StackBuilder::relu() {
  LayerSpec s;
  s.kind = LayerKind::Relu;
  s.name = "relu" + std::to_string(model_.layers.size());
  s.in = cur_;
  s.out = cur_;
  model_.layers.push_back(std::move(s));
  return *this;
}

StackBuilder& StackBuilder::maxpool(int window) {
  LayerSpec s;
  s.kind = LayerKind::MaxPool;
  s.name = "pool" + std::to_string(model_.layers.size());
  s.in = cur_;
  s.kernel = window;
  s.out = {cur_.channels, cur_.height / window, cur_.width / window};
  model_.layers.push_back(std::move(s));
  cur_ = model_.layers.back().out;
  return *this;
}

ModelF StackBuilder::finish() {
  if (model_.layers.empty()) throw ConfigError("architecture " + model_.arch_id + " has no layers");
  if (cur_.size() != model_.num_classes) {
    throw ConfigError("architecture " + model_.arch_id + " ends with width " +
                      std::to_string(cur_.size()) + ", expected " +
                      std::to_string(model_.num_classes));
  }
  model_.unit_bounds.push_back(static_cast<int>(model_.layers.size()));
  return std::move(model_);
}

namespace {

std::map<std::string, ArchBuilder>& registry() {
  static std::map<std::string, ArchBuilder> r = {
      {"smallcnn",
       [](const ArchSpec& a, std::uint64_t seed) {
         return StackBuilder(a.id, a.input, a.num_classes, seed)
             .conv("conv1", 8, 3, 1).relu().maxpool(2)
             .conv("conv2", 16, 3, 1).relu().maxpool(2)
             .conv("conv3", 16, 3, 1).relu()
             .dense("fc1", 64).relu()
             .dense("fc2", a.num_classes)
             .finish();
       }},
      {"smallmlp",
       [](const ArchSpec& a, std::uint64_t seed) {
         return StackBuilder(a.id, a.input, a.num_classes, seed)
             .dense("fc1", 128).relu()
             .dense("fc2", 64).relu()
             .dense("fc3", a.num_classes)
             .finish();
       }},
      // Test-scale models for finite-difference checks.
      {"micromlp",
       [](const ArchSpec& a, std::uint64_t seed) {
         return StackBuilder(a.id, a.input, a.num_classes, seed)
             .dense("fc1", 6).relu()
             .dense("fc2", a.num_classes)
             .finish();
       }},
      {"microcnn",
       [](const ArchSpec& a, std::uint64_t seed) {
         return StackBuilder(a.id, a.input, a.num_classes, seed)
             .conv("conv1", 2, 3, 1).relu().maxpool(2)
             .dense("fc1", 5).relu()
             .dense("fc2", a.num_classes)
             .finish();
       }},
  };
  return r;
}

std::mutex& registry_mutex() {
  static std::mutex m;
  return m;
}

}  // namespace

void register_architecture(const std::string& id, ArchBuilder builder) {
  std::lock_guard lock(registry_mutex());
  registry()[id] = std::move(builder);
}

std::vector<std::string> registered_architectures() {
  std::lock_guard lock(registry_mutex());
  std::vector<std::string> ids;
  for (const auto& [id, _] : registry()) ids.push_back(id);
  return ids;
}

ModelF build_model(const ArchSpec& spec, std::uint64_t seed) {
  ArchBuilder builder;
  {
    std::lock_guard lock(registry_mutex());
    auto it = registry().find(spec.id);
    if (it == registry().end()) throw ConfigError("unknown architecture '" + spec.id + "'");
    builder = it->second;
  }
  if (spec.num_classes < 2) throw ConfigError("num_classes must be >= 2");
  return builder(spec, seed);
}

int default_split(const ModelF& model) {
  // output of the first half of the units, the part a last-50% fine-tune keeps
  return model.num_units() / 2 + 1;
}

}  // namespace rnet
