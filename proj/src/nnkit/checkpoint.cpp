#include "removalnet/nnkit/checkpoint.hpp"

#include <bit>
#include <fstream>

#include "removalnet/errors.hpp"
#include "removalnet/nnkit/registry.hpp"

namespace rnet {

static_assert(std::endian::native == std::endian::little, "tensor files assume a little-endian host");

namespace fs = std::filesystem;

void write_tensor_file(const fs::path& path, const MatF& m) {
  fs::create_directories(path.parent_path());
  const Eigen::Matrix<float, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor> rm = m;
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write " + path.string());
  out.write(reinterpret_cast<const char*>(rm.data()), static_cast<std::streamsize>(rm.size() * sizeof(float)));
  if (!out) throw IoError("write failed: " + path.string());
}

MatF read_tensor_file(const fs::path& path, Eigen::Index rows, Eigen::Index cols) {
  std::ifstream in(path, std::ios::binary | std::ios::ate);
  if (!in) throw IoError("cannot open " + path.string());
  const auto bytes = static_cast<Eigen::Index>(in.tellg());
  if (bytes != rows * cols * static_cast<Eigen::Index>(sizeof(float))) {
    throw IoError(path.string() + ": expected " + std::to_string(rows * cols * 4) + " bytes, found " +
                  std::to_string(bytes));
  }
  in.seekg(0);
  Eigen::Matrix<float, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor> rm(rows, cols);
  if (!in.read(reinterpret_cast<char*>(rm.data()), static_cast<std::streamsize>(bytes))) {
    throw IoError("truncated tensor file " + path.string());
  }
  return rm;
}

namespace {

std::string shape_entry(const MatF& m) {
  return std::to_string(m.rows()) + "," + std::to_string(m.cols());
}

std::pair<Eigen::Index, Eigen::Index> parse_shape(const std::string& key, const std::string& v) {
  const auto parts = split(v, ',');
  if (parts.size() != 2) throw SchemaError("bad tensor shape for " + key + ": " + v);
  try {
    return {std::stol(parts[0]), std::stol(parts[1])};
  } catch (const std::exception&) {
    throw SchemaError("bad tensor shape for " + key + ": " + v);
  }
}

}  // namespace

void save_checkpoint(const fs::path& dir, const Checkpoint& ckpt) {
  fs::create_directories(dir / "tensors");
  KeyValues meta = ckpt.meta;
  const ModelF& m = ckpt.model;
  meta.set("arch_id", m.arch_id);
  meta.set("num_classes", m.num_classes);
  meta.set("input_shape", std::to_string(m.input_shape.channels) + "," +
                              std::to_string(m.input_shape.height) + "," +
                              std::to_string(m.input_shape.width));
  for (const auto& p : m.params) {
    meta.set("tensor." + p.name, shape_entry(p.value));
    write_tensor_file(dir / "tensors" / (p.name + ".bin"), p.value);
  }
  for (const auto& p : ckpt.extra) {
    meta.set("extra." + p.name, shape_entry(p.value));
    write_tensor_file(dir / "tensors" / (p.name + ".bin"), p.value);
  }
  // meta last: its presence marks a complete checkpoint
  meta.write(dir / "meta");
}

void save_checkpoint(const fs::path& dir, const ModelF& model, const KeyValues& meta) {
  Checkpoint c{model, meta, {}};
  save_checkpoint(dir, c);
}

bool checkpoint_exists(const fs::path& dir) { return fs::exists(dir / "meta"); }

Checkpoint load_checkpoint(const fs::path& dir) {
  if (!checkpoint_exists(dir)) throw IoError("no checkpoint at " + dir.string());
  Checkpoint c;
  c.meta = KeyValues::read(dir / "meta");
  ArchSpec spec;
  try {
    spec.id = c.meta.get("arch_id");
    spec.num_classes = static_cast<int>(c.meta.get_long("num_classes"));
    const auto dims = split(c.meta.get("input_shape"), ',');
    if (dims.size() != 3) throw ConfigError("input_shape");
    spec.input = {std::stoi(dims[0]), std::stoi(dims[1]), std::stoi(dims[2])};
  } catch (const SchemaError&) {
    throw;
  } catch (const std::exception& e) {
    throw SchemaError(dir.string() + ": malformed checkpoint meta (" + e.what() + ")");
  }
  try {
    c.model = build_model(spec, 0);
  } catch (const ConfigError& e) {
    throw SchemaError(dir.string() + ": " + e.what());
  }

  std::size_t stored = 0;
  for (const auto& [k, _] : c.meta.entries()) {
    if (k.rfind("tensor.", 0) == 0) ++stored;
  }
  if (stored != c.model.params.size()) {
    throw SchemaError(dir.string() + ": " + std::to_string(stored) + " tensors stored, " +
                      spec.id + " has " + std::to_string(c.model.params.size()));
  }
  for (auto& p : c.model.params) {
    const auto entry = c.meta.find("tensor." + p.name);
    if (!entry) throw SchemaError(dir.string() + ": missing tensor " + p.name);
    const auto [rows, cols] = parse_shape(p.name, *entry);
    if (rows != p.value.rows() || cols != p.value.cols()) {
      throw SchemaError(dir.string() + ": tensor " + p.name + " has shape " + *entry +
                        ", architecture expects " + shape_entry(p.value));
    }
    p.value = read_tensor_file(dir / "tensors" / (p.name + ".bin"), rows, cols);
  }
  for (const auto& [k, v] : c.meta.entries()) {
    if (k.rfind("extra.", 0) != 0) continue;
    const std::string name = k.substr(6);
    const auto [rows, cols] = parse_shape(name, v);
    c.extra.push_back({name, read_tensor_file(dir / "tensors" / (name + ".bin"), rows, cols), false});
  }
  return c;
}

}  // namespace rnet
