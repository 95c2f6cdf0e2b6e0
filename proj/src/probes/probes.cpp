#include "removalnet/probes/probes.hpp"

#include <cmath>
#include <fstream>

#include "removalnet/nnkit/checkpoint.hpp"

namespace rnet {

namespace fs = std::filesystem;

FingerprintKind parse_fingerprint_kind(const std::string& s) {
  for (auto k : {FingerprintKind::Boundary, FingerprintKind::RandomProbe, FingerprintKind::Adversarial}) {
    if (to_string(k) == s) return k;
  }
  throw SchemaError("unknown fingerprint kind '" + s + "'");
}

void save_fingerprints(const fs::path& dir, const FingerprintSet& fp) {
  fs::create_directories(dir);
  write_tensor_file(dir / "samples.bin", fp.samples.transpose());
  {
    std::ofstream out(dir / "labels.bin", std::ios::binary);
    if (!out) throw IoError("cannot write " + (dir / "labels.bin").string());
    for (int y : fp.victim_labels) {
      const auto v = static_cast<std::int32_t>(y);
      out.write(reinterpret_cast<const char*>(&v), sizeof v);
    }
  }
  KeyValues meta;
  for (const auto& [k, v] : fp.generator.entries()) meta.set("generator." + k, v);
  meta.set("n_fp", fp.size());
  meta.set("features", static_cast<long>(fp.samples.rows()));
  meta.set("kind", to_string(fp.kind));
  meta.set("shape", std::to_string(fp.shape.channels) + "," + std::to_string(fp.shape.height) + "," +
                        std::to_string(fp.shape.width));
  meta.set("requested", fp.requested);
  meta.set("shortfall", fp.shortfall ? "1" : "0");
  meta.write(dir / "meta");
}

FingerprintSet load_fingerprints(const fs::path& dir) {
  if (!fs::exists(dir / "meta")) throw IoError("no fingerprint set at " + dir.string());
  const KeyValues meta = KeyValues::read(dir / "meta");
  FingerprintSet fp;
  const long n = meta.get_long("n_fp");
  const long d = meta.get_long("features");
  fp.kind = parse_fingerprint_kind(meta.get("kind"));
  const auto dims = split(meta.get("shape"), ',');
  if (dims.size() != 3) throw SchemaError("bad fingerprint shape in " + dir.string());
  fp.shape = {std::stoi(dims[0]), std::stoi(dims[1]), std::stoi(dims[2])};
  fp.requested = meta.get_long_or("requested", n);
  fp.shortfall = meta.get_or("shortfall", "0") == "1";
  for (const auto& [k, v] : meta.entries()) {
    if (k.rfind("generator.", 0) == 0) fp.generator.set(k.substr(10), v);
  }
  fp.samples = read_tensor_file(dir / "samples.bin", n, d).transpose();

  std::ifstream in(dir / "labels.bin", std::ios::binary | std::ios::ate);
  if (!in) throw IoError("cannot open " + (dir / "labels.bin").string());
  if (static_cast<long>(in.tellg()) != n * 4) throw IoError("truncated " + (dir / "labels.bin").string());
  in.seekg(0);
  fp.victim_labels.resize(static_cast<std::size_t>(n));
  for (long i = 0; i < n; ++i) {
    std::int32_t v = 0;
    in.read(reinterpret_cast<char*>(&v), sizeof v);
    fp.victim_labels[static_cast<std::size_t>(i)] = v;
  }
  return fp;
}

std::vector<long> stratified_indices(const LabeledSet& pool, long n, std::uint64_t seed) {
  if (n < 0 || n > pool.size()) {
    throw DomainError("requested " + std::to_string(n) + " samples from a pool of " + std::to_string(pool.size()));
  }
  int classes = pool.class_count;
  for (int y : pool.y) classes = std::max(classes, y + 1);
  std::mt19937_64 rng(seed);
  std::vector<std::vector<long>> by_class(static_cast<std::size_t>(classes));
  for (long i = 0; i < pool.size(); ++i) by_class[static_cast<std::size_t>(pool.y[static_cast<std::size_t>(i)])].push_back(i);
  for (auto& members : by_class) std::shuffle(members.begin(), members.end(), rng);

  // Round-robin over classes in a seeded order; exhausted classes drop out.
  std::vector<int> order(static_cast<std::size_t>(classes));
  std::iota(order.begin(), order.end(), 0);
  std::shuffle(order.begin(), order.end(), rng);
  std::vector<std::size_t> taken(static_cast<std::size_t>(classes), 0);
  std::vector<long> out;
  out.reserve(static_cast<std::size_t>(n));
  while (static_cast<long>(out.size()) < n) {
    for (int c : order) {
      if (static_cast<long>(out.size()) == n) break;
      auto& members = by_class[static_cast<std::size_t>(c)];
      auto& t = taken[static_cast<std::size_t>(c)];
      if (t < members.size()) out.push_back(members[t++]);
    }
  }
  return out;
}

LabeledSet zest_reference_set(const DatasetBundle& data, long n, std::uint64_t seed) {
  if (data.test.empty()) throw DomainError("zest_reference_set: empty test split");
  return data.test.subset(stratified_indices(data.test, n, seed));
}

LabeledSet select_substitute(const LabeledSet& pool, long count, std::uint64_t seed) {
  if (pool.empty()) throw DomainError("select_substitute: empty pool");
  if (count < 1) throw DomainError("select_substitute: count must be >= 1");
  return pool.subset(stratified_indices(pool, count, seed));
}

LabeledSet select_substitute_fraction(const LabeledSet& pool, double fraction, std::uint64_t seed) {
  if (!(fraction > 0 && fraction <= 1)) throw DomainError("substitute fraction must lie in (0,1]");
  return select_substitute(pool, std::lround(fraction * static_cast<double>(pool.size())), seed);
}

}  // namespace rnet
