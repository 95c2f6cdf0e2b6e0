#include "removalnet/removal/removal.hpp"

#include <fstream>
#include <iomanip>
#include <limits>
#include <sstream>

#include "removalnet/nnkit/checkpoint.hpp"
#include "removalnet/nnkit/registry.hpp"
#include "removalnet/nnkit/train.hpp"

namespace rnet {

namespace fs = std::filesystem;

void RemovalConfig::validate() const {
  if (!(alpha >= 0 && alpha <= 1)) throw ConfigError("removal: alpha must lie in [0,1]");
  if (!(beta >= 0)) throw ConfigError("removal: beta must be >= 0");
  if (!(eta >= 0)) throw ConfigError("removal: eta must be >= 0");
  if (!(lr > 0)) throw ConfigError("removal: lr must be positive");
  if (!(momentum >= 0 && momentum < 1)) throw ConfigError("removal: momentum must lie in [0,1)");
  if (iterations < 0) throw ConfigError("removal: iterations must be >= 0");
  if (batch_size < 2) throw ConfigError("removal: batch_size must be >= 2");
  if (split_layer < 0) throw ConfigError("removal: split_layer must be >= 0");
  if (!(shuffle_ratio >= 0 && shuffle_ratio <= 1)) throw ConfigError("removal: shuffle_ratio must lie in [0,1]");
  if (inner_steps < 1) throw ConfigError("removal: inner_steps must be >= 1");
  if (!(barrier_eps > 0)) throw ConfigError("removal: barrier_eps must be positive");
  if (lambda_grid.empty() || lambda_grid.back() != 1.0) {
    throw ConfigError("removal: lambda_grid must end at 1.0");
  }
  for (std::size_t i = 0; i < lambda_grid.size(); ++i) {
    if (!(lambda_grid[i] > 0 && lambda_grid[i] <= 1)) throw ConfigError("removal: lambda_grid values must lie in (0,1]");
    if (i > 0 && !(lambda_grid[i] > lambda_grid[i - 1])) {
      throw ConfigError("removal: lambda_grid must be strictly increasing");
    }
  }
  if (checkpoint_every < 1 || eval_every < 1) throw ConfigError("removal: checkpoint/eval intervals must be >= 1");
}

KeyValues RemovalConfig::to_kv() const {
  KeyValues kv;
  kv.set("alpha", alpha);
  kv.set("beta", beta);
  kv.set("eta", eta);
  kv.set("lr", lr);
  kv.set("momentum", momentum);
  kv.set("iterations", iterations);
  kv.set("batch_size", batch_size);
  kv.set("split_layer", split_layer);
  kv.set("shuffle_ratio", shuffle_ratio);
  kv.set("inner_steps", inner_steps);
  kv.set("barrier_eps", barrier_eps);
  std::ostringstream grid;
  for (std::size_t i = 0; i < lambda_grid.size(); ++i) grid << (i ? "," : "") << lambda_grid[i];
  kv.set("lambda_grid", grid.str());
  kv.set("seed", static_cast<long>(seed));
  kv.set("checkpoint_every", checkpoint_every);
  kv.set("eval_every", eval_every);
  return kv;
}

RemovalConfig RemovalConfig::from_kv(const KeyValues& kv, const std::string& prefix) {
  RemovalConfig c;
  const auto key = [&](const char* k) { return prefix + k; };
  c.alpha = kv.get_double_or(key("alpha"), c.alpha);
  c.beta = kv.get_double_or(key("beta"), c.beta);
  c.eta = kv.get_double_or(key("eta"), c.eta);
  c.lr = kv.get_double_or(key("lr"), c.lr);
  c.momentum = kv.get_double_or(key("momentum"), c.momentum);
  c.iterations = kv.get_long_or(key("iterations"), c.iterations);
  c.batch_size = static_cast<int>(kv.get_long_or(key("batch_size"), c.batch_size));
  c.split_layer = static_cast<int>(kv.get_long_or(key("split_layer"), c.split_layer));
  c.shuffle_ratio = kv.get_double_or(key("shuffle_ratio"), c.shuffle_ratio);
  c.inner_steps = static_cast<int>(kv.get_long_or(key("inner_steps"), c.inner_steps));
  c.barrier_eps = kv.get_double_or(key("barrier_eps"), c.barrier_eps);
  c.lambda_grid = kv.get_doubles_or(key("lambda_grid"), c.lambda_grid);
  c.seed = static_cast<std::uint64_t>(kv.get_long_or(key("seed"), static_cast<long>(c.seed)));
  c.checkpoint_every = kv.get_long_or(key("checkpoint_every"), c.checkpoint_every);
  c.eval_every = kv.get_long_or(key("eval_every"), c.eval_every);
  c.validate();
  return c;
}

int resolve_split(const RemovalConfig& cfg, const ModelF& model) {
  const int split = cfg.split_layer == 0 ? default_split(model) : cfg.split_layer;
  model.check_split(split);
  return split;
}

namespace {

std::string field(double v) {
  if (std::isnan(v)) return "";
  std::ostringstream s;
  s << std::setprecision(9) << v;
  return s.str();
}

double parse_field(const std::string& s) {
  return s.empty() ? std::numeric_limits<double>::quiet_NaN() : std::stod(s);
}

fs::path checkpoint_dir(const fs::path& run_dir, long iter) { return run_dir / ("ckpt_" + std::to_string(iter)); }

/// Latest complete checkpoint in run_dir, or -1.
long latest_checkpoint(const fs::path& run_dir, long max_iter) {
  long best = -1;
  if (!fs::is_directory(run_dir)) return best;
  for (const auto& entry : fs::directory_iterator(run_dir)) {
    const std::string name = entry.path().filename().string();
    if (name.rfind("ckpt_", 0) != 0 || !checkpoint_exists(entry.path())) continue;
    try {
      const long it = std::stol(name.substr(5));
      if (it <= max_iter) best = std::max(best, it);
    } catch (const std::exception&) {
    }
  }
  return best;
}

void save_run_state(const fs::path& run_dir, long iter, const ModelF& surrogate, const SgdMomentum<float>& opt,
                    const RemovalConfig& cfg, const std::vector<TraceRow>& trace) {
  Checkpoint ck;
  ck.model = surrogate;
  const KeyValues settings = cfg.to_kv();
  for (const auto& [k, v] : settings.entries()) ck.meta.set("removal." + k, v);
  ck.meta.set("role", "surrogate");
  ck.meta.set("iteration", iter);
  for (std::size_t i = 0; i < surrogate.params.size(); ++i) {
    ck.extra.push_back({"velocity." + surrogate.params[i].name, opt.velocity()[i], false});
  }
  save_checkpoint(checkpoint_dir(run_dir, iter), ck);
  write_trace_csv(run_dir / "trace.csv", trace);
}

}  // namespace

void write_trace_csv(const fs::path& path, const std::vector<TraceRow>& trace) {
  const fs::path tmp = path.string() + ".tmp";
  {
    std::ofstream out(tmp);
    if (!out) throw IoError("cannot write " + path.string());
    out << "iter,l_ce,l_kl,l_feat,total,fidelity\n";
    for (const TraceRow& r : trace) {
      out << r.iter << ',' << field(r.l_ce) << ',' << field(r.l_kl) << ',' << field(r.l_feat) << ',' << field(r.total)
          << ',' << field(r.fidelity) << '\n';
    }
  }
  fs::rename(tmp, path);
}

std::vector<TraceRow> read_trace_csv(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path.string());
  std::string line;
  std::getline(in, line);
  if (trim(line) != "iter,l_ce,l_kl,l_feat,total,fidelity") throw SchemaError("unexpected trace header in " + path.string());
  std::vector<TraceRow> rows;
  while (std::getline(in, line)) {
    if (trim(line).empty()) continue;
    std::vector<std::string> f = split(line, ',');
    f.resize(6);
    TraceRow r;
    r.iter = std::stol(f[0]);
    r.l_ce = parse_field(f[1]);
    r.l_kl = parse_field(f[2]);
    r.l_feat = parse_field(f[3]);
    r.total = parse_field(f[4]);
    r.fidelity = parse_field(f[5]);
    rows.push_back(r);
  }
  return rows;
}

std::vector<long> removal_batch(long pool, int batch_size, std::uint64_t seed, long iteration) {
  std::vector<long> idx(static_cast<std::size_t>(pool));
  std::iota(idx.begin(), idx.end(), 0L);
  const long take = std::min<long>(batch_size, pool);
  std::mt19937_64 rng(detail::mix_seed(seed, static_cast<std::uint64_t>(iteration), 0x62617463ULL));
  for (long i = 0; i < take; ++i) {
    std::uniform_int_distribution<long> pick(i, pool - 1);
    std::swap(idx[static_cast<std::size_t>(i)], idx[static_cast<std::size_t>(pick(rng))]);
  }
  idx.resize(static_cast<std::size_t>(take));
  return idx;
}

RemovalResult run_removal(const ModelF& victim, const LabeledSet& substitute, const RemovalConfig& cfg,
                          const RemovalRunOptions& options) {
  cfg.validate();
  if (substitute.size() < 2) throw DomainError("run_removal: substitute set needs at least two samples");
  const int split = resolve_split(cfg, victim);

  RemovalResult result;
  result.surrogate = victim;
  SgdMomentum<float> opt(result.surrogate, cfg.lr, cfg.momentum);
  const bool persist = !options.run_dir.empty();
  long start = 0;

  if (persist && options.resume) {
    const long at = latest_checkpoint(options.run_dir, cfg.iterations);
    if (at >= 0) {
      Checkpoint ck = load_checkpoint(checkpoint_dir(options.run_dir, at));
      detail::require_same_layout(victim, ck.model);
      result.surrogate = std::move(ck.model);
      for (std::size_t i = 0; i < result.surrogate.params.size(); ++i) {
        const std::string want = "velocity." + result.surrogate.params[i].name;
        const auto it = std::find_if(ck.extra.begin(), ck.extra.end(), [&](const auto& t) { return t.name == want; });
        if (it == ck.extra.end()) throw SchemaError("checkpoint lacks optimizer state " + want);
        opt.velocity()[i] = it->value;
      }
      if (fs::exists(options.run_dir / "trace.csv")) {
        for (const TraceRow& r : read_trace_csv(options.run_dir / "trace.csv")) {
          if (r.iter <= at) result.trace.push_back(r);
        }
      }
      start = at;
      result.resumed_from = at;
    }
  }
  if (persist) fs::create_directories(options.run_dir);

  const auto fidelity = [&](const ModelF& m) {
    return options.eval ? evaluate_accuracy(m, *options.eval) : std::numeric_limits<double>::quiet_NaN();
  };
  if (start == 0) {
    result.trace.clear();
    TraceRow first;
    first.iter = 0;
    first.fidelity = fidelity(result.surrogate);
    result.trace.push_back(first);
  }

  for (long it = start; it < cfg.iterations; ++it) {
    const LabeledSet batch = substitute.subset(removal_batch(substitute.size(), cfg.batch_size, cfg.seed, it));
    const LatentTargets<float> latent = reverse_latent(victim, result.surrogate, batch.x, cfg, split, it);
    const MatF victim_out = victim.forward(batch.x);
    const LogitTargets<float> logit = ilbs(victim_out, cfg.lambda_grid);
    Gradients<float> grads = result.surrogate.zero_gradients();
    const RemovalLoss<float> loss =
        removal_gradients(result.surrogate, batch.x, victim_out, latent, logit, cfg, split, grads, it);
    opt.step(result.surrogate, grads);

    TraceRow row;
    row.iter = it + 1;
    row.l_ce = loss.ce;
    row.l_kl = loss.kl;
    row.l_feat = loss.feat;
    row.total = loss.total;
    row.fallbacks = latent.fallbacks();
    if ((it + 1) % cfg.eval_every == 0 || it + 1 == cfg.iterations) row.fidelity = fidelity(result.surrogate);
    result.trace.push_back(row);

    if (persist && ((it + 1) % cfg.checkpoint_every == 0 || it + 1 == cfg.iterations)) {
      save_run_state(options.run_dir, it + 1, result.surrogate, opt, cfg, result.trace);
    }
  }
  if (persist) write_trace_csv(options.run_dir / "trace.csv", result.trace);
  return result;
}

}  // namespace rnet
