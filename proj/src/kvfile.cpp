#include "removalnet/kvfile.hpp"

#include <charconv>
#include <fstream>
#include <sstream>

#include "removalnet/errors.hpp"

namespace rnet {

std::vector<std::string> split(const std::string& s, char sep) {
  std::vector<std::string> out;
  std::string cur;
  std::istringstream in(s);
  while (std::getline(in, cur, sep)) out.push_back(trim(cur));
  return out;
}

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r\n");
  return s.substr(b, e - b + 1);
}

void KeyValues::set(const std::string& key, double value) {
  char buf[32];
  const auto r = std::to_chars(buf, buf + sizeof buf, value);
  entries_[key] = std::string(buf, r.ptr);
}

std::optional<std::string> KeyValues::find(const std::string& key) const {
  auto it = entries_.find(key);
  if (it == entries_.end()) return std::nullopt;
  return it->second;
}

std::string KeyValues::get(const std::string& key) const {
  auto v = find(key);
  if (!v) throw ConfigError("missing key '" + key + "'");
  return *v;
}

std::string KeyValues::get_or(const std::string& key, const std::string& fallback) const {
  return find(key).value_or(fallback);
}

double KeyValues::get_double(const std::string& key) const {
  const std::string v = get(key);
  try {
    std::size_t used = 0;
    const double d = std::stod(v, &used);
    if (used != v.size()) throw std::invalid_argument(v);
    return d;
  } catch (const std::exception&) {
    throw ConfigError("key '" + key + "': not a number: '" + v + "'");
  }
}

double KeyValues::get_double_or(const std::string& key, double fallback) const {
  return has(key) ? get_double(key) : fallback;
}

long KeyValues::get_long(const std::string& key) const {
  const std::string v = get(key);
  long out = 0;
  auto [ptr, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc() || ptr != v.data() + v.size()) {
    throw ConfigError("key '" + key + "': not an integer: '" + v + "'");
  }
  return out;
}

long KeyValues::get_long_or(const std::string& key, long fallback) const {
  return has(key) ? get_long(key) : fallback;
}

std::vector<double> KeyValues::get_doubles_or(const std::string& key, std::vector<double> fallback) const {
  if (!has(key)) return fallback;
  std::vector<double> out;
  for (const auto& part : split(get(key), ',')) {
    if (part.empty()) continue;
    try {
      out.push_back(std::stod(part));
    } catch (const std::exception&) {
      throw ConfigError("key '" + key + "': not a number list: '" + get(key) + "'");
    }
  }
  return out;
}

std::vector<std::string> KeyValues::get_list_or(const std::string& key,
                                                std::vector<std::string> fallback) const {
  if (!has(key)) return fallback;
  std::vector<std::string> out;
  for (auto& part : split(get(key), ',')) {
    if (!part.empty()) out.push_back(part);
  }
  return out;
}

std::string KeyValues::serialize() const {
  std::string out;
  for (const auto& [k, v] : entries_) out += k + "=" + v + "\n";
  return out;
}

KeyValues KeyValues::parse(const std::string& text, const std::string& origin) {
  KeyValues kv;
  std::istringstream in(text);
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    std::string t = trim(line);
    if (t.empty() || t[0] == '#') continue;
    for (std::size_t i = 1; i < t.size(); ++i) {
      if (t[i] == '#' && (t[i - 1] == ' ' || t[i - 1] == '\t')) {
        t = trim(t.substr(0, i));
        break;
      }
    }
    const auto eq = t.find('=');
    if (eq == std::string::npos || eq == 0) {
      throw ConfigError(origin + ":" + std::to_string(lineno) + ": expected key=value");
    }
    kv.set(trim(t.substr(0, eq)), trim(t.substr(eq + 1)));
  }
  return kv;
}

KeyValues KeyValues::read(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return parse(ss.str(), path.string());
}

void KeyValues::write(const std::filesystem::path& path) const {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path);
  if (!out) throw IoError("cannot write " + path.string());
  out << serialize();
  if (!out) throw IoError("write failed: " + path.string());
}

}  // namespace rnet
