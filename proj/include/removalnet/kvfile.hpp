#ifndef REMOVALNET_KVFILE_HPP
#define REMOVALNET_KVFILE_HPP

#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <utility>
#include <vector>

namespace rnet {

/// Ordered `key=value` record, the text format shared by checkpoint metadata,
/// fingerprint metadata and experiment config files. Blank lines and lines
/// starting with '#' are ignored when reading.
class KeyValues {
 public:
  void set(const std::string& key, const std::string& value) { entries_[key] = value; }
  void set(const std::string& key, double value);
  void set(const std::string& key, long value) { set(key, std::to_string(value)); }
  void set(const std::string& key, int value) { set(key, std::to_string(value)); }

  bool has(const std::string& key) const { return entries_.count(key) > 0; }
  std::optional<std::string> find(const std::string& key) const;

  /// Throws ConfigError when missing or unparsable.
  std::string get(const std::string& key) const;
  std::string get_or(const std::string& key, const std::string& fallback) const;
  double get_double(const std::string& key) const;
  double get_double_or(const std::string& key, double fallback) const;
  long get_long(const std::string& key) const;
  long get_long_or(const std::string& key, long fallback) const;
  std::vector<double> get_doubles_or(const std::string& key, std::vector<double> fallback) const;
  std::vector<std::string> get_list_or(const std::string& key, std::vector<std::string> fallback) const;

  const std::map<std::string, std::string>& entries() const& { return entries_; }
  std::map<std::string, std::string> entries() && { return std::move(entries_); }

  std::string serialize() const;
  static KeyValues parse(const std::string& text, const std::string& origin = "<string>");
  static KeyValues read(const std::filesystem::path& path);
  void write(const std::filesystem::path& path) const;

 private:
  std::map<std::string, std::string> entries_;
};

std::vector<std::string> split(const std::string& s, char sep);
std::string trim(const std::string& s);

}  // namespace rnet

#endif  // REMOVALNET_KVFILE_HPP
