#ifndef REMOVALNET_HARNESS_REPORT_HPP
#define REMOVALNET_HARNESS_REPORT_HPP

#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

namespace rnet {

struct CsvTable {
  std::vector<std::string> header;
  std::vector<std::vector<std::string>> rows;

  void add(std::vector<std::string> row) { rows.push_back(std::move(row)); }
  void write(const std::filesystem::path& path) const;
  static CsvTable read(const std::filesystem::path& path);
};

/// Shortest round-trip decimal form.
std::string format_number(double v);

struct Series {
  std::string label;
  std::vector<double> x;
  std::vector<double> y;
};

struct PlotSpec {
  std::string title;
  std::string x_label;
  std::string y_label;
  // Optional horizontal reference line.
  bool reference = false;
  double reference_y = 0;
};

/// Line chart with markers, axis ticks and a legend, as standalone SVG.
void write_line_plot_svg(const std::filesystem::path& path, const PlotSpec& spec, const std::vector<Series>& series);

/// Appends timestamped lines to a file and mirrors them to a stream.
class RunLog {
 public:
  RunLog() = default;
  RunLog(const std::filesystem::path& path, std::ostream* echo);

  void info(const std::string& msg) { line("INFO", msg); }
  void warn(const std::string& msg) { line("WARN", msg); }
  void error(const std::string& msg) { line("ERROR", msg); }

 private:
  void line(const char* level, const std::string& msg);

  std::ofstream file_;
  std::ostream* echo_ = nullptr;
};

}  // namespace rnet

#endif  // REMOVALNET_HARNESS_REPORT_HPP
