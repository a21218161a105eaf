#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

namespace dmvi {

struct MetricRecord {
  std::uint64_t step;
  std::string name;
  double value;
};

/// Append-only stream of (step, name, value) records.
class ExperimentLog {
 public:
  void record(std::uint64_t step, const std::string& name, double value);
  void append(const ExperimentLog& other, const std::string& prefix = "");

  const std::vector<MetricRecord>& records() const { return records_; }
  std::vector<double> series(const std::string& name) const;
  std::optional<double> last(const std::string& name) const;
  /// Mean of the final `window` values of a metric.
  std::optional<double> tail_mean(const std::string& name, std::size_t window) const;

  /// One {"step":..,"name":..,"value":..} object per line.
  std::string to_jsonl() const;
  std::string to_csv() const;
  void write_jsonl(const std::filesystem::path& path) const;
  void write_csv(const std::filesystem::path& path) const;

 private:
  std::vector<MetricRecord> records_;
};

}  // namespace dmvi
