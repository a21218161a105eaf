#include "dmvi/metrics.hpp"

#include <fstream>
#include <sstream>

#include "dmvi/errors.hpp"
#include "json.hpp"

namespace dmvi {

void ExperimentLog::record(std::uint64_t step, const std::string& name, double value) {
  records_.push_back({step, name, value});
}

void ExperimentLog::append(const ExperimentLog& other, const std::string& prefix) {
  for (const auto& r : other.records_) records_.push_back({r.step, prefix + r.name, r.value});
}

std::vector<double> ExperimentLog::series(const std::string& name) const {
  std::vector<double> out;
  for (const auto& r : records_)
    if (r.name == name) out.push_back(r.value);
  return out;
}

std::optional<double> ExperimentLog::last(const std::string& name) const {
  for (auto it = records_.rbegin(); it != records_.rend(); ++it)
    if (it->name == name) return it->value;
  return std::nullopt;
}

std::optional<double> ExperimentLog::tail_mean(const std::string& name, std::size_t window) const {
  const auto s = series(name);
  if (s.empty() || window == 0) return std::nullopt;
  const std::size_t n = std::min(window, s.size());
  double sum = 0.0;
  for (std::size_t i = s.size() - n; i < s.size(); ++i) sum += s[i];
  return sum / static_cast<double>(n);
}

std::string ExperimentLog::to_jsonl() const {
  std::string out;
  for (const auto& r : records_) {
    nlohmann::ordered_json j;
    j["step"] = r.step;
    j["name"] = r.name;
    j["value"] = r.value;
    out += j.dump();
    out += '\n';
  }
  return out;
}

std::string ExperimentLog::to_csv() const {
  std::ostringstream os;
  os.precision(17);
  os << "step,name,value\n";
  for (const auto& r : records_) os << r.step << ',' << r.name << ',' << r.value << '\n';
  return os.str();
}

namespace {

void write_text(const std::filesystem::path& path, const std::string& text) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot open " + path.string() + " for writing");
  f << text;
  if (!f) throw IoError("write failed for " + path.string());
}

}  // namespace

void ExperimentLog::write_jsonl(const std::filesystem::path& path) const { write_text(path, to_jsonl()); }

void ExperimentLog::write_csv(const std::filesystem::path& path) const { write_text(path, to_csv()); }

}  // namespace dmvi
