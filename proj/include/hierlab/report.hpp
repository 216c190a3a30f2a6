#pragma once

#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "hierlab/core.hpp"

namespace hierlab {

inline constexpr const char* kVersion = "0.1.0";

using Json = nlohmann::ordered_json;

// CSV with a fixed header; cells are preformatted strings.
class CsvTable {
 public:
  CsvTable() = default;
  explicit CsvTable(std::vector<std::string> header) : header_(std::move(header)) {}

  struct Row {
    std::vector<std::string> cells;
    Row& operator<<(double x) { cells.push_back(fmt17(x)); return *this; }
    Row& operator<<(int x) { cells.push_back(std::to_string(x)); return *this; }
    Row& operator<<(long long x) { cells.push_back(std::to_string(x)); return *this; }
    Row& operator<<(std::size_t x) { cells.push_back(std::to_string(x)); return *this; }
    Row& operator<<(bool x) { cells.push_back(x ? "true" : "false"); return *this; }
    Row& operator<<(const std::string& x) { cells.push_back(x); return *this; }
    Row& operator<<(const char* x) { cells.push_back(x); return *this; }
  };

  void add(const Row& r) {
    if (r.cells.size() != header_.size()) throw PreconditionError("CSV row width does not match the header");
    rows_.push_back(r.cells);
  }
  const std::vector<std::string>& header() const { return header_; }
  std::size_t size() const { return rows_.size(); }
  const std::vector<std::vector<std::string>>& rows() const { return rows_; }

  std::string str() const {
    std::string out;
    auto emit = [&](const std::vector<std::string>& cells) {
      for (std::size_t i = 0; i < cells.size(); ++i) {
        if (i) out += ',';
        const bool quote = cells[i].find_first_of(",\"\n") != std::string::npos;
        if (!quote) {
          out += cells[i];
        } else {
          out += '"';
          for (char c : cells[i]) out += c == '"' ? std::string("\"\"") : std::string(1, c);
          out += '"';
        }
      }
      out += '\n';
    };
    emit(header_);
    for (const auto& r : rows_) emit(r);
    return out;
  }

 private:
  std::vector<std::string> header_;
  std::vector<std::vector<std::string>> rows_;
};

// One named pass/fail assertion of a run.
struct Check {
  std::string name;
  bool ok = false;
  std::string detail;
};

struct ScenarioResult {
  std::string scenario;
  Json summary = Json::object();
  CsvTable detail;
  std::vector<Check> checks;

  void check(const std::string& name, bool ok, const std::string& detail_text = "") {
    checks.push_back({name, ok, detail_text});
  }
  bool ok() const {
    for (const auto& c : checks) if (!c.ok) return false;
    return true;
  }
};

// Summary JSON: tool, version, scenario, seed and config first, then the
// scenario's own fields, then the checks.
inline std::string render_json(const ScenarioResult& r, const Json& config, std::uint64_t seed) {
  Json j;
  j["tool"] = "hierlab";
  j["version"] = kVersion;
  j["scenario"] = r.scenario;
  j["seed"] = seed;
  j["config"] = config;
  for (const auto& [k, v] : r.summary.items()) j[k] = v;
  Json cs = Json::array();
  for (const auto& c : r.checks) cs.push_back({{"name", c.name}, {"ok", c.ok}, {"detail", c.detail}});
  j["checks"] = cs;
  j["ok"] = r.ok();
  return j.dump(2) + "\n";
}

inline void write_text(const std::filesystem::path& p, const std::string& text) {
  if (p.has_parent_path()) std::filesystem::create_directories(p.parent_path());
  std::ofstream f(p, std::ios::binary);
  if (!f) throw Error("cannot write " + p.string());
  f << text;
  if (!f) throw Error("write failed for " + p.string());
}

}  // namespace hierlab
