#pragma once

#include <charconv>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include <boost/multiprecision/cpp_int.hpp>

#include "hierlab/core.hpp"

// Plain key = value run configuration with a fixed schema.
namespace hierlab {

struct ConfigError : Error {
  int line = 0;
  int column = 0;
  ConfigError(const std::string& where, int l, int c, const std::string& what)
      : Error(where + ":" + std::to_string(l) + ":" + std::to_string(c) + ": " + what), line(l), column(c) {}
};

enum class ValueType { integer, real, u64, text, choice, int_list, real_list, rational };

struct KeySpec {
  std::string key;
  ValueType type;
  std::string fallback;  // default, already canonical; empty means "unset"
  std::string choices;   // '|' separated, for ValueType::choice
  std::string doc;
};

inline const std::vector<std::string>& scenario_names() {
  static const std::vector<std::string> names{"kinematics", "lemmas", "boardgame", "be", "hierarchy", "decay"};
  return names;
}

// Keys every scenario accepts.
inline const std::vector<KeySpec>& common_keys() {
  static const std::vector<KeySpec> keys{
      {"seed", ValueType::u64, "42", "", "base seed; every random stream derives from it"},
      {"json_out", ValueType::text, "", "", "JSON summary file name (default <scenario>.json)"},
      {"csv_out", ValueType::text, "", "", "CSV detail file name (default <scenario>.csv)"},
  };
  return keys;
}

// Physical block shared by be and hierarchy.
inline std::vector<KeySpec> physics_keys() {
  return {
      {"d", ValueType::integer, "3", "", "dimension"},
      {"gamma", ValueType::real, "1", "", "cross-section exponent, in (1-d, 1]"},
      {"b", ValueType::real, "0.079577471545947673", "", "constant angular kernel value (1/(4 pi))"},
      {"p", ValueType::real, "4", "", "position weight exponent"},
      {"q", ValueType::real, "5", "", "velocity weight exponent"},
      {"alpha", ValueType::real, "0.05", "", "position weight scale"},
      {"beta", ValueType::real, "1", "", "velocity weight scale"},
      {"T", ValueType::real, "1", "", "time horizon"},
      {"depth", ValueType::integer, "4", "", "Picard depth"},
      {"replicas", ValueType::integer, "64", "", "tree replicas per evaluation"},
      {"points", ValueType::integer, "32", "", "sample points for sups"},
      {"times", ValueType::real_list, "0.25,0.5,0.75,1", "", "report times, each in (0, T]"},
      {"uq", ValueType::real, "0", "", "U_q value; 0 estimates it"},
      {"uq_samples", ValueType::integer, "65536", "", "U_q samples per grid point (before doublings)"},
      {"quad_samples", ValueType::integer, "256", "", "Monte Carlo samples for collision integrals in residuals"},
      {"residual_points", ValueType::integer, "2", "", "points for direct mild-form residuals (0 skips them)"},
      {"residual_replicas", ValueType::integer, "8", "", "tree replicas of the iterate checked by direct residuals"},
      {"conservation_samples", ValueType::integer, "16384", "", "phase-space samples for conserved moments"},
  };
}

inline const std::map<std::string, std::vector<KeySpec>>& scenario_keys() {
  static const std::map<std::string, std::vector<KeySpec>> table = [] {
    std::map<std::string, std::vector<KeySpec>> t;
    t["kinematics"] = {
        {"dims", ValueType::int_list, "3,4", "", "dimensions to test"},
        {"samples", ValueType::integer, "1000000", "", "random collisions per dimension"},
        {"tol", ValueType::real, "1e-10", "", "relative defect tolerance"},
    };
    t["lemmas"] = {
        {"lemma", ValueType::choice, "all", "all|position|uq|conv-lq|conv-ltilde|sphere", "which lemma suite"},
        {"d", ValueType::integer, "0", "", "dimension; 0 draws d in {3,4} per trial"},
        {"gamma", ValueType::real, "nan", "", "fixed gamma; nan draws it per trial"},
        {"p", ValueType::real, "nan", "", "fixed p for the position lemma; nan draws it"},
        {"q", ValueType::real, "nan", "", "fixed q; nan draws it per trial"},
        {"trials", ValueType::integer, "0", "", "trials; 0 uses 1000 (position) and 100 per regime (convolution)"},
        {"uq_samples", ValueType::integer, "65536", "", "U_q base samples"},
        {"uq_doublings", ValueType::integer, "3", "", "U_q sample doublings"},
    };
    t["boardgame"] = {
        {"action", ValueType::choice, "enumerate", "count|enumerate|reduce|classes|verify-invariance",
         "what to run"},
        {"k", ValueType::integer, "2", "", "particles on the left"},
        {"n", ValueType::integer, "4", "", "collision columns"},
        {"mu", ValueType::int_list, "", "", "collision map for reduce"},
        {"policy", ValueType::choice, "leftmost", "leftmost|rightmost|random", "move policy for reduce"},
        {"samples", ValueType::integer, "65536", "", "Monte Carlo samples per probe (verify-invariance)"},
        {"probes", ValueType::integer, "2", "", "probe points (verify-invariance)"},
        {"horizon", ValueType::real, "1", "", "time horizon t (verify-invariance)"},
    };
    t["be"] = physics_keys();
    t["be"].push_back({"M", ValueType::real, "0", "", "smallness bound; 0 uses 0.99/(8C)"});
    t["be"].push_back({"b_zero", ValueType::choice, "false", "false|true", "run with b = 0 (free transport)"});
    t["hierarchy"] = physics_keys();
    t["hierarchy"].push_back({"mu", ValueType::real, "nan", "", "chemical potential; nan uses ln(16 C)"});
    t["hierarchy"].push_back({"K_max", ValueType::integer, "4", "", "largest marginal in norms"});
    t["hierarchy"].push_back({"residual_k", ValueType::int_list, "1,2", "", "marginals for the mild residual"});
    t["hierarchy"].push_back({"admissibility_samples", ValueType::integer, "16384", "", "samples per admissibility integral"});
    t["decay"] = {
        {"ratio", ValueType::rational, "8", "", "e^mu / C as an exact rational"},
        {"C", ValueType::rational, "1613", "", "constant C as an exact rational"},
        {"k", ValueType::integer, "1", "", "marginal index"},
        {"norm_F", ValueType::rational, "1", "", "norm of the difference of solutions"},
        {"n_max", ValueType::integer, "60", "", "largest n"},
        {"threshold", ValueType::rational, "1/1000000000000", "", "target the bound must drop below"},
    };
    return t;
  }();
  return table;
}

// Atom keys: atom.<i>.<field>, i >= 1.
inline const std::vector<KeySpec>& atom_fields() {
  static const std::vector<KeySpec> f{
      {"weight", ValueType::real, "", "", "mixture weight"},
      {"family", ValueType::choice, "", "gaussian|polyweight|table", "density family"},
      {"mass", ValueType::real, "1", "", "total mass"},
      {"p", ValueType::real, "4", "", "polyweight/table: position decay exponent"},
      {"alpha", ValueType::real, "1", "", "polyweight/table: position scale"},
      {"cx", ValueType::real_list, "", "", "gaussian: position center"},
      {"cv", ValueType::real_list, "", "", "gaussian: velocity center"},
      {"sx", ValueType::real, "1", "", "gaussian: position standard deviation"},
      {"sv", ValueType::real, "1", "", "gaussian: velocity standard deviation"},
      {"r", ValueType::real_list, "", "", "table: speed nodes"},
      {"values", ValueType::real_list, "", "", "table: values at the nodes"},
  };
  return f;
}

inline bool scenario_takes_atoms(const std::string& s) { return s == "be" || s == "hierarchy"; }

namespace detail {

inline std::string trim(std::string_view s) {
  std::size_t a = 0, b = s.size();
  while (a < b && (s[a] == ' ' || s[a] == '\t' || s[a] == '\r')) ++a;
  while (b > a && (s[b - 1] == ' ' || s[b - 1] == '\t' || s[b - 1] == '\r')) --b;
  return std::string(s.substr(a, b - a));
}

inline bool parse_real(const std::string& s, double& out) {
  if (s == "nan") {
    out = std::numeric_limits<double>::quiet_NaN();
    return true;
  }
  const char* end = s.data() + s.size();
  auto [ptr, ec] = std::from_chars(s.data(), end, out);
  return ec == std::errc() && ptr == end && std::isfinite(out);
}

inline bool parse_int(const std::string& s, long long& out) {
  const char* end = s.data() + s.size();
  auto [ptr, ec] = std::from_chars(s.data(), end, out);
  return ec == std::errc() && ptr == end;
}

inline bool parse_u64(const std::string& s, std::uint64_t& out) {
  const char* end = s.data() + s.size();
  auto [ptr, ec] = std::from_chars(s.data(), end, out);
  return ec == std::errc() && ptr == end;
}

inline std::vector<std::string> split_list(const std::string& s) {
  std::vector<std::string> out;
  std::string cur;
  for (char c : s) {
    if (c == ',') {
      out.push_back(trim(cur));
      cur.clear();
    } else {
      cur += c;
    }
  }
  out.push_back(trim(cur));
  return out;
}

// "a", "a/b" or a decimal literal with optional exponent, all exact.
inline bool parse_rational(const std::string& s, boost::multiprecision::cpp_rational& out) {
  using boost::multiprecision::cpp_int;
  using boost::multiprecision::cpp_rational;
  auto digits = [](const std::string& t) {
    if (t.empty()) return false;
    for (char c : t) if (c < '0' || c > '9') return false;
    return true;
  };
  const auto slash = s.find('/');
  if (slash != std::string::npos) {
    std::string a = s.substr(0, slash), b = s.substr(slash + 1);
    const bool neg = !a.empty() && a[0] == '-';
    if (neg) a = a.substr(1);
    if (!digits(a) || !digits(b)) return false;
    const cpp_int den(b);
    if (den == 0) return false;
    out = cpp_rational(cpp_int(a), den);
    if (neg) out = -out;
    return true;
  }
  std::string mant = s;
  long long exp10 = 0;
  const auto e = s.find_first_of("eE");
  if (e != std::string::npos) {
    mant = s.substr(0, e);
    if (!parse_int(s.substr(e + 1), exp10) || std::abs(exp10) > 4000) return false;
  }
  const bool neg = !mant.empty() && mant[0] == '-';
  if (neg) mant = mant.substr(1);
  const auto dot = mant.find('.');
  std::string whole = mant, frac;
  if (dot != std::string::npos) {
    whole = mant.substr(0, dot);
    frac = mant.substr(dot + 1);
  }
  if (whole.empty() && frac.empty()) return false;
  if ((!whole.empty() && !digits(whole)) || (!frac.empty() && !digits(frac))) return false;
  cpp_int num(whole.empty() ? std::string("0") : whole);
  for (char c : frac) num = num * 10 + (c - '0');
  exp10 -= static_cast<long long>(frac.size());
  cpp_int scale = 1;
  for (long long i = 0; i < std::abs(exp10); ++i) scale *= 10;
  out = exp10 >= 0 ? cpp_rational(num * scale) : cpp_rational(num, scale);
  if (neg) out = -out;
  return true;
}

}  // namespace detail

// Validates one value against its type; returns an error message or "".
inline std::string check_value(const KeySpec& spec, const std::string& v) {
  double r;
  long long i;
  std::uint64_t u;
  boost::multiprecision::cpp_rational q;
  switch (spec.type) {
    case ValueType::integer:
      return detail::parse_int(v, i) ? "" : "expected an integer";
    case ValueType::u64:
      return detail::parse_u64(v, u) ? "" : "expected an unsigned 64-bit integer";
    case ValueType::real:
      return detail::parse_real(v, r) ? "" : "expected a number";
    case ValueType::text:
      return v.empty() ? "expected a nonempty value" : "";
    case ValueType::rational:
      return detail::parse_rational(v, q) ? "" : "expected an exact rational (a, a/b or a decimal)";
    case ValueType::choice: {
      std::stringstream ss(spec.choices);
      std::string c;
      while (std::getline(ss, c, '|'))
        if (c == v) return "";
      return "expected one of " + spec.choices;
    }
    case ValueType::int_list:
      for (const auto& e : detail::split_list(v))
        if (!detail::parse_int(e, i)) return "expected a comma-separated list of integers";
      return "";
    case ValueType::real_list:
      for (const auto& e : detail::split_list(v))
        if (!detail::parse_real(e, r)) return "expected a comma-separated list of numbers";
      return "";
  }
  return "unknown type";
}

class RunConfig {
 public:
  RunConfig() = default;
  explicit RunConfig(std::string scenario) : scenario_(std::move(scenario)) {
    if (!scenario_keys().count(scenario_)) throw ConfigError("<config>", 0, 0, "unknown scenario '" + scenario_ + "'");
  }

  const std::string& scenario() const { return scenario_; }

  // Looks up the schema entry for a key, or nullptr.
  const KeySpec* spec_for(const std::string& key) const {
    for (const auto& s : common_keys()) if (s.key == key) return &s;
    if (scenario_keys().count(scenario_))
      for (const auto& s : scenario_keys().at(scenario_)) if (s.key == key) return &s;
    if (scenario_takes_atoms(scenario_) && key.rfind("atom.", 0) == 0) {
      const auto dot = key.find('.', 5);
      if (dot == std::string::npos) return nullptr;
      long long idx;
      if (!detail::parse_int(key.substr(5, dot - 5), idx) || idx < 1 || idx > 64) return nullptr;
      if (std::to_string(idx) != key.substr(5, dot - 5)) return nullptr;
      const std::string field = key.substr(dot + 1);
      for (const auto& s : atom_fields()) if (s.key == field) return &s;
    }
    return nullptr;
  }

  // Sets a key after validation; `where`, line and column feed diagnostics.
  void set(const std::string& key, const std::string& value, const std::string& where = "<arg>", int line = 0,
           int key_col = 1, int value_col = 1) {
    const KeySpec* s = spec_for(key);
    if (!s) throw ConfigError(where, line, key_col, "unknown key '" + key + "' for scenario '" + scenario_ + "'");
    const std::string err = check_value(*s, value);
    if (!err.empty()) throw ConfigError(where, line, value_col, "bad value for '" + key + "': " + err);
    values_[key] = value;
  }

  bool has(const std::string& key) const { return values_.count(key) > 0; }

  std::string raw(const std::string& key) const {
    const auto it = values_.find(key);
    if (it != values_.end()) return it->second;
    const KeySpec* s = spec_for(key);
    if (!s) throw PreconditionError("key not in schema: " + key);
    return s->fallback;
  }

  double real(const std::string& key) const {
    double r = 0.0;
    if (!detail::parse_real(raw(key), r)) throw ConfigError("<config>", 0, 0, "missing number for '" + key + "'");
    return r;
  }
  long long integer(const std::string& key) const {
    long long i = 0;
    if (!detail::parse_int(raw(key), i)) throw ConfigError("<config>", 0, 0, "missing integer for '" + key + "'");
    return i;
  }
  std::uint64_t u64(const std::string& key) const {
    std::uint64_t u = 0;
    if (!detail::parse_u64(raw(key), u)) throw ConfigError("<config>", 0, 0, "missing integer for '" + key + "'");
    return u;
  }
  boost::multiprecision::cpp_rational rational(const std::string& key) const {
    boost::multiprecision::cpp_rational q;
    if (!detail::parse_rational(raw(key), q)) throw ConfigError("<config>", 0, 0, "missing rational for '" + key + "'");
    return q;
  }
  std::vector<double> reals(const std::string& key) const {
    std::vector<double> out;
    const std::string r = raw(key);
    if (r.empty()) return out;
    for (const auto& e : detail::split_list(r)) {
      double x = 0.0;
      detail::parse_real(e, x);
      out.push_back(x);
    }
    return out;
  }
  std::vector<int> ints(const std::string& key) const {
    std::vector<int> out;
    const std::string r = raw(key);
    if (r.empty()) return out;
    for (const auto& e : detail::split_list(r)) {
      long long x = 0;
      detail::parse_int(e, x);
      out.push_back(static_cast<int>(x));
    }
    return out;
  }

  // Atom indices present, ascending.
  std::vector<int> atom_indices() const {
    std::vector<int> out;
    for (const auto& [k, v] : values_) {
      if (k.rfind("atom.", 0) != 0) continue;
      const int idx = std::stoi(k.substr(5, k.find('.', 5) - 5));
      if (std::find(out.begin(), out.end(), idx) == out.end()) out.push_back(idx);
    }
    std::sort(out.begin(), out.end());
    return out;
  }

  const std::map<std::string, std::string>& values() const { return values_; }

  // Canonical text: scenario first, then explicitly set keys sorted.
  std::string serialize() const {
    std::string out = "scenario = " + scenario_ + "\n";
    for (const auto& [k, v] : values_) out += k + " = " + v + "\n";
    return out;
  }

  bool operator==(const RunConfig& o) const { return scenario_ == o.scenario_ && values_ == o.values_; }

 private:
  std::string scenario_;
  std::map<std::string, std::string> values_;
};

// Parses config text. Lines are `key = value`; '#' starts a comment line.
// `scenario` must appear unless `expected` is given; when both are present
// they must agree.
inline RunConfig parse_config(const std::string& text, const std::string& where = "<config>",
                              const std::string& expected = "") {
  struct Entry {
    std::string key, value;
    int line, key_col, value_col;
  };
  std::vector<Entry> entries;
  std::string scenario = expected;
  int scenario_line = 0, scenario_col = 0;
  std::istringstream in(text);
  std::string line;
  int ln = 0;
  while (std::getline(in, line)) {
    ++ln;
    const std::string t = detail::trim(line);
    if (t.empty() || t[0] == '#') continue;
    const auto eq = line.find('=');
    const int first = static_cast<int>(line.find_first_not_of(" \t")) + 1;
    if (eq == std::string::npos) throw ConfigError(where, ln, first, "expected 'key = value'");
    const std::string key = detail::trim(std::string_view(line).substr(0, eq));
    const std::string value = detail::trim(std::string_view(line).substr(eq + 1));
    if (key.empty()) throw ConfigError(where, ln, first, "missing key before '='");
    std::size_t vpos = line.find_first_not_of(" \t", eq + 1);
    const int vcol = vpos == std::string::npos ? static_cast<int>(eq) + 2 : static_cast<int>(vpos) + 1;
    if (value.empty()) throw ConfigError(where, ln, vcol, "missing value for '" + key + "'");
    if (key == "scenario") {
      if (!scenario_keys().count(value)) throw ConfigError(where, ln, vcol, "unknown scenario '" + value + "'");
      if (!expected.empty() && value != expected)
        throw ConfigError(where, ln, vcol, "config is for scenario '" + value + "', not '" + expected + "'");
      scenario = value;
      scenario_line = ln;
      scenario_col = vcol;
      continue;
    }
    entries.push_back({key, value, ln, first, vcol});
  }
  (void)scenario_line;
  (void)scenario_col;
  if (scenario.empty()) throw ConfigError(where, 1, 1, "missing 'scenario' key");
  RunConfig cfg(scenario);
  for (const auto& e : entries) {
    if (cfg.has(e.key)) throw ConfigError(where, e.line, e.key_col, "duplicate key '" + e.key + "'");
    cfg.set(e.key, e.value, where, e.line, e.key_col, e.value_col);
  }
  return cfg;
}

inline RunConfig load_config(const std::string& path, const std::string& expected = "") {
  std::ifstream f(path);
  if (!f) throw ConfigError(path, 0, 0, "cannot open config file");
  std::stringstream ss;
  ss << f.rdbuf();
  return parse_config(ss.str(), path, expected);
}

// Schema as text, one key per line; the in-repo schema file mirrors this.
inline std::string render_schema() {
  auto type_name = [](const KeySpec& s) -> std::string {
    switch (s.type) {
      case ValueType::integer: return "int";
      case ValueType::real: return "real";
      case ValueType::u64: return "u64";
      case ValueType::text: return "text";
      case ValueType::choice: return "{" + s.choices + "}";
      case ValueType::int_list: return "int,...";
      case ValueType::real_list: return "real,...";
      case ValueType::rational: return "rational";
    }
    return "?";
  };
  auto line = [&](const std::string& key, const KeySpec& s) {
    std::string out = key + " : " + type_name(s);
    if (!s.fallback.empty()) out += " = " + s.fallback;
    return out + "  # " + s.doc + "\n";
  };
  std::string out = "# hierlab run configuration schema\n";
  out += "# line format: key = value; '#' starts a comment line; unknown keys are errors\n\n";
  out += "[all scenarios]\nscenario : {kinematics|lemmas|boardgame|be|hierarchy|decay}  # required\n";
  for (const auto& s : common_keys()) out += line(s.key, s);
  for (const auto& name : scenario_names()) {
    out += "\n[" + name + "]\n";
    for (const auto& s : scenario_keys().at(name)) out += line(s.key, s);
    if (scenario_takes_atoms(name))
      for (const auto& s : atom_fields()) out += line("atom.<i>." + s.key, s);
  }
  return out;
}

}  // namespace hierlab
