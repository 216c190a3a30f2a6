// hierlab: command line driver for the verification scenarios.
#include <CLI11.hpp>

#include <filesystem>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "hierlab/scenarios.hpp"

namespace {

struct Shortcut {
  std::string flag;  // without dashes
  std::string key;
  std::string help;
  std::string value;
};

struct Sub {
  CLI::App* app = nullptr;
  std::string scenario;
  std::string config_path;
  std::vector<std::string> sets;
  std::vector<Shortcut> shortcuts;
  std::string out_csv;
};

void add_shortcut(Sub& s, std::string flag, std::string key, std::string help) {
  s.shortcuts.push_back({std::move(flag), std::move(key), std::move(help), ""});
}

void bind(Sub& s) {
  s.app->add_option("--config", s.config_path, "key = value config file");
  s.app->add_option("--set", s.sets, "override a config key (key=value), repeatable");
  for (auto& sc : s.shortcuts) s.app->add_option("--" + sc.flag, sc.value, sc.help);
}

hierlab::RunConfig build_config(const Sub& s, const std::optional<std::string>& seed) {
  using hierlab::ConfigError;
  hierlab::RunConfig cfg =
      s.config_path.empty() ? hierlab::RunConfig(s.scenario) : hierlab::load_config(s.config_path, s.scenario);
  for (const auto& sc : s.shortcuts)
    if (!sc.value.empty()) cfg.set(sc.key, sc.value, "--" + sc.flag);
  for (const auto& kv : s.sets) {
    const auto eq = kv.find('=');
    if (eq == std::string::npos || eq == 0) throw ConfigError("--set", 0, 1, "expected key=value, got '" + kv + "'");
    cfg.set(hierlab::detail::trim(kv.substr(0, eq)), hierlab::detail::trim(kv.substr(eq + 1)), "--set " + kv, 0, 1,
            static_cast<int>(eq) + 2);
  }
  if (seed) cfg.set("seed", *seed, "--seed");
  return cfg;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"hierlab: numerical verification of the Boltzmann hierarchy constructions"};
  app.require_subcommand(0, 1);
  app.fallthrough();
  std::optional<std::string> seed;
  int threads = 0;
  std::string out_dir = ".";
  bool print_schema = false;
  app.add_option("--seed", seed, "base seed (overrides the config)");
  app.add_option("--threads", threads, "worker threads (default: HIERLAB_THREADS or 1)");
  app.add_option("--out-dir", out_dir, "directory for the JSON and CSV artifacts");
  app.set_version_flag("--version", std::string(hierlab::kVersion));

  std::vector<Sub> subs(6);
  auto make = [&](std::size_t i, const char* name, const char* scenario, const char* help) -> Sub& {
    subs[i].app = app.add_subcommand(name, help);
    subs[i].scenario = scenario;
    return subs[i];
  };
  {
    auto& s = make(0, "kinematics-check", "kinematics", "collision-map identities on random draws");
    add_shortcut(s, "dims", "dims", "comma-separated dimensions");
    add_shortcut(s, "samples", "samples", "draws per dimension");
    add_shortcut(s, "tol", "tol", "relative tolerance");
    bind(s);
  }
  {
    auto& s = make(1, "verify-lemmas", "lemmas", "a-priori estimate suites");
    add_shortcut(s, "lemma", "lemma", "all|position|uq|conv-lq|conv-ltilde|sphere");
    add_shortcut(s, "d", "d", "fix the dimension (0 = random in {3,4})");
    add_shortcut(s, "gamma", "gamma", "fix gamma");
    add_shortcut(s, "p", "p", "fix p (position lemma)");
    add_shortcut(s, "q", "q", "fix q");
    add_shortcut(s, "trials", "trials", "trials per suite (0 = suite default)");
    bind(s);
    s.app->add_option("--out", s.out_csv, "CSV output file");
  }
  std::string action;
  {
    auto& s = make(2, "boardgame", "boardgame", "collision-map combinatorics");
    add_shortcut(s, "k", "k", "number of initial particles");
    add_shortcut(s, "n", "n", "number of collisions");
    add_shortcut(s, "mu", "mu", "collision map for reduce, e.g. 2,3,1,4");
    add_shortcut(s, "policy", "policy", "reduce move policy");
    add_shortcut(s, "samples", "samples", "Monte Carlo samples for verify-invariance");
    add_shortcut(s, "probes", "probes", "probe points for verify-invariance");
    bind(s);
    s.app->add_option("action", action, "count|enumerate|reduce|classes|verify-invariance");
  }
  {
    auto& s = make(3, "solve-be", "be", "mild Boltzmann equation by Picard iteration");
    bind(s);
  }
  {
    auto& s = make(4, "solve-hierarchy", "hierarchy", "hierarchy solution from a finite mixture");
    bind(s);
  }
  {
    auto& s = make(5, "decay-bound", "decay", "uniqueness decay bound in exact arithmetic");
    add_shortcut(s, "ratio", "ratio", "e^mu / C");
    add_shortcut(s, "C", "C", "estimate constant");
    add_shortcut(s, "k", "k", "marginal order");
    add_shortcut(s, "norm-F", "norm_F", "norm of the data");
    add_shortcut(s, "n-max", "n_max", "largest n");
    add_shortcut(s, "threshold", "threshold", "target bound");
    bind(s);
  }
  app.add_flag("--print-schema", print_schema, "print the config schema and exit");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : 2;
  }
  if (print_schema) {
    std::cout << hierlab::render_schema();
    return 0;
  }
  if (threads > 0) hierlab::set_threads(threads);
  if (app.get_subcommands().empty()) {
    std::cerr << app.help();
    return 2;
  }

  for (auto& s : subs) {
    if (!s.app->parsed()) continue;
    try {
      hierlab::RunConfig cfg = build_config(s, seed);
      if (s.scenario == "boardgame" && !action.empty()) cfg.set("action", action, "action");
      if (!s.out_csv.empty()) cfg.set("csv_out", s.out_csv, "--out");
      bool ok = false;
      const auto files = hierlab::render_reports(cfg, &ok);
      auto target = [&](const std::string& key, const std::string& ext) {
        std::string name = cfg.raw(key);
        if (name.empty()) name = cfg.scenario() + ext;
        const std::filesystem::path p(name);
        return p.is_absolute() ? p : std::filesystem::path(out_dir) / p;
      };
      const auto jp = target("json_out", ".json"), cp = target("csv_out", ".csv");
      hierlab::write_text(jp, files.json);
      hierlab::write_text(cp, files.csv);
      const auto j = hierlab::Json::parse(files.json);
      for (const auto& c : j["checks"])
        std::cout << (c["ok"].get<bool>() ? "PASS " : "FAIL ") << c["name"].get<std::string>()
                  << (c["detail"].get<std::string>().empty() ? "" : "  (" + c["detail"].get<std::string>() + ")")
                  << "\n";
      std::cout << "wrote " << jp.string() << " and " << cp.string() << "\n";
      return ok ? 0 : 1;
    } catch (const hierlab::ConfigError& e) {
      std::cerr << "config error: " << e.what() << "\n";
      return 2;
    } catch (const std::exception& e) {
      std::cerr << "error: " << e.what() << "\n";
      return 1;
    }
  }
  return 2;
}
