// Acceptance runner: one PASS/FAIL line per criterion.
//   acceptance                  all criteria
//   acceptance --criterion N    just one
// Exit status 0 iff every selected criterion passes.
#include <CLI11.hpp>

#include <chrono>
#include <cstdio>
#include <functional>
#include <iostream>
#include <sstream>

#include "hierlab/scenarios.hpp"

using namespace hierlab;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

std::string fmt(double x, int prec = 3) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.*g", prec, x);
  return buf;
}

// Failing checks of a scenario run, joined.
std::string failed_checks(const ScenarioResult& r) {
  std::string out;
  for (const auto& c : r.checks)
    if (!c.ok) out += (out.empty() ? "" : "; ") + c.name + (c.detail.empty() ? "" : " [" + c.detail + "]");
  return out;
}

RunConfig config(const std::string& scenario, const std::vector<std::pair<std::string, std::string>>& kv) {
  RunConfig c(scenario);
  for (const auto& [k, v] : kv) c.set(k, v);
  return c;
}

const CrossSectionModel& hard_sphere() {
  static const CrossSectionModel m(3, 1.0, AngularKernel::constant(1.0 / (4.0 * kPi)));
  return m;
}

PhaseState random_state(Rng& rng, int k) {
  PhaseState s(k, 3);
  for (int j = 0; j < k; ++j) {
    s.x[j] = rng.normal_vec(3) * 0.5;
    s.v[j] = rng.normal_vec(3) * 0.7;
  }
  return s;
}

// Statistical contract of the operator identities: 3 sigma on at least 95%
// of trials, no 5 sigma failure.
struct Tally {
  int trials = 0, pass3 = 0, fail5 = 0;
  double max_z = 0.0;
  void add(const IdentityReport& r) {
    ++trials;
    pass3 += r.pass3;
    fail5 += !r.pass5;
    max_z = std::max(max_z, r.max_z);
  }
  bool ok() const { return trials > 0 && pass3 >= 0.95 * trials && fail5 == 0; }
  std::string str() const {
    return std::to_string(pass3) + "/" + std::to_string(trials) + " at 3 sigma, " + std::to_string(fail5) +
           " beyond 5 sigma, max z " + fmt(max_z);
  }
};

constexpr std::size_t kIdentitySamples = 100000;

// ---- criteria ---------------------------------------------------------------

Outcome c1_kinematics() {
  const auto r = run_kinematics(config("kinematics", {{"dims", "3,4"}, {"samples", "1000000"}, {"tol", "1e-10"}}));
  double worst = 0.0;
  for (const auto& d : r.summary["max_relative_defects"])
    for (const auto& [k, v] : d.items())
      if (v.is_number_float()) worst = std::max(worst, v.get<double>());
  return {r.ok(), "max relative defect " + fmt(worst) + (r.ok() ? "" : "; " + failed_checks(r))};
}

Outcome c2_position() {
  const auto r = run_lemmas(config("lemmas", {{"lemma", "position"}, {"trials", "1000"}}));
  const auto& c = r.summary["counts"]["position"];
  return {r.ok(), std::to_string(c["violations"].get<int>()) + " violations in " +
                      std::to_string(c["trials"].get<int>()) + "; canonical lhs " + fmt(c["canonical_lhs"], 12) +
                      " vs pi/4 " + fmt(kPi / 4.0, 12) + (r.ok() ? "" : "; " + failed_checks(r))};
}

Outcome c3_convolution() {
  const auto a = run_lemmas(config("lemmas", {{"lemma", "conv-lq"}}));
  const auto b = run_lemmas(config("lemmas", {{"lemma", "conv-ltilde"}}));
  const bool ok = a.ok() && b.ok();
  return {ok, "violations " + std::to_string(a.summary["violations"].get<int>() + b.summary["violations"].get<int>()) +
                  " over both operators" + (ok ? "" : "; " + failed_checks(a) + " " + failed_checks(b))};
}

Outcome c4_uq() {
  const auto r = run_lemmas(config("lemmas", {{"lemma", "uq"}, {"uq_doublings", "3"}}));
  double worst = 1.0;
  for (const auto& row : r.detail.rows())
    if (row[2] == "doubling") worst = std::max(worst, std::stod(row[14]));
  return {r.ok(), "worst doubling ratio " + fmt(worst, 4) + " over 3 cases" + (r.ok() ? "" : "; " + failed_checks(r))};
}

Outcome c5_boardgame() {
  std::string bad;
  std::string counts;
  for (int k = 1; k <= 2; ++k)
    for (int n = 1; n <= 5; ++n) {
      const auto r = run_boardgame(
          config("boardgame", {{"action", "enumerate"}, {"k", std::to_string(k)}, {"n", std::to_string(n)}}));
      if (!r.ok()) {
        bad += (bad.empty() ? "" : ", ") + std::string("k=") + std::to_string(k) + " n=" + std::to_string(n) + ": " +
               failed_checks(r) + " (" + std::to_string(r.summary["echelon_count"].get<std::size_t>()) + " > " +
               r.summary["bound_2_pow"].get<std::string>() + ")";
      }
    }
  const auto e2 = enumerate_echelon(1, 2), e3 = enumerate_echelon(1, 3);
  const bool oracle = e2.echelon.size() == 2 && e3.echelon.size() == 5;
  counts = "k=1 counts " + std::to_string(e2.echelon.size()) + ", " + std::to_string(e3.echelon.size());
  return {bad.empty() && oracle, counts + (bad.empty() ? "; all partitions, move bounds and 2^(k+n) bounds hold"
                                                       : "; failing: " + bad)};
}

Outcome c6_identities() {
  Tally sc, tt;
  for (int i = 0; i < 50; ++i) {
    Rng rng(6, 0x7363, static_cast<std::uint64_t>(i));
    const auto f = densities::ProductGaussian::scrambled(4, 3, substream_key(6, 0x6673, i)).evaluator();
    // Even trials: target outside the swapped pair; odd: inside.
    const int target = i % 2 == 0 ? 3 : 1 + (i / 2) % 2;
    sc.add(check_sc_commutation(4, 1, target, f, {random_state(rng, 3)}, hard_sphere(),
                                QuadSpec::mc(kIdentitySamples, substream_key(6, 0x7173, i))));
  }
  for (int i = 0; i < 50; ++i) {
    Rng rng(6, 0x7474, static_cast<std::uint64_t>(i));
    const auto f = densities::free_flow(densities::ProductGaussian::scrambled(4, 3, substream_key(6, 0x6674, i)).evaluator());
    std::vector<double> ts(4);
    for (auto& x : ts) x = rng.uniform(0.0, 1.0);
    std::sort(ts.begin(), ts.end(), std::greater<>());
    tt.add(check_three_ts(3, ts[0], ts[1], ts[2], ts[3], 2, 1, f, {random_state(rng, 2)}, hard_sphere(),
                          QuadSpec::mc(kIdentitySamples, substream_key(6, 0x7174, i))));
  }
  return {sc.ok() && tt.ok(), "S/C commutation " + sc.str() + "; three T's " + tt.str()};
}

Outcome c7_invariance() {
  // k = 1, n = 2 has no acceptable move (mu(2) = 1 is forced); k = 2 is the
  // smallest case with one.
  std::vector<std::pair<GameState, int>> moves;
  for_each_map(2, 2, [&](const CollisionMap& m) {
    const GameState s(m);
    if (move_acceptable(s, 3)) moves.emplace_back(s, 3);
  });
  int k1 = 0;
  for_each_map(1, 2, [&](const CollisionMap& m) { k1 += move_acceptable(GameState(m), 2); });
  Tally t;
  for (int i = 0; i < 20; ++i) {
    Rng rng(7, 0x696e76, static_cast<std::uint64_t>(i));
    const auto& [s, j] = moves[static_cast<std::size_t>(rng.index(static_cast<int>(moves.size())))];
    const auto f = densities::free_flow(
        densities::ProductGaussian::symmetric(4, 3, rng.uniform(0.15, 0.4), rng.uniform(0.7, 1.3)).evaluator());
    t.add(check_invariance(s, acceptable_move(s, j), f, rng.uniform(0.5, 1.5), hard_sphere(),
                           QuadSpec::mc(kIdentitySamples, substream_key(7, 0x7173, i)), {random_state(rng, 2)}));
  }
  return {t.ok() && !moves.empty(), "k=2 n=2 (" + std::to_string(moves.size()) + " movable states; k=1 n=2 has " +
                                        std::to_string(k1) + "): " + t.str()};
}

Outcome c8_duhamel() {
  int within = 0;
  double max_z = 0.0;
  for (int i = 0; i < 20; ++i) {
    Rng rng(8, 0x6479, static_cast<std::uint64_t>(i));
    const CollisionMap mu(1, {1, 1 + rng.index(2)});
    const auto f = densities::free_flow(densities::ProductGaussian::scrambled(3, 3, substream_key(8, 0x66, i)).evaluator());
    double t1 = rng.uniform(0.0, 1.0), t2 = rng.uniform(0.0, 1.0);
    if (t1 < t2) std::swap(t1, t2);
    const std::vector<PhaseState> pts{random_state(rng, 1)};
    const auto flat = evaluate_duhamel(mu, {t1, t2}, f, hard_sphere(), QuadSpec::mc(1 << 16, substream_key(8, 1, i)), pts);
    const auto nest = evaluate_duhamel(mu, {t1, t2}, f, hard_sphere(), QuadSpec::mc(1, substream_key(8, 2, i)), pts,
                                       DuhamelMode::nested, {1 << 12, 16});
    const double se = std::hypot(flat[0].stderr_, nest[0].stderr_);
    const double z = std::abs(flat[0].value - nest[0].value) / se;
    max_z = std::max(max_z, z);
    within += z <= 3.0;
  }
  return {within == 20, std::to_string(within) + "/20 within 3 sigma, max z " + fmt(max_z)};
}

const std::vector<std::pair<std::string, std::string>> kPoly = {
    {"atom.1.family", "polyweight"}, {"atom.1.alpha", "0.05"}, {"atom.1.weight", "1"}};

Outcome c9_be() {
  auto with = [](std::vector<std::pair<std::string, std::string>> kv) {
    kv.insert(kv.end(), kPoly.begin(), kPoly.end());
    return kv;
  };
  const auto free = run_be(config("be", with({{"b_zero", "true"}, {"residual_points", "4"}})));
  const auto hard = run_be(config("be", with({})));
  const auto maxw = run_be(config("be", with({{"gamma", "0"}})));
  const double res0 = free.summary["residual"]["value"].get<double>();
  const auto& ratios = hard.summary["picard"]["ratios"];
  double worst = 0.0;
  for (const auto& x : ratios) worst = std::max(worst, x.get<double>());
  const auto& m1 = hard.summary["conservation"]["mass"];
  const auto& m0 = maxw.summary["conservation"]["mass"];
  const bool ok = free.ok() && hard.ok() && maxw.ok() && ratios.size() == 4 && !m0.is_null() && !m1.is_null();
  std::string d = "free-transport residual " + fmt(res0) + "; C " + fmt(hard.summary["constants"]["C"], 6) +
                  ", max ratio " + fmt(worst) + "; mass defect/stderr gamma=1 " +
                  fmt(m1["defect"][0].get<double>() / m1["stderr"][0].get<double>()) + ", gamma=0 " +
                  fmt(m0["defect"][0].get<double>() / m0["stderr"][0].get<double>());
  if (!ok) d += "; " + failed_checks(free) + " " + failed_checks(hard) + " " + failed_checks(maxw);
  return {ok, d};
}

Outcome c10_hierarchy() {
  auto single = kPoly;
  single.push_back({"K_max", "4"});
  auto pair = single;
  pair[2].second = "0.5";
  pair.insert(pair.end(), {{"atom.2.family", "polyweight"}, {"atom.2.alpha", "0.06"}, {"atom.2.weight", "0.5"}});
  const auto a = run_hierarchy(config("hierarchy", single));
  const auto b = run_hierarchy(config("hierarchy", pair));
  const bool tens = a.summary["tensorized"].get<bool>();
  bool named = false;
  for (const auto& c : a.checks) named = named || c.name.rfind("tensorized", 0) == 0;
  const bool ok = a.ok() && b.ok() && tens && named && a.summary["residuals"].size() == 2 &&
                  b.summary["residuals"].size() == 2;
  std::string d = "single atom: norm " + fmt(a.summary["transported_norm"]) + " vs data " +
                  fmt(a.summary["data_norm"]) + "; two atoms: norm " + fmt(b.summary["transported_norm"]) +
                  "; residuals k=1,2 within bound";
  if (!ok) d += "; " + failed_checks(a) + " " + failed_checks(b);
  return {ok, d};
}

Outcome c11_decay() {
  const Rational C(1613), F(1), thr(Rational(1, 1000000000000ll));
  std::string d, bad;
  for (const Rational& ratio : {Rational(9, 2), Rational(6), Rational(8), Rational(16)}) {
    const auto r = decay_report_exact(1, 60, ratio, C, F, thr);
    const bool ok = r.strictly_decreasing && r.first_below >= 0 && r.first_below <= 60;
    d += "ratio " + ratio.str() + ": " +
         (r.first_below >= 0 ? "below 1e-12 at n=" + std::to_string(r.first_below)
                             : "bound(60) = " + fmt(r.bounds.back().convert_to<double>())) +
         "; ";
    if (!ok) bad += (bad.empty() ? "" : ", ") + ratio.str();
  }
  const auto flat = decay_report_exact(1, 60, Rational(4), C, F, thr);
  d += "ratio 4 constant: " + std::string(flat.constant ? "yes" : "no");
  if (!bad.empty()) d += "; FAILS at ratio " + bad + " (k=1, C=1613, ||F||=1)";
  return {bad.empty() && flat.constant && !flat.strictly_decreasing, d};
}

Outcome c12_chebyshev() {
  WeightParams wp;
  wp.p = 4.0;
  wp.q = 5.0;
  wp.alpha = 1.0;
  wp.beta = 1.0;
  wp.mu = std::log(kPi * kPi * 4.0 * kPi / 3.0);  // M is a probability density
  const PhaseBall B{Vec(3), Vec(3), 1.0};
  auto scaled = [&](double c) {
    return DensityEvaluator(
        1, [wp, c](double, const PhaseState& s) { return c * reference_density(wp, s.x[0], s.v[0]); }, true);
  };
  auto mixture = [&](std::vector<std::pair<double, double>> atoms, int kmax) {
    std::vector<Atom> as;
    for (const auto& [w, c] : atoms) as.push_back({w, scaled(c)});
    const auto pi = MixingMeasure::unchecked(as);
    std::vector<DensityEvaluator> G;
    for (int k = 1; k <= kmax; ++k) G.push_back(mixture_marginal(pi, k));
    return G;
  };
  const auto planted = mixture({{0.5, 1.2}, {0.5, 0.5}}, 8);
  const auto pr = chebyshev_support_diagnostic(planted, B, wp, 1.0, 1 << 15, 12);
  const bool flagged = pr.verdict == SupportVerdict::violating && std::abs(pr.ratio_fit - 1.2) <= 0.12;
  int false_flags = 0;
  for (std::uint64_t s = 1; s <= 20; ++s) {
    for (const auto& G : {mixture({{0.5, 0.9}, {0.5, 0.6}}, 8), mixture({{1.0, 1.0}}, 8)}) {
      const auto r = chebyshev_support_diagnostic(G, B, wp, 1.0, 1 << 15, substream_key(12, s));
      false_flags += r.verdict == SupportVerdict::violating;
    }
  }
  return {flagged && false_flags == 0, "planted 1.2 excess: fit " + fmt(pr.ratio_fit, 4) + " +- " +
                                           fmt(pr.ratio_se, 2) + (flagged ? ", VIOLATING" : ", not flagged") + "; " +
                                           std::to_string(false_flags) + " false flags in 40 conforming runs"};
}

Outcome c13_determinism() {
  const std::vector<RunConfig> cfgs{
      config("kinematics", {{"samples", "50000"}, {"seed", "5"}}),
      config("lemmas", {{"trials", "40"}, {"uq_samples", "4096"}, {"uq_doublings", "1"}, {"seed", "5"}}),
      config("boardgame", {{"action", "verify-invariance"}, {"k", "2"}, {"n", "2"}, {"samples", "8192"}}),
      config("be", {{"atom.1.family", "polyweight"}, {"atom.1.alpha", "0.05"}, {"atom.1.weight", "1"},
                    {"uq", "94.25"}, {"depth", "2"}, {"replicas", "8"}, {"points", "8"}, {"conservation_samples", "4096"}}),
      config("hierarchy", {{"atom.1.family", "polyweight"}, {"atom.1.alpha", "0.05"}, {"atom.1.weight", "0.5"},
                           {"atom.2.family", "gaussian"}, {"atom.2.sx", "40"}, {"atom.2.weight", "0.5"},
                           {"uq", "94.25"}, {"depth", "2"}, {"replicas", "8"}, {"points", "8"},
                           {"admissibility_samples", "4096"}, {"conservation_samples", "4096"}}),
      config("decay", {}),
  };
  const int saved = threads();
  std::string diff;
  for (const auto& c : cfgs) {
    set_threads(1);
    const auto a = render_reports(c);
    set_threads(4);
    const auto b = render_reports(c);
    if (a.json != b.json || a.csv != b.csv) diff += (diff.empty() ? "" : ", ") + c.scenario();
  }
  set_threads(saved);
  return {diff.empty(), diff.empty() ? "6 scenarios byte-identical at 1 and 4 threads" : "differs: " + diff};
}

struct Criterion {
  int id;
  const char* name;
  double budget_s;
  std::function<Outcome()> run;
};

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"hierlab acceptance criteria"};
  int only = 0;
  app.add_option("--criterion", only, "run a single criterion (1-13)")->check(CLI::Range(1, 13));
  CLI11_PARSE(app, argc, argv);

  const std::vector<Criterion> all{
      {1, "kinematics invariants", 10, c1_kinematics},
      {2, "position-weight lemma", 30, c2_position},
      {3, "convolution lemmas", 120, c3_convolution},
      {4, "U_q finiteness", 300, c4_uq},
      {5, "board-game combinatorics", 10, c5_boardgame},
      {6, "operator identities", 600, c6_identities},
      {7, "acceptable-move invariance", 600, c7_invariance},
      {8, "Duhamel two-estimator oracle", 300, c8_duhamel},
      {9, "BE solver", 900, c9_be},
      {10, "hierarchy construction", 1200, c10_hierarchy},
      {11, "uniqueness decay", 1, c11_decay},
      {12, "Chebyshev diagnostic", 300, c12_chebyshev},
      {13, "determinism", 1e9, c13_determinism},
  };
  bool all_ok = true;
  for (const auto& c : all) {
    if (only && c.id != only) continue;
    const auto t0 = std::chrono::steady_clock::now();
    Outcome o;
    try {
      o = c.run();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    const bool in_time = secs < c.budget_s;
    const bool ok = o.pass && in_time;
    all_ok = all_ok && ok;
    std::cout << (ok ? "PASS" : "FAIL") << "  #" << c.id << " " << c.name << ": " << o.detail << " ("
              << fmt(secs, 3) << " s" << (in_time ? "" : ", over the " + fmt(c.budget_s) + " s budget") << ")"
              << std::endl;
  }
  return all_ok ? 0 : 1;
}
