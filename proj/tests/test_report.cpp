#include <gtest/gtest.h>

#include "hierlab/scenarios.hpp"

using namespace hierlab;

TEST(Fmt17, RoundTripsDoubles) {
  EXPECT_EQ(fmt17(0.1), "0.10000000000000001");
  EXPECT_EQ(fmt17(1.0), "1");
  EXPECT_EQ(fmt17(-0.0), "-0");
  EXPECT_EQ(fmt17(std::nan("")), "nan");
  EXPECT_EQ(fmt17(-kInfinity), "-inf");
  Rng rng(2);
  for (int i = 0; i < 1000; ++i) {
    const double x = rng.normal() * std::pow(10.0, rng.uniform(-300, 300));
    EXPECT_EQ(std::stod(fmt17(x)), x);
  }
}

TEST(Csv, HeaderOnlyWhenEmpty) {
  EXPECT_EQ(CsvTable({"n", "bound"}).str(), "n,bound\n");
}

TEST(Csv, RowsQuotingAndWidth) {
  CsvTable t({"name", "value", "ok"});
  CsvTable::Row r;
  r << "a,b" << 0.25 << true;
  t.add(r);
  CsvTable::Row q;
  q << "say \"hi\"" << 3 << false;
  t.add(q);
  EXPECT_EQ(t.str(), "name,value,ok\n\"a,b\",0.25,true\n\"say \"\"hi\"\"\",3,false\n");
  CsvTable::Row shortrow;
  shortrow << 1;
  EXPECT_THROW(t.add(shortrow), PreconditionError);
}

TEST(Json, FixedFieldOrderAndVerdict) {
  ScenarioResult r;
  r.scenario = "decay";
  r.summary["zeta"] = 1;
  r.summary["alpha"] = 2;
  r.check("first", true);
  r.check("second", false, "why");
  const auto j = Json::parse(render_json(r, Json{{"scenario", "decay"}}, 7));
  std::vector<std::string> keys;
  for (const auto& [k, v] : j.items()) keys.push_back(k);
  EXPECT_EQ(keys, (std::vector<std::string>{"tool", "version", "scenario", "seed", "config", "zeta", "alpha", "checks",
                                            "ok"}));
  EXPECT_EQ(j["seed"], 7);
  EXPECT_EQ(j["version"], kVersion);
  EXPECT_FALSE(j["ok"].get<bool>());
  EXPECT_EQ(j["checks"][1]["detail"], "why");
}

TEST(Reports, SameSeedSameBytes) {
  RunConfig c("boardgame");
  c.set("action", "enumerate");
  c.set("k", "2");
  c.set("n", "3");
  const auto a = render_reports(c), b = render_reports(c);
  EXPECT_EQ(a.json, b.json);
  EXPECT_EQ(a.csv, b.csv);
  RunConfig d("decay");
  EXPECT_EQ(render_reports(d).csv, render_reports(d).csv);
}

TEST(Reports, ThreadCountDoesNotChangeBytes) {
  RunConfig c("kinematics");
  c.set("samples", "20000");
  c.set("seed", "99");
  const int saved = threads();
  set_threads(1);
  const auto a = render_reports(c);
  set_threads(3);
  const auto b = render_reports(c);
  set_threads(saved);
  EXPECT_EQ(a.json, b.json);
  EXPECT_EQ(a.csv, b.csv);
}

TEST(Reports, OutputPathsDoNotEnterTheSummary) {
  RunConfig a("decay"), b("decay");
  b.set("json_out", "elsewhere/x.json");
  b.set("csv_out", "elsewhere/x.csv");
  EXPECT_EQ(render_reports(a).json, render_reports(b).json);
}

TEST(Reports, DifferentSeedsSameVerdicts) {
  RunConfig c("lemmas");
  c.set("lemma", "position");
  c.set("trials", "200");
  bool ok1 = false, ok2 = false;
  c.set("seed", "1");
  const auto a = Json::parse(render_reports(c, &ok1).json);
  c.set("seed", "2");
  const auto b = Json::parse(render_reports(c, &ok2).json);
  EXPECT_TRUE(ok1);
  EXPECT_EQ(ok1, ok2);
  ASSERT_EQ(a["checks"].size(), b["checks"].size());
  for (std::size_t i = 0; i < a["checks"].size(); ++i) EXPECT_EQ(a["checks"][i]["ok"], b["checks"][i]["ok"]);
}

TEST(Reports, DecayExitVerdicts) {
  RunConfig c("decay");
  c.set("ratio", "4");
  bool ok = true;
  const auto j = Json::parse(render_reports(c, &ok).json);
  EXPECT_FALSE(ok);
  EXPECT_TRUE(j["constant_in_n"].get<bool>());
  c.set("ratio", "8");
  render_reports(c, &ok);
  EXPECT_TRUE(ok);
}
