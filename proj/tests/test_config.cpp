#include <gtest/gtest.h>

#include <fstream>
#include <sstream>

#include "hierlab/config.hpp"

using namespace hierlab;

#ifndef HIERLAB_SOURCE_DIR
#define HIERLAB_SOURCE_DIR "."
#endif

namespace {

ConfigError parse_error(const std::string& text, const std::string& expected = "") {
  try {
    parse_config(text, "run.cfg", expected);
  } catch (const ConfigError& e) {
    return e;
  }
  ADD_FAILURE() << "no ConfigError for:\n" << text;
  return ConfigError("", 0, 0, "");
}

}  // namespace

TEST(Config, RoundTripIsLossless) {
  const std::string text =
      "# small hierarchy run\n"
      "scenario = hierarchy\n"
      "seed = 18446744073709551615\n"
      "  alpha = 0.05\n"
      "times = 0.5, 1\n"
      "atom.1.weight = 0.5\n"
      "atom.1.family = polyweight\n"
      "atom.2.weight = 0.5\n"
      "atom.2.family = gaussian\n"
      "atom.2.cx = 0,0,1\n"
      "json_out = out/h.json\n";
  const auto a = parse_config(text);
  const auto b = parse_config(a.serialize());
  EXPECT_EQ(a, b);
  EXPECT_EQ(a.serialize(), b.serialize());
  EXPECT_EQ(a.u64("seed"), 18446744073709551615ull);
  EXPECT_EQ(a.reals("times"), (std::vector<double>{0.5, 1.0}));
  EXPECT_EQ(a.atom_indices(), (std::vector<int>{1, 2}));
  EXPECT_EQ(a.raw("depth"), "4");  // schema default
  EXPECT_FALSE(a.has("depth"));
}

TEST(Config, EverySchemaDefaultValidates) {
  for (const auto& name : scenario_names()) {
    RunConfig c(name);
    for (const auto& s : scenario_keys().at(name)) {
      if (!s.fallback.empty()) {
        EXPECT_EQ(check_value(s, s.fallback), "") << name << "." << s.key;
      }
    }
    EXPECT_EQ(parse_config(c.serialize()), c);
  }
}

TEST(Config, UnknownKeyRejectedWithPosition) {
  const auto e = parse_error("scenario = decay\nratio = 8\n  colour = red\n");
  EXPECT_EQ(e.line, 3);
  EXPECT_EQ(e.column, 3);
  EXPECT_NE(std::string(e.what()).find("unknown key 'colour'"), std::string::npos);
  // Keys of another scenario are unknown too.
  EXPECT_EQ(parse_error("scenario = decay\ndepth = 3\n").line, 2);
  // Atoms only where the scenario takes them, with canonical indices.
  parse_error("scenario = decay\natom.1.weight = 1\n");
  parse_error("scenario = be\natom.01.weight = 1\n");
  parse_error("scenario = be\natom.0.weight = 1\n");
  parse_error("scenario = be\natom.1.colour = 1\n");
}

TEST(Config, MalformedValueReportsLineAndColumn) {
  const auto e = parse_error("scenario = be\n\ndepth =   four\n");
  EXPECT_EQ(e.line, 3);
  EXPECT_EQ(e.column, 11);
  const std::string msg = e.what();
  EXPECT_EQ(msg.rfind("run.cfg:3:11:", 0), 0u) << msg;
  EXPECT_NE(msg.find("expected an integer"), std::string::npos);
}

TEST(Config, TypeChecks) {
  parse_error("scenario = be\nalpha = 1e400\n");
  parse_error("scenario = be\nalpha = 0x10\n");
  parse_error("scenario = be\ntimes = 0.5,,1\n");
  parse_error("scenario = be\nb_zero = yes\n");
  parse_error("scenario = be\nseed = -1\n");
  parse_error("scenario = decay\nratio = 1/0\n");
  parse_error("scenario = decay\nratio = 0.5.1\n");
  parse_error("scenario = decay\nratio = e5\n");
  parse_error("scenario = be\nalpha =\n");
  parse_error("scenario = be\njust words\n");
  parse_error("scenario = be\n= 3\n");
}

TEST(Config, ExactRationals) {
  const auto c = parse_config("scenario = decay\nratio = 4.5\nC = 1613/2\nthreshold = 1e-12\nnorm_F = -2.5e1\n");
  using R = boost::multiprecision::cpp_rational;
  EXPECT_EQ(c.rational("ratio"), R(9, 2));
  EXPECT_EQ(c.rational("C"), R(1613, 2));
  EXPECT_EQ(c.rational("threshold"), R(1, 1000000000000ll));
  EXPECT_EQ(c.rational("norm_F"), R(-25));
}

TEST(Config, DuplicateKeyRejected) {
  const auto e = parse_error("scenario = be\ndepth = 3\ndepth = 3\n");
  EXPECT_EQ(e.line, 3);
  EXPECT_NE(std::string(e.what()).find("duplicate"), std::string::npos);
}

TEST(Config, ScenarioRequiredAndConsistent) {
  EXPECT_EQ(parse_error("depth = 3\n").line, 1);
  EXPECT_EQ(parse_error("scenario = nope\n").line, 1);
  EXPECT_EQ(parse_error("scenario = be\n", "decay").line, 1);
  EXPECT_EQ(parse_config("depth = 3\n", "<x>", "be").scenario(), "be");
  EXPECT_THROW(RunConfig("nope"), ConfigError);
  EXPECT_THROW(load_config("/nonexistent/run.cfg"), ConfigError);
}

TEST(Config, SetFromCommandLine) {
  RunConfig c("boardgame");
  c.set("mu", "2,3,1,4");
  EXPECT_EQ(c.ints("mu"), (std::vector<int>{2, 3, 1, 4}));
  EXPECT_THROW(c.set("policy", "middle"), ConfigError);
  EXPECT_THROW(c.raw("not_a_key"), PreconditionError);
}

TEST(Config, SchemaFileMatchesRenderedSchema) {
  std::ifstream f(std::string(HIERLAB_SOURCE_DIR) + "/docs/config-schema.txt");
  ASSERT_TRUE(f) << "schema file missing";
  std::stringstream ss;
  ss << f.rdbuf();
  EXPECT_EQ(ss.str(), render_schema());
  // Every key appears in the schema.
  const std::string schema = render_schema();
  for (const auto& name : scenario_names())
    for (const auto& s : scenario_keys().at(name)) EXPECT_NE(schema.find("\n" + s.key + " : "), std::string::npos);
}
