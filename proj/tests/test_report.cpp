#include "pals/errors.hpp"
#include "pals/report.hpp"

#include <doctest.h>

#include <sstream>

using namespace pals;

namespace {

std::string text(const Report& r) {
  std::ostringstream out;
  write_report(r, out);
  return out.str();
}

Report parse(const std::string& s) {
  std::istringstream in(s);
  return read_report(in);
}

}  // namespace

TEST_CASE("report round trip") {
  Report r;
  r.comment("command=fit");
  r.set("fit.rate_2", 7.04);
  r.set("fit.converged", true);
  r.set("fit.n_iterations", std::size_t{12});
  r.set("test.decision", "fail to reject");
  auto& t = r.table("power", {"n_events", "power"});
  t.rows.push_back({"1e+06", "0.5"});
  t.rows.push_back({"2e+06", "0.75"});
  const std::string s = text(r);
  CHECK(s.rfind("# pals-report v1\n# command=fit\nfit.rate_2 = 7.04\n", 0) == 0);
  const auto back = parse(s);
  CHECK(text(back) == s);
  CHECK(back.number("fit.rate_2") == 7.04);
  CHECK(*back.get("test.decision") == "fail to reject");
  REQUIRE(back.find_table("power"));
  CHECK(back.find_table("power")->rows.size() == 2);
  CHECK(back.find_table("power")->columns == std::vector<std::string>{"n_events", "power"});
}

TEST_CASE("setting a key twice replaces it in place") {
  Report r;
  r.set("a", 1.0);
  r.set("b", 2.0);
  r.set("a", 3.0);
  REQUIRE(r.entries().size() == 2);
  CHECK(r.entries()[0].second == "3");
  CHECK_THROWS_AS(r.set("bad key", 1.0), DomainError);
  CHECK_THROWS_AS(r.set("k", "two\nlines"), DomainError);
  r.table("power", {});
  CHECK_THROWS_AS(r.table("power", {}), DomainError);
}

TEST_CASE("malformed reports") {
  CHECK_THROWS_AS(parse("a = 1\n"), FormatError);
  CHECK_THROWS_AS(parse("# pals-report v1\nnot a pair\n"), FormatError);
  CHECK_THROWS_AS(parse("# pals-report v1\na = 1\na = 2\n"), FormatError);
  CHECK_THROWS_AS(parse("# pals-report v1\nbegin_table t\n# x y\n1 2\n"), FormatError);
  CHECK_THROWS_AS(parse("# pals-report v1\nbegin_table t\n# x y\n1 2 3\nend_table\n"), FormatError);
  const auto r = parse("# pals-report v1\na = x\n");
  CHECK_THROWS_AS(r.number("a"), FormatError);
  CHECK_THROWS_AS(r.number("b"), FormatError);
  CHECK_THROWS_AS(read_report(std::filesystem::path("/nonexistent/r.txt")), IoError);
}

TEST_CASE("fit, test and power sections") {
  FitResult f;
  f.model = default_neon_model();
  f.params = pack_params(f.model);
  f.errors.assign(f.params.size(), 0.01);
  f.free.assign(f.params.size(), true);
  f.at_bound.assign(f.params.size(), false);
  f.converged = true;
  f.deviance = 4100.5;
  Report r;
  add_fit(r, f);
  CHECK(r.number("fit.rate_2") == 7.039979);
  CHECK(r.number("fit.rate_2.error") == 0.01);
  CHECK(*r.get("fit.converged") == "true");
  CHECK(r.number("fit.lifetime_ns_2") == doctest::Approx(1000.0 / 7.039979));

  Histogram h;
  h.counts.assign(4096, 0);
  auto spec = make_fit_spec(f.model);
  spec.first_channel = 10;
  spec.last_channel = 20;
  add_residuals(r, h, f, spec);
  CHECK(r.find_table("residuals")->rows.size() == 10);

  TestResult t;
  t.statistic = 4.0;
  t.p_value = 0.0455;
  t.reject = true;
  add_test(r, t);
  CHECK(*r.get("test.decision") == "reject");

  PowerCurve c;
  c.alpha = 0.05;
  PowerPoint p;
  p.n_events = 1e5;
  p.replicas = 10;
  p.rejections = 6;
  p.power = 0.6;
  c.points.push_back(p);
  add_power(r, c, 0.5);
  CHECK(r.number("power.min_n_events") == 1e5);
  CHECK(r.number("power.alpha_sigma") == doctest::Approx(1.959964).epsilon(1e-6));
  CHECK(parse(text(r)).find_table("power")->rows.size() == 1);
}
