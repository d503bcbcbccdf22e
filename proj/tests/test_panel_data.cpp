#include <doctest.h>

#include <sstream>

#include "confound_em/errors.hpp"
#include "test_support.hpp"

using namespace confound_em;

namespace {

SchemaConfig schema_zx() {
  SchemaConfig s;
  s.outcome = "y";
  s.treatment = "d";
  s.z_cols = {"z1"};
  s.x_cols = {"x1", "x2"};
  return s;
}

PanelDataset parse(const std::string& text, const SchemaConfig& schema = schema_zx()) {
  std::istringstream in(text);
  return parse_panel_csv(in, schema);
}

}  // namespace

TEST_SUITE("panel_data") {
  TEST_CASE("three-row single-subject file") {
    const auto ds = parse("id,y,d,z1,x1,x2\na,1.5,1,0.3,1,2\na,2.5,0,0.3,3,4\na,-1,1,0.3,5,6\n");
    CHECK(ds.m() == 1);
    CHECK(ds.n_records() == 3);
    CHECK(ds.subjects[0].z == std::vector<double>{0.3});
    CHECK(ds.subjects[0].records[2].x == std::vector<double>{5, 6});
  }

  TEST_CASE("records grouped by id in file order") {
    const auto ds = parse("id,y,d,z1,x1,x2\nb,1,1,0,0,0\na,2,0,1,0,0\nb,3,0,0,0,0\n");
    REQUIRE(ds.m() == 2);
    CHECK(ds.subjects[0].id == "b");
    CHECK(ds.subjects[0].records.size() == 2);
    CHECK(ds.subjects[0].records[1].y == 3.0);
    CHECK(ds.subjects[1].id == "a");
  }

  TEST_CASE("non-binary treatment names the row") {
    std::string text = "id,y,d,z1,x1,x2\n";
    for (int r = 1; r <= 9; ++r) text += "s" + std::to_string(r % 3) + ",1," + (r == 7 ? "2" : "1") + ",0,0,0\n";
    try {
      parse(text);
      FAIL("expected ValidationError");
    } catch (const ValidationError& e) {
      CHECK(std::string(e.what()).find("row 7") != std::string::npos);
    }
  }

  TEST_CASE("missing column and empty file") {
    CHECK_THROWS_AS(parse("id,y,d,z1,x1\na,1,1,0,0\n"), SchemaError);
    try {
      parse("id,y,d,z1,x1\na,1,1,0,0\n");
    } catch (const SchemaError& e) {
      CHECK(std::string(e.what()).find("x2") != std::string::npos);
    }
    CHECK_THROWS_AS(parse(""), SchemaError);
  }

  TEST_CASE("z varying within a subject is an error") {
    CHECK_THROWS_AS(parse("id,y,d,z1,x1,x2\na,1,1,0.3,0,0\na,1,0,0.30000001,0,0\n"), ValidationError);
  }

  TEST_CASE("simulated data round-trips through CSV") {
    for (std::uint64_t seed : {1u, 2u, 3u}) {
      const auto ds = gen_dataset(DgpConfig::simulation_defaults(30), seed);
      std::ostringstream out;
      write_csv(ds, out);
      std::istringstream in(out.str());
      const auto back = parse_panel_csv(in, ds.schema());
      CHECK(back == ds);
    }
  }

  TEST_CASE("expand_design shapes and interaction block") {
    const auto ds = gen_dataset(DgpConfig::simulation_defaults(40), 5);
    const auto design = expand_design(ds);
    CHECK(design.q() == 6);
    CHECK(design.n_records() == ds.n_records());
    for (const auto& s : design.subjects) {
      CHECK(s.x_star.cols() == 6);
      CHECK(s.x_tilde.cols() == 12);
      CHECK((s.x_star.col(0).array() == 1.0).all());
      for (Eigen::Index j = 0; j < s.n(); ++j) {
        CHECK(s.x_tilde.row(j).head(6) == s.x_star.row(j));
        CHECK(s.x_tilde.row(j).tail(6) == s.d(j) * s.x_star.row(j));
      }
    }
    const auto again = expand_design(ds);
    CHECK(again.subjects[3].x_tilde == design.subjects[3].x_tilde);
  }

  TEST_CASE("all-untreated and all-treated subjects") {
    auto ds = parse("id,y,d,z1,x1,x2\na,1,0,1,2,3\na,2,0,1,4,5\nb,1,1,0,6,7\nb,2,1,0,8,9\n");
    const auto design = expand_design(ds);
    CHECK(design.subjects[0].x_tilde.rightCols(4).isZero());
    CHECK(design.subjects[1].x_tilde.rightCols(4) == design.subjects[1].x_star);
  }

  TEST_CASE("validate: clean, NaN outcome, no treated records") {
    auto ds = gen_dataset(DgpConfig::simulation_defaults(50), 9);
    CHECK(validate(ds).empty());

    auto bad = ds;
    bad.subjects[4].records[1].y = std::nan("");
    const auto diags = validate(bad);
    CHECK(diags.size() == 1);
    CHECK(diags[0].subject_id == bad.subjects[4].id);
    CHECK(has_errors(diags));

    auto untreated = ds;
    for (auto& s : untreated.subjects)
      for (auto& r : s.records) r.d = 0;
    const auto warnings = validate(untreated);
    CHECK_FALSE(has_errors(warnings));
    int interaction_warnings = 0;
    for (const auto& w : warnings)
      if (w.severity == Diagnostic::Severity::warning && w.reason.find("d*") != std::string::npos) ++interaction_warnings;
    CHECK(interaction_warnings == 6);
  }

  TEST_CASE("drop_covariates and resample_subjects") {
    const auto ds = gen_dataset(DgpConfig::simulation_defaults(10), 2);
    const auto smaller = drop_covariates(ds, {"z1", "x2"});
    CHECK(smaller.z_names == std::vector<std::string>{"z2"});
    CHECK(smaller.x_names == std::vector<std::string>{"x1", "x3"});
    CHECK(smaller.subjects[0].records[0].x[1] == ds.subjects[0].records[0].x[2]);
    CHECK_THROWS_AS(drop_covariates(ds, {"nope"}), ConfigError);

    const auto design = expand_design(ds);
    const auto re = resample_subjects(design, {3, 3, 0});
    REQUIRE(re.m() == 3);
    CHECK(re.subjects[0].id != re.subjects[1].id);
    CHECK(re.subjects[1].y == design.subjects[3].y);
    CHECK(re.subjects[2].x_tilde == design.subjects[0].x_tilde);
  }

  TEST_CASE("schema config round trip") {
    const SchemaConfig s = schema_zx();
    const SchemaConfig back = SchemaConfig::from_config(KeyValueConfig::parse(s.to_config().to_string()));
    CHECK(back.outcome == "y");
    CHECK(back.z_cols == s.z_cols);
    CHECK(back.x_cols == s.x_cols);
  }
}
