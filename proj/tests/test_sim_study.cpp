#include <doctest.h>

#include <sstream>

#include "confound_em/errors.hpp"
#include "confound_em/sim_study.hpp"
#include "test_support.hpp"

using namespace confound_em;

TEST_SUITE("sim_study") {
  TEST_CASE("joint binary probability of the baseline covariates") {
    const DgpConfig dgp = DgpConfig::simulation_defaults();
    const double p11 = 0.15 + 0.25 * std::sqrt(0.25 * 0.21);
    CHECK(dgp.joint_z11() == doctest::Approx(p11).epsilon(1e-15));
    CHECK(p11 == doctest::Approx(0.20728).epsilon(1e-4));

    DgpConfig big = DgpConfig::simulation_defaults(250000);
    big.n_min = big.n_max = 1;
    long hits = 0, total = 0;
    for (std::uint64_t stream = 0; stream < 4; ++stream) {
      const PanelDataset ds = gen_dataset(big, 81, stream);
      for (const auto& s : ds.subjects) hits += (s.z[0] == 1.0 && s.z[1] == 1.0);
      total += static_cast<long>(ds.m());
    }
    const double phat = static_cast<double>(hits) / static_cast<double>(total);
    CHECK(std::abs(phat - p11) < 3.0 * std::sqrt(p11 * (1 - p11) / static_cast<double>(total)));
  }

  TEST_CASE("infeasible binary correlation is rejected") {
    DgpConfig dgp = DgpConfig::simulation_defaults();
    dgp.z_marginal1 = 0.9;
    dgp.z_marginal2 = 0.1;
    dgp.z_corr = 0.9;
    CHECK_THROWS_AS(dgp.validate(), ConfigError);
    dgp = DgpConfig::simulation_defaults();
    dgp.beta.resize(5);
    CHECK_THROWS_AS(dgp.validate(), ConfigError);
  }

  TEST_CASE("time-varying covariates follow an AR(1) correlation") {
    const PanelDataset ds = gen_dataset(DgpConfig::simulation_defaults(20000), 82);
    double s13 = 0, s11 = 0, s33 = 0, s12 = 0;
    long n = 0;
    for (const auto& s : ds.subjects)
      for (const auto& r : s.records) {
        s13 += r.x[0] * r.x[2];
        s12 += r.x[0] * r.x[1];
        s11 += r.x[0] * r.x[0];
        s33 += r.x[2] * r.x[2];
        ++n;
      }
    CHECK(n > 100000);
    CHECK(std::abs(s13 / std::sqrt(s11 * s33) - 0.09) < 0.015);
    CHECK(std::abs(s12 / std::sqrt(s11 * s33) - 0.3) < 0.015);
  }

  TEST_CASE("cluster sizes, treatment prevalence, shapes") {
    const DgpConfig dgp = DgpConfig::simulation_defaults(500);
    const PanelDataset ds = gen_dataset(dgp, 83);
    CHECK(ds.m() == 500);
    CHECK(ds.x_names == std::vector<std::string>{"x1", "x2", "x3"});
    double treated = 0;
    for (const auto& s : ds.subjects) {
      CHECK(s.records.size() >= 2);
      CHECK(s.records.size() <= 10);
      for (const auto& r : s.records) treated += r.d;
    }
    const double rate = treated / static_cast<double>(ds.n_records());
    CHECK(rate > 0.35);
    CHECK(rate < 0.75);
  }

  TEST_CASE("sigma_b = 0 removes the latent confounder") {
    DgpConfig dgp = DgpConfig::simulation_defaults(50);
    dgp.sigma_b = 0.0;
    const SimulatedData sim = gen_dataset_with_latent(dgp, 84);
    for (double b : sim.b) CHECK(b == 0.0);
  }

  TEST_CASE("generation is a function of seed and stream") {
    const DgpConfig dgp = DgpConfig::simulation_defaults(40);
    CHECK(gen_dataset(dgp, 85, 3) == gen_dataset(dgp, 85, 3));
    CHECK_FALSE(gen_dataset(dgp, 85, 3) == gen_dataset(dgp, 85, 4));
    CHECK_FALSE(gen_dataset(dgp, 85, 3) == gen_dataset(dgp, 86, 3));
  }

  TEST_CASE("true_ate: anchor, zero block, linearity") {
    DgpConfig dgp = DgpConfig::simulation_defaults();
    CHECK(true_ate(dgp) == doctest::Approx(6.6).epsilon(1e-15));
    const double base = true_ate(dgp);
    dgp.beta(7) *= 2.0;
    CHECK(true_ate(dgp) - base == doctest::Approx(0.5 * dgp.beta(7) / 2.0).epsilon(1e-14));
    dgp.beta.tail(6).setZero();
    CHECK(true_ate(dgp) == 0.0);
  }

  TEST_CASE("config round trip") {
    DgpConfig dgp = DgpConfig::simulation_defaults(77);
    dgp.xi = -0.25;
    const DgpConfig back = DgpConfig::from_config(dgp.to_config());
    CHECK(back.m == 77);
    CHECK(back.xi == -0.25);
    CHECK(back.beta == dgp.beta);
    CHECK(back.eta == dgp.eta);
    CHECK(replication_row_names(dgp).size() == 23);
    CHECK(replication_truth(dgp)(22) == doctest::Approx(6.6));
  }

  TEST_CASE("tabulate: single replication, rmse identity, failure accounting") {
    const DgpConfig dgp = DgpConfig::simulation_defaults();
    const Eigen::VectorXd truth = replication_truth(dgp);
    RngStream rng(87, 0);
    std::vector<ReplicationOutcome> outs;
    for (int r = 0; r < 30; ++r) {
      ReplicationOutcome o;
      o.converged = r % 7 != 3;
      o.estimate = truth;
      for (Eigen::Index k = 0; k < truth.size(); ++k) o.estimate(k) += 0.2 * rng.normal() + 0.05;
      outs.push_back(o);
    }
    const ReplicationTable t = tabulate(dgp, outs);
    CHECK(t.R == 30);
    CHECK(t.n_converged == 26);
    CHECK(t.convergence_rate == doctest::Approx(26.0 / 30.0));
    const double R = t.n_converged;
    for (const auto& row : t.rows)
      CHECK(std::abs(row.rmse * row.rmse - (row.bias * row.bias + row.se * row.se * (R - 1) / R)) < 1e-10);

    const ReplicationTable one = tabulate(dgp, {outs[0]});
    for (std::size_t k = 0; k < one.rows.size(); ++k) {
      CHECK(one.rows[k].se == 0.0);
      CHECK(one.rows[k].mean == outs[0].estimate(static_cast<Eigen::Index>(k)));
    }

    std::ostringstream csv;
    write_table_csv(t, csv);
    CHECK(csv.str().rfind("param,", 0) == 0);
  }

  TEST_CASE("run_replications is thread-count invariant and R = 1 works") {
    const DgpConfig dgp = DgpConfig::simulation_defaults(40);
    FitConfig cfg;
    const ReplicationTable a = run_replications(dgp, 4, 88, cfg, 1);
    const ReplicationTable b = run_replications(dgp, 4, 88, cfg, 3);
    REQUIRE(a.rows.size() == b.rows.size());
    for (std::size_t k = 0; k < a.rows.size(); ++k) {
      CHECK(a.rows[k].mean == b.rows[k].mean);
      CHECK(a.rows[k].rmse == b.rows[k].rmse);
    }
    const ReplicationTable one = run_replications(dgp, 1, 88, cfg, 1);
    const ReplicationOutcome direct = run_one_replication(dgp, 88, 0, cfg);
    REQUIRE(direct.converged);
    CHECK(one.rows[0].mean == direct.estimate(0));
    CHECK(one.rows[0].se == 0.0);
  }
}
