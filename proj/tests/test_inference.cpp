#include <doctest.h>

#include <algorithm>
#include <set>

#include "confound_em/errors.hpp"
#include "confound_em/inference.hpp"
#include "confound_em/init_strategy.hpp"
#include "test_support.hpp"

using namespace confound_em;

namespace {

BootstrapResult synthetic_boot(const Theta& point, const std::vector<std::string>& names, int R,
                               std::uint64_t seed, double scale = 0.1) {
  BootstrapResult boot;
  boot.B = R;
  boot.seed = seed;
  boot.point = point;
  boot.covariate_names = names;
  RngStream rng(seed, 0);
  for (int k = 0; k < R; ++k) {
    BootstrapReplicate rep;
    rep.index = k;
    rep.theta = point;
    for (Eigen::Index c = 0; c < point.eta.size(); ++c) rep.theta.eta(c) += scale * rng.normal();
    rep.theta.xi += scale * rng.normal();
    for (Eigen::Index c = 0; c < point.beta.size(); ++c) rep.theta.beta(c) += scale * rng.normal();
    rep.ate = rng.normal();
    boot.replicates.push_back(rep);
  }
  return boot;
}

double ols_rss(const ExpandedDesign& design, Eigen::VectorXd& coef) {
  Eigen::MatrixXd X(static_cast<Eigen::Index>(design.n_records()), 2 * design.q());
  Eigen::VectorXd y(X.rows());
  Eigen::Index row = 0;
  for (const auto& s : design.subjects) {
    X.middleRows(row, s.n()) = s.x_tilde;
    y.segment(row, s.n()) = s.y;
    row += s.n();
  }
  coef = X.colPivHouseholderQr().solve(y);
  return (y - X * coef).squaredNorm();
}

}  // namespace

TEST_SUITE("inference") {
  TEST_CASE("bootstrap indices are per-replicate streams") {
    const auto a = bootstrap_indices(50, 9, 3);
    CHECK(a == bootstrap_indices(50, 9, 3));
    CHECK(a != bootstrap_indices(50, 9, 4));
    CHECK(a != bootstrap_indices(50, 10, 3));
    CHECK(a.size() == 50);
    for (auto i : a) CHECK(i < 50);
    CHECK(std::set<std::size_t>(a.begin(), a.end()).size() < 50);
  }

  TEST_CASE("cluster bootstrap is deterministic and thread-count invariant") {
    const ExpandedDesign design = testing::sim_design(DgpConfig::simulation_defaults(40), 91);
    BootstrapConfig cfg;
    cfg.B = 6;
    cfg.seed = 5;
    cfg.threads = 1;
    const BootstrapResult a = cluster_bootstrap(design, cfg);
    cfg.threads = 3;
    const BootstrapResult b = cluster_bootstrap(design, cfg);
    CHECK(a.n_failed == b.n_failed);
    REQUIRE(a.replicates.size() == b.replicates.size());
    CHECK(static_cast<int>(a.replicates.size()) + a.n_failed == 6);
    for (std::size_t k = 0; k < a.replicates.size(); ++k) {
      CHECK(a.replicates[k].index == b.replicates[k].index);
      CHECK(a.replicates[k].theta.flatten() == b.replicates[k].theta.flatten());
      CHECK(a.replicates[k].ate == b.replicates[k].ate);
    }
    CHECK(a.point.flatten() == b.point.flatten());
    cfg.B = 0;
    CHECK_THROWS_AS(cluster_bootstrap(design, cfg), ConfigError);
  }

  TEST_CASE("summarize: constant replicates, symmetric replicates, p floor") {
    const DgpConfig dgp = DgpConfig::simulation_defaults();
    const Theta point = testing::truth_theta(dgp);
    const std::vector<std::string> names = {"intercept", "z1", "z2", "x1", "x2", "x3"};
    BootstrapResult boot = synthetic_boot(point, names, 40, 92, 0.0);
    for (auto& r : boot.replicates) r.ate = 6.6;
    boot.point_ate = 6.6;
    const auto rows = summarize(boot);
    CHECK(rows.size() == static_cast<std::size_t>(point.flatten().size()) + 1);
    CHECK(rows.back().name == "ATE");
    for (const auto& r : rows) {
      CHECK(r.se < 1e-12);
      CHECK(r.ci_lo == r.estimate);
      CHECK(r.ci_hi == r.estimate);
    }
    // beta[intercept] = 2 > 0 in every replicate: p sits at the floor.
    CHECK(rows[0].p == doctest::Approx(2.0 / 41.0));

    BootstrapResult sym = synthetic_boot(point, names, 40, 93, 0.0);
    for (int k = 0; k < 40; ++k) sym.replicates[static_cast<std::size_t>(k)].ate = (k < 20 ? -1.0 : 1.0) * (k % 20 + 1);
    const auto srows = summarize(sym);
    CHECK(srows.back().boot_mean == doctest::Approx(0.0).epsilon(1e-15));
    CHECK(srows.back().p == doctest::Approx(1.0));
    double ss = 0.0;
    for (const auto& r : sym.replicates) ss += r.ate * r.ate;
    CHECK(srows.back().se == doctest::Approx(std::sqrt(ss / 39.0)).epsilon(1e-12));

    BootstrapResult small = synthetic_boot(point, names, 10, 94);
    CHECK_THROWS_AS(summarize(small), UnstableError);
  }

  TEST_CASE("Wald group test: one-dimensional reduction, df, permutation invariance") {
    const Theta point = testing::truth_theta(DgpConfig::simulation_defaults());
    const std::vector<std::string> names = {"intercept", "z1", "z2", "x1", "x2", "x3"};
    const BootstrapResult boot = synthetic_boot(point, names, 200, 95);

    const TestReport one = wald_group_test(boot, {"z1"});
    double mean = 0.0, ss = 0.0;
    for (const auto& r : boot.replicates) mean += r.theta.eta(1);
    mean /= 200.0;
    for (const auto& r : boot.replicates) ss += (r.theta.eta(1) - mean) * (r.theta.eta(1) - mean);
    const double var = ss / 199.0;
    CHECK(one.df == 1);
    CHECK(one.statistic == doctest::Approx(point.eta(1) * point.eta(1) / var).epsilon(1e-10));
    CHECK(one.p_value == doctest::Approx(std::erfc(std::sqrt(one.statistic / 2.0))).epsilon(1e-10));

    const TestReport a = wald_group_test(boot, {"z1", "z2", "x1", "x2"}, "Individual");
    const TestReport b = wald_group_test(boot, {"x2", "eta[x1]", "z2", "z1"});
    CHECK(a.df == 4);
    CHECK(a.statistic == doctest::Approx(b.statistic).epsilon(1e-10));
    CHECK(wald_group_test(boot, {"x3"}).df == 1);
    CHECK(wald_group_test(boot, {"xi"}).names[0] == "xi");
    CHECK_THROWS_AS(wald_group_test(boot, {"age"}), ConfigError);
    CHECK_THROWS_AS(wald_group_test(boot, {"z1", "eta[z1]"}), ConfigError);

    BootstrapResult collinear = synthetic_boot(point, names, 50, 96);
    for (auto& r : collinear.replicates) r.theta.eta(2) = 2.0 * r.theta.eta(1);
    CHECK_THROWS_AS(wald_group_test(collinear, {"z1", "z2"}), IllConditionedError);
  }

  TEST_CASE("chi-square tail") {
    CHECK(chi2_upper_tail(0.0, 2) == 1.0);
    CHECK(chi2_upper_tail(2.0, 2) == doctest::Approx(std::exp(-1.0)).epsilon(1e-14));
    CHECK(chi2_upper_tail(3.841458820694124, 1) == doctest::Approx(0.05).epsilon(1e-10));
  }

  TEST_CASE("reduced fit: least squares and logistic oracles, record-order invariance") {
    const ExpandedDesign design = testing::sim_design(DgpConfig::simulation_defaults(120), 97);
    const FitResult red = fit_reduced(design);
    Eigen::VectorXd coef;
    const double rss = ols_rss(design, coef);
    CHECK((red.theta.beta - coef).cwiseAbs().maxCoeff() < 1e-8);
    CHECK(red.theta.sigma == doctest::Approx(std::sqrt(rss / static_cast<double>(design.n_records()))).epsilon(1e-10));
    Eigen::MatrixXd X;
    Eigen::VectorXd d;
    testing::stack_ps(design, X, d);
    CHECK((red.theta.eta - testing::logistic_oracle(X, d)).cwiseAbs().maxCoeff() < 1e-8);
    CHECK(red.theta.sigma_b == 0.0);
    CHECK(red.theta.omega == 0.0);
    CHECK(red.theta.xi == 0.0);

    ExpandedDesign shuffled = design;
    std::reverse(shuffled.subjects.begin(), shuffled.subjects.end());
    const FitResult red2 = fit_reduced(shuffled);
    CHECK((red2.theta.beta - red.theta.beta).cwiseAbs().maxCoeff() < 1e-8);
    CHECK((red2.theta.eta - red.theta.eta).cwiseAbs().maxCoeff() < 1e-8);
  }

  TEST_CASE("outcome marginal log-likelihood matches the dense Gaussian") {
    RngStream rng(98, 0);
    ExpandedDesign design;
    design.covariate_names = {"intercept", "c1", "c2", "c3"};
    for (int i = 0; i < 8; ++i) design.subjects.push_back(testing::random_subject(rng, 3 + i % 4, 4));
    const Theta th = testing::random_theta(rng, 4);
    double dense = 0.0;
    for (const auto& s : design.subjects) dense += testing::gaussian_oracle(s, th).log_marginal_y;
    CHECK(outcome_marginal_loglik(design, th) == doctest::Approx(dense).epsilon(1e-12));
  }

  TEST_CASE("LRT bookkeeping and a strong signal") {
    const ExpandedDesign design = testing::sim_design(DgpConfig::simulation_defaults(100), 99);
    const LrtReport lrt = lrt_sigma_b(design, FitConfig{});
    CHECK(lrt.df == 2);
    CHECK(lrt.params_full - lrt.params_reduced == 2);
    CHECK(lrt.params_reduced == 13);
    CHECK(lrt.statistic > 0.0);
    CHECK(lrt.p_value < 1e-6);
    CHECK(lrt.statistic == doctest::Approx(2 * (lrt.loglik_full - lrt.loglik_reduced)));
    CHECK_FALSE(lrt.notes.empty());
  }

  TEST_CASE("LRT statistic stays small without a latent confounder") {
    DgpConfig dgp = DgpConfig::simulation_defaults(100);
    dgp.sigma_b = 0.0;
    std::vector<double> stats;
    for (std::uint64_t r = 0; r < 30; ++r) {
      const ExpandedDesign design = testing::sim_design(dgp, 102, r);
      const LrtReport lrt = lrt_sigma_b(design, FitConfig{});
      CHECK(lrt.df == 2);
      stats.push_back(std::max(lrt.statistic, 0.0));
    }
    CHECK(quantile(stats, 0.5) < 5.0);
  }

  TEST_CASE("conditional log-likelihood: plug-in definitions") {
    RngStream rng(100, 0);
    ExpandedDesign design;
    design.covariate_names = {"intercept", "c1", "c2"};
    for (int i = 0; i < 5; ++i) design.subjects.push_back(testing::random_subject(rng, 4, 3));
    FitResult fr;
    fr.theta = testing::random_theta(rng, 3);
    fr.posterior = e_step(design, fr.theta);
    double zero = 0.0, plugged = 0.0;
    for (std::size_t i = 0; i < 5; ++i) {
      const auto& s = design.subjects[i];
      const double b = fr.posterior[i].mean;
      for (Eigen::Index j = 0; j < s.n(); ++j) {
        const double mu = s.x_tilde.row(j).dot(fr.theta.beta);
        const double c = 1 + fr.theta.omega * s.d(j);
        const double s2 = fr.theta.sigma * fr.theta.sigma;
        auto norm = [&](double r) { return -0.5 * std::log(2 * M_PI * s2) - 0.5 * r * r / s2; };
        auto bern = [&](double u) { return s.d(j) > 0.5 ? -std::log1p(std::exp(-u)) : -std::log1p(std::exp(u)); };
        const double u = s.x_star.row(j).dot(fr.theta.eta);
        zero += norm(s.y(j) - mu) + bern(u);
        plugged += norm(s.y(j) - mu - c * b) + bern(u + fr.theta.xi * b);
      }
    }
    CHECK(conditional_loglik(fr, design, PlugB::zero) == doctest::Approx(zero).epsilon(1e-12));
    CHECK(conditional_loglik(fr, design, PlugB::posterior_mean) == doctest::Approx(plugged).epsilon(1e-12));
  }

  TEST_CASE("sensitivity ordering on simulated data") {
    const DgpConfig dgp = DgpConfig::simulation_defaults(100);
    const PanelDataset data = gen_dataset(dgp, 101);
    const ExpandedDesign design = expand_design(data);
    FitConfig cfg;
    const FitResult full = fit(design, initialize(design, cfg).theta0, cfg);
    const SensitivityReport rep = sensitivity_analysis(data, full, {"z1"}, cfg);
    REQUIRE(rep.cll_variants.size() == 1);
    CHECK(rep.cll_variants[0].first == "z1");
    CHECK(rep.cll_full > rep.cll_variants[0].second);
    CHECK(rep.cll_variants[0].second > rep.cll_reduced);
  }
}
