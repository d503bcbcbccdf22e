#include "confound_em/inference.hpp"

#include <algorithm>
#include <cmath>

#include <boost/math/distributions/chi_squared.hpp>

#include "confound_em/errors.hpp"
#include "confound_em/init_strategy.hpp"
#include "confound_em/parallel.hpp"
#include "confound_em/rng.hpp"

namespace confound_em {

std::vector<std::size_t> bootstrap_indices(std::size_t m, std::uint64_t seed, std::uint64_t index) {
  RngStream rng(seed, index);
  std::vector<std::size_t> out(m);
  for (auto& k : out) k = static_cast<std::size_t>(rng.below(m));
  return out;
}

BootstrapResult cluster_bootstrap(const ExpandedDesign& design, const BootstrapConfig& cfg,
                                  const FitResult* point) {
  if (cfg.B < 1) throw ConfigError("bootstrap: B must be at least 1");
  BootstrapResult out;
  out.B = cfg.B;
  out.seed = cfg.seed;
  out.covariate_names = design.covariate_names;
  FitResult own;
  if (!point) {
    own = fit(design, initialize(design, cfg.fit).theta0, cfg.fit);
    point = &own;
  }
  out.point = point->theta;
  out.point_converged = point->converged;
  out.point_ate = ate(point->theta, design, cfg.weighting);

  struct Slot {
    BootstrapReplicate rep;
    std::string failure;
  };
  std::vector<Slot> slots(static_cast<std::size_t>(cfg.B));
  parallel_for(slots.size(), resolve_threads(cfg.threads), [&](std::size_t k) {
    Slot& slot = slots[k];
    slot.rep.index = static_cast<int>(k);
    try {
      const ExpandedDesign sample = resample_subjects(design, bootstrap_indices(design.m(), cfg.seed, k));
      const Theta start = cfg.warm_start ? point->theta : initialize(sample, cfg.fit).theta0;
      const FitResult r = fit(sample, start, cfg.fit);
      slot.rep.theta = r.theta;
      slot.rep.converged = r.converged;
      slot.rep.ate = ate(r.theta, sample, cfg.weighting);
      if (!r.converged) slot.failure = "not converged after " + std::to_string(r.n_iters) + " iterations";
    } catch (const std::exception& e) {
      slot.rep.converged = false;
      slot.failure = e.what();
    }
  });
  for (auto& slot : slots) {
    if (slot.rep.converged) {
      out.replicates.push_back(std::move(slot.rep));
    } else {
      ++out.n_failed;
      out.failures.push_back("replicate " + std::to_string(slot.rep.index) + ": " + slot.failure);
    }
  }
  if (2 * out.n_failed > cfg.B) {
    throw UnstableError("bootstrap unstable: " + std::to_string(out.n_failed) + " of " + std::to_string(cfg.B) +
                        " replicates failed");
  }
  return out;
}

std::vector<ParameterSummary> summarize(const BootstrapResult& boot, double level) {
  const auto R = static_cast<int>(boot.replicates.size());
  if (R < kMinBootstrapReplicates) {
    throw UnstableError("summarize: " + std::to_string(R) + " retained replicates, need at least " +
                        std::to_string(kMinBootstrapReplicates));
  }
  if (!(level > 0.0 && level < 1.0)) throw ConfigError("summarize: level must be in (0, 1)");
  std::vector<std::string> names = parameter_names(boot.covariate_names);
  names.push_back("ATE");
  Eigen::VectorXd estimate(static_cast<Eigen::Index>(names.size()));
  estimate << boot.point.flatten(), boot.point_ate;
  Eigen::MatrixXd draws(R, estimate.size());
  for (int r = 0; r < R; ++r) {
    draws.row(r) << boot.replicates[static_cast<std::size_t>(r)].theta.flatten().transpose(),
        boot.replicates[static_cast<std::size_t>(r)].ate;
  }
  const double floor = 2.0 / (R + 1.0);
  const double alpha = 1.0 - level;
  std::vector<ParameterSummary> out;
  for (Eigen::Index k = 0; k < estimate.size(); ++k) {
    ParameterSummary s;
    s.name = names[static_cast<std::size_t>(k)];
    s.estimate = estimate(k);
    std::vector<double> col(draws.col(k).data(), draws.col(k).data() + R);
    s.boot_mean = draws.col(k).mean();
    s.se = R > 1 ? std::sqrt((draws.col(k).array() - s.boot_mean).square().sum() / (R - 1.0)) : 0.0;
    s.ci_lo = quantile(col, alpha / 2.0);
    s.ci_hi = quantile(col, 1.0 - alpha / 2.0);
    const double le = static_cast<double>(std::count_if(col.begin(), col.end(), [](double v) { return v <= 0.0; }));
    const double ge = static_cast<double>(std::count_if(col.begin(), col.end(), [](double v) { return v >= 0.0; }));
    s.p = std::clamp(2.0 * std::min(le, ge) / R, floor, 1.0);
    out.push_back(s);
  }
  return out;
}

double chi2_upper_tail(double x, int df) {
  if (df < 1) throw std::invalid_argument("chi2_upper_tail: df must be positive");
  if (!(x > 0.0)) return 1.0;
  if (std::isinf(x)) return 0.0;
  return boost::math::cdf(boost::math::complement(boost::math::chi_squared(df), x));
}

TestReport wald_group_test(const BootstrapResult& boot, const std::vector<std::string>& group,
                           const std::string& label) {
  if (group.empty()) throw ConfigError("wald_group_test: empty group");
  const std::vector<std::string> names = parameter_names(boot.covariate_names);
  const Eigen::VectorXd point = boot.point.flatten();
  std::vector<Eigen::Index> idx;
  TestReport out;
  out.method = "bootstrap Wald chi-square (" + label + ")";
  for (const auto& g : group) {
    const std::string full = (g == "xi" || g.rfind("eta[", 0) == 0) ? g : "eta[" + g + "]";
    const auto it = std::find(names.begin(), names.end(), full);
    if (it == names.end()) throw ConfigError("wald_group_test: unknown treatment-model coefficient '" + g + "'");
    const auto k = static_cast<Eigen::Index>(it - names.begin());
    if (std::find(idx.begin(), idx.end(), k) != idx.end()) throw ConfigError("wald_group_test: duplicate '" + g + "'");
    idx.push_back(k);
    out.names.push_back(full);
  }
  const auto R = static_cast<Eigen::Index>(boot.replicates.size());
  const auto G = static_cast<Eigen::Index>(idx.size());
  if (R < 2) throw UnstableError("wald_group_test: fewer than 2 replicates");
  Eigen::MatrixXd draws(R, G);
  Eigen::VectorXd theta(G);
  for (Eigen::Index r = 0; r < R; ++r) {
    const Eigen::VectorXd flat = boot.replicates[static_cast<std::size_t>(r)].theta.flatten();
    for (Eigen::Index g = 0; g < G; ++g) draws(r, g) = flat(idx[static_cast<std::size_t>(g)]);
  }
  for (Eigen::Index g = 0; g < G; ++g) theta(g) = point(idx[static_cast<std::size_t>(g)]);
  const Eigen::MatrixXd centered = draws.rowwise() - draws.colwise().mean();
  const Eigen::MatrixXd cov = centered.transpose() * centered / (R - 1.0);
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(cov);
  const double hi = eig.eigenvalues().maxCoeff();
  const double lo = eig.eigenvalues().minCoeff();
  if (!(hi > 0.0) || !(lo > 1e-12 * hi)) {
    throw IllConditionedError("wald_group_test: bootstrap covariance is singular; increase B");
  }
  const Eigen::VectorXd proj = eig.eigenvectors().transpose() * theta;
  out.statistic = (proj.array().square() / eig.eigenvalues().array()).sum();
  out.df = static_cast<int>(G);
  out.p_value = chi2_upper_tail(out.statistic, out.df);
  return out;
}

FitResult fit_reduced(const ExpandedDesign& design) {
  FitResult out;
  const std::vector<PosteriorSummary> zero(design.m(), PosteriorSummary{0.0, 1.0, 0.0, 0.0, 0.0});
  out.theta.beta = m_step_beta(design, zero, 0.0);
  double rss = 0.0;
  Eigen::MatrixXd X(static_cast<Eigen::Index>(design.n_records()), design.q());
  Eigen::VectorXd d(X.rows());
  Eigen::Index row = 0;
  for (const auto& s : design.subjects) {
    rss += (s.y - s.x_tilde * out.theta.beta).squaredNorm();
    X.middleRows(row, s.n()) = s.x_star;
    d.segment(row, s.n()) = s.d;
    row += s.n();
  }
  out.theta.sigma = std::sqrt(rss / static_cast<double>(design.n_records()));
  const LogisticFit lf = fit_logistic(X, d);
  out.theta.eta = lf.coef;
  out.theta.omega = 0.0;
  out.theta.xi = 0.0;
  out.theta.sigma_b = 0.0;
  out.converged = lf.converged;
  out.n_iters = lf.iterations;
  out.posterior = zero;
  out.diagnostics.push_back("reduced fit: b_i = 0, omega and xi not identified (set to 0)");
  if (lf.capped) out.diagnostics.push_back("reduced fit: logistic separation suspected");
  if (!lf.converged) out.diagnostics.push_back("reduced fit: logistic IRLS did not converge");
  return out;
}

double outcome_marginal_loglik(const ExpandedDesign& design, const Theta& th) {
  const double s2 = th.sigma * th.sigma;
  const double sb2 = th.sigma_b * th.sigma_b;
  constexpr double kLog2Pi = 1.8378770664093454836;
  double total = 0.0;
  for (const auto& s : design.subjects) {
    const Eigen::VectorXd r = s.y - s.x_tilde * th.beta;
    const Eigen::VectorXd u = (1.0 + th.omega * s.d.array()).matrix();
    const double k = 1.0 + sb2 * u.squaredNorm() / s2;
    const double ur = u.dot(r);
    const double quad = r.squaredNorm() / s2 - sb2 / (s2 * s2) * ur * ur / k;
    const double n = static_cast<double>(s.n());
    total += -0.5 * (n * kLog2Pi + n * std::log(s2) + std::log(k) + quad);
  }
  return total;
}

double outcome_reduced_loglik(const ExpandedDesign& design, const Theta& reduced) {
  Theta th = reduced;
  th.sigma_b = 0.0;
  th.omega = 0.0;
  return outcome_marginal_loglik(design, th);
}

LrtReport lrt_sigma_b(const ExpandedDesign& design, const FitConfig& cfg, const FitResult* full) {
  FitResult own;
  if (!full) {
    own = fit(design, initialize(design, cfg).theta0, cfg);
    full = &own;
  }
  const FitResult reduced = fit_reduced(design);
  LrtReport out;
  out.method = "likelihood ratio (outcome model), H0: sigma_b = 0";
  out.loglik_full = outcome_marginal_loglik(design, full->theta);
  out.loglik_reduced = outcome_reduced_loglik(design, reduced.theta);
  out.params_reduced = static_cast<int>(reduced.theta.beta.size()) + 1;
  out.params_full = out.params_reduced + 2;
  out.df = out.params_full - out.params_reduced;
  out.full_converged = full->converged;
  out.statistic = 2.0 * (out.loglik_full - out.loglik_reduced);
  out.notes.push_back("sigma_b = 0 lies on the boundary; the plain chi-square reference is conservative");
  if (!full->converged) out.notes.push_back("full model did not converge; statistic computed at the last iterate");
  if (out.statistic < -1e-6) {
    out.notes.push_back("negative statistic: the full-model optimization likely failed");
    out.p_value = 1.0;
  } else {
    out.p_value = chi2_upper_tail(std::max(out.statistic, 0.0), out.df);
  }
  return out;
}

double conditional_loglik(const FitResult& fit, const ExpandedDesign& design, PlugB plug) {
  const Theta& th = fit.theta;
  std::vector<PosteriorSummary> posterior;
  if (plug == PlugB::posterior_mean) {
    posterior = fit.posterior.size() == design.m() ? fit.posterior : e_step(design, th);
  }
  const double s2 = th.sigma * th.sigma;
  constexpr double kLog2Pi = 1.8378770664093454836;
  double total = 0.0;
  for (std::size_t i = 0; i < design.m(); ++i) {
    const SubjectDesign& s = design.subjects[i];
    const double b = plug == PlugB::zero ? 0.0 : posterior[i].mean;
    const Eigen::VectorXd r = s.y - s.x_tilde * th.beta - b * (1.0 + th.omega * s.d.array()).matrix();
    const Eigen::VectorXd lin = (s.x_star * th.eta).array() + th.xi * b;
    total += -0.5 * (static_cast<double>(s.n()) * (kLog2Pi + std::log(s2)) + r.squaredNorm() / s2);
    for (Eigen::Index j = 0; j < s.n(); ++j) total += s.d(j) * lin(j) - softplus(lin(j));
  }
  return total;
}

SensitivityReport sensitivity_analysis(const PanelDataset& data, const FitResult& full,
                                       const std::vector<std::string>& drop, const FitConfig& cfg) {
  const ExpandedDesign design = expand_design(data);
  SensitivityReport out;
  out.cll_full = conditional_loglik(full, design, PlugB::posterior_mean);
  out.cll_reduced = conditional_loglik(fit_reduced(design), design, PlugB::zero);
  for (const auto& name : drop) {
    const ExpandedDesign smaller = expand_design(drop_covariates(data, {name}));
    const FitResult r = fit(smaller, initialize(smaller, cfg).theta0, cfg);
    if (!r.converged) out.notes.push_back("refit without '" + name + "' did not converge");
    out.cll_variants.emplace_back(name, conditional_loglik(r, smaller, PlugB::posterior_mean));
  }
  return out;
}

}  // namespace confound_em
