#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "confound_em/effects.hpp"
#include "confound_em/em_engine.hpp"
#include "confound_em/laplace_posterior.hpp"
#include "confound_em/panel_data.hpp"

namespace confound_em {

struct BootstrapConfig {
  int B = 200;
  std::uint64_t seed = 1;
  double level = 0.95;
  /// Start each replicate from the point estimate instead of re-initializing.
  bool warm_start = false;
  unsigned threads = 0;
  AteWeighting weighting = AteWeighting::record;
  FitConfig fit;
};

struct BootstrapReplicate {
  int index = 0;
  Theta theta;
  double ate = 0.0;
  bool converged = true;
};

struct BootstrapResult {
  int B = 0;
  std::uint64_t seed = 0;
  int n_failed = 0;
  Theta point;  // fit on the original data
  double point_ate = 0.0;
  bool point_converged = false;
  std::vector<std::string> covariate_names;
  /// Converged replicates in index order; length B - n_failed.
  std::vector<BootstrapReplicate> replicates;
  /// "replicate k: reason" for each failed replicate.
  std::vector<std::string> failures;
};

/// Subject indices drawn with replacement for replicate `index`.
std::vector<std::size_t> bootstrap_indices(std::size_t m, std::uint64_t seed, std::uint64_t index);

/// Cluster bootstrap. `point` is fitted here when not supplied. Throws
/// UnstableError when more than half of the replicates fail.
BootstrapResult cluster_bootstrap(const ExpandedDesign& design, const BootstrapConfig& cfg,
                                  const FitResult* point = nullptr);

struct ParameterSummary {
  std::string name;
  double estimate = 0.0;
  double boot_mean = 0.0;
  double se = 0.0;
  double ci_lo = 0.0;
  double ci_hi = 0.0;
  double p = 1.0;
};

inline constexpr int kMinBootstrapReplicates = 20;

/// One row per flattened parameter plus "ATE". Percentile CI at `level`;
/// p = 2 min(frac <= 0, frac >= 0) clamped to [2 / (R + 1), 1] with R retained
/// replicates. Throws UnstableError with fewer than 20 replicates.
std::vector<ParameterSummary> summarize(const BootstrapResult& boot, double level = 0.95);

struct TestReport {
  std::string method;
  double statistic = 0.0;
  int df = 1;
  double p_value = 1.0;
  std::vector<std::string> names;
  std::vector<std::string> notes;
};

struct LrtReport : TestReport {
  double loglik_full = 0.0;
  double loglik_reduced = 0.0;
  int params_full = 0;
  int params_reduced = 0;
  bool full_converged = false;
};

/// Upper tail of the chi-square distribution.
double chi2_upper_tail(double x, int df);

/// Wald test of treatment-model coefficients against zero using the bootstrap
/// covariance. Names: "eta[<cov>]", a bare covariate name, or "xi".
TestReport wald_group_test(const BootstrapResult& boot, const std::vector<std::string>& group,
                           const std::string& label = "group");

/// Fit that ignores the latent confounder: OLS on x~ for (beta, sigma),
/// logistic IRLS on x* for eta; omega = xi = 0 and sigma_b = 0.
FitResult fit_reduced(const ExpandedDesign& design);

/// Gaussian marginal log-likelihood of y given d with b integrated out.
double outcome_marginal_loglik(const ExpandedDesign& design, const Theta& th);
/// Gaussian log-likelihood of the OLS fit with sigma^2 = RSS / N.
double outcome_reduced_loglik(const ExpandedDesign& design, const Theta& reduced);

/// LRT of sigma_b = 0. `full` is fitted here when not supplied.
LrtReport lrt_sigma_b(const ExpandedDesign& design, const FitConfig& cfg, const FitResult* full = nullptr);

enum class PlugB { posterior_mean, zero };

/// sum_ij log f(y_ij | d_ij, b_i) + log f(d_ij | b_i) with b_i plugged in.
double conditional_loglik(const FitResult& fit, const ExpandedDesign& design, PlugB plug);

struct SensitivityReport {
  double cll_full = 0.0;
  double cll_reduced = 0.0;
  /// Full model refitted without the named covariate.
  std::vector<std::pair<std::string, double>> cll_variants;
  std::vector<std::string> notes;
};

/// Conditional log-likelihood comparison of the full fit, the reduced fit and
/// full refits with each listed covariate dropped.
SensitivityReport sensitivity_analysis(const PanelDataset& data, const FitResult& full,
                                       const std::vector<std::string>& drop, const FitConfig& cfg);

}  // namespace confound_em
