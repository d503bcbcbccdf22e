#pragma once

#include <string>
#include <vector>

#include <Eigen/Dense>

#include "confound_em/em_engine.hpp"
#include "confound_em/laplace_posterior.hpp"
#include "confound_em/panel_data.hpp"

namespace confound_em {

/// Random-intercept Gaussian LMM y = X beta + u_g + e fitted by exact EM.
struct LmmFit {
  Eigen::VectorXd beta;
  double sigma2 = 0.0;
  double sigma_b2 = 0.0;
  int iterations = 0;
  bool converged = false;
  std::vector<std::string> notes;
};

/// `groups[r]` is the cluster label of row r (any integers). Converges to a
/// parameter tolerance of 1e-8 or stops after 200 iterations. Throws
/// RankDeficiencyError when X'X is singular. With one row per cluster the two
/// variances are not separately identified; sigma_b2 = 0 is returned with a note.
LmmFit fit_lmm(const Eigen::VectorXd& y, const Eigen::MatrixXd& X, const std::vector<int>& groups);

/// Logistic regression by IRLS with step halving; `offset` may be empty.
struct LogisticFit {
  Eigen::VectorXd coef;
  int iterations = 0;
  bool converged = false;
  bool capped = false;  // a step larger than 1e3 was capped (separation)
};
LogisticFit fit_logistic(const Eigen::MatrixXd& X, const Eigen::VectorXd& d,
                         const Eigen::VectorXd& offset = Eigen::VectorXd());

struct BetaSigmaInit {
  Eigen::VectorXd beta;
  double sigma = 1.0;
  double sigma_b2 = 0.0;  // from the same LMM, used as a fallback
  std::vector<std::string> notes;
};
BetaSigmaInit init_beta_sigma(const ExpandedDesign& design);

struct OmegaSigmaBInit {
  double omega = 0.0;
  double sigma_b2 = 0.0;
  double var_treated = 0.0;
  double var_untreated = 0.0;
  bool fallback = false;
  std::vector<std::string> notes;
};
OmegaSigmaBInit init_omega_sigma_b(const ExpandedDesign& design);

/// Random-intercept logistic model for d on x* (Laplace plug-in EM).
struct LogisticGlmmFit {
  Eigen::VectorXd eta;
  double random_var = 0.0;
  int iterations = 0;
  bool converged = false;
  std::vector<std::string> notes;
};
LogisticGlmmFit fit_logistic_glmm(const ExpandedDesign& design);

struct EtaXiInit {
  Eigen::VectorXd eta;
  double xi0 = 0.0;
  double random_var = 0.0;
  std::vector<double> xi_candidates;  // {+xi0, -xi0}, or {0}
  std::vector<std::string> notes;
};
EtaXiInit init_eta_xi(const ExpandedDesign& design, double sigma_b2);

struct InitCandidate {
  Theta theta;
  double short_run_loglik = 0.0;
  bool ok = false;
  std::string error;
};

struct InitReport {
  Theta theta0;
  std::size_t chosen = 0;
  std::vector<InitCandidate> candidates_tried;
  std::vector<std::string> notes;
};

inline constexpr int kInitProbeIterations = 5;

/// Runs a short EM probe from each candidate and keeps the one with the highest
/// observed log-likelihood (ties go to the lower index).
InitReport select_init(const ExpandedDesign& design, const std::vector<Theta>& candidates,
                       const FitConfig& cfg);

/// Full initialization: LMM for (beta, sigma), treated/untreated LMMs for
/// (omega, sigma_b), logistic GLMM for (eta, +-xi), then select_init.
InitReport initialize(const ExpandedDesign& design, const FitConfig& cfg);

}  // namespace confound_em
