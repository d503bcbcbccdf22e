#pragma once

#include <string>
#include <vector>

#include <Eigen/Dense>

#include "confound_em/laplace_posterior.hpp"
#include "confound_em/panel_data.hpp"

namespace confound_em {

struct FitConfig {
  int max_em_iters = 500;
  double em_tol = 1e-6;
  int newton_max_iters = 50;
  double newton_tol = 1e-8;
  int step_halving_max = 20;
  double sigma_floor = kSigmaFloor;
  double sigma_b_floor = kSigmaBFloor;

  void check() const;
};

struct FitResult {
  Theta theta;
  bool converged = false;
  int n_iters = 0;
  double initial_loglik = 0.0;       // observed_loglik at the starting value
  std::vector<double> loglik_trace;  // observed_loglik after each iteration
  std::vector<PosteriorSummary> posterior;  // at theta
  std::vector<std::string> diagnostics;
};

std::vector<PosteriorSummary> e_step(const ExpandedDesign& design, const Theta& th,
                                     std::vector<std::string>* diagnostics = nullptr);

/// Closed-form beta update; SPD solve of the stacked normal equations.
/// Throws RankDeficiencyError (naming columns) when the condition estimate exceeds 1e12.
Eigen::VectorXd m_step_beta(const ExpandedDesign& design,
                            const std::vector<PosteriorSummary>& posterior, double omega);

/// Throws IdentificationError when sum_i (#treated_i) * delta_i is zero.
double m_step_omega(const ExpandedDesign& design, const std::vector<PosteriorSummary>& posterior,
                    const Eigen::VectorXd& beta);

/// Residual variance update; floored at sigma_floor^2 with a diagnostic.
double m_step_sigma2(const ExpandedDesign& design, const std::vector<PosteriorSummary>& posterior,
                     const Eigen::VectorXd& beta, double omega, double sigma_floor = kSigmaFloor,
                     std::vector<std::string>* diagnostics = nullptr);

double m_step_sigma_b2(const std::vector<PosteriorSummary>& posterior,
                       double sigma_b_floor = kSigmaBFloor,
                       std::vector<std::string>* diagnostics = nullptr);

/// Approximate E-step objective for the outcome model given frozen summaries.
double q1_objective(const ExpandedDesign& design, const std::vector<PosteriorSummary>& posterior,
                    const Eigen::VectorXd& beta, double omega, double sigma2);

/// Approximate treatment-model objective and its exact derivatives in (eta, xi).
struct Q2Evaluation {
  double value = 0.0;
  Eigen::VectorXd gradient;  // length q + 1, xi last
  Eigen::MatrixXd hessian;
};
Q2Evaluation q2_objective(const ExpandedDesign& design,
                          const std::vector<PosteriorSummary>& posterior,
                          const Eigen::VectorXd& eta, double xi);
double q2_value(const ExpandedDesign& design, const std::vector<PosteriorSummary>& posterior,
                const Eigen::VectorXd& eta, double xi);

struct PsUpdate {
  Eigen::VectorXd eta;
  double xi = 0.0;
  int iterations = 0;
  bool reached_tol = false;
};

/// Damped Newton ascent on q2 with step halving. Throws IllConditionedError when
/// the Hessian cannot be factored even with a 1e-2 ridge.
PsUpdate newton_eta_xi(const ExpandedDesign& design, const std::vector<PosteriorSummary>& posterior,
                       const Eigen::VectorXd& eta, double xi, const FitConfig& cfg);

/// The Laplace-variant EM loop. Non-convergence is reported, not thrown. When the
/// E-step fails at a new iterate the loop stops at the previous one, unconverged,
/// with a diagnostic; failures at `init` and M-step errors propagate.
FitResult fit(const ExpandedDesign& design, const Theta& init, const FitConfig& cfg);

}  // namespace confound_em
