#pragma once

#include <cstdint>
#include <iosfwd>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "confound_em/config_file.hpp"
#include "confound_em/em_engine.hpp"
#include "confound_em/panel_data.hpp"

namespace confound_em {

/// Data-generating process for the simulation study: two correlated binary
/// baseline covariates, p2 Gaussian time-varying covariates with AR(1)
/// cross-correlation and unit variances, a Gaussian latent confounder, a
/// logistic treatment model and a Gaussian outcome model.
struct DgpConfig {
  Eigen::VectorXd beta;  // 2 * (3 + p2)
  double omega = 0.5;
  double sigma = 0.5;
  Eigen::VectorXd eta;  // 3 + p2
  double xi = 0.5;
  double sigma_b = 1.0;
  int m = 100;
  int n_min = 2;
  int n_max = 10;
  double z_marginal1 = 0.5;
  double z_marginal2 = 0.3;
  double z_corr = 0.25;
  double x_ar1_corr = 0.3;

  static DgpConfig simulation_defaults(int m = 100);
  /// Keys: beta, eta (comma lists), omega, sigma, xi, sigma_b, m, n_min, n_max,
  /// z_marginals (two values), z_corr, x_ar1_corr. Missing keys keep the default design.
  static DgpConfig from_config(const KeyValueConfig& cfg);
  KeyValueConfig to_config() const;

  int p2() const { return static_cast<int>(eta.size()) - 3; }
  /// Throws ConfigError when the configuration is infeasible.
  void validate() const;
  /// P(Z1 = 1, Z2 = 1) for the configured marginals and correlation.
  double joint_z11() const;
};

struct SimulatedData {
  PanelDataset data;
  std::vector<double> b;  // latent confounder per subject
};

/// Columns: id, y, d, z1, z2, x1..xp2. Stream `stream` of `seed` is used.
SimulatedData gen_dataset_with_latent(const DgpConfig& dgp, std::uint64_t seed, std::uint64_t stream = 0);
PanelDataset gen_dataset(const DgpConfig& dgp, std::uint64_t seed, std::uint64_t stream = 0);

/// beta2' E[x*] with E[z] equal to the marginals and E[x] = 0.
double true_ate(const DgpConfig& dgp);

/// Table row names in order: beta0..beta{2q-1}, omega, sigma, eta0..eta{q-1}, xi, sigma_b, ATE.
std::vector<std::string> replication_row_names(const DgpConfig& dgp);
Eigen::VectorXd replication_truth(const DgpConfig& dgp);

struct ReplicationRow {
  std::string param;
  double truth = 0.0;
  double mean = 0.0;
  double se = 0.0;  // SD across converged replications, divisor R - 1
  double bias = 0.0;
  double rmse = 0.0;  // divisor R
};

struct ReplicationOutcome {
  bool converged = false;
  std::string error;
  Eigen::VectorXd estimate;  // ordered like replication_row_names
};

struct ReplicationTable {
  std::vector<ReplicationRow> rows;
  int R = 0;
  int n_converged = 0;
  double convergence_rate = 0.0;
  std::vector<ReplicationOutcome> outcomes;
};

/// Estimates for one simulated dataset: initialization + EM + empirical ATE.
ReplicationOutcome run_one_replication(const DgpConfig& dgp, std::uint64_t seed, std::uint64_t r,
                                       const FitConfig& cfg);

/// Replication r uses stream r of `seed`. Aggregates over converged replications.
/// Throws UnstableError when fewer than half converge.
ReplicationTable run_replications(const DgpConfig& dgp, int R, std::uint64_t seed,
                                  const FitConfig& cfg, unsigned threads = 0);

/// Aggregate precomputed outcomes (used by run_replications).
ReplicationTable tabulate(const DgpConfig& dgp, std::vector<ReplicationOutcome> outcomes);

void write_table_csv(const ReplicationTable& table, std::ostream& out);

}  // namespace confound_em
