#pragma once

#include <map>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "confound_em/config_file.hpp"
#include "confound_em/em_engine.hpp"
#include "confound_em/laplace_posterior.hpp"
#include "confound_em/panel_data.hpp"

namespace confound_em {

struct BootstrapResult;

enum class AteWeighting { record, subject };

/// Mean of x* over all records (record) or of per-subject means (subject).
Eigen::VectorXd mean_x_star(const ExpandedDesign& design, AteWeighting weighting = AteWeighting::record);

/// tau = beta2' mean(x*).
double ate(const Theta& th, const ExpandedDesign& design, AteWeighting weighting = AteWeighting::record);
/// Same as above; appends a warning when the fit did not converge.
double ate(const FitResult& fit, const ExpandedDesign& design, AteWeighting weighting = AteWeighting::record,
           std::vector<std::string>* warnings = nullptr);

struct EffectQuery {
  Eigen::VectorXd x_star;  // leading entry 1
  std::optional<double> b;
};

/// beta2' x* (+ omega b when b is given). Throws std::invalid_argument on a
/// dimension mismatch or a leading entry other than 1.
double hte(const Theta& th, const EffectQuery& query);

enum class Statistic { mean, median, q1, q3 };
std::string to_string(Statistic s);
Statistic parse_statistic(const std::string& s);

/// Type-7 sample quantile (linear interpolation), p in [0, 1].
double quantile(std::vector<double> values, double p);

struct HteGridSpec {
  std::string varying;
  std::vector<double> grid;
  /// One output line per variant; each non-fixed covariate is set to the
  /// variant's statistic unless `conditioning` pins it to another statistic.
  std::vector<Statistic> variants{Statistic::mean};
  std::map<std::string, Statistic> conditioning;
  std::map<std::string, double> fixed;
  /// Permits summary statistics of 0/1 covariates instead of explicit values.
  bool allow_fractional = false;
  double level = 0.95;

  /// Keys: varying, grid, variants, conditioning ("name:stat" list), fixed
  /// ("name:value" list), allow_fractional, level.
  static HteGridSpec from_config(const KeyValueConfig& cfg);
  void check() const;
};

struct HteGridRow {
  double varying_value = 0.0;
  std::string variant;
  double estimate = 0.0;
  std::optional<double> ci_lo;
  std::optional<double> ci_hi;
};

/// Profile x* for one variant: statistics over the pooled records.
Eigen::VectorXd grid_profile(const ExpandedDesign& design, const HteGridSpec& spec, Statistic variant,
                             double varying_value);

/// Rows ordered by variant, then grid value. Throws ConfigError on unknown
/// covariate names or an unfixed binary covariate.
std::vector<HteGridRow> hte_grid(const Theta& th, const ExpandedDesign& design, const HteGridSpec& spec,
                                 const BootstrapResult* boot = nullptr);

void write_grid_csv(const std::vector<HteGridRow>& rows, std::ostream& out);

}  // namespace confound_em
