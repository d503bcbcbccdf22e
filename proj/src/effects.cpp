#include "confound_em/effects.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "confound_em/errors.hpp"
#include "confound_em/inference.hpp"
#include "confound_em/parallel.hpp"

namespace confound_em {

Eigen::VectorXd mean_x_star(const ExpandedDesign& design, AteWeighting weighting) {
  Eigen::VectorXd acc = Eigen::VectorXd::Zero(design.q());
  if (design.m() == 0) throw std::invalid_argument("mean_x_star: empty design");
  if (weighting == AteWeighting::record) {
    for (const auto& s : design.subjects) acc += s.x_star.colwise().sum().transpose();
    return acc / static_cast<double>(design.n_records());
  }
  for (const auto& s : design.subjects) acc += s.x_star.colwise().mean().transpose();
  return acc / static_cast<double>(design.m());
}

double ate(const Theta& th, const ExpandedDesign& design, AteWeighting weighting) {
  if (th.beta.size() != 2 * design.q()) throw std::invalid_argument("ate: beta length does not match design");
  return th.beta2().dot(mean_x_star(design, weighting));
}

double ate(const FitResult& fit, const ExpandedDesign& design, AteWeighting weighting,
           std::vector<std::string>* warnings) {
  if (!fit.converged && warnings) warnings->push_back("ATE computed from a non-converged fit");
  return ate(fit.theta, design, weighting);
}

double hte(const Theta& th, const EffectQuery& query) {
  if (query.x_star.size() != th.q() || th.beta.size() != 2 * th.q()) {
    throw std::invalid_argument("hte: x_star length does not match the fitted model");
  }
  if (query.x_star(0) != 1.0) throw std::invalid_argument("hte: x_star must start with 1");
  double value = th.beta2().dot(query.x_star);
  if (query.b) value += th.omega * *query.b;
  return value;
}

std::string to_string(Statistic s) {
  switch (s) {
    case Statistic::mean: return "mean";
    case Statistic::median: return "median";
    case Statistic::q1: return "q1";
    case Statistic::q3: return "q3";
  }
  return "mean";
}

Statistic parse_statistic(const std::string& s) {
  if (s == "mean") return Statistic::mean;
  if (s == "median") return Statistic::median;
  if (s == "q1") return Statistic::q1;
  if (s == "q3") return Statistic::q3;
  throw ConfigError("unknown statistic '" + s + "' (expected mean, median, q1 or q3)");
}

double quantile(std::vector<double> values, double p) {
  if (values.empty()) throw std::invalid_argument("quantile: empty sample");
  if (!(p >= 0.0 && p <= 1.0)) throw std::invalid_argument("quantile: p outside [0, 1]");
  std::sort(values.begin(), values.end());
  const double h = (static_cast<double>(values.size()) - 1.0) * p;
  const auto lo = static_cast<std::size_t>(std::floor(h));
  const std::size_t hi = std::min(lo + 1, values.size() - 1);
  return values[lo] + (h - static_cast<double>(lo)) * (values[hi] - values[lo]);
}

namespace {

std::pair<std::string, std::string> split_pair(const std::string& item) {
  const auto pos = item.find(':');
  if (pos == std::string::npos) throw ConfigError("expected name:value, got '" + item + "'");
  return {trim(item.substr(0, pos)), trim(item.substr(pos + 1))};
}

}  // namespace

HteGridSpec HteGridSpec::from_config(const KeyValueConfig& cfg) {
  HteGridSpec spec;
  spec.varying = cfg.get_string("varying");
  spec.grid = cfg.get_doubles("grid");
  if (cfg.has("variants")) {
    spec.variants.clear();
    for (const auto& v : cfg.get_list("variants")) spec.variants.push_back(parse_statistic(v));
  }
  if (cfg.has("conditioning")) {
    for (const auto& item : cfg.get_list("conditioning")) {
      const auto [name, stat] = split_pair(item);
      spec.conditioning[name] = parse_statistic(stat);
    }
  }
  if (cfg.has("fixed")) {
    for (const auto& item : cfg.get_list("fixed")) {
      const auto [name, value] = split_pair(item);
      spec.fixed[name] = parse_double(value, "fixed");
    }
  }
  spec.allow_fractional = cfg.get_bool("allow_fractional", false);
  spec.level = cfg.get_double("level", 0.95);
  spec.check();
  return spec;
}

void HteGridSpec::check() const {
  if (varying.empty()) throw ConfigError("grid spec: 'varying' is required");
  if (grid.empty()) throw ConfigError("grid spec: grid is empty");
  if (!std::is_sorted(grid.begin(), grid.end())) throw ConfigError("grid spec: grid must be sorted");
  if (variants.empty()) throw ConfigError("grid spec: no variants");
  if (conditioning.count(varying) || fixed.count(varying)) {
    throw ConfigError("grid spec: varying covariate '" + varying + "' is also conditioned or fixed");
  }
  if (!(level > 0.0 && level < 1.0)) throw ConfigError("grid spec: level must be in (0, 1)");
}

namespace {

Eigen::Index covariate_index(const ExpandedDesign& design, const std::string& name) {
  for (std::size_t k = 1; k < design.covariate_names.size(); ++k) {
    if (design.covariate_names[k] == name) return static_cast<Eigen::Index>(k);
  }
  throw ConfigError("unknown covariate '" + name + "'");
}

std::vector<double> pooled_column(const ExpandedDesign& design, Eigen::Index k) {
  std::vector<double> out;
  out.reserve(design.n_records());
  for (const auto& s : design.subjects)
    for (Eigen::Index j = 0; j < s.n(); ++j) out.push_back(s.x_star(j, k));
  return out;
}

bool is_binary(const std::vector<double>& values) {
  return std::all_of(values.begin(), values.end(), [](double v) { return v == 0.0 || v == 1.0; });
}

double statistic(const std::vector<double>& values, Statistic s) {
  switch (s) {
    case Statistic::mean: {
      double acc = 0.0;
      for (double v : values) acc += v;
      return acc / static_cast<double>(values.size());
    }
    case Statistic::median: return quantile(values, 0.5);
    case Statistic::q1: return quantile(values, 0.25);
    case Statistic::q3: return quantile(values, 0.75);
  }
  return 0.0;
}

}  // namespace

Eigen::VectorXd grid_profile(const ExpandedDesign& design, const HteGridSpec& spec, Statistic variant,
                             double varying_value) {
  const Eigen::Index varying = covariate_index(design, spec.varying);
  for (const auto& [name, stat] : spec.conditioning) covariate_index(design, name);
  for (const auto& [name, value] : spec.fixed) covariate_index(design, name);

  Eigen::VectorXd profile(design.q());
  profile(0) = 1.0;
  for (Eigen::Index k = 1; k < design.q(); ++k) {
    const std::string& name = design.covariate_names[static_cast<std::size_t>(k)];
    if (k == varying) {
      profile(k) = varying_value;
      continue;
    }
    if (auto it = spec.fixed.find(name); it != spec.fixed.end()) {
      profile(k) = it->second;
      continue;
    }
    const std::vector<double> values = pooled_column(design, k);
    if (is_binary(values) && !spec.allow_fractional) {
      throw ConfigError("binary covariate '" + name + "' needs an explicit value in 'fixed' (or allow_fractional)");
    }
    const auto it = spec.conditioning.find(name);
    profile(k) = statistic(values, it != spec.conditioning.end() ? it->second : variant);
  }
  return profile;
}

std::vector<HteGridRow> hte_grid(const Theta& th, const ExpandedDesign& design, const HteGridSpec& spec,
                                 const BootstrapResult* boot) {
  spec.check();
  std::vector<Eigen::VectorXd> profiles;
  std::vector<HteGridRow> rows;
  for (Statistic v : spec.variants) {
    for (double g : spec.grid) {
      profiles.push_back(grid_profile(design, spec, v, g));
      HteGridRow row;
      row.varying_value = g;
      row.variant = to_string(v);
      rows.push_back(row);
    }
  }
  parallel_for(rows.size(), resolve_threads(), [&](std::size_t r) {
    rows[r].estimate = hte(th, {profiles[r], std::nullopt});
    if (boot && !boot->replicates.empty()) {
      std::vector<double> draws;
      draws.reserve(boot->replicates.size());
      for (const auto& rep : boot->replicates) draws.push_back(hte(rep.theta, {profiles[r], std::nullopt}));
      const double alpha = 1.0 - spec.level;
      rows[r].ci_lo = quantile(draws, alpha / 2.0);
      rows[r].ci_hi = quantile(draws, 1.0 - alpha / 2.0);
    }
  });
  return rows;
}

void write_grid_csv(const std::vector<HteGridRow>& rows, std::ostream& out) {
  const bool with_ci = !rows.empty() && rows.front().ci_lo.has_value();
  out << "varying_value,conditioning_variant,estimate";
  if (with_ci) out << ",ci_lo,ci_hi";
  out << '\n';
  for (const auto& r : rows) {
    out << format_double(r.varying_value) << ',' << r.variant << ',' << format_double(r.estimate);
    if (with_ci) out << ',' << format_double(r.ci_lo.value_or(NAN)) << ',' << format_double(r.ci_hi.value_or(NAN));
    out << '\n';
  }
}

}  // namespace confound_em
