#pragma once

#include <string>
#include <vector>

#include <json.hpp>

#include "confound_em/config_file.hpp"
#include "confound_em/em_engine.hpp"
#include "confound_em/init_strategy.hpp"
#include "confound_em/inference.hpp"
#include "confound_em/laplace_posterior.hpp"
#include "confound_em/sim_study.hpp"

namespace confound_em {

using Json = nlohmann::json;

/// Objects use std::map ordering, so keys are always sorted. Non-finite doubles become null.
Json vector_json(const Eigen::VectorXd& v);
Eigen::VectorXd vector_from_json(const Json& j);

Json theta_json(const Theta& th, const std::vector<std::string>& covariate_names);
/// Throws SchemaError when fields are missing or mis-sized.
Theta theta_from_json(const Json& j);
/// Inverse of Theta::flatten(); q is inferred from the length (3q + 4).
Theta theta_from_flat(const Eigen::VectorXd& flat);

Json fit_json(const FitResult& fit, const ExpandedDesign& design);
Json init_json(const InitReport& report, const std::vector<std::string>& covariate_names);
Json table_json(const ReplicationTable& table);
Json config_json(const KeyValueConfig& cfg);
Json summary_json(const std::vector<ParameterSummary>& summary);
Json test_json(const TestReport& report);
Json lrt_json(const LrtReport& report);
Json sensitivity_json(const SensitivityReport& report);
Json replicates_json(const BootstrapResult& boot);

/// Two-space indent with a trailing newline.
std::string dump_json(const Json& j);
Json read_json_file(const std::string& path);

}  // namespace confound_em
