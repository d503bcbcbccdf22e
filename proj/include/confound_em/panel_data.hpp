#pragma once

#include <filesystem>
#include <iosfwd>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "confound_em/config_file.hpp"

namespace confound_em {

/// Column mapping for a long-format panel CSV.
struct SchemaConfig {
  std::string id_col = "id";
  std::string outcome;
  std::string treatment;
  std::vector<std::string> z_cols;  // time-invariant covariates
  std::vector<std::string> x_cols;  // time-varying covariates

  static SchemaConfig from_config(const KeyValueConfig& cfg);
  static SchemaConfig load(const std::filesystem::path& path);
  KeyValueConfig to_config() const;
};

/// One (subject, occasion) observation. The occasion index is the position in
/// Subject::records.
struct PanelRecord {
  double y = 0.0;
  int d = 0;
  std::vector<double> x;
};

struct Subject {
  std::string id;
  std::vector<double> z;
  std::vector<PanelRecord> records;
};

struct PanelDataset {
  std::string id_name = "id";
  std::string outcome_name = "y";
  std::string treatment_name = "d";
  std::vector<std::string> z_names;
  std::vector<std::string> x_names;
  std::vector<Subject> subjects;

  std::size_t m() const { return subjects.size(); }
  std::size_t n_records() const;
  std::size_t p1() const { return z_names.size(); }
  std::size_t p2() const { return x_names.size(); }
  SchemaConfig schema() const;
};

bool operator==(const PanelRecord& a, const PanelRecord& b);
bool operator==(const Subject& a, const Subject& b);
bool operator==(const PanelDataset& a, const PanelDataset& b);

/// Parse and validate. Records keep file order within each subject; subjects are
/// ordered by first appearance. Throws SchemaError / ValidationError.
PanelDataset load_csv(const std::filesystem::path& path, const SchemaConfig& schema);
PanelDataset parse_panel_csv(std::istream& in, const SchemaConfig& schema);

/// Long format, one row per record, z repeated per row, header
/// `id,<outcome>,<treatment>,<z...>,<x...>`. Values use round-trip formatting.
void write_csv(const PanelDataset& ds, std::ostream& out);
void write_csv(const PanelDataset& ds, const std::filesystem::path& path);

struct Diagnostic {
  enum class Severity { error, warning };
  Severity severity = Severity::error;
  std::string subject_id;
  long row = -1;  // 1-based record row in dataset order, -1 when not row specific
  std::string reason;
};

/// Empty iff every invariant holds and no column of the stacked interaction
/// design is constant. Never throws.
std::vector<Diagnostic> validate(const PanelDataset& ds);
bool has_errors(const std::vector<Diagnostic>& diagnostics);

/// Per-subject design blocks.
///   x_star  : n_i x q, rows (1, z_i, x_ij), q = p1 + p2 + 1
///   x_tilde : n_i x 2q, rows (x*_ij, d_ij * x*_ij)
struct SubjectDesign {
  std::string id;
  Eigen::MatrixXd x_star;
  Eigen::MatrixXd x_tilde;
  Eigen::VectorXd d;
  Eigen::VectorXd y;

  Eigen::Index n() const { return y.size(); }
};

struct ExpandedDesign {
  std::vector<SubjectDesign> subjects;
  std::vector<std::string> covariate_names;  // "intercept", z names, x names

  std::size_t m() const { return subjects.size(); }
  Eigen::Index q() const { return static_cast<Eigen::Index>(covariate_names.size()); }
  std::size_t n_records() const;
};

ExpandedDesign expand_design(const PanelDataset& ds);

/// Copy of `ds` without the named z/x covariates. Throws ConfigError on unknown names.
PanelDataset drop_covariates(const PanelDataset& ds, const std::vector<std::string>& names);

/// Copy of `design` with subjects taken in the given order (duplicates allowed).
/// Duplicates receive fresh ids `<id>#<k>`.
ExpandedDesign resample_subjects(const ExpandedDesign& design, const std::vector<std::size_t>& indices);

}  // namespace confound_em
