#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"
#include "tokenprobe/fewshot.hpp"
#include "tokenprobe/metrics.hpp"
#include "tokenprobe/template_io.hpp"
#include "tokenprobe/templates.hpp"

namespace tokenprobe {

inline constexpr const char* kEngineVersion = "0.1.0";

struct ExperimentConfig {
  std::filesystem::path manifest;
  Task task = Task::classification;
  DecisionRule rule = DecisionRule::hyperplane;
  std::vector<TokenType> token_types;
  std::vector<std::string> model_tags;
  // Empty: every label of the task (image_class for classification, the
  // other categories for segmentation).
  std::vector<LabelId> concepts;
  std::vector<int> k_list{std::begin(kStandardShots), std::end(kStandardShots)};
  int trials = kStandardTrials;
  std::uint64_t master_seed = 0;
  TrainConfig train;
  double cap_ratio = 20.0;
  std::filesystem::path output_dir = "out";
  int workers = 1;

  void validate() const;
};

// Relative paths resolve against `base_dir`.
ExperimentConfig config_from_json(const nlohmann::json& j, const std::filesystem::path& base_dir = {});
nlohmann::json config_to_json(const ExperimentConfig& config);
ExperimentConfig load_config(const std::filesystem::path& path);

struct ReportCell {
  std::string model_tag;
  TokenType token_type = TokenType::x2;
  LabelId concept_id = 0;
  std::string concept_name;
  Category category = Category::object;
  std::optional<int> k;                   // cosine cells only
  std::optional<BalancedMetrics> metrics;  // hyperplane
  std::optional<TrialSummary> summary;     // cosine
  std::size_t infeasible_trials = 0;
  std::string skipped;

  bool ok() const { return skipped.empty(); }
  bool operator==(const ReportCell&) const = default;
};

struct CategoryRow {
  std::string model_tag;
  TokenType token_type = TokenType::x2;
  std::optional<int> k;
  Category category = Category::object;
  CategoryAggregate aggregate;

  bool operator==(const CategoryRow&) const = default;
};

struct ExperimentReport {
  std::string engine_version = kEngineVersion;
  std::string timestamp;
  nlohmann::json config;
  Task task = Task::classification;
  DecisionRule rule = DecisionRule::hyperplane;
  std::vector<ReportCell> cells;
  std::vector<CategoryRow> categories;

  std::vector<const ReportCell*> skipped() const;
  bool operator==(const ExperimentReport&) const = default;
};

// Validates the manifest, then probes every (model, token type, concept)
// cell, and for the cosine rule every k as well. Cells that fail are marked
// skipped; the run continues. Templates are returned through
// `templates_out` when given: one set per (model, token type) for the
// hyperplane rule, one per (model, token type, k) for cosine (first
// successful trial).
ExperimentReport run_experiment(const ExperimentConfig& config,
                                std::vector<std::pair<std::string, TemplateSet>>* templates_out = nullptr);

nlohmann::json report_to_json(const ExperimentReport& report);
ExperimentReport report_from_json(const nlohmann::json& j);
// One row per (model, token type, concept, [k,] metric) with mean and std.
// Hyperplane reports have no k column and an empty std.
std::string report_to_csv(const ExperimentReport& report);

enum class ReportFormat { json, csv };

// Writes <dir>/report.json or <dir>/report.csv and returns its path.
std::filesystem::path emit_report(const ExperimentReport& report, const std::filesystem::path& dir,
                                  ReportFormat format);
ExperimentReport load_report(const std::filesystem::path& path);

}  // namespace tokenprobe
