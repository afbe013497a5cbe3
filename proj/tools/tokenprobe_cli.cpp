// tokenprobe command line: manifest validation, template fitting, mask
// rendering and report conversion.

#include <filesystem>
#include <fstream>
#include <iostream>
#include <set>
#include <string>

#include "CLI11.hpp"
#include "json.hpp"
#include "tokenprobe/error.hpp"
#include "tokenprobe/manifest.hpp"
#include "tokenprobe/runner.hpp"
#include "tokenprobe/segmentation.hpp"
#include "tokenprobe/synthetic.hpp"
#include "tokenprobe/template_io.hpp"

namespace fs = std::filesystem;
using namespace tokenprobe;

namespace {

enum ExitCode { kOk = 0, kConfigError = 1, kDataError = 2, kPartial = 3 };

int exit_code_for(const ProbeError& e) { return e.code() == ErrorCode::config_error ? kConfigError : kDataError; }

int cmd_validate(const fs::path& manifest_path) {
  const Manifest manifest = load_manifest(manifest_path);
  const ManifestSummary s = validate_manifest(manifest);
  std::cout << "ok: " << s.files << " files\n";
  for (const auto& [model, dim] : s.dims) {
    const auto& g = manifest.grids.at(model);
    std::cout << "  " << model << ": D=" << dim << " grid=" << g.rows << "x" << g.cols
              << " train_images=" << (s.train_images.contains(model) ? s.train_images.at(model) : 0)
              << " test_images=" << (s.test_images.contains(model) ? s.test_images.at(model) : 0) << '\n';
  }
  return kOk;
}

int cmd_fit(const fs::path& config_path, DecisionRule rule) {
  std::ifstream in(config_path);
  if (!in) fail(ErrorCode::config_error, "cannot open config " + config_path.string());
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorCode::config_error, std::string("malformed config: ") + e.what());
  }
  if (j.contains("rule") && j["rule"] != to_string(rule)) {
    fail(ErrorCode::config_error, "config asks for rule " + j["rule"].dump() + " but this command fits " +
                                      std::string(to_string(rule)) + " templates");
  }
  j["rule"] = to_string(rule);
  const ExperimentConfig config = config_from_json(j, config_path.parent_path());

  std::vector<std::pair<std::string, TemplateSet>> templates;
  const ExperimentReport report = run_experiment(config, &templates);
  fs::create_directories(config.output_dir);
  const auto json_path = emit_report(report, config.output_dir, ReportFormat::json);
  emit_report(report, config.output_dir, ReportFormat::csv);
  for (const auto& [name, set] : templates) save_template_set(set, config.output_dir / name);

  const auto skipped = report.skipped();
  std::cout << "wrote " << json_path.string() << " (" << report.cells.size() << " cells, " << skipped.size()
            << " skipped, " << templates.size() << " template files)\n";
  for (const auto* c : skipped) std::cerr << "skipped: " << c->skipped << '\n';
  return skipped.empty() ? kOk : kPartial;
}

int cmd_render_masks(const fs::path& templates_path, const fs::path& manifest_path, const fs::path& out_dir,
                     std::size_t count) {
  const TemplateSet set = load_template_set(templates_path);
  const Manifest manifest = load_manifest(manifest_path);
  const ManifestEntry* entry = manifest.find(set.model_tag, set.token_type, Split::test);
  if (!entry) {
    fail(ErrorCode::manifest_inconsistent, "manifest has no test file for (" + set.model_tag + ", " +
                                               std::string(to_string(set.token_type)) + ")");
  }
  const auto grid_it = manifest.grids.find(set.model_tag);
  if (grid_it == manifest.grids.end()) fail(ErrorCode::manifest_inconsistent, "no grid for " + set.model_tag);
  const GridShape shape = grid_it->second;
  const std::uint32_t patch = shape.patch_size == 0 ? 1 : shape.patch_size;
  const PatchGrid grid = PatchGrid::covering(shape.rows, shape.cols, patch);

  const DatasetHandle handle = open_dataset(manifest.resolve(*entry));
  const auto selections = top_samples_by_iou(set.templates, handle, grid, count);

  fs::create_directories(out_dir);
  nlohmann::json summary = nlohmann::json::array();
  bool partial = false;
  for (std::size_t t = 0; t < set.templates.size(); ++t) {
    const auto& sel = selections[t];
    std::set<ImageId> wanted;
    nlohmann::json picks = nlohmann::json::array();
    for (const auto& s : sel.top) {
      wanted.insert(s.image_id);
      picks.push_back({{"image_id", s.image_id}, {"iou", s.iou}});
    }
    for (const auto& m : render_dataset_masks(set.templates[t], handle, grid)) {
      if (!wanted.contains(m.image_id)) continue;
      const BinaryMask pixels = shape.patch_size > 0 ? upsample_mask(m.predicted, grid) : m.predicted;
      write_pgm(pixels, out_dir / (std::to_string(sel.concept_id) + "_" + std::to_string(m.image_id) + ".pgm"));
    }
    if (sel.short_of_count) {
      partial = true;
      std::cerr << "concept " << sel.concept_id << ": only " << sel.top.size() << " images contain it\n";
    }
    summary.push_back({{"concept_id", sel.concept_id}, {"short_of_count", sel.short_of_count}, {"top", picks}});
  }
  std::ofstream(out_dir / "selection.json") << summary.dump(2) << '\n';
  std::cout << "wrote masks for " << set.templates.size() << " templates to " << out_dir.string() << '\n';
  return partial ? kPartial : kOk;
}

int cmd_report(const fs::path& in_dir, const std::string& format) {
  const ExperimentReport report = load_report(in_dir / "report.json");
  if (format == "csv") {
    std::cout << report_to_csv(report);
  } else {
    std::cout << report_to_json(report).dump(2) << '\n';
  }
  return kOk;
}

int cmd_synth(const std::string& kind, const fs::path& out_dir, std::uint64_t seed,
              const std::vector<std::string>& tokens) {
  std::vector<TokenType> token_types;
  for (const auto& t : tokens) {
    const auto parsed = parse_token_type(t);
    if (!parsed) fail(ErrorCode::config_error, "unknown token type " + t);
    token_types.push_back(*parsed);
  }
  fs::path manifest;
  if (kind == "classification") {
    synthetic::ClusterOptions o;
    o.seed = seed;
    o.token_types = token_types;
    o.train_per_class = 300;
    o.test_per_class = 300;
    manifest = synthetic::write_cluster_classification(out_dir, o);
  } else {
    synthetic::SegmentationOptions o;
    o.seed = seed;
    o.token_types = token_types;
    manifest = synthetic::write_patch_segmentation(out_dir, o);
  }
  std::cout << "wrote " << manifest.string() << '\n';
  return kOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"tokenprobe: concept-template probing of frozen ViT token features"};
  app.require_subcommand(1);

  std::string manifest_arg;
  auto* validate = app.add_subcommand("validate", "Check a manifest and every feature file it lists");
  validate->add_option("manifest", manifest_arg, "Manifest JSON")->required();

  std::string config_arg;
  auto* fit_h = app.add_subcommand("fit-hyperplane", "Fit and evaluate hyperplane templates");
  fit_h->add_option("--config", config_arg, "Experiment config JSON")->required();
  auto* fit_c = app.add_subcommand("fit-cosine", "Run the few-shot cosine template sweep");
  fit_c->add_option("--config", config_arg, "Experiment config JSON")->required();

  std::string templates_arg;
  std::string out_arg;
  std::size_t count = 5;
  auto* render = app.add_subcommand("render-masks", "Export PGM masks for the best-IoU test images");
  render->add_option("--templates", templates_arg, "Template set JSON")->required();
  render->add_option("--manifest", manifest_arg, "Manifest JSON")->required();
  render->add_option("--out", out_arg, "Output directory")->required();
  render->add_option("--count", count, "Images per concept")->capture_default_str();

  std::string in_arg;
  std::string format = "json";
  auto* report = app.add_subcommand("report", "Print a run's report as JSON or CSV");
  report->add_option("--in", in_arg, "Run output directory")->required();
  report->add_option("--format", format, "json or csv")->check(CLI::IsMember({"json", "csv"}));

  std::string kind = "classification";
  std::uint64_t seed = 0;
  std::vector<std::string> tokens{"x1", "x2"};
  auto* synth = app.add_subcommand("synth", "Write a synthetic feature dataset and manifest");
  synth->add_option("--kind", kind, "classification or segmentation")
      ->check(CLI::IsMember({"classification", "segmentation"}));
  synth->add_option("--out", out_arg, "Output directory")->required();
  synth->add_option("--seed", seed, "Generator seed");
  synth->add_option("--tokens", tokens, "Token types to write")->delimiter(',');

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? kOk : kConfigError;
  }

  try {
    if (*validate) return cmd_validate(manifest_arg);
    if (*fit_h) return cmd_fit(config_arg, DecisionRule::hyperplane);
    if (*fit_c) return cmd_fit(config_arg, DecisionRule::cosine);
    if (*render) return cmd_render_masks(templates_arg, manifest_arg, out_arg, count);
    if (*report) return cmd_report(in_arg, format);
    if (*synth) return cmd_synth(kind, out_arg, seed, tokens);
  } catch (const ProbeError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return exit_code_for(e);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kDataError;
  }
  return kOk;
}
