#include "tokenprobe/runner.hpp"

#include <algorithm>
#include <atomic>
#include <chrono>
#include <ctime>
#include <fstream>
#include <map>
#include <memory>
#include <mutex>
#include <sstream>
#include <thread>

#include "tokenprobe/error.hpp"
#include "tokenprobe/log.hpp"
#include "tokenprobe/manifest.hpp"
#include "tokenprobe/pools.hpp"

namespace tokenprobe {

using nlohmann::json;

namespace {

template <typename T, typename Parse>
T parse_enum(const json& j, const char* field, Parse parse) {
  const auto v = parse(j.get<std::string>());
  if (!v) fail(ErrorCode::config_error, std::string("invalid ") + field + ": " + j.dump());
  return *v;
}

std::filesystem::path resolve(const std::filesystem::path& base, const std::filesystem::path& p) {
  return p.is_absolute() || base.empty() ? p : base / p;
}

std::string utc_timestamp() {
  const std::time_t now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&now, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

json optional_number(const std::optional<double>& v) { return v ? json(*v) : json(nullptr); }

std::optional<double> number_or_null(const json& j) {
  if (j.is_null()) return std::nullopt;
  return j.get<double>();
}

json metrics_to_json(const BalancedMetrics& m) {
  json out;
  for (Metric k : kAllMetrics) out[to_string(k)] = optional_number(metric_ref(m, k));
  return out;
}

BalancedMetrics metrics_from_json(const json& j) {
  BalancedMetrics m;
  for (Metric k : kAllMetrics) metric_ref(m, k) = number_or_null(j.at(to_string(k)));
  return m;
}

Metric metric_from_string(const std::string& s) {
  for (Metric k : kAllMetrics) {
    if (s == to_string(k)) return k;
  }
  fail(ErrorCode::config_error, "unknown metric " + s);
}

json summary_to_json(const TrialSummary& s) {
  json metrics;
  for (const auto& [k, ms] : s.metrics) {
    metrics[to_string(k)] = {{"mean", optional_number(ms.mean)}, {"std", optional_number(ms.std)}, {"defined", ms.defined}};
  }
  return {{"n", s.n}, {"metrics", metrics}};
}

TrialSummary summary_from_json(const json& j) {
  TrialSummary s;
  s.n = j.at("n").get<std::size_t>();
  for (const auto& [name, ms] : j.at("metrics").items()) {
    s.metrics[metric_from_string(name)] = {number_or_null(ms.at("mean")), number_or_null(ms.at("std")),
                                           ms.at("defined").get<std::size_t>()};
  }
  return s;
}

std::string csv_number(const std::optional<double>& v) {
  if (!v) return "";
  std::ostringstream os;
  os.precision(17);
  os << *v;
  return os.str();
}

std::string csv_field(const std::string& s) {
  if (s.find_first_of(",\"\n") == std::string::npos) return s;
  std::string out = "\"";
  for (char c : s) {
    if (c == '"') out += '"';
    out += c;
  }
  return out + "\"";
}

struct OpenedPair {
  std::string model_tag;
  TokenType token_type;
  std::unique_ptr<DatasetHandle> train;
  std::unique_ptr<DatasetHandle> test;
  std::unique_ptr<FewShotData> fewshot;
  std::vector<LabelId> concepts;
};

std::vector<LabelId> concepts_for(const ExperimentConfig& config, const DatasetHandle& handle) {
  if (!config.concepts.empty()) return config.concepts;
  std::vector<LabelId> out;
  for (const auto& l : handle.labels()) {
    const bool is_class = l.category == Category::image_class;
    if (is_class == (config.task == Task::classification)) out.push_back(l.label_id);
  }
  return out;
}

// Runs fn(i) for i in [0, n) over `workers` threads. Results are written by
// index, so the merge order never depends on scheduling.
void parallel_for(std::size_t n, int workers, const std::function<void(std::size_t)>& fn) {
  const auto threads = static_cast<std::size_t>(std::max(1, workers));
  if (threads == 1 || n < 2) {
    for (std::size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::mutex error_mutex;
  std::exception_ptr error;
  std::vector<std::thread> pool;
  for (std::size_t t = 0; t < std::min(threads, n); ++t) {
    pool.emplace_back([&] {
      for (std::size_t i = next++; i < n; i = next++) {
        try {
          fn(i);
        } catch (...) {
          std::lock_guard<std::mutex> lock(error_mutex);
          if (!error) error = std::current_exception();
          next = n;
        }
      }
    });
  }
  for (auto& th : pool) th.join();
  if (error) std::rethrow_exception(error);
}

BalancedMetrics evaluate_hyperplane(const ConceptTemplate& tmpl, const DatasetHandle& test, Task task) {
  const ConceptMembership membership(test, tmpl.concept_id, task == Task::segmentation);
  ConfusionCounts c;
  test.for_each(RecordFilter::for_task(task), [&](const TokenRecord& r) {
    const bool pos = membership.is_positive(r);
    if (!pos && !membership.is_negative(r)) return;
    const bool pred = classify(tmpl, r.vector);
    if (pos) {
      pred ? ++c.tp : ++c.fn;
    } else {
      pred ? ++c.fp : ++c.tn;
    }
  });
  return balanced_metrics(c);
}

}  // namespace

void ExperimentConfig::validate() const {
  if (manifest.empty()) fail(ErrorCode::config_error, "manifest path is required");
  if (token_types.empty()) fail(ErrorCode::config_error, "token_types must not be empty");
  if (model_tags.empty()) fail(ErrorCode::config_error, "model_tags must not be empty");
  if (rule == DecisionRule::cosine) {
    if (k_list.empty()) fail(ErrorCode::config_error, "the cosine rule needs a non-empty k_list");
    if (std::any_of(k_list.begin(), k_list.end(), [](int k) { return k < 1; })) {
      fail(ErrorCode::config_error, "k values must be positive");
    }
    if (trials < 1) fail(ErrorCode::config_error, "trials must be positive");
  }
  if (train.mining_rounds < 1 || train.epochs_per_round < 1 || train.batch_size < 1 ||
      !(train.learning_rate > 0) || !(train.neg_pos_ratio > 0)) {
    fail(ErrorCode::config_error, "training hyperparameters must be positive");
  }
  if (workers < 1) fail(ErrorCode::config_error, "workers must be positive");
}

ExperimentConfig config_from_json(const json& j, const std::filesystem::path& base_dir) {
  ExperimentConfig c;
  try {
    c.manifest = resolve(base_dir, j.at("manifest").get<std::string>());
    c.task = parse_enum<Task>(j.at("task"), "task", parse_task);
    if (j.contains("rule")) c.rule = parse_enum<DecisionRule>(j.at("rule"), "rule", parse_rule);
    for (const auto& t : j.at("token_types")) c.token_types.push_back(parse_enum<TokenType>(t, "token_type", parse_token_type));
    c.model_tags = j.at("model_tags").get<std::vector<std::string>>();
    c.concepts = j.value("concepts", std::vector<LabelId>{});
    if (j.contains("k_list")) c.k_list = j.at("k_list").get<std::vector<int>>();
    c.trials = j.value("trials", c.trials);
    c.master_seed = j.value("master_seed", c.master_seed);
    c.cap_ratio = j.value("cap_ratio", c.cap_ratio);
    c.workers = j.value("workers", c.workers);
    c.output_dir = resolve(base_dir, j.value("output_dir", std::string("out")));
    if (j.contains("train")) {
      const auto& t = j.at("train");
      c.train.mining_rounds = t.value("mining_rounds", c.train.mining_rounds);
      c.train.epochs_per_round = t.value("epochs_per_round", c.train.epochs_per_round);
      c.train.neg_pos_ratio = t.value("neg_pos_ratio", c.train.neg_pos_ratio);
      c.train.learning_rate = t.value("learning_rate", c.train.learning_rate);
      c.train.batch_size = t.value("batch_size", c.train.batch_size);
      c.train.standardize = t.value("standardize", c.train.standardize);
    }
  } catch (const json::exception& e) {
    fail(ErrorCode::config_error, std::string("malformed config: ") + e.what());
  }
  c.validate();
  return c;
}

json config_to_json(const ExperimentConfig& c) {
  json tokens = json::array();
  for (auto t : c.token_types) tokens.push_back(to_string(t));
  return {{"manifest", c.manifest.generic_string()},
          {"task", to_string(c.task)},
          {"rule", to_string(c.rule)},
          {"token_types", tokens},
          {"model_tags", c.model_tags},
          {"concepts", c.concepts},
          {"k_list", c.k_list},
          {"trials", c.trials},
          {"master_seed", c.master_seed},
          {"cap_ratio", c.cap_ratio},
          {"workers", c.workers},
          {"output_dir", c.output_dir.generic_string()},
          {"train",
           {{"mining_rounds", c.train.mining_rounds},
            {"epochs_per_round", c.train.epochs_per_round},
            {"neg_pos_ratio", c.train.neg_pos_ratio},
            {"learning_rate", c.train.learning_rate},
            {"batch_size", c.train.batch_size},
            {"standardize", c.train.standardize}}}};
}

ExperimentConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) fail(ErrorCode::config_error, "cannot open config " + path.string());
  json j;
  try {
    j = json::parse(in);
  } catch (const json::exception& e) {
    fail(ErrorCode::config_error, "malformed config " + path.string() + ": " + e.what());
  }
  return config_from_json(j, path.parent_path());
}

std::vector<const ReportCell*> ExperimentReport::skipped() const {
  std::vector<const ReportCell*> out;
  for (const auto& c : cells) {
    if (!c.ok()) out.push_back(&c);
  }
  return out;
}

ExperimentReport run_experiment(const ExperimentConfig& config,
                                std::vector<std::pair<std::string, TemplateSet>>* templates_out) {
  config.validate();
  const Manifest manifest = load_manifest(config.manifest);
  validate_manifest(manifest);

  std::vector<OpenedPair> pairs;
  for (const auto& model : config.model_tags) {
    for (TokenType token : config.token_types) {
      const ManifestEntry* train = manifest.find(model, token, Split::train);
      const ManifestEntry* test = manifest.find(model, token, Split::test);
      if (!train || !test) {
        fail(ErrorCode::manifest_inconsistent, "manifest lacks train/test files for (" + model + ", " +
                                                   std::string(to_string(token)) + ")");
      }
      OpenedPair p{model, token, std::make_unique<DatasetHandle>(open_dataset(manifest.resolve(*train))),
                   std::make_unique<DatasetHandle>(open_dataset(manifest.resolve(*test))), nullptr, {}};
      p.concepts = concepts_for(config, *p.train);
      if (config.rule == DecisionRule::cosine) p.fewshot = std::make_unique<FewShotData>(*p.train, *p.test, config.task);
      pairs.push_back(std::move(p));
    }
  }

  struct Job {
    std::size_t pair;
    LabelId concept_id;
    std::optional<int> k;
  };
  std::vector<Job> jobs;
  for (std::size_t p = 0; p < pairs.size(); ++p) {
    for (LabelId concept_id : pairs[p].concepts) {
      if (config.rule == DecisionRule::hyperplane) {
        jobs.push_back({p, concept_id, std::nullopt});
      } else {
        for (int k : config.k_list) jobs.push_back({p, concept_id, k});
      }
    }
  }

  std::vector<ReportCell> cells(jobs.size());
  std::vector<std::optional<ConceptTemplate>> fitted(jobs.size());
  parallel_for(jobs.size(), config.workers, [&](std::size_t i) {
    const Job& job = jobs[i];
    const OpenedPair& pair = pairs[job.pair];
    ReportCell& cell = cells[i];
    cell.model_tag = pair.model_tag;
    cell.token_type = pair.token_type;
    cell.concept_id = job.concept_id;
    cell.k = job.k;
    try {
      const LabelEntry& label = pair.train->label(job.concept_id);
      cell.concept_name = label.name;
      cell.category = label.category;
      if (config.rule == DecisionRule::hyperplane) {
        PoolOptions options = PoolOptions::for_task(config.task, derive_seed({config.master_seed, job.concept_id, 0}));
        options.cap_ratio = config.cap_ratio;
        const SamplePools pools = build_pools(*pair.train, job.concept_id, options);
        TrainConfig train = config.train;
        train.seed = derive_seed({config.master_seed, job.concept_id, 1});
        ConceptTemplate tmpl = fit_hyperplane(pools, train);
        cell.metrics = evaluate_hyperplane(tmpl, *pair.test, config.task);
        fitted[i] = std::move(tmpl);
      } else {
        TrialRun run = run_trials(*pair.fewshot, job.concept_id, *job.k, config.trials, config.master_seed);
        cell.summary = run.summary;
        cell.infeasible_trials = run.infeasible;
        for (auto& t : run.trials) {
          if (t.tmpl) {
            fitted[i] = std::move(t.tmpl);
            break;
          }
        }
      }
    } catch (const ProbeError& e) {
      if (e.code() == ErrorCode::manifest_inconsistent) throw;
      cell.skipped = e.what();
      log_warning(cell.model_tag + "/" + std::string(to_string(cell.token_type)) + " concept " +
                  std::to_string(cell.concept_id) + ": " + cell.skipped);
    }
  });

  ExperimentReport report;
  report.timestamp = utc_timestamp();
  report.config = config_to_json(config);
  report.task = config.task;
  report.rule = config.rule;
  report.cells = std::move(cells);

  // Category aggregates per (model, token type[, k]) in cell order.
  std::vector<std::tuple<std::string, TokenType, std::optional<int>>> groups;
  std::map<std::tuple<std::string, TokenType, std::optional<int>>, std::map<LabelId, BalancedMetrics>> per_group;
  for (const auto& cell : report.cells) {
    auto key = std::make_tuple(cell.model_tag, cell.token_type, cell.k);
    if (!per_group.contains(key)) groups.push_back(key);
    auto& bucket = per_group[key];
    if (!cell.ok()) continue;
    bucket[cell.concept_id] = cell.metrics ? *cell.metrics : cell.summary->means();
  }
  for (const auto& key : groups) {
    const auto& [model, token, k] = key;
    const auto it = std::find_if(pairs.begin(), pairs.end(),
                                 [&](const OpenedPair& p) { return p.model_tag == model && p.token_type == token; });
    for (const auto& [category, agg] : aggregate_by_category(per_group[key], it->train->labels())) {
      report.categories.push_back({model, token, k, category, agg});
    }
  }

  if (templates_out) {
    std::map<std::string, std::size_t> slot;
    for (std::size_t i = 0; i < jobs.size(); ++i) {
      if (!fitted[i]) continue;
      const auto& pair = pairs[jobs[i].pair];
      std::string name = "templates_" + pair.model_tag + "_" + std::string(to_string(pair.token_type));
      if (jobs[i].k) name += "_k" + std::to_string(*jobs[i].k);
      name += ".json";
      auto [it, fresh] = slot.emplace(name, templates_out->size());
      if (fresh) templates_out->push_back({name, TemplateSet{pair.model_tag, pair.token_type, config.task, {}}});
      (*templates_out)[it->second].second.templates.push_back(*fitted[i]);
    }
  }
  return report;
}

json report_to_json(const ExperimentReport& r) {
  json cells = json::array();
  for (const auto& c : r.cells) {
    json j = {{"model_tag", c.model_tag},
              {"token_type", to_string(c.token_type)},
              {"concept_id", c.concept_id},
              {"concept_name", c.concept_name},
              {"category", to_string(c.category)},
              {"k", c.k ? json(*c.k) : json(nullptr)},
              {"metrics", c.metrics ? metrics_to_json(*c.metrics) : json(nullptr)},
              {"summary", c.summary ? summary_to_json(*c.summary) : json(nullptr)},
              {"infeasible_trials", c.infeasible_trials},
              {"skipped", c.ok() ? json(nullptr) : json(c.skipped)}};
    cells.push_back(std::move(j));
  }
  json categories = json::array();
  for (const auto& row : r.categories) {
    json excluded = json::object();
    for (const auto& [m, n] : row.aggregate.excluded) excluded[to_string(m)] = n;
    categories.push_back({{"model_tag", row.model_tag},
                          {"token_type", to_string(row.token_type)},
                          {"k", row.k ? json(*row.k) : json(nullptr)},
                          {"category", to_string(row.category)},
                          {"concepts", row.aggregate.concepts},
                          {"mean", metrics_to_json(row.aggregate.mean)},
                          {"excluded", excluded}});
  }
  json skipped = json::array();
  for (const auto* c : r.skipped()) {
    skipped.push_back({{"model_tag", c->model_tag},
                       {"token_type", to_string(c->token_type)},
                       {"concept_id", c->concept_id},
                       {"k", c->k ? json(*c->k) : json(nullptr)},
                       {"reason", c->skipped}});
  }
  return {{"engine_version", r.engine_version},
          {"timestamp", r.timestamp},
          {"task", to_string(r.task)},
          {"rule", to_string(r.rule)},
          {"config", r.config},
          {"cells", cells},
          {"categories", categories},
          {"skipped", skipped}};
}

ExperimentReport report_from_json(const json& j) {
  ExperimentReport r;
  try {
    r.engine_version = j.at("engine_version").get<std::string>();
    r.timestamp = j.at("timestamp").get<std::string>();
    r.task = parse_enum<Task>(j.at("task"), "task", parse_task);
    r.rule = parse_enum<DecisionRule>(j.at("rule"), "rule", parse_rule);
    r.config = j.at("config");
    for (const auto& c : j.at("cells")) {
      ReportCell cell;
      cell.model_tag = c.at("model_tag").get<std::string>();
      cell.token_type = parse_enum<TokenType>(c.at("token_type"), "token_type", parse_token_type);
      cell.concept_id = c.at("concept_id").get<LabelId>();
      cell.concept_name = c.at("concept_name").get<std::string>();
      cell.category = parse_enum<Category>(c.at("category"), "category", parse_category);
      if (!c.at("k").is_null()) cell.k = c.at("k").get<int>();
      if (!c.at("metrics").is_null()) cell.metrics = metrics_from_json(c.at("metrics"));
      if (!c.at("summary").is_null()) cell.summary = summary_from_json(c.at("summary"));
      cell.infeasible_trials = c.at("infeasible_trials").get<std::size_t>();
      if (!c.at("skipped").is_null()) cell.skipped = c.at("skipped").get<std::string>();
      r.cells.push_back(std::move(cell));
    }
    for (const auto& c : j.at("categories")) {
      CategoryRow row;
      row.model_tag = c.at("model_tag").get<std::string>();
      row.token_type = parse_enum<TokenType>(c.at("token_type"), "token_type", parse_token_type);
      if (!c.at("k").is_null()) row.k = c.at("k").get<int>();
      row.category = parse_enum<Category>(c.at("category"), "category", parse_category);
      row.aggregate.concepts = c.at("concepts").get<std::size_t>();
      row.aggregate.mean = metrics_from_json(c.at("mean"));
      for (const auto& [name, n] : c.at("excluded").items()) {
        row.aggregate.excluded[metric_from_string(name)] = n.get<std::size_t>();
      }
      r.categories.push_back(std::move(row));
    }
  } catch (const json::exception& e) {
    fail(ErrorCode::config_error, std::string("malformed report: ") + e.what());
  }
  return r;
}

std::string report_to_csv(const ExperimentReport& r) {
  const bool with_k = r.rule == DecisionRule::cosine;
  std::ostringstream os;
  os << "model_tag,token_type,concept_id,concept_name,category," << (with_k ? "k," : "") << "metric,mean,std\n";
  for (const auto& c : r.cells) {
    if (!c.ok()) continue;
    for (Metric m : kAllMetrics) {
      os << csv_field(c.model_tag) << ',' << to_string(c.token_type) << ',' << c.concept_id << ','
         << csv_field(c.concept_name) << ',' << to_string(c.category) << ',';
      if (with_k) os << (c.k ? std::to_string(*c.k) : "") << ',';
      os << to_string(m) << ',';
      if (c.metrics) {
        os << csv_number(metric_ref(*c.metrics, m)) << ",\n";
      } else {
        const auto& s = c.summary->metrics.at(m);
        os << csv_number(s.mean) << ',' << csv_number(s.std) << '\n';
      }
    }
  }
  return os.str();
}

std::filesystem::path emit_report(const ExperimentReport& report, const std::filesystem::path& dir,
                                  ReportFormat format) {
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  const auto path = dir / (format == ReportFormat::json ? "report.json" : "report.csv");
  std::ofstream out(path);
  if (!out) fail(ErrorCode::io_failure, "cannot write " + path.string());
  if (format == ReportFormat::json) {
    out << report_to_json(report).dump(2) << '\n';
  } else {
    out << report_to_csv(report);
  }
  if (!out) fail(ErrorCode::io_failure, "write failed on " + path.string());
  return path;
}

ExperimentReport load_report(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) fail(ErrorCode::io_failure, "cannot open " + path.string());
  try {
    return report_from_json(json::parse(in));
  } catch (const json::exception& e) {
    fail(ErrorCode::config_error, "malformed report " + path.string() + ": " + e.what());
  }
}

}  // namespace tokenprobe
