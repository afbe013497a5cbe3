#include "tokenprobe/template_io.hpp"

#include <fstream>

#include "tokenprobe/error.hpp"

namespace tokenprobe {

using nlohmann::json;

json template_to_json(const ConceptTemplate& t) {
  json meta = {{"seed", t.metadata.seed}};
  if (t.rule == DecisionRule::hyperplane) {
    meta["rounds"] = t.metadata.rounds;
    meta["epochs"] = t.metadata.epochs;
  } else {
    meta["k"] = t.metadata.k;
    meta["trial"] = t.metadata.trial;
  }
  // floats widen to double exactly and dump with round-trip precision
  return {{"concept_id", t.concept_id},
          {"rule", to_string(t.rule)},
          {"threshold", t.threshold},
          {"direction", t.direction},
          {"metadata", meta}};
}

ConceptTemplate template_from_json(const json& j) {
  ConceptTemplate t;
  t.concept_id = j.at("concept_id").get<LabelId>();
  const auto rule = parse_rule(j.at("rule").get<std::string>());
  if (!rule) fail(ErrorCode::config_error, "unknown rule " + j.at("rule").dump());
  t.rule = *rule;
  t.threshold = j.at("threshold").get<double>();
  t.direction = j.at("direction").get<Vector>();
  const auto& meta = j.at("metadata");
  t.metadata.seed = meta.value("seed", std::uint64_t{0});
  t.metadata.rounds = meta.value("rounds", 0);
  t.metadata.epochs = meta.value("epochs", 0);
  t.metadata.k = meta.value("k", 0);
  t.metadata.trial = meta.value("trial", -1);
  return t;
}

void save_template_set(const TemplateSet& set, const std::filesystem::path& path) {
  json doc = {{"model_tag", set.model_tag},
              {"token_type", to_string(set.token_type)},
              {"task", to_string(set.task)},
              {"templates", json::array()}};
  for (const auto& t : set.templates) doc["templates"].push_back(template_to_json(t));
  std::ofstream out(path);
  if (!out) fail(ErrorCode::io_failure, "cannot write " + path.string());
  out << doc.dump(1) << '\n';
}

TemplateSet load_template_set(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) fail(ErrorCode::config_error, "cannot open " + path.string());
  TemplateSet set;
  try {
    const json doc = json::parse(in);
    set.model_tag = doc.at("model_tag").get<std::string>();
    const auto token = parse_token_type(doc.at("token_type").get<std::string>());
    const auto task = parse_task(doc.at("task").get<std::string>());
    if (!token || !task) fail(ErrorCode::config_error, path.string() + ": bad token_type or task");
    set.token_type = *token;
    set.task = *task;
    for (const auto& t : doc.at("templates")) set.templates.push_back(template_from_json(t));
  } catch (const json::exception& e) {
    fail(ErrorCode::config_error, "malformed template file " + path.string() + ": " + e.what());
  }
  return set;
}

}  // namespace tokenprobe
