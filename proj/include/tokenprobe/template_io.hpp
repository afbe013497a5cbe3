#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "json.hpp"
#include "tokenprobe/templates.hpp"

namespace tokenprobe {

// Templates fitted on one (model, token type).
struct TemplateSet {
  std::string model_tag;
  TokenType token_type = TokenType::x2;
  Task task = Task::classification;
  std::vector<ConceptTemplate> templates;

  bool operator==(const TemplateSet&) const = default;
};

nlohmann::json template_to_json(const ConceptTemplate& t);
ConceptTemplate template_from_json(const nlohmann::json& j);

void save_template_set(const TemplateSet& set, const std::filesystem::path& path);
TemplateSet load_template_set(const std::filesystem::path& path);

}  // namespace tokenprobe
