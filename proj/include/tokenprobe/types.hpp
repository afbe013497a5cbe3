#pragma once

#include <cstdint>
#include <limits>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace tokenprobe {

using LabelId = std::uint32_t;
using ImageId = std::uint32_t;
using Vector = std::vector<float>;

enum class Category : std::uint8_t {
  material = 0,
  object = 1,
  part = 2,
  scene = 3,
  texture = 4,
  image_class = 5,
};

// Final-layer tap points. xn is x1 after the final layer norm.
enum class TokenType : std::uint8_t { q = 0, k = 1, v = 2, x1 = 3, xn = 4, x2 = 5 };

enum class Split : std::uint8_t { train = 0, test = 1 };

// Classification probes CLS tokens; segmentation probes patch tokens.
enum class Task : std::uint8_t { classification = 0, segmentation = 1 };

enum class DecisionRule : std::uint8_t { hyperplane = 0, cosine = 1 };

std::string_view to_string(Category c);
std::string_view to_string(TokenType t);
std::string_view to_string(Split s);
std::string_view to_string(Task t);
std::string_view to_string(DecisionRule r);

std::optional<Category> parse_category(std::string_view s);
std::optional<TokenType> parse_token_type(std::string_view s);
std::optional<Split> parse_split(std::string_view s);
std::optional<Task> parse_task(std::string_view s);
std::optional<DecisionRule> parse_rule(std::string_view s);

}  // namespace tokenprobe
