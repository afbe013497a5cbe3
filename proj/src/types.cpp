#include "tokenprobe/types.hpp"

#include <array>

namespace tokenprobe {
namespace {

constexpr std::array<std::string_view, 6> kCategoryNames = {
    "material", "object", "part", "scene", "texture", "image_class"};
constexpr std::array<std::string_view, 6> kTokenNames = {"q", "k", "v", "x1", "xn", "x2"};
constexpr std::array<std::string_view, 2> kSplitNames = {"train", "test"};
constexpr std::array<std::string_view, 2> kTaskNames = {"classification", "segmentation"};
constexpr std::array<std::string_view, 2> kRuleNames = {"hyperplane", "cosine"};

template <typename E, std::size_t N>
std::optional<E> lookup(const std::array<std::string_view, N>& names, std::string_view s) {
  for (std::size_t i = 0; i < N; ++i) {
    if (names[i] == s) return static_cast<E>(i);
  }
  return std::nullopt;
}

template <typename E, std::size_t N>
std::string_view name_of(const std::array<std::string_view, N>& names, E e) {
  const auto i = static_cast<std::size_t>(e);
  return i < N ? names[i] : std::string_view{"?"};
}

}  // namespace

std::string_view to_string(Category c) { return name_of(kCategoryNames, c); }
std::string_view to_string(TokenType t) { return name_of(kTokenNames, t); }
std::string_view to_string(Split s) { return name_of(kSplitNames, s); }
std::string_view to_string(Task t) { return name_of(kTaskNames, t); }
std::string_view to_string(DecisionRule r) { return name_of(kRuleNames, r); }

std::optional<Category> parse_category(std::string_view s) { return lookup<Category>(kCategoryNames, s); }
std::optional<TokenType> parse_token_type(std::string_view s) { return lookup<TokenType>(kTokenNames, s); }
std::optional<Split> parse_split(std::string_view s) { return lookup<Split>(kSplitNames, s); }
std::optional<Task> parse_task(std::string_view s) { return lookup<Task>(kTaskNames, s); }
std::optional<DecisionRule> parse_rule(std::string_view s) { return lookup<DecisionRule>(kRuleNames, s); }

}  // namespace tokenprobe
