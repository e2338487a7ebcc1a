#pragma once

#include <algorithm>
#include <cctype>
#include <filesystem>
#include <set>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "lmprior/dataset.hpp"
#include "lmprior/errors.hpp"
#include "lmprior/gateway.hpp"

namespace lmprior {

enum class RoleKind { system, user };

inline std::string to_string(RoleKind kind) {
  return kind == RoleKind::system ? "system" : "user";
}

/// A role template.  May contain the placeholders {feature_names},
/// {target_name} and {expert_info}; anything else in braces must not look
/// like a placeholder.
struct RoleText {
  RoleKind kind = RoleKind::system;
  std::string text;
};

/// A fully resolved prompt pair, tagged with which system/user variants
/// produced it.
struct TaskDescription {
  std::string system;
  std::string user;
  std::pair<int, int> origin{0, 0};
};

/// An unresolved pairing of role templates, as produced by `cartesian`.
struct RolePair {
  RoleText system;
  RoleText user;
  std::pair<int, int> origin{0, 0};
};

inline const std::set<std::string>& known_placeholders() {
  static const std::set<std::string> names{"feature_names", "target_name", "expert_info"};
  return names;
}

namespace detail {

inline bool is_placeholder_char(char c) {
  return (c >= 'a' && c <= 'z') || c == '_';
}

/// Calls `visit(name, begin, end)` for each {lowercase_name} span in text.
template <class Visitor>
void scan_placeholders(std::string_view text, Visitor&& visit) {
  std::size_t i = 0;
  while (i < text.size()) {
    if (text[i] != '{') {
      ++i;
      continue;
    }
    std::size_t j = i + 1;
    while (j < text.size() && is_placeholder_char(text[j])) ++j;
    if (j > i + 1 && j < text.size() && text[j] == '}') {
      visit(std::string(text.substr(i + 1, j - i - 1)), i, j + 1);
      i = j + 1;
    } else {
      ++i;
    }
  }
}

}  // namespace detail

inline std::set<std::string> extract_placeholders(std::string_view text) {
  std::set<std::string> found;
  detail::scan_placeholders(text, [&](const std::string& name, std::size_t, std::size_t) {
    found.insert(name);
  });
  return found;
}

inline void validate_role(const RoleText& role) {
  if (role.text.empty()) throw TemplateError("role template is empty");
  for (const auto& name : extract_placeholders(role.text)) {
    if (!known_placeholders().count(name)) {
      throw TemplateError("unknown placeholder {" + name + "} in role template");
    }
  }
}

/// Bracketed, single-quoted list: ['feature 0', 'feature 1', 'feature 2'].
inline std::string render_feature_list(const std::vector<std::string>& names) {
  std::string out = "[";
  for (std::size_t i = 0; i < names.size(); ++i) {
    if (i > 0) out += ", ";
    out += "'" + names[i] + "'";
  }
  out += "]";
  return out;
}

/// Substitute every placeholder.  {expert_info} resolves to the given text
/// plus a separating space when non-empty, or to nothing when absent, so the
/// surrounding sentences stay well spaced either way.
inline std::string fill_template(std::string_view text,
                                 const std::vector<std::string>& feature_names,
                                 const std::string& target_name,
                                 const std::string& expert_info = "") {
  std::string expert = expert_info;
  if (!expert.empty() && !std::isspace(static_cast<unsigned char>(expert.back()))) {
    expert += " ";
  }
  std::string out;
  out.reserve(text.size());
  std::size_t copied = 0;
  detail::scan_placeholders(text, [&](const std::string& name, std::size_t begin,
                                      std::size_t end) {
    out.append(text.substr(copied, begin - copied));
    if (name == "feature_names") {
      out += render_feature_list(feature_names);
    } else if (name == "target_name") {
      out += target_name;
    } else if (name == "expert_info") {
      out += expert;
    } else {
      throw TemplateError("unknown placeholder {" + name + "}");
    }
    copied = end;
  });
  out.append(text.substr(copied));
  return out;
}

/// Row-major pairing of every system variant with every user variant.
inline std::vector<RolePair> cartesian(const std::vector<RoleText>& systems,
                                       const std::vector<RoleText>& users) {
  if (systems.empty() || users.empty()) {
    throw ArgumentError("cartesian: both role lists must be non-empty");
  }
  std::vector<RolePair> out;
  out.reserve(systems.size() * users.size());
  for (std::size_t s = 0; s < systems.size(); ++s) {
    for (std::size_t u = 0; u < users.size(); ++u) {
      out.push_back({systems[s], users[u], {static_cast<int>(s), static_cast<int>(u)}});
    }
  }
  return out;
}

inline TaskDescription fill(const RolePair& pair, const std::vector<std::string>& feature_names,
                            const std::string& target_name, const std::string& expert_info = "") {
  TaskDescription desc;
  desc.system = fill_template(pair.system.text, feature_names, target_name, expert_info);
  desc.user = fill_template(pair.user.text, feature_names, target_name, expert_info);
  desc.origin = pair.origin;
  return desc;
}

inline std::vector<TaskDescription> fill_all(const std::vector<RolePair>& pairs,
                                             const std::vector<std::string>& feature_names,
                                             const std::string& target_name,
                                             const std::string& expert_info = "") {
  std::vector<TaskDescription> out;
  out.reserve(pairs.size());
  for (const auto& p : pairs) out.push_back(fill(p, feature_names, target_name, expert_info));
  return out;
}

// Paraphrase instruction, version 1.  Keep in sync with
// assets/prompts/paraphrase_v1.txt; changing the wording changes every cache
// key downstream.
inline constexpr std::string_view kParaphraseSystemV1 =
    "You rewrite prompt text. Rephrase the text you are given while keeping its meaning. "
    "Preserve every placeholder token of the form {name} exactly as written. "
    "Respond with only the rephrased text.";

/// The text to paraphrase always sits after the first blank line; retries
/// rewrite only the instruction ahead of it so mocks and caches key off a
/// message whose tail is still the literal base text.
inline std::string paraphrase_user_message_v1(const std::string& base_text, int variant,
                                              int n_variants, int attempt = 0) {
  std::string instruction =
      "Rephrase the following text, preserving every placeholder token exactly. "
      "Produce wording distinct from other variants (this is variant " +
      std::to_string(variant) + " of " + std::to_string(n_variants) + ").";
  if (attempt > 0) {
    instruction += " A previous attempt altered the placeholder tokens; keep each one exactly as "
                   "written (retry " +
                   std::to_string(attempt) + ").";
  }
  return instruction + "\n\n" + base_text;
}

struct ExpandOptions {
  std::string model_id;
  double temperature = 0.1;
  int reject_retry_limit = 3;
};

namespace detail {

inline std::string trim_copy(std::string_view s) {
  std::size_t b = 0;
  std::size_t e = s.size();
  while (b < e && std::isspace(static_cast<unsigned char>(s[b]))) ++b;
  while (e > b && std::isspace(static_cast<unsigned char>(s[e - 1]))) --e;
  return std::string(s.substr(b, e - b));
}

}  // namespace detail

/// n_variants role texts: index 0 is the unmodified base, the rest are LLM
/// paraphrases.  A paraphrase whose placeholder set differs from the base is
/// rejected and re-requested; persistent failure raises ExpansionError.
inline std::vector<RoleText> expand_role(const RoleText& base, int n_variants, Gateway& gateway,
                                         const ExpandOptions& options) {
  if (n_variants < 1) throw ArgumentError("expand_role: n_variants must be >= 1");
  validate_role(base);
  const std::set<std::string> required = extract_placeholders(base.text);

  std::vector<RoleText> out;
  out.reserve(n_variants);
  out.push_back(base);
  for (int v = 1; v < n_variants; ++v) {
    ChatRequest request;
    request.model_id = options.model_id;
    request.temperature = options.temperature;
    request.messages = {{"system", std::string(kParaphraseSystemV1)},
                        {"user", paraphrase_user_message_v1(base.text, v, n_variants)}};
    bool accepted = false;
    for (int attempt = 0; attempt <= options.reject_retry_limit && !accepted; ++attempt) {
      if (attempt > 0) {
        request.messages.back().content =
            paraphrase_user_message_v1(base.text, v, n_variants, attempt);
      }
      const std::string reply = detail::trim_copy(gateway.complete(request));
      if (!reply.empty() && extract_placeholders(reply) == required) {
        out.push_back({base.kind, reply});
        accepted = true;
      }
    }
    if (!accepted) {
      throw ExpansionError("paraphrase for " + to_string(base.kind) + " variant " +
                           std::to_string(v) + " kept failing placeholder checks");
    }
  }
  return out;
}

/// Human-written base roles.  With target_name "target" these resolve to the
/// canonical worked example for the synthetic task.
inline RoleText base_system_role(TaskKind kind) {
  if (kind == TaskKind::regression) {
    return {RoleKind::system,
            "You're a linear regression predictor, estimating the {target_name} based on some "
            "input features. {expert_info}Use this to predict the {target_name} value."};
  }
  return {RoleKind::system,
          "You're a logistic regression predictor, estimating the probability that the "
          "{target_name} is positive based on some input features. {expert_info}Use this to "
          "predict the {target_name}."};
}

inline RoleText base_user_role(TaskKind kind) {
  if (kind == TaskKind::regression) {
    return {
        RoleKind::user,
        "I am a data scientist working with a dataset for a prediction task using feature "
        "values to predict a {target_name}. I would like to apply your model to predict the "
        "{target_name} for my samples. My dataset consists of these features: "
        "{feature_names}. All the values have been standardised using z-scores. "
        "{expert_info}Based on the correlation between each feature and {target_name}, "
        "whether positive or negative, please guess the mean and standard deviation for a "
        "normal distribution prior for each feature. I need this for creating a linear "
        "regression model to predict the {target_name}. Provide your response as a JSON "
        "object with the feature names as keys, each containing a nested dictionary for the "
        "mean and standard deviation. A positive mean suggests positive correlation with the "
        "outcome, negative for negative correlation, and a smaller standard deviation "
        "indicates higher confidence. Only respond with JSON."};
  }
  return {
      RoleKind::user,
      "I am a data scientist working with a dataset for a classification task using feature "
      "values to predict a {target_name}. I would like to apply your model to predict the "
      "{target_name} for my samples. My dataset consists of these features: {feature_names}. "
      "All the values have been standardised using z-scores. {expert_info}Based on the "
      "correlation between each feature and {target_name}, whether positive or negative, "
      "please guess the mean and standard deviation for a normal distribution prior for each "
      "feature. I need this for creating a logistic regression model to predict the "
      "{target_name}. Provide your response as a JSON object with the feature names as keys, "
      "each containing a nested dictionary for the mean and standard deviation. A positive "
      "mean suggests positive correlation with the outcome, negative for negative "
      "correlation, and a smaller standard deviation indicates higher confidence. Only "
      "respond with JSON."};
}

/// Expert-information presets for the synthetic task, ordered from least to
/// most informative.
inline const std::vector<std::pair<std::string, std::string>>& graded_synthetic_presets() {
  static const std::vector<std::pair<std::string, std::string>> presets{
      {"linear_relationship", "The target is linear in features"},
      {"one_feature_relationship",
       "The target is a linear combination of the features and that when 'feature 0' "
       "increases by 1, the target increases by 2"},
      {"two_feature_relationships",
       "The target is a linear combination of the features and that when 'feature 0' "
       "increases by 1, the target increases by 2, and when 'feature 1' increases by 1, the "
       "target decreases by 1"},
      {"three_feature_relationships",
       "The target is a linear combination of the features and that when 'feature 0' "
       "increases by 1, the target increases by 2, and when 'feature 1' increases by 1, the "
       "target decreases by 1, and when 'feature 2' increases by 1, the target increases by "
       "1"},
      {"full_equation", "The 'target' = 2 * 'feature 0' - 1 * 'feature 1' + 1 * 'feature 2'"}};
  return presets;
}

inline std::string graded_preset(const std::string& name) {
  for (const auto& [preset_name, text] : graded_synthetic_presets()) {
    if (preset_name == name) return text;
  }
  throw ConfigError("unknown graded preset '" + name + "'");
}

/// Role assets live one role per file as <dir>/<dataset_id>/<kind>_<index>.txt.
inline void save_role_assets(const std::filesystem::path& dir, const std::string& dataset_id,
                             const std::vector<RoleText>& roles) {
  for (std::size_t i = 0; i < roles.size(); ++i) {
    const auto path =
        dir / dataset_id / (to_string(roles[i].kind) + "_" + std::to_string(i) + ".txt");
    write_text_file(path, roles[i].text);
  }
}

inline std::vector<RoleText> load_role_assets(const std::filesystem::path& dir,
                                              const std::string& dataset_id, RoleKind kind) {
  std::vector<RoleText> roles;
  for (int i = 0;; ++i) {
    const auto path = dir / dataset_id / (to_string(kind) + "_" + std::to_string(i) + ".txt");
    std::error_code ec;
    if (!std::filesystem::exists(path, ec)) break;
    roles.push_back({kind, read_text_file(path)});
  }
  if (roles.empty()) {
    throw ConfigError("no " + to_string(kind) + " role assets found under " +
                      (dir / dataset_id).string());
  }
  return roles;
}

}  // namespace lmprior
