#pragma once

#include <cctype>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

#include "lmprior/dataset.hpp"
#include "lmprior/errors.hpp"
#include "lmprior/gateway.hpp"
#include "lmprior/math.hpp"
#include "lmprior/prompts.hpp"

namespace lmprior {

namespace mockdetail {

/// Feature names as rendered by render_feature_list: ['a', 'b', 'c'].
inline std::vector<std::string> parse_feature_list(std::string_view text) {
  const auto marker = text.find("features: [");
  if (marker == std::string_view::npos) return {};
  std::size_t i = marker + std::string_view("features: [").size();
  std::vector<std::string> names;
  while (i < text.size() && text[i] != ']') {
    if (text[i] == '\'') {
      const auto close = text.find('\'', i + 1);
      if (close == std::string_view::npos) break;
      names.emplace_back(text.substr(i + 1, close - i - 1));
      i = close + 1;
    } else {
      ++i;
    }
  }
  return names;
}

/// Numeric rows rendered as "features: [v1, v2, ...]", optionally followed
/// by " -> label: y".  Returns one row of values per matching line.
inline std::vector<std::vector<double>> parse_numeric_rows(std::string_view text,
                                                           bool with_label,
                                                           std::vector<double>* labels) {
  std::vector<std::vector<double>> rows;
  std::size_t pos = 0;
  while (pos < text.size()) {
    auto eol = text.find('\n', pos);
    if (eol == std::string_view::npos) eol = text.size();
    const std::string_view line = text.substr(pos, eol - pos);
    pos = eol + 1;
    const auto open = line.find("features: [");
    if (open == std::string_view::npos) continue;
    const bool has_label = line.find("-> label:") != std::string_view::npos;
    if (has_label != with_label) continue;
    const auto close = line.find(']', open);
    if (close == std::string_view::npos) continue;
    std::vector<double> row;
    std::string cell;
    for (std::size_t i = open + std::string_view("features: [").size(); i <= close; ++i) {
      const char c = line[i];
      if (c == ',' || c == ']') {
        if (!cell.empty()) row.push_back(std::strtod(cell.c_str(), nullptr));
        cell.clear();
      } else if (!std::isspace(static_cast<unsigned char>(c))) {
        cell.push_back(c);
      }
    }
    if (row.empty()) continue;
    if (with_label && labels) {
      const auto label_pos = line.find("-> label:");
      labels->push_back(
          std::strtod(std::string(line.substr(label_pos + 9)).c_str(), nullptr));
    }
    rows.push_back(std::move(row));
  }
  return rows;
}

inline std::string render_number(double x) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.6f", x);
  return buf;
}

inline std::string predictions_json(const std::vector<double>& values) {
  std::string out = "{\"predictions\": [";
  for (std::size_t i = 0; i < values.size(); ++i) {
    if (i > 0) out += ", ";
    out += render_number(values[i]);
  }
  out += "]}";
  return out;
}

inline std::string elicitation_json(const std::vector<std::string>& names,
                                    const std::vector<std::pair<double, double>>& values) {
  nlohmann::json reply;
  for (std::size_t i = 0; i < names.size(); ++i) {
    const auto& [mean, std_dev] = i < values.size() ? values[i] : std::pair{0.0, 1.0};
    reply[names[i]] = {{"mean", mean}, {"std", std_dev}};
  }
  return reply.dump();
}

inline const std::string& last_user_content(const ChatRequest& request) {
  for (auto it = request.messages.rbegin(); it != request.messages.rend(); ++it) {
    if (it->role == "user") return it->content;
  }
  throw ArgumentError("mock: request has no user message");
}

inline std::string all_user_content(const ChatRequest& request) {
  std::string out;
  for (const auto& m : request.messages) {
    if (m.role == "user") out += m.content + "\n";
  }
  return out;
}

/// Echo continuation for the header test: locate the shown text's tail in
/// the dataset and return what follows it.
inline std::string header_echo(const std::string& dataset_text, std::string_view user_message) {
  static constexpr std::string_view kMarker = "continuing this file:\n\n";
  const auto at = user_message.find(kMarker);
  if (at == std::string_view::npos) return "";
  const std::string shown(user_message.substr(at + kMarker.size()));
  const auto where = dataset_text.find(shown);
  if (where == std::string::npos) return "";
  return dataset_text.substr(where + shown.size());
}

/// Echo for the row test: find the last shown row among the dataset lines
/// and return the row after it.
inline std::string row_echo(const std::string& dataset_text, std::string_view user_message) {
  const auto lines = split_lines(dataset_text);
  std::vector<std::string> shown;
  std::size_t pos = 0;
  const std::string msg(user_message);
  while (pos < msg.size()) {
    auto eol = msg.find('\n', pos);
    if (eol == std::string::npos) eol = msg.size();
    const std::string line = msg.substr(pos, eol - pos);
    if (!line.empty() && line.find(',') != std::string::npos) shown.push_back(line);
    pos = eol + 1;
  }
  if (shown.empty()) return "";
  const std::string& last_row = shown.back();
  for (std::size_t i = 0; i + 1 < lines.size(); ++i) {
    if (lines[i] == last_row) return lines[i + 1];
  }
  return "";
}

}  // namespace mockdetail

/// Behavior of the built-in deterministic mock provider:
///   sharp_synthetic       sharp correct priors for the synthetic task and
///                         true-rule probe predictions
///   uninformative         N(0,1) priors, zero/0.5 probe predictions
///   sharp_elicit_flat_icl sharp priors but uninformative in-context
///                         predictions (for model-selection orderings)
///   echo                  dataset-echoing memorisation behaviour
///   garbage               unrelated memorisation completions
/// All behaviors answer paraphrase requests with a numbered rewording that
/// keeps placeholders intact.
inline Gateway::MockHandler make_named_mock(const std::string& behavior,
                                            TaskKind task_kind = TaskKind::regression,
                                            std::string dataset_text = "") {
  const bool known = behavior == "sharp_synthetic" || behavior == "uninformative" ||
                     behavior == "sharp_elicit_flat_icl" || behavior == "echo" ||
                     behavior == "garbage";
  if (!known) throw ConfigError("unknown mock behavior '" + behavior + "'");

  return [behavior, task_kind, dataset_text](const ChatRequest& request) -> std::string {
    const std::string& system = request.messages.front().role == "system"
                                    ? request.messages.front().content
                                    : std::string();

    if (system == std::string(kParaphraseSystemV1)) {
      const std::string& user = mockdetail::last_user_content(request);
      const auto split = user.find("\n\n");
      std::string base = split == std::string::npos ? user : user.substr(split + 2);
      std::string tag = "reworded";
      if (const auto v = user.find("this is variant "); v != std::string::npos) {
        tag = "variant " + user.substr(v + 16, user.find(' ', v + 16) - (v + 16));
      }
      return "(" + tag + ") " + base;
    }

    if (system.find("You complete partial text files") != std::string::npos) {
      if (behavior == "garbage") {
        return "The quick brown fox jumps over the lazy dog again and again and again.";
      }
      return mockdetail::header_echo(dataset_text, mockdetail::last_user_content(request));
    }
    if (system.find("You complete tabular data files") != std::string::npos) {
      if (behavior == "garbage") return "zzz,zzz,zzz,zzz";
      return mockdetail::row_echo(dataset_text, mockdetail::last_user_content(request));
    }

    const std::string& last = mockdetail::last_user_content(request);
    if (last.find("\"predictions\"") != std::string::npos) {
      const auto rows = mockdetail::parse_numeric_rows(last, false, nullptr);
      std::vector<double> preds;
      preds.reserve(rows.size());
      for (const auto& row : rows) {
        double value = 0.0;
        if (behavior == "sharp_synthetic") {
          value = 2.0 * row[0];
          if (row.size() > 1) value -= row[1];
          if (row.size() > 2) value += row[2];
          if (task_kind == TaskKind::classification) value = sigmoid(value);
        } else {
          value = task_kind == TaskKind::classification ? 0.5 : 0.0;
        }
        preds.push_back(value);
      }
      return mockdetail::predictions_json(preds);
    }

    // Everything else is treated as an elicitation request.
    const auto names = mockdetail::parse_feature_list(mockdetail::all_user_content(request));
    if (names.empty()) {
      throw TransportError("mock could not find a feature list in the request");
    }
    std::vector<std::pair<double, double>> values;
    if (behavior == "sharp_synthetic" || behavior == "sharp_elicit_flat_icl") {
      const double sharp_means[] = {2.0, -1.0, 1.0};
      for (std::size_t i = 0; i < names.size(); ++i) {
        values.emplace_back(i < 3 ? sharp_means[i] : 0.0, 0.1);
      }
    } else {
      values.assign(names.size(), {0.0, 1.0});
    }
    return mockdetail::elicitation_json(names, values);
  };
}

}  // namespace lmprior
