#pragma once

#include <algorithm>
#include <cstdint>
#include <numeric>
#include <random>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "lmprior/csvio.hpp"
#include "lmprior/errors.hpp"
#include "lmprior/gateway.hpp"
#include "lmprior/rng.hpp"
#include "lmprior/stats.hpp"

namespace lmprior {

enum class MemorisationTestKind { header, row };

inline std::string to_string(MemorisationTestKind kind) {
  return kind == MemorisationTestKind::header ? "header" : "row";
}

struct MemorisationTrial {
  std::string prompt;
  std::string completion;
  std::string truth;
  double normalized_distance = 0.0;
};

struct MemorisationResult {
  MemorisationTestKind test_kind = MemorisationTestKind::header;
  std::string dataset_id;
  std::vector<MemorisationTrial> trials;
  double mean = 0.0;
  double std = 0.0;

  void finalize() {
    if (trials.empty()) throw ArgumentError("MemorisationResult: no trials");
    std::vector<double> values;
    values.reserve(trials.size());
    for (const auto& t : trials) values.push_back(t.normalized_distance);
    mean = mean_of(values);
    std = trials.size() > 1 ? sample_sd(values) : 0.0;
  }
};

/// Classic edit distance: minimal single-character insertions, deletions
/// and substitutions.  Two-row dynamic program.
inline std::size_t levenshtein(const std::string& s1, const std::string& s2) {
  const std::size_t n = s1.size();
  const std::size_t m = s2.size();
  if (n == 0) return m;
  if (m == 0) return n;
  std::vector<std::size_t> prev(m + 1), curr(m + 1);
  std::iota(prev.begin(), prev.end(), std::size_t{0});
  for (std::size_t i = 1; i <= n; ++i) {
    curr[0] = i;
    for (std::size_t j = 1; j <= m; ++j) {
      const std::size_t substitution = prev[j - 1] + (s1[i - 1] == s2[j - 1] ? 0 : 1);
      curr[j] = std::min({prev[j] + 1, curr[j - 1] + 1, substitution});
    }
    std::swap(prev, curr);
  }
  return prev[m];
}

/// Distance divided by the longer length, which pins the result to [0,1].
/// Dividing by the shorter length instead (available for comparison) can
/// exceed 1.
inline double normalized_levenshtein(const std::string& s1, const std::string& s2,
                                     bool divide_by_min = false) {
  if (s1.empty() && s2.empty()) return 0.0;
  const double denom = divide_by_min
                           ? static_cast<double>(std::max<std::size_t>(
                                 1, std::min(s1.size(), s2.size())))
                           : static_cast<double>(std::max(s1.size(), s2.size()));
  return static_cast<double>(levenshtein(s1, s2)) / denom;
}

struct MemorisationOptions {
  std::string model_id;
  double temperature = 0.1;
  int completion_tokens = 500;  // requested completion budget for the header test
  bool divide_by_min = false;
};

/// Show the header and the first n_seed_rows of the raw CSV text with the
/// last row cut at its midpoint character; ask for the continuation; score
/// it against the true continuation trimmed to the completion's length.
inline MemorisationResult header_test(Gateway& gateway, const std::string& dataset_text,
                                      int n_seed_rows, const MemorisationOptions& options,
                                      const std::string& dataset_id = "") {
  if (n_seed_rows < 1) throw ArgumentError("header_test: n_seed_rows must be >= 1");
  const auto lines = split_lines(dataset_text);
  if (static_cast<int>(lines.size()) < n_seed_rows + 2) {
    throw ArgumentError("header_test: dataset text needs at least n_seed_rows+1 data rows");
  }

  // lines[0] is the header; seed rows are lines[1..n_seed_rows].
  std::string shown;
  for (int i = 0; i < n_seed_rows; ++i) shown += lines[i] + "\n";
  const std::string& last_row = lines[n_seed_rows];
  const std::size_t cut = last_row.size() / 2;
  shown += last_row.substr(0, cut);

  std::string truth = last_row.substr(cut);
  for (std::size_t i = n_seed_rows + 1; i < lines.size(); ++i) truth += "\n" + lines[i];
  // The truth is the file's literal continuation, so a trailing newline in
  // the source stays part of it; a perfect echo must score exactly zero.
  if (!dataset_text.empty() && dataset_text.back() == '\n') truth += '\n';

  ChatRequest request;
  request.model_id = options.model_id;
  request.temperature = options.temperature;
  request.max_tokens = options.completion_tokens;
  request.messages = {
      {"system",
       "You complete partial text files. Continue the text exactly where it stops, with no "
       "commentary."},
      {"user", "Generate the next " + std::to_string(options.completion_tokens) +
                   " tokens continuing this file:\n\n" + shown}};
  const std::string completion = gateway.complete(request);

  MemorisationTrial trial;
  trial.prompt = shown;
  trial.completion = completion;
  trial.truth = truth.substr(0, std::min(truth.size(), completion.size()));
  trial.normalized_distance =
      normalized_levenshtein(trial.truth, completion, options.divide_by_min);

  MemorisationResult result;
  result.test_kind = MemorisationTestKind::header;
  result.dataset_id = dataset_id;
  result.trials.push_back(std::move(trial));
  result.finalize();
  return result;
}

/// For each trial: pick a random window of consecutive rows (source order
/// preserved), show them, and score the completion of the row that follows.
inline MemorisationResult row_test(Gateway& gateway, const std::string& dataset_text,
                                   int n_trials, int context_rows,
                                   const MemorisationOptions& options, std::uint64_t seed,
                                   const std::string& dataset_id = "") {
  if (n_trials < 1) throw ArgumentError("row_test: n_trials must be >= 1");
  if (context_rows < 1) throw ArgumentError("row_test: context_rows must be >= 1");
  const auto lines = split_lines(dataset_text);
  // lines[0] is the header; data rows follow.
  const int n_rows = static_cast<int>(lines.size()) - 1;
  if (n_rows < context_rows + 1) {
    throw ArgumentError("row_test: dataset needs at least context_rows+1 rows");
  }

  auto engine = make_engine(derive_seed(seed, "row-test"));
  std::uniform_int_distribution<int> pick_start(1, n_rows - context_rows);

  MemorisationResult result;
  result.test_kind = MemorisationTestKind::row;
  result.dataset_id = dataset_id;
  for (int t = 0; t < n_trials; ++t) {
    const int start = pick_start(engine);  // line index of the first context row
    std::string shown = lines[0] + "\n";
    for (int i = 0; i < context_rows; ++i) shown += lines[start + i] + "\n";
    const std::string& truth = lines[start + context_rows];

    ChatRequest request;
    request.model_id = options.model_id;
    request.temperature = options.temperature;
    request.messages = {
        {"system",
         "You complete tabular data files. Reply with exactly one CSV row and nothing else."},
        {"user",
         "These are consecutive rows of a CSV file (header first). Write the single row that "
         "comes next:\n\n" +
             shown}};
    std::string completion = gateway.complete(request);
    // Keep only the first line of the reply; the task asks for one row.
    if (const auto newline = completion.find('\n'); newline != std::string::npos) {
      completion = completion.substr(0, newline);
    }

    MemorisationTrial trial;
    trial.prompt = shown;
    trial.completion = completion;
    trial.truth = truth;
    trial.normalized_distance =
        normalized_levenshtein(truth, completion, options.divide_by_min);
    result.trials.push_back(std::move(trial));
  }
  result.finalize();
  return result;
}

/// JSON record with the raw prompts and completions archived for audit.
inline nlohmann::json memorisation_to_json(const MemorisationResult& result) {
  nlohmann::json trials = nlohmann::json::array();
  for (const auto& t : result.trials) {
    trials.push_back({{"prompt", t.prompt},
                      {"completion", t.completion},
                      {"truth", t.truth},
                      {"normalized_distance", t.normalized_distance}});
  }
  return {{"dataset", result.dataset_id},
          {"test_kind", to_string(result.test_kind)},
          {"trials", std::move(trials)},
          {"mean", result.mean},
          {"std", result.std}};
}

}  // namespace lmprior
