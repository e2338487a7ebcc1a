#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "lmprior/csvio.hpp"
#include "lmprior/dataset.hpp"
#include "lmprior/errors.hpp"
#include "lmprior/nuts.hpp"
#include "lmprior/gateway.hpp"
#include "lmprior/rng.hpp"

namespace lmprior {

namespace detail {

/// Unknown keys are configuration errors so a silently misspelled setting
/// can never change results.
inline void check_keys(const nlohmann::json& obj, const std::string& section,
                       const std::set<std::string>& allowed) {
  if (!obj.is_object()) throw ConfigError("config section '" + section + "' must be an object");
  for (const auto& [key, value] : obj.items()) {
    (void)value;
    if (!allowed.count(key)) {
      throw ConfigError("unknown key '" + key + "' in config section '" + section + "'");
    }
  }
}

template <class T>
T get_or(const nlohmann::json& obj, const std::string& key, T fallback) {
  const auto it = obj.find(key);
  if (it == obj.end() || it->is_null()) return fallback;
  return it->get<T>();
}

}  // namespace detail

struct DatasetConfig {
  std::string kind = "synthetic";  // synthetic | csv
  std::string id = "synthetic";
  int n = 125;
  double noise_sd = 0.05;
  std::string path;
  std::string target_column;
  TaskKind task_kind = TaskKind::regression;
  std::vector<std::string> categorical_columns;
  std::optional<std::string> group_column;
  bool normalize = true;  // ignored for synthetic data, which is never normalized
  SplitStrategy split = SplitStrategy::plain;
  int n_folds = 10;
  double test_fraction = 0.2;

  static DatasetConfig parse(const nlohmann::json& j) {
    detail::check_keys(j, "dataset",
                       {"kind", "id", "n", "noise_sd", "path", "target_column", "task_kind",
                        "categorical_columns", "group_column", "normalize", "split", "n_folds",
                        "test_fraction"});
    DatasetConfig c;
    c.kind = detail::get_or<std::string>(j, "kind", c.kind);
    if (c.kind != "synthetic" && c.kind != "csv") {
      throw ConfigError("dataset.kind must be 'synthetic' or 'csv'");
    }
    c.id = detail::get_or<std::string>(j, "id", c.kind == "synthetic" ? "synthetic" : "dataset");
    c.n = detail::get_or<int>(j, "n", c.n);
    c.noise_sd = detail::get_or<double>(j, "noise_sd", c.noise_sd);
    c.path = detail::get_or<std::string>(j, "path", "");
    c.target_column = detail::get_or<std::string>(j, "target_column", "");
    if (j.contains("task_kind")) c.task_kind = task_kind_from_string(j.at("task_kind"));
    c.categorical_columns =
        detail::get_or<std::vector<std::string>>(j, "categorical_columns", {});
    if (j.contains("group_column") && !j.at("group_column").is_null()) {
      c.group_column = j.at("group_column").get<std::string>();
    }
    c.normalize = detail::get_or<bool>(j, "normalize", c.normalize);
    if (j.contains("split")) c.split = split_strategy_from_string(j.at("split"));
    c.n_folds = detail::get_or<int>(j, "n_folds", c.n_folds);
    c.test_fraction = detail::get_or<double>(j, "test_fraction", c.test_fraction);
    if (c.kind == "csv") {
      if (c.path.empty()) throw ConfigError("dataset.path is required for csv datasets");
      if (c.target_column.empty()) {
        throw ConfigError("dataset.target_column is required for csv datasets");
      }
    }
    return c;
  }
};

struct ProviderSettings {
  ProviderConfig provider;
  std::string model_id = "mock-model";
  double temperature = 0.1;
  std::string cache_dir;       // empty -> <output_dir>/cache
  std::string mock_behavior;   // named behavior for the built-in mock

  static ProviderSettings parse(const nlohmann::json& j) {
    detail::check_keys(j, "provider",
                       {"kind", "endpoint", "credential_env", "model_id", "temperature",
                        "requests_per_minute", "retry_limit", "cache_dir", "mock_behavior"});
    ProviderSettings s;
    if (j.contains("kind")) s.provider.kind = provider_kind_from_string(j.at("kind"));
    s.provider.endpoint = detail::get_or<std::string>(j, "endpoint", "");
    s.provider.credential_env = detail::get_or<std::string>(j, "credential_env", "");
    s.provider.requests_per_minute =
        detail::get_or<int>(j, "requests_per_minute", s.provider.requests_per_minute);
    s.provider.retry_limit = detail::get_or<int>(j, "retry_limit", s.provider.retry_limit);
    s.model_id = detail::get_or<std::string>(j, "model_id", s.model_id);
    s.temperature = detail::get_or<double>(j, "temperature", s.temperature);
    s.cache_dir = detail::get_or<std::string>(j, "cache_dir", "");
    s.mock_behavior = detail::get_or<std::string>(j, "mock_behavior", "");
    s.provider.validate();
    return s;
  }
};

struct PromptsConfig {
  int n_system_variants = 10;
  int n_user_variants = 10;
  std::string assets_dir;   // when set, roles load from files instead of expansion
  std::string expert_info;  // literal expert text
  std::string expert_preset;  // named graded preset for the synthetic task

  static PromptsConfig parse(const nlohmann::json& j) {
    detail::check_keys(j, "prompts",
                       {"n_system_variants", "n_user_variants", "assets_dir", "expert_info",
                        "expert_preset"});
    PromptsConfig c;
    c.n_system_variants = detail::get_or<int>(j, "n_system_variants", c.n_system_variants);
    c.n_user_variants = detail::get_or<int>(j, "n_user_variants", c.n_user_variants);
    c.assets_dir = detail::get_or<std::string>(j, "assets_dir", "");
    c.expert_info = detail::get_or<std::string>(j, "expert_info", "");
    c.expert_preset = detail::get_or<std::string>(j, "expert_preset", "");
    if (c.n_system_variants < 1 || c.n_user_variants < 1) {
      throw ConfigError("prompts: variant counts must be >= 1");
    }
    if (!c.expert_info.empty() && !c.expert_preset.empty()) {
      throw ConfigError("prompts: set expert_info or expert_preset, not both");
    }
    return c;
  }
};

struct ElicitationConfig {
  int retry_limit = 3;
  double std_cap = 100.0;
  int n_threads = 1;

  static ElicitationConfig parse(const nlohmann::json& j) {
    detail::check_keys(j, "elicitation", {"retry_limit", "std_cap", "n_threads"});
    ElicitationConfig c;
    c.retry_limit = detail::get_or<int>(j, "retry_limit", c.retry_limit);
    c.std_cap = detail::get_or<double>(j, "std_cap", c.std_cap);
    c.n_threads = detail::get_or<int>(j, "n_threads", c.n_threads);
    return c;
  }
};

struct SamplerConfig {
  int chains = 5;
  int samples_per_chain = 5000;
  int warmup = 1000;
  double target_accept = 0.8;
  int max_tree_depth = 10;
  bool use_nuts = true;
  int hmc_leapfrog_steps = 32;
  int n_threads = 0;

  static SamplerConfig parse(const nlohmann::json& j) {
    detail::check_keys(j, "sampler",
                       {"chains", "samples_per_chain", "warmup", "target_accept",
                        "max_tree_depth", "use_nuts", "hmc_leapfrog_steps", "n_threads"});
    SamplerConfig c;
    c.chains = detail::get_or<int>(j, "chains", c.chains);
    c.samples_per_chain = detail::get_or<int>(j, "samples_per_chain", c.samples_per_chain);
    c.warmup = detail::get_or<int>(j, "warmup", c.warmup);
    c.target_accept = detail::get_or<double>(j, "target_accept", c.target_accept);
    c.max_tree_depth = detail::get_or<int>(j, "max_tree_depth", c.max_tree_depth);
    c.use_nuts = detail::get_or<bool>(j, "use_nuts", c.use_nuts);
    c.hmc_leapfrog_steps = detail::get_or<int>(j, "hmc_leapfrog_steps", c.hmc_leapfrog_steps);
    c.n_threads = detail::get_or<int>(j, "n_threads", c.n_threads);
    return c;
  }

  SamplerOptions to_options() const {
    SamplerOptions o;
    o.chains = chains;
    o.samples_per_chain = samples_per_chain;
    o.warmup = warmup;
    o.target_accept = target_accept;
    o.max_tree_depth = max_tree_depth;
    o.use_nuts = use_nuts;
    o.hmc_leapfrog_steps = hmc_leapfrog_steps;
    o.n_threads = n_threads;
    return o;
  }
};

struct FitConfig {
  std::vector<int> training_sizes{5, 10, 15, 20, 30, 40};
  std::vector<std::string> prior_sources{"elicited", "uninformative"};
  double noise_scale = 1.0;
  std::optional<double> fixed_noise_sd;
  std::string table_path;  // optional precomputed elicited table
  int mixture_components = 100;  // for the uninformative_mixture source

  static FitConfig parse(const nlohmann::json& j) {
    detail::check_keys(j, "fit",
                       {"training_sizes", "prior_sources", "noise_scale", "fixed_noise_sd",
                        "table_path", "mixture_components"});
    FitConfig c;
    c.training_sizes = detail::get_or<std::vector<int>>(j, "training_sizes", c.training_sizes);
    c.prior_sources =
        detail::get_or<std::vector<std::string>>(j, "prior_sources", c.prior_sources);
    c.noise_scale = detail::get_or<double>(j, "noise_scale", c.noise_scale);
    if (j.contains("fixed_noise_sd") && !j.at("fixed_noise_sd").is_null()) {
      c.fixed_noise_sd = j.at("fixed_noise_sd").get<double>();
    }
    c.table_path = detail::get_or<std::string>(j, "table_path", "");
    c.mixture_components = detail::get_or<int>(j, "mixture_components", c.mixture_components);
    for (const auto& source : c.prior_sources) {
      if (source != "elicited" && source != "uninformative" &&
          source != "uninformative_mixture") {
        throw ConfigError("fit: unknown prior source '" + source + "'");
      }
    }
    if (c.training_sizes.empty()) throw ConfigError("fit: training_sizes must be non-empty");
    return c;
  }
};

struct ProbeConfig {
  int n_points = 25;
  int repetitions = 5;
  double input_low = -5.0;
  double input_high = 5.0;
  bool with_posterior = false;
  double kde_bandwidth = 0.25;
  int mc_chains = 100;
  int mc_samples_per_chain = 10000;
  int mc_adaptation = 1000;
  int energy_n = 10000;
  int retry_limit = 3;
  int n_threads = 1;

  static ProbeConfig parse(const nlohmann::json& j) {
    detail::check_keys(j, "probe",
                       {"n_points", "repetitions", "input_low", "input_high", "with_posterior",
                        "kde_bandwidth", "mc_chains", "mc_samples_per_chain", "mc_adaptation",
                        "energy_n", "retry_limit", "n_threads"});
    ProbeConfig c;
    c.n_points = detail::get_or<int>(j, "n_points", c.n_points);
    c.repetitions = detail::get_or<int>(j, "repetitions", c.repetitions);
    c.input_low = detail::get_or<double>(j, "input_low", c.input_low);
    c.input_high = detail::get_or<double>(j, "input_high", c.input_high);
    c.with_posterior = detail::get_or<bool>(j, "with_posterior", c.with_posterior);
    c.kde_bandwidth = detail::get_or<double>(j, "kde_bandwidth", c.kde_bandwidth);
    c.mc_chains = detail::get_or<int>(j, "mc_chains", c.mc_chains);
    c.mc_samples_per_chain =
        detail::get_or<int>(j, "mc_samples_per_chain", c.mc_samples_per_chain);
    c.mc_adaptation = detail::get_or<int>(j, "mc_adaptation", c.mc_adaptation);
    c.energy_n = detail::get_or<int>(j, "energy_n", c.energy_n);
    c.retry_limit = detail::get_or<int>(j, "retry_limit", c.retry_limit);
    c.n_threads = detail::get_or<int>(j, "n_threads", c.n_threads);
    return c;
  }
};

struct SelectionConfig {
  int n_splits = 5;
  int subset_size = 25;
  int prior_samples = 500;
  std::string compare = "elicited_vs_icl";  // or elicited_vs_uninformative

  static SelectionConfig parse(const nlohmann::json& j) {
    detail::check_keys(j, "selection", {"n_splits", "subset_size", "prior_samples", "compare"});
    SelectionConfig c;
    c.n_splits = detail::get_or<int>(j, "n_splits", c.n_splits);
    c.subset_size = detail::get_or<int>(j, "subset_size", c.subset_size);
    c.prior_samples = detail::get_or<int>(j, "prior_samples", c.prior_samples);
    c.compare = detail::get_or<std::string>(j, "compare", c.compare);
    if (c.compare != "elicited_vs_icl" && c.compare != "elicited_vs_uninformative") {
      throw ConfigError("selection.compare must be elicited_vs_icl or elicited_vs_uninformative");
    }
    return c;
  }
};

struct MemorisationConfig {
  int n_seed_rows = 10;
  int n_trials = 25;
  int context_rows = 10;
  int completion_tokens = 500;
  bool divide_by_min = false;

  static MemorisationConfig parse(const nlohmann::json& j) {
    detail::check_keys(j, "memorisation",
                       {"n_seed_rows", "n_trials", "context_rows", "completion_tokens",
                        "divide_by_min"});
    MemorisationConfig c;
    c.n_seed_rows = detail::get_or<int>(j, "n_seed_rows", c.n_seed_rows);
    c.n_trials = detail::get_or<int>(j, "n_trials", c.n_trials);
    c.context_rows = detail::get_or<int>(j, "context_rows", c.context_rows);
    c.completion_tokens = detail::get_or<int>(j, "completion_tokens", c.completion_tokens);
    c.divide_by_min = detail::get_or<bool>(j, "divide_by_min", c.divide_by_min);
    return c;
  }
};

/// One experiment, fully described.  The canonical JSON form (sorted keys,
/// defaults folded in by the writer) hashes to the config hash reported in
/// every artifact.
struct ExperimentConfig {
  std::string experiment = "fit";  // elicit | fit | probe | select | memtest
  std::uint64_t seed = 0;
  std::string output_dir = "out";
  DatasetConfig dataset;
  ProviderSettings provider;
  PromptsConfig prompts;
  ElicitationConfig elicitation;
  SamplerConfig sampler;
  FitConfig fit;
  ProbeConfig probe;
  SelectionConfig selection;
  MemorisationConfig memorisation;
  nlohmann::json raw;  // as loaded, for hashing

  static ExperimentConfig parse(const nlohmann::json& j) {
    detail::check_keys(j, "<root>",
                       {"experiment", "seed", "output_dir", "dataset", "provider", "prompts",
                        "elicitation", "sampler", "fit", "probe", "selection", "memorisation"});
    ExperimentConfig c;
    c.raw = j;
    c.experiment = detail::get_or<std::string>(j, "experiment", c.experiment);
    const std::set<std::string> known{"elicit", "fit", "probe", "select", "memtest"};
    if (!known.count(c.experiment)) {
      throw ConfigError("unknown experiment '" + c.experiment + "'");
    }
    c.seed = detail::get_or<std::uint64_t>(j, "seed", c.seed);
    c.output_dir = detail::get_or<std::string>(j, "output_dir", c.output_dir);
    if (j.contains("dataset")) c.dataset = DatasetConfig::parse(j.at("dataset"));
    if (j.contains("provider")) c.provider = ProviderSettings::parse(j.at("provider"));
    if (j.contains("prompts")) c.prompts = PromptsConfig::parse(j.at("prompts"));
    if (j.contains("elicitation")) c.elicitation = ElicitationConfig::parse(j.at("elicitation"));
    if (j.contains("sampler")) c.sampler = SamplerConfig::parse(j.at("sampler"));
    if (j.contains("fit")) c.fit = FitConfig::parse(j.at("fit"));
    if (j.contains("probe")) c.probe = ProbeConfig::parse(j.at("probe"));
    if (j.contains("selection")) c.selection = SelectionConfig::parse(j.at("selection"));
    if (j.contains("memorisation")) {
      c.memorisation = MemorisationConfig::parse(j.at("memorisation"));
    }
    return c;
  }

  static ExperimentConfig load(const std::filesystem::path& path) {
    nlohmann::json j = nlohmann::json::parse(read_text_file(path), nullptr,
                                             /*allow_exceptions=*/false);
    if (j.is_discarded()) throw ConfigError("config file is not valid JSON: " + path.string());
    return parse(j);
  }

  /// Stable hash of the configuration as loaded (sorted-key canonical dump).
  std::string config_hash() const {
    const std::uint64_t h = fnv1a64(raw.dump());
    char buf[17];
    std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(h));
    return buf;
  }
};

}  // namespace lmprior
