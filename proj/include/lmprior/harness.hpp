#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <memory>
#include <numeric>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "lmprior/config.hpp"
#include "lmprior/csvio.hpp"
#include "lmprior/dataset.hpp"
#include "lmprior/elicitation.hpp"
#include "lmprior/errors.hpp"
#include "lmprior/gateway.hpp"
#include "lmprior/icl.hpp"
#include "lmprior/kde.hpp"
#include "lmprior/logging.hpp"
#include "lmprior/memorisation.hpp"
#include "lmprior/mocks.hpp"
#include "lmprior/model.hpp"
#include "lmprior/prompts.hpp"
#include "lmprior/rng.hpp"
#include "lmprior/selection.hpp"
#include "lmprior/stats.hpp"

namespace lmprior {

struct CellResult {
  std::string name;
  bool ok = true;
  std::string reason;
  nlohmann::json metrics = nlohmann::json::object();
};

/// Everything a finished experiment reports.  The serialized form contains
/// no timestamps, so a replayed run can be compared byte for byte; wall-time
/// and cache statistics go to a separate run_info sidecar.
struct RunReport {
  std::string experiment;
  std::string config_hash;
  std::vector<CellResult> cells;
  nlohmann::json summary = nlohmann::json::object();

  bool all_ok() const {
    return std::all_of(cells.begin(), cells.end(), [](const CellResult& c) { return c.ok; });
  }

  nlohmann::json to_json() const {
    nlohmann::json cell_records = nlohmann::json::array();
    for (const auto& c : cells) {
      cell_records.push_back({{"name", c.name},
                              {"status", c.ok ? "ok" : "failed"},
                              {"reason", c.reason},
                              {"metrics", c.metrics}});
    }
    return {{"experiment", experiment},
            {"config_hash", config_hash},
            {"cells", std::move(cell_records)},
            {"summary", summary}};
  }
};

class Harness {
 public:
  /// `force_replay` reruns the configured experiment against the warm cache
  /// without touching the config (so the reported config hash is unchanged).
  explicit Harness(ExperimentConfig config, bool force_replay = false)
      : config_(std::move(config)), force_replay_(force_replay) {
    out_ = config_.output_dir;
    std::filesystem::create_directories(out_);
  }

  Gateway& gateway() { return *gateway_; }

  RunReport run() {
    dataset_ = load_dataset();
    build_gateway();
    RunReport report;
    report.experiment = config_.experiment;
    report.config_hash = config_.config_hash();
    if (config_.experiment == "elicit") {
      run_elicit(report);
    } else if (config_.experiment == "fit") {
      run_fit(report);
    } else if (config_.experiment == "probe") {
      run_probe(report);
    } else if (config_.experiment == "select") {
      run_select(report);
    } else if (config_.experiment == "memtest") {
      run_memtest(report);
    } else {
      throw ConfigError("unknown experiment '" + config_.experiment + "'");
    }
    write_reports(report);
    return report;
  }

 private:
  Dataset load_dataset() const {
    if (config_.dataset.kind == "synthetic") {
      return generate_synthetic(config_.dataset.n, config_.dataset.noise_sd,
                                derive_seed(config_.seed, "dataset"));
    }
    CsvSchema schema;
    schema.target_column = config_.dataset.target_column;
    schema.task_kind = config_.dataset.task_kind;
    schema.categorical_columns = config_.dataset.categorical_columns;
    schema.group_column = config_.dataset.group_column;
    return load_csv(config_.dataset.path, schema);
  }

  void build_gateway() {
    ProviderConfig provider = config_.provider.provider;
    if (force_replay_) provider.kind = ProviderKind::replay;
    std::filesystem::path cache_dir = config_.provider.cache_dir.empty()
                                          ? out_ / "cache"
                                          : std::filesystem::path(config_.provider.cache_dir);
    gateway_ = std::make_unique<Gateway>(provider, cache_dir,
                                         std::make_shared<SystemClock>(), config_.seed);
    if (provider.kind == ProviderKind::mock) {
      const std::string behavior = config_.provider.mock_behavior.empty()
                                       ? "uninformative"
                                       : config_.provider.mock_behavior;
      gateway_->set_mock_handler(
          make_named_mock(behavior, dataset_.task_kind, dataset_to_csv(dataset_)));
    }
  }

  std::string resolved_expert_info() const {
    if (!config_.prompts.expert_preset.empty()) {
      return graded_preset(config_.prompts.expert_preset);
    }
    return config_.prompts.expert_info;
  }

  std::vector<TaskDescription> build_descriptions() {
    std::vector<RoleText> systems;
    std::vector<RoleText> users;
    if (!config_.prompts.assets_dir.empty()) {
      systems = load_role_assets(config_.prompts.assets_dir, config_.dataset.id,
                                 RoleKind::system);
      users = load_role_assets(config_.prompts.assets_dir, config_.dataset.id, RoleKind::user);
    } else {
      ExpandOptions expand;
      expand.model_id = config_.provider.model_id;
      expand.temperature = config_.provider.temperature;
      systems = expand_role(base_system_role(dataset_.task_kind),
                            config_.prompts.n_system_variants, *gateway_, expand);
      users = expand_role(base_user_role(dataset_.task_kind), config_.prompts.n_user_variants,
                          *gateway_, expand);
      save_role_assets(out_ / "assets", config_.dataset.id, systems);
      save_role_assets(out_ / "assets", config_.dataset.id, users);
    }
    return fill_all(cartesian(systems, users), dataset_.feature_names, dataset_.target_name,
                    resolved_expert_info());
  }

  ElicitOptions elicit_options() const {
    ElicitOptions options;
    options.model_id = config_.provider.model_id;
    options.temperature = config_.provider.temperature;
    options.retry_limit = config_.elicitation.retry_limit;
    options.std_cap = config_.elicitation.std_cap;
    options.n_threads = config_.elicitation.n_threads;
    return options;
  }

  ProbeOptions probe_options() const {
    ProbeOptions options;
    options.model_id = config_.provider.model_id;
    options.temperature = config_.provider.temperature;
    options.retry_limit = config_.probe.retry_limit;
    options.n_threads = config_.probe.n_threads;
    return options;
  }

  ElicitedPriorTable obtain_table(const std::vector<TaskDescription>& descriptions) {
    if (!config_.fit.table_path.empty()) return load_table(config_.fit.table_path);
    ElicitedPriorTable table = elicit_table(descriptions, dataset_.feature_names,
                                            config_.dataset.id, *gateway_, elicit_options());
    save_table(table, out_ / "elicited_table.json");
    return table;
  }

  MixturePrior prior_for_source(const std::string& source, const ElicitedPriorTable* table) {
    const int d = static_cast<int>(dataset_.d());
    if (source == "elicited") {
      if (table == nullptr) throw ConfigError("elicited prior requested but no table available");
      return build_mixture(*table);
    }
    if (source == "uninformative") return make_uninformative_normal(d);
    if (source == "uninformative_mixture") {
      return make_uninformative_mixture(d, config_.fit.mixture_components,
                                        derive_seed(config_.seed, "uninformative-mixture"));
    }
    throw ConfigError("unknown prior source '" + source + "'");
  }

  /// Dataset z-scored on its own full-population statistics; synthetic data
  /// and non-normalizing configs pass through untouched.
  Dataset whole_dataset_normalized() const {
    if (config_.dataset.kind == "synthetic" || !config_.dataset.normalize) return dataset_;
    return normalize(dataset_, dataset_).first;
  }

  std::vector<int> pick_rows(int count, std::uint64_t seed) const {
    std::vector<int> indices(dataset_.n());
    std::iota(indices.begin(), indices.end(), 0);
    auto engine = make_engine(seed);
    std::shuffle(indices.begin(), indices.end(), engine);
    if (count > static_cast<int>(indices.size())) {
      throw ArgumentError("dataset has fewer rows than requested subset");
    }
    indices.resize(count);
    std::sort(indices.begin(), indices.end());
    return indices;
  }

  void run_elicit(RunReport& report) {
    CellResult cell;
    cell.name = "elicitation";
    try {
      const auto descriptions = build_descriptions();
      const auto table = obtain_table(descriptions);
      cell.metrics = {{"descriptions_requested", descriptions.size()},
                      {"descriptions_retained", table.K()},
                      {"features", table.d()}};
      report.summary = {{"table_file", "elicited_table.json"},
                        {"descriptions_retained", table.K()}};
    } catch (const Error& e) {
      cell.ok = false;
      cell.reason = e.what();
    }
    report.cells.push_back(std::move(cell));
  }

  void run_fit(RunReport& report) {
    const auto folds = make_folds(dataset_, config_.dataset.n_folds,
                                  config_.dataset.test_fraction, config_.dataset.split,
                                  derive_seed(config_.seed, "folds"));

    std::optional<ElicitedPriorTable> table;
    const bool needs_table =
        std::find(config_.fit.prior_sources.begin(), config_.fit.prior_sources.end(),
                  "elicited") != config_.fit.prior_sources.end();
    if (needs_table) {
      const auto descriptions = build_descriptions();
      table = obtain_table(descriptions);
    }

    std::vector<std::pair<std::string, MixturePrior>> priors;
    for (const auto& source : config_.fit.prior_sources) {
      priors.emplace_back(source, prior_for_source(source, table ? &*table : nullptr));
    }

    CsvWriter cells_csv({"prior_source", "training_size", "fold", "metric"});
    // fold means keyed by (source index, size index)
    std::vector<std::vector<std::vector<double>>> fold_means(
        priors.size(), std::vector<std::vector<double>>(config_.fit.training_sizes.size()));

    for (std::size_t fold_index = 0; fold_index < folds.size(); ++fold_index) {
      const std::uint64_t fold_seed =
          derive_seed(config_.seed, "fold", static_cast<std::uint64_t>(fold_index));
      for (std::size_t size_index = 0; size_index < config_.fit.training_sizes.size();
           ++size_index) {
        const int m = config_.fit.training_sizes[size_index];
        const std::uint64_t size_seed = derive_seed(fold_seed, "size", m);
        if (m > static_cast<int>(folds[fold_index].train_indices.size())) {
          CellResult cell;
          cell.name = cell_name(priors.front().first, m, fold_index);
          cell.ok = false;
          cell.reason = "training size exceeds available training rows";
          report.cells.push_back(std::move(cell));
          continue;
        }
        const Fold cell_fold =
            subsample_train(folds[fold_index], m, derive_seed(size_seed, "subsample"));
        Dataset train = dataset_.subset(cell_fold.train_indices);
        Dataset test = dataset_.subset(cell_fold.test_indices);
        if (config_.dataset.kind == "csv" && config_.dataset.normalize && train.n() > 0) {
          auto normalized = normalize(train, test);
          train = std::move(normalized.first);
          test = std::move(normalized.second);
        }

        for (std::size_t prior_index = 0; prior_index < priors.size(); ++prior_index) {
          const auto& [source, prior] = priors[prior_index];
          CellResult cell;
          cell.name = cell_name(source, m, fold_index);
          try {
            LinearModelSpec spec;
            spec.task_kind = dataset_.task_kind;
            spec.prior = prior;
            spec.noise_scale = config_.fit.noise_scale;
            spec.fixed_noise_sd = config_.fit.fixed_noise_sd;

            const auto samples = sample_posterior(
                spec, ModelData::from_dataset(train), dataset_.feature_names,
                config_.sampler.to_options(), derive_seed(size_seed, source));
            const auto metric = evaluate(samples, ModelData::from_dataset(test));
            cell.metrics = {{"prior_source", source},
                            {"training_size", m},
                            {"fold", fold_index},
                            {"metric", metric.mean},
                            {"divergence_rate", samples.divergence_rate}};
            fold_means[prior_index][size_index].push_back(metric.mean);
            cells_csv.add_row({source, std::to_string(m), std::to_string(fold_index),
                               format_double(metric.mean)});
          } catch (const Error& e) {
            cell.ok = false;
            cell.reason = e.what();
          }
          report.cells.push_back(std::move(cell));
        }
      }
    }

    CsvWriter curves_csv(
        {"prior_source", "training_size", "mean_metric", "ci_low", "ci_high", "n_folds"});
    nlohmann::json curves = nlohmann::json::array();
    for (std::size_t prior_index = 0; prior_index < priors.size(); ++prior_index) {
      for (std::size_t size_index = 0; size_index < config_.fit.training_sizes.size();
           ++size_index) {
        const auto& means = fold_means[prior_index][size_index];
        if (means.empty()) continue;
        const double mean = mean_of(means);
        const double half_width =
            means.size() > 1
                ? 1.96 * sample_sd(means) / std::sqrt(static_cast<double>(means.size()))
                : 0.0;
        curves_csv.add_row({priors[prior_index].first,
                            std::to_string(config_.fit.training_sizes[size_index]),
                            format_double(mean), format_double(mean - half_width),
                            format_double(mean + half_width), std::to_string(means.size())});
        curves.push_back({{"prior_source", priors[prior_index].first},
                          {"training_size", config_.fit.training_sizes[size_index]},
                          {"mean_metric", mean},
                          {"ci_half_width", half_width},
                          {"n_folds", means.size()}});
      }
    }
    cells_csv.save(out_ / "cells.csv");
    curves_csv.save(out_ / "curves.csv");
    report.summary = {
        {"metric_kind", dataset_.task_kind == TaskKind::classification ? "accuracy" : "mse"},
        {"curves", std::move(curves)}};
  }

  static std::string cell_name(const std::string& source, int size, std::size_t fold) {
    return "fold=" + std::to_string(fold) + ",size=" + std::to_string(size) +
           ",source=" + source;
  }

  void run_probe(RunReport& report) {
    const Dataset normalized = whole_dataset_normalized();
    const auto descriptions = build_descriptions();

    ProbeDesign design;
    design.n_points = config_.probe.n_points;
    design.repetitions = config_.probe.repetitions;
    design.input_low = config_.probe.input_low;
    design.input_high = config_.probe.input_high;
    design.model_class = dataset_.task_kind;

    CsvWriter energy_csv({"comparison", "statistic", "distance_sq", "n_x", "n_y"});

    std::optional<ExtractedDistribution> extracted_prior;
    {
      CellResult cell;
      cell.name = "extract_prior";
      try {
        extracted_prior = extract_distribution(*gateway_, descriptions, design,
                                               dataset_.feature_names, std::nullopt,
                                               probe_options(), config_.seed);
        save_extraction(*extracted_prior, out_ / "extracted_prior.csv");
        double mean_mse = 0.0;
        for (const auto& s : extracted_prior->samples) mean_mse += s.approximation_mse;
        mean_mse /= static_cast<double>(extracted_prior->samples.size());
        cell.metrics = {{"samples", extracted_prior->samples.size()},
                        {"mean_approximation_mse", mean_mse}};
      } catch (const Error& e) {
        cell.ok = false;
        cell.reason = e.what();
      }
      report.cells.push_back(std::move(cell));
    }

    if (extracted_prior) {
      CellResult cell;
      cell.name = "elicited_vs_extracted_prior";
      try {
        const auto table = obtain_table(descriptions);
        const auto prior = build_mixture(table);
        const auto result =
            compare_elicited_vs_extracted(prior, *extracted_prior, config_.probe.energy_n,
                                          derive_seed(config_.seed, "energy-elicited"));
        cell.metrics = energy_metrics(result);
        energy_csv.add_row({cell.name, format_double(result.statistic),
                            format_double(result.distance_sq), std::to_string(result.n_x),
                            std::to_string(result.n_y)});
      } catch (const Error& e) {
        cell.ok = false;
        cell.reason = e.what();
      }
      report.cells.push_back(std::move(cell));
    }

    if (config_.probe.with_posterior && extracted_prior) {
      CellResult cell;
      cell.name = "posterior_consistency";
      try {
        const auto demo_rows =
            pick_rows(config_.probe.n_points, derive_seed(config_.seed, "demos"));
        const ModelData demos = ModelData::from_dataset(normalized.subset(demo_rows));

        auto extracted_posterior = extract_distribution(
            *gateway_, descriptions, design, dataset_.feature_names, demos, probe_options(),
            derive_seed(config_.seed, "posterior-probe"));
        save_extraction(extracted_posterior, out_ / "extracted_posterior.csv");

        const GaussianKde kde = kde_fit(*extracted_prior, config_.probe.kde_bandwidth);
        McPosteriorOptions mc;
        mc.chains = config_.probe.mc_chains;
        mc.samples_per_chain = config_.probe.mc_samples_per_chain;
        mc.adaptation = config_.probe.mc_adaptation;
        mc.model_class = dataset_.task_kind;
        const SampleRun mc_run =
            mc_posterior_on_extracted_prior(kde, demos, mc, derive_seed(config_.seed, "mc"));

        // Energy comparison uses an evenly strided subset of the MC draws to
        // keep the pairwise computation tractable.
        const Eigen::MatrixXd mc_subset =
            stride_rows(mc_run.samples, config_.probe.energy_n);
        const auto result = energy(mc_subset, extracted_posterior.phi_matrix());
        cell.metrics = energy_metrics(result);
        energy_csv.add_row({"mc_vs_extracted_posterior", format_double(result.statistic),
                            format_double(result.distance_sq), std::to_string(result.n_x),
                            std::to_string(result.n_y)});
      } catch (const Error& e) {
        cell.ok = false;
        cell.reason = e.what();
      }
      report.cells.push_back(std::move(cell));
    }

    energy_csv.save(out_ / "energy_summary.csv");
    report.summary = {{"energy_file", "energy_summary.csv"}};
  }

  static Eigen::MatrixXd stride_rows(const Eigen::MatrixXd& samples, int target) {
    if (samples.rows() <= target) return samples;
    Eigen::MatrixXd out(target, samples.cols());
    const double step = static_cast<double>(samples.rows()) / target;
    for (int i = 0; i < target; ++i) {
      out.row(i) = samples.row(static_cast<Eigen::Index>(i * step));
    }
    return out;
  }

  static nlohmann::json energy_metrics(const EnergyResult& result) {
    return {{"statistic", result.statistic},
            {"distance_sq", result.distance_sq},
            {"n_x", result.n_x},
            {"n_y", result.n_y}};
  }

  void run_select(RunReport& report) {
    const Dataset normalized = whole_dataset_normalized();
    const auto descriptions = build_descriptions();
    const auto table = obtain_table(descriptions);

    LinearModelSpec elicited_spec;
    elicited_spec.task_kind = dataset_.task_kind;
    elicited_spec.prior = build_mixture(table);
    elicited_spec.noise_scale = config_.fit.noise_scale;
    elicited_spec.fixed_noise_sd = config_.fit.fixed_noise_sd;

    LinearModelSpec uninformative_spec = elicited_spec;
    uninformative_spec.prior = make_uninformative_normal(static_cast<int>(dataset_.d()));

    BayesFactorReport bf_report;
    bf_report.dataset_id = config_.dataset.id;
    for (int split = 0; split < config_.selection.n_splits; ++split) {
      CellResult cell;
      cell.name = "split=" + std::to_string(split);
      try {
        const std::uint64_t split_seed = derive_seed(config_.seed, "split", split);
        const auto rows = pick_rows(config_.selection.subset_size, split_seed);
        const ModelData subset = ModelData::from_dataset(normalized.subset(rows));

        const Eigen::VectorXd elicited_loglik = prior_predictive_loglik(
            elicited_spec, subset, config_.selection.prior_samples,
            derive_seed(split_seed, "elicited"));

        Eigen::VectorXd other_loglik;
        if (config_.selection.compare == "elicited_vs_icl") {
          other_loglik = icl_prior_predictive_loglik(*gateway_, descriptions, subset,
                                                     dataset_.task_kind, probe_options());
        } else {
          other_loglik = prior_predictive_loglik(uninformative_spec, subset,
                                                 config_.selection.prior_samples,
                                                 derive_seed(split_seed, "uninformative"));
        }

        BayesFactorSplit entry;
        entry.split = split;
        entry.mean_loglik_elicited = elicited_loglik.mean();
        entry.mean_loglik_icl = other_loglik.mean();
        entry.log_bf = bayes_factor(elicited_loglik, other_loglik);
        bf_report.splits.push_back(entry);
        cell.metrics = {{"log_bf", entry.log_bf},
                        {"mean_loglik_elicited", entry.mean_loglik_elicited},
                        {"mean_loglik_other", entry.mean_loglik_icl}};
      } catch (const Error& e) {
        cell.ok = false;
        cell.reason = e.what();
      }
      report.cells.push_back(std::move(cell));
    }

    if (!bf_report.splits.empty()) {
      bf_report.finalize();
      write_text_file(out_ / "bayes_report.json",
                      bayes_factor_report_to_json(bf_report).dump(2) + "\n");
      write_text_file(out_ / "bayes_report.csv", bayes_factor_report_to_csv(bf_report));
      report.summary = {{"mean_log_bf", bf_report.mean_log_bf},
                        {"sd_log_bf", bf_report.sd_log_bf},
                        {"comparison", config_.selection.compare}};
    }
  }

  void run_memtest(RunReport& report) {
    const std::string dataset_text = config_.dataset.kind == "synthetic"
                                         ? dataset_to_csv(dataset_)
                                         : read_text_file(config_.dataset.path);
    MemorisationOptions options;
    options.model_id = config_.provider.model_id;
    options.temperature = config_.provider.temperature;
    options.completion_tokens = config_.memorisation.completion_tokens;
    options.divide_by_min = config_.memorisation.divide_by_min;

    CsvWriter table_csv({"dataset", "test_kind", "mean", "std", "n_trials"});

    {
      CellResult cell;
      cell.name = "header_test";
      try {
        const auto result = header_test(*gateway_, dataset_text,
                                        config_.memorisation.n_seed_rows, options,
                                        config_.dataset.id);
        write_text_file(out_ / "memorisation_header.json",
                        memorisation_to_json(result).dump(2) + "\n");
        table_csv.add_row({config_.dataset.id, "header", format_double(result.mean),
                           format_double(result.std), std::to_string(result.trials.size())});
        cell.metrics = {{"mean", result.mean}, {"std", result.std}};
      } catch (const Error& e) {
        cell.ok = false;
        cell.reason = e.what();
      }
      report.cells.push_back(std::move(cell));
    }
    {
      CellResult cell;
      cell.name = "row_test";
      try {
        const auto result = row_test(*gateway_, dataset_text, config_.memorisation.n_trials,
                                     config_.memorisation.context_rows, options,
                                     derive_seed(config_.seed, "memtest"), config_.dataset.id);
        write_text_file(out_ / "memorisation_rows.json",
                        memorisation_to_json(result).dump(2) + "\n");
        table_csv.add_row({config_.dataset.id, "row", format_double(result.mean),
                           format_double(result.std), std::to_string(result.trials.size())});
        cell.metrics = {{"mean", result.mean}, {"std", result.std}};
      } catch (const Error& e) {
        cell.ok = false;
        cell.reason = e.what();
      }
      report.cells.push_back(std::move(cell));
    }
    table_csv.save(out_ / "memorisation.csv");
  }

  void write_reports(const RunReport& report) const {
    write_text_file(out_ / "report.json", report.to_json().dump(2) + "\n");
    nlohmann::json info{{"timestamp", detail::utc_timestamp()},
                        {"provider_kind", to_string(force_replay_
                                                        ? ProviderKind::replay
                                                        : config_.provider.provider.kind)},
                        {"completions", gateway_->completions()},
                        {"network_calls", gateway_->network_calls()},
                        {"cache_hits", gateway_->completions() - gateway_->network_calls()}};
    write_text_file(out_ / "run_info.json", info.dump(2) + "\n");
  }

  ExperimentConfig config_;
  bool force_replay_;
  std::filesystem::path out_;
  Dataset dataset_;
  std::unique_ptr<Gateway> gateway_;
};

}  // namespace lmprior
