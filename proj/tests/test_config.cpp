// Configuration parsing: defaults, validation, strict key checking, hashing.

#include <catch2/catch_amalgamated.hpp>

#include <nlohmann/json.hpp>

#include "lmprior/config.hpp"
#include "support/test_support.hpp"

using Catch::Matchers::ContainsSubstring;
using nlohmann::json;
using namespace lmprior;

TEST_CASE("empty config yields documented defaults", "[config]") {
  const ExperimentConfig c = ExperimentConfig::parse(json::object());

  CHECK(c.experiment == "fit");
  CHECK(c.seed == 0);
  CHECK(c.output_dir == "out");

  CHECK(c.dataset.kind == "synthetic");
  CHECK(c.dataset.id == "synthetic");
  CHECK(c.dataset.n == 125);
  CHECK(c.dataset.noise_sd == 0.05);
  CHECK(c.dataset.normalize);
  CHECK(c.dataset.split == SplitStrategy::plain);
  CHECK(c.dataset.n_folds == 10);
  CHECK(c.dataset.test_fraction == 0.2);
  CHECK(c.dataset.task_kind == TaskKind::regression);
  CHECK_FALSE(c.dataset.group_column.has_value());

  CHECK(c.provider.provider.kind == ProviderKind::mock);
  CHECK(c.provider.model_id == "mock-model");
  CHECK(c.provider.temperature == 0.1);
  CHECK(c.provider.cache_dir.empty());
  CHECK(c.provider.mock_behavior.empty());

  CHECK(c.prompts.n_system_variants == 10);
  CHECK(c.prompts.n_user_variants == 10);
  CHECK(c.prompts.expert_info.empty());
  CHECK(c.prompts.expert_preset.empty());

  CHECK(c.elicitation.retry_limit == 3);
  CHECK(c.elicitation.std_cap == 100.0);
  CHECK(c.elicitation.n_threads == 1);

  CHECK(c.sampler.chains == 5);
  CHECK(c.sampler.samples_per_chain == 5000);
  CHECK(c.sampler.warmup == 1000);
  CHECK(c.sampler.target_accept == 0.8);
  CHECK(c.sampler.max_tree_depth == 10);
  CHECK(c.sampler.use_nuts);
  CHECK(c.sampler.hmc_leapfrog_steps == 32);
  CHECK(c.sampler.n_threads == 0);

  CHECK(c.fit.training_sizes == std::vector<int>{5, 10, 15, 20, 30, 40});
  CHECK(c.fit.prior_sources == std::vector<std::string>{"elicited", "uninformative"});
  CHECK(c.fit.noise_scale == 1.0);
  CHECK_FALSE(c.fit.fixed_noise_sd.has_value());
  CHECK(c.fit.mixture_components == 100);

  CHECK(c.probe.n_points == 25);
  CHECK(c.probe.repetitions == 5);
  CHECK(c.probe.input_low == -5.0);
  CHECK(c.probe.input_high == 5.0);
  CHECK_FALSE(c.probe.with_posterior);
  CHECK(c.probe.kde_bandwidth == 0.25);
  CHECK(c.probe.mc_chains == 100);
  CHECK(c.probe.mc_samples_per_chain == 10000);
  CHECK(c.probe.mc_adaptation == 1000);
  CHECK(c.probe.energy_n == 10000);
  CHECK(c.probe.retry_limit == 3);
  CHECK(c.probe.n_threads == 1);

  CHECK(c.selection.n_splits == 5);
  CHECK(c.selection.subset_size == 25);
  CHECK(c.selection.prior_samples == 500);
  CHECK(c.selection.compare == "elicited_vs_icl");

  CHECK(c.memorisation.n_seed_rows == 10);
  CHECK(c.memorisation.n_trials == 25);
  CHECK(c.memorisation.context_rows == 10);
  CHECK(c.memorisation.completion_tokens == 500);
  CHECK_FALSE(c.memorisation.divide_by_min);
}

TEST_CASE("unknown keys are rejected with the key and section named", "[config]") {
  CHECK_THROWS_WITH(ExperimentConfig::parse(json{{"experimnt", "fit"}}),
                    ContainsSubstring("unknown key 'experimnt'") &&
                        ContainsSubstring("'<root>'"));
  CHECK_THROWS_WITH(ExperimentConfig::parse(json{{"dataset", {{"noise", 0.1}}}}),
                    ContainsSubstring("unknown key 'noise'") &&
                        ContainsSubstring("'dataset'"));
  CHECK_THROWS_WITH(ExperimentConfig::parse(json{{"sampler", {{"step_size", 0.1}}}}),
                    ContainsSubstring("unknown key 'step_size'") &&
                        ContainsSubstring("'sampler'"));
  // A section must be an object, not a scalar.
  CHECK_THROWS_AS(ExperimentConfig::parse(json{{"sampler", 3}}), ConfigError);
}

TEST_CASE("null values fall back to defaults", "[config]") {
  const json j{{"seed", nullptr}, {"dataset", {{"n", nullptr}, {"group_column", nullptr}}}};
  const ExperimentConfig c = ExperimentConfig::parse(j);
  CHECK(c.seed == 0);
  CHECK(c.dataset.n == 125);
  CHECK_FALSE(c.dataset.group_column.has_value());
}

TEST_CASE("experiment name is validated", "[config]") {
  for (const char* name : {"elicit", "fit", "probe", "select", "memtest"}) {
    CHECK(ExperimentConfig::parse(json{{"experiment", name}}).experiment == name);
  }
  CHECK_THROWS_WITH(ExperimentConfig::parse(json{{"experiment", "predict"}}),
                    ContainsSubstring("unknown experiment 'predict'"));
}

TEST_CASE("dataset section parsing", "[config]") {
  SECTION("kind must be synthetic or csv") {
    CHECK_THROWS_WITH(DatasetConfig::parse(json{{"kind", "parquet"}}),
                      ContainsSubstring("dataset.kind"));
  }
  SECTION("csv requires path and target column") {
    CHECK_THROWS_WITH(DatasetConfig::parse(json{{"kind", "csv"}, {"target_column", "y"}}),
                      ContainsSubstring("dataset.path"));
    CHECK_THROWS_WITH(DatasetConfig::parse(json{{"kind", "csv"}, {"path", "d.csv"}}),
                      ContainsSubstring("dataset.target_column"));
    const DatasetConfig ok = DatasetConfig::parse(
        json{{"kind", "csv"}, {"path", "d.csv"}, {"target_column", "y"}});
    CHECK(ok.id == "dataset");  // fallback id when none given
    CHECK(ok.path == "d.csv");
    CHECK(ok.target_column == "y");
  }
  SECTION("enumerations parse and reject garbage") {
    const DatasetConfig c = DatasetConfig::parse(json{{"task_kind", "classification"},
                                                      {"split", "stratified"},
                                                      {"group_column", "site"}});
    CHECK(c.task_kind == TaskKind::classification);
    CHECK(c.split == SplitStrategy::stratified);
    REQUIRE(c.group_column.has_value());
    CHECK(*c.group_column == "site");
    CHECK_THROWS_AS(DatasetConfig::parse(json{{"split", "random"}}), ConfigError);
    CHECK_THROWS_AS(DatasetConfig::parse(json{{"task_kind", "ordinal"}}), ParseError);
  }
  SECTION("explicit id wins over the fallback") {
    CHECK(DatasetConfig::parse(json{{"id", "heart"}}).id == "heart");
  }
}

TEST_CASE("provider section parsing", "[config]") {
  const ExperimentConfig c = ExperimentConfig::parse(json{
      {"provider",
       {{"kind", "http_openai_compatible"},
        {"endpoint", "https://api.example.test/v1/chat/completions"},
        {"credential_env", "EXAMPLE_API_KEY"},
        {"model_id", "big-model-3"},
        {"temperature", 0.7},
        {"requests_per_minute", 30},
        {"retry_limit", 5}}}});
  CHECK(c.provider.provider.kind == ProviderKind::http_openai_compatible);
  CHECK(c.provider.provider.endpoint == "https://api.example.test/v1/chat/completions");
  CHECK(c.provider.provider.credential_env == "EXAMPLE_API_KEY");
  CHECK(c.provider.provider.requests_per_minute == 30);
  CHECK(c.provider.provider.retry_limit == 5);
  CHECK(c.provider.model_id == "big-model-3");
  CHECK(c.provider.temperature == 0.7);

  CHECK_THROWS_WITH(
      ExperimentConfig::parse(json{{"provider", {{"kind", "carrier-pigeon"}}}}),
      ContainsSubstring("unknown provider kind"));
  // validate() runs at parse time: an http provider without an endpoint is
  // caught before any experiment starts.
  CHECK_THROWS_WITH(
      ExperimentConfig::parse(json{{"provider", {{"kind", "http_openai_compatible"}}}}),
      ContainsSubstring("endpoint"));
}

TEST_CASE("prompts section validation", "[config]") {
  const PromptsConfig ok =
      PromptsConfig::parse(json{{"n_system_variants", 3}, {"n_user_variants", 2}});
  CHECK(ok.n_system_variants == 3);
  CHECK(ok.n_user_variants == 2);

  CHECK_THROWS_WITH(PromptsConfig::parse(json{{"n_system_variants", 0}}),
                    ContainsSubstring("variant counts"));
  CHECK_THROWS_WITH(PromptsConfig::parse(json{{"n_user_variants", -1}}),
                    ContainsSubstring("variant counts"));
  CHECK_THROWS_WITH(PromptsConfig::parse(json{{"expert_info", "a doctor"},
                                              {"expert_preset", "heart_disease"}}),
                    ContainsSubstring("not both"));
  // Either alone is fine.
  CHECK(PromptsConfig::parse(json{{"expert_info", "a doctor"}}).expert_info == "a doctor");
  CHECK(PromptsConfig::parse(json{{"expert_preset", "x"}}).expert_preset == "x");
}

TEST_CASE("fit section validation", "[config]") {
  const FitConfig c = FitConfig::parse(json{
      {"training_sizes", {5, 10}},
      {"prior_sources", {"elicited", "uninformative_mixture"}},
      {"noise_scale", 2.5},
      {"fixed_noise_sd", 0.3},
      {"mixture_components", 64}});
  CHECK(c.training_sizes == std::vector<int>{5, 10});
  CHECK(c.prior_sources == std::vector<std::string>{"elicited", "uninformative_mixture"});
  CHECK(c.noise_scale == 2.5);
  REQUIRE(c.fixed_noise_sd.has_value());
  CHECK(*c.fixed_noise_sd == 0.3);
  CHECK(c.mixture_components == 64);

  CHECK_THROWS_WITH(FitConfig::parse(json{{"prior_sources", {"oracle"}}}),
                    ContainsSubstring("unknown prior source 'oracle'"));
  CHECK_THROWS_WITH(FitConfig::parse(json{{"training_sizes", json::array()}}),
                    ContainsSubstring("training_sizes"));
  // fixed_noise_sd null means "sample the noise scale".
  CHECK_FALSE(FitConfig::parse(json{{"fixed_noise_sd", nullptr}}).fixed_noise_sd.has_value());
}

TEST_CASE("selection compare mode is validated", "[config]") {
  CHECK(SelectionConfig::parse(json{{"compare", "elicited_vs_uninformative"}}).compare ==
        "elicited_vs_uninformative");
  CHECK_THROWS_WITH(SelectionConfig::parse(json{{"compare", "icl_vs_icl"}}),
                    ContainsSubstring("selection.compare"));
}

TEST_CASE("sampler settings map onto sampler options", "[config]") {
  const SamplerConfig c = SamplerConfig::parse(json{
      {"chains", 3}, {"samples_per_chain", 700}, {"warmup", 150}, {"target_accept", 0.9},
      {"max_tree_depth", 7}, {"use_nuts", false}, {"hmc_leapfrog_steps", 11},
      {"n_threads", 2}});
  const SamplerOptions o = c.to_options();
  CHECK(o.chains == 3);
  CHECK(o.samples_per_chain == 700);
  CHECK(o.warmup == 150);
  CHECK(o.target_accept == 0.9);
  CHECK(o.max_tree_depth == 7);
  CHECK_FALSE(o.use_nuts);
  CHECK(o.hmc_leapfrog_steps == 11);
  CHECK(o.n_threads == 2);
  // Fields without a config knob keep the sampler's own defaults.
  CHECK(o.divergence_threshold == 1000.0);
  CHECK(o.adapt_metric);
}

TEST_CASE("config hash is stable and sensitive", "[config]") {
  const json a{{"experiment", "fit"}, {"seed", 7}};
  const json b{{"seed", 7}, {"experiment", "fit"}};  // same content, different insertion order
  const json c{{"experiment", "fit"}, {"seed", 8}};

  const std::string ha = ExperimentConfig::parse(a).config_hash();
  CHECK(ha.size() == 16);
  CHECK(ha.find_first_not_of("0123456789abcdef") == std::string::npos);
  CHECK(ha == ExperimentConfig::parse(a).config_hash());
  CHECK(ha == ExperimentConfig::parse(b).config_hash());  // canonical sorted-key dump
  CHECK(ha != ExperimentConfig::parse(c).config_hash());
  // Hash covers the raw document as loaded, so spelling out a default changes it.
  CHECK(ha != ExperimentConfig::parse(json{{"experiment", "fit"}, {"seed", 7},
                                           {"output_dir", "out"}})
                  .config_hash());
}

TEST_CASE("configs load from disk", "[config]") {
  testsupport::ScratchDir dir("config");
  const auto path = dir.path() / "config.json";

  testsupport::write_file(path, R"({"experiment": "select", "seed": 42,
                                    "selection": {"n_splits": 2}})");
  const ExperimentConfig c = ExperimentConfig::load(path);
  CHECK(c.experiment == "select");
  CHECK(c.seed == 42);
  CHECK(c.selection.n_splits == 2);

  testsupport::write_file(path, "{not json");
  CHECK_THROWS_WITH(ExperimentConfig::load(path),
                    ContainsSubstring("config file is not valid JSON"));
}
