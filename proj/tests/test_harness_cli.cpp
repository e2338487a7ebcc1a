// End-to-end harness runs against the deterministic mock provider, plus the
// command-line interface built on top of it.

#include <filesystem>
#include <string>
#include <vector>

#include <catch2/catch_amalgamated.hpp>
#include <nlohmann/json.hpp>

#include "lmprior/harness.hpp"
#include "support/test_support.hpp"

using nlohmann::json;
using namespace lmprior;

namespace {

json base_config(const std::filesystem::path& out, const std::string& experiment,
                 const std::string& behavior) {
  return json{
      {"experiment", experiment},
      {"seed", 11},
      {"output_dir", out.string()},
      {"dataset", {{"kind", "synthetic"}, {"n", 60}, {"noise_sd", 0.05}, {"n_folds", 2},
                   {"test_fraction", 0.3}}},
      {"provider", {{"kind", "mock"}, {"mock_behavior", behavior}}},
      {"prompts", {{"n_system_variants", 1}, {"n_user_variants", 1}}},
      {"sampler", {{"chains", 2}, {"samples_per_chain", 250}, {"warmup", 120},
                   {"n_threads", 2}}},
  };
}

double curve_mean(const json& report, const std::string& source, int size) {
  for (const auto& entry : report.at("summary").at("curves")) {
    if (entry.at("prior_source") == source && entry.at("training_size") == size) {
      return entry.at("mean_metric").get<double>();
    }
  }
  FAIL("no curve entry for " + source + " at size " + std::to_string(size));
  return 0.0;
}

}  // namespace

TEST_CASE("fit experiment produces per-cell results and learning curves", "[harness]") {
  testsupport::ScratchDir dir("harness_fit");
  json cfg = base_config(dir.file("out"), "fit", "sharp_synthetic");
  cfg["fit"] = {{"training_sizes", {5, 10}}, {"prior_sources", {"elicited", "uninformative"}}};

  Harness harness(ExperimentConfig::parse(cfg));
  const RunReport report = harness.run();

  CHECK(report.experiment == "fit");
  CHECK(report.all_ok());
  CHECK(report.cells.size() == 2 * 2 * 2);  // folds x sizes x sources

  const json j = report.to_json();
  CHECK(j.at("summary").at("metric_kind") == "mse");
  // A tight prior centred on the generating weights beats the standard-normal
  // prior with five observations.
  const double sharp = curve_mean(j, "elicited", 5);
  const double flat = curve_mean(j, "uninformative", 5);
  CHECK(sharp > 0.0);
  CHECK(2.0 * sharp < flat);

  const auto out = dir.file("out");
  CHECK(std::filesystem::exists(out / "report.json"));
  CHECK(std::filesystem::exists(out / "run_info.json"));
  CHECK(std::filesystem::exists(out / "elicited_table.json"));
  const std::string cells_csv = testsupport::read_file(out / "cells.csv");
  CHECK(cells_csv.rfind("prior_source,training_size,fold,metric\n", 0) == 0);
  const std::string curves_csv = testsupport::read_file(out / "curves.csv");
  CHECK(curves_csv.rfind("prior_source,training_size,mean_metric,ci_low,ci_high,n_folds\n",
                         0) == 0);
  // header + sources x sizes
  CHECK(std::count(curves_csv.begin(), curves_csv.end(), '\n') == 1 + 4);
}

TEST_CASE("oversized training requests fail their cell without sinking the run",
          "[harness]") {
  testsupport::ScratchDir dir("harness_iso");
  json cfg = base_config(dir.file("out"), "fit", "uninformative");
  // 60 rows, 30% test -> 42 training rows per fold; 50 cannot be satisfied.
  cfg["fit"] = {{"training_sizes", {5, 50}}, {"prior_sources", {"uninformative"}}};

  Harness harness(ExperimentConfig::parse(cfg));
  const RunReport report = harness.run();

  CHECK_FALSE(report.all_ok());
  int ok = 0, failed = 0;
  for (const auto& cell : report.cells) {
    if (cell.ok) {
      ++ok;
    } else {
      ++failed;
      CHECK(cell.reason.find("training size exceeds") != std::string::npos);
      CHECK(cell.name.find("size=50") != std::string::npos);
    }
  }
  CHECK(ok == 2);      // size 5 on both folds
  CHECK(failed == 2);  // size 50 on both folds
}

TEST_CASE("elicit experiment stores the table and prompt assets", "[harness]") {
  testsupport::ScratchDir dir("harness_elicit");
  json cfg = base_config(dir.file("out"), "elicit", "uninformative");
  cfg["prompts"] = {{"n_system_variants", 2}, {"n_user_variants", 2}};

  Harness harness(ExperimentConfig::parse(cfg));
  const RunReport report = harness.run();

  REQUIRE(report.cells.size() == 1);
  CHECK(report.cells[0].ok);
  CHECK(report.cells[0].metrics.at("descriptions_requested") == 4);
  CHECK(report.cells[0].metrics.at("descriptions_retained") == 4);
  CHECK(report.cells[0].metrics.at("features") == 3);
  CHECK(report.summary.at("table_file") == "elicited_table.json");

  const auto out = dir.file("out");
  CHECK(std::filesystem::exists(out / "elicited_table.json"));
  CHECK(std::filesystem::is_directory(out / "assets"));
  CHECK_FALSE(std::filesystem::is_empty(out / "assets"));

  // One paraphrase per role plus one elicitation per description, all network.
  const json info = json::parse(testsupport::read_file(out / "run_info.json"));
  CHECK(info.at("provider_kind") == "mock");
  CHECK(info.at("completions") == 6);
  CHECK(info.at("network_calls") == 6);
  CHECK(info.at("cache_hits") == 0);
}

TEST_CASE("probe experiment extracts the mock's implicit distribution", "[harness]") {
  testsupport::ScratchDir dir("harness_probe");
  json cfg = base_config(dir.file("out"), "probe", "sharp_synthetic");
  cfg["probe"] = {{"n_points", 8}, {"repetitions", 2}, {"energy_n", 400},
                  {"with_posterior", true}, {"mc_chains", 2},
                  {"mc_samples_per_chain", 400}, {"mc_adaptation", 200}};

  Harness harness(ExperimentConfig::parse(cfg));
  const RunReport report = harness.run();

  REQUIRE(report.cells.size() == 3);
  for (const auto& cell : report.cells) {
    INFO(cell.name << ": " << cell.reason);
    CHECK(cell.ok);
  }
  CHECK(report.cells[0].name == "extract_prior");
  CHECK(report.cells[0].metrics.at("samples") == 2);  // 1 description x 2 repetitions
  // The mock answers from the exact linear rule applied to the features it
  // reads back from the prompt, so recovery is exact up to the 4-decimal
  // rendering of those features (quantization noise ~1e-4 per value).
  CHECK(report.cells[0].metrics.at("mean_approximation_mse").get<double>() < 1e-7);
  CHECK(report.cells[1].name == "elicited_vs_extracted_prior");
  CHECK(report.cells[2].name == "posterior_consistency");
  for (std::size_t i = 1; i < 3; ++i) {
    const double stat = report.cells[i].metrics.at("statistic").get<double>();
    CHECK(stat >= 0.0);
    CHECK(stat <= 1.0);
  }

  const auto out = dir.file("out");
  CHECK(std::filesystem::exists(out / "extracted_prior.csv"));
  CHECK(std::filesystem::exists(out / "extracted_posterior.csv"));
  const std::string energy_csv = testsupport::read_file(out / "energy_summary.csv");
  CHECK(energy_csv.rfind("comparison,statistic,distance_sq,n_x,n_y\n", 0) == 0);
  CHECK(std::count(energy_csv.begin(), energy_csv.end(), '\n') == 3);
}

TEST_CASE("select experiment favors the informative prior over flat predictions",
          "[harness]") {
  testsupport::ScratchDir dir("harness_select");
  json cfg = base_config(dir.file("out"), "select", "sharp_elicit_flat_icl");
  cfg["selection"] = {{"n_splits", 2}, {"subset_size", 10}, {"prior_samples", 150}};
  // Fix the regression noise sd at 1 so both methods score under the same
  // unit-variance Gaussian; with a sampled noise scale the comparison would
  // be dominated by small-sigma prior draws rather than prediction quality.
  cfg["fit"] = {{"fixed_noise_sd", 1.0}};

  Harness harness(ExperimentConfig::parse(cfg));
  const RunReport report = harness.run();

  REQUIRE(report.cells.size() == 2);
  for (const auto& cell : report.cells) {
    INFO(cell.name << ": " << cell.reason);
    CHECK(cell.ok);
    CHECK(cell.metrics.at("log_bf").get<double>() > 0.0);
  }
  CHECK(report.summary.at("mean_log_bf").get<double>() > 0.0);
  CHECK(report.summary.at("comparison") == "elicited_vs_icl");

  const auto out = dir.file("out");
  CHECK(std::filesystem::exists(out / "bayes_report.json"));
  const std::string csv = testsupport::read_file(out / "bayes_report.csv");
  CHECK(csv.rfind("dataset,split,mean_loglik_elicited,mean_loglik_icl,log_bf\n", 0) == 0);
}

TEST_CASE("memtest experiment distinguishes echo from garbage", "[harness]") {
  testsupport::ScratchDir dir("harness_mem");

  json echo_cfg = base_config(dir.file("echo_out"), "memtest", "echo");
  echo_cfg["memorisation"] = {{"n_seed_rows", 4}, {"n_trials", 4}, {"context_rows", 4},
                              {"completion_tokens", 200}};
  const RunReport echoed = Harness(ExperimentConfig::parse(echo_cfg)).run();
  REQUIRE(echoed.cells.size() == 2);
  CHECK(echoed.all_ok());
  CHECK(echoed.cells[0].name == "header_test");
  CHECK(echoed.cells[0].metrics.at("mean").get<double>() == 0.0);
  CHECK(echoed.cells[1].name == "row_test");
  CHECK(echoed.cells[1].metrics.at("mean").get<double>() == 0.0);
  CHECK(std::filesystem::exists(dir.file("echo_out") / "memorisation.csv"));
  CHECK(std::filesystem::exists(dir.file("echo_out") / "memorisation_header.json"));
  CHECK(std::filesystem::exists(dir.file("echo_out") / "memorisation_rows.json"));

  json garbage_cfg = echo_cfg;
  garbage_cfg["provider"]["mock_behavior"] = "garbage";
  garbage_cfg["output_dir"] = dir.file("garbage_out").string();
  const RunReport garbled = Harness(ExperimentConfig::parse(garbage_cfg)).run();
  CHECK(garbled.all_ok());  // high distance is a finding, not a failure
  CHECK(garbled.cells[0].metrics.at("mean").get<double>() > 0.6);
  CHECK(garbled.cells[1].metrics.at("mean").get<double>() > 0.6);
}

TEST_CASE("replay reruns byte-identically from the cache alone", "[harness]") {
  testsupport::ScratchDir dir("harness_replay");
  json cfg = base_config(dir.file("out"), "memtest", "echo");
  cfg["memorisation"] = {{"n_seed_rows", 4}, {"n_trials", 4}, {"context_rows", 4},
                         {"completion_tokens", 200}};
  const ExperimentConfig parsed = ExperimentConfig::parse(cfg);

  const RunReport first = Harness(parsed).run();
  CHECK(first.all_ok());
  const std::string report_bytes = testsupport::read_file(dir.file("out") / "report.json");
  const json first_info = json::parse(testsupport::read_file(dir.file("out") / "run_info.json"));
  CHECK(first_info.at("network_calls").get<int>() > 0);

  const RunReport replayed = Harness(parsed, /*force_replay=*/true).run();
  CHECK(replayed.all_ok());
  CHECK(testsupport::read_file(dir.file("out") / "report.json") == report_bytes);
  const json info = json::parse(testsupport::read_file(dir.file("out") / "run_info.json"));
  CHECK(info.at("provider_kind") == "replay");
  CHECK(info.at("network_calls") == 0);
  CHECK(info.at("completions") == first_info.at("completions"));
  CHECK(info.at("cache_hits") == info.at("completions"));
}

TEST_CASE("replay against a cold cache fails the affected cells", "[harness]") {
  testsupport::ScratchDir dir("harness_cold");
  json cfg = base_config(dir.file("out"), "memtest", "echo");
  cfg["memorisation"] = {{"n_seed_rows", 4}, {"n_trials", 4}, {"context_rows", 4},
                         {"completion_tokens", 200}};
  const RunReport report = Harness(ExperimentConfig::parse(cfg), /*force_replay=*/true).run();
  CHECK_FALSE(report.all_ok());
  for (const auto& cell : report.cells) {
    CHECK_FALSE(cell.ok);
    CHECK_FALSE(cell.reason.empty());
  }
}

TEST_CASE("csv datasets run through the fit pipeline with normalization", "[harness]") {
  testsupport::ScratchDir dir("harness_csv");
  std::string csv = "a,b,y\n";
  for (int i = 0; i < 30; ++i) {
    const double a = 0.1 * i, b = 30.0 - i;
    csv += std::to_string(a) + "," + std::to_string(b) + "," +
           std::to_string(3.0 * a - 0.5 * b + 1.0) + "\n";
  }
  testsupport::write_file(dir.file("data.csv"), csv);

  json cfg = base_config(dir.file("out"), "fit", "uninformative");
  cfg["dataset"] = {{"kind", "csv"}, {"path", dir.file("data.csv").string()},
                    {"target_column", "y"}, {"n_folds", 2}, {"test_fraction", 0.25},
                    {"normalize", true}};
  cfg["fit"] = {{"training_sizes", {8}}, {"prior_sources", {"uninformative"}}};

  const RunReport report = Harness(ExperimentConfig::parse(cfg)).run();
  CHECK(report.all_ok());
  CHECK(report.cells.size() == 2);
  for (const auto& cell : report.cells) {
    CHECK(cell.metrics.at("metric").get<double>() < 1.0);  // normalized targets
  }
}

TEST_CASE("command line drives experiments end to end", "[cli]") {
  testsupport::ScratchDir dir("cli");
  json cfg = base_config(dir.file("out"), "memtest", "echo");
  cfg["memorisation"] = {{"n_seed_rows", 4}, {"n_trials", 4}, {"context_rows", 4},
                         {"completion_tokens", 200}};
  testsupport::write_file(dir.file("config.json"), cfg.dump(2));
  const std::string config_arg = " -c " + dir.file("config.json").string();

  const auto run = testsupport::run_cli("memtest" + config_arg);
  INFO(run.output);
  CHECK(run.exit_code == 0);
  CHECK(run.output.find("[ ok ] header_test") != std::string::npos);
  CHECK(run.output.find("[ ok ] row_test") != std::string::npos);
  CHECK(run.output.find("memtest: 2/2 cells succeeded") != std::string::npos);

  const json report = json::parse(testsupport::read_file(dir.file("out") / "report.json"));
  CHECK(report.at("experiment") == "memtest");
  CHECK(report.at("config_hash") == ExperimentConfig::parse(cfg).config_hash());

  SECTION("replay subcommand is byte-identical and offline") {
    const std::string before = testsupport::read_file(dir.file("out") / "report.json");
    const auto replay = testsupport::run_cli("replay" + config_arg);
    INFO(replay.output);
    CHECK(replay.exit_code == 0);
    CHECK(testsupport::read_file(dir.file("out") / "report.json") == before);
    const json info = json::parse(testsupport::read_file(dir.file("out") / "run_info.json"));
    CHECK(info.at("provider_kind") == "replay");
    CHECK(info.at("network_calls") == 0);
  }

  SECTION("the subcommand overrides the configured experiment and the hash tracks it") {
    json fit_cfg = cfg;
    fit_cfg["experiment"] = "fit";
    testsupport::write_file(dir.file("fit_config.json"), fit_cfg.dump(2));
    const auto out = testsupport::run_cli("memtest -c " + dir.file("fit_config.json").string() +
                                          " -o " + dir.file("out2").string());
    INFO(out.output);
    CHECK(out.exit_code == 0);
    const json rerun = json::parse(testsupport::read_file(dir.file("out2") / "report.json"));
    CHECK(rerun.at("experiment") == "memtest");
    CHECK(rerun.at("config_hash") != ExperimentConfig::parse(fit_cfg).config_hash());
  }

  SECTION("the output override relocates artifacts without changing the hash") {
    const auto moved = testsupport::run_cli("memtest" + config_arg + " -o " +
                                            dir.file("elsewhere").string());
    CHECK(moved.exit_code == 0);
    const json relocated =
        json::parse(testsupport::read_file(dir.file("elsewhere") / "report.json"));
    CHECK(relocated.at("config_hash") == ExperimentConfig::parse(cfg).config_hash());
  }

  SECTION("a seed override changes the reported hash") {
    const auto reseeded = testsupport::run_cli("memtest" + config_arg + " --seed 99 -o " +
                                               dir.file("seeded").string());
    CHECK(reseeded.exit_code == 0);
    const json rerun = json::parse(testsupport::read_file(dir.file("seeded") / "report.json"));
    CHECK(rerun.at("config_hash") != ExperimentConfig::parse(cfg).config_hash());
  }
}

TEST_CASE("command line rejects bad invocations", "[cli]") {
  testsupport::ScratchDir dir("cli_bad");
  CHECK(testsupport::run_cli("").exit_code != 0);
  CHECK(testsupport::run_cli("memtest").exit_code != 0);  // missing config
  CHECK(testsupport::run_cli("memtest -c " + dir.file("absent.json").string()).exit_code != 0);

  testsupport::write_file(dir.file("broken.json"), "{oops");
  const auto broken = testsupport::run_cli("memtest -c " + dir.file("broken.json").string());
  CHECK(broken.exit_code == 1);
  CHECK(broken.output.find("config file is not valid JSON") != std::string::npos);

  // Replay with nothing cached: every cell fails and the exit code says so.
  json cfg = base_config(dir.file("cold_out"), "memtest", "echo");
  testsupport::write_file(dir.file("cold.json"), cfg.dump(2));
  const auto cold = testsupport::run_cli("replay -c " + dir.file("cold.json").string());
  CHECK(cold.exit_code == 1);
  CHECK(cold.output.find("[fail]") != std::string::npos);
}
