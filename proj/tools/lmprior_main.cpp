#include <cstdint>
#include <iostream>
#include <optional>
#include <string>

#include <CLI11.hpp>

#include "lmprior/harness.hpp"

namespace {

struct CliOptions {
  std::string config_path;
  std::string output_override;
  std::string provider_override;
  std::optional<std::uint64_t> seed_override;
};

void attach_common(CLI::App* sub, CliOptions& options, std::uint64_t& seed_slot,
                   bool& seed_given) {
  sub->add_option("-c,--config", options.config_path, "experiment config (JSON)")
      ->required()
      ->check(CLI::ExistingFile);
  sub->add_option("-o,--output", options.output_override,
                  "output directory (overrides the config without changing its hash)");
  sub->add_option("--provider", options.provider_override,
                  "provider kind override: mock | http_openai_compatible | replay")
      ->check(CLI::IsMember({"mock", "http_openai_compatible", "replay"}));
  sub->add_option("--seed", seed_slot, "experiment seed override")
      ->each([&seed_given](const std::string&) { seed_given = true; });
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Expert-prior elicitation and in-context probing for linear models"};
  app.require_subcommand(1);

  CliOptions options;
  std::uint64_t seed_slot = 0;
  bool seed_given = false;

  const std::pair<const char*, const char*> kinds[] = {
      {"elicit", "query the language model for a mixture prior and store it"},
      {"fit", "cross-validated Bayesian fits across priors and training sizes"},
      {"probe", "extract the implicit in-context prior/posterior and compare"},
      {"select", "Bayes-factor comparison of elicited and in-context models"},
      {"memtest", "check the language model for dataset memorisation"},
      {"replay", "rerun the configured experiment from the response cache only"},
  };
  for (const auto& [name, description] : kinds) {
    attach_common(app.add_subcommand(name, description), options, seed_slot, seed_given);
  }

  CLI11_PARSE(app, argc, argv);
  const std::string command = app.get_subcommands().front()->get_name();

  try {
    auto config = lmprior::ExperimentConfig::load(options.config_path);
    if (seed_given) {
      // A different seed is a different experiment, so the raw config (and
      // with it the reported hash) changes too.
      config.raw["seed"] = seed_slot;
      config = lmprior::ExperimentConfig::parse(config.raw);
    }
    const bool replay = command == "replay";
    if (!replay && command != config.experiment) {
      config.raw["experiment"] = command;
      config = lmprior::ExperimentConfig::parse(config.raw);
    }
    if (!options.output_override.empty()) config.output_dir = options.output_override;
    if (!options.provider_override.empty()) {
      config.provider.provider.kind =
          lmprior::provider_kind_from_string(options.provider_override);
    }

    lmprior::Harness harness(std::move(config), replay);
    const lmprior::RunReport report = harness.run();
    for (const auto& cell : report.cells) {
      std::cout << (cell.ok ? "[ ok ] " : "[fail] ") << cell.name;
      if (!cell.ok) std::cout << ": " << cell.reason;
      std::cout << "\n";
    }
    const int failed =
        static_cast<int>(report.cells.size()) -
        static_cast<int>(std::count_if(report.cells.begin(), report.cells.end(),
                                       [](const lmprior::CellResult& c) { return c.ok; }));
    std::cout << report.experiment << ": " << report.cells.size() - failed << "/"
              << report.cells.size() << " cells succeeded (config " << report.config_hash
              << ")\n";
    return report.all_ok() ? 0 : 1;
  } catch (const lmprior::Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "unexpected error: " << e.what() << "\n";
    return 1;
  }
}
