#include "astgcn/pipeline.hpp"

#include <CLI11.hpp>
#include <spdlog/sinks/stdout_color_sinks.h>
#include <spdlog/spdlog.h>

#include <iostream>

using namespace astgcn;
using namespace astgcn::pipeline;

namespace {

data::Split parse_split(const std::string& s) {
  if (s == "train") return data::Split::Train;
  if (s == "val") return data::Split::Val;
  if (s == "test") return data::Split::Test;
  throw ConfigError("unknown split '" + s + "' (train, val or test)");
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Bike-station forecasting with attention-based spatio-temporal graph convolution"};
  app.require_subcommand(1);
  app.fallthrough();

  std::string config_path, out, dataset, log_level = "info";
  std::optional<std::uint64_t> seed;
  app.add_option("--config", config_path, "JSON run config")->check(CLI::ExistingFile);
  app.add_option("--seed", seed, "Overrides the config seed");
  app.add_option("--out", out, "Overrides the output directory");
  app.add_option("--dataset", dataset, "Preset used when no --config is given")
      ->check(CLI::IsMember({"dublin", "nyc", "synthetic"}));
  app.add_option("--log-level", log_level, "trace, debug, info, warn, error or off");

  auto* ingest = app.add_subcommand("ingest", "Aggregate, encode, split and cache the dataset");
  auto* train = app.add_subcommand("train", "Train a model and write a checkpoint and epoch log");
  auto* evaluate = app.add_subcommand("eval", "Evaluate a checkpoint on one split");
  std::string checkpoint, split = "test";
  evaluate->add_option("--checkpoint", checkpoint, "Checkpoint written by train")->required();
  evaluate->add_option("--split", split, "train, val or test");
  auto* report = app.add_subcommand("report", "Tabulate evaluation reports");
  std::vector<std::string> reports;
  report->add_option("reports", reports, "report_<split>.json files")->required();
  auto* compare = app.add_subcommand("compare", "Train and test the model x adjacency matrix");
  bool ablation = false;
  compare->add_flag("--ablation", ablation, "Run the feature-subset ablation instead");
  auto* synth = app.add_subcommand("synth", "Write synthetic snapshot and weather CSVs");

  CLI11_PARSE(app, argc, argv);

  spdlog::set_default_logger(spdlog::stderr_color_mt("astgcn"));
  spdlog::set_level(spdlog::level::from_str(log_level));

  try {
    RunConfig config = config_path.empty()
                           ? RunConfig::preset(dataset.empty() ? DatasetKind::Synthetic : parse_dataset(dataset))
                           : load_config(config_path);
    if (seed) {
      config.seed = *seed;
      config.train.seed = *seed;
    }
    if (!out.empty()) config.out = out;
    config.validate();

    nlohmann::json summary;
    if (ingest->parsed()) summary = cmd_ingest(config).summary;
    else if (train->parsed()) summary = cmd_train(config).summary;
    else if (evaluate->parsed()) summary = cmd_eval(config, checkpoint, parse_split(split)).summary;
    else if (report->parsed()) summary = cmd_report(config, reports);
    else if (compare->parsed()) summary = cmd_compare(config, ablation);
    else if (synth->parsed()) summary = cmd_synth(config);
    std::cout << summary.dump(2) << std::endl;
    return kExitOk;
  } catch (const std::exception& e) {
    spdlog::error("{}", e.what());
    return exit_code_for(e);
  }
}
