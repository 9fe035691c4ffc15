// mavenrec: synth | train | eval | inspect-attention | verify-manifest

#include <cstdlib>
#include <iostream>
#include <string>

#include <CLI11.hpp>
#include <spdlog/sinks/stdout_color_sinks.h>
#include <spdlog/spdlog.h>

#include "mavenrec/cli.hpp"

namespace {

void setup_logging() {
  auto logger = spdlog::stderr_color_mt("mavenrec");
  spdlog::set_default_logger(logger);
  spdlog::set_pattern("[%H:%M:%S] [%l] %v");
  const char* env = std::getenv("MAVENREC_LOG");
  const std::string level = env ? env : "info";
  if (level == "error") spdlog::set_level(spdlog::level::err);
  else if (level == "debug") spdlog::set_level(spdlog::level::debug);
  else spdlog::set_level(spdlog::level::info);
}

}  // namespace

int main(int argc, char** argv) {
  setup_logging();
  namespace cli = mavenrec::cli;
  cli::Options o;
  std::filesystem::path manifest;

  CLI::App app{"Group recommendation with attentive maven mining and a self-attention group encoder"};
  app.require_subcommand(1);
  auto add_common = [&](CLI::App* sub) {
    sub->add_option("--config", o.config, "JSON run configuration")->check(CLI::ExistingFile);
    sub->add_option("--out", o.out, "output directory")->required();
    sub->add_option("--seed", o.seed, "overrides the config seed");
  };
  auto add_model_inputs = [&](CLI::App* sub) {
    sub->add_option("--data", o.data, "directory with user_item.csv, group_item.csv, membership.csv")
        ->required()
        ->check(CLI::ExistingDirectory);
    sub->add_option("--checkpoint", o.checkpoint, "trained checkpoint.json")->required()->check(CLI::ExistingFile);
  };

  auto* synth = app.add_subcommand("synth", "generate a synthetic population with planted mavens");
  add_common(synth);

  auto* train = app.add_subcommand("train", "train on the leave-one-out split of a dataset");
  add_common(train);
  train->add_option("--data", o.data, "dataset directory")->required()->check(CLI::ExistingDirectory);

  auto* eval = app.add_subcommand("eval", "HR@n and MRR on held-out group items");
  add_common(eval);
  add_model_inputs(eval);
  eval->add_option("--methods", o.methods, "comma list of siagr,siagr-g,siagr-m,ncf-avg,ncf-lm");
  eval->add_option("--eval-negatives", o.eval_negatives, "sampled negatives per test case");
  eval->add_option("--threads", o.threads, "worker threads for scoring")->check(CLI::PositiveNumber);

  auto* inspect = app.add_subcommand("inspect-attention", "export member attention weights as CSV");
  add_common(inspect);
  add_model_inputs(inspect);
  inspect->add_option("--groups", o.groups, "comma list of group ids (default: all)");
  inspect->add_option("--items", o.items, "comma list of item ids");
  inspect->add_flag("--per-group-mean", o.per_group_mean, "average over each group's interacted items");

  auto* verify = app.add_subcommand("verify-manifest", "recompute the hashes recorded in a manifest");
  verify->add_option("manifest", manifest, "manifest.json")->required()->check(CLI::ExistingFile);

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    std::cerr << cli::error_line("", cli::UsageError(e.what())) << std::endl;
    return 2;
  }

  const auto* chosen = app.get_subcommands().front();
  const std::string command = chosen->get_name();
  try {
    std::filesystem::path written;
    if (chosen == synth) written = cli::cmd_synth(o);
    else if (chosen == train) written = cli::cmd_train(o);
    else if (chosen == eval) written = cli::cmd_eval(o);
    else if (chosen == inspect) written = cli::cmd_inspect_attention(o);
    else {
      auto bad = cli::verify_manifest(cli::read_manifest(manifest));
      if (!bad.empty()) throw mavenrec::DataError("manifest mismatch: " + bad.front());
      spdlog::info("manifest ok");
      return 0;
    }
    spdlog::info("wrote {}", written.string());
  } catch (const std::exception& e) {
    std::cerr << cli::error_line(command, e) << std::endl;
    return cli::exit_code_for(e);
  }
  return 0;
}
