#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "itergp/cli.hpp"

namespace {

struct CommandArgs {
  std::string config_path;
  std::vector<std::string> overrides;
};

void add_common(CLI::App* cmd, CommandArgs& args) {
  cmd->add_option("--config", args.config_path, "key=value config file");
  cmd->add_option("--set", args.overrides,
                  "override a config key (key=value, repeatable)");
}

itergp::cli::KeyValues collect(const CommandArgs& args,
                               const itergp::cli::KeyValues& flags) {
  itergp::cli::KeyValues kv;
  if (!args.config_path.empty())
    kv = itergp::cli::parse_config_file(args.config_path);
  for (const std::string& assignment : args.overrides)
    itergp::cli::apply_override(kv, assignment);
  for (const auto& [key, value] : flags) kv[key] = value;  // flags win
  return kv;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"computation-aware GP regression"};
  app.require_subcommand(1);

  CommandArgs fit_args, predict_args, sample_args, bench_args;
  itergp::cli::KeyValues fit_flags, predict_flags, sample_flags, bench_flags;

  CLI::App* fit = app.add_subcommand("fit", "train and write a model artifact");
  add_common(fit, fit_args);
  std::string fit_out, fit_policy;
  fit->add_option("--model-out", fit_out, "model artifact output path");
  fit->add_option("--policy", fit_policy, "policy code");

  CLI::App* predict = app.add_subcommand("predict", "predict at query points");
  add_common(predict, predict_args);
  std::string predict_model, predict_query, predict_out, predict_variance;
  bool predict_decompose = false;
  predict->add_option("--model", predict_model, "model artifact path");
  predict->add_option("--query", predict_query, "query CSV (x1..xd)");
  predict->add_option("--out", predict_out, "predictions CSV output path");
  predict->add_option("--variance", predict_variance, "latent|observation");
  predict->add_flag("--decompose", predict_decompose,
                    "also emit mathematical/computational variance "
                    "(dense reference solve)");

  CLI::App* sample = app.add_subcommand("sample", "draw posterior paths");
  add_common(sample, sample_args);
  std::string sample_model, sample_query, sample_out;
  long long sample_count = 0, sample_seed = -1;
  sample->add_option("--model", sample_model, "model artifact path");
  sample->add_option("--query", sample_query, "query CSV (x1..xd)");
  sample->add_option("--out", sample_out, "paths CSV output path");
  sample->add_option("--count", sample_count, "number of paths");
  sample->add_option("--seed", sample_seed, "sampling seed");

  CLI::App* bench = app.add_subcommand("benchmark", "budget sweep report");
  add_common(bench, bench_args);
  std::string bench_out;
  bench->add_option("--out", bench_out, "report path prefix");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 1;
  }

  if (!fit_out.empty()) fit_flags["model_out"] = fit_out;
  if (!fit_policy.empty()) fit_flags["policy"] = fit_policy;
  if (!predict_model.empty()) predict_flags["model"] = predict_model;
  if (!predict_query.empty()) predict_flags["query_csv"] = predict_query;
  if (!predict_out.empty()) predict_flags["out"] = predict_out;
  if (!predict_variance.empty()) predict_flags["variance"] = predict_variance;
  if (predict_decompose) predict_flags["decompose"] = "1";
  if (!sample_model.empty()) sample_flags["model"] = sample_model;
  if (!sample_query.empty()) sample_flags["query_csv"] = sample_query;
  if (!sample_out.empty()) sample_flags["out"] = sample_out;
  if (sample_count > 0) sample_flags["count"] = std::to_string(sample_count);
  if (sample_seed >= 0) sample_flags["seed"] = std::to_string(sample_seed);
  if (!bench_out.empty()) bench_flags["out"] = bench_out;

  try {
    if (fit->parsed())
      return itergp::cli::run_command_catching("fit", collect(fit_args, fit_flags),
                                               std::cerr);
    if (predict->parsed())
      return itergp::cli::run_command_catching(
          "predict", collect(predict_args, predict_flags), std::cerr);
    if (sample->parsed())
      return itergp::cli::run_command_catching(
          "sample", collect(sample_args, sample_flags), std::cerr);
    if (bench->parsed())
      return itergp::cli::run_command_catching(
          "benchmark", collect(bench_args, bench_flags), std::cerr);
  } catch (const itergp::ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 1;
  } catch (const itergp::DataError& e) {
    std::cerr << "data error: " << e.what() << "\n";
    return 2;
  }
  std::cerr << "config error: no command given\n";
  return 1;
}
