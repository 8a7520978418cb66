#include "d2r/cli/commands.hpp"

#include "CLI11.hpp"

#include <fstream>
#include <iostream>

namespace {

using namespace d2r;
using namespace d2r::cli;

constexpr int kOk = 0;
constexpr int kUserError = 1;
constexpr int kInternalError = 2;

std::ofstream open_out(const std::string& path) {
  std::ofstream f(path);
  if (!f) throw std::invalid_argument("cannot write " + path);
  return f;
}

std::string read_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::invalid_argument("cannot open " + path);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Dynamic depth routing for multi-task SAC on a 2-D manipulation suite"};
  app.require_subcommand(1);

  std::string config_path, out_dir;
  bool resume = false;
  std::optional<std::uint64_t> seed;
  std::optional<long> steps;
  auto* train = app.add_subcommand("train", "train from a JSON config");
  train->add_option("--config", config_path, "config file")->required()->check(CLI::ExistingFile);
  train->add_flag("--resume", resume, "continue from <output_dir>/checkpoints/latest.d2r when present");
  train->add_option("--seed", seed, "override the master seed");
  train->add_option("--steps", steps, "override total env steps");
  train->add_option("--out", out_dir, "override the output directory");

  std::string ckpt, out_path;
  int episodes = 100;
  auto* eval = app.add_subcommand("eval", "evaluate a checkpoint with deterministic routing");
  eval->add_option("--ckpt", ckpt, "checkpoint")->required();
  eval->add_option("--episodes", episodes, "episodes per task")->required();
  eval->add_option("--out", out_path, "CSV path (default <ckpt>.eval.csv)");

  std::string analysis;
  int samples = 1000;
  auto* analyze = app.add_subcommand("analyze", "routing statistics of a checkpoint");
  analyze->add_option("kind", analysis, "usage | sparsity | trace")
      ->required()
      ->check(CLI::IsMember({"usage", "sparsity", "trace"}));
  analyze->add_option("--ckpt", ckpt, "checkpoint")->required();
  analyze->add_option("--samples", samples, "timesteps per task")->required();
  analyze->add_option("--out", out_path, "output path (default stdout)");

  int task = 0, step = 0;
  std::string state_text, state_file;
  auto* dot = app.add_subcommand("export-dot", "actor routing graph for one state as DOT");
  dot->add_option("--ckpt", ckpt, "checkpoint")->required();
  dot->add_option("--task", task, "task id")->required();
  auto* state_opt = dot->add_option("--state", state_text, "observation, comma separated");
  dot->add_option("--state-file", state_file, "file holding one observation")->excludes(state_opt);
  dot->add_option("--step", step, "rollout step to snapshot when no state is given");
  dot->add_option("--out", out_path, "output path (default stdout)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e) == 0 ? kOk : kUserError;
  }

  try {
    if (*train) {
      auto cfg = load_config(config_path);
      if (seed) cfg.seed = *seed;
      if (steps) cfg.total_steps = *steps;
      if (!out_dir.empty()) cfg.output_dir = out_dir;
      cfg.validate();
      const auto r = run_train(cfg, resume);
      if (r) std::cout << "final mean success " << r->mean_success() << '\n';
    } else if (*eval) {
      run_eval(ckpt, episodes, out_path.empty() ? ckpt + ".eval.csv" : out_path, std::cout);
    } else if (*analyze) {
      const auto ck = load_checkpoint(ckpt);
      auto rng = named_stream(ck.config.seed, "analyze/" + analysis);
      std::ofstream file;
      if (!out_path.empty()) file = open_out(out_path);
      std::ostream& os = out_path.empty() ? std::cout : file;
      if (samples < 0) throw std::invalid_argument("--samples must be >= 0");
      if (analysis == "usage")
        write_usage_csv(os, analyze_usage(ck.agent, ck.config.suite, samples, rng), ck.config_hash);
      else if (analysis == "sparsity")
        write_sparsity_csv(os, analyze_sparsity(ck.agent, ck.config.suite, samples, rng), ck.config_hash);
      else
        write_trace(os, ck.agent, ck.config.suite, samples, rng, ck.config_hash);
    } else if (*dot) {
      const auto ck = load_checkpoint(ckpt);
      std::optional<Matrix> state;
      if (!state_text.empty()) state = parse_state(state_text);
      if (!state_file.empty()) state = parse_state(read_file(state_file));
      const auto text = run_export_dot(ck, task, state, step);
      if (out_path.empty())
        std::cout << text;
      else
        open_out(out_path) << text;
    }
  } catch (const CheckpointError& e) {
    log().error("{}", e.what());
    return kUserError;
  } catch (const std::invalid_argument& e) {
    log().error("{}", e.what());
    return kUserError;
  } catch (const std::exception& e) {
    log().error("internal error: {}", e.what());
    return kInternalError;
  }
  return kOk;
}
