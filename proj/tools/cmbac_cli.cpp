#include <CLI11.hpp>
#include <json.hpp>

#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>

#include "cmbac/common/errors.hpp"
#include "cmbac/diagnostics/diagnostics.hpp"
#include "cmbac/harness/trainer.hpp"
#include "cmbac/nn/serialize.hpp"

using namespace cmbac;
using nlohmann::json;

namespace {

constexpr int kExitError = 1;
constexpr int kExitAborted = 3;

void print_epoch(const harness::EpochMetrics& m) {
  std::ostringstream line;
  line << "epoch " << m.epoch << " steps " << m.env_steps;
  if (m.eval_return_mean) line << " eval " << *m.eval_return_mean;
  line << " alpha " << m.alpha << " q " << m.q_conservative_mean;
  if (m.aborted) line << " ABORTED";
  std::cout << line.str() << std::endl;
}

int cmd_train(const std::string& config_path, std::optional<std::uint64_t> seed, const std::string& variant,
              const std::string& out) {
  json overrides = json::object();
  if (seed) overrides["seed"] = *seed;
  if (!variant.empty()) overrides["variant"] = variant;
  const auto config = harness::with_overrides(harness::load_config(config_path), overrides);
  const auto summary = harness::run_training(config, out, print_epoch);
  if (summary.aborted) {
    std::cerr << "run aborted on a non-finite update after epoch " << summary.epochs;
    if (!summary.last_checkpoint.empty()) std::cerr << "; last good checkpoint " << summary.last_checkpoint;
    std::cerr << '\n';
    return kExitAborted;
  }
  std::cout << "done: " << summary.epochs << " epochs, " << summary.env_steps << " env steps, checkpoint "
            << summary.last_checkpoint << '\n';
  return 0;
}

int cmd_eval(const std::string& checkpoint, int episodes) {
  const auto trainer = harness::Trainer::restore(nn::read_file(checkpoint));
  const auto r = trainer->evaluate(episodes);
  std::cout << json{{"episodes", episodes}, {"mean", r.mean}, {"std", r.std}, {"returns", r.returns}}.dump() << '\n';
  return 0;
}

int cmd_diag(const std::string& kind, const std::string& checkpoint, const std::string& out, int points) {
  const auto trainer = harness::Trainer::restore(nn::read_file(checkpoint));
  const auto& c = trainer->config();
  diagnostics::McConfig mc{c.gamma, c.mc_horizon, c.mc_episodes, trainer->agent().alpha()};
  Rng rng = Rng::derive(c.seed, "diagnostics");
  const int n = points > 0 ? points : c.diag_points;
  if (kind == "scatter") {
    diagnostics::ScatterConfig sc;
    sc.n_points = n;
    sc.eval_episodes = c.diag_eval_episodes;
    sc.mc = mc;
    sc.global_horizon = c.global_horizon > 0 ? c.global_horizon : trainer->env().spec().horizon;
    const auto res = diagnostics::emit_scatter(trainer->env(), trainer->agent().policy(), trainer->agent().critics(),
                                               trainer->agent().aggregator(), trainer->ensemble(), sc, rng);
    const std::string path = out.empty() ? "scatter.csv" : out;
    diagnostics::write_scatter_csv(path, res);
    std::cout << json{{"csv", path},
                      {"points", n},
                      {"global_horizon", sc.global_horizon},
                      {"spearman_head_std", res.spearman_head_std},
                      {"spearman_global", res.spearman_global}}
                     .dump()
              << '\n';
    return 0;
  }
  if (kind == "model-estimates") {
    diagnostics::ModelEstimateConfig mcfg;
    mcfg.n_points = n;
    mcfg.eval_episodes = c.diag_eval_episodes;
    mcfg.mc = mc;
    const auto recs =
        diagnostics::emit_model_estimates(trainer->env(), trainer->agent().policy(), trainer->agent().critics(), mcfg, rng);
    const std::string path = out.empty() ? "model_estimates.csv" : out;
    diagnostics::write_model_estimates_csv(path, recs);
    std::cout << json{{"csv", path}, {"points", n}, {"heads", trainer->agent().critics().heads()}}.dump() << '\n';
    return 0;
  }
  throw ConfigError("diag: unknown kind '" + kind + "' (expected scatter or model-estimates)");
}

// Cartesian product over {"key": [v1, v2, ...], ...}.
std::vector<json> expand_grid(const json& grid) {
  if (!grid.is_object()) throw ConfigError("grid must be a JSON object of arrays");
  std::vector<json> combos{json::object()};
  for (const auto& [key, values] : grid.items()) {
    if (!values.is_array() || values.empty()) throw ConfigError("grid entry '" + key + "' must be a non-empty array");
    std::vector<json> next;
    for (const auto& base : combos) {
      for (const auto& v : values) {
        json c = base;
        c[key] = v;
        next.push_back(std::move(c));
      }
    }
    combos = std::move(next);
  }
  return combos;
}

int cmd_sweep(const std::string& config_path, const std::string& grid_path, const std::string& out) {
  const auto base = harness::load_config(config_path);
  json grid;
  {
    std::ifstream in(grid_path);
    if (!in) throw ConfigError("cannot read grid '" + grid_path + "'");
    try {
      in >> grid;
    } catch (const json::parse_error& e) {
      throw ConfigError("grid is not valid JSON: " + std::string(e.what()));
    }
  }
  const auto combos = expand_grid(grid);
  std::vector<harness::TrainerConfig> configs;
  for (const auto& c : combos) configs.push_back(harness::with_overrides(base, c));
  std::filesystem::create_directories(out);
  json summary = json::array();
  int status = 0;
  for (std::size_t i = 0; i < configs.size(); ++i) {
    const std::string dir = out + "/run_" + std::to_string(i);
    std::cout << "sweep run " << i << ": " << combos[i].dump() << std::endl;
    const auto s = harness::run_training(configs[i], dir, print_epoch);
    if (s.aborted) status = kExitAborted;
    summary.push_back({{"dir", dir},
                       {"overrides", combos[i]},
                       {"epochs", s.epochs},
                       {"aborted", s.aborted},
                       {"final_eval", s.final_eval ? json(*s.final_eval) : json(nullptr)}});
  }
  std::ofstream(out + "/sweep.json") << summary.dump(2) << '\n';
  return status;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Conservative model-based actor-critic: training, evaluation and diagnostics"};
  app.require_subcommand(1);

  std::string config, variant, out = "runs/latest", checkpoint, grid, diag_out;
  std::uint64_t seed = 0;
  int episodes = 10, points = 0;

  auto* train = app.add_subcommand("train", "Train one run");
  train->add_option("--config", config, "Config JSON")->required()->check(CLI::ExistingFile);
  auto* seed_opt = train->add_option("--seed", seed, "Override the root seed");
  train->add_option("--variant", variant, "Override the algorithm variant");
  train->add_option("--out", out, "Output directory");

  auto* eval = app.add_subcommand("eval", "Evaluate the policy of a checkpoint");
  eval->add_option("--checkpoint", checkpoint)->required()->check(CLI::ExistingFile);
  eval->add_option("--episodes", episodes)->check(CLI::PositiveNumber);

  auto* diag = app.add_subcommand("diag", "Uncertainty and per-model estimate diagnostics");
  diag->require_subcommand(1);
  auto* scatter = diag->add_subcommand("scatter", "Head-std and Global uncertainty vs |Q error|");
  auto* estimates = diag->add_subcommand("model-estimates", "Per-head Q estimates vs Monte-Carlo return");
  for (auto* sub : {scatter, estimates}) {
    sub->add_option("--checkpoint", checkpoint)->required()->check(CLI::ExistingFile);
    sub->add_option("--out", diag_out, "CSV path");
    sub->add_option("--points", points, "Evaluation points (default from config)");
  }

  auto* sweep = app.add_subcommand("sweep", "Run the cartesian product of a parameter grid");
  sweep->add_option("--config", config)->required()->check(CLI::ExistingFile);
  sweep->add_option("--grid", grid)->required()->check(CLI::ExistingFile);
  sweep->add_option("--out", out, "Output directory");

  CLI11_PARSE(app, argc, argv);

  try {
    if (*train) return cmd_train(config, *seed_opt ? std::optional<std::uint64_t>(seed) : std::nullopt, variant, out);
    if (*eval) return cmd_eval(checkpoint, episodes);
    if (*scatter) return cmd_diag("scatter", checkpoint, diag_out, points);
    if (*estimates) return cmd_diag("model-estimates", checkpoint, diag_out, points);
    if (*sweep) return cmd_sweep(config, grid, out);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitError;
  }
  return kExitError;
}
