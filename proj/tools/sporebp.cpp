/*
Licensed under the Apache License, Version 2.0 (the "License");
you may not use this file except in compliance with the License.
You may obtain a copy of the License at

    http://www.apache.org/licenses/LICENSE-2.0

Unless required by applicable law or agreed to in writing, software
distributed under the License is distributed on an "AS IS" BASIS,
WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
See the License for the specific language governing permissions and
limitations under the License.
*/

#include <fstream>
#include <iostream>
#include <sstream>

#include "CLI11.hpp"
#include "sporebp/sporebp.hpp"

namespace {

std::string read_text(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw sporebp::ConfigError("cannot read config file " + path);
  std::ostringstream s;
  s << f.rdbuf();
  return s.str();
}

int validate_command(const std::string& config_path) {
  const auto cfg = sporebp::parse_config(read_text(config_path), {std::nullopt, true});
  const auto report = sporebp::validate(cfg.model, false);
  std::cout << "experiment: " << cfg.type() << "\n";
  for (const auto& c : report.checks)
    std::cout << (c.passed ? "  ok    " : "  FAIL  ") << c.name << "  [" << c.detail << "]\n";
  if (report.mean_zero) std::cout << "  note  mean offspring is 0; closed form available\n";
  std::cout << "resolved config:\n" << cfg.resolved.dump(2) << "\n";
  return report.passed() ? sporebp::kExitOk : sporebp::kExitConfig;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Spore/host branching process: simulation, backward equations, extinction-time statistics"};
  app.require_subcommand(1);

  std::string config_path;
  std::optional<std::uint64_t> seed;
  std::string out_dir;
  unsigned threads = 1;
  bool ephemeral = false;

  auto* run = app.add_subcommand("run", "Run the experiment described by a JSON config");
  run->add_option("--config", config_path, "Experiment config (JSON)")->required()->check(CLI::ExistingFile);
  run->add_option("--seed", seed, "Override experiment.seed");
  run->add_option("--out-dir", out_dir, "Override output.dir");
  run->add_option("--threads", threads, "Worker threads for Monte Carlo batches")->check(CLI::Range(1u, 1024u));
  run->add_flag("--ephemeral", ephemeral, "Allow randomized experiments without a seed");

  auto* val = app.add_subcommand("validate", "Parse a config and report the model hypotheses");
  val->add_option("--config", config_path, "Experiment config (JSON)")->required()->check(CLI::ExistingFile);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : sporebp::kExitConfig;
  }

  try {
    if (val->parsed()) return validate_command(config_path);

    const auto cfg = sporebp::parse_config(read_text(config_path), {seed, ephemeral});
    sporebp::RunOptions opts;
    opts.out_dir = out_dir;
    opts.threads = threads;
    const auto result = sporebp::run_experiment(cfg, opts);
    std::cout << cfg.type() << ": " << result.summary << "\n";
    for (const auto& p : result.artifacts) std::cout << "  " << p.string() << "\n";
    return result.exit_code;
  } catch (const sporebp::ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return sporebp::kExitConfig;
  } catch (const sporebp::BudgetExhausted& e) {
    std::cerr << "budget exhausted: " << e.what() << "\n";
    return sporebp::kExitBudget;
  } catch (const sporebp::NumericalError& e) {
    std::cerr << "numerical failure: " << e.what() << "\n";
    return sporebp::kExitNumerical;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return sporebp::kExitNumerical;
  }
}
