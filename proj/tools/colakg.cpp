// Copyright 2026 The colakg Authors.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

// colakg command-line driver.
//
//   colakg [--config FILE] [--seed N] [--work-dir DIR] [--threads N]
//          [--deterministic] <command> [--key=value ...]
//
// Commands run in order: prepare, embed, graph, train, eval. ablate and sweep
// need prepare and embed. Any config key may be overridden as --key=value.

#include <CLI11.hpp>

#include <algorithm>
#include <iostream>

#include "colakg/pipeline.hpp"

namespace {

using colakg::Error;
using colakg::ErrorKind;

/// Turns leftover "--key=value" arguments into config overrides. Dashes in
/// keys are accepted as underscores.
std::vector<std::pair<std::string, std::string>> parse_overrides(
    const std::vector<std::string>& extras) {
  std::vector<std::pair<std::string, std::string>> out;
  for (const auto& arg : extras) {
    if (!arg.starts_with("--") || arg.find('=') == std::string::npos)
      throw Error(ErrorKind::kInput, "unexpected argument '" + arg + "', expected --key=value");
    auto eq = arg.find('=');
    auto key = arg.substr(2, eq - 2);
    std::replace(key.begin(), key.end(), '-', '_');
    out.emplace_back(key, arg.substr(eq + 1));
  }
  return out;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Knowledge-graph-enhanced recommendation with frozen semantic embeddings"};
  app.require_subcommand(1);
  app.fallthrough();
  app.allow_extras();

  std::string config_path, work_dir;
  std::optional<std::uint64_t> seed;
  std::optional<unsigned> threads;
  bool deterministic = false;
  app.add_option("--config", config_path, "key=value config file");
  app.add_option("--seed", seed, "random seed for splits, sampling and initialization");
  app.add_option("--work-dir", work_dir, "directory holding all stage artifacts");
  app.add_option("--threads", threads, "worker threads");
  app.add_flag("--deterministic", deterministic, "single-threaded, reproducible execution");

  const std::vector<std::pair<std::string, std::string>> commands = {
      {"prepare", "k-core filter and split the interaction log"},
      {"embed", "render prompts and build the semantic embedding table"},
      {"graph", "build the item-item neighbor graph"},
      {"train", "train the model and write checkpoints"},
      {"eval", "evaluate the best checkpoint on the test split"},
      {"ablate", "train and evaluate the full model and four ablations"},
      {"sweep", "train and evaluate over neighbor counts k"},
  };
  for (const auto& [name, help] : commands) app.add_subcommand(name, help)->allow_extras();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }

  auto* sub = app.get_subcommands().front();
  const std::string command = sub->get_name();
  try {
    std::vector<std::pair<std::string, std::string>> overrides;
    if (seed) overrides.emplace_back("seed", std::to_string(*seed));
    if (!work_dir.empty()) overrides.emplace_back("work_dir", work_dir);
    if (threads) overrides.emplace_back("threads", std::to_string(*threads));
    if (deterministic) overrides.emplace_back("deterministic", "true");
    // Subcommand overrides come last and therefore win.
    auto extras = app.remaining();
    for (auto& a : sub->remaining()) extras.push_back(a);
    for (auto& kv : parse_overrides(extras)) overrides.push_back(std::move(kv));

    colakg::StageContext ctx{colakg::load_config(config_path, overrides), &std::cerr};
    if (command == "prepare") colakg::run_prepare(ctx);
    else if (command == "embed") colakg::run_embed(ctx);
    else if (command == "graph") colakg::run_graph(ctx);
    else if (command == "train") colakg::run_train(ctx);
    else if (command == "eval") colakg::run_eval(ctx);
    else if (command == "ablate") {
      colakg::run_ablate(ctx);
      std::cout << colakg::read_file(ctx.workspace().ablation_tsv());
    } else if (command == "sweep") {
      colakg::run_sweep(ctx);
      std::cout << colakg::read_file(ctx.workspace().sweep_tsv());
    }
    return 0;
  } catch (const Error& e) {
    std::cerr << "colakg " << command << ": " << e.what() << "\n";
    return colakg::exit_code(e.kind());
  } catch (const std::exception& e) {
    std::cerr << "colakg " << command << ": internal error: " << e.what() << "\n";
    return 1;
  }
}
