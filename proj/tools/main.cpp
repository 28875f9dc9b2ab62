#include <CLI11.hpp>
#include <cstdio>
#include <iostream>
#include <map>

#if defined(__GLIBC__)
#include <malloc.h>
#endif

#include "command.hpp"
#include "ildm/error.hpp"

namespace {

std::string flag_name(const std::string& key) { return "--" + key; }

// Training allocates and frees multi-megabyte activations every step. Keeping
// them on the heap instead of fresh mmaps avoids refaulting the pages.
void tune_allocator() {
#if defined(__GLIBC__)
  mallopt(M_MMAP_THRESHOLD, 1 << 30);
  mallopt(M_TRIM_THRESHOLD, 1 << 30);
  mallopt(M_TOP_PAD, 256 << 20);
#endif
}

}  // namespace

int main(int argc, char** argv) {
  using namespace ildm;
  tune_allocator();
  std::vector<cli::Command> commands;
  for (auto group : {cli::data_commands(), cli::train_commands(), cli::eval_commands()}) {
    for (auto& c : group) commands.push_back(std::move(c));
  }

  CLI::App app{"ildm: joint image and intrinsic latent diffusion at desk scale"};
  app.require_subcommand(1);
  std::map<std::string, std::map<std::string, std::string>> values;
  std::map<std::string, std::string> config_files;
  std::vector<std::pair<CLI::App*, const cli::Command*>> subs;
  for (const auto& cmd : commands) {
    CLI::App* sub = app.add_subcommand(cmd.name, cmd.summary);
    sub->add_option("--config", config_files[cmd.name], "key = value file applied before command-line flags");
    for (const auto& key : cmd.keys) {
      std::string help = key.help;
      if (!key.default_value.empty()) help += " [" + key.default_value + "]";
      sub->add_option(flag_name(key.name), values[cmd.name][key.name], help);
    }
    subs.emplace_back(sub, &cmd);
  }

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    if (e.get_exit_code() == 0) return app.exit(e);
    const ConfigError err(e.what(), "argv");
    std::cerr << err.envelope() << "\n";
    return 2;
  }

  for (const auto& [sub, cmd] : subs) {
    if (!sub->parsed()) continue;
    try {
      RunConfig cfg(cmd->keys);
      if (!config_files[cmd->name].empty()) cfg.load_file(config_files[cmd->name]);
      for (const auto& key : cmd->keys) {
        if (sub->count(flag_name(key.name)) > 0) cfg.set(key.name, values[cmd->name][key.name]);
      }
      return cmd->run(cfg);
    } catch (const Error& e) {
      std::cerr << e.envelope() << "\n";
      return 1;
    } catch (const std::exception& e) {
      std::cerr << ContractError(std::string("internal: ") + e.what()).envelope() << "\n";
      return 1;
    }
  }
  return 0;
}
