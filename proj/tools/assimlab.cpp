// assimlab: command-line front end for audience-based assimilation studies.

#include <iostream>
#include <string>

#include <CLI11.hpp>

#include "assimlab/study.hpp"

namespace {

void add_common(CLI::App* cmd, assimlab::CommandOptions& o, bool config_required) {
  auto* config = cmd->add_option("--config", o.config, "study config (JSON)");
  if (config_required) config->required();
  cmd->add_option("--seed", o.seed, "root seed, overrides the config");
  cmd->add_option("--out", o.out, "output directory");
}

void add_audience(CLI::App* cmd, assimlab::CommandOptions& o) {
  cmd->add_option("--backend", o.backend, "http, sim or snapshot")->check(CLI::IsMember({"http", "sim", "snapshot"}));
  cmd->add_option("--endpoint", o.endpoint, "reach endpoint for the http backend");
  cmd->add_option("--budget", o.budget, "maximum number of planned requests");
  cmd->add_option("--rate", o.rate, "request rate, e.g. 200/1h");
  cmd->add_option("--resume", o.resume, "snapshot file to resume or read");
  cmd->add_flag("--allow-partial", o.allow_partial, "continue on an incomplete snapshot, flagging missing counts");
}

void print_error(const std::string& kind, const std::string& message) {
  assimlab::Json doc = {{"error", kind}, {"message", message}};
  std::cerr << doc.dump() << std::endl;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Assimilation measurement from advertising audience estimates"};
  app.set_version_flag("--version", assimlab::kVersion);
  app.require_subcommand(1);

  assimlab::CommandOptions options;
  std::string sim_action;
  const std::pair<const char*, const char*> commands[] = {
      {"collect", "plan every query and fetch them into the snapshot"},
      {"validate", "KL check of generation proxies against ground truth"},
      {"ar", "interest filter, assimilation ratios and median CIs per pair"},
      {"compare", "grouped medians and Kruskal-Wallis tests"},
      {"kde", "density curves of log AR per pair"},
      {"regress", "OLS of log AR on demographic dummies"},
  };
  for (const auto& [name, help] : commands) {
    auto* cmd = app.add_subcommand(name, help);
    add_common(cmd, options, true);
    add_audience(cmd, options);
  }
  auto* sim = app.add_subcommand("sim", "generate or serve a synthetic audience world");
  sim->add_option("action", sim_action, "generate or serve")->required()->check(CLI::IsMember({"generate", "serve"}));
  add_common(sim, options, false);
  sim->add_option("--scenario", options.scenario, "scenario file");
  sim->add_option("--host", options.host, "bind address");
  sim->add_option("--port", options.port, "port, 0 picks a free one");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForVersion& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    print_error("usage", e.what());
    return 2;
  }

  try {
    const auto* cmd = app.get_subcommands().front();
    if (cmd->get_name() == "sim") return assimlab::run_sim_command(sim_action, options);
    return assimlab::run_study_command(cmd->get_name(), options);
  } catch (const assimlab::Error& e) {
    print_error(std::string(assimlab::to_string(e.kind())), e.what());
    return 1;
  } catch (const std::exception& e) {
    print_error("internal", e.what());
    return 1;
  }
}
