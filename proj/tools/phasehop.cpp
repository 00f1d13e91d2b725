// phasehop command-line driver.

#include "phasehop/harness.hpp"

#include <CLI11.hpp>

#include <iostream>
#include <map>
#include <optional>

using namespace phasehop;

namespace {

struct RunFlags {
  std::string config;
  std::string out;
  std::vector<std::string> sets;
  std::optional<long> seed, ntraj, threads, nx, np;
  std::optional<double> dt, t_final, record_dt;
  std::optional<std::string> variant, mode, snapshot_times;
};

void add_run_flags(CLI::App* sub, RunFlags& f, RunKind kind) {
  sub->add_option("--config", f.config, "JSON config file")->required()->check(CLI::ExistingFile);
  sub->add_option("--out", f.out, "output directory (overrides output.directory)");
  sub->add_option("--set", f.sets, "override a config value: section.key=value (repeatable)");
  sub->add_option("--dt", f.dt, "numerics.dt");
  sub->add_option("--t-final", f.t_final, "numerics.t_final");
  sub->add_option("--record-dt", f.record_dt, "numerics.record_dt");
  sub->add_option("--threads", f.threads, "numerics.threads (0: PHASEHOP_THREADS or all cores)");
  if (kind == RunKind::sh || kind == RunKind::mf) {
    sub->add_option("--seed", f.seed, "numerics.seed");
    sub->add_option("--ntraj", f.ntraj, "numerics.ntraj");
  }
  if (kind == RunKind::sh) sub->add_option("--variant", f.variant, "method.variant {fssh,pdpssh,apssh}");
  if (kind == RunKind::mf) sub->add_option("--mode", f.mode, "method.mode {standard,phasespace}");
  if (kind == RunKind::qcle) {
    sub->add_option("--variant", f.variant, "method.variant {dqcle,aqcle,pqcle}");
    sub->add_option("--nx", f.nx, "numerics.grid.n_x");
    sub->add_option("--np", f.np, "numerics.grid.n_p");
    sub->add_option("--snapshot-times", f.snapshot_times, "comma-separated output.snapshot_times");
  }
}

std::vector<std::string> collect_overrides(const RunFlags& f) {
  std::vector<std::string> out;
  auto num = [](double v) { return format_double(v); };
  if (f.dt) out.push_back("numerics.dt=" + num(*f.dt));
  if (f.t_final) out.push_back("numerics.t_final=" + num(*f.t_final));
  if (f.record_dt) out.push_back("numerics.record_dt=" + num(*f.record_dt));
  if (f.threads) out.push_back("numerics.threads=" + std::to_string(*f.threads));
  if (f.seed) out.push_back("numerics.seed=" + std::to_string(*f.seed));
  if (f.ntraj) out.push_back("numerics.ntraj=" + std::to_string(*f.ntraj));
  if (f.nx) out.push_back("numerics.grid.n_x=" + std::to_string(*f.nx));
  if (f.np) out.push_back("numerics.grid.n_p=" + std::to_string(*f.np));
  if (f.variant) out.push_back("method.variant=\"" + *f.variant + "\"");
  if (f.mode) out.push_back("method.mode=\"" + *f.mode + "\"");
  if (f.snapshot_times) out.push_back("output.snapshot_times=[" + *f.snapshot_times + "]");
  out.insert(out.end(), f.sets.begin(), f.sets.end());
  return out;
}

int report(const RunOutcome& r) {
  if (r.exit_code == kExitConfig) std::cerr << "phasehop: configuration error: " << r.message << '\n';
  if (r.exit_code == kExitRuntime) std::cerr << "phasehop: run failed: " << r.message << '\n';
  if (r.exit_code == kExitOk && !r.message.empty()) std::cout << r.message << '\n';
  return r.exit_code;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"phase-space surface hopping, Ehrenfest, QCLE and exact wavepacket runs"};
  app.require_subcommand(1);
  app.set_version_flag("--version", PHASEHOP_VERSION);

  const std::vector<std::pair<std::string, RunKind>> runs = {
      {"run-sh", RunKind::sh}, {"run-mf", RunKind::mf}, {"run-qcle", RunKind::qcle}, {"run-exact", RunKind::exact}};
  std::map<std::string, RunFlags> flags;
  std::map<std::string, CLI::App*> subs;
  const std::map<std::string, std::string> help = {
      {"run-sh", "surface hopping ensemble (fssh, pdpssh, apssh)"},
      {"run-mf", "Ehrenfest ensemble (standard or phase-space)"},
      {"run-qcle", "QCLE on a 1-D phase-space grid"},
      {"run-exact", "split-operator wavepacket reference"}};
  for (const auto& [name, kind] : runs) {
    subs[name] = app.add_subcommand(name, help.at(name));
    add_run_flags(subs[name], flags[name], kind);
  }

  std::string inspect_config, inspect_out;
  std::vector<std::string> inspect_sets;
  auto* inspect = app.add_subcommand("inspect", "phase-space adiabat energies and Berry curvature on a grid");
  inspect->add_option("--config", inspect_config, "JSON config with model and inspect sections")
      ->required()
      ->check(CLI::ExistingFile);
  inspect->add_option("--out", inspect_out, "output directory");
  inspect->add_option("--set", inspect_sets, "override a config value: section.key=value (repeatable)");

  std::string cmp_a, cmp_b, cmp_out;
  auto* compare = app.add_subcommand("compare", "per-channel and population differences between two runs");
  compare->add_option("a", cmp_a, "first run directory")->required()->check(CLI::ExistingDirectory);
  compare->add_option("b", cmp_b, "second run directory")->required()->check(CLI::ExistingDirectory);
  compare->add_option("--out", cmp_out, "output directory")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : kExitConfig;
  }

  try {
    for (const auto& [name, kind] : runs) {
      if (!subs[name]->parsed()) continue;
      const auto& f = flags[name];
      json root;
      try {
        root = load_config_file(f.config);
        for (const auto& s : collect_overrides(f)) apply_override(root, s);
      } catch (const Error& e) {
        return report({kExitConfig, e.what()});
      }
      return report(execute_run(root, kind, name, f.out));
    }
    if (inspect->parsed()) {
      json root;
      try {
        root = load_config_file(inspect_config);
        for (const auto& s : inspect_sets) apply_override(root, s);
      } catch (const Error& e) {
        return report({kExitConfig, e.what()});
      }
      return report(execute_inspect(root, inspect_out));
    }
    if (compare->parsed()) return report(execute_compare(cmp_a, cmp_b, cmp_out));
  } catch (const std::exception& e) {
    std::cerr << "phasehop: " << e.what() << '\n';
    return kExitRuntime;
  }
  return kExitConfig;
}
