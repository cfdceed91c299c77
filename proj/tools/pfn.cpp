// pfn: run named experiments or user networks, or validate their structure.
//
//   pfn run <experiment> [--config file.json] [--seed N] [--iters N] [--tol X] [--out DIR] ...
//   pfn validate <experiment> [--config file.json] ...
//   pfn list
//
// Every config key has a flag of the same name; flags win over the file.
// Exit status: 0 criterion met, 1 criterion not met, 2 bad input, 3 numeric failure.

#include "pfn/experiments.hpp"

#include "CLI11.hpp"

#include <filesystem>
#include <fstream>
#include <iostream>

namespace fs = std::filesystem;
using namespace pfn;

namespace {

struct Flags {
  std::string experiment, config;
  std::optional<std::string> variant, averaging, input, network, out, noise, scales, sparseness;
  std::optional<std::uint64_t> seed;
  std::optional<long> iters;
  std::optional<double> tol, epsilon, init_scale;
  std::optional<bool> stop_on_convergence;
  std::optional<unsigned> threads;
  std::optional<Index> T, columns, window, hop;
  std::vector<std::string> observe, data;
};

void add_scenario_flags(CLI::App* cmd, Flags& f) {
  cmd->add_option("experiment", f.experiment, "experiment name (see `pfn list`)");
  cmd->add_option("--config", f.config, "JSON config file")->check(CLI::ExistingFile);
  cmd->add_option("--variant", f.variant);
  cmd->add_option("--seed", f.seed);
  cmd->add_option("--iters", f.iters);
  cmd->add_option("--tol", f.tol);
  cmd->add_option("--epsilon", f.epsilon);
  cmd->add_option("--averaging", f.averaging)->check(CLI::IsMember({"scheme1", "scheme2"}));
  cmd->add_option("--init_scale", f.init_scale);
  cmd->add_option("--stop_on_convergence", f.stop_on_convergence);
  cmd->add_option("--threads", f.threads);
  cmd->add_option("--T", f.T);
  cmd->add_option("--noise", f.noise, "LOW,HIGH");
  cmd->add_option("--scales", f.scales, "comma-separated mixture scales");
  cmd->add_option("--columns", f.columns);
  cmd->add_option("--sparseness", f.sparseness, "ITER:THETA,... breakpoints");
  cmd->add_option("--observe", f.observe, "var:slice=State or var:slice:index=value, 1-based");
  cmd->add_option("--input", f.input, "16-bit PCM mono WAV for sparse-hier");
  cmd->add_option("--window", f.window);
  cmd->add_option("--hop", f.hop);
  cmd->add_option("--network", f.network, "network description JSON");
  cmd->add_option("--data", f.data, "VAR=file.csv, observed values of a whole variable");
  cmd->add_option("--out", f.out, "output directory");
}

std::vector<double> split_numbers(const std::string& text, char sep, const std::string& what) {
  std::vector<double> out;
  std::stringstream in(text);
  std::string part;
  while (std::getline(in, part, sep)) {
    try {
      std::size_t used = 0;
      out.push_back(std::stod(part, &used));
      if (used != part.size()) throw std::invalid_argument("trailing");
    } catch (const std::exception&) {
      throw ValidationError("--" + what + ": '" + part + "' is not a number");
    }
  }
  return out;
}

// Flags as a JSON object using the config key names, so both go through one parser.
Json flags_to_json(const Flags& f) {
  Json j = Json::object();
  if (!f.experiment.empty()) j["experiment"] = f.experiment;
  if (f.variant) j["variant"] = *f.variant;
  if (f.seed) j["seed"] = *f.seed;
  if (f.iters) j["iters"] = *f.iters;
  if (f.tol) j["tol"] = *f.tol;
  if (f.epsilon) j["epsilon"] = *f.epsilon;
  if (f.averaging) j["averaging"] = *f.averaging;
  if (f.init_scale) j["init_scale"] = *f.init_scale;
  if (f.stop_on_convergence) j["stop_on_convergence"] = *f.stop_on_convergence;
  if (f.threads) j["threads"] = *f.threads;
  if (f.T) j["T"] = *f.T;
  if (f.noise) j["noise"] = split_numbers(*f.noise, ',', "noise");
  if (f.scales) j["scales"] = split_numbers(*f.scales, ',', "scales");
  if (f.columns) j["columns"] = *f.columns;
  if (f.sparseness) {
    Json pts = Json::array();
    std::stringstream in(*f.sparseness);
    std::string part;
    while (std::getline(in, part, ',')) {
      const auto v = split_numbers(part, ':', "sparseness");
      if (v.size() != 2) throw ValidationError("--sparseness: use ITER:THETA pairs");
      pts.push_back({v[0], v[1]});
    }
    j["sparseness"] = pts;
  }
  if (!f.observe.empty()) j["observe"] = f.observe;
  if (f.input) j["input"] = *f.input;
  if (f.window) j["window"] = *f.window;
  if (f.hop) j["hop"] = *f.hop;
  if (f.network) j["network"] = *f.network;
  if (!f.data.empty()) {
    Json d = Json::object();
    for (const auto& item : f.data) {
      const auto eq = item.find('=');
      if (eq == std::string::npos || eq == 0) throw ValidationError("--data: use VAR=file.csv");
      d[item.substr(0, eq)] = item.substr(eq + 1);
    }
    j["data"] = d;
  }
  if (f.out) j["out"] = *f.out;
  return j;
}

ExperimentConfig load_config(const Flags& f) {
  ExperimentConfig c;
  if (!f.config.empty()) {
    const std::string base = fs::path(f.config).parent_path().string();
    merge_experiment_config(c, read_json_file(f.config), base);
  }
  merge_experiment_config(c, flags_to_json(f));
  if (c.experiment.empty()) throw ValidationError("no experiment given (positional argument or config key)");
  resolve_variant(c);
  return c;
}

std::string file_name(std::string name) {
  for (char& ch : name)
    if (!std::isalnum(static_cast<unsigned char>(ch)) && ch != '_' && ch != '-') ch = '_';
  return name;
}

int cmd_run(const Flags& f) {
  const ExperimentConfig c = load_config(f);
  const fs::path out(c.out);
  fs::create_directories(out / "img");
  const ExperimentResult r = run_experiment(c);

  {
    std::ofstream trace(out / "trace.csv", std::ios::binary);
    write_trace_csv(r.trace, trace);
    if (!trace) throw IoError("write failed for " + (out / "trace.csv").string());
  }
  const Json summary = summary_json(r);
  {
    std::ofstream s(out / "summary.json", std::ios::binary);
    s << summary.dump(2) << '\n';
    if (!s) throw IoError("write failed for " + (out / "summary.json").string());
  }
  for (const auto& [name, M] : r.images)
    if (M.size() > 0) write_heatmap(M, (out / "img" / (file_name(name) + ".ppm")).string());

  std::cout << r.experiment << '/' << r.variant << " seed " << r.seed << ": " << r.trace.iterations
            << " iterations, max RMSE " << r.trace.final_max_rmse() << '\n'
            << "criterion: " << r.criterion << '\n'
            << "metrics: " << r.metrics.dump() << '\n'
            << (r.passed ? "PASS" : "FAIL") << '\n';
  return r.passed ? 0 : 1;
}

int cmd_validate(const Flags& f) {
  const ExperimentConfig c = load_config(f);
  const FactorNetwork net = build_experiment_network(c);
  std::cout << describe_network(net);
  return 0;
}

int cmd_list() {
  for (const auto& [name, variants] : experiment_catalog()) {
    std::cout << name << ':';
    for (const auto& v : variants) std::cout << ' ' << v;
    std::cout << '\n';
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Positive factor network experiments"};
  app.require_subcommand(1);
  Flags run_flags, validate_flags;
  CLI::App* run_cmd = app.add_subcommand("run", "run an experiment and write trace.csv, summary.json, img/");
  add_scenario_flags(run_cmd, run_flags);
  CLI::App* validate_cmd = app.add_subcommand("validate", "build and level the network without iterating");
  add_scenario_flags(validate_cmd, validate_flags);
  app.add_subcommand("list", "list experiments and their variants");

  CLI11_PARSE(app, argc, argv);

  try {
    if (run_cmd->parsed()) return cmd_run(run_flags);
    if (validate_cmd->parsed()) return cmd_validate(validate_flags);
    return cmd_list();
  } catch (const NumericError& e) {
    std::cerr << "numeric error: " << e.what() << '\n';
    return 3;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 2;
  }
}
