// Apache License, Version 2.0, refer to LICENSE.txt
//
// fbc run | summarize | sweep. All outputs are CSV or JSON lines; nothing is plotted.

#include "fbc/config.hpp"
#include "fbc/data_io.hpp"
#include "fbc/metrics.hpp"
#include "fbc/sampler.hpp"

#include <CLI11.hpp>

#include <charconv>
#include <exception>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <thread>

namespace fs = std::filesystem;
using namespace fbc;

namespace {

std::string num(double x) {
  char buf[64];
  const auto res = std::to_chars(buf, buf + sizeof buf, x);
  return std::string(buf, res.ptr);
}

std::ofstream open_out(const fs::path& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  return out;
}

const char* method_name(bool fairness) { return fairness ? "FBC" : "MFM"; }

// Chains run concurrently; chain c uses derive_seed(seed, c).
std::vector<ChainResult> run_chains(const GroupedDataset& data, const RunConfig& cfg) {
  std::vector<ChainResult> results(cfg.chains);
  std::vector<std::exception_ptr> errors(cfg.chains);
  std::vector<std::thread> workers;
  for (int c = 0; c < cfg.chains; ++c)
    workers.emplace_back([&, c] {
      try {
        auto sc = cfg.sampler;
        sc.seed = derive_seed(cfg.sampler.seed, static_cast<std::uint64_t>(c));
        results[c] = run_fbc(data, cfg.prior, sc);
      } catch (...) {
        errors[c] = std::current_exception();
      }
    });
  for (auto& w : workers) w.join();
  for (auto& e : errors)
    if (e) std::rethrow_exception(e);
  return results;
}

int cmd_run(const fs::path& config_path, std::optional<int> chains, std::optional<std::string> output, bool full_matching,
            bool quiet) {
  auto cfg = load_run_config(config_path);
  if (chains) cfg.chains = *chains;
  if (output) cfg.output_dir = *output;
  if (full_matching) cfg.sampler.keep_matching = true;
  validate(cfg);
  const auto data = load_dataset(cfg.dataset);
  cfg.sampler.validate(data.group_sizes());
  if (cfg.sampler.family == FamilyKind::beta_bernoulli && data.kind() != FeatureKind::binary)
    throw InvalidData("beta-bernoulli family requires binary features");

  if (!quiet)
    std::cerr << "fbc: " << data.total_size() << " instances, " << data.num_groups() << " groups, d = " << data.dim()
              << ", " << cfg.chains << " chain(s)\n";
  const auto results = run_chains(data, cfg);

  fs::create_directories(cfg.output_dir);
  open_out(cfg.output_dir / "resolved_config.json") << resolved_config_json(cfg);
  auto summary = open_out(cfg.output_dir / "summary.csv");
  auto samples = open_out(cfg.output_dir / "samples.csv");
  summary << "method,K,cost,delta,bal\n";
  samples << "chain,iteration,K,cost,delta,bal,nll\n";
  for (int c = 0; c < cfg.chains; ++c) {
    const auto& r = results[c];
    ChainHeader header;
    header.seed = r.seed;
    header.chain = c;
    header.fairness = r.fairness;
    header.reference_group = data.group_names()[0];
    header.group_sizes = data.group_sizes();
    serialize_chain(cfg.output_dir / ("chain_" + std::to_string(c) + ".jsonl"), header, r.samples, r.trace);
    if (r.reported >= 0) {
      const auto& s = r.samples[r.reported];
      summary << method_name(r.fairness) << ',' << s.num_clusters << ',' << num(s.cost) << ',' << num(s.delta) << ','
              << num(s.bal) << '\n';
    }
    for (const auto& s : r.samples)
      samples << c << ',' << s.iteration << ',' << s.num_clusters << ',' << num(s.cost) << ',' << num(s.delta) << ','
              << num(s.bal) << ',' << num(s.nll) << '\n';
  }
  if (!quiet) std::cerr << "fbc: wrote " << cfg.output_dir.string() << "\n";
  return 0;
}

int cmd_summarize(const std::vector<std::string>& files, const fs::path& out_dir, int h_max, bool mode_only) {
  std::vector<std::pair<std::string, ChainFile>> chains;
  for (const auto& f : files) {
    try {
      for (auto& c : load_chain(f)) chains.emplace_back(f, std::move(c));
    } catch (const std::exception& e) {
      std::cerr << "fbc: warning: skipping " << f << ": " << e.what() << "\n";
    }
  }
  if (chains.empty()) {
    std::cerr << "fbc: no readable chain files\n";
    return 1;
  }
  fs::create_directories(out_dir);
  auto hist = open_out(out_dir / "k_histogram.csv");
  auto acf = open_out(out_dir / "autocorrelation.csv");
  auto trace = open_out(out_dir / "nll_trace.csv");
  auto summary = open_out(out_dir / "summary.csv");
  hist << "chain,K,count\n";
  acf << "chain,lag,rho\n";
  trace << "chain,iteration,K,nll\n";
  summary << "method,K,cost,delta,bal\n";
  std::map<int, int> pooled;
  for (std::size_t c = 0; c < chains.size(); ++c) {
    const auto& chain = chains[c].second;
    const auto s = summarize_chain(chain.samples, chain.trace, h_max);
    for (const auto& [k, count] : s.k_histogram) {
      hist << c << ',' << k << ',' << count << '\n';
      pooled[k] += count;
    }
    for (std::size_t h = 0; h < s.k_autocorrelation.size(); ++h) acf << c << ',' << h << ',' << num(s.k_autocorrelation[h]) << '\n';
    for (const auto& t : s.nll_trace) trace << c << ',' << t.iteration << ',' << t.num_clusters << ',' << num(t.nll) << '\n';
    if (chain.samples.empty()) continue;
    std::vector<ChainSample> kept;
    for (const auto& smp : chain.samples)
      if (!mode_only || smp.num_clusters == s.mode_k) kept.push_back(smp);
    const auto m = summarize_chain(kept, {}, 0);
    summary << method_name(chain.header.fairness) << ',' << s.mode_k << ',' << num(m.mean_cost) << ','
            << num(m.mean_delta) << ',' << num(m.mean_bal) << '\n';
  }
  for (const auto& [k, count] : pooled) hist << "all," << k << ',' << count << '\n';
  return 0;
}

int cmd_sweep(const fs::path& config_path, const std::string& param, const std::vector<double>& values,
              std::optional<std::string> output) {
  if (param != "m" && param != "tau" && param != "kappa")
    throw std::invalid_argument("--param must be one of m, tau, kappa");
  const auto base = load_run_config(config_path);
  const auto data = load_dataset(base.dataset);
  const fs::path out_path = output ? fs::path(*output) : base.output_dir / ("sweep_" + param + ".csv");
  if (out_path.has_parent_path()) fs::create_directories(out_path.parent_path());
  auto out = open_out(out_path);
  out << "value,K,cost,delta,bal,max_delta,status\n";
  for (double v : values) {
    try {
      auto cfg = base;
      if (param == "m") cfg.sampler.mask_sizes = {static_cast<int>(v)};
      else if (param == "tau") cfg.prior.tau = v;
      else cfg.prior.kappa = v;
      validate(cfg);
      const auto r = run_fbc(data, cfg.prior, cfg.sampler);
      const auto s = summarize_chain(r.samples, {}, 0);
      out << num(v) << ',' << s.mode_k << ',' << num(s.mean_cost) << ',' << num(s.mean_delta) << ','
          << num(s.mean_bal) << ',' << num(s.max_delta) << ",ok\n";
    } catch (const std::exception& e) {
      std::cerr << "fbc: sweep value " << v << " failed: " << e.what() << "\n";
      out << num(v) << ",,,,,,error\n";
    }
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Fair Bayesian clustering: MCMC over partitions and matching maps"};
  app.require_subcommand(1);

  auto* run = app.add_subcommand("run", "Run chains from a JSON config");
  std::string run_config;
  std::optional<int> chains;
  std::optional<std::string> run_output;
  bool full_matching = false, quiet = false;
  run->add_option("config", run_config, "Config file (JSON, schema_version 1)")->required();
  run->add_option("--chains", chains, "Number of chains (overrides output.chains)")->check(CLI::PositiveNumber);
  run->add_option("--output", run_output, "Output directory (overrides output.directory)");
  run->add_flag("--full-matching", full_matching, "Store T, T0 and E in every sample record");
  run->add_flag("--quiet", quiet, "No progress messages");

  auto* summarize = app.add_subcommand("summarize", "Summarize chain files into plot-ready CSVs");
  std::vector<std::string> chain_files;
  std::string sum_output = "fbc-summary";
  int h_max = 50;
  bool mode_only = false;
  summarize->add_option("chains", chain_files, "Chain files (JSON lines)")->required();
  summarize->add_option("--output", sum_output, "Output directory")->capture_default_str();
  summarize->add_option("--h-max", h_max, "Largest autocorrelation lag")->capture_default_str()->check(CLI::NonNegativeNumber);
  summarize->add_flag("--mode-k", mode_only, "Average cost, delta and bal over posterior-mode-K samples only");

  auto* sweep = app.add_subcommand("sweep", "One run per parameter value; emits a trade-off CSV");
  std::string sweep_config, param;
  std::vector<double> values;
  std::optional<std::string> sweep_output;
  sweep->add_option("config", sweep_config, "Base config file")->required();
  sweep->add_option("--param", param, "m | tau | kappa")->required();
  sweep->add_option("--values", values, "Values to try")->delimiter(',');
  sweep->add_option("--output", sweep_output, "Output CSV path");

  CLI11_PARSE(app, argc, argv);
  try {
    if (*run) return cmd_run(run_config, chains, run_output, full_matching, quiet);
    if (*summarize) return cmd_summarize(chain_files, sum_output, h_max, mode_only);
    if (*sweep) return cmd_sweep(sweep_config, param, values, sweep_output);
  } catch (const std::exception& e) {
    std::cerr << "fbc: error: " << e.what() << "\n";
    return 2;
  }
  return 0;
}
