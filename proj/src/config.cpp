// Apache License, Version 2.0, refer to LICENSE.txt

#include "fbc/config.hpp"

#include <json.hpp>

#include <fstream>
#include <set>
#include <sstream>
#include <stdexcept>

namespace fbc {

using nlohmann::json;

namespace {

void reject_unknown(const json& obj, const std::string& where, std::initializer_list<const char*> allowed) {
  if (!obj.is_object()) throw std::invalid_argument("config: '" + where + "' must be an object");
  std::set<std::string> keys(allowed.begin(), allowed.end());
  for (const auto& [key, value] : obj.items())
    if (!keys.count(key)) throw std::invalid_argument("config: unknown key '" + where + "." + key + "'");
}

template <typename T>
void read(const json& obj, const char* key, T& out, const std::string& where) {
  if (!obj.contains(key)) return;
  try {
    out = obj.at(key).get<T>();
  } catch (const json::exception& e) {
    throw std::invalid_argument("config: bad value for '" + where + "." + key + "': " + e.what());
  }
}

std::filesystem::path resolve(const std::filesystem::path& p, const std::filesystem::path& base) {
  if (p.empty() || p.is_absolute() || base.empty()) return p;
  return base / p;
}

}  // namespace

RunConfig parse_run_config(const std::string& text, const std::filesystem::path& base_dir) {
  json root;
  try {
    root = json::parse(text);
  } catch (const json::parse_error& e) {
    throw std::invalid_argument(std::string("config: invalid JSON: ") + e.what());
  }
  reject_unknown(root, "root", {"schema_version", "dataset", "prior", "sampler", "output"});
  if (!root.contains("schema_version")) throw std::invalid_argument("config: schema_version is required");
  if (root.at("schema_version") != kConfigSchemaVersion)
    throw std::invalid_argument("config: unsupported schema_version (expected " +
                                std::to_string(kConfigSchemaVersion) + ")");

  RunConfig cfg;
  if (root.contains("dataset")) {
    const auto& d = root.at("dataset");
    reject_unknown(d, "dataset", {"source", "path", "features", "sensitive", "preprocess", "subsample", "seed"});
    read(d, "source", cfg.dataset.source, "dataset");
    std::string path;
    read(d, "path", path, "dataset");
    cfg.dataset.path = resolve(path, base_dir);
    read(d, "features", cfg.dataset.features, "dataset");
    read(d, "sensitive", cfg.dataset.sensitive, "dataset");
    std::string preprocess = to_string(cfg.dataset.preprocess);
    read(d, "preprocess", preprocess, "dataset");
    cfg.dataset.preprocess = parse_preprocess(preprocess);
    if (d.contains("subsample") && !d.at("subsample").is_null()) {
      int k = 0;
      read(d, "subsample", k, "dataset");
      cfg.dataset.subsample = k;
    }
    read(d, "seed", cfg.dataset.seed, "dataset");
  }
  if (root.contains("prior")) {
    const auto& p = root.at("prior");
    reject_unknown(p, "prior", {"gamma", "kappa", "tau", "a", "b", "alpha"});
    read(p, "gamma", cfg.prior.gamma, "prior");
    read(p, "kappa", cfg.prior.kappa, "prior");
    read(p, "tau", cfg.prior.tau, "prior");
    read(p, "a", cfg.prior.a, "prior");
    read(p, "b", cfg.prior.b, "prior");
    read(p, "alpha", cfg.prior.alpha, "prior");
  }
  if (root.contains("sampler")) {
    const auto& s = root.at("sampler");
    reject_unknown(s, "sampler",
                   {"max_iter", "burn_in", "mh_repeats", "mask_sizes", "residual_strategy", "aux_components", "seed",
                    "family", "kernel", "fairness", "random_scan", "full_matching"});
    auto& sc = cfg.sampler;
    read(s, "max_iter", sc.max_iter, "sampler");
    read(s, "burn_in", sc.burn_in, "sampler");
    read(s, "mh_repeats", sc.mh_repeats, "sampler");
    read(s, "mask_sizes", sc.mask_sizes, "sampler");
    read(s, "aux_components", sc.aux_components, "sampler");
    read(s, "seed", sc.seed, "sampler");
    read(s, "fairness", sc.fairness, "sampler");
    read(s, "random_scan", sc.random_scan, "sampler");
    read(s, "full_matching", sc.keep_matching, "sampler");
    std::string text_value = to_string(sc.residual_strategy);
    read(s, "residual_strategy", text_value, "sampler");
    sc.residual_strategy = parse_residual_strategy(text_value);
    text_value = to_string(sc.family);
    read(s, "family", text_value, "sampler");
    sc.family = parse_family(text_value);
    text_value = to_string(sc.kernel);
    read(s, "kernel", text_value, "sampler");
    sc.kernel = parse_partition_kernel(text_value);
  }
  if (root.contains("output")) {
    const auto& o = root.at("output");
    reject_unknown(o, "output", {"directory", "chains"});
    std::string dir = cfg.output_dir.string();
    read(o, "directory", dir, "output");
    cfg.output_dir = resolve(dir, base_dir);
    read(o, "chains", cfg.chains, "output");
  }
  validate(cfg);
  return cfg;
}

RunConfig load_run_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::invalid_argument("config: cannot open " + path.string());
  std::stringstream buf;
  buf << in.rdbuf();
  return parse_run_config(buf.str(), path.parent_path());
}

void validate(const RunConfig& cfg) {
  cfg.prior.validate();
  if (cfg.chains < 1) throw std::invalid_argument("config: output.chains must be at least 1");
  if (cfg.dataset.source != "toy" && cfg.dataset.source != "csv")
    throw std::invalid_argument("config: dataset.source must be 'toy' or 'csv'");
  if (cfg.dataset.source == "csv") {
    if (cfg.dataset.path.empty()) throw std::invalid_argument("config: dataset.path is required for csv sources");
    if (cfg.dataset.sensitive.empty()) throw std::invalid_argument("config: dataset.sensitive is required");
  }
  if (cfg.dataset.subsample && *cfg.dataset.subsample < 2)
    throw std::invalid_argument("config: dataset.subsample must be at least 2");
  const auto& s = cfg.sampler;
  if (s.max_iter < 1 || s.burn_in < 0 || s.burn_in >= s.max_iter)
    throw std::invalid_argument("config: need 0 <= sampler.burn_in < sampler.max_iter");
  if (s.mh_repeats < 0) throw std::invalid_argument("config: sampler.mh_repeats must be nonnegative");
  if (s.aux_components < 1) throw std::invalid_argument("config: sampler.aux_components must be at least 1");
  for (int m : s.mask_sizes)
    if (m < 0) throw std::invalid_argument("config: sampler.mask_sizes must be nonnegative");
  if (s.family == FamilyKind::beta_bernoulli && cfg.dataset.source == "csv" &&
      cfg.dataset.preprocess == Preprocess::standardize)
    throw std::invalid_argument("config: beta-bernoulli needs binary features (preprocess binarize-median or none)");
  if (s.family == FamilyKind::beta_bernoulli && cfg.dataset.source == "toy")
    throw std::invalid_argument("config: the toy dataset is continuous; use normal-gamma");
}

std::string resolved_config_json(const RunConfig& cfg) {
  json d{{"source", cfg.dataset.source},
         {"path", cfg.dataset.path.empty() ? std::string() : std::filesystem::absolute(cfg.dataset.path).string()},
         {"features", cfg.dataset.features},
         {"sensitive", cfg.dataset.sensitive},
         {"preprocess", to_string(cfg.dataset.preprocess)},
         {"subsample", cfg.dataset.subsample ? json(*cfg.dataset.subsample) : json(nullptr)},
         {"seed", cfg.dataset.seed}};
  json p{{"gamma", cfg.prior.gamma}, {"kappa", cfg.prior.kappa}, {"tau", cfg.prior.tau},
         {"a", cfg.prior.a},         {"b", cfg.prior.b},         {"alpha", cfg.prior.alpha}};
  const auto& sc = cfg.sampler;
  json s{{"max_iter", sc.max_iter},
         {"burn_in", sc.burn_in},
         {"mh_repeats", sc.mh_repeats},
         {"mask_sizes", sc.mask_sizes},
         {"residual_strategy", to_string(sc.residual_strategy)},
         {"aux_components", sc.aux_components},
         {"seed", sc.seed},
         {"family", to_string(sc.family)},
         {"kernel", to_string(sc.kernel)},
         {"fairness", sc.fairness},
         {"random_scan", sc.random_scan},
         {"full_matching", sc.keep_matching}};
  json root{{"schema_version", kConfigSchemaVersion},
            {"dataset", d},
            {"prior", p},
            {"sampler", s},
            {"output", {{"directory", std::filesystem::absolute(cfg.output_dir).string()}, {"chains", cfg.chains}}}};
  return root.dump(2) + "\n";
}

}  // namespace fbc
