// Apache License, Version 2.0, refer to LICENSE.txt

#include "fbc/data_io.hpp"

#include <json.hpp>

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <iterator>
#include <map>
#include <numeric>
#include <sstream>

namespace fbc {

using nlohmann::json;

namespace {

constexpr const char* kChainFormat = "fbc-chain";
constexpr int kChainVersion = 1;

std::string trim(const std::string& s) {
  const auto first = s.find_first_not_of(" \t");
  if (first == std::string::npos) return {};
  const auto last = s.find_last_not_of(" \t");
  return s.substr(first, last - first + 1);
}

bool is_missing(const std::string& value) {
  const auto v = trim(value);
  return v.empty() || v == "NA" || v == "NaN" || v == "?" || v == "null";
}

std::string shortest(double x) {
  char buf[64];
  const auto res = std::to_chars(buf, buf + sizeof buf, x);
  return std::string(buf, res.ptr);
}

std::string hex64(std::uint64_t v) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
  return buf;
}

std::string csv_quote(const std::string& s) {
  if (s.find_first_of(",\"\r\n") == std::string::npos) return s;
  std::string out = "\"";
  for (char c : s) {
    if (c == '"') out += '"';
    out += c;
  }
  return out + "\"";
}

}  // namespace

ParseError::ParseError(const std::string& detail, std::size_t line, std::size_t column, const std::string& source)
    : std::runtime_error((source.empty() ? "" : source + ": ") + "line " + std::to_string(line) +
                         (column ? ", column " + std::to_string(column) : "") + ": " + detail),
      detail_(detail),
      line_(line),
      column_(column) {}

int CsvTable::column(const std::string& name) const {
  const auto it = std::find(header.begin(), header.end(), name);
  if (it == header.end()) throw InvalidData("CSV has no column named '" + name + "'");
  return static_cast<int>(it - header.begin());
}

CsvTable parse_csv(std::istream& in) {
  std::string text((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  if (text.rfind("\xEF\xBB\xBF", 0) == 0) text.erase(0, 3);

  std::vector<std::pair<std::size_t, std::vector<std::string>>> records;
  std::vector<std::string> record;
  std::string field;
  bool in_quotes = false, closed_quote = false, quoted_any = false;
  std::size_t line = 1, column = 0, record_line = 1;

  auto end_field = [&] {
    record.push_back(std::move(field));
    field.clear();
    closed_quote = false;
  };
  auto end_record = [&] {
    end_field();
    const bool blank = record.size() == 1 && record[0].empty() && !quoted_any;
    if (!blank) records.emplace_back(record_line, std::move(record));
    record.clear();
    quoted_any = false;
    ++line;
    column = 0;
    record_line = line;
  };

  for (std::size_t i = 0; i < text.size(); ++i) {
    const char c = text[i];
    ++column;
    if (in_quotes) {
      if (c == '"') {
        if (i + 1 < text.size() && text[i + 1] == '"') {
          field += '"';
          ++i;
          ++column;
        } else {
          in_quotes = false;
          closed_quote = true;
        }
      } else {
        if (c == '\n') {
          ++line;
          column = 0;
        }
        field += c;
      }
      continue;
    }
    switch (c) {
      case '"':
        if (!field.empty() || closed_quote) throw ParseError("unexpected quote inside unquoted field", line, column);
        in_quotes = true;
        quoted_any = true;
        break;
      case ',':
        end_field();
        break;
      case '\r':
        if (i + 1 < text.size() && text[i + 1] == '\n') ++i;
        end_record();
        break;
      case '\n':
        end_record();
        break;
      default:
        if (closed_quote) throw ParseError("text after closing quote", line, column);
        field += c;
    }
  }
  if (in_quotes) throw ParseError("unterminated quoted field", record_line);
  if (!field.empty() || !record.empty() || closed_quote || quoted_any) end_record();

  CsvTable table;
  if (records.empty()) throw ParseError("empty CSV (no header)", 1);
  table.header = std::move(records[0].second);
  for (std::size_t r = 1; r < records.size(); ++r) {
    if (records[r].second.size() != table.header.size())
      throw ParseError("expected " + std::to_string(table.header.size()) + " fields, found " +
                           std::to_string(records[r].second.size()),
                       records[r].first);
    table.rows.push_back(std::move(records[r].second));
    table.row_lines.push_back(records[r].first);
  }
  return table;
}

CsvTable read_csv(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open " + path.string());
  try {
    return parse_csv(in);
  } catch (const ParseError& e) {
    throw ParseError(e.detail(), e.line(), e.column(), path.string());
  }
}

std::string to_string(Preprocess p) {
  switch (p) {
    case Preprocess::none: return "none";
    case Preprocess::standardize: return "standardize";
    case Preprocess::binarize_median: return "binarize-median";
  }
  return "none";
}

Preprocess parse_preprocess(const std::string& text) {
  if (text == "none") return Preprocess::none;
  if (text == "standardize") return Preprocess::standardize;
  if (text == "binarize-median") return Preprocess::binarize_median;
  throw std::invalid_argument("unknown preprocessing '" + text + "' (none | standardize | binarize-median)");
}

FeatureMatrix standardize(const FeatureMatrix& x) {
  FeatureMatrix out(x.rows(), x.cols());
  const double n = static_cast<double>(x.rows());
  for (Eigen::Index c = 0; c < x.cols(); ++c) {
    const double mean = x.col(c).mean();
    const double sd = std::sqrt((x.col(c).array() - mean).square().sum() / n);
    if (sd > 0.0) out.col(c) = (x.col(c).array() - mean) / sd;
    else out.col(c).setZero();
  }
  return out;
}

FeatureMatrix binarize_at_median(const FeatureMatrix& x) {
  FeatureMatrix out(x.rows(), x.cols());
  std::vector<double> values;
  for (Eigen::Index c = 0; c < x.cols(); ++c) {
    values.clear();
    for (Eigen::Index r = 0; r < x.rows(); ++r) values.push_back(x(r, c));
    std::sort(values.begin(), values.end());
    const auto n = values.size();
    const double median = n % 2 ? values[n / 2] : 0.5 * (values[n / 2 - 1] + values[n / 2]);
    out.col(c) = (x.col(c).array() > median).cast<double>();
  }
  return out;
}

std::vector<int> subsample_rows(int n, int k, Rng& rng) {
  if (k < 0 || k > n) throw std::invalid_argument("subsample size outside [0, n]");
  std::vector<int> idx(n);
  std::iota(idx.begin(), idx.end(), 0);
  std::shuffle(idx.begin(), idx.end(), rng);
  idx.resize(k);
  std::sort(idx.begin(), idx.end());
  return idx;
}

GroupedDataset load_csv(const std::filesystem::path& path, const DatasetSpec& spec) {
  if (spec.sensitive.empty()) throw std::invalid_argument("dataset: sensitive column is required");
  const auto table = read_csv(path);
  const int s_col = table.column(spec.sensitive);
  std::vector<int> f_cols;
  std::vector<std::string> names = spec.features;
  if (names.empty())
    for (const auto& h : table.header)
      if (h != spec.sensitive) names.push_back(h);
  for (const auto& name : names) {
    if (name == spec.sensitive) throw InvalidData("sensitive column '" + name + "' cannot also be a feature");
    f_cols.push_back(table.column(name));
  }
  if (f_cols.empty()) throw InvalidData("no feature columns selected");

  std::vector<int> kept;
  for (int r = 0; r < static_cast<int>(table.rows.size()); ++r)
    if (!is_missing(table.rows[r][s_col])) kept.push_back(r);
  if (spec.subsample && *spec.subsample < static_cast<int>(kept.size())) {
    Rng rng(spec.seed);
    std::vector<int> chosen;
    for (int idx : subsample_rows(static_cast<int>(kept.size()), *spec.subsample, rng)) chosen.push_back(kept[idx]);
    kept = std::move(chosen);
  }

  FeatureMatrix x(kept.size(), f_cols.size());
  for (std::size_t k = 0; k < kept.size(); ++k) {
    const auto& row = table.rows[kept[k]];
    for (std::size_t c = 0; c < f_cols.size(); ++c) {
      const std::string cell = trim(row[f_cols[c]]);
      char* end = nullptr;
      const double v = std::strtod(cell.c_str(), &end);
      if (cell.empty() || end != cell.c_str() + cell.size() || !std::isfinite(v))
        throw ParseError("non-numeric value '" + cell + "' in column '" + names[c] + "'", table.row_lines[kept[k]],
                         f_cols[c] + 1, path.string());
      x(k, c) = v;
    }
  }

  FeatureKind kind = FeatureKind::continuous;
  switch (spec.preprocess) {
    case Preprocess::standardize: x = standardize(x); break;
    case Preprocess::binarize_median:
      x = binarize_at_median(x);
      kind = FeatureKind::binary;
      break;
    case Preprocess::none:
      if (((x.array() == 0.0) || (x.array() == 1.0)).all()) kind = FeatureKind::binary;
      break;
  }

  std::map<std::string, std::vector<int>> by_group;
  for (std::size_t k = 0; k < kept.size(); ++k)
    by_group[trim(table.rows[kept[k]][s_col])].push_back(static_cast<int>(k));
  if (by_group.size() < 2) throw InvalidData("sensitive column '" + spec.sensitive + "' has fewer than two values");
  std::vector<FeatureMatrix> groups;
  std::vector<std::string> group_names;
  for (const auto& [name, rows] : by_group) {
    FeatureMatrix g(rows.size(), x.cols());
    for (std::size_t k = 0; k < rows.size(); ++k) g.row(k) = x.row(rows[k]);
    groups.push_back(std::move(g));
    group_names.push_back(name);
  }
  return GroupedDataset(std::move(groups), kind, std::move(group_names));
}

GroupedDataset preprocess(const GroupedDataset& data, Preprocess p) {
  if (p == Preprocess::none) return data;
  const FeatureMatrix pooled = data.pooled();
  const FeatureMatrix x = p == Preprocess::standardize ? standardize(pooled) : binarize_at_median(pooled);
  std::vector<FeatureMatrix> groups;
  Eigen::Index offset = 0;
  for (int b = 0; b < data.num_groups(); ++b) {
    groups.push_back(x.middleRows(offset, data.size(b)));
    offset += data.size(b);
  }
  const auto kind = p == Preprocess::binarize_median ? FeatureKind::binary : data.kind();
  return GroupedDataset(std::move(groups), kind, data.group_names());
}

GroupedDataset load_dataset(const DatasetSpec& spec) {
  if (spec.source == "toy") {
    Rng rng(spec.seed);
    return preprocess(generate_toy(rng), spec.preprocess);
  }
  if (spec.source == "csv") return load_csv(spec.path, spec);
  throw std::invalid_argument("unknown dataset source '" + spec.source + "' (toy | csv)");
}

GroupedDataset generate_toy(Rng& rng, int per_group) {
  if (per_group < 3 || per_group % 3 != 0) throw std::invalid_argument("toy group size must be a positive multiple of 3");
  const double means[2][3][2] = {{{-5.0, -30.0}, {-5.0, 0.0}, {-5.0, 30.0}},
                                 {{-5.0, -29.5}, {-5.0, 0.5}, {-5.0, 30.5}}};
  std::normal_distribution<double> normal(0.0, 1.0);
  std::vector<FeatureMatrix> groups;
  for (int b = 0; b < 2; ++b) {
    // Stratified: exactly per_group / 3 points per component, rows shuffled.
    std::vector<int> component(per_group);
    for (int j = 0; j < per_group; ++j) component[j] = j % 3;
    std::shuffle(component.begin(), component.end(), rng);
    FeatureMatrix g(per_group, 2);
    for (int j = 0; j < per_group; ++j)
      for (int d = 0; d < 2; ++d) g(j, d) = means[b][component[j]][d] + normal(rng);
    groups.push_back(std::move(g));
  }
  return GroupedDataset(std::move(groups), FeatureKind::continuous, {"0", "1"});
}

void write_dataset_csv(const GroupedDataset& data, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  for (int c = 0; c < data.dim(); ++c) out << 'x' << c + 1 << ',';
  out << "group\n";
  for (int b = 0; b < data.num_groups(); ++b)
    for (int j = 0; j < data.size(b); ++j) {
      for (int c = 0; c < data.dim(); ++c) out << shortest(data.group(b)(j, c)) << ',';
      out << csv_quote(data.group_names()[b]) << '\n';
    }
}

void write_chain(std::ostream& out, const ChainHeader& header, const std::vector<ChainSample>& samples,
                 const std::vector<TracePoint>& trace) {
  out << json{{"type", "header"},
              {"format", kChainFormat},
              {"version", header.version},
              {"seed", header.seed},
              {"chain", header.chain},
              {"fairness", header.fairness},
              {"reference_group", header.reference_group},
              {"group_sizes", header.group_sizes}}
             .dump()
      << '\n';
  for (const auto& t : trace)
    out << json{{"type", "trace"}, {"iteration", t.iteration}, {"k", t.num_clusters}, {"nll", t.nll}}.dump() << '\n';
  for (const auto& s : samples) {
    json rec{{"type", "sample"},
             {"iteration", s.iteration},
             {"k", s.num_clusters},
             {"partition", s.assignment.labels.empty() ? std::vector<int>{} : s.assignment.labels[0]},
             {"digest", hex64(s.matching_digest)},
             {"delta", s.delta},
             {"bal", s.bal},
             {"cost", s.cost},
             {"nll", s.nll}};
    if (s.matching) {
      json groups = json::array();
      for (const auto& m : s.matching->groups)
        groups.push_back({{"T", m.T},
                          {"T0", m.T0},
                          {"E", m.mask_members()},
                          {"R", m.residual},
                          {"beta", m.beta},
                          {"r", m.r},
                          {"m", m.mask_size}});
      rec["matching"] = std::move(groups);
    }
    out << rec.dump() << '\n';
  }
}

void serialize_chain(const std::filesystem::path& path, const ChainHeader& header,
                     const std::vector<ChainSample>& samples, const std::vector<TracePoint>& trace, bool append) {
  std::ofstream out(path, append ? std::ios::app : std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  write_chain(out, header, samples, trace);
  if (!out) throw std::runtime_error("write failed for " + path.string());
}

std::vector<ChainFile> read_chains(std::istream& in) {
  std::vector<ChainFile> chains;
  std::string text;
  std::size_t line_no = 0;
  while (std::getline(in, text)) {
    ++line_no;
    if (trim(text).empty()) continue;
    try {
      const json rec = json::parse(text);
      const auto type = rec.at("type").get<std::string>();
      if (type == "header") {
        if (rec.at("format").get<std::string>() != kChainFormat) throw ParseError("not a chain file", line_no);
        const int version = rec.at("version").get<int>();
        if (version != kChainVersion)
          throw ParseError("unsupported chain version " + std::to_string(version), line_no);
        ChainFile chain;
        chain.header.version = version;
        chain.header.seed = rec.at("seed").get<std::uint64_t>();
        chain.header.chain = rec.at("chain").get<int>();
        chain.header.fairness = rec.at("fairness").get<bool>();
        chain.header.reference_group = rec.at("reference_group").get<std::string>();
        chain.header.group_sizes = rec.at("group_sizes").get<std::vector<int>>();
        chains.push_back(std::move(chain));
        continue;
      }
      if (chains.empty()) throw ParseError("record before header", line_no);
      auto& chain = chains.back();
      if (type == "trace") {
        chain.trace.push_back({rec.at("iteration").get<int>(), rec.at("k").get<int>(), rec.at("nll").get<double>()});
      } else if (type == "sample") {
        ChainSample s;
        s.iteration = rec.at("iteration").get<int>();
        s.num_clusters = rec.at("k").get<int>();
        s.assignment.labels.push_back(rec.at("partition").get<std::vector<int>>());
        s.assignment.num_clusters = s.num_clusters;
        s.matching_digest = std::stoull(rec.at("digest").get<std::string>(), nullptr, 16);
        s.delta = rec.at("delta").get<double>();
        s.bal = rec.at("bal").get<double>();
        s.cost = rec.at("cost").get<double>();
        s.nll = rec.at("nll").get<double>();
        if (rec.contains("matching")) {
          MatchingState ms;
          for (const auto& g : rec.at("matching")) {
            GroupMatching m;
            m.T = g.at("T").get<std::vector<int>>();
            m.T0 = g.at("T0").get<std::vector<int>>();
            m.in_mask.assign(m.T.size(), 0);
            for (int j : g.at("E").get<std::vector<int>>()) m.in_mask.at(j) = 1;
            m.residual = g.at("R").get<std::vector<int>>();
            m.beta = g.at("beta").get<int>();
            m.r = g.at("r").get<int>();
            m.mask_size = g.at("m").get<int>();
            ms.groups.push_back(std::move(m));
          }
          s.matching = std::move(ms);
        }
        chain.samples.push_back(std::move(s));
      } else {
        throw ParseError("unknown record type '" + type + "'", line_no);
      }
    } catch (const ParseError&) {
      throw;
    } catch (const std::exception& e) {
      throw ParseError(std::string("corrupt record: ") + e.what(), line_no);
    }
  }
  return chains;
}

std::vector<ChainFile> load_chain(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open " + path.string());
  try {
    return read_chains(in);
  } catch (const ParseError& e) {
    throw ParseError(e.detail(), e.line(), e.column(), path.string());
  }
}

}  // namespace fbc
