// Apache License, Version 2.0, refer to LICENSE.txt

#pragma once

#include "fbc/core.hpp"
#include "fbc/numerics.hpp"
#include "fbc/sampler.hpp"

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

namespace fbc {

/// Error with a 1-based line (and, for CSV, column) position.
class ParseError : public std::runtime_error {
 public:
  ParseError(const std::string& detail, std::size_t line, std::size_t column = 0, const std::string& source = "");
  std::size_t line() const { return line_; }
  std::size_t column() const { return column_; }
  const std::string& detail() const { return detail_; }

 private:
  std::string detail_;
  std::size_t line_;
  std::size_t column_;
};

struct CsvTable {
  std::vector<std::string> header;
  std::vector<std::vector<std::string>> rows;
  std::vector<std::size_t> row_lines;  // line each row starts on

  int column(const std::string& name) const;  // throws if absent
};

/// RFC 4180: comma separated, double-quoted fields may hold commas, quotes ("") and line
/// breaks; CRLF or LF endings; the first record is the header.
CsvTable parse_csv(std::istream& in);
CsvTable read_csv(const std::filesystem::path& path);

enum class Preprocess { none, standardize, binarize_median };
std::string to_string(Preprocess p);
Preprocess parse_preprocess(const std::string& text);

struct DatasetSpec {
  std::string source = "toy";  // "toy" or "csv"
  std::filesystem::path path;
  std::vector<std::string> features;  // empty: every column except the sensitive one
  std::string sensitive;
  Preprocess preprocess = Preprocess::standardize;
  std::optional<int> subsample;  // rows kept, drawn uniformly without replacement
  std::uint64_t seed = 0;        // toy generator and subsampling
};

/// Pooled zero-mean, unit-variance columns (population variance); constant columns become 0.
FeatureMatrix standardize(const FeatureMatrix& x);
/// 1 where the value is strictly above the column median, else 0.
FeatureMatrix binarize_at_median(const FeatureMatrix& x);

/// Applies the preprocessing pooled over all groups; group order and names are kept.
GroupedDataset preprocess(const GroupedDataset& data, Preprocess p);

/// Row indices of a uniform subsample of size k, in increasing order.
std::vector<int> subsample_rows(int n, int k, Rng& rng);

/// Filters rows with a missing sensitive value, subsamples, preprocesses (pooled over groups)
/// and splits by sensitive value. Groups are named by their sensitive value.
GroupedDataset load_csv(const std::filesystem::path& path, const DatasetSpec& spec);
GroupedDataset load_dataset(const DatasetSpec& spec);

/// Two groups of `per_group` points, each an equal mixture of three unit-covariance bivariate
/// Gaussians; group 1 is shifted by 0.5 along the second axis.
GroupedDataset generate_toy(Rng& rng, int per_group = 600);

/// Writes features plus a trailing "group" column with round-trip precision.
void write_dataset_csv(const GroupedDataset& data, const std::filesystem::path& path);

struct ChainHeader {
  int version = 1;
  std::uint64_t seed = 0;
  int chain = 0;
  bool fairness = true;
  std::string reference_group;
  std::vector<int> group_sizes;
};

struct ChainFile {
  ChainHeader header;
  std::vector<ChainSample> samples;
  std::vector<TracePoint> trace;
};

/// JSON lines: a header record, then "trace" records, then "sample" records.
void write_chain(std::ostream& out, const ChainHeader& header, const std::vector<ChainSample>& samples,
                 const std::vector<TracePoint>& trace = {});
void serialize_chain(const std::filesystem::path& path, const ChainHeader& header,
                     const std::vector<ChainSample>& samples, const std::vector<TracePoint>& trace = {},
                     bool append = false);

/// Every chain in the file, in order. Samples come back with group-0 labels only.
std::vector<ChainFile> read_chains(std::istream& in);
std::vector<ChainFile> load_chain(const std::filesystem::path& path);

}  // namespace fbc
