#pragma once

#include <cstdint>
#include <filesystem>
#include <memory>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "tokcom/link.hpp"
#include "tokcom/metrics.hpp"
#include "tokcom/predictor.hpp"
#include "tokcom/tokens.hpp"

namespace tokcom {

/// Invalid experiment configuration (CLI exit code 2).
class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct SourceConfig {
  std::string kind = "sticky";  // sticky | uniform | iid | order1
  std::uint32_t q = 1024;
  double stay = 0.9;
  std::size_t length = 256;
  std::size_t sequences = 1;
  std::vector<double> probs;       // iid
  std::vector<double> transition;  // order1, q x q
  std::vector<double> initial;     // order1
  unsigned classes = 0;            // > 0: class-conditional sticky source
  unsigned label_bits = 7;
  std::optional<std::uint32_t> label;  // fixed side-info label
};

struct PredictorConfig {
  std::string kind = "exact";  // exact | markov | unigram | uniform | bridge
  unsigned order = 1;
  double alpha = 1.0;
  std::string combine = "bayes";  // bayes | product
  std::size_t train_sequences = 64;
  std::uint64_t train_seed = 1;
  std::string counts_forward;   // optional MarkovCounts JSON files
  std::string counts_backward;
  std::string bridge_address;   // host:port
  std::string bridge_command;   // launched with /bin/sh -c
  std::size_t top_k = 0;
  unsigned fill_iterations = 8;
  std::string fill_mode = "argmax";  // argmax | sample
};

struct PhyConfig {
  std::string channel = "awgn";  // awgn | forced | clean
  double snr_db = 8.0;
  double forced_per = 0.0;
  unsigned mod_order = 16;
  std::string code = "k7";  // k7 | k3
  double bandwidth_hz = 5.0e4;
  std::string labeling;  // assignment CSV overriding the constellation labels
};

struct LinkConfig {
  std::string policy = "mask_and_predict";  // full_reliable | mask_and_predict | selective
  double threshold = 0.5;
  unsigned max_rounds = 1;
  std::uint64_t max_attempts = 100000;
  std::uint32_t tokens_per_packet = 4;
  bool interleave = true;
  std::string mcs = "fixed";  // fixed | adaptive
  std::size_t runs = 1;
  bool packet_log = false;
};

struct SweepConfig {
  std::vector<double> snr_db{8.0};
  std::vector<std::uint64_t> seeds{1};
};

struct MetricsConfig {
  std::uint32_t height = 256;
  std::uint32_t width = 256;
  double workload_tflops = 0.8;
  double device_tops = 1000.0;
  double precision_factor = 24.0;
};

struct CompressConfig {
  double keep_fraction = 1.0;
};

struct SemmapConfig {
  std::string points = "qam";  // qam | psk
  unsigned order = 16;
  double snr_db = 10.0;
  std::string method = "anneal";  // greedy | anneal | brute
  unsigned restarts = 8;
  std::size_t steps = 20000;
  std::size_t embedding_dim = 8;
  unsigned clusters = 2;
  std::string confusion = "analytic";  // analytic | monte_carlo
};

struct ExperimentConfig {
  SourceConfig source;
  PredictorConfig predictor;
  PhyConfig phy;
  LinkConfig link;
  SweepConfig sweep;
  MetricsConfig metrics;
  CompressConfig compress;
  SemmapConfig semmap;

  /// Strict parse: unknown keys, wrong types and out-of-range values throw ConfigError.
  static ExperimentConfig parse(const std::string& json_text);
  static ExperimentConfig load(const std::filesystem::path& path);
  /// Fully resolved form, defaults included.
  std::string to_json() const;

  SystemParams system_params() const;
  ComputeProfile compute_profile() const;
  ArqPolicy arq_policy() const;
  McsPolicy mcs_policy() const;
  FillOptions fill_options(std::uint64_t seed) const;
  SideInfo side_info() const;
};

MarkovSource make_source(const ExperimentConfig& cfg);
/// Masked-token model for the link. `source` is needed for kind = exact.
ModelPtr make_predictor(const ExperimentConfig& cfg, const MarkovSource& source);
/// Causal model for compression.
ModelPtr make_causal_model(const ExperimentConfig& cfg, const MarkovSource& source);

/// Seed of sequence `run` within cell seed `seed`.
std::uint64_t run_seed(std::uint64_t seed, std::size_t run);

struct CellResult {
  ReportRow row;
  std::vector<PacketLog> log;  // concatenated over runs when enabled
  std::vector<std::string> run_ids;
  std::vector<std::size_t> log_runs;  // run index of each log row
};

/// One (snr, seed) cell: link.runs sequences through transmit, pooled.
CellResult run_cell(const ExperimentConfig& cfg, const MarkovSource& source, const ProbModel* model, double snr_db,
                    std::uint64_t seed);

/// Cross product snr x seeds on `workers` threads, ordered by cell index.
std::vector<CellResult> run_sweep(const ExperimentConfig& cfg, const MarkovSource& source, const ProbModel* model,
                                  unsigned workers);

enum class OutputFormat { Csv, Jsonl };

/// Shortest round-trip decimal form of a double.
std::string format_double(double v);

std::string rows_to_csv(const std::vector<ReportRow>& rows);
std::string rows_to_jsonl(const std::vector<ReportRow>& rows);
std::vector<ReportRow> rows_from_csv(const std::string& text);

/// Line chart of the named column against snr_db, one series per policy.
std::string svg_chart(const std::vector<ReportRow>& rows, const std::string& column);

}  // namespace tokcom
