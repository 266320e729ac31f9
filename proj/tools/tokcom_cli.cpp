// tokcom: experiment runner for the token-communication link simulator.

#include <cstdio>
#include <iostream>
#include <thread>

#include "CLI11.hpp"
#include "bytes.hpp"
#include "json.hpp"
#include "tokcom/entropy_coding.hpp"
#include "tokcom/experiment.hpp"
#include "tokcom/rng.hpp"
#include "tokcom/semmap.hpp"

namespace fs = std::filesystem;
using namespace tokcom;
using nlohmann::ordered_json;

namespace {

struct Options {
  std::string config;
  std::string out;
  std::string input;
  std::optional<std::uint64_t> seed;
  unsigned workers = 0;
  std::string format = "csv";
};

void write_text(const fs::path& path, const std::string& text) { detail::write_file_atomic(path, text); }

ExperimentConfig load_config(const Options& o) {
  auto cfg = o.config.empty() ? ExperimentConfig::parse("{}") : ExperimentConfig::load(o.config);
  if (o.seed) cfg.sweep.seeds = {*o.seed};
  return cfg;
}

void write_provenance(const Options& o, const ExperimentConfig& cfg, const std::string& command,
                      const std::vector<std::string>& outputs) {
  fs::create_directories(o.out);
  write_text(fs::path(o.out) / "resolved_config.json", cfg.to_json());
  ordered_json m;
  m["tool"] = "tokcom";
  m["version"] = TOKCOM_VERSION;
  m["command"] = command;
  m["config"] = o.config;
  m["seeds"] = cfg.sweep.seeds;
  m["snr_db"] = cfg.sweep.snr_db;
  m["outputs"] = outputs;
  write_text(fs::path(o.out) / "manifest.json", m.dump(2) + "\n");
}

std::string rows_text(const std::vector<ReportRow>& rows, const std::string& format) {
  return format == "jsonl" ? rows_to_jsonl(rows) : rows_to_csv(rows);
}

std::string results_name(const std::string& format) { return format == "jsonl" ? "results.jsonl" : "results.csv"; }

int cmd_gen_source(const Options& o) {
  const auto cfg = load_config(o);
  const auto source = make_source(cfg);
  std::vector<TokenSequence> seqs;
  for (std::size_t i = 0; i < cfg.source.sequences; ++i) {
    const auto rs = run_seed(cfg.sweep.seeds.front(), i);
    SideInfo side = cfg.side_info();
    if (cfg.source.classes && !cfg.source.label)
      side = SideInfo::class_label(static_cast<std::uint32_t>(rs % cfg.source.classes), cfg.source.label_bits);
    seqs.push_back(generate(source, cfg.source.length, side, rs));
  }
  fs::create_directories(o.out);
  save_corpus(fs::path(o.out) / "corpus.tokc", cfg.source.q, seqs);
  write_provenance(o, cfg, "gen-source", {"corpus.tokc"});
  std::cout << "wrote " << seqs.size() << " sequences of " << cfg.source.length << " tokens\n";
  return 0;
}

int cmd_train(const Options& o) {
  const auto cfg = load_config(o);
  std::vector<TokenSequence> corpus;
  if (!o.input.empty()) {
    std::uint32_t q = 0;
    corpus = load_corpus(o.input, &q);
    if (q != cfg.source.q) throw ConfigError("corpus Q differs from source.q");
  } else {
    const auto source = make_source(cfg);
    for (std::size_t i = 0; i < cfg.predictor.train_sequences; ++i) {
      const auto seed = Rng::derive(cfg.predictor.train_seed, Purpose::Source, i);
      corpus.push_back(generate(source, cfg.source.length, cfg.side_info(), seed));
    }
  }
  const auto& p = cfg.predictor;
  const auto fwd = count_markov(corpus, p.order, p.alpha, MarkovCounts::Direction::Forward);
  const auto bwd = count_markov(corpus, p.order, p.alpha, MarkovCounts::Direction::Backward);
  fs::create_directories(o.out);
  write_text(fs::path(o.out) / "markov_forward.json", fwd.to_json() + "\n");
  write_text(fs::path(o.out) / "markov_backward.json", bwd.to_json() + "\n");
  write_provenance(o, cfg, "train", {"markov_forward.json", "markov_backward.json"});
  std::cout << "trained order-" << p.order << " model on " << corpus.size() << " sequences\n";
  return 0;
}

void write_packet_log(const Options& o, const std::vector<CellResult>& cells) {
  std::string text;
  for (const auto& cell : cells) {
    // Group log rows by run so each run gets its own id.
    for (std::size_t i = 0; i < cell.log.size();) {
      std::size_t j = i;
      while (j < cell.log.size() && cell.log_runs[j] == cell.log_runs[i]) ++j;
      const std::string run_id = "snr" + format_double(cell.row.snr_db) + "_seed" + std::to_string(cell.row.seed) +
                                 "_run" + std::to_string(cell.log_runs[i]);
      auto chunk = packet_log_csv(std::span(cell.log).subspan(i, j - i), run_id);
      if (!text.empty()) chunk.erase(0, chunk.find('\n') + 1);
      text += chunk;
      i = j;
    }
  }
  write_text(fs::path(o.out) / "packet_log.csv", text);
}

int run_cells(const Options& o, bool single) {
  auto cfg = load_config(o);
  if (single) {
    cfg.sweep.snr_db = {cfg.phy.snr_db};
    cfg.sweep.seeds = {cfg.sweep.seeds.front()};
  }
  const auto source = make_source(cfg);
  const auto model = make_predictor(cfg, source);
  const auto cells = run_sweep(cfg, source, model.get(), o.workers);
  std::vector<ReportRow> rows;
  for (const auto& c : cells) rows.push_back(c.row);
  std::vector<std::string> outputs{results_name(o.format)};
  fs::create_directories(o.out);
  write_text(fs::path(o.out) / results_name(o.format), rows_text(rows, o.format));
  if (cfg.link.packet_log) {
    write_packet_log(o, cells);
    outputs.push_back("packet_log.csv");
  }
  write_provenance(o, cfg, single ? "simulate" : "sweep", outputs);
  std::cout << rows_to_csv(rows);
  return 0;
}

int cmd_compress(const Options& o) {
  const auto cfg = load_config(o);
  const auto source = make_source(cfg);
  const auto causal = make_causal_model(cfg, source);
  ModelPtr masked;
  if (cfg.compress.keep_fraction < 1.0) masked = make_predictor(cfg, source);
  std::string csv = "sequence,tokens,bits,bits_per_token,entropy_rate,lossless,dropped,refill_ter\n";
  double total_bits = 0.0, total_tokens = 0.0;
  for (std::size_t i = 0; i < cfg.source.sequences; ++i) {
    const auto rs = run_seed(cfg.sweep.seeds.front(), i);
    SideInfo side = cfg.side_info();
    if (cfg.source.classes && !cfg.source.label)
      side = SideInfo::class_label(static_cast<std::uint32_t>(rs % cfg.source.classes), cfg.source.label_bits);
    const auto seq = generate(source, cfg.source.length, side, rs);
    const auto bits = ac_encode(*causal, seq, side);
    const bool lossless = ac_decode(*causal, bits, seq.size(), side) == seq;
    std::size_t dropped = 0;
    double refill_ter = 0.0;
    if (masked) {
      const auto kept = drop_tokens(*masked, seq, side, cfg.compress.keep_fraction);
      dropped = kept.masked_count();
      const auto filled = fill(*masked, kept, side, cfg.fill_options(rs));
      std::size_t wrong = 0;
      for (std::size_t k = 0; k < seq.size(); ++k) wrong += filled.tokens[k] != seq[k];
      refill_ter = static_cast<double>(wrong) / static_cast<double>(seq.size());
    }
    const double rate = static_cast<double>(bits.length()) / static_cast<double>(seq.size());
    csv += std::to_string(i) + "," + std::to_string(seq.size()) + "," + std::to_string(bits.length()) + "," +
           format_double(rate) + "," + format_double(entropy_rate(source, side)) + "," + (lossless ? "1" : "0") + "," +
           std::to_string(dropped) + "," + format_double(refill_ter) + "\n";
    total_bits += static_cast<double>(bits.length());
    total_tokens += static_cast<double>(seq.size());
    if (!lossless) throw std::runtime_error("arithmetic-coding round trip failed on sequence " + std::to_string(i));
  }
  fs::create_directories(o.out);
  write_text(fs::path(o.out) / "compress.csv", csv);
  write_provenance(o, cfg, "compress", {"compress.csv"});
  std::cout << "bits/token " << format_double(total_bits / total_tokens) << "\n";
  return 0;
}

int cmd_semmap(const Options& o) {
  const auto cfg = load_config(o);
  const auto& s = cfg.semmap;
  const auto constellation = s.points == "psk" ? Constellation::psk(s.order) : Constellation::qam(s.order);
  const std::uint64_t seed = cfg.sweep.seeds.front();

  // Clustered random embeddings: one Gaussian center per cluster.
  auto rng = Rng::substream(seed, Purpose::Test, 0x5E);
  std::vector<double> centers(s.clusters * s.embedding_dim), emb(s.order * s.embedding_dim);
  for (auto& v : centers) v = 3.0 * rng.normal();
  for (std::size_t t = 0; t < s.order; ++t)
    for (std::size_t d = 0; d < s.embedding_dim; ++d)
      emb[t * s.embedding_dim + d] = centers[(t % s.clusters) * s.embedding_dim + d] + rng.normal();
  const Codebook codebook(s.order, emb, s.embedding_dim);

  ConfusionOptions co;
  co.method = s.confusion == "analytic" ? ConfusionMatrix::Method::Analytic : ConfusionMatrix::Method::MonteCarlo;
  co.seed = seed;
  const auto conf = build_confusion(constellation, s.snr_db, co);
  const auto dist = semantic_distance(codebook);
  const std::vector<double> prior(s.order, 1.0 / s.order);

  MappingResult result;
  if (s.method == "greedy") {
    result = optimize_greedy(conf.p, dist, prior);
  } else if (s.method == "brute") {
    result = brute_force(conf.p, dist, prior);
  } else {
    AnnealOptions ao;
    ao.seed = seed;
    ao.restarts = s.restarts;
    ao.steps = s.steps;
    ao.workers = o.workers;
    result = optimize_anneal(conf.p, dist, prior, ao);
  }
  const double identity = expected_distortion(identity_assignment(s.order), conf.p, dist, prior);
  fs::create_directories(o.out);
  write_text(fs::path(o.out) / "assignment.csv", assignment_csv(result.assignment, constellation));
  ordered_json summary{{"method", s.method},
                       {"distortion", result.distortion},
                       {"identity_distortion", identity},
                       {"confusion_fallback", conf.fell_back}};
  write_text(fs::path(o.out) / "semmap.json", summary.dump(2) + "\n");
  write_provenance(o, cfg, "semmap", {"assignment.csv", "semmap.json"});
  std::cout << "distortion " << format_double(result.distortion) << " (identity " << format_double(identity) << ")\n";
  return 0;
}

int cmd_report(const Options& o) {
  const fs::path input = o.input.empty() ? fs::path(o.out) / "results.csv" : fs::path(o.input);
  const auto bytes = detail::read_file(input);
  const auto rows = rows_from_csv(std::string(bytes.begin(), bytes.end()));
  fs::create_directories(o.out);
  for (const char* column : {"tce", "ter_before", "ter_after", "per"})
    write_text(fs::path(o.out) / (std::string(column) + "_vs_snr.svg"), svg_chart(rows, column));
  std::cout << "wrote 4 charts from " << rows.size() << " rows\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Token-communication link simulator"};
  app.set_version_flag("--version", std::string(TOKCOM_VERSION));
  app.require_subcommand(1);
  Options o;

  auto add_common = [&](CLI::App* sub, bool needs_config) {
    auto* c = sub->add_option("--config", o.config, "experiment config (JSON)");
    if (needs_config) c->check(CLI::ExistingFile);
    sub->add_option("--out", o.out, "output directory")->required();
    sub->add_option("--seed", o.seed, "override sweep.seeds with a single seed");
    sub->add_option("--workers", o.workers, "worker threads (0 = hardware)");
    sub->add_option("--format", o.format, "results format")->check(CLI::IsMember({"csv", "jsonl"}));
  };
  auto* gen = app.add_subcommand("gen-source", "sample a token corpus from the configured source");
  auto* train = app.add_subcommand("train", "fit forward and backward Markov counts");
  auto* sim = app.add_subcommand("simulate", "one (config, seed) cell at phy.snr_db");
  auto* sweep = app.add_subcommand("sweep", "cross product of sweep.snr_db and sweep.seeds");
  auto* comp = app.add_subcommand("compress", "arithmetic-coding round trip and rate");
  auto* sem = app.add_subcommand("semmap", "optimize a token-to-constellation assignment");
  auto* rep = app.add_subcommand("report", "SVG charts from a results CSV");
  for (auto* s : {gen, train, sim, sweep, comp, sem}) add_common(s, true);
  add_common(rep, false);
  train->add_option("--input", o.input, "corpus file (default: sample from the source)")->check(CLI::ExistingFile);
  rep->add_option("--input", o.input, "results CSV (default: OUT/results.csv)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : 2;
  }

  try {
    if (*gen) return cmd_gen_source(o);
    if (*train) return cmd_train(o);
    if (*sim) return run_cells(o, true);
    if (*sweep) return run_cells(o, false);
    if (*comp) return cmd_compress(o);
    if (*sem) return cmd_semmap(o);
    if (*rep) return cmd_report(o);
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 1;
}
