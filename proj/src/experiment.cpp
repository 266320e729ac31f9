#include "tokcom/experiment.hpp"

#include <algorithm>
#include <atomic>
#include <charconv>
#include <cmath>
#include <fstream>
#include <map>
#include <mutex>
#include <set>
#include <sstream>
#include <thread>

#include "bytes.hpp"
#include "json.hpp"
#include "tokcom/bridge.hpp"
#include "tokcom/rng.hpp"

namespace tokcom {

using nlohmann::json;
using nlohmann::ordered_json;

namespace {

// --- strict JSON reading --------------------------------------------------

class Section {
 public:
  Section(const json& root, const char* name) : name_(name) {
    if (!root.contains(name)) return;
    node_ = &root.at(name);
    if (!node_->is_object()) throw ConfigError(std::string("section '") + name + "' must be an object");
  }

  void get(const char* key, std::string& out) {
    if (const json* v = take(key)) {
      if (!v->is_string()) fail(key, "a string");
      out = v->get<std::string>();
    }
  }
  void get(const char* key, double& out) {
    if (const json* v = take(key)) {
      if (!v->is_number()) fail(key, "a number");
      out = v->get<double>();
    }
  }
  void get(const char* key, bool& out) {
    if (const json* v = take(key)) {
      if (!v->is_boolean()) fail(key, "a boolean");
      out = v->get<bool>();
    }
  }
  template <class U>
    requires std::is_unsigned_v<U>
  void get(const char* key, U& out) {
    if (const json* v = take(key)) {
      if (!v->is_number_unsigned()) fail(key, "a non-negative integer");
      const auto raw = v->get<std::uint64_t>();
      if (raw > std::numeric_limits<U>::max()) fail(key, "a smaller integer");
      out = static_cast<U>(raw);
    }
  }
  void get(const char* key, std::optional<std::uint32_t>& out) {
    if (const json* v = take(key)) {
      if (v->is_null()) {
        out.reset();
        return;
      }
      std::uint32_t x = 0;
      if (!v->is_number_unsigned() || v->get<std::uint64_t>() > 0xFFFFFFFFu) fail(key, "null or a non-negative integer");
      x = v->get<std::uint32_t>();
      out = x;
    }
  }
  void get(const char* key, std::vector<double>& out) {
    if (const json* v = take(key)) {
      if (!v->is_array()) fail(key, "an array of numbers");
      out.clear();
      for (const auto& e : *v) {
        if (!e.is_number()) fail(key, "an array of numbers");
        out.push_back(e.get<double>());
      }
    }
  }
  void get(const char* key, std::vector<std::uint64_t>& out) {
    if (const json* v = take(key)) {
      if (!v->is_array()) fail(key, "an array of non-negative integers");
      out.clear();
      for (const auto& e : *v) {
        if (!e.is_number_unsigned()) fail(key, "an array of non-negative integers");
        out.push_back(e.get<std::uint64_t>());
      }
    }
  }

  void finish() const {
    if (!node_) return;
    for (const auto& [k, v] : node_->items())
      if (!seen_.count(k)) throw ConfigError("unknown key '" + name_ + "." + k + "'");
  }

 private:
  const json* take(const char* key) {
    if (!node_ || !node_->contains(key)) return nullptr;
    seen_.insert(key);
    return &node_->at(key);
  }
  [[noreturn]] void fail(const char* key, const char* what) const {
    throw ConfigError("'" + name_ + "." + key + "' must be " + what);
  }

  std::string name_;
  const json* node_ = nullptr;
  std::set<std::string> seen_;
};

void require(bool ok, const std::string& msg) {
  if (!ok) throw ConfigError(msg);
}

template <class T>
void one_of(const std::string& field, const T& value, std::initializer_list<T> allowed) {
  if (std::find(allowed.begin(), allowed.end(), value) == allowed.end()) {
    std::ostringstream os;
    os << "'" << field << "' has unsupported value '" << value << "'";
    throw ConfigError(os.str());
  }
}

void validate(const ExperimentConfig& c) {
  const auto& s = c.source;
  one_of<std::string>("source.kind", s.kind, {"sticky", "uniform", "iid", "order1"});
  require(s.q >= 2, "source.q must be >= 2");
  require(s.stay >= 0.0 && s.stay <= 1.0, "source.stay must lie in [0, 1]");
  require(s.length >= 1, "source.length must be >= 1");
  require(s.sequences >= 1, "source.sequences must be >= 1");
  require(s.label_bits >= 1 && s.label_bits <= 31, "source.label_bits must lie in [1, 31]");
  if (s.classes > 0) {
    require(s.kind == "sticky", "source.classes requires source.kind = sticky");
    require(s.classes <= (1ull << s.label_bits), "source.classes exceeds 2^label_bits");
    require(static_cast<double>(s.classes) * s.q * s.q <= double(1 << 24), "source.classes * q^2 must be <= 2^24");
    require(!s.label || *s.label < s.classes, "source.label must be < source.classes");
  } else {
    require(!s.label, "source.label requires source.classes > 0");
  }
  // Order-1 tables are dense q x q.
  if (s.kind == "sticky") require(static_cast<double>(s.q) * s.q <= double(1 << 24), "source.kind = sticky needs q <= 4096");
  if (s.kind == "iid") require(s.probs.size() == s.q, "source.probs must have q entries");
  if (s.kind == "order1") {
    require(s.transition.size() == std::size_t{s.q} * s.q, "source.transition must have q*q entries");
    require(s.initial.size() == s.q, "source.initial must have q entries");
  }

  const auto& p = c.predictor;
  one_of<std::string>("predictor.kind", p.kind, {"exact", "markov", "unigram", "uniform", "bridge"});
  one_of<std::string>("predictor.combine", p.combine, {"bayes", "product"});
  one_of<std::string>("predictor.fill_mode", p.fill_mode, {"argmax", "sample"});
  require(p.alpha > 0.0, "predictor.alpha must be > 0");
  require(p.order >= 1 && p.order <= 4, "predictor.order must lie in [1, 4]");
  require(p.train_sequences >= 1, "predictor.train_sequences must be >= 1");
  require(p.fill_iterations >= 1, "predictor.fill_iterations must be >= 1");
  require(p.counts_forward.empty() == p.counts_backward.empty(),
          "predictor.counts_forward and predictor.counts_backward go together");
  if (p.kind == "bridge")
    require(p.bridge_address.empty() != p.bridge_command.empty(),
            "predictor.kind = bridge needs exactly one of bridge_address or bridge_command");

  const auto& ph = c.phy;
  one_of<std::string>("phy.channel", ph.channel, {"awgn", "forced", "clean"});
  one_of<std::string>("phy.code", ph.code, {"k7", "k3"});
  one_of<unsigned>("phy.mod_order", ph.mod_order, {2u, 4u, 16u, 64u});
  require(ph.forced_per >= 0.0 && ph.forced_per < 1.0, "phy.forced_per must lie in [0, 1)");
  require(ph.bandwidth_hz > 0.0, "phy.bandwidth_hz must be > 0");
  require(std::isfinite(ph.snr_db), "phy.snr_db must be finite");

  const auto& l = c.link;
  one_of<std::string>("link.policy", l.policy, {"full_reliable", "mask_and_predict", "selective"});
  one_of<std::string>("link.mcs", l.mcs, {"fixed", "adaptive"});
  require(l.tokens_per_packet >= 1, "link.tokens_per_packet must be >= 1");
  require(l.runs >= 1, "link.runs must be >= 1");
  require(l.max_attempts >= 1, "link.max_attempts must be >= 1");
  if (l.policy == "selective") {
    require(l.threshold > 0.0 && l.threshold < 1.0, "link.threshold must lie in (0, 1)");
    require(l.max_rounds >= 1, "link.max_rounds must be >= 1");
  }

  require(!c.sweep.snr_db.empty(), "sweep.snr_db must not be empty");
  require(!c.sweep.seeds.empty(), "sweep.seeds must not be empty");
  for (double v : c.sweep.snr_db) require(std::isfinite(v), "sweep.snr_db entries must be finite");

  const auto& m = c.metrics;
  require(m.height > 0 && m.width > 0, "metrics.height and metrics.width must be > 0");
  require(m.workload_tflops >= 0.0 && m.device_tops > 0.0 && m.precision_factor > 0.0,
          "metrics compute profile values must be positive");

  require(c.compress.keep_fraction > 0.0 && c.compress.keep_fraction <= 1.0, "compress.keep_fraction must lie in (0, 1]");

  const auto& sm = c.semmap;
  one_of<std::string>("semmap.points", sm.points, {"qam", "psk"});
  one_of<std::string>("semmap.method", sm.method, {"greedy", "anneal", "brute"});
  one_of<std::string>("semmap.confusion", sm.confusion, {"analytic", "monte_carlo"});
  if (sm.points == "qam") one_of<unsigned>("semmap.order", sm.order, {2u, 4u, 16u, 64u});
  else require(sm.order >= 2 && sm.order <= 64 && (sm.order & (sm.order - 1)) == 0, "semmap.order must be a power of two in [2, 64]");
  if (sm.method == "brute") require(sm.order <= 8, "semmap.method = brute needs semmap.order <= 8");
  require(sm.restarts >= 1 && sm.steps >= 1, "semmap.restarts and semmap.steps must be >= 1");
  require(sm.embedding_dim >= 1 && sm.clusters >= 1, "semmap.embedding_dim and semmap.clusters must be >= 1");
  require(std::isfinite(sm.snr_db), "semmap.snr_db must be finite");
}

std::vector<TokenSequence> training_corpus(const ExperimentConfig& cfg, const MarkovSource& source) {
  std::vector<TokenSequence> corpus;
  const SideInfo side = cfg.side_info();
  for (std::size_t i = 0; i < cfg.predictor.train_sequences; ++i) {
    const auto seed = Rng::derive(cfg.predictor.train_seed, Purpose::Source, i);
    corpus.push_back(generate(source, cfg.source.length, cfg.source.classes ? SideInfo::class_label(static_cast<std::uint32_t>(seed % cfg.source.classes), cfg.source.label_bits) : side, seed));
  }
  return corpus;
}

MarkovCounts load_counts(const std::string& path) {
  const auto bytes = detail::read_file(path);
  return MarkovCounts::from_json(std::string(bytes.begin(), bytes.end()));
}

}  // namespace

// --- ExperimentConfig -----------------------------------------------------

ExperimentConfig ExperimentConfig::parse(const std::string& text) {
  json root;
  try {
    root = json::parse(text);
  } catch (const json::exception& e) {
    throw ConfigError(std::string("config is not valid JSON: ") + e.what());
  }
  if (!root.is_object()) throw ConfigError("config must be a JSON object");
  static const std::set<std::string> sections{"source", "predictor", "phy", "link", "sweep", "metrics", "compress", "semmap"};
  for (const auto& [k, v] : root.items())
    if (!sections.count(k)) throw ConfigError("unknown section '" + k + "'");

  ExperimentConfig c;
  {
    Section s(root, "source");
    auto& o = c.source;
    s.get("kind", o.kind);
    s.get("q", o.q);
    s.get("stay", o.stay);
    s.get("length", o.length);
    s.get("sequences", o.sequences);
    s.get("probs", o.probs);
    s.get("transition", o.transition);
    s.get("initial", o.initial);
    s.get("classes", o.classes);
    s.get("label_bits", o.label_bits);
    s.get("label", o.label);
    s.finish();
  }
  {
    Section s(root, "predictor");
    auto& o = c.predictor;
    s.get("kind", o.kind);
    s.get("order", o.order);
    s.get("alpha", o.alpha);
    s.get("combine", o.combine);
    s.get("train_sequences", o.train_sequences);
    s.get("train_seed", o.train_seed);
    s.get("counts_forward", o.counts_forward);
    s.get("counts_backward", o.counts_backward);
    s.get("bridge_address", o.bridge_address);
    s.get("bridge_command", o.bridge_command);
    s.get("top_k", o.top_k);
    s.get("fill_iterations", o.fill_iterations);
    s.get("fill_mode", o.fill_mode);
    s.finish();
  }
  {
    Section s(root, "phy");
    auto& o = c.phy;
    s.get("channel", o.channel);
    s.get("snr_db", o.snr_db);
    s.get("forced_per", o.forced_per);
    s.get("mod_order", o.mod_order);
    s.get("code", o.code);
    s.get("bandwidth_hz", o.bandwidth_hz);
    s.get("labeling", o.labeling);
    s.finish();
  }
  {
    Section s(root, "link");
    auto& o = c.link;
    s.get("policy", o.policy);
    s.get("threshold", o.threshold);
    s.get("max_rounds", o.max_rounds);
    s.get("max_attempts", o.max_attempts);
    s.get("tokens_per_packet", o.tokens_per_packet);
    s.get("interleave", o.interleave);
    s.get("mcs", o.mcs);
    s.get("runs", o.runs);
    s.get("packet_log", o.packet_log);
    s.finish();
  }
  {
    Section s(root, "sweep");
    s.get("snr_db", c.sweep.snr_db);
    s.get("seeds", c.sweep.seeds);
    s.finish();
  }
  {
    Section s(root, "metrics");
    auto& o = c.metrics;
    s.get("height", o.height);
    s.get("width", o.width);
    s.get("workload_tflops", o.workload_tflops);
    s.get("device_tops", o.device_tops);
    s.get("precision_factor", o.precision_factor);
    s.finish();
  }
  {
    Section s(root, "compress");
    s.get("keep_fraction", c.compress.keep_fraction);
    s.finish();
  }
  {
    Section s(root, "semmap");
    auto& o = c.semmap;
    s.get("points", o.points);
    s.get("order", o.order);
    s.get("snr_db", o.snr_db);
    s.get("method", o.method);
    s.get("restarts", o.restarts);
    s.get("steps", o.steps);
    s.get("embedding_dim", o.embedding_dim);
    s.get("clusters", o.clusters);
    s.get("confusion", o.confusion);
    s.finish();
  }
  validate(c);
  return c;
}

ExperimentConfig ExperimentConfig::load(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError("cannot read config " + path.string());
  std::ostringstream os;
  os << in.rdbuf();
  return parse(os.str());
}

std::string ExperimentConfig::to_json() const {
  ordered_json j;
  j["source"] = {{"kind", source.kind},       {"q", source.q},
                 {"stay", source.stay},       {"length", source.length},
                 {"sequences", source.sequences}, {"probs", source.probs},
                 {"transition", source.transition}, {"initial", source.initial},
                 {"classes", source.classes}, {"label_bits", source.label_bits},
                 {"label", source.label ? ordered_json(*source.label) : ordered_json(nullptr)}};
  j["predictor"] = {{"kind", predictor.kind},
                    {"order", predictor.order},
                    {"alpha", predictor.alpha},
                    {"combine", predictor.combine},
                    {"train_sequences", predictor.train_sequences},
                    {"train_seed", predictor.train_seed},
                    {"counts_forward", predictor.counts_forward},
                    {"counts_backward", predictor.counts_backward},
                    {"bridge_address", predictor.bridge_address},
                    {"bridge_command", predictor.bridge_command},
                    {"top_k", predictor.top_k},
                    {"fill_iterations", predictor.fill_iterations},
                    {"fill_mode", predictor.fill_mode}};
  j["phy"] = {{"channel", phy.channel},   {"snr_db", phy.snr_db}, {"forced_per", phy.forced_per},
              {"mod_order", phy.mod_order}, {"code", phy.code},   {"bandwidth_hz", phy.bandwidth_hz},
              {"labeling", phy.labeling}};
  j["link"] = {{"policy", link.policy},
               {"threshold", link.threshold},
               {"max_rounds", link.max_rounds},
               {"max_attempts", link.max_attempts},
               {"tokens_per_packet", link.tokens_per_packet},
               {"interleave", link.interleave},
               {"mcs", link.mcs},
               {"runs", link.runs},
               {"packet_log", link.packet_log}};
  j["sweep"] = {{"snr_db", sweep.snr_db}, {"seeds", sweep.seeds}};
  j["metrics"] = {{"height", metrics.height},
                  {"width", metrics.width},
                  {"workload_tflops", metrics.workload_tflops},
                  {"device_tops", metrics.device_tops},
                  {"precision_factor", metrics.precision_factor}};
  j["compress"] = {{"keep_fraction", compress.keep_fraction}};
  j["semmap"] = {{"points", semmap.points},   {"order", semmap.order},
                 {"snr_db", semmap.snr_db},   {"method", semmap.method},
                 {"restarts", semmap.restarts}, {"steps", semmap.steps},
                 {"embedding_dim", semmap.embedding_dim}, {"clusters", semmap.clusters},
                 {"confusion", semmap.confusion}};
  return j.dump(2) + "\n";
}

SystemParams ExperimentConfig::system_params() const {
  SystemParams p;
  p.height = metrics.height;
  p.width = metrics.width;
  p.tokens = static_cast<std::uint32_t>(source.length);
  p.q = source.q;
  p.code_rate = 0.5;
  p.mod_order = phy.mod_order;
  p.bandwidth_hz = phy.bandwidth_hz;
  p.tokens_per_packet = link.tokens_per_packet;
  p.constraint_length = phy.code == "k7" ? 7 : 3;
  return p;
}

ComputeProfile ExperimentConfig::compute_profile() const {
  return {metrics.workload_tflops, metrics.device_tops, metrics.precision_factor};
}

ArqPolicy ExperimentConfig::arq_policy() const {
  ArqPolicy p;
  if (link.policy == "full_reliable") p.kind = ArqPolicy::Kind::FullReliable;
  else if (link.policy == "selective") p.kind = ArqPolicy::Kind::SelectiveRetx;
  p.threshold = link.threshold;
  p.max_rounds = link.max_rounds;
  p.max_attempts = link.max_attempts;
  return p;
}

McsPolicy ExperimentConfig::mcs_policy() const {
  if (link.mcs == "adaptive") return McsPolicy::default_table();
  return McsPolicy::fixed({phy.mod_order, phy.code == "k7" ? 0u : 1u});
}

FillOptions ExperimentConfig::fill_options(std::uint64_t seed) const {
  FillOptions f;
  f.schedule = FillSchedule::cosine(predictor.fill_iterations);
  f.mode = predictor.fill_mode == "sample" ? FillOptions::Mode::Sample : FillOptions::Mode::Argmax;
  f.seed = seed;
  f.top_k = predictor.top_k;
  return f;
}

SideInfo ExperimentConfig::side_info() const {
  if (source.classes == 0) return {};
  return SideInfo::class_label(source.label.value_or(0), source.label_bits);
}

// --- Builders -------------------------------------------------------------

MarkovSource make_source(const ExperimentConfig& cfg) {
  const auto& s = cfg.source;
  try {
    if (s.kind == "uniform") return MarkovSource::uniform(s.q);
    if (s.kind == "iid") return MarkovSource::iid(s.probs);
    if (s.kind == "order1") return MarkovSource::order1(s.transition, s.initial);
    if (s.classes == 0) return MarkovSource::sticky(s.q, s.stay);
    // Class c leaves a token toward its own slice of the codebook 80% of the time.
    std::vector<MarkovSource::Tables> tables;
    const std::uint32_t q = s.q;
    for (unsigned c = 0; c < s.classes; ++c) {
      std::vector<double> jump(q, 0.2 / q);
      const std::uint32_t lo = static_cast<std::uint32_t>(std::uint64_t{c} * q / s.classes);
      const std::uint32_t hi = std::max(lo + 1, static_cast<std::uint32_t>(std::uint64_t{c + 1} * q / s.classes));
      for (std::uint32_t x = lo; x < hi; ++x) jump[x] += 0.8 / (hi - lo);
      MarkovSource::Tables t;
      t.initial = jump;
      t.transition.resize(std::size_t{q} * q);
      for (std::uint32_t a = 0; a < q; ++a)
        for (std::uint32_t b = 0; b < q; ++b)
          t.transition[std::size_t{a} * q + b] = (1.0 - s.stay) * jump[b] + (a == b ? s.stay : 0.0);
      tables.push_back(std::move(t));
    }
    return MarkovSource(q, 1, std::move(tables), s.label_bits);
  } catch (const std::invalid_argument& e) {
    throw ConfigError(std::string("source: ") + e.what());
  }
}

ModelPtr make_predictor(const ExperimentConfig& cfg, const MarkovSource& source) {
  const auto& p = cfg.predictor;
  const CombineRule rule = p.combine == "bayes" ? CombineRule::Bayes : CombineRule::Product;
  if (p.kind == "uniform") return std::make_shared<UniformModel>(cfg.source.q);
  if (p.kind == "exact") {
    if (source.order() > 1) throw ConfigError("predictor.kind = exact needs an order-0 or order-1 source");
    auto fwd = std::make_shared<MarkovModel>(MarkovModel::exact(source, MarkovModel::Direction::Forward));
    auto bwd = std::make_shared<MarkovModel>(MarkovModel::exact(source, MarkovModel::Direction::Backward));
    return bidirectional_combine(fwd, bwd, rule);
  }
  if (p.kind == "bridge") {
    auto transport = p.bridge_address.empty() ? bridge::spawn_process(p.bridge_command) : [&] {
      const auto colon = p.bridge_address.rfind(':');
      if (colon == std::string::npos) throw ConfigError("predictor.bridge_address must be host:port");
      int port = 0;
      const auto tail = p.bridge_address.substr(colon + 1);
      const auto [ptr, ec] = std::from_chars(tail.data(), tail.data() + tail.size(), port);
      if (ec != std::errc() || ptr != tail.data() + tail.size() || port <= 0 || port > 65535)
        throw ConfigError("predictor.bridge_address has a bad port");
      return bridge::connect_tcp(p.bridge_address.substr(0, colon), static_cast<std::uint16_t>(port));
    }();
    return std::make_shared<bridge::BridgeModel>(std::move(transport), cfg.source.q,
                                                 cfg.source.classes ? cfg.source.label_bits : 0);
  }
  if (p.kind == "unigram") {
    const auto corpus = training_corpus(cfg, source);
    return train_unigram(corpus, cfg.source.q, p.alpha);
  }
  if (!p.counts_forward.empty()) {
    auto fwd = std::make_shared<MarkovModel>(load_counts(p.counts_forward));
    auto bwd = std::make_shared<MarkovModel>(load_counts(p.counts_backward));
    if (fwd->q() != cfg.source.q || bwd->q() != cfg.source.q) throw ConfigError("model files do not match source.q");
    return bidirectional_combine(fwd, bwd, rule);
  }
  const auto corpus = training_corpus(cfg, source);
  return bidirectional_combine(train_markov(corpus, p.order, p.alpha), train_markov_reversed(corpus, p.order, p.alpha),
                               rule);
}

ModelPtr make_causal_model(const ExperimentConfig& cfg, const MarkovSource& source) {
  const auto& p = cfg.predictor;
  if (p.kind == "uniform") return std::make_shared<UniformModel>(cfg.source.q);
  if (p.kind == "exact") return std::make_shared<MarkovModel>(MarkovModel::exact(source, MarkovModel::Direction::Forward));
  if (p.kind == "bridge") throw ConfigError("compression needs a causal model; the bridge predictor is masked-only");
  const auto corpus = training_corpus(cfg, source);
  if (p.kind == "unigram") return train_unigram(corpus, cfg.source.q, p.alpha);
  if (!p.counts_forward.empty()) return std::make_shared<MarkovModel>(load_counts(p.counts_forward));
  return train_markov(corpus, p.order, p.alpha);
}

// --- Runs -----------------------------------------------------------------

std::uint64_t run_seed(std::uint64_t seed, std::size_t run) { return Rng::derive(seed, Purpose::Source, run); }

namespace {

std::vector<std::uint32_t> load_labeling(const std::string& path, unsigned order) {
  const auto bytes = detail::read_file(path);
  std::istringstream in(std::string(bytes.begin(), bytes.end()));
  std::string line;
  std::getline(in, line);
  if (line.rfind("token_id,point_index", 0) != 0) throw ConfigError("phy.labeling: not an assignment CSV");
  std::vector<std::uint32_t> assign;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::istringstream row(line);
    std::string token, point;
    std::getline(row, token, ',');
    std::getline(row, point, ',');
    if (std::stoul(token) != assign.size()) throw ConfigError("phy.labeling: rows must be in token order");
    assign.push_back(static_cast<std::uint32_t>(std::stoul(point)));
  }
  if (assign.size() != order) throw ConfigError("phy.labeling: size differs from phy.mod_order");
  std::vector<std::uint32_t> labels(order, order);
  for (std::uint32_t t = 0; t < order; ++t) {
    if (assign[t] >= order || labels[assign[t]] != order) throw ConfigError("phy.labeling: not a bijection");
    labels[assign[t]] = t;
  }
  return labels;
}

}  // namespace

CellResult run_cell(const ExperimentConfig& cfg, const MarkovSource& source, const ProbModel* model, double snr_db,
                    std::uint64_t seed) {
  const auto policy = cfg.arq_policy();
  const auto mcs = cfg.mcs_policy();
  const auto params = cfg.system_params();
  const auto profile = cfg.compute_profile();
  const bool predicts = policy.kind != ArqPolicy::Kind::FullReliable;
  std::vector<std::uint32_t> labeling;
  if (!cfg.phy.labeling.empty()) labeling = load_labeling(cfg.phy.labeling, cfg.phy.mod_order);

  CellResult cell;
  std::uint64_t failures = 0, transmissions = 0, packets = 0, errs_before = 0, errs_after = 0, tokens = 0;
  for (std::size_t r = 0; r < cfg.link.runs; ++r) {
    const std::uint64_t rs = run_seed(seed, r);
    SideInfo side = cfg.side_info();
    if (cfg.source.classes && !cfg.source.label)
      side = SideInfo::class_label(static_cast<std::uint32_t>(rs % cfg.source.classes), cfg.source.label_bits);
    const auto seq = generate(source, cfg.source.length, side, rs);
    const auto plan = make_plan(seq.size(), cfg.link.tokens_per_packet, cfg.link.interleave, rs);

    std::unique_ptr<PacketChannel> channel;
    if (cfg.phy.channel == "awgn") {
      auto phy = std::make_unique<PhyChannel>(ChannelCfg{snr_db, cfg.phy.bandwidth_hz, rs});
      if (!labeling.empty()) phy->set_labeling(cfg.phy.mod_order, labeling);
      channel = std::move(phy);
    } else {
      channel = forced_per_channel(cfg.phy.channel == "forced" ? cfg.phy.forced_per : 0.0, rs);
    }

    TransmitOptions opts;
    opts.fill = cfg.fill_options(rs);
    opts.params = params;
    opts.profile = profile;
    opts.bandwidth_hz = cfg.phy.bandwidth_hz;
    opts.keep_log = cfg.link.packet_log;
    auto res = transmit(seq, side, plan, policy, mcs, *channel, model, opts);
    const auto& rep = res.report;
    failures += rep.failures;
    transmissions += rep.transmissions;
    packets += rep.packets;
    errs_before += rep.token_errors_before;
    errs_after += rep.token_errors_after;
    tokens += seq.size();
    if (cfg.link.packet_log) {
      for (auto& row : res.report.log) {
        cell.log.push_back(std::move(row));
        cell.log_runs.push_back(r);
      }
    }
  }
  RunStats stats;
  stats.per = static_cast<double>(failures) / static_cast<double>(transmissions);
  stats.ter_before = static_cast<double>(errs_before) / static_cast<double>(tokens);
  stats.ter_after = static_cast<double>(errs_after) / static_cast<double>(tokens);
  stats.t_avg = static_cast<double>(transmissions) / static_cast<double>(packets);
  cell.row = report(stats, params, profile, predicts);
  cell.row.snr_db = snr_db;
  cell.row.policy = policy.name();
  cell.row.seed = seed;
  return cell;
}

std::vector<CellResult> run_sweep(const ExperimentConfig& cfg, const MarkovSource& source, const ProbModel* model,
                                  unsigned workers) {
  const std::size_t ns = cfg.sweep.snr_db.size(), nseed = cfg.sweep.seeds.size();
  const std::size_t cells = ns * nseed;
  std::vector<CellResult> out(cells);
  if (workers == 0) workers = std::max(1u, std::thread::hardware_concurrency());
  workers = static_cast<unsigned>(std::min<std::size_t>(workers, cells));
  std::atomic<std::size_t> next{0};
  std::exception_ptr error;
  std::mutex error_mu;
  std::vector<std::thread> pool;
  for (unsigned w = 0; w < workers; ++w)
    pool.emplace_back([&] {
      for (;;) {
        const std::size_t i = next.fetch_add(1);
        if (i >= cells) return;
        try {
          out[i] = run_cell(cfg, source, model, cfg.sweep.snr_db[i / nseed], cfg.sweep.seeds[i % nseed]);
        } catch (...) {
          const std::scoped_lock lock(error_mu);
          if (!error) error = std::current_exception();
          next = cells;
        }
      }
    });
  for (auto& t : pool) t.join();
  if (error) std::rethrow_exception(error);
  return out;
}

// --- Output ---------------------------------------------------------------

std::string format_double(double v) {
  if (std::isnan(v)) return "nan";
  if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
  char buf[64];
  const auto res = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, res.ptr);
}

namespace {

const char* const kColumns[] = {"snr_db", "per", "ter_before", "ter_after", "t_avg", "tce",
                                "bpp", "comm_time_ms", "compute_time_ms", "policy", "seed"};

double* numeric_field(ReportRow& r, std::string_view name) {
  if (name == "snr_db") return &r.snr_db;
  if (name == "per") return &r.per;
  if (name == "ter_before") return &r.ter_before;
  if (name == "ter_after") return &r.ter_after;
  if (name == "t_avg") return &r.t_avg;
  if (name == "tce") return &r.tce;
  if (name == "bpp") return &r.bpp;
  if (name == "comm_time_ms") return &r.comm_time_ms;
  if (name == "compute_time_ms") return &r.compute_time_ms;
  return nullptr;
}

}  // namespace

std::string rows_to_csv(const std::vector<ReportRow>& rows) {
  std::string out;
  for (std::size_t i = 0; i < std::size(kColumns); ++i) out += std::string(i ? "," : "") + kColumns[i];
  out += '\n';
  for (auto r : rows) {
    for (std::size_t i = 0; i < 9; ++i) out += format_double(*numeric_field(r, kColumns[i])) + ",";
    out += r.policy + "," + std::to_string(r.seed) + "\n";
  }
  return out;
}

std::string rows_to_jsonl(const std::vector<ReportRow>& rows) {
  std::string out;
  for (auto r : rows) {
    // Numbers are written in the same shortest form as the CSV.
    std::string line = "{";
    for (std::size_t i = 0; i < 9; ++i) {
      const double v = *numeric_field(r, kColumns[i]);
      line += "\"" + std::string(kColumns[i]) + "\":" + (std::isfinite(v) ? format_double(v) : "null") + ",";
    }
    line += "\"policy\":" + json(r.policy).dump() + ",\"seed\":" + std::to_string(r.seed) + "}\n";
    out += line;
  }
  return out;
}

std::vector<ReportRow> rows_from_csv(const std::string& text) {
  std::istringstream in(text);
  std::string line;
  if (!std::getline(in, line)) throw FormatError("empty results CSV");
  std::vector<std::string> header;
  {
    std::istringstream h(line);
    std::string cell;
    while (std::getline(h, cell, ',')) header.push_back(cell);
  }
  std::vector<ReportRow> rows;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    ReportRow r;
    std::istringstream row(line);
    std::string cell;
    for (std::size_t i = 0; i < header.size() && std::getline(row, cell, ','); ++i) {
      if (double* f = numeric_field(r, header[i])) {
        *f = std::strtod(cell.c_str(), nullptr);
      } else if (header[i] == "policy") {
        r.policy = cell;
      } else if (header[i] == "seed") {
        r.seed = std::stoull(cell);
      }
    }
    rows.push_back(std::move(r));
  }
  return rows;
}

std::string svg_chart(const std::vector<ReportRow>& rows, const std::string& column) {
  std::map<std::string, std::map<double, std::pair<double, int>>> series;
  for (auto r : rows) {
    const double* f = numeric_field(r, column);
    if (!f) throw std::invalid_argument("unknown column " + column);
    auto& cell = series[r.policy][r.snr_db];
    cell.first += *f;
    cell.second += 1;
  }
  double x0 = 1e300, x1 = -1e300, y0 = 0.0, y1 = -1e300;
  for (const auto& [name, pts] : series)
    for (const auto& [x, acc] : pts) {
      const double y = acc.first / acc.second;
      x0 = std::min(x0, x);
      x1 = std::max(x1, x);
      y0 = std::min(y0, y);
      y1 = std::max(y1, y);
    }
  if (series.empty()) x0 = 0, x1 = 1, y1 = 1;
  if (x1 <= x0) x1 = x0 + 1;
  if (y1 <= y0) y1 = y0 + 1;
  const double W = 640, H = 400, L = 70, R = 20, T = 30, B = 50;
  auto sx = [&](double x) { return L + (x - x0) / (x1 - x0) * (W - L - R); };
  auto sy = [&](double y) { return H - B - (y - y0) / (y1 - y0) * (H - T - B); };
  static const char* colors[] = {"#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e"};

  std::ostringstream os;
  os.precision(6);
  os << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << W << "\" height=\"" << H << "\" font-family=\"sans-serif\" font-size=\"12\">\n";
  os << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  os << "<line x1=\"" << L << "\" y1=\"" << H - B << "\" x2=\"" << W - R << "\" y2=\"" << H - B << "\" stroke=\"black\"/>\n";
  os << "<line x1=\"" << L << "\" y1=\"" << T << "\" x2=\"" << L << "\" y2=\"" << H - B << "\" stroke=\"black\"/>\n";
  for (int k = 0; k <= 4; ++k) {
    const double xv = x0 + (x1 - x0) * k / 4, yv = y0 + (y1 - y0) * k / 4;
    os << "<text x=\"" << sx(xv) << "\" y=\"" << H - B + 18 << "\" text-anchor=\"middle\">" << xv << "</text>\n";
    os << "<text x=\"" << L - 6 << "\" y=\"" << sy(yv) + 4 << "\" text-anchor=\"end\">" << yv << "</text>\n";
  }
  os << "<text x=\"" << (L + W - R) / 2 << "\" y=\"" << H - 10 << "\" text-anchor=\"middle\">snr_db</text>\n";
  os << "<text x=\"" << L << "\" y=\"" << T - 10 << "\">" << column << "</text>\n";
  std::size_t idx = 0;
  for (const auto& [name, pts] : series) {
    const char* color = colors[idx % std::size(colors)];
    os << "<polyline fill=\"none\" stroke=\"" << color << "\" stroke-width=\"2\" points=\"";
    for (const auto& [x, acc] : pts) os << sx(x) << "," << sy(acc.first / acc.second) << " ";
    os << "\"/>\n";
    os << "<text x=\"" << W - R - 150 << "\" y=\"" << T + 16 * (idx + 1) << "\" fill=\"" << color << "\">" << name << "</text>\n";
    ++idx;
  }
  os << "</svg>\n";
  return os.str();
}

}  // namespace tokcom
