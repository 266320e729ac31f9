#include "tokcom/bridge.hpp"

#include <arpa/inet.h>
#include <csignal>
#include <netdb.h>
#include <sys/socket.h>
#include <sys/wait.h>
#include <unistd.h>

#include <cerrno>
#include <cstring>

#include "json.hpp"

namespace tokcom::bridge {

using nlohmann::json;

namespace {

[[noreturn]] void sys_fail(const std::string& what) {
  throw BridgeError(what + ": " + std::strerror(errno));
}

json parse_line(std::string_view line) {
  try {
    return json::parse(line);
  } catch (const json::exception& e) {
    throw BridgeError(std::string("malformed reply: ") + e.what());
  }
}

void throw_if_error(const json& j) {
  if (j.value("type", "") == "error") throw BridgeError("predictor error: " + j.value("msg", std::string("?")));
}

}  // namespace

// --- Transports -----------------------------------------------------------

FdTransport::FdTransport(int read_fd, int write_fd, int child_pid)
    : read_fd_(read_fd), write_fd_(write_fd), child_pid_(child_pid) {}

FdTransport::~FdTransport() {
  if (write_fd_ >= 0 && write_fd_ != read_fd_) ::close(write_fd_);
  if (read_fd_ >= 0) ::close(read_fd_);
  if (child_pid_ > 0) {
    int status = 0;
    ::waitpid(child_pid_, &status, 0);
  }
}

void FdTransport::send_line(std::string_view line) {
  std::string data(line);
  data.push_back('\n');
  std::size_t off = 0;
  while (off < data.size()) {
    const ssize_t n = ::write(write_fd_, data.data() + off, data.size() - off);
    if (n < 0) {
      if (errno == EINTR) continue;
      sys_fail("bridge write");
    }
    off += static_cast<std::size_t>(n);
  }
}

std::string FdTransport::recv_line() {
  for (;;) {
    const auto nl = buffer_.find('\n');
    if (nl != std::string::npos) {
      std::string line = buffer_.substr(0, nl);
      buffer_.erase(0, nl + 1);
      return line;
    }
    char chunk[4096];
    const ssize_t n = ::read(read_fd_, chunk, sizeof chunk);
    if (n < 0) {
      if (errno == EINTR) continue;
      sys_fail("bridge read");
    }
    if (n == 0) throw BridgeError("bridge connection closed by peer");
    buffer_.append(chunk, static_cast<std::size_t>(n));
  }
}

std::unique_ptr<LineTransport> connect_tcp(const std::string& host, std::uint16_t port) {
  std::signal(SIGPIPE, SIG_IGN);
  addrinfo hints{};
  hints.ai_family = AF_UNSPEC;
  hints.ai_socktype = SOCK_STREAM;
  addrinfo* res = nullptr;
  const int rc = ::getaddrinfo(host.c_str(), std::to_string(port).c_str(), &hints, &res);
  if (rc != 0) throw BridgeError("cannot resolve " + host + ": " + ::gai_strerror(rc));
  int fd = -1;
  for (addrinfo* a = res; a; a = a->ai_next) {
    fd = ::socket(a->ai_family, a->ai_socktype, a->ai_protocol);
    if (fd < 0) continue;
    if (::connect(fd, a->ai_addr, a->ai_addrlen) == 0) break;
    ::close(fd);
    fd = -1;
  }
  ::freeaddrinfo(res);
  if (fd < 0) throw BridgeError("cannot connect to " + host + ":" + std::to_string(port));
  return std::make_unique<FdTransport>(fd, fd);
}

std::unique_ptr<LineTransport> spawn_process(const std::string& command) {
  std::signal(SIGPIPE, SIG_IGN);
  int to_child[2], from_child[2];
  if (::pipe(to_child) != 0) sys_fail("pipe");
  if (::pipe(from_child) != 0) sys_fail("pipe");
  const pid_t pid = ::fork();
  if (pid < 0) sys_fail("fork");
  if (pid == 0) {
    ::dup2(to_child[0], STDIN_FILENO);
    ::dup2(from_child[1], STDOUT_FILENO);
    ::close(to_child[0]);
    ::close(to_child[1]);
    ::close(from_child[0]);
    ::close(from_child[1]);
    ::execl("/bin/sh", "sh", "-c", command.c_str(), static_cast<char*>(nullptr));
    ::_exit(127);
  }
  ::close(to_child[0]);
  ::close(from_child[1]);
  return std::make_unique<FdTransport>(from_child[0], to_child[1], pid);
}

std::pair<std::unique_ptr<LineTransport>, std::unique_ptr<LineTransport>> socket_pair() {
  std::signal(SIGPIPE, SIG_IGN);
  int fds[2];
  if (::socketpair(AF_UNIX, SOCK_STREAM, 0, fds) != 0) sys_fail("socketpair");
  return {std::make_unique<FdTransport>(fds[0], fds[0]), std::make_unique<FdTransport>(fds[1], fds[1])};
}

// --- Wire encoding --------------------------------------------------------

std::string encode_hello(std::uint32_t q, unsigned side_info_bits) {
  return json{{"type", "hello"}, {"q", q}, {"side_info_bits", side_info_bits}}.dump();
}

std::string encode_predict(const MaskedSequence& seq, const SideInfo& side, std::size_t top_k) {
  const auto raw = seq.raw();
  json j{{"type", "predict"}, {"tokens", std::vector<std::int64_t>(raw.begin(), raw.end())}, {"top_k", top_k}};
  j["side_info"] = side.has_label() ? json(side.label) : json(nullptr);
  return j.dump();
}

std::string encode_dist(const PredictionResult& result) {
  json positions = json::array();
  for (const auto& p : result.positions) positions.push_back({{"pos", p.pos}, {"ids", p.ids}, {"probs", p.probs}});
  return json{{"type", "dist"}, {"positions", std::move(positions)}}.dump();
}

std::string encode_ready(std::string_view name, std::size_t top_k_max) {
  return json{{"type", "ready"}, {"name", name}, {"top_k_max", top_k_max}}.dump();
}

std::string encode_error(std::string_view msg) { return json{{"type", "error"}, {"msg", msg}}.dump(); }

PredictionResult decode_dist(std::string_view line, const MaskedSequence& request, std::size_t top_k) {
  const json j = parse_line(line);
  throw_if_error(j);
  if (j.value("type", "") != "dist") throw BridgeError("expected a dist reply");
  const auto expected = request.masked_positions();
  const std::uint32_t q = request.q();
  PredictionResult result;
  try {
    const auto& positions = j.at("positions");
    if (positions.size() != expected.size()) throw BridgeError("dist reply covers the wrong number of positions");
    for (std::size_t i = 0; i < expected.size(); ++i) {
      const auto& e = positions[i];
      PositionPrediction p;
      p.pos = e.at("pos").get<std::size_t>();
      if (p.pos != expected[i]) throw BridgeError("dist reply position " + std::to_string(p.pos) + " was not requested");
      p.ids = e.at("ids").get<std::vector<TokenId>>();
      p.probs = e.at("probs").get<std::vector<double>>();
      if (p.ids.empty() || p.ids.size() != p.probs.size()) throw BridgeError("ids/probs length mismatch");
      if (top_k != 0 && p.ids.size() > top_k) throw BridgeError("reply lists more than top_k ids");
      std::vector<bool> seen(q, false);
      double sum = 0.0;
      for (std::size_t k = 0; k < p.ids.size(); ++k) {
        if (p.ids[k] >= q || seen[p.ids[k]]) throw BridgeError("reply id out of range or repeated");
        seen[p.ids[k]] = true;
        if (!(p.probs[k] >= 0.0)) throw BridgeError("negative probability in reply");
        if (k > 0 && p.probs[k] > p.probs[k - 1]) throw BridgeError("reply probabilities not sorted descending");
        sum += p.probs[k];
      }
      if (sum > 1.0 + 1e-6) throw BridgeError("reply probabilities sum above 1");
      p.residual = p.ids.size() < q ? std::max(0.0, 1.0 - sum) : 0.0;
      p.evidence = Evidence::Both;
      result.positions.push_back(std::move(p));
    }
  } catch (const json::exception& e) {
    throw BridgeError(std::string("bad dist reply: ") + e.what());
  }
  return result;
}

// --- BridgeModel ----------------------------------------------------------

BridgeModel::BridgeModel(std::unique_ptr<LineTransport> transport, std::uint32_t q, unsigned side_info_bits)
    : transport_(std::move(transport)), q_(q), side_info_bits_(side_info_bits) {
  transport_->send_line(encode_hello(q, side_info_bits));
  const json j = parse_line(transport_->recv_line());
  throw_if_error(j);
  if (j.value("type", "") != "ready") throw BridgeError("expected a ready reply to hello");
  remote_name_ = j.value("name", std::string("external"));
  top_k_max_ = j.value("top_k_max", std::size_t{0});
  if (top_k_max_ == 0) throw BridgeError("predictor advertised top_k_max = 0");
}

PredictionResult BridgeModel::predict_masked(const MaskedSequence& seq, const SideInfo& side, std::size_t top_k) const {
  const std::size_t k = (top_k == 0 || top_k > top_k_max_) ? std::min<std::size_t>(top_k_max_, q_) : top_k;
  const std::scoped_lock lock(mu_);
  transport_->send_line(encode_predict(seq, side, k));
  return decode_dist(transport_->recv_line(), seq, k);
}

Evidence BridgeModel::masked_dist(const MaskedSequence& seq, std::size_t pos, const SideInfo& side,
                                  std::span<double> out) const {
  if (!seq.is_masked(pos)) throw std::invalid_argument("bridge: position is not masked");
  for (const auto& p : predict_masked(seq, side, 0).positions) {
    if (p.pos != pos) continue;
    const auto dist = p.expand(q_);
    std::copy(dist.begin(), dist.end(), out.begin());
    return p.evidence;
  }
  throw BridgeError("bridge reply missing requested position");
}

// --- Conformance ----------------------------------------------------------

std::vector<ConformanceCase> run_conformance(LineTransport& t, std::uint32_t q, unsigned side_info_bits) {
  std::vector<ConformanceCase> cases;
  auto expect_error = [&](const std::string& name, const std::string& request) {
    ConformanceCase c{name, false, {}};
    try {
      t.send_line(request);
      const json j = json::parse(t.recv_line());
      c.passed = j.value("type", "") == "error" && j.contains("msg");
      c.detail = c.passed ? "structured error" : "unexpected reply " + j.dump();
    } catch (const std::exception& e) {
      c.detail = e.what();
    }
    cases.push_back(std::move(c));
  };

  expect_error("hello with mismatched q", encode_hello(q + 1, side_info_bits));

  std::size_t top_k_max = 0;
  {
    ConformanceCase c{"handshake", false, {}};
    try {
      t.send_line(encode_hello(q, side_info_bits));
      const json j = json::parse(t.recv_line());
      top_k_max = j.value("top_k_max", std::size_t{0});
      c.passed = j.value("type", "") == "ready" && top_k_max > 0;
      c.detail = j.dump();
    } catch (const std::exception& e) {
      c.detail = e.what();
    }
    cases.push_back(std::move(c));
    if (!cases.back().passed) return cases;
  }

  MaskedSequence probe(q, 4);
  probe.set(0, 0);
  probe.set(2, q - 1);
  expect_error("malformed JSON", "{\"type\": \"predict\", \"tokens\": [1, -1");
  expect_error("unknown message type", R"({"type":"frobnicate"})");
  expect_error("oversized top_k", encode_predict(probe, {}, top_k_max + 1));
  {
    json j = json::parse(encode_predict(probe, {}, 1));
    j["tokens"][0] = q;
    expect_error("out-of-range token id", j.dump());
  }

  ConformanceCase alive{"connection survives errors", false, {}};
  try {
    t.send_line(encode_predict(probe, {}, 1));
    const auto r = decode_dist(t.recv_line(), probe, 1);
    alive.passed = r.positions.size() == 2 && r.positions[0].ids.size() == 1 && r.positions[0].probs[0] <= 1.0;
    alive.detail = alive.passed ? "valid dist after errors" : "dist reply malformed";
  } catch (const std::exception& e) {
    alive.detail = e.what();
  }
  cases.push_back(std::move(alive));
  return cases;
}

}  // namespace tokcom::bridge
