#pragma once

// Client side of the external-predictor bridge: newline-delimited JSON over a
// byte stream (pipe to a child process, or TCP).
//
//   -> {"type":"hello","q":1024,"side_info_bits":7}
//   <- {"type":"ready","name":"...","top_k_max":64}
//   -> {"type":"predict","tokens":[5,-1,9],"side_info":3,"top_k":16}
//   <- {"type":"dist","positions":[{"pos":1,"ids":[...],"probs":[...]}]}
//   <- {"type":"error","msg":"..."}
//
// One request in flight per connection; responses arrive in request order.

#include <memory>
#include <mutex>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "tokcom/predictor.hpp"

namespace tokcom::bridge {

class BridgeError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Line-framed duplex byte stream.
class LineTransport {
 public:
  virtual ~LineTransport() = default;
  virtual void send_line(std::string_view line) = 0;
  /// Next line without the trailing newline. Throws BridgeError on EOF.
  virtual std::string recv_line() = 0;
};

/// Transport over a pair of file descriptors (may be the same socket).
class FdTransport final : public LineTransport {
 public:
  FdTransport(int read_fd, int write_fd, int child_pid = -1);
  ~FdTransport() override;
  FdTransport(const FdTransport&) = delete;
  FdTransport& operator=(const FdTransport&) = delete;

  void send_line(std::string_view line) override;
  std::string recv_line() override;

 private:
  int read_fd_;
  int write_fd_;
  int child_pid_;
  std::string buffer_;
};

std::unique_ptr<LineTransport> connect_tcp(const std::string& host, std::uint16_t port);
/// Runs `command` under /bin/sh with stdin/stdout connected to the transport.
std::unique_ptr<LineTransport> spawn_process(const std::string& command);
/// Connected socket pair for in-process peers: {client, server}.
std::pair<std::unique_ptr<LineTransport>, std::unique_ptr<LineTransport>> socket_pair();

// Wire encoding, shared by the client and test peers.
std::string encode_hello(std::uint32_t q, unsigned side_info_bits);
std::string encode_predict(const MaskedSequence& seq, const SideInfo& side, std::size_t top_k);
std::string encode_dist(const PredictionResult& result);
std::string encode_ready(std::string_view name, std::size_t top_k_max);
std::string encode_error(std::string_view msg);

/// Parses and validates a dist reply against the request it answers.
PredictionResult decode_dist(std::string_view line, const MaskedSequence& request, std::size_t top_k);

/// ProbModel backed by an external predictor.
class BridgeModel final : public ProbModel {
 public:
  BridgeModel(std::unique_ptr<LineTransport> transport, std::uint32_t q, unsigned side_info_bits);

  std::uint32_t q() const override { return q_; }
  ModelCaps caps() const override { return {false, true, side_info_bits_ > 0}; }
  std::string name() const override { return "bridge:" + remote_name_; }
  std::size_t top_k_max() const { return top_k_max_; }

  Evidence masked_dist(const MaskedSequence& seq, std::size_t pos, const SideInfo& side,
                       std::span<double> out) const override;
  PredictionResult predict_masked(const MaskedSequence& seq, const SideInfo& side, std::size_t top_k) const override;

 private:
  std::unique_ptr<LineTransport> transport_;
  std::uint32_t q_;
  unsigned side_info_bits_;
  std::string remote_name_;
  std::size_t top_k_max_ = 0;
  mutable std::mutex mu_;
};

struct ConformanceCase {
  std::string name;
  bool passed = false;
  std::string detail;
};

/// Sends malformed and out-of-contract requests and checks that each one gets
/// a structured error while the connection stays usable. Performs its own
/// handshake first.
std::vector<ConformanceCase> run_conformance(LineTransport& transport, std::uint32_t q, unsigned side_info_bits);

}  // namespace tokcom::bridge
