#include <doctest.h>

#include <json.hpp>
#include <thread>

#include "tokcom/bridge.hpp"
#include "tokcom/link.hpp"
#include "tokcom/rng.hpp"

using namespace tokcom;
using namespace tokcom::bridge;
using nlohmann::json;

namespace {

// In-process peer speaking the protocol on top of a built-in model.
void serve(LineTransport& t, const ProbModel& model, std::size_t top_k_max) {
  const std::uint32_t q = model.q();
  try {
    for (;;) {
      const auto line = t.recv_line();
      json j;
      try {
        j = json::parse(line);
      } catch (const json::exception&) {
        t.send_line(encode_error("malformed JSON"));
        continue;
      }
      const auto type = j.value("type", "");
      if (type == "hello") {
        if (j.value("q", 0u) != q)
          t.send_line(encode_error("q mismatch"));
        else
          t.send_line(encode_ready("fake", top_k_max));
      } else if (type == "predict") {
        const auto k = j.value("top_k", std::size_t{0});
        if (k > top_k_max) {
          t.send_line(encode_error("top_k too large"));
          continue;
        }
        const auto& tok = j["tokens"];
        MaskedSequence s(q, tok.size());
        bool ok = true;
        for (std::size_t i = 0; i < tok.size(); ++i) {
          const auto v = tok[i].get<std::int64_t>();
          if (v >= static_cast<std::int64_t>(q) || v < -1) ok = false;
          else if (v >= 0) s.set(i, static_cast<TokenId>(v));
        }
        if (!ok || s.masked_count() == 0) {
          t.send_line(encode_error("bad tokens"));
          continue;
        }
        t.send_line(encode_dist(model.predict_masked(s, {}, k)));
      } else {
        t.send_line(encode_error("unknown type"));
      }
    }
  } catch (const BridgeError&) {
    // Peer closed.
  }
}

// Peer that answers everything with a bare string.
void serve_garbage(LineTransport& t) {
  try {
    for (;;) {
      t.recv_line();
      t.send_line("\"ok\"");
    }
  } catch (const BridgeError&) {
  }
}

}  // namespace

TEST_CASE("bridge: wire helpers round trip") {
  MaskedSequence s(16, 3);
  s.set(1, 7);
  const auto req = json::parse(encode_predict(s, SideInfo::class_label(3, 7), 4));
  CHECK(req["type"] == "predict");
  CHECK(req["tokens"] == json::array({-1, 7, -1}));
  CHECK(req["side_info"] == 3);
  CHECK(req["top_k"] == 4);
  CHECK(json::parse(encode_hello(1024, 7))["q"] == 1024);

  PredictionResult r;
  r.positions.push_back(truncate_top_k(std::vector<double>(16, 1.0 / 16), 0, 2, Evidence::Both));
  r.positions.push_back(truncate_top_k(std::vector<double>(16, 1.0 / 16), 2, 2, Evidence::Both));
  const auto back = decode_dist(encode_dist(r), s, 2);
  REQUIRE(back.positions.size() == 2);
  CHECK(back.positions[1].pos == 2);
  CHECK(back.positions[0].probs == r.positions[0].probs);
}

TEST_CASE("bridge: malformed replies are rejected") {
  MaskedSequence s(16, 3);
  s.set(1, 7);
  CHECK_THROWS_AS(decode_dist("not json", s, 2), BridgeError);
  CHECK_THROWS_AS(decode_dist(R"({"type":"error","msg":"x"})", s, 2), BridgeError);
  CHECK_THROWS_AS(decode_dist(R"({"type":"dist","positions":[{"pos":1,"ids":[0],"probs":[1]}]})", s, 2),
                  BridgeError);
  CHECK_THROWS_AS(
      decode_dist(R"({"type":"dist","positions":[{"pos":0,"ids":[0],"probs":[1.5]},{"pos":2,"ids":[0],"probs":[1]}]})",
                  s, 2),
      BridgeError);
  CHECK_THROWS_AS(
      decode_dist(R"({"type":"dist","positions":[{"pos":0,"ids":[16],"probs":[1]},{"pos":2,"ids":[0],"probs":[1]}]})",
                  s, 2),
      BridgeError);
}

TEST_CASE("bridge: conformance suite passes against a compliant peer") {
  const auto model = exact_bidirectional(MarkovSource::sticky(32, 0.8));
  auto [client, server] = socket_pair();
  std::thread peer([&] { serve(*server, *model, 64); });
  const auto cases = run_conformance(*client, 32, 0);
  client.reset();
  peer.join();
  CHECK(cases.size() == 7);
  for (const auto& c : cases) {
    INFO(c.name << ": " << c.detail);
    CHECK(c.passed);
  }
}

TEST_CASE("bridge: conformance suite flags a non-compliant peer") {
  auto [client, server] = socket_pair();
  std::thread peer([&] { serve_garbage(*server); });
  const auto cases = run_conformance(*client, 32, 0);
  client.reset();
  peer.join();
  CHECK_FALSE(cases.empty());
  CHECK_FALSE(cases.front().passed);
}

TEST_CASE("bridge: remote model matches the built-in model") {
  const auto src = MarkovSource::sticky(64, 0.85);
  const std::vector<TokenSequence> corpus{generate(src, 20000, {}, 1)};
  const auto local = bidirectional_combine(train_markov(corpus, 1, 1.0), train_markov_reversed(corpus, 1, 1.0));
  auto [client, server] = socket_pair();
  std::thread peer([&] { serve(*server, *local, 64); });
  {
    BridgeModel remote(std::move(client), 64, 0);
    CHECK(remote.name() == "bridge:fake");
    Rng r(2);
    for (int t = 0; t < 1000; ++t) {
      MaskedSequence s(generate(src, 12, {}, 100 + t));
      s.mask(r.below(12));
      for (int k = 0; k < 3; ++k) s.mask(r.below(12));
      const auto a = predict(remote, s, {});
      const auto b = predict(*local, s, {});
      REQUIRE(a.positions.size() == b.positions.size());
      for (std::size_t i = 0; i < a.positions.size(); ++i) {
        const auto da = a.positions[i].expand(64), db = b.positions[i].expand(64);
        for (std::size_t x = 0; x < 64; ++x) REQUIRE(std::abs(da[x] - db[x]) <= 1e-9);
      }
    }

    const auto seq = generate(src, 128, {}, 5);
    const auto plan = make_plan(128, 4, true, 5);
    const ForcedPerChannel ch(0.3, 4);
    const auto ra = transmit(seq, {}, plan, ArqPolicy::mask_and_predict(), McsPolicy::fixed({}), ch, &remote);
    const auto rb = transmit(seq, {}, plan, ArqPolicy::mask_and_predict(), McsPolicy::fixed({}), ch, local.get());
    CHECK(ra.recovered == rb.recovered);
    CHECK(ra.report.stats.ter_after == rb.report.stats.ter_after);
  }
  peer.join();
}

TEST_CASE("bridge: handshake errors surface as exceptions") {
  const auto model = exact_bidirectional(MarkovSource::sticky(16, 0.8));
  auto [client, server] = socket_pair();
  std::thread peer([&] { serve(*server, *model, 64); });
  CHECK_THROWS_AS(BridgeModel(std::move(client), 32, 0), BridgeError);
  peer.join();
}

TEST_CASE("bridge: child process transport") {
  auto t = spawn_process("cat");
  t->send_line("hello there");
  CHECK(t->recv_line() == "hello there");
}
