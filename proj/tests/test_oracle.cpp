#include <atomic>
#include <cmath>
#include <thread>

#include "doctest.h"
#include "lm/model.hpp"
#include "oracle/oracle.hpp"
#include "oracle/wire.hpp"

using namespace oracle;

namespace {

lm::ModelParams small_teacher(uint64_t seed = 4) {
  lm::ModelConfig cfg;
  cfg.vocab_size = 10;
  cfg.hidden_dim = 4;
  cfg.num_layers = 1;
  cfg.num_heads = 1;
  cfg.context_len = 8;
  cfg.ff_mult = 2;
  return lm::ModelParams::init(cfg, seed);
}

}  // namespace

TEST_CASE("full query equals the teacher's last logit row exactly") {
  lm::ModelParams teacher = small_teacher();
  OracleConfig cfg;
  cfg.max_queries = 100;
  LocalOracle o(teacher, cfg);

  std::vector<int> prompt = {1, 2, 3};
  TopKResponse r = o.query_topk(prompt);
  CHECK(r.entries.size() == 10);

  numkit::Tensor logits = lm::forward_logits(teacher, prompt);
  const int v = teacher.cfg.vocab_size;
  for (const auto& e : r.entries)
    CHECK(e.logit == logits.at(logits.dim(0) - 1, e.token_id));
  // sorted descending with id tiebreak
  for (size_t i = 0; i + 1 < r.entries.size(); ++i) {
    const bool ordered = r.entries[i].logit > r.entries[i + 1].logit ||
                         (r.entries[i].logit == r.entries[i + 1].logit &&
                          r.entries[i].token_id < r.entries[i + 1].token_id);
    CHECK(ordered);
  }
  CHECK(v == 10);
}

TEST_CASE("top-k truncation keeps the k largest, forced ordering case") {
  std::vector<double> logits = {0, 1, 2, 3, 4, 5, 6, 7, 8, 9};
  auto entries = topk_entries(logits, 3);
  REQUIRE(entries.size() == 3);
  CHECK(entries[0].token_id == 9);
  CHECK(entries[0].logit == 9);
  CHECK(entries[1].token_id == 8);
  CHECK(entries[2].token_id == 7);

  // ties break by ascending token id
  std::vector<double> tied = {5, 5, 5, 1};
  auto t = topk_entries(tied, 2);
  CHECK(t[0].token_id == 0);
  CHECK(t[1].token_id == 1);
}

TEST_CASE("budget is exact and errors consume nothing") {
  OracleConfig cfg;
  cfg.max_queries = 1;
  LocalOracle o(small_teacher(), cfg);

  CHECK_THROWS_AS(o.query_topk({}), ProtocolError);           // malformed, free
  CHECK_THROWS_AS(o.query_topk({0, 99}), ProtocolError);      // out of vocab, free
  CHECK(o.ledger().total == 0);

  TopKResponse r = o.query_topk({1});
  CHECK(r.queries_remaining == 0);
  CHECK_THROWS_AS(o.query_topk({1}), BudgetExceeded);
  CHECK(o.ledger().total == 1);
}

TEST_CASE("ledger splits by stage and total is their sum") {
  OracleConfig cfg;
  cfg.max_queries = 10;
  LocalOracle o(small_teacher(), cfg);
  o.query_topk({1});
  o.query_topk({2});
  o.set_stage(Stage::Distill);
  o.query_topk({3});
  auto led = o.ledger();
  CHECK(led.steal == 2);
  CHECK(led.distill == 1);
  CHECK(led.total == led.steal + led.distill);
}

TEST_CASE("token bucket rate limiting with injected clock") {
  OracleConfig cfg;
  cfg.max_queries = 100;
  cfg.rate_limit = 2.0;  // capacity 2, refill 2/sec
  LocalOracle o(small_teacher(), cfg);
  double now = 100.0;
  o.set_clock([&now] { return now; });

  o.query_topk({1});
  o.query_topk({1});
  CHECK_THROWS_AS(o.query_topk({1}), RateLimited);
  CHECK(o.ledger().total == 2);  // the limited call consumed nothing

  now += 0.6;  // refills 1.2 tokens
  o.query_topk({1});
  CHECK_THROWS_AS(o.query_topk({1}), RateLimited);
  CHECK(o.ledger().total == 3);
}

TEST_CASE("degradation: rounding bounds decimals, sigma=0 is bit-exact, noise is per-prompt") {
  lm::ModelParams teacher = small_teacher();
  std::vector<int> prompt = {4, 2};

  OracleConfig clean;
  clean.max_queries = 100;
  LocalOracle co(teacher, clean);
  auto base = co.query_topk(prompt);

  OracleConfig rounded = clean;
  rounded.degradation.kind = Degradation::Kind::Round;
  rounded.degradation.decimals = 2;
  LocalOracle ro(teacher, rounded);
  auto rr = ro.query_topk(prompt);
  for (const auto& e : rr.entries) {
    const double scaled = e.logit * 100.0;
    CHECK(std::abs(scaled - std::round(scaled)) <= 1e-9);
  }

  OracleConfig zero_noise = clean;
  zero_noise.degradation.kind = Degradation::Kind::GaussianNoise;
  zero_noise.degradation.sigma = 0.0;
  LocalOracle zo(teacher, zero_noise);
  auto zr = zo.query_topk(prompt);
  REQUIRE(zr.entries.size() == base.entries.size());
  for (size_t i = 0; i < zr.entries.size(); ++i) {
    CHECK(zr.entries[i].token_id == base.entries[i].token_id);
    CHECK(zr.entries[i].logit == base.entries[i].logit);
  }

  OracleConfig noisy = clean;
  noisy.degradation.kind = Degradation::Kind::GaussianNoise;
  noisy.degradation.sigma = 0.1;
  noisy.degradation.noise_seed = 9;
  LocalOracle no1(teacher, noisy);
  LocalOracle no2(teacher, noisy);
  auto n1 = no1.query_topk(prompt);
  no2.query_topk({1});  // different interleaving
  auto n2 = no2.query_topk(prompt);
  REQUIRE(n1.entries.size() == n2.entries.size());
  for (size_t i = 0; i < n1.entries.size(); ++i)
    CHECK(n1.entries[i].logit == n2.entries[i].logit);
}

TEST_CASE("truncation equals the k largest of a shadow full query") {
  lm::ModelParams teacher = small_teacher(17);
  OracleConfig cfg;
  cfg.k = 4;
  cfg.max_queries = 1000;
  LocalOracle o(teacher, cfg);
  std::mt19937_64 rng(12);
  for (int trial = 0; trial < 50; ++trial) {
    std::vector<int> prompt(1 + rng() % 6);
    for (auto& t : prompt) t = static_cast<int>(rng() % 10);
    auto shadow = o.shadow_full_logits(prompt);
    auto expect = topk_entries(shadow, 4);
    auto got = o.query_topk(prompt);
    REQUIRE(got.entries.size() == expect.size());
    for (size_t i = 0; i < expect.size(); ++i) {
      CHECK(got.entries[i].token_id == expect[i].token_id);
      CHECK(got.entries[i].logit == expect[i].logit);
    }
  }
}

TEST_CASE("concurrent callers never exceed the budget") {
  OracleConfig cfg;
  cfg.max_queries = 100;
  LocalOracle o(small_teacher(), cfg);
  std::atomic<int> served{0};
  std::atomic<int> rejected{0};
  std::vector<std::thread> workers;
  for (int w = 0; w < 4; ++w) {
    workers.emplace_back([&, w] {
      for (int i = 0; i < 50; ++i) {
        try {
          o.query_topk({w % 9 + 1});
          served.fetch_add(1);
        } catch (const BudgetExceeded&) {
          rejected.fetch_add(1);
        }
      }
    });
  }
  for (auto& t : workers) t.join();
  CHECK(served.load() == 100);
  CHECK(rejected.load() == 100);
  CHECK(o.ledger().total == 100);
}

TEST_CASE("remote oracle is transparent and maps errors") {
  lm::ModelParams teacher = small_teacher(23);
  OracleConfig cfg;
  cfg.max_queries = 500;
  LocalOracle local_for_server(teacher, cfg);
  OracleServer server(local_for_server, 0);
  server.start();

  LocalOracle local(teacher, cfg);
  RemoteOracle remote("127.0.0.1", server.port());
  CHECK(remote.vocab_size() == teacher.cfg.vocab_size);

  std::mt19937_64 rng(5);
  for (int i = 0; i < 40; ++i) {
    std::vector<int> prompt(1 + rng() % 6);
    for (auto& t : prompt) t = static_cast<int>(rng() % 10);
    auto a = local.query_topk(prompt);
    auto b = remote.query_topk(prompt);
    REQUIRE(a.entries.size() == b.entries.size());
    for (size_t j = 0; j < a.entries.size(); ++j) {
      CHECK(a.entries[j].token_id == b.entries[j].token_id);
      CHECK(a.entries[j].logit == b.entries[j].logit);  // bit-identical
    }
    CHECK(a.queries_remaining == b.queries_remaining);
  }

  CHECK_THROWS_AS(remote.query_topk({}), ProtocolError);
  server.stop();
  CHECK_THROWS_AS(remote.query_topk({1}), TransportError);
  CHECK_THROWS_AS(RemoteOracle("127.0.0.1", 1), TransportError);  // nothing listens there
}

TEST_CASE("remote budget errors arrive as BudgetExceeded and ledger stays sane") {
  lm::ModelParams teacher = small_teacher(29);
  OracleConfig cfg;
  cfg.max_queries = 3;
  LocalOracle shared(teacher, cfg);
  OracleServer server(shared, 0);
  server.start();
  RemoteOracle remote("127.0.0.1", server.port());

  remote.query_topk({1});
  remote.query_topk({2});
  remote.query_topk({3});
  CHECK_THROWS_AS(remote.query_topk({4}), BudgetExceeded);
  CHECK(shared.ledger().total == 3);
  server.stop();
}

TEST_CASE("format_logit round-trips doubles") {
  std::mt19937_64 rng(31);
  std::normal_distribution<double> d(0.0, 10.0);
  for (int i = 0; i < 1000; ++i) {
    const double v = d(rng);
    CHECK(std::stod(format_logit(v)) == v);
  }
}
