#pragma once

#include <atomic>
#include <memory>
#include <string>
#include <thread>
#include <vector>

#include "oracle/oracle.hpp"

namespace oracle {

// Newline-delimited JSON over TCP.
//   request:  {"id": u64, "tokens": [u32...], "k": u32|"full"}
//   success:  {"id": u64, "topk": [[token_id, logit]...], "remaining": u64}
//   error:    {"id": u64, "error": "budget"|"rate"|"bad_request", "detail": str}
// Logits are serialized with 17 significant digits, lossless for double.
// One extension request, used once per connection by the reference client:
//   {"id": u64, "info": true} -> {"id", "vocab_size", "k", "remaining"}
class OracleServer {
 public:
  // port 0 binds an ephemeral port; see port() after start().
  OracleServer(LocalOracle& oracle, int port);
  ~OracleServer();

  void start();
  void stop();
  int port() const { return port_; }

 private:
  void accept_loop();
  void serve_client(int fd);

  LocalOracle& oracle_;
  int listen_fd_ = -1;
  int port_ = 0;
  std::atomic<bool> running_{false};
  std::thread accept_thread_;
  std::mutex clients_mu_;
  std::vector<int> client_fds_;
  std::vector<std::thread> client_threads_;
};

class RemoteOracle : public Oracle {
 public:
  // requested_k: kFullLogits asks for the full vector; the server serves
  // min(its configured k, the request).
  RemoteOracle(const std::string& host, int port, int requested_k = kFullLogits);
  ~RemoteOracle() override;

  TopKResponse query_topk(const std::vector<int>& prompt) override;
  int vocab_size() const override { return vocab_size_; }
  int top_k() const override { return effective_k_; }

 private:
  std::string roundtrip(const std::string& line);

  int fd_ = -1;
  int requested_k_;
  int vocab_size_ = 0;
  int effective_k_ = 0;
  uint64_t next_id_ = 1;
  std::string rxbuf_;
  std::mutex mu_;
};

// 17-significant-digit decimal, round-trips any double.
std::string format_logit(double v);

}  // namespace oracle
