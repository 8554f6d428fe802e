#include "oracle/wire.hpp"

#include <arpa/inet.h>
#include <netinet/in.h>
#include <sys/socket.h>
#include <unistd.h>

#include <cstdio>
#include <cstring>

#include "json.hpp"

namespace oracle {

using nlohmann::json;

std::string format_logit(double v) {
  char buf[48];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

namespace {

void send_line(int fd, const std::string& line) {
  std::string framed = line;
  framed.push_back('\n');
  size_t off = 0;
  while (off < framed.size()) {
    const ssize_t n = ::send(fd, framed.data() + off, framed.size() - off, MSG_NOSIGNAL);
    if (n <= 0) throw TransportError("send failed");
    off += static_cast<size_t>(n);
  }
}

// Reads one '\n'-terminated line using buf as carry-over.
bool recv_line(int fd, std::string& buf, std::string& line) {
  for (;;) {
    const size_t pos = buf.find('\n');
    if (pos != std::string::npos) {
      line = buf.substr(0, pos);
      buf.erase(0, pos + 1);
      return true;
    }
    char chunk[4096];
    const ssize_t n = ::recv(fd, chunk, sizeof(chunk), 0);
    if (n <= 0) return false;
    buf.append(chunk, static_cast<size_t>(n));
  }
}

std::string error_line(uint64_t id, const char* code, const std::string& detail) {
  json j = {{"id", id}, {"error", code}, {"detail", detail}};
  return j.dump();
}

std::string success_line(uint64_t id, const TopKResponse& resp) {
  std::string out = "{\"id\":" + std::to_string(id) + ",\"remaining\":" +
                    std::to_string(resp.queries_remaining) + ",\"topk\":[";
  for (size_t i = 0; i < resp.entries.size(); ++i) {
    if (i) out.push_back(',');
    out += "[" + std::to_string(resp.entries[i].token_id) + "," +
           format_logit(resp.entries[i].logit) + "]";
  }
  out += "]}";
  return out;
}

}  // namespace

OracleServer::OracleServer(LocalOracle& oracle, int port) : oracle_(oracle), port_(port) {}

OracleServer::~OracleServer() { stop(); }

void OracleServer::start() {
  listen_fd_ = ::socket(AF_INET, SOCK_STREAM, 0);
  if (listen_fd_ < 0) throw TransportError("socket() failed");
  int one = 1;
  ::setsockopt(listen_fd_, SOL_SOCKET, SO_REUSEADDR, &one, sizeof(one));

  sockaddr_in addr{};
  addr.sin_family = AF_INET;
  addr.sin_addr.s_addr = htonl(INADDR_LOOPBACK);
  addr.sin_port = htons(static_cast<uint16_t>(port_));
  if (::bind(listen_fd_, reinterpret_cast<sockaddr*>(&addr), sizeof(addr)) < 0) {
    ::close(listen_fd_);
    throw TransportError("bind failed on port " + std::to_string(port_));
  }
  if (::listen(listen_fd_, 16) < 0) {
    ::close(listen_fd_);
    throw TransportError("listen failed");
  }
  socklen_t len = sizeof(addr);
  ::getsockname(listen_fd_, reinterpret_cast<sockaddr*>(&addr), &len);
  port_ = ntohs(addr.sin_port);

  running_ = true;
  accept_thread_ = std::thread([this] { accept_loop(); });
}

void OracleServer::stop() {
  if (!running_.exchange(false)) return;
  ::shutdown(listen_fd_, SHUT_RDWR);
  ::close(listen_fd_);
  {
    std::lock_guard<std::mutex> lock(clients_mu_);
    for (int fd : client_fds_) {
      ::shutdown(fd, SHUT_RDWR);
      ::close(fd);
    }
    client_fds_.clear();
  }
  if (accept_thread_.joinable()) accept_thread_.join();
  std::lock_guard<std::mutex> lock(clients_mu_);
  for (auto& t : client_threads_)
    if (t.joinable()) t.join();
  client_threads_.clear();
}

void OracleServer::accept_loop() {
  while (running_) {
    const int fd = ::accept(listen_fd_, nullptr, nullptr);
    if (fd < 0) break;
    std::lock_guard<std::mutex> lock(clients_mu_);
    client_fds_.push_back(fd);
    client_threads_.emplace_back([this, fd] { serve_client(fd); });
  }
}

void OracleServer::serve_client(int fd) {
  std::string buf, line;
  while (running_ && recv_line(fd, buf, line)) {
    uint64_t id = 0;
    std::string reply;
    try {
      json req = json::parse(line);
      id = req.value("id", 0ull);
      if (req.value("info", false)) {
        json j = {{"id", id},
                  {"vocab_size", oracle_.vocab_size()},
                  {"k", oracle_.top_k()},
                  {"remaining", oracle_.config().max_queries - oracle_.ledger().total}};
        reply = j.dump();
      } else {
        std::vector<int> tokens = req.at("tokens").get<std::vector<int>>();
        int req_k = kFullLogits;
        if (req.contains("k") && !req.at("k").is_string()) req_k = req.at("k").get<int>();
        TopKResponse resp = oracle_.query_topk(tokens);
        if (req_k != kFullLogits && static_cast<size_t>(req_k) < resp.entries.size())
          resp.entries.resize(static_cast<size_t>(req_k));
        reply = success_line(id, resp);
      }
    } catch (const BudgetExceeded& e) {
      reply = error_line(id, "budget", e.what());
    } catch (const RateLimited& e) {
      reply = error_line(id, "rate", e.what());
    } catch (const ProtocolError& e) {
      reply = error_line(id, "bad_request", e.what());
    } catch (const json::exception& e) {
      reply = error_line(id, "bad_request", e.what());
    }
    try {
      send_line(fd, reply);
    } catch (const TransportError&) {
      break;
    }
  }
  ::close(fd);
}

RemoteOracle::RemoteOracle(const std::string& host, int port, int requested_k)
    : requested_k_(requested_k) {
  fd_ = ::socket(AF_INET, SOCK_STREAM, 0);
  if (fd_ < 0) throw TransportError("socket() failed");
  sockaddr_in addr{};
  addr.sin_family = AF_INET;
  addr.sin_port = htons(static_cast<uint16_t>(port));
  if (::inet_pton(AF_INET, host.c_str(), &addr.sin_addr) != 1) {
    ::close(fd_);
    throw TransportError("bad address: " + host);
  }
  if (::connect(fd_, reinterpret_cast<sockaddr*>(&addr), sizeof(addr)) < 0) {
    ::close(fd_);
    fd_ = -1;
    throw TransportError("connection refused: " + host + ":" + std::to_string(port));
  }
  // one info exchange to learn the served vocabulary
  json info = json::parse(roundtrip("{\"id\":0,\"info\":true}"));
  vocab_size_ = info.at("vocab_size").get<int>();
  const int server_k = info.at("k").get<int>();
  effective_k_ = (requested_k_ == kFullLogits) ? server_k
                 : (server_k == kFullLogits)   ? requested_k_
                                               : std::min(requested_k_, server_k);
}

RemoteOracle::~RemoteOracle() {
  if (fd_ >= 0) ::close(fd_);
}

std::string RemoteOracle::roundtrip(const std::string& line) {
  send_line(fd_, line);
  std::string reply;
  if (!recv_line(fd_, rxbuf_, reply)) throw TransportError("connection closed by server");
  return reply;
}

TopKResponse RemoteOracle::query_topk(const std::vector<int>& prompt) {
  std::lock_guard<std::mutex> lock(mu_);
  const uint64_t id = next_id_++;
  std::string req = "{\"id\":" + std::to_string(id) + ",\"tokens\":[";
  for (size_t i = 0; i < prompt.size(); ++i) {
    if (i) req.push_back(',');
    req += std::to_string(prompt[i]);
  }
  req += "],\"k\":";
  req += (requested_k_ == kFullLogits) ? "\"full\"" : std::to_string(requested_k_);
  req += "}";

  json resp = json::parse(roundtrip(req));
  if (resp.contains("error")) {
    const std::string code = resp.at("error").get<std::string>();
    const std::string detail = resp.value("detail", "");
    if (code == "budget") throw BudgetExceeded(0);
    if (code == "rate") throw RateLimited();
    throw ProtocolError(detail.empty() ? code : detail);
  }
  if (resp.at("id").get<uint64_t>() != id) throw TransportError("response id mismatch");

  TopKResponse out;
  out.queries_remaining = resp.at("remaining").get<uint64_t>();
  for (const auto& pair : resp.at("topk"))
    out.entries.push_back({pair.at(0).get<int>(), pair.at(1).get<double>()});
  return out;
}

}  // namespace oracle
