#pragma once

#include <arpa/inet.h>
#include <fcntl.h>
#include <netinet/in.h>
#include <poll.h>
#include <sys/socket.h>
#include <unistd.h>

#include <atomic>
#include <cerrno>
#include <chrono>
#include <cstring>
#include <deque>
#include <fstream>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <thread>
#include <vector>

#include "mobman/protocol.hpp"
#include "mobman/simulation.hpp"
#include "mobman/websocket.hpp"

namespace mobman {

using ClientId = std::uint64_t;
inline constexpr ClientId kLocalClient = 0;  // scripts and the headless sink

struct ScriptEntry {
  std::uint64_t tick = 0;  // applied before tick+1 is simulated
  std::string line;        // a client envelope as sent on the wire
};

/// JSON lines of {"tick": N, "kind": ..., "payload": {...}}.
inline std::vector<ScriptEntry> load_script(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open script: " + path);
  std::vector<ScriptEntry> out;
  std::string line;
  std::size_t n = 0;
  while (std::getline(in, line)) {
    ++n;
    if (line.find_first_not_of(" \t\r") == std::string::npos || line[0] == '#') continue;
    Json j;
    try {
      j = Json::parse(line);
    } catch (const Json::exception& e) {
      throw ValidationError("script line " + std::to_string(n) + ": " + e.what());
    }
    if (!j.is_object() || !j.contains("tick") || !j.at("tick").is_number_unsigned())
      throw ValidationError("script line " + std::to_string(n) + ": needs a non-negative integer 'tick'");
    ScriptEntry e;
    e.tick = j.at("tick").get<std::uint64_t>();
    j.erase("tick");
    e.line = j.dump();
    if (!out.empty() && e.tick < out.back().tick)
      throw ValidationError("script line " + std::to_string(n) + ": ticks must be non-decreasing");
    out.push_back(std::move(e));
  }
  return out;
}

/// One receiver of the server stream: its own seq counter and link draw.
struct Subscriber {
  std::uint64_t seq = 0;
  Rng rng;
  std::function<void(const std::string&)> deliver;
  std::uint64_t sent = 0;
  std::uint64_t dropped = 0;
};

struct ServiceConfig {
  LinkModel link;
  double broadcast_hz = 10.0;
  std::string record_path;
};

/// The simulation owner. Commands enter through enqueue() from any thread and
/// are applied at the next tick boundary; everything else runs on the thread
/// that calls step().
class Service {
 public:
  Service(const Scenario& scenario, std::shared_ptr<const ReferenceMap> map, std::uint64_t seed,
          ServiceConfig cfg = {})
      : sim_(scenario, std::move(map), seed), cfg_(std::move(cfg)), seed_(seed) {
    cfg_.link.validate();
    if (!(cfg_.broadcast_hz > 0.0)) throw ValidationError("broadcast rate must be positive");
    broadcast_every_ =
        std::max<std::uint64_t>(1, static_cast<std::uint64_t>(std::llround(1.0 / (cfg_.broadcast_hz * scenario.dt))));
    if (!cfg_.record_path.empty()) {
      record_.open(cfg_.record_path, std::ios::binary);
      if (!record_) throw IoError("cannot open record log: " + cfg_.record_path);
      Json h{{"kind", "log_header"},     {"v", kProtocolVersion},  {"seed", seed},
             {"scenario", scenario.name}, {"scenario_hash", scenario_hash(scenario)},
             {"map_points", sim_.map().size()}};
      write_record(std::move(h));
    }
  }

  const Simulation& sim() const { return sim_; }
  const std::vector<TickRecord>& log() const { return log_; }
  std::uint64_t broadcast_every() const { return broadcast_every_; }

  /// Thread-safe; the subscriber starts receiving at the next tick boundary.
  void add_subscriber(ClientId id, std::function<void(const std::string&)> deliver) {
    std::lock_guard lock(mu_);
    pending_.push_back({Pending::kJoin, id, {}, std::move(deliver)});
  }
  void remove_subscriber(ClientId id) {
    std::lock_guard lock(mu_);
    pending_.push_back({Pending::kLeave, id, {}, {}});
  }
  /// Thread-safe; the raw line is validated when it is dequeued.
  void enqueue(ClientId id, std::string line) {
    std::lock_guard lock(mu_);
    pending_.push_back({Pending::kCommand, id, std::move(line), {}});
  }

  const Subscriber* subscriber(ClientId id) const {
    auto it = subs_.find(id);
    return it == subs_.end() ? nullptr : &it->second;
  }
  std::uint64_t rejected() const { return rejected_; }

  /// Drains the queue, advances one tick and broadcasts.
  void step() {
    std::deque<Pending> batch;
    {
      std::lock_guard lock(mu_);
      batch.swap(pending_);
    }
    const std::size_t events_before = sim_.events().size();
    for (auto& p : batch) {
      switch (p.kind) {
        case Pending::kJoin: join(p.client, std::move(p.deliver)); break;
        case Pending::kLeave: subs_.erase(p.client); break;
        case Pending::kCommand: apply_line(p.client, p.line); break;
      }
    }
    TickRecord r = sim_.tick();
    tail_.push_back({r.est, r.mode});
    log_.push_back(r);
    if (record_.is_open()) {
      write_record({{"kind", "tick"},
                    {"tick", r.tick},
                    {"gt", {r.gt.x, r.gt.y, r.gt.theta}},
                    {"est", {r.est.x, r.est.y, r.est.theta}}});
    }
    for (std::size_t i = events_before; i < sim_.events().size(); ++i)
      broadcast("event", event_payload(sim_.events()[i]));
    if (sim_.tick_count() % broadcast_every_ == 0) {
      broadcast("state", state_payload(sim_, tail_));
      tail_.clear();
    }
  }

  void close_record() {
    if (record_.is_open()) record_.close();
  }

 private:
  struct Pending {
    enum Kind { kJoin, kLeave, kCommand } kind;
    ClientId client;
    std::string line;
    std::function<void(const std::string&)> deliver;
  };

  void join(ClientId id, std::function<void(const std::string&)> deliver) {
    Subscriber s;
    s.rng = Rng(seed_).fork(0x1000 + id);
    s.deliver = std::move(deliver);
    auto& sub = subs_[id] = std::move(s);
    for (auto& payload : scenario_info_payloads(sim_)) send(sub, "scenario_info", std::move(payload));
  }

  void apply_line(ClientId id, const std::string& line) {
    try {
      const Envelope env = parse_envelope(line);
      const OperatorCommand c = parse_command(env);
      sim_.apply(c);
      if (record_.is_open()) {
        write_record({{"kind", "command"},
                      {"tick", sim_.tick_count()},
                      {"client", id},
                      {"envelope", {{"kind", env.kind}, {"payload", env.payload}, {"seq", env.seq}}}});
      }
    } catch (const ValidationError& e) {
      ++rejected_;
      auto it = subs_.find(id);
      if (it != subs_.end()) send(it->second, "error", {{"message", e.what()}, {"tick", sim_.tick_count()}});
    }
  }

  void send(Subscriber& sub, const std::string& kind, Json payload) {
    Envelope env;
    env.seq = ++sub.seq;
    env.t_sim = sim_.time();
    env.kind = kind;
    env.payload = std::move(payload);
    const std::string line = serialize(env);
    if (!transmit(env, cfg_.link, sub.rng)) {
      ++sub.dropped;
      return;
    }
    ++sub.sent;
    if (sub.deliver) sub.deliver(line);
  }

  void broadcast(const std::string& kind, const Json& payload) {
    for (auto& [id, sub] : subs_) send(sub, kind, payload);
  }

  void write_record(Json j) {
    j["rseq"] = ++record_seq_;
    record_ << j.dump() << '\n';
  }

  Simulation sim_;
  ServiceConfig cfg_;
  std::uint64_t seed_;
  std::uint64_t broadcast_every_ = 2;
  std::map<ClientId, Subscriber> subs_;
  std::mutex mu_;
  std::deque<Pending> pending_;
  std::vector<PathPoint> tail_;
  std::vector<TickRecord> log_;
  std::ofstream record_;
  std::uint64_t record_seq_ = 0;
  std::uint64_t rejected_ = 0;
};

// ---------------------------------------------------------------------------
// Network front end: newline-delimited JSON over TCP, or WebSocket text frames
// when the first bytes of a connection are an HTTP upgrade request.

class NetServer {
 public:
  explicit NetServer(Service& service) : service_(service) {}
  ~NetServer() { stop(); }
  NetServer(const NetServer&) = delete;
  NetServer& operator=(const NetServer&) = delete;

  /// Binds 127.0.0.1:port (0 picks a free port) and starts the I/O thread.
  int start(int port, const std::string& host = "127.0.0.1") {
    listen_fd_ = ::socket(AF_INET, SOCK_STREAM, 0);
    if (listen_fd_ < 0) throw Error(std::string("socket: ") + std::strerror(errno));
    sockaddr_in addr{};
    addr.sin_family = AF_INET;
    addr.sin_port = htons(static_cast<std::uint16_t>(port));
    if (::inet_pton(AF_INET, host.c_str(), &addr.sin_addr) != 1) throw ValidationError("bad listen address " + host);
    if (::bind(listen_fd_, reinterpret_cast<sockaddr*>(&addr), sizeof addr) != 0) {
      const std::string why = std::strerror(errno);
      ::close(listen_fd_);
      listen_fd_ = -1;
      throw Error("cannot bind port " + std::to_string(port) + ": " + why);
    }
    if (::listen(listen_fd_, 16) != 0) throw Error(std::string("listen: ") + std::strerror(errno));
    socklen_t len = sizeof addr;
    ::getsockname(listen_fd_, reinterpret_cast<sockaddr*>(&addr), &len);
    port_ = ntohs(addr.sin_port);
    set_nonblocking(listen_fd_);
    running_ = true;
    thread_ = std::thread([this] { loop(); });
    return port_;
  }

  void stop() {
    if (!running_.exchange(false)) return;
    if (thread_.joinable()) thread_.join();
    for (auto& [fd, c] : conns_) ::close(fd);
    conns_.clear();
    if (listen_fd_ >= 0) ::close(listen_fd_);
    listen_fd_ = -1;
  }

  int port() const { return port_; }
  std::size_t clients() const {
    std::lock_guard lock(out_mu_);
    return outboxes_.size();
  }

 private:
  enum class Proto { kUnknown, kLines, kWebSocket };
  struct Conn {
    ClientId id = 0;
    Proto proto = Proto::kUnknown;
    std::string in;
    std::string text;  // fragmented websocket message
  };

  static void set_nonblocking(int fd) { ::fcntl(fd, F_SETFL, ::fcntl(fd, F_GETFL, 0) | O_NONBLOCK); }

  void queue_out(ClientId id, std::string bytes) {
    std::lock_guard lock(out_mu_);
    auto it = outboxes_.find(id);
    if (it == outboxes_.end()) return;
    if (it->second.size() > kMaxBacklog) return;  // slow reader: drop rather than grow without bound
    it->second += bytes;
  }

  void register_client(int fd, Conn& c) {
    const ClientId id = c.id;
    const bool ws = c.proto == Proto::kWebSocket;
    {
      std::lock_guard lock(out_mu_);
      outboxes_[id];
      fds_[id] = fd;
    }
    service_.add_subscriber(id, [this, id, ws](const std::string& line) {
      queue_out(id, ws ? ws::encode({true, ws::kText, line}) : line + "\n");
    });
  }

  void drop(int fd) {
    auto it = conns_.find(fd);
    if (it == conns_.end()) return;
    if (it->second.proto != Proto::kUnknown) service_.remove_subscriber(it->second.id);
    {
      std::lock_guard lock(out_mu_);
      outboxes_.erase(it->second.id);
      fds_.erase(it->second.id);
    }
    ::close(fd);
    conns_.erase(it);
  }

  /// Returns false when the connection should be closed.
  bool consume(int fd, Conn& c) {
    if (c.proto == Proto::kUnknown) {
      const std::string_view get = "GET ";
      const std::size_t k = std::min(c.in.size(), get.size());
      const bool maybe_ws = c.in.compare(0, k, get.substr(0, k)) == 0;
      if (maybe_ws && c.in.size() < get.size()) return true;
      if (maybe_ws) {
        const auto end = c.in.find("\r\n\r\n");
        if (end == std::string::npos) return c.in.size() < 16384;
        try {
          const std::string resp = ws::handshake_response(c.in.substr(0, end + 4));
          write_all(fd, resp);
        } catch (const ValidationError&) {
          write_all(fd, "HTTP/1.1 400 Bad Request\r\nContent-Length: 0\r\n\r\n");
          return false;
        }
        c.in.erase(0, end + 4);
        c.proto = Proto::kWebSocket;
      } else {
        c.proto = Proto::kLines;
      }
      register_client(fd, c);
    }
    if (c.proto == Proto::kLines) {
      std::size_t nl;
      while ((nl = c.in.find('\n')) != std::string::npos) {
        std::string line = c.in.substr(0, nl);
        c.in.erase(0, nl + 1);
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (!line.empty()) service_.enqueue(c.id, std::move(line));
      }
      return c.in.size() < kMaxLine;
    }
    try {
      while (auto f = ws::decode(c.in)) {
        switch (f->opcode) {
          case ws::kText:
          case ws::kContinuation:
            c.text += f->payload;
            if (f->fin) {
              if (!c.text.empty()) service_.enqueue(c.id, std::move(c.text));
              c.text.clear();
            }
            break;
          case ws::kPing: queue_out(c.id, ws::encode({true, ws::kPong, f->payload})); break;
          case ws::kClose:
            write_all(fd, ws::encode({true, ws::kClose, f->payload.substr(0, 2)}));
            return false;
          default: break;
        }
      }
    } catch (const ValidationError&) {
      return false;
    }
    return true;
  }

  static void write_all(int fd, const std::string& s) {
    std::size_t off = 0;
    while (off < s.size()) {
      const ssize_t n = ::send(fd, s.data() + off, s.size() - off, MSG_NOSIGNAL);
      if (n > 0) {
        off += static_cast<std::size_t>(n);
      } else if (n < 0 && (errno == EAGAIN || errno == EWOULDBLOCK)) {
        pollfd p{fd, POLLOUT, 0};
        ::poll(&p, 1, 50);
      } else {
        return;
      }
    }
  }

  void flush() {
    std::vector<std::pair<int, std::string>> work;
    {
      std::lock_guard lock(out_mu_);
      for (auto& [id, box] : outboxes_) {
        if (box.empty()) continue;
        work.emplace_back(fds_[id], std::move(box));
        box.clear();
      }
    }
    for (auto& [fd, bytes] : work) {
      std::size_t off = 0;
      while (off < bytes.size()) {
        const ssize_t n = ::send(fd, bytes.data() + off, bytes.size() - off, MSG_NOSIGNAL);
        if (n <= 0) break;
        off += static_cast<std::size_t>(n);
      }
      if (off < bytes.size()) {
        // Keep the unsent remainder at the head of the outbox.
        std::lock_guard lock(out_mu_);
        for (auto& [id, fd2] : fds_)
          if (fd2 == fd) outboxes_[id].insert(0, bytes.substr(off));
      }
    }
  }

  void loop() {
    char buf[65536];
    while (running_) {
      std::vector<pollfd> fds{{listen_fd_, POLLIN, 0}};
      for (auto& [fd, c] : conns_) fds.push_back({fd, POLLIN, 0});
      ::poll(fds.data(), fds.size(), 5);
      if (fds[0].revents & POLLIN) {
        while (true) {
          const int cfd = ::accept(listen_fd_, nullptr, nullptr);
          if (cfd < 0) break;
          set_nonblocking(cfd);
          Conn c;
          c.id = ++next_id_;
          conns_[cfd] = std::move(c);
        }
      }
      std::vector<int> dead;
      for (std::size_t i = 1; i < fds.size(); ++i) {
        if (!(fds[i].revents & (POLLIN | POLLHUP | POLLERR))) continue;
        const int fd = fds[i].fd;
        auto& c = conns_[fd];
        const ssize_t n = ::recv(fd, buf, sizeof buf, 0);
        if (n <= 0) {
          if (n == 0 || (errno != EAGAIN && errno != EWOULDBLOCK)) dead.push_back(fd);
          continue;
        }
        c.in.append(buf, static_cast<std::size_t>(n));
        if (!consume(fd, c)) dead.push_back(fd);
      }
      flush();
      for (int fd : dead) drop(fd);
    }
    flush();
  }

  static constexpr std::size_t kMaxBacklog = 8u << 20;
  static constexpr std::size_t kMaxLine = 1u << 20;

  Service& service_;
  int listen_fd_ = -1;
  int port_ = 0;
  std::atomic<bool> running_{false};
  std::thread thread_;
  std::map<int, Conn> conns_;  // I/O thread only
  mutable std::mutex out_mu_;
  std::map<ClientId, std::string> outboxes_;
  std::map<ClientId, int> fds_;
  ClientId next_id_ = 0;
};

}  // namespace mobman
