#include "bionet/transport.hpp"

#include <arpa/inet.h>
#include <fcntl.h>
#include <netdb.h>
#include <netinet/in.h>
#include <netinet/tcp.h>
#include <poll.h>
#include <sys/socket.h>
#include <unistd.h>

#include <cerrno>
#include <cstring>

namespace bionet::net {
namespace {

using SteadyClock = std::chrono::steady_clock;

class LoopbackChannel : public Channel {
 public:
  LoopbackChannel(LoopbackNetwork& net, NodeId node) : net_(net), node_(node) {}
  Bytes call(ByteView frame, Millis timeout) override { return net_.deliver(node_, frame, timeout); }

 private:
  LoopbackNetwork& net_;
  NodeId node_;
};

int remaining_ms(SteadyClock::time_point deadline) {
  auto left = std::chrono::duration_cast<Millis>(deadline - SteadyClock::now()).count();
  return left < 0 ? 0 : static_cast<int>(left);
}

sockaddr_in resolve(const Address& addr) {
  sockaddr_in sa{};
  sa.sin_family = AF_INET;
  sa.sin_port = htons(addr.port);
  if (inet_pton(AF_INET, addr.host.c_str(), &sa.sin_addr) == 1) return sa;
  addrinfo hints{};
  hints.ai_family = AF_INET;
  hints.ai_socktype = SOCK_STREAM;
  addrinfo* res = nullptr;
  if (getaddrinfo(addr.host.c_str(), nullptr, &hints, &res) != 0 || res == nullptr) {
    throw Error(ErrorCode::Transport, "cannot resolve " + addr.host);
  }
  sa.sin_addr = reinterpret_cast<sockaddr_in*>(res->ai_addr)->sin_addr;
  freeaddrinfo(res);
  return sa;
}

bool write_all(int fd, ByteView data) {
  std::size_t off = 0;
  while (off < data.size()) {
    ssize_t n = ::send(fd, data.data() + off, data.size() - off, MSG_NOSIGNAL);
    if (n < 0) {
      if (errno == EINTR) continue;
      if (errno == EAGAIN || errno == EWOULDBLOCK) {
        pollfd p{fd, POLLOUT, 0};
        ::poll(&p, 1, 1000);
        continue;
      }
      return false;
    }
    off += static_cast<std::size_t>(n);
  }
  return true;
}

}  // namespace

// ---- loopback ---------------------------------------------------------------

void LoopbackNetwork::attach(NodeId node, FrameHandler& handler) {
  std::lock_guard lock(mu_);
  nodes_[node].handler = &handler;
}

void LoopbackNetwork::detach(NodeId node) {
  std::lock_guard lock(mu_);
  nodes_.erase(node);
}

void LoopbackNetwork::set_reachable(NodeId node, bool reachable) {
  std::lock_guard lock(mu_);
  nodes_[node].reachable = reachable;
}

void LoopbackNetwork::set_latency(NodeId node, Millis latency) {
  std::lock_guard lock(mu_);
  nodes_[node].latency = latency;
}

std::shared_ptr<Channel> LoopbackNetwork::connect(NodeId node) {
  return std::make_shared<LoopbackChannel>(*this, node);
}

Bytes LoopbackNetwork::deliver(NodeId node, ByteView frame, Millis timeout) {
  FrameHandler* handler = nullptr;
  {
    std::lock_guard lock(mu_);
    auto it = nodes_.find(node);
    if (it == nodes_.end() || it->second.handler == nullptr || !it->second.reachable) {
      throw Error(ErrorCode::Transport, "node " + std::to_string(node) + " unreachable");
    }
    if (it->second.latency > timeout) throw Error(ErrorCode::Timeout, "node " + std::to_string(node));
    handler = it->second.handler;
  }
  ++delivered_;
  auto resp = handler->handle(frame);
  if (!resp) throw Error(ErrorCode::Transport, "node " + std::to_string(node) + " dropped the request");
  return std::move(*resp);
}

// ---- tcp client -------------------------------------------------------------

Address Address::parse(std::string_view text) {
  auto colon = text.rfind(':');
  if (colon == std::string_view::npos) throw Error(ErrorCode::ConfigInvalid, "address needs host:port");
  Address a;
  a.host = std::string(text.substr(0, colon));
  int port = 0;
  try {
    port = std::stoi(std::string(text.substr(colon + 1)));
  } catch (const std::exception&) {
    throw Error(ErrorCode::ConfigInvalid, "bad port in " + std::string(text));
  }
  if (port < 0 || port > 65535) throw Error(ErrorCode::ConfigInvalid, "bad port in " + std::string(text));
  a.port = static_cast<std::uint16_t>(port);
  return a;
}

TcpChannel::~TcpChannel() {
  std::lock_guard lock(mu_);
  close_locked();
}

void TcpChannel::close_locked() {
  if (fd_ >= 0) ::close(fd_);
  fd_ = -1;
}

Bytes TcpChannel::call(ByteView frame, Millis timeout) {
  std::lock_guard lock(mu_);
  const auto deadline = SteadyClock::now() + timeout;
  auto fail = [&](ErrorCode code, const std::string& what) -> Error {
    close_locked();
    return Error(code, addr_.str() + ": " + what);
  };

  if (fd_ < 0) {
    auto sa = resolve(addr_);
    fd_ = ::socket(AF_INET, SOCK_STREAM | SOCK_CLOEXEC, 0);
    if (fd_ < 0) throw fail(ErrorCode::Transport, std::strerror(errno));
    ::fcntl(fd_, F_SETFL, ::fcntl(fd_, F_GETFL) | O_NONBLOCK);
    int one = 1;
    ::setsockopt(fd_, IPPROTO_TCP, TCP_NODELAY, &one, sizeof one);
    if (::connect(fd_, reinterpret_cast<sockaddr*>(&sa), sizeof sa) < 0) {
      if (errno != EINPROGRESS) throw fail(ErrorCode::Transport, std::strerror(errno));
      pollfd p{fd_, POLLOUT, 0};
      int rc = ::poll(&p, 1, remaining_ms(deadline));
      if (rc == 0) throw fail(ErrorCode::Timeout, "connect timed out");
      int err = 0;
      socklen_t len = sizeof err;
      ::getsockopt(fd_, SOL_SOCKET, SO_ERROR, &err, &len);
      if (rc < 0 || err != 0) throw fail(ErrorCode::Transport, std::strerror(err != 0 ? err : errno));
    }
  }

  if (!write_all(fd_, frame)) throw fail(ErrorCode::Transport, "send failed");

  Bytes buf;
  std::uint8_t chunk[16384];
  for (;;) {
    auto res = wire::decode_frame(buf);
    if (auto* d = std::get_if<wire::DecodedFrame>(&res)) {
      buf.resize(d->consumed);
      return buf;
    }
    pollfd p{fd_, POLLIN, 0};
    int rc = ::poll(&p, 1, remaining_ms(deadline));
    if (rc == 0) throw fail(ErrorCode::Timeout, "no response");
    if (rc < 0) {
      if (errno == EINTR) continue;
      throw fail(ErrorCode::Transport, std::strerror(errno));
    }
    ssize_t n = ::recv(fd_, chunk, sizeof chunk, 0);
    if (n == 0) throw fail(ErrorCode::Transport, "connection closed by peer");
    if (n < 0) {
      if (errno == EINTR || errno == EAGAIN) continue;
      throw fail(ErrorCode::Transport, std::strerror(errno));
    }
    buf.insert(buf.end(), chunk, chunk + n);
  }
}

void TcpNetwork::add_route(NodeId node, Address addr) {
  std::lock_guard lock(mu_);
  routes_[node] = std::move(addr);
  channels_.erase(node);
}

std::shared_ptr<Channel> TcpNetwork::connect(NodeId node) {
  std::lock_guard lock(mu_);
  if (auto it = channels_.find(node); it != channels_.end()) return it->second;
  auto route = routes_.find(node);
  if (route == routes_.end()) throw Error(ErrorCode::Transport, "no address for node " + std::to_string(node));
  auto ch = std::make_shared<TcpChannel>(route->second);
  channels_[node] = ch;
  return ch;
}

// ---- tcp server -------------------------------------------------------------

TcpServer::TcpServer(FrameHandler& handler, Address bind) : handler_(handler), bind_(std::move(bind)) {}

TcpServer::~TcpServer() { stop(); }

void TcpServer::start() {
  auto sa = resolve(bind_);
  listen_fd_ = ::socket(AF_INET, SOCK_STREAM | SOCK_CLOEXEC, 0);
  if (listen_fd_ < 0) throw Error(ErrorCode::Transport, std::strerror(errno));
  int one = 1;
  ::setsockopt(listen_fd_, SOL_SOCKET, SO_REUSEADDR, &one, sizeof one);
  if (::bind(listen_fd_, reinterpret_cast<sockaddr*>(&sa), sizeof sa) < 0 || ::listen(listen_fd_, 64) < 0) {
    std::string err = std::strerror(errno);
    ::close(listen_fd_);
    listen_fd_ = -1;
    throw Error(ErrorCode::Transport, "cannot listen on " + bind_.str() + ": " + err);
  }
  sockaddr_in bound{};
  socklen_t len = sizeof bound;
  ::getsockname(listen_fd_, reinterpret_cast<sockaddr*>(&bound), &len);
  port_ = ntohs(bound.sin_port);
  running_ = true;
  acceptor_ = std::thread([this] { accept_loop(); });
}

void TcpServer::stop() {
  if (!running_.exchange(false)) return;
  if (acceptor_.joinable()) acceptor_.join();
  if (listen_fd_ >= 0) ::close(listen_fd_);
  listen_fd_ = -1;
  std::list<Connection> conns;
  {
    std::lock_guard lock(mu_);
    conns.swap(connections_);
  }
  for (auto& c : conns) {
    ::shutdown(c.fd, SHUT_RDWR);
    if (c.worker.joinable()) c.worker.join();
    ::close(c.fd);
  }
}

void TcpServer::reap_locked() {
  for (auto it = connections_.begin(); it != connections_.end();) {
    if (it->done->load()) {
      it->worker.join();
      ::close(it->fd);
      it = connections_.erase(it);
    } else {
      ++it;
    }
  }
}

void TcpServer::accept_loop() {
  while (running_) {
    pollfd p{listen_fd_, POLLIN, 0};
    int rc = ::poll(&p, 1, 100);
    if (rc <= 0) continue;
    int fd = ::accept4(listen_fd_, nullptr, nullptr, SOCK_CLOEXEC);
    if (fd < 0) continue;
    int one = 1;
    ::setsockopt(fd, IPPROTO_TCP, TCP_NODELAY, &one, sizeof one);
    std::lock_guard lock(mu_);
    reap_locked();
    auto& c = connections_.emplace_back();
    c.fd = fd;
    c.done = std::make_unique<std::atomic<bool>>(false);
    c.worker = std::thread([this, fd, done = c.done.get()] { serve(fd, *done); });
  }
}

void TcpServer::serve(int fd, std::atomic<bool>& done) {
  Bytes buf;
  std::uint8_t chunk[16384];
  bool open = true;
  while (open && running_) {
    pollfd p{fd, POLLIN, 0};
    int rc = ::poll(&p, 1, 100);
    if (rc == 0) continue;
    if (rc < 0 && errno == EINTR) continue;
    ssize_t n = rc > 0 ? ::recv(fd, chunk, sizeof chunk, 0) : -1;
    if (n <= 0) break;
    buf.insert(buf.end(), chunk, chunk + n);
    for (;;) {
      std::variant<wire::DecodedFrame, wire::NeedMoreData> res;
      try {
        res = wire::decode_frame(buf);
      } catch (const Error&) {
        open = false;  // unframeable stream; nothing sensible to answer
        break;
      }
      auto* d = std::get_if<wire::DecodedFrame>(&res);
      if (d == nullptr) break;
      const std::size_t consumed = d->consumed;
      auto resp = handler_.handle(ByteView(buf.data(), consumed));
      buf.erase(buf.begin(), buf.begin() + static_cast<std::ptrdiff_t>(consumed));
      if (!resp || !write_all(fd, *resp)) {
        open = false;
        break;
      }
    }
  }
  ::shutdown(fd, SHUT_RDWR);
  done = true;
}

}  // namespace bionet::net
