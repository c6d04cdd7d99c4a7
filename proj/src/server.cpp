#include "stars/server.hpp"

#include <arpa/inet.h>
#include <netdb.h>
#include <netinet/in.h>
#include <netinet/tcp.h>
#include <openssl/evp.h>
#include <openssl/sha.h>
#include <poll.h>
#include <sys/socket.h>
#include <unistd.h>

#include <algorithm>
#include <cerrno>
#include <cstring>
#include <thread>

#include "stars/errors.hpp"

namespace stars {

namespace {

/// Longest accepted message line or WebSocket message.
constexpr std::size_t kMaxMessageBytes = 1 << 20;

ordered_json error_reply(ErrorCode code, const std::string& msg) {
    ordered_json j;
    j["type"] = "error";
    j["code"] = std::string(to_string(code));
    j["msg"] = msg;
    return j;
}

bool send_all(int fd, const char* data, std::size_t n) {
    while (n > 0) {
        const ssize_t w = ::send(fd, data, n, MSG_NOSIGNAL);
        if (w < 0) {
            if (errno == EINTR) continue;
            return false;
        }
        data += w;
        n -= static_cast<std::size_t>(w);
    }
    return true;
}

bool send_all(int fd, const std::string& s) { return send_all(fd, s.data(), s.size()); }

/// Appends whatever is available; false on EOF or error.
bool read_some(int fd, std::string& buf) {
    char chunk[8192];
    for (;;) {
        const ssize_t r = ::recv(fd, chunk, sizeof chunk, 0);
        if (r < 0 && errno == EINTR) continue;
        if (r <= 0) return false;
        buf.append(chunk, static_cast<std::size_t>(r));
        return true;
    }
}

/// Reads until `buf` holds at least n bytes.
bool read_exact(int fd, std::string& buf, std::size_t n) {
    while (buf.size() < n)
        if (!read_some(fd, buf)) return false;
    return true;
}

std::string lower(std::string s) {
    std::transform(s.begin(), s.end(), s.begin(), [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
    return s;
}

std::string trim(const std::string& s) {
    const auto b = s.find_first_not_of(" \t\r");
    if (b == std::string::npos) return "";
    const auto e = s.find_last_not_of(" \t\r");
    return s.substr(b, e - b + 1);
}

std::string ws_frame(std::uint8_t opcode, const std::string& payload) {
    std::string f;
    f.push_back(static_cast<char>(0x80 | opcode));
    const std::size_t n = payload.size();
    if (n < 126) {
        f.push_back(static_cast<char>(n));
    } else if (n <= 0xFFFF) {
        f.push_back(static_cast<char>(126));
        f.push_back(static_cast<char>((n >> 8) & 0xFF));
        f.push_back(static_cast<char>(n & 0xFF));
    } else {
        f.push_back(static_cast<char>(127));
        for (int i = 7; i >= 0; --i) f.push_back(static_cast<char>((static_cast<std::uint64_t>(n) >> (8 * i)) & 0xFF));
    }
    return f + payload;
}

} // namespace

std::string websocket_accept_key(const std::string& client_key) {
    const std::string material = client_key + "258EAFA5-E914-47DA-95CA-C5AB0DC85B11";
    unsigned char digest[SHA_DIGEST_LENGTH];
    SHA1(reinterpret_cast<const unsigned char*>(material.data()), material.size(), digest);
    unsigned char out[4 * ((SHA_DIGEST_LENGTH + 2) / 3) + 1];
    const int len = EVP_EncodeBlock(out, digest, SHA_DIGEST_LENGTH);
    return std::string(reinterpret_cast<const char*>(out), static_cast<std::size_t>(len));
}

Server::Server(ServerConfig config) : config_(std::move(config)) {
    if (config_.max_sessions == 0) throw Error(ErrorCode::PreconditionViolation, "max_sessions must be positive");
}

Server::~Server() {
    if (listen_fd_ >= 0) ::close(listen_fd_);
    for (int fd : wake_pipe_)
        if (fd >= 0) ::close(fd);
}

std::uint16_t Server::start() {
    if (::pipe(wake_pipe_) != 0) throw Error(ErrorCode::Internal, std::string("pipe: ") + std::strerror(errno));
    listen_fd_ = ::socket(AF_INET, SOCK_STREAM, 0);
    if (listen_fd_ < 0) throw Error(ErrorCode::Internal, std::string("socket: ") + std::strerror(errno));
    int one = 1;
    ::setsockopt(listen_fd_, SOL_SOCKET, SO_REUSEADDR, &one, sizeof one);
    sockaddr_in addr{};
    addr.sin_family = AF_INET;
    addr.sin_port = htons(config_.port);
    if (::inet_pton(AF_INET, config_.host.c_str(), &addr.sin_addr) != 1)
        throw Error(ErrorCode::Internal, "invalid listen address '" + config_.host + "'");
    if (::bind(listen_fd_, reinterpret_cast<sockaddr*>(&addr), sizeof addr) != 0)
        throw Error(ErrorCode::Internal, "bind " + config_.host + ":" + std::to_string(config_.port) + ": " +
                                             std::strerror(errno));
    if (::listen(listen_fd_, 64) != 0) throw Error(ErrorCode::Internal, std::string("listen: ") + std::strerror(errno));
    socklen_t len = sizeof addr;
    ::getsockname(listen_fd_, reinterpret_cast<sockaddr*>(&addr), &len);
    return ntohs(addr.sin_port);
}

void Server::stop() {
    stopping_ = true;
    if (wake_pipe_[1] >= 0) {
        const char b = 1;
        [[maybe_unused]] auto r = ::write(wake_pipe_[1], &b, 1);
    }
}

void Server::run() {
    if (listen_fd_ < 0) throw Error(ErrorCode::PreconditionViolation, "start() must precede run()");
    while (!stopping_) {
        pollfd fds[2] = {{listen_fd_, POLLIN, 0}, {wake_pipe_[0], POLLIN, 0}};
        if (::poll(fds, 2, -1) < 0) {
            if (errno == EINTR) continue;
            break;
        }
        if (fds[1].revents) break;
        if (!(fds[0].revents & POLLIN)) continue;
        const int fd = ::accept(listen_fd_, nullptr, nullptr);
        if (fd < 0) continue;
        int one = 1;
        ::setsockopt(fd, IPPROTO_TCP, TCP_NODELAY, &one, sizeof one);
        {
            std::lock_guard lk(conn_mutex_);
            connections_.insert(fd);
        }
        std::thread([this, fd] {
            try {
                serve_connection(fd);
            } catch (...) {
                // A broken connection never takes the server down.
            }
            std::lock_guard lk(conn_mutex_);
            connections_.erase(fd);
            ::close(fd);
            conn_cv_.notify_all();
        }).detach();
    }
    ::close(listen_fd_);
    listen_fd_ = -1;
    {
        std::unique_lock lk(conn_mutex_);
        for (int fd : connections_) ::shutdown(fd, SHUT_RDWR);
        conn_cv_.wait(lk, [&] { return connections_.empty(); });
    }
    std::map<std::string, std::shared_ptr<Slot>> remaining;
    {
        std::lock_guard lk(table_mutex_);
        remaining.swap(sessions_);
    }
    for (auto& [id, slot] : remaining) {
        std::lock_guard lk(slot->mutex);
        write_metrics(id, *slot->run);
    }
}

std::size_t Server::session_count() const {
    std::lock_guard lk(table_mutex_);
    return sessions_.size();
}

void Server::write_metrics(const std::string& id, const ShieldedRun& run) {
    std::lock_guard lk(metrics_mutex_);
    const bool fresh = !std::filesystem::exists(config_.metrics_path) || std::filesystem::file_size(config_.metrics_path) == 0;
    std::ofstream out(config_.metrics_path, std::ios::app);
    if (fresh) out << kSessionMetricsHeader << '\n';
    out << session_metrics_row(id, run.metrics()) << '\n';
    out.flush();
}

void Server::evict_if_full() {
    std::shared_ptr<Slot> victim;
    {
        std::lock_guard lk(table_mutex_);
        if (sessions_.size() < config_.max_sessions) return;
        for (auto& [id, s] : sessions_)
            if (!victim || s->last_used < victim->last_used) victim = s;
        sessions_.erase(victim->id);
    }
    // Waits out a command in flight; nobody can find the slot any more.
    std::lock_guard lk(victim->mutex);
    write_metrics(victim->id, *victim->run);
}

std::shared_ptr<Server::Slot> Server::find(const std::string& id) {
    std::lock_guard lk(table_mutex_);
    auto it = sessions_.find(id);
    if (it == sessions_.end()) return nullptr;
    it->second->last_used = ++clock_;
    return it->second;
}

ordered_json Server::create_session(const json& msg, std::string& bound) {
    ShieldParams p;
    p.gamma = msg.value("gamma", p.gamma);
    p.theta = msg.value("theta", p.theta);
    const std::uint64_t seed = msg.value("seed", std::uint64_t{1});
    auto slot = std::make_shared<Slot>();
    slot->run = std::make_unique<ShieldedRun>(resolve_instance(msg, config_.instance_dir), p, seed);
    evict_if_full();
    {
        std::lock_guard lk(table_mutex_);
        slot->id = "s" + std::to_string(next_id_++);
        slot->last_used = ++clock_;
        if (config_.trace_dir) {
            std::filesystem::create_directories(*config_.trace_dir);
            slot->trace = std::make_unique<std::ofstream>(*config_.trace_dir / (slot->id + ".jsonl"));
            slot->run->set_trace(slot->trace.get());
        }
        sessions_[slot->id] = slot;
    }
    bound = slot->id;
    ordered_json r;
    r["type"] = "session_created";
    r["id"] = slot->id;
    r["seed"] = seed;
    std::lock_guard lk(slot->mutex);
    auto snap = slot->run->snapshot();
    snap["session"] = slot->id;
    r["snapshot"] = std::move(snap);
    return r;
}

ordered_json Server::handle(const json& msg, std::string& bound) {
    try {
        if (!msg.is_object()) throw Error(ErrorCode::ProtocolError, "message must be a JSON object");
        if (msg.value("type", "") == "create_session") return create_session(msg, bound);
        std::string id = bound;
        if (auto it = msg.find("session"); it != msg.end()) {
            if (!it->is_string()) throw Error(ErrorCode::ProtocolError, "session must be a string");
            id = it->get<std::string>();
        }
        if (id.empty()) throw Error(ErrorCode::UnknownSession, "no session on this connection; send create_session");
        auto slot = find(id);
        if (!slot) throw Error(ErrorCode::UnknownSession, "unknown or evicted session '" + id + "'");
        bound = id;
        std::lock_guard lk(slot->mutex);
        auto reply = slot->run->handle(msg);
        if (slot->trace) slot->trace->flush();
        reply["session"] = id;
        return reply;
    } catch (const Error& e) {
        return error_reply(e.code(), e.what());
    } catch (const json::exception& e) {
        return error_reply(ErrorCode::ProtocolError, e.what());
    }
}

ordered_json Server::handle_line(const std::string& line, std::string& bound) {
    json msg;
    try {
        msg = json::parse(line);
    } catch (const json::exception& e) {
        return error_reply(ErrorCode::ProtocolError, std::string("malformed JSON: ") + e.what());
    }
    return handle(msg, bound);
}

void Server::serve_connection(int fd) {
    std::string buf;
    while (buf.find('\n') == std::string::npos) {
        if (buf.size() > kMaxMessageBytes || !read_some(fd, buf)) return;
    }
    if (buf.rfind("GET ", 0) == 0)
        serve_websocket(fd, std::move(buf));
    else
        serve_lines(fd, std::move(buf));
}

void Server::serve_lines(int fd, std::string buf) {
    std::string bound;
    for (;;) {
        std::size_t nl;
        while ((nl = buf.find('\n')) == std::string::npos) {
            if (buf.size() > kMaxMessageBytes) {
                send_all(fd, error_reply(ErrorCode::ProtocolError, "message too long").dump() + "\n");
                return;
            }
            if (!read_some(fd, buf)) return;
        }
        std::string line = buf.substr(0, nl);
        buf.erase(0, nl + 1);
        if (trim(line).empty()) continue;
        if (!send_all(fd, handle_line(line, bound).dump() + "\n")) return;
    }
}

void Server::serve_websocket(int fd, std::string buf) {
    std::size_t end;
    while ((end = buf.find("\r\n\r\n")) == std::string::npos) {
        if (buf.size() > 16384 || !read_some(fd, buf)) return;
    }
    std::string key;
    bool upgrade = false;
    std::size_t pos = buf.find("\r\n") + 2;
    while (pos < end) {
        const std::size_t eol = buf.find("\r\n", pos);
        const std::string header = buf.substr(pos, eol - pos);
        pos = eol + 2;
        const auto colon = header.find(':');
        if (colon == std::string::npos) continue;
        const std::string name = lower(trim(header.substr(0, colon)));
        const std::string value = trim(header.substr(colon + 1));
        if (name == "sec-websocket-key") key = value;
        if (name == "upgrade" && lower(value) == "websocket") upgrade = true;
    }
    buf.erase(0, end + 4);
    if (!upgrade || key.empty()) {
        send_all(fd, "HTTP/1.1 400 Bad Request\r\nContent-Length: 0\r\nConnection: close\r\n\r\n");
        return;
    }
    send_all(fd, "HTTP/1.1 101 Switching Protocols\r\nUpgrade: websocket\r\nConnection: Upgrade\r\n"
                 "Sec-WebSocket-Accept: " + websocket_accept_key(key) + "\r\n\r\n");

    std::string bound, message;
    for (;;) {
        if (!read_exact(fd, buf, 2)) return;
        const auto b0 = static_cast<std::uint8_t>(buf[0]), b1 = static_cast<std::uint8_t>(buf[1]);
        const bool fin = b0 & 0x80;
        const std::uint8_t opcode = b0 & 0x0F;
        const bool masked = b1 & 0x80;
        std::uint64_t len = b1 & 0x7F;
        std::size_t header = 2;
        if (len == 126) {
            if (!read_exact(fd, buf, 4)) return;
            len = (static_cast<std::uint64_t>(static_cast<std::uint8_t>(buf[2])) << 8) | static_cast<std::uint8_t>(buf[3]);
            header = 4;
        } else if (len == 127) {
            if (!read_exact(fd, buf, 10)) return;
            len = 0;
            for (int i = 0; i < 8; ++i) len = (len << 8) | static_cast<std::uint8_t>(buf[2 + static_cast<std::size_t>(i)]);
            header = 10;
        }
        if (len > kMaxMessageBytes || message.size() + len > kMaxMessageBytes) {
            send_all(fd, ws_frame(0x8, std::string("\x03\xf1", 2)));
            return;
        }
        const std::size_t mask_at = header;
        if (masked) header += 4;
        if (!read_exact(fd, buf, header + len)) return;
        std::string payload = buf.substr(header, len);
        if (masked)
            for (std::size_t i = 0; i < payload.size(); ++i) payload[i] = static_cast<char>(payload[i] ^ buf[mask_at + i % 4]);
        buf.erase(0, header + len);

        switch (opcode) {
        case 0x0: // continuation
        case 0x1: // text
        case 0x2: // binary, treated as text
            message += payload;
            if (fin) {
                auto reply = trim(message).empty() ? ordered_json() : handle_line(message, bound);
                message.clear();
                if (!reply.is_null() && !send_all(fd, ws_frame(0x1, reply.dump()))) return;
            }
            break;
        case 0x8:
            send_all(fd, ws_frame(0x8, payload.substr(0, 2)));
            return;
        case 0x9:
            if (!send_all(fd, ws_frame(0xA, payload))) return;
            break;
        default:
            break;
        }
    }
}

LineClient::LineClient(const std::string& host, std::uint16_t port) {
    addrinfo hints{};
    hints.ai_family = AF_INET;
    hints.ai_socktype = SOCK_STREAM;
    addrinfo* res = nullptr;
    if (::getaddrinfo(host.c_str(), std::to_string(port).c_str(), &hints, &res) != 0 || !res)
        throw Error(ErrorCode::Internal, "cannot resolve " + host);
    fd_ = ::socket(res->ai_family, res->ai_socktype, res->ai_protocol);
    const int rc = fd_ < 0 ? -1 : ::connect(fd_, res->ai_addr, res->ai_addrlen);
    ::freeaddrinfo(res);
    if (rc != 0) {
        if (fd_ >= 0) ::close(fd_);
        throw Error(ErrorCode::Internal, "cannot connect to " + host + ":" + std::to_string(port));
    }
    int one = 1;
    ::setsockopt(fd_, IPPROTO_TCP, TCP_NODELAY, &one, sizeof one);
}

LineClient::~LineClient() {
    if (fd_ >= 0) ::close(fd_);
}

void LineClient::send_line(const std::string& line) {
    if (!send_all(fd_, line + "\n")) throw Error(ErrorCode::Internal, "connection lost while sending");
}

std::string LineClient::read_line() {
    std::size_t nl;
    while ((nl = buffer_.find('\n')) == std::string::npos)
        if (!read_some(fd_, buffer_)) throw Error(ErrorCode::Internal, "connection closed by server");
    std::string line = buffer_.substr(0, nl);
    buffer_.erase(0, nl + 1);
    return line;
}

json LineClient::request(const json& msg) {
    send_line(msg.dump());
    return json::parse(read_line());
}

} // namespace stars
