#pragma once

#include <atomic>
#include <condition_variable>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <set>
#include <string>

#include "stars/session.hpp"

namespace stars {

struct ServerConfig {
    std::string host = "127.0.0.1";
    std::uint16_t port = 8787; ///< 0 picks a free port
    std::optional<std::filesystem::path> instance_dir;
    std::filesystem::path metrics_path = "session_metrics.csv";
    std::optional<std::filesystem::path> trace_dir; ///< one <id>.jsonl per session when set
    std::size_t max_sessions = 64;
};

/// Line-delimited JSON over TCP, with a WebSocket upgrade for connections
/// whose first line is an HTTP GET. Each session is serialized by its own
/// mutex; connections only share the session table and the metrics file.
class Server {
public:
    explicit Server(ServerConfig config);
    ~Server();
    Server(const Server&) = delete;
    Server& operator=(const Server&) = delete;

    /// Binds and listens; returns the bound port. Throws Internal on failure.
    std::uint16_t start();
    /// Accept loop; returns after stop(), once every connection has closed
    /// and every live session's metrics row has been written.
    void run();
    /// Safe from any thread; only writes to a pipe.
    void stop();

    /// Transport-independent dispatch. `bound` is the connection's current
    /// session id and is updated by create_session and by any message that
    /// names a session explicitly.
    ordered_json handle(const json& msg, std::string& bound);
    ordered_json handle_line(const std::string& line, std::string& bound);

    std::size_t session_count() const;
    const ServerConfig& config() const { return config_; }

private:
    struct Slot {
        std::mutex mutex;
        std::string id;
        std::unique_ptr<ShieldedRun> run;
        std::unique_ptr<std::ofstream> trace;
        std::uint64_t last_used = 0;
    };

    ordered_json create_session(const json& msg, std::string& bound);
    std::shared_ptr<Slot> find(const std::string& id);
    void evict_if_full();
    void write_metrics(const std::string& id, const ShieldedRun& run);
    void serve_connection(int fd);
    void serve_lines(int fd, std::string buffered);
    void serve_websocket(int fd, std::string buffered);

    ServerConfig config_;
    int listen_fd_ = -1;
    int wake_pipe_[2] = {-1, -1};
    std::atomic<bool> stopping_{false};

    mutable std::mutex table_mutex_;
    std::map<std::string, std::shared_ptr<Slot>> sessions_;
    std::uint64_t clock_ = 0;
    std::uint64_t next_id_ = 1;

    std::mutex metrics_mutex_;

    std::mutex conn_mutex_;
    std::condition_variable conn_cv_;
    std::set<int> connections_;
};

/// Blocking line-JSON client for scripts and tests.
class LineClient {
public:
    LineClient(const std::string& host, std::uint16_t port);
    ~LineClient();
    LineClient(const LineClient&) = delete;
    LineClient& operator=(const LineClient&) = delete;

    /// Sends one message and waits for its reply.
    json request(const json& msg);
    void send_line(const std::string& line);
    std::string read_line();

private:
    int fd_ = -1;
    std::string buffer_;
};

/// Sec-WebSocket-Accept value for a client key.
std::string websocket_accept_key(const std::string& client_key);

} // namespace stars
