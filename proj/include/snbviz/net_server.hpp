#pragma once

#include <cstdint>
#include <memory>
#include <string>
#include <utility>

#include "snbviz/server_core.hpp"

namespace snbviz {

/// Splits "host:port" (or "[v6]:port", or ":port" for all interfaces). Throws std::invalid_argument.
std::pair<std::string, std::uint16_t> split_host_port(const std::string& address);

/// The long-running service: TCP (length-framed) and WebSocket listeners in front of a
/// ServerCore, periodic watch polling, and persistence under config.data_dir. Everything runs
/// on one I/O thread, so per-document execution is serial.
class NetServer {
public:
    explicit NetServer(ServerConfig config);
    ~NetServer();
    NetServer(const NetServer&) = delete;
    NetServer& operator=(const NetServer&) = delete;

    /// Recovers persisted documents and binds both listeners. Port 0 picks a free port.
    void start();

    /// Runs the event loop until stop() or abort(). Blocks.
    void run();

    /// Checkpoints every document and stops. Safe from any thread.
    void stop();

    /// Stops without a final checkpoint, as a crash would. Safe from any thread.
    void abort();

    /// Checkpoints every changed document on the I/O thread and waits for it.
    void checkpoint_now();

    /// SIGINT/SIGTERM trigger stop(). Call before run().
    void stop_on_signals();

    std::uint16_t tcp_port() const;
    std::uint16_t ws_port() const;

    struct Impl;

private:
    std::shared_ptr<Impl> impl_;
};

} // namespace snbviz
