#include "snbviz/net_server.hpp"

#include <array>
#include <chrono>
#include <deque>
#include <future>
#include <map>
#include <stdexcept>

#include <boost/asio.hpp>
#include <boost/beast/core.hpp>
#include <boost/beast/websocket.hpp>
#include <spdlog/spdlog.h>

#include "snbviz/store.hpp"

namespace snbviz {

namespace asio = boost::asio;
namespace beast = boost::beast;
namespace websocket = beast::websocket;
using tcp = asio::ip::tcp;

std::pair<std::string, std::uint16_t> split_host_port(const std::string& address) {
    auto colon = address.rfind(':');
    if (colon == std::string::npos) throw std::invalid_argument("address '" + address + "' lacks ':port'");
    std::string host = address.substr(0, colon);
    if (host.size() >= 2 && host.front() == '[' && host.back() == ']') host = host.substr(1, host.size() - 2);
    if (host.empty()) host = "0.0.0.0";
    const std::string port_text = address.substr(colon + 1);
    std::size_t used = 0;
    unsigned long port = 0;
    try {
        port = std::stoul(port_text, &used);
    } catch (const std::exception&) {
        used = 0;
    }
    if (used == 0 || used != port_text.size() || port > 65535)
        throw std::invalid_argument("address '" + address + "' has a bad port");
    return {host, static_cast<std::uint16_t>(port)};
}

namespace {

TimeMs wall_clock_ms() {
    using namespace std::chrono;
    return duration_cast<milliseconds>(system_clock::now().time_since_epoch()).count();
}

} // namespace

class Peer : public std::enable_shared_from_this<Peer> {
public:
    virtual ~Peer() = default;
    virtual void start() = 0;
    /// Queues one JSON payload.
    virtual void send(std::shared_ptr<const std::string> payload) = 0;
    /// Closes once queued writes drain.
    virtual void close_after_flush() = 0;
    virtual void close_now() = 0;

    ClientId id = 0;
};

struct NetServer::Impl : std::enable_shared_from_this<NetServer::Impl> {
    explicit Impl(ServerConfig cfg)
        : core(cfg), store(cfg.data_dir), tcp_acceptor(ioc), ws_acceptor(ioc), tick_timer(ioc),
          checkpoint_timer(ioc), signals(ioc) {}

    asio::io_context ioc;
    ServerCore core;
    Store store;
    tcp::acceptor tcp_acceptor;
    tcp::acceptor ws_acceptor;
    asio::steady_timer tick_timer;
    asio::steady_timer checkpoint_timer;
    asio::signal_set signals;
    std::map<ClientId, std::shared_ptr<Peer>> peers;
    std::map<std::string, Version> checkpointed;
    bool stopping = false;

    const ServerConfig& config() const { return core.config(); }

    void open_acceptor(tcp::acceptor& acceptor, const std::string& address) {
        auto [host, port] = split_host_port(address);
        tcp::endpoint endpoint(asio::ip::make_address(host), port);
        acceptor.open(endpoint.protocol());
        acceptor.set_option(asio::socket_base::reuse_address(true));
        acceptor.bind(endpoint);
        acceptor.listen();
    }

    void recover() {
        std::error_code ec;
        std::filesystem::create_directories(config().data_dir, ec);
        if (ec) throw std::runtime_error("cannot create data dir " + config().data_dir.string() + ": " + ec.message());
        for (auto& [name, doc] : store.recover()) {
            spdlog::info("recovered document '{}' at version {}", name, doc.version());
            checkpointed[name] = doc.version();
            core.add_document(std::move(doc));
        }
    }

    void accept_tcp();
    void accept_ws();

    void attach(const std::shared_ptr<Peer>& peer) {
        peer->id = core.connect();
        peers[peer->id] = peer;
        spdlog::debug("client {} connected", peer->id);
    }

    void detach(ClientId id) {
        if (peers.erase(id) > 0) {
            core.disconnect(id);
            spdlog::debug("client {} disconnected", id);
        }
    }

    void on_message(ClientId from, const Message& m) {
        if (stopping) return;
        dispatch(core.handle_message(from, m, wall_clock_ms()));
    }

    void on_protocol_error(ClientId from, const std::string& detail) {
        spdlog::warn("client {}: protocol error: {}", from, detail);
        auto it = peers.find(from);
        if (it == peers.end()) return;
        it->second->send(std::make_shared<const std::string>(encode_payload(msg::Error{"protocol_error", detail})));
        it->second->close_after_flush();
    }

    /// Persists new log entries before anything goes out, so an acknowledged op is durable.
    void dispatch(const Outbox& out) {
        persist();
        for (const auto& o : out.messages) {
            auto it = peers.find(o.to);
            if (it == peers.end()) continue;
            try {
                it->second->send(std::make_shared<const std::string>(encode_payload(o.message)));
            } catch (const ProtocolError& e) {
                spdlog::error("cannot encode '{}' for client {}: {}", type_tag(o.message), o.to, e.what());
            }
        }
        for (ClientId id : out.disconnect) {
            auto it = peers.find(id);
            if (it != peers.end()) it->second->close_after_flush();
        }
    }

    void persist() {
        for (auto& [doc, entries] : core.take_log_entries()) {
            try {
                store.append_log(doc, entries);
            } catch (const std::exception& e) {
                spdlog::error("cannot append oplog for '{}': {}", doc, e.what());
            }
        }
        for (const auto& doc : core.take_reloaded_docs()) checkpoint_doc(doc);
    }

    void checkpoint_doc(const std::string& name) {
        const MoleculeDoc* doc = core.find_document(name);
        if (!doc) return;
        try {
            store.checkpoint(*doc);
            checkpointed[name] = doc->version();
        } catch (const std::exception& e) {
            spdlog::error("checkpoint of '{}' failed: {}", name, e.what());
        }
    }

    void checkpoint_all() {
        persist();
        for (const auto& name : core.doc_names()) {
            const MoleculeDoc* doc = core.find_document(name);
            auto it = checkpointed.find(name);
            if (it == checkpointed.end() || it->second != doc->version()) checkpoint_doc(name);
        }
    }

    void schedule_tick() {
        tick_timer.expires_after(config().poll_interval);
        tick_timer.async_wait([self = shared_from_this()](boost::system::error_code ec) {
            if (ec || self->stopping) return;
            try {
                self->dispatch(self->core.tick(wall_clock_ms()));
            } catch (const std::exception& e) {
                spdlog::error("watch tick failed: {}", e.what());
            }
            self->schedule_tick();
        });
    }

    void schedule_checkpoint() {
        checkpoint_timer.expires_after(config().checkpoint_interval);
        checkpoint_timer.async_wait([self = shared_from_this()](boost::system::error_code ec) {
            if (ec || self->stopping) return;
            self->checkpoint_all();
            self->schedule_checkpoint();
        });
    }

    void shutdown(bool checkpoint) {
        if (stopping) return;
        if (checkpoint) checkpoint_all();
        stopping = true;
        boost::system::error_code ignored;
        tcp_acceptor.close(ignored);
        ws_acceptor.close(ignored);
        tick_timer.cancel();
        checkpoint_timer.cancel();
        signals.cancel(ignored);
        auto all = peers;
        for (auto& [id, peer] : all) peer->close_now();
        peers.clear();
        ioc.stop();
    }
};

namespace {

class TcpPeer final : public Peer {
public:
    TcpPeer(tcp::socket socket, std::weak_ptr<NetServer::Impl> server)
        : socket_(std::move(socket)), server_(std::move(server)) {}

    void start() override { read(); }

    void send(std::shared_ptr<const std::string> payload) override {
        if (closed_) return;
        const auto n = static_cast<std::uint32_t>(payload->size());
        auto frame = std::make_shared<std::string>();
        frame->reserve(payload->size() + kFrameHeaderBytes);
        frame->push_back(static_cast<char>(n >> 24));
        frame->push_back(static_cast<char>(n >> 16));
        frame->push_back(static_cast<char>(n >> 8));
        frame->push_back(static_cast<char>(n));
        frame->append(*payload);
        queue_.push_back(std::move(frame));
        if (queue_.size() == 1) write();
    }

    void close_after_flush() override {
        closing_ = true;
        if (queue_.empty()) close_now();
    }

    void close_now() override {
        if (closed_) return;
        closed_ = true;
        boost::system::error_code ignored;
        socket_.shutdown(tcp::socket::shutdown_both, ignored);
        socket_.close(ignored);
        if (auto server = server_.lock()) server->detach(id);
    }

private:
    void read() {
        socket_.async_read_some(asio::buffer(buffer_), [self = shared(), this](boost::system::error_code ec, std::size_t n) {
            if (ec) {
                close_now();
                return;
            }
            auto server = server_.lock();
            if (!server) return;
            reader_.feed(std::as_bytes(std::span(buffer_.data(), n)));
            try {
                while (auto m = reader_.next()) {
                    server->on_message(id, *m);
                    if (closed_ || closing_) return;
                }
            } catch (const ProtocolError& e) {
                server->on_protocol_error(id, e.what());
                return;
            }
            read();
        });
    }

    void write() {
        asio::async_write(socket_, asio::buffer(*queue_.front()),
                          [self = shared(), this](boost::system::error_code ec, std::size_t) {
                              if (ec) {
                                  close_now();
                                  return;
                              }
                              queue_.pop_front();
                              if (!queue_.empty())
                                  write();
                              else if (closing_)
                                  close_now();
                          });
    }

    std::shared_ptr<TcpPeer> shared() { return std::static_pointer_cast<TcpPeer>(shared_from_this()); }

    tcp::socket socket_;
    std::weak_ptr<NetServer::Impl> server_;
    std::array<char, 64 * 1024> buffer_{};
    FrameReader reader_;
    std::deque<std::shared_ptr<std::string>> queue_;
    bool closing_ = false;
    bool closed_ = false;
};

class WsPeer final : public Peer {
public:
    WsPeer(tcp::socket socket, std::weak_ptr<NetServer::Impl> server)
        : ws_(std::move(socket)), server_(std::move(server)) {}

    void start() override {
        ws_.set_option(websocket::stream_base::timeout::suggested(beast::role_type::server));
        ws_.read_message_max(kMaxFrameBytes);
        ws_.async_accept([self = shared(), this](beast::error_code ec) {
            if (ec) {
                closed_ = true;
                return;
            }
            auto server = server_.lock();
            if (!server) return;
            server->attach(self);
            read();
        });
    }

    void send(std::shared_ptr<const std::string> payload) override {
        if (closed_) return;
        queue_.push_back(std::move(payload));
        if (queue_.size() == 1) write();
    }

    void close_after_flush() override {
        closing_ = true;
        if (queue_.empty()) close_now();
    }

    void close_now() override {
        if (closed_) return;
        closed_ = true;
        beast::error_code ignored;
        beast::get_lowest_layer(ws_).socket().shutdown(tcp::socket::shutdown_both, ignored);
        beast::get_lowest_layer(ws_).socket().close(ignored);
        if (auto server = server_.lock()) server->detach(id);
    }

private:
    void read() {
        ws_.async_read(buffer_, [self = shared(), this](beast::error_code ec, std::size_t) {
            if (ec) {
                close_now();
                return;
            }
            auto server = server_.lock();
            if (!server) return;
            const std::string payload = beast::buffers_to_string(buffer_.data());
            buffer_.consume(buffer_.size());
            try {
                server->on_message(id, decode_payload(payload));
            } catch (const ProtocolError& e) {
                server->on_protocol_error(id, e.what());
                return;
            }
            if (closed_ || closing_) return;
            read();
        });
    }

    void write() {
        ws_.binary(true);
        ws_.async_write(asio::buffer(*queue_.front()), [self = shared(), this](beast::error_code ec, std::size_t) {
            if (ec) {
                close_now();
                return;
            }
            queue_.pop_front();
            if (!queue_.empty())
                write();
            else if (closing_)
                close_now();
        });
    }

    std::shared_ptr<WsPeer> shared() { return std::static_pointer_cast<WsPeer>(shared_from_this()); }

    websocket::stream<beast::tcp_stream> ws_;
    std::weak_ptr<NetServer::Impl> server_;
    beast::flat_buffer buffer_;
    std::deque<std::shared_ptr<const std::string>> queue_;
    bool closing_ = false;
    bool closed_ = false;
};

} // namespace

void NetServer::Impl::accept_tcp() {
    tcp_acceptor.async_accept([self = shared_from_this()](boost::system::error_code ec, tcp::socket socket) {
        if (ec) {
            if (!self->stopping) spdlog::warn("tcp accept failed: {}", ec.message());
            return;
        }
        socket.set_option(tcp::no_delay(true));
        auto peer = std::make_shared<TcpPeer>(std::move(socket), self);
        self->attach(peer);
        peer->start();
        self->accept_tcp();
    });
}

void NetServer::Impl::accept_ws() {
    ws_acceptor.async_accept([self = shared_from_this()](boost::system::error_code ec, tcp::socket socket) {
        if (ec) {
            if (!self->stopping) spdlog::warn("websocket accept failed: {}", ec.message());
            return;
        }
        socket.set_option(tcp::no_delay(true));
        std::make_shared<WsPeer>(std::move(socket), self)->start();
        self->accept_ws();
    });
}

NetServer::NetServer(ServerConfig config) {
    config.validate();
    impl_ = std::make_shared<Impl>(std::move(config));
}

NetServer::~NetServer() {
    if (!impl_) return;
    // run() has returned by now; release handlers still queued on the loop.
    impl_->shutdown(false);
    impl_->ioc.restart();
    impl_->ioc.poll();
}

void NetServer::start() {
    impl_->recover();
    impl_->open_acceptor(impl_->tcp_acceptor, impl_->config().tcp_listen);
    impl_->open_acceptor(impl_->ws_acceptor, impl_->config().ws_listen);
    spdlog::info("listening: tcp {} websocket {}; data dir {}", tcp_port(), ws_port(),
                 impl_->config().data_dir.string());
    impl_->accept_tcp();
    impl_->accept_ws();
    // First poll right away so watched files are loaded before clients arrive.
    asio::post(impl_->ioc, [self = impl_] {
        if (!self->stopping) self->dispatch(self->core.tick(wall_clock_ms()));
    });
    impl_->schedule_tick();
    impl_->schedule_checkpoint();
}

void NetServer::run() { impl_->ioc.run(); }

void NetServer::stop() {
    asio::post(impl_->ioc, [self = impl_] { self->shutdown(true); });
}

void NetServer::abort() {
    asio::post(impl_->ioc, [self = impl_] { self->shutdown(false); });
}

void NetServer::checkpoint_now() {
    std::promise<void> done;
    auto future = done.get_future();
    asio::post(impl_->ioc, [self = impl_, &done] {
        self->checkpoint_all();
        done.set_value();
    });
    future.wait();
}

void NetServer::stop_on_signals() {
    impl_->signals.add(SIGINT);
    impl_->signals.add(SIGTERM);
    impl_->signals.async_wait([self = impl_](boost::system::error_code ec, int signal) {
        if (ec) return;
        spdlog::info("signal {}: checkpointing and stopping", signal);
        self->shutdown(true);
    });
}

std::uint16_t NetServer::tcp_port() const { return impl_->tcp_acceptor.local_endpoint().port(); }
std::uint16_t NetServer::ws_port() const { return impl_->ws_acceptor.local_endpoint().port(); }

} // namespace snbviz
