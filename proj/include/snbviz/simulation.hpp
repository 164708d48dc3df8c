#pragma once

#include <cstdint>
#include <functional>
#include <queue>
#include <random>
#include <string>
#include <vector>

#include "snbviz/client_doc.hpp"
#include "snbviz/server_core.hpp"

namespace snbviz {

/// Per-message one-way delay, uniform over [min_ms, max_ms].
struct LatencyModel {
    std::int64_t min_ms = 0;
    std::int64_t max_ms = 200;
};

struct ConvergenceReport {
    std::vector<std::uint64_t> client_hashes;
    std::uint64_t server_hash = 0;
    std::uint64_t ops_submitted = 0;
    std::uint64_t ops_applied = 0;
    std::uint64_t ops_rejected = 0;
    std::vector<std::uint64_t> client_acks;
    bool equal = false;

    std::string to_json() const;
    friend bool operator==(const ConvergenceReport&, const ConvergenceReport&) = default;
};

/// What the server did, for replay oracles.
struct SimulationTrace {
    Snapshot initial;
    std::vector<OpLogEntry> applied_log;
    Snapshot server_final;
};

/// Deterministic discrete-event harness: one in-process ServerCore, N ClientDoc replicas,
/// per-link FIFO delivery with random delays on a virtual millisecond clock.
class Simulation {
public:
    static constexpr const char* kDocName = "sim";

    using OpFactory = std::function<std::optional<OpPayload>(const ClientDoc&, std::mt19937_64&)>;

    Simulation(std::size_t n_clients, LatencyModel latency, std::uint64_t seed, Snapshot initial);

    /// Queues a client submission at virtual time `at_ms`. The payload is built by `make`
    /// against the client's local view when the time comes (nullopt skips).
    void schedule_submit(std::size_t client, std::int64_t at_ms, OpFactory make);

    /// Drops the client's connection at `at_ms` and reconnects (hello + open) immediately.
    void schedule_reconnect(std::size_t client, std::int64_t at_ms);

    void schedule_presence(std::size_t client, std::int64_t at_ms, Ray cursor);

    /// Runs until no events remain.
    void run();

    const ClientDoc& client(std::size_t i) const { return clients_.at(i).doc; }
    const ServerCore& server() const { return server_; }
    std::size_t client_count() const { return clients_.size(); }
    std::int64_t now() const { return now_; }
    const SimulationTrace& trace() const { return trace_; }
    std::uint64_t submitted() const { return submitted_; }
    std::uint64_t presence_received(std::size_t client) const { return clients_.at(client).presence_seen; }

    ConvergenceReport report() const;

private:
    struct Event {
        std::int64_t time = 0;
        std::uint64_t seq = 0;
        std::function<void()> action;
    };
    struct EventOrder {
        bool operator()(const Event& l, const Event& r) const {
            return l.time != r.time ? l.time > r.time : l.seq > r.seq;
        }
    };

    struct SimClient {
        ClientDoc doc;
        ClientId session = 0;
        std::uint64_t epoch = 0;
        std::int64_t up_last = 0;   // last delivery time client -> server
        std::int64_t down_last = 0; // last delivery time server -> client
        std::uint64_t presence_seen = 0;
    };

    void at(std::int64_t time, std::function<void()> action);
    std::int64_t draw_delay();
    void send_to_server(std::size_t client, Message m);
    void deliver_to_clients(const Outbox& out);
    void connect_client(std::size_t client);
    void collect_log();
    void attempt_submit(std::size_t client, const OpFactory& make);

    ServerCore server_;
    std::vector<SimClient> clients_;
    std::map<ClientId, std::size_t> by_session_;
    LatencyModel latency_;
    std::mt19937_64 rng_;
    std::priority_queue<Event, std::vector<Event>, EventOrder> events_;
    std::uint64_t next_event_seq_ = 0;
    std::int64_t now_ = 0;
    std::uint64_t submitted_ = 0;
    SimulationTrace trace_;
};

/// Uniform integer in [lo, hi] from a raw 64-bit engine; identical on every platform.
std::int64_t uniform_int(std::mt19937_64& rng, std::int64_t lo, std::int64_t hi);
double uniform_real(std::mt19937_64& rng, double lo, double hi);

/// Seeded starting document: a handful of atoms with distance-inferred bonds.
Snapshot random_initial_snapshot(std::uint64_t seed, std::size_t atoms = 10);

/// Up to `max_atoms` atoms in a 10 Å box joined by up to `max_bonds` random (not distance-based) bonds.
Snapshot random_scene(std::mt19937_64& rng, std::size_t max_atoms = 50, std::size_t max_bonds = 60);

/// Camera on a 25 Å sphere around the origin aimed near the center, with random fov and aspect.
Camera random_camera(std::mt19937_64& rng);

/// A random op that is valid-shaped against `view` (it may still lose a race at the server).
std::optional<OpPayload> random_op(const ClientDoc& view, std::mt19937_64& rng);

/// n_clients replicas each issue their share of n_ops random edits, then the run drains.
ConvergenceReport simulate(std::size_t n_clients, std::size_t n_ops, LatencyModel latency, std::uint64_t seed,
                           SimulationTrace* trace = nullptr);

} // namespace snbviz
