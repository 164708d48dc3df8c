#pragma once

#include <chrono>
#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "snbviz/molecular_graph.hpp"
#include "snbviz/protocol.hpp"
#include "snbviz/snb_ingest.hpp"

namespace snbviz {

/// Milliseconds on whatever clock the host drives the core with (steady or virtual).
using TimeMs = std::int64_t;

inline constexpr TimeMs kPresenceMinIntervalMs = 100;

struct ServerConfig {
    std::string tcp_listen = "0.0.0.0:5150";
    std::string ws_listen = "0.0.0.0:5151";
    std::filesystem::path data_dir = "snbviz-data";
    std::vector<std::filesystem::path> watch_dirs;
    std::chrono::milliseconds poll_interval{500};
    double bond_threshold = kDefaultBondThreshold;
    std::chrono::seconds checkpoint_interval{30};

    /// Throws std::invalid_argument naming the offending field.
    void validate() const;
};

struct SessionState {
    ClientId client_id = 0;
    std::string client_name;
    std::set<std::string> open_docs;
    std::map<std::string, Ray> presence;
    std::map<std::string, TimeMs> last_presence_ms;
    std::set<std::uint64_t> answered_seqs;
};

/// One persisted history record. Reload records mark a file-driven base replacement.
struct OpLogEntry {
    enum class Kind { Op, Reload };

    Kind kind = Kind::Op;
    Version version = 0;
    EditOp op;
    ClientId origin = 0;
    std::int64_t timestamp_ms = 0;

    friend bool operator==(const OpLogEntry&, const OpLogEntry&) = default;
};

struct Outbound {
    ClientId to = 0;
    Message message;
};

struct Outbox {
    std::vector<Outbound> messages;
    std::vector<ClientId> disconnect;

    void send(ClientId to, Message m) { messages.push_back({to, std::move(m)}); }
};

/// Document names double as file stems in the data directory.
bool is_valid_doc_name(std::string_view name);

/// Authoritative server state: documents, sessions, watched files. Every transition is a
/// function of (state, input, now); the host owns the clock, sockets and disk.
class ServerCore {
public:
    explicit ServerCore(ServerConfig config = {});

    const ServerConfig& config() const { return config_; }

    /// Adds (or replaces) a document, e.g. one recovered from disk.
    void add_document(MoleculeDoc doc);

    ClientId connect();
    void disconnect(ClientId client);

    Outbox handle_message(ClientId from, const Message& message, TimeMs now);

    /// Discovers new files in the watch directories and polls every watched file.
    Outbox tick(TimeMs now);

    std::vector<std::string> doc_names() const;
    const MoleculeDoc* find_document(const std::string& name) const;
    const SessionState* find_session(ClientId client) const;
    std::size_t session_count() const { return sessions_.size(); }

    /// Entries appended since the last call, keyed by document, in version order.
    std::map<std::string, std::vector<OpLogEntry>> take_log_entries();

    /// Documents whose base was replaced since the last call; they need a fresh checkpoint
    /// before further log entries can be replayed against it.
    std::vector<std::string> take_reloaded_docs();

    struct Counters {
        std::uint64_t applied = 0;
        std::uint64_t rejected = 0;
        std::uint64_t reloads = 0;
    };
    const Counters& counters() const { return counters_; }

private:
    struct DocEntry {
        MoleculeDoc doc;
        std::optional<WatchState> watch;
        bool frozen = false;
        std::string last_poll_error;
    };

    void handle(SessionState& session, const msg::Hello& m, Outbox& out);
    void handle(SessionState& session, const msg::Open& m, Outbox& out);
    void handle(SessionState& session, const msg::OpSubmit& m, TimeMs now, Outbox& out);
    void handle(SessionState& session, const msg::Presence& m, TimeMs now, Outbox& out);

    void discover_watched_files();
    void poll_entry(const std::string& name, DocEntry& entry, TimeMs now, Outbox& out);
    void broadcast(const std::string& doc, const Message& m, Outbox& out, std::optional<ClientId> except = {});

    ServerConfig config_;
    std::map<std::string, DocEntry> docs_;
    std::map<ClientId, SessionState> sessions_;
    ClientId next_client_id_ = 1;
    std::map<std::string, std::vector<OpLogEntry>> pending_log_;
    std::set<std::string> reloaded_;
    std::set<std::filesystem::path> ignored_paths_;
    Counters counters_;
};

} // namespace snbviz
