#include "snbviz/server_core.hpp"

#include <algorithm>
#include <stdexcept>

#include <spdlog/spdlog.h>

namespace snbviz {

namespace fs = std::filesystem;

void ServerConfig::validate() const {
    if (poll_interval.count() <= 0) throw std::invalid_argument("poll_interval must be positive");
    if (checkpoint_interval.count() <= 0) throw std::invalid_argument("checkpoint_interval must be positive");
    if (!(bond_threshold > 0.0)) throw std::invalid_argument("bond_threshold must be positive");
    if (data_dir.empty()) throw std::invalid_argument("data_dir must be set");
}

bool is_valid_doc_name(std::string_view name) {
    if (name.empty() || name.size() > 128 || name.front() == '.') return false;
    return std::all_of(name.begin(), name.end(), [](char c) {
        return (c >= 'a' && c <= 'z') || (c >= 'A' && c <= 'Z') || (c >= '0' && c <= '9') || c == '_' ||
               c == '-' || c == '.';
    });
}

ServerCore::ServerCore(ServerConfig config) : config_(std::move(config)) {}

void ServerCore::add_document(MoleculeDoc doc) {
    std::string name = doc.name();
    DocEntry& entry = docs_[name];
    entry.doc = std::move(doc);
    if (entry.doc.source().watched()) entry.watch = WatchState::start(*entry.doc.source().watched_path);
}

ClientId ServerCore::connect() {
    const ClientId id = next_client_id_++;
    sessions_[id].client_id = id;
    return id;
}

void ServerCore::disconnect(ClientId client) { sessions_.erase(client); }

std::vector<std::string> ServerCore::doc_names() const {
    std::vector<std::string> names;
    names.reserve(docs_.size());
    for (const auto& [name, entry] : docs_) names.push_back(name);
    return names;
}

const MoleculeDoc* ServerCore::find_document(const std::string& name) const {
    auto it = docs_.find(name);
    return it == docs_.end() ? nullptr : &it->second.doc;
}

const SessionState* ServerCore::find_session(ClientId client) const {
    auto it = sessions_.find(client);
    return it == sessions_.end() ? nullptr : &it->second;
}

std::map<std::string, std::vector<OpLogEntry>> ServerCore::take_log_entries() {
    return std::exchange(pending_log_, {});
}

std::vector<std::string> ServerCore::take_reloaded_docs() {
    std::vector<std::string> out(reloaded_.begin(), reloaded_.end());
    reloaded_.clear();
    return out;
}

void ServerCore::broadcast(const std::string& doc, const Message& m, Outbox& out, std::optional<ClientId> except) {
    for (const auto& [id, session] : sessions_) {
        if (except && *except == id) continue;
        if (session.open_docs.contains(doc)) out.send(id, m);
    }
}

Outbox ServerCore::handle_message(ClientId from, const Message& message, TimeMs now) {
    Outbox out;
    auto it = sessions_.find(from);
    if (it == sessions_.end()) return out;
    SessionState& session = it->second;

    std::visit(
        [&](const auto& m) {
            using T = std::decay_t<decltype(m)>;
            if constexpr (std::is_same_v<T, msg::Hello> || std::is_same_v<T, msg::Open>) {
                handle(session, m, out);
            } else if constexpr (std::is_same_v<T, msg::OpSubmit> || std::is_same_v<T, msg::Presence>) {
                handle(session, m, now, out);
            } else if constexpr (std::is_same_v<T, msg::Ping>) {
                out.send(from, msg::Pong{m.nonce});
            } else if constexpr (std::is_same_v<T, msg::Pong> || std::is_same_v<T, msg::Error>) {
                // Nothing to do; clients may answer pings or report their own errors.
            } else {
                out.send(from, msg::Error{"unexpected_message",
                                          "clients may not send '" + std::string(type_tag(message)) + "'"});
            }
        },
        message);
    return out;
}

void ServerCore::handle(SessionState& session, const msg::Hello& m, Outbox& out) {
    if (m.protocol_version != kProtocolVersion) {
        out.send(session.client_id,
                 msg::Error{"bad_protocol_version", "server speaks protocol " + std::to_string(kProtocolVersion)});
        out.disconnect.push_back(session.client_id);
        return;
    }
    session.client_name = m.client_name;
    out.send(session.client_id, msg::Welcome{session.client_id, doc_names()});
}

void ServerCore::handle(SessionState& session, const msg::Open& m, Outbox& out) {
    auto it = docs_.find(m.doc);
    if (it == docs_.end()) {
        if (!m.create) {
            out.send(session.client_id, msg::Error{"unknown_document", m.doc});
            return;
        }
        if (!is_valid_doc_name(m.doc)) {
            out.send(session.client_id, msg::Error{"bad_document_name", m.doc});
            return;
        }
        it = docs_.emplace(m.doc, DocEntry{MoleculeDoc(m.doc), std::nullopt, false, {}}).first;
        spdlog::info("created document '{}' for client {}", m.doc, session.client_id);
    }
    session.open_docs.insert(m.doc);
    out.send(session.client_id, msg::SnapshotMsg{m.doc, snapshot(it->second.doc)});
}

void ServerCore::handle(SessionState& session, const msg::OpSubmit& m, TimeMs now, Outbox& out) {
    EditOp edit = m.op;
    edit.op_id.client = session.client_id;

    auto it = docs_.find(m.doc);
    if (it == docs_.end()) {
        out.send(session.client_id, msg::Reject{m.doc, edit.op_id, "unknown_document"});
        return;
    }
    if (!session.open_docs.contains(m.doc)) {
        out.send(session.client_id, msg::Reject{m.doc, edit.op_id, "not_open"});
        return;
    }
    if (!session.answered_seqs.insert(edit.op_id.seq).second) {
        out.send(session.client_id,
                 msg::Error{"duplicate_op_id", "op seq " + std::to_string(edit.op_id.seq) + " already answered"});
        return;
    }

    DocEntry& entry = it->second;
    const ApplyResult result = apply_op(entry.doc, edit);
    if (!result.applied()) {
        ++counters_.rejected;
        out.send(session.client_id, msg::Reject{m.doc, edit.op_id, std::string(to_string(*result.rejection))});
        return;
    }
    ++counters_.applied;
    pending_log_[m.doc].push_back({OpLogEntry::Kind::Op, result.version, edit, session.client_id, now});
    broadcast(m.doc, msg::Applied{m.doc, result.version, edit, session.client_id}, out);
}

void ServerCore::handle(SessionState& session, const msg::Presence& m, TimeMs now, Outbox& out) {
    if (!session.open_docs.contains(m.doc)) return;
    auto last = session.last_presence_ms.find(m.doc);
    if (last != session.last_presence_ms.end() && now - last->second < kPresenceMinIntervalMs) return;
    session.last_presence_ms[m.doc] = now;
    session.presence[m.doc] = m.cursor;
    broadcast(m.doc, msg::Presence{m.doc, session.client_id, m.cursor}, out, session.client_id);
}

void ServerCore::discover_watched_files() {
    std::set<fs::path> watched = ignored_paths_;
    for (const auto& [name, entry] : docs_)
        if (entry.watch) watched.insert(entry.watch->path);

    for (const auto& dir : config_.watch_dirs) {
        std::error_code ec;
        std::vector<fs::path> found;
        for (fs::directory_iterator it(dir, ec), end; !ec && it != end; it.increment(ec)) {
            const fs::path& p = it->path();
            if (p.extension() == ".snbg" || p.extension() == ".xyz") found.push_back(p);
        }
        if (ec) {
            spdlog::warn("cannot scan watch directory {}: {}", dir.string(), ec.message());
            continue;
        }
        std::sort(found.begin(), found.end());
        for (const auto& path : found) {
            if (watched.contains(path)) continue;
            const std::string name = path.stem().string();
            if (!is_valid_doc_name(name)) {
                spdlog::warn("ignoring {}: file stem is not a valid document name", path.string());
                ignored_paths_.insert(path);
                continue;
            }
            DocEntry& entry = docs_[name];
            if (entry.watch) {
                spdlog::warn("ignoring {}: document '{}' already watches {}", path.string(), name,
                             entry.watch->path.string());
                ignored_paths_.insert(path);
                continue;
            }
            if (entry.doc.name().empty()) entry.doc = MoleculeDoc(name);
            if (!entry.doc.source().watched() || entry.doc.source().watched_path != path)
                entry.doc.set_source(DocSource{path});
            entry.watch = WatchState::start(path);
            watched.insert(path);
            spdlog::info("watching {} as document '{}'", path.string(), name);
        }
    }
}

void ServerCore::poll_entry(const std::string& name, DocEntry& entry, TimeMs now, Outbox& out) {
    PollResult result = poll(*entry.watch, config_.bond_threshold);
    if (std::holds_alternative<poll_result::NoChange>(result)) return;

    if (std::holds_alternative<poll_result::FileMissing>(result)) {
        if (!entry.frozen) spdlog::warn("watched file {} disappeared; document '{}' frozen", entry.watch->path.string(), name);
        entry.frozen = true;
        return;
    }
    if (auto* failed = std::get_if<poll_result::ParseFailed>(&result)) {
        if (failed->detail != entry.last_poll_error)
            spdlog::warn("cannot parse {}: {}", entry.watch->path.string(), failed->detail);
        entry.last_poll_error = failed->detail;
        return;
    }

    auto& reloaded = std::get<poll_result::Reloaded>(result);
    entry.frozen = false;
    entry.last_poll_error.clear();
    auto [rebased, report] = rebase(reloaded.snapshot, entry.doc.overlay());
    for (const auto& dropped : report.dropped)
        spdlog::info("reload of '{}' dropped op {}:{} ({})", name, dropped.op.op_id.client, dropped.op.op_id.seq,
                     to_string(dropped.reason));
    entry.doc.reload(rebased, std::move(report.kept));
    ++counters_.reloads;
    reloaded_.insert(name);
    pending_log_[name].push_back({OpLogEntry::Kind::Reload, entry.doc.version(), {}, 0, now});
    broadcast(name, msg::DocReloaded{name, snapshot(entry.doc), report.dropped.size()}, out);
}

Outbox ServerCore::tick(TimeMs now) {
    Outbox out;
    if (!config_.watch_dirs.empty()) discover_watched_files();
    for (auto& [name, entry] : docs_)
        if (entry.watch) poll_entry(name, entry, now, out);
    return out;
}

} // namespace snbviz
