#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <string>

#include "snbviz/molecular_graph.hpp"
#include "snbviz/protocol.hpp"

namespace snbviz {

/// A client's replica of one document. The local state changes only in response to
/// SnapshotMsg, Applied and DocReloaded; submitted ops wait in `pending` until answered.
class ClientDoc {
public:
    ClientDoc() = default;
    ClientDoc(std::string doc, ClientId self) : doc_(std::move(doc)), self_(self) {}

    const std::string& name() const { return doc_; }
    ClientId self() const { return self_; }
    bool primed() const { return primed_; }
    Version last_seen_version() const { return local_.version(); }
    const MoleculeDoc& local() const { return local_; }
    Snapshot local_snapshot() const { return snapshot(local_); }
    const std::map<std::uint64_t, EditOp>& pending() const { return pending_; }

    /// Set when an Applied does not extend the local state cleanly. Never expected.
    bool diverged() const { return diverged_; }

    std::uint64_t acknowledged() const { return acknowledged_; }
    std::uint64_t rejected() const { return rejected_; }

    /// Builds an OpSubmit with the next sequence number and records it as pending.
    msg::OpSubmit prepare(OpPayload payload);

    /// Folds one server message into the replica. Messages for other documents are ignored.
    void on_message(const Message& m);

    /// Forgets pending ops (their answers went to a dropped connection) and awaits a fresh snapshot.
    void reset_for_reconnect(ClientId new_self);

private:
    std::string doc_;
    ClientId self_ = 0;
    MoleculeDoc local_;
    bool primed_ = false;
    bool diverged_ = false;
    std::uint64_t next_seq_ = 1;
    std::map<std::uint64_t, EditOp> pending_;
    std::uint64_t acknowledged_ = 0;
    std::uint64_t rejected_ = 0;
};

} // namespace snbviz
