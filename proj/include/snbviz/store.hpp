#pragma once

#include <filesystem>
#include <map>
#include <span>
#include <string>
#include <string_view>

#include "snbviz/molecular_graph.hpp"
#include "snbviz/server_core.hpp"

namespace snbviz {

/// Writes `content` to a sibling temp file, fsyncs it, then renames over `path`.
void write_file_atomic(const std::filesystem::path& path, std::string_view content);

std::string oplog_line(const OpLogEntry& entry);
/// Throws ProtocolError on a malformed line.
OpLogEntry parse_oplog_line(std::string_view line);

/// Checkpoint text: a comment header carrying name/version/source, then canonical .snbg.
std::string checkpoint_text(const MoleculeDoc& doc);

/// Durable state under one directory: `<doc>.snbg` checkpoints plus `<doc>.oplog`
/// (one JSON entry per line, append-only).
class Store {
public:
    explicit Store(std::filesystem::path data_dir);

    const std::filesystem::path& data_dir() const { return data_dir_; }
    std::filesystem::path snapshot_path(const std::string& doc) const;
    std::filesystem::path oplog_path(const std::string& doc) const;

    /// Appends and fsyncs. Throws std::system_error on I/O failure.
    void append_log(const std::string& doc, std::span<const OpLogEntry> entries);

    /// Atomically replaces `<doc>.snbg`. Throws std::system_error on I/O failure.
    void checkpoint(const MoleculeDoc& doc);

    /// Loads every checkpoint, replays newer log entries, and halts a document's replay at
    /// the first entry that does not apply cleanly. Unreadable files are skipped.
    std::map<std::string, MoleculeDoc> recover() const;

private:
    std::filesystem::path data_dir_;
};

} // namespace snbviz
