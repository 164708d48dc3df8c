#include "snbviz/store.hpp"

#include <cerrno>
#include <fcntl.h>
#include <fstream>
#include <set>
#include <sstream>
#include <system_error>
#include <unistd.h>

#include <spdlog/spdlog.h>

#include "snbviz/json_codec.hpp"
#include "snbviz/protocol.hpp"
#include "snbviz/snb_ingest.hpp"

namespace snbviz {

namespace fs = std::filesystem;
using json_codec::Json;

namespace {

[[noreturn]] void throw_errno(const std::string& what) {
    throw std::system_error(errno, std::generic_category(), what);
}

class FileDescriptor {
public:
    FileDescriptor(const fs::path& path, int flags) : fd_(::open(path.c_str(), flags, 0644)) {
        if (fd_ < 0) throw_errno("open " + path.string());
    }
    ~FileDescriptor() {
        if (fd_ >= 0) ::close(fd_);
    }
    FileDescriptor(const FileDescriptor&) = delete;
    FileDescriptor& operator=(const FileDescriptor&) = delete;

    void write_all(std::string_view data, const fs::path& path) {
        while (!data.empty()) {
            ssize_t n = ::write(fd_, data.data(), data.size());
            if (n < 0) {
                if (errno == EINTR) continue;
                throw_errno("write " + path.string());
            }
            data.remove_prefix(static_cast<std::size_t>(n));
        }
    }
    void sync(const fs::path& path) {
        if (::fsync(fd_) != 0) throw_errno("fsync " + path.string());
    }
    void close(const fs::path& path) {
        int fd = std::exchange(fd_, -1);
        if (::close(fd) != 0) throw_errno("close " + path.string());
    }

private:
    int fd_;
};

std::string read_file(const fs::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::system_error(errno, std::generic_category(), "read " + path.string());
    std::ostringstream buf;
    buf << in.rdbuf();
    return buf.str();
}

struct CheckpointHeader {
    Version version = 0;
    std::optional<fs::path> watched;
    std::vector<AtomId> retired;
};

CheckpointHeader read_header(std::string_view text) {
    CheckpointHeader header;
    std::istringstream in{std::string(text)};
    for (std::string line; std::getline(in, line);) {
        if (!line.starts_with('#')) break;
        if (line.starts_with("# version ")) header.version = std::stoull(line.substr(10));
        else if (line.starts_with("# watched ")) header.watched = fs::path(line.substr(10));
        else if (line.starts_with("# retired ")) {
            std::istringstream ids(line.substr(10));
            for (AtomId id; ids >> id;) header.retired.push_back(id);
        }
    }
    return header;
}

} // namespace

void write_file_atomic(const fs::path& path, std::string_view content) {
    fs::path tmp = path;
    tmp += ".tmp";
    {
        FileDescriptor fd(tmp, O_WRONLY | O_CREAT | O_TRUNC | O_CLOEXEC);
        fd.write_all(content, tmp);
        fd.sync(tmp);
        fd.close(tmp);
    }
    std::error_code ec;
    fs::rename(tmp, path, ec);
    if (ec) throw std::system_error(ec, "rename " + tmp.string());
    // Persist the rename itself.
    int dir = ::open(path.parent_path().empty() ? "." : path.parent_path().c_str(), O_RDONLY | O_DIRECTORY);
    if (dir >= 0) {
        ::fsync(dir);
        ::close(dir);
    }
}

std::string oplog_line(const OpLogEntry& entry) {
    Json j;
    j["version"] = entry.version;
    j["kind"] = entry.kind == OpLogEntry::Kind::Op ? "op" : "reload";
    if (entry.kind == OpLogEntry::Kind::Op) {
        j["op"] = json_codec::to_json(entry.op);
        j["origin"] = entry.origin;
    }
    j["ts"] = entry.timestamp_ms;
    return j.dump();
}

OpLogEntry parse_oplog_line(std::string_view line) {
    Json j;
    try {
        j = Json::parse(line.begin(), line.end());
    } catch (const nlohmann::json::exception& e) {
        throw ProtocolError(std::string("malformed oplog line: ") + e.what());
    }
    try {
        OpLogEntry entry;
        entry.version = j.at("version").get<Version>();
        entry.timestamp_ms = j.at("ts").get<std::int64_t>();
        const auto kind = j.at("kind").get<std::string>();
        if (kind == "op") {
            entry.kind = OpLogEntry::Kind::Op;
            entry.op = json_codec::edit_op_from_json(j.at("op"));
            entry.origin = j.at("origin").get<ClientId>();
        } else if (kind == "reload") {
            entry.kind = OpLogEntry::Kind::Reload;
        } else {
            throw ProtocolError("unknown oplog entry kind '" + kind + "'");
        }
        return entry;
    } catch (const nlohmann::json::exception& e) {
        throw ProtocolError(std::string("bad oplog entry: ") + e.what());
    }
}

std::string checkpoint_text(const MoleculeDoc& doc) {
    std::string out = "# snbviz checkpoint\n# doc " + doc.name() + "\n# version " + std::to_string(doc.version()) + "\n";
    if (doc.source().watched()) out += "# watched " + doc.source().watched_path->string() + "\n";
    if (!doc.retired().empty()) {
        out += "# retired";
        for (AtomId id : doc.retired()) out += " " + std::to_string(id);
        out += "\n";
    }
    out += serialize_snbg(snapshot(doc));
    return out;
}

Store::Store(fs::path data_dir) : data_dir_(std::move(data_dir)) {}

fs::path Store::snapshot_path(const std::string& doc) const { return data_dir_ / (doc + ".snbg"); }
fs::path Store::oplog_path(const std::string& doc) const { return data_dir_ / (doc + ".oplog"); }

void Store::append_log(const std::string& doc, std::span<const OpLogEntry> entries) {
    if (entries.empty()) return;
    std::string text;
    for (const auto& entry : entries) text += oplog_line(entry) + "\n";
    const fs::path path = oplog_path(doc);
    FileDescriptor fd(path, O_WRONLY | O_CREAT | O_APPEND | O_CLOEXEC);
    fd.write_all(text, path);
    fd.sync(path);
    fd.close(path);
}

void Store::checkpoint(const MoleculeDoc& doc) { write_file_atomic(snapshot_path(doc.name()), checkpoint_text(doc)); }

std::map<std::string, MoleculeDoc> Store::recover() const {
    std::map<std::string, MoleculeDoc> docs;
    std::error_code ec;
    std::set<std::string> names;
    for (fs::directory_iterator it(data_dir_, ec), end; !ec && it != end; it.increment(ec)) {
        const auto ext = it->path().extension();
        if (ext == ".snbg" || ext == ".oplog") names.insert(it->path().stem().string());
    }
    if (ec) {
        spdlog::warn("cannot scan data directory {}: {}", data_dir_.string(), ec.message());
        return docs;
    }

    for (const auto& name : names) {
        if (!is_valid_doc_name(name)) continue;
        MoleculeDoc doc(name);
        std::optional<fs::path> watched;
        const fs::path snap_path = snapshot_path(name);
        if (fs::exists(snap_path)) {
            try {
                const std::string text = read_file(snap_path);
                const CheckpointHeader header = read_header(text);
                Snapshot s = parse_snbg(text);
                s.version = header.version;
                doc = restore(s, name);
                for (AtomId id : header.retired) doc.retire(id);
                watched = header.watched;
            } catch (const std::exception& e) {
                spdlog::warn("skipping document '{}': unreadable checkpoint {}: {}", name, snap_path.string(), e.what());
                continue;
            }
        }

        // Ops after the latest reload form the overlay of a watched document.
        std::vector<EditOp> overlay;
        const fs::path log_path = oplog_path(name);
        if (fs::exists(log_path)) {
            std::string text;
            try {
                text = read_file(log_path);
            } catch (const std::exception& e) {
                spdlog::warn("document '{}': unreadable oplog: {}", name, e.what());
            }
            std::istringstream in(text);
            std::size_t line_no = 0;
            bool halted = false;
            for (std::string line; !halted && std::getline(in, line);) {
                ++line_no;
                if (line.empty()) continue;
                OpLogEntry entry;
                try {
                    entry = parse_oplog_line(line);
                } catch (const ProtocolError& e) {
                    spdlog::warn("document '{}': oplog line {} unreadable ({}); replay halted at version {}", name,
                                 line_no, e.what(), doc.version());
                    break;
                }
                if (entry.kind == OpLogEntry::Kind::Reload) {
                    overlay.clear();
                    if (entry.version > doc.version()) {
                        spdlog::warn("document '{}': reload at version {} newer than checkpoint; replay halted at {}",
                                     name, entry.version, doc.version());
                        halted = true;
                    }
                    continue;
                }
                if (entry.version <= doc.version()) {
                    overlay.push_back(entry.op);
                    continue;
                }
                if (entry.version != doc.version() + 1) {
                    spdlog::warn("document '{}': oplog gap before version {}; replay halted at {}", name,
                                 entry.version, doc.version());
                    break;
                }
                auto result = apply_op(doc, entry.op);
                if (!result.applied()) {
                    spdlog::warn("document '{}': oplog entry for version {} does not apply ({}); replay halted at {}",
                                 name, entry.version, to_string(*result.rejection), doc.version());
                    break;
                }
                overlay.push_back(entry.op);
            }
        }
        if (watched) doc.set_source(DocSource{*watched}, std::move(overlay));
        docs.emplace(name, std::move(doc));
    }
    return docs;
}

} // namespace snbviz
