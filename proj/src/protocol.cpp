#include "snbviz/protocol.hpp"

#include <algorithm>
#include <cstring>

#include "snbviz/json_codec.hpp"

namespace snbviz {

using json_codec::Json;

namespace {

struct TagVisitor {
    std::string_view operator()(const msg::Hello&) const { return "hello"; }
    std::string_view operator()(const msg::Welcome&) const { return "welcome"; }
    std::string_view operator()(const msg::Open&) const { return "open"; }
    std::string_view operator()(const msg::SnapshotMsg&) const { return "snapshot"; }
    std::string_view operator()(const msg::OpSubmit&) const { return "op"; }
    std::string_view operator()(const msg::Applied&) const { return "applied"; }
    std::string_view operator()(const msg::Reject&) const { return "reject"; }
    std::string_view operator()(const msg::Presence&) const { return "presence"; }
    std::string_view operator()(const msg::DocReloaded&) const { return "doc_reloaded"; }
    std::string_view operator()(const msg::Ping&) const { return "ping"; }
    std::string_view operator()(const msg::Pong&) const { return "pong"; }
    std::string_view operator()(const msg::Error&) const { return "error"; }
};

Json to_json(const Message& m) {
    Json j;
    j["type"] = std::string(type_tag(m));
    std::visit(
        [&](const auto& v) {
            using T = std::decay_t<decltype(v)>;
            using namespace json_codec;
            if constexpr (std::is_same_v<T, msg::Hello>) {
                j["client_name"] = v.client_name;
                j["protocol_version"] = v.protocol_version;
            } else if constexpr (std::is_same_v<T, msg::Welcome>) {
                j["client_id"] = v.client_id;
                j["doc_names"] = v.doc_names;
            } else if constexpr (std::is_same_v<T, msg::Open>) {
                j["doc"] = v.doc;
                if (v.create) j["create"] = true;
            } else if constexpr (std::is_same_v<T, msg::SnapshotMsg>) {
                j["doc"] = v.doc;
                j["snapshot"] = json_codec::to_json(v.snapshot);
            } else if constexpr (std::is_same_v<T, msg::OpSubmit>) {
                j["doc"] = v.doc;
                j["op"] = json_codec::to_json(v.op);
            } else if constexpr (std::is_same_v<T, msg::Applied>) {
                j["doc"] = v.doc;
                j["version"] = v.version;
                j["op"] = json_codec::to_json(v.op);
                j["origin_client"] = v.origin_client;
            } else if constexpr (std::is_same_v<T, msg::Reject>) {
                j["doc"] = v.doc;
                j["op_id"] = json_codec::to_json(v.op_id);
                j["reason"] = v.reason;
            } else if constexpr (std::is_same_v<T, msg::Presence>) {
                j["doc"] = v.doc;
                j["client_id"] = v.client_id;
                j["cursor"] = json_codec::to_json(v.cursor);
            } else if constexpr (std::is_same_v<T, msg::DocReloaded>) {
                j["doc"] = v.doc;
                j["snapshot"] = json_codec::to_json(v.snapshot);
                j["dropped_op_count"] = v.dropped_op_count;
            } else if constexpr (std::is_same_v<T, msg::Ping> || std::is_same_v<T, msg::Pong>) {
                j["nonce"] = v.nonce;
            } else if constexpr (std::is_same_v<T, msg::Error>) {
                j["code"] = v.code;
                j["detail"] = v.detail;
            }
        },
        m);
    return j;
}

const Json& field(const Json& j, const char* name) {
    auto it = j.find(name);
    if (it == j.end()) throw ProtocolError(std::string("missing field '") + name + "'");
    return *it;
}

std::string str(const Json& j, const char* name) {
    const Json& v = field(j, name);
    if (!v.is_string()) throw ProtocolError(std::string("field '") + name + "' must be a string");
    return v.get<std::string>();
}

std::uint64_t u64(const Json& j, const char* name) {
    const Json& v = field(j, name);
    if (!v.is_number_unsigned()) throw ProtocolError(std::string("field '") + name + "' must be unsigned");
    return v.get<std::uint64_t>();
}

Message from_json(const Json& j) {
    if (!j.is_object()) throw ProtocolError("payload is not a JSON object");
    const std::string type = str(j, "type");
    using namespace json_codec;
    if (type == "hello") {
        auto version = u64(j, "protocol_version");
        if (version > UINT32_MAX) throw ProtocolError("protocol_version out of range");
        return msg::Hello{str(j, "client_name"), static_cast<std::uint32_t>(version)};
    }
    if (type == "welcome") {
        msg::Welcome w{u64(j, "client_id"), {}};
        const Json& names = field(j, "doc_names");
        if (!names.is_array()) throw ProtocolError("doc_names must be an array");
        for (const auto& n : names) {
            if (!n.is_string()) throw ProtocolError("doc_names entries must be strings");
            w.doc_names.push_back(n.get<std::string>());
        }
        return w;
    }
    if (type == "open") {
        msg::Open o{str(j, "doc"), false};
        if (auto it = j.find("create"); it != j.end()) {
            if (!it->is_boolean()) throw ProtocolError("create must be a boolean");
            o.create = it->get<bool>();
        }
        return o;
    }
    if (type == "snapshot") return msg::SnapshotMsg{str(j, "doc"), snapshot_from_json(field(j, "snapshot"))};
    if (type == "op") return msg::OpSubmit{str(j, "doc"), edit_op_from_json(field(j, "op"))};
    if (type == "applied")
        return msg::Applied{str(j, "doc"), u64(j, "version"), edit_op_from_json(field(j, "op")),
                            u64(j, "origin_client")};
    if (type == "reject") return msg::Reject{str(j, "doc"), op_id_from_json(field(j, "op_id")), str(j, "reason")};
    if (type == "presence")
        return msg::Presence{str(j, "doc"), u64(j, "client_id"), ray_from_json(field(j, "cursor"))};
    if (type == "doc_reloaded")
        return msg::DocReloaded{str(j, "doc"), snapshot_from_json(field(j, "snapshot")), u64(j, "dropped_op_count")};
    if (type == "ping") return msg::Ping{u64(j, "nonce")};
    if (type == "pong") return msg::Pong{u64(j, "nonce")};
    if (type == "error") return msg::Error{str(j, "code"), str(j, "detail")};
    throw ProtocolError("unknown message type '" + type + "'");
}

std::uint32_t read_be32(const std::byte* p) {
    return (std::to_integer<std::uint32_t>(p[0]) << 24) | (std::to_integer<std::uint32_t>(p[1]) << 16) |
           (std::to_integer<std::uint32_t>(p[2]) << 8) | std::to_integer<std::uint32_t>(p[3]);
}

} // namespace

std::string_view type_tag(const Message& m) { return std::visit(TagVisitor{}, m); }

std::string encode_payload(const Message& m) {
    std::string payload;
    try {
        payload = to_json(m).dump();
    } catch (const nlohmann::json::exception& e) {
        // Invalid UTF-8 in a string field.
        throw ProtocolError(std::string("unencodable message: ") + e.what());
    }
    if (payload.size() > kMaxFrameBytes) throw ProtocolError("oversize_message");
    return payload;
}

Message decode_payload(std::string_view payload) {
    Json j;
    try {
        j = Json::parse(payload.begin(), payload.end());
    } catch (const nlohmann::json::exception& e) {
        throw ProtocolError(std::string("malformed JSON: ") + e.what());
    }
    try {
        return from_json(j);
    } catch (const nlohmann::json::exception& e) {
        throw ProtocolError(std::string("bad message: ") + e.what());
    }
}

std::vector<std::byte> encode(const Message& m) {
    const std::string payload = encode_payload(m);
    const auto n = static_cast<std::uint32_t>(payload.size());
    std::vector<std::byte> frame(kFrameHeaderBytes + payload.size());
    frame[0] = std::byte(n >> 24);
    frame[1] = std::byte(n >> 16);
    frame[2] = std::byte(n >> 8);
    frame[3] = std::byte(n);
    std::memcpy(frame.data() + kFrameHeaderBytes, payload.data(), payload.size());
    return frame;
}

DecodeResult decode(std::span<const std::byte> buffer) {
    if (buffer.size() < kFrameHeaderBytes) return decode_result::NeedMoreData{};
    const std::uint32_t length = read_be32(buffer.data());
    if (length > kMaxFrameBytes)
        return decode_result::Invalid{"frame length " + std::to_string(length) + " exceeds limit"};
    if (buffer.size() < kFrameHeaderBytes + length) return decode_result::NeedMoreData{};
    std::string_view payload(reinterpret_cast<const char*>(buffer.data() + kFrameHeaderBytes), length);
    try {
        return decode_result::Decoded{decode_payload(payload), kFrameHeaderBytes + length};
    } catch (const ProtocolError& e) {
        return decode_result::Invalid{e.what()};
    }
}

void FrameReader::feed(std::span<const std::byte> bytes) {
    if (offset_ > 0 && offset_ == buffer_.size()) {
        buffer_.clear();
        offset_ = 0;
    }
    buffer_.insert(buffer_.end(), bytes.begin(), bytes.end());
}

std::optional<Message> FrameReader::next() {
    auto result = decode(std::span(buffer_).subspan(offset_));
    if (auto* done = std::get_if<decode_result::Decoded>(&result)) {
        offset_ += done->consumed;
        if (offset_ > 4096 && offset_ * 2 > buffer_.size()) {
            buffer_.erase(buffer_.begin(), buffer_.begin() + static_cast<std::ptrdiff_t>(offset_));
            offset_ = 0;
        }
        return std::move(done->message);
    }
    if (auto* bad = std::get_if<decode_result::Invalid>(&result)) throw ProtocolError(bad->detail);
    return std::nullopt;
}

namespace {

const Atom* find_atom(const Snapshot& s, AtomId id) {
    auto it = std::lower_bound(s.atoms.begin(), s.atoms.end(), id,
                               [](const Atom& a, AtomId v) { return a.id < v; });
    return it != s.atoms.end() && it->id == id ? &*it : nullptr;
}

bool has_bond(const Snapshot& s, AtomId x, AtomId y) {
    return std::binary_search(s.bonds.begin(), s.bonds.end(), Bond::between(x, y));
}

} // namespace

std::optional<RejectReason> validate_op(const EditOp& edit, const Snapshot& s) {
    auto present = [&](AtomId id) { return find_atom(s, id) != nullptr; };
    return std::visit(
        [&](const auto& p) -> std::optional<RejectReason> {
            using T = std::decay_t<decltype(p)>;
            if constexpr (std::is_same_v<T, op::AddAtom>) {
                if (!is_finite(p.position)) return RejectReason::NonfinitePosition;
                if (!is_valid_element(p.element)) return RejectReason::BadElement;
                if (present(p.id)) return RejectReason::DuplicateAtom;
            } else if constexpr (std::is_same_v<T, op::RemoveAtom>) {
                if (!present(p.id)) return RejectReason::MissingAtom;
            } else if constexpr (std::is_same_v<T, op::AddBond>) {
                if (p.a == p.b) return RejectReason::SelfBond;
                if (!present(p.a) || !present(p.b)) return RejectReason::MissingAtom;
                if (has_bond(s, p.a, p.b)) return RejectReason::DuplicateBond;
            } else if constexpr (std::is_same_v<T, op::RemoveBond>) {
                if (!present(p.a) || !present(p.b)) return RejectReason::MissingAtom;
                if (!has_bond(s, p.a, p.b)) return RejectReason::MissingBond;
            } else if constexpr (std::is_same_v<T, op::SetElement>) {
                if (!is_valid_element(p.element)) return RejectReason::BadElement;
                if (!present(p.id)) return RejectReason::MissingAtom;
            } else if constexpr (std::is_same_v<T, op::MoveAtom>) {
                if (!is_finite(p.position)) return RejectReason::NonfinitePosition;
                if (!present(p.id)) return RejectReason::MissingAtom;
            }
            return std::nullopt;
        },
        edit.payload);
}

} // namespace snbviz
