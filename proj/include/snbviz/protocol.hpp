#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

#include "snbviz/molecular_graph.hpp"
#include "snbviz/pick_geometry.hpp"

namespace snbviz {

inline constexpr std::uint32_t kProtocolVersion = 1;
inline constexpr std::size_t kMaxFrameBytes = 16u * 1024u * 1024u;
inline constexpr std::size_t kFrameHeaderBytes = 4;

namespace msg {

struct Hello {
    std::string client_name;
    std::uint32_t protocol_version = kProtocolVersion;
    friend bool operator==(const Hello&, const Hello&) = default;
};
struct Welcome {
    ClientId client_id = 0;
    std::vector<std::string> doc_names;
    friend bool operator==(const Welcome&, const Welcome&) = default;
};
/// `create` asks the server to make an empty edited document when `doc` does not exist.
struct Open {
    std::string doc;
    bool create = false;
    friend bool operator==(const Open&, const Open&) = default;
};
struct SnapshotMsg {
    std::string doc;
    Snapshot snapshot;
    friend bool operator==(const SnapshotMsg&, const SnapshotMsg&) = default;
};
struct OpSubmit {
    std::string doc;
    EditOp op;
    friend bool operator==(const OpSubmit&, const OpSubmit&) = default;
};
struct Applied {
    std::string doc;
    Version version = 0;
    EditOp op;
    ClientId origin_client = 0;
    friend bool operator==(const Applied&, const Applied&) = default;
};
struct Reject {
    std::string doc;
    OpId op_id;
    std::string reason;
    friend bool operator==(const Reject&, const Reject&) = default;
};
struct Presence {
    std::string doc;
    ClientId client_id = 0;
    Ray cursor;
    friend bool operator==(const Presence&, const Presence&) = default;
};
struct DocReloaded {
    std::string doc;
    Snapshot snapshot;
    std::uint64_t dropped_op_count = 0;
    friend bool operator==(const DocReloaded&, const DocReloaded&) = default;
};
struct Ping {
    std::uint64_t nonce = 0;
    friend bool operator==(const Ping&, const Ping&) = default;
};
struct Pong {
    std::uint64_t nonce = 0;
    friend bool operator==(const Pong&, const Pong&) = default;
};
struct Error {
    std::string code;
    std::string detail;
    friend bool operator==(const Error&, const Error&) = default;
};

} // namespace msg

using Message = std::variant<msg::Hello, msg::Welcome, msg::Open, msg::SnapshotMsg, msg::OpSubmit, msg::Applied,
                             msg::Reject, msg::Presence, msg::DocReloaded, msg::Ping, msg::Pong, msg::Error>;

/// Wire `"type"` tag of a message.
std::string_view type_tag(const Message& m);

class ProtocolError : public std::runtime_error {
public:
    explicit ProtocolError(const std::string& what) : std::runtime_error(what) {}
};

/// JSON payload without framing (the WebSocket transport carries exactly this).
/// Throws ProtocolError("oversize_message") past kMaxFrameBytes, or on non-finite numbers.
std::string encode_payload(const Message& m);

/// Parses one JSON payload. Throws ProtocolError on bad UTF-8, malformed JSON, unknown
/// type tag or missing/mistyped fields.
Message decode_payload(std::string_view payload);

/// Length-prefixed frame: 4-byte big-endian payload length, then the payload.
std::vector<std::byte> encode(const Message& m);

namespace decode_result {
struct Decoded {
    Message message;
    std::size_t consumed = 0;
};
struct NeedMoreData {};
struct Invalid {
    std::string detail;
};
} // namespace decode_result

using DecodeResult = std::variant<decode_result::Decoded, decode_result::NeedMoreData, decode_result::Invalid>;

/// Decodes at most one frame from the front of `buffer`; never consumes a partial frame.
DecodeResult decode(std::span<const std::byte> buffer);

/// Accumulates stream bytes and yields complete messages.
class FrameReader {
public:
    void feed(std::span<const std::byte> bytes);
    /// Next complete message, nullopt when more bytes are needed. Throws ProtocolError.
    std::optional<Message> next();
    std::size_t buffered() const { return buffer_.size() - offset_; }

private:
    std::vector<std::byte> buffer_;
    std::size_t offset_ = 0;
};

/// The precondition check the server runs before applying: exactly the reason apply_op on
/// restore(s) would reject with, or nullopt.
std::optional<RejectReason> validate_op(const EditOp& op, const Snapshot& s);

} // namespace snbviz
