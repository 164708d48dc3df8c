#pragma once

#include <chrono>
#include <condition_variable>
#include <cstdint>
#include <deque>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <thread>
#include <variant>
#include <vector>

#include "snbviz/client_doc.hpp"
#include "snbviz/protocol.hpp"

namespace snbviz {

/// Handshake/transport failure: code is one of connect_failed, bad_protocol_version,
/// unknown_document, bad_document_name, timeout, protocol_error.
class ClientError : public std::runtime_error {
public:
    ClientError(std::string code, const std::string& detail)
        : std::runtime_error(code + ": " + detail), code_(std::move(code)) {}
    const std::string& code() const { return code_; }

private:
    std::string code_;
};

namespace submit_outcome {
struct Applied {
    Version version = 0;
};
struct Rejected {
    std::string reason;
};
struct Timeout {};
} // namespace submit_outcome

using SubmitOutcome = std::variant<submit_outcome::Applied, submit_outcome::Rejected, submit_outcome::Timeout>;

/// Blocking TCP client. A background reader feeds an ordered inbox; every received message is
/// folded into the matching ClientDoc when the caller drains the inbox.
class LiveClient {
public:
    using Clock = std::chrono::steady_clock;

    /// Connects and completes Hello/Welcome. Throws ClientError.
    static std::unique_ptr<LiveClient> connect(const std::string& address, const std::string& client_name = "snbviz",
                                               std::chrono::milliseconds timeout = std::chrono::seconds(5),
                                               std::uint32_t protocol_version = kProtocolVersion);
    ~LiveClient();
    LiveClient(const LiveClient&) = delete;
    LiveClient& operator=(const LiveClient&) = delete;

    ClientId id() const { return id_; }
    const std::vector<std::string>& welcome_doc_names() const { return doc_names_; }

    /// Opens `doc` and waits for its snapshot. Throws ClientError (unknown_document, timeout...).
    ClientDoc& open(const std::string& doc, bool create = false,
                    std::chrono::milliseconds timeout = std::chrono::seconds(5));

    ClientDoc* find_doc(const std::string& doc);

    /// Submits one op and waits for its Applied echo or Reject.
    SubmitOutcome submit_and_await(const std::string& doc, OpPayload payload, std::chrono::milliseconds timeout);

    /// Sends all ops back-to-back, then waits for every answer. Unanswered ops count as timeouts.
    std::vector<SubmitOutcome> submit_all(const std::string& doc, std::span<const OpPayload> payloads,
                                          std::chrono::milliseconds timeout);

    void send(const Message& m);

    /// Pops the next message (already folded into docs), or nullopt on timeout/closed.
    std::optional<Message> next_message(std::chrono::milliseconds timeout);

    /// Drains messages until `pred` holds for one of them or the deadline passes.
    std::optional<Message> wait_for(const std::function<bool(const Message&)>& pred, std::chrono::milliseconds timeout);

    bool connected() const;
    void close();

private:
    explicit LiveClient(int fd);
    void reader_loop();
    std::optional<Message> pop_until(Clock::time_point deadline);
    void fold(const Message& m);

    int fd_ = -1;
    ClientId id_ = 0;
    std::vector<std::string> doc_names_;
    std::map<std::string, ClientDoc> docs_;
    std::map<std::pair<std::string, std::uint64_t>, std::optional<SubmitOutcome>> answers_;

    mutable std::mutex mutex_;
    std::condition_variable cv_;
    std::deque<Message> inbox_;
    bool closed_ = false;
    std::string close_reason_;
    std::mutex write_mutex_;
    std::thread reader_;
};

/// Connects, handshakes and opens `doc` in one step.
std::unique_ptr<LiveClient> connect_and_open(const std::string& address, const std::string& doc, bool create = false);

struct ScriptReport {
    int exit_code = 0;
    std::size_t failed_line = 0;
    std::string message;
    std::size_t commands_run = 0;
};

/// Runs an edit script (one command per line, `#` comments). `open` creates missing documents.
/// Stops at the first failing line.
ScriptReport run_script_text(const std::string& text, const std::string& address,
                             std::chrono::milliseconds op_timeout = std::chrono::seconds(5));
ScriptReport run_script(const std::string& path, const std::string& address,
                        std::chrono::milliseconds op_timeout = std::chrono::seconds(5));

struct ImportReport {
    std::size_t applied = 0;
    std::size_t rejected = 0;
    std::size_t timed_out = 0;
};

/// Uploads a structure file into `doc` (created when missing) as AddAtom then AddBond ops.
ImportReport import_file(const std::string& path, const std::string& address, const std::string& doc,
                         double bond_threshold, std::chrono::milliseconds timeout = std::chrono::seconds(30));

} // namespace snbviz
