#include "snbviz/live_client.hpp"

#include <array>
#include <cerrno>
#include <cstring>
#include <fstream>
#include <netdb.h>
#include <netinet/in.h>
#include <netinet/tcp.h>
#include <sstream>
#include <sys/socket.h>
#include <unistd.h>

#include "snbviz/net_server.hpp"
#include "snbviz/snb_ingest.hpp"

namespace snbviz {

namespace {

int dial(const std::string& address) {
    std::pair<std::string, std::uint16_t> hp;
    try {
        hp = split_host_port(address);
    } catch (const std::invalid_argument& e) {
        throw ClientError("connect_failed", e.what());
    }
    if (hp.first == "0.0.0.0") hp.first = "127.0.0.1";

    addrinfo hints{};
    hints.ai_family = AF_UNSPEC;
    hints.ai_socktype = SOCK_STREAM;
    addrinfo* found = nullptr;
    const std::string port = std::to_string(hp.second);
    if (int rc = ::getaddrinfo(hp.first.c_str(), port.c_str(), &hints, &found); rc != 0)
        throw ClientError("connect_failed", address + ": " + ::gai_strerror(rc));

    std::string last_error = "no addresses";
    for (addrinfo* ai = found; ai; ai = ai->ai_next) {
        int fd = ::socket(ai->ai_family, ai->ai_socktype | SOCK_CLOEXEC, ai->ai_protocol);
        if (fd < 0) {
            last_error = std::strerror(errno);
            continue;
        }
        if (::connect(fd, ai->ai_addr, ai->ai_addrlen) == 0) {
            int one = 1;
            ::setsockopt(fd, IPPROTO_TCP, TCP_NODELAY, &one, sizeof one);
            ::freeaddrinfo(found);
            return fd;
        }
        last_error = std::strerror(errno);
        ::close(fd);
    }
    ::freeaddrinfo(found);
    throw ClientError("connect_failed", address + ": " + last_error);
}

} // namespace

LiveClient::LiveClient(int fd) : fd_(fd) { reader_ = std::thread([this] { reader_loop(); }); }

LiveClient::~LiveClient() { close(); }

std::unique_ptr<LiveClient> LiveClient::connect(const std::string& address, const std::string& client_name,
                                                std::chrono::milliseconds timeout, std::uint32_t protocol_version) {
    std::unique_ptr<LiveClient> client(new LiveClient(dial(address)));
    client->send(msg::Hello{client_name, protocol_version});
    auto reply = client->wait_for(
        [](const Message& m) { return std::holds_alternative<msg::Welcome>(m) || std::holds_alternative<msg::Error>(m); },
        timeout);
    if (!reply) throw ClientError("timeout", "no welcome from " + address);
    if (const auto* error = std::get_if<msg::Error>(&*reply)) throw ClientError(error->code, error->detail);
    const auto& welcome = std::get<msg::Welcome>(*reply);
    client->id_ = welcome.client_id;
    client->doc_names_ = welcome.doc_names;
    return client;
}

void LiveClient::reader_loop() {
    FrameReader reader;
    std::array<std::byte, 64 * 1024> buffer{};
    std::string reason = "connection closed";
    for (;;) {
        ssize_t n = ::recv(fd_, buffer.data(), buffer.size(), 0);
        if (n < 0 && errno == EINTR) continue;
        if (n <= 0) {
            if (n < 0) reason = std::strerror(errno);
            break;
        }
        reader.feed(std::span(buffer.data(), static_cast<std::size_t>(n)));
        try {
            std::vector<Message> batch;
            while (auto m = reader.next()) batch.push_back(std::move(*m));
            if (!batch.empty()) {
                std::lock_guard lock(mutex_);
                for (auto& m : batch) inbox_.push_back(std::move(m));
                cv_.notify_all();
            }
        } catch (const ProtocolError& e) {
            reason = std::string("protocol error: ") + e.what();
            break;
        }
    }
    std::lock_guard lock(mutex_);
    closed_ = true;
    close_reason_ = reason;
    cv_.notify_all();
}

bool LiveClient::connected() const {
    std::lock_guard lock(mutex_);
    return !closed_;
}

void LiveClient::close() {
    if (fd_ < 0) return;
    ::shutdown(fd_, SHUT_RDWR);
    if (reader_.joinable()) reader_.join();
    ::close(fd_);
    fd_ = -1;
}

void LiveClient::send(const Message& m) {
    const std::vector<std::byte> frame = encode(m);
    std::lock_guard lock(write_mutex_);
    std::size_t sent = 0;
    while (sent < frame.size()) {
        ssize_t n = ::send(fd_, frame.data() + sent, frame.size() - sent, MSG_NOSIGNAL);
        if (n < 0 && errno == EINTR) continue;
        if (n <= 0) return; // the reader notices the broken connection
        sent += static_cast<std::size_t>(n);
    }
}

std::optional<Message> LiveClient::pop_until(Clock::time_point deadline) {
    std::optional<Message> m;
    {
        std::unique_lock lock(mutex_);
        cv_.wait_until(lock, deadline, [this] { return !inbox_.empty() || closed_; });
        if (inbox_.empty()) return std::nullopt;
        m = std::move(inbox_.front());
        inbox_.pop_front();
    }
    fold(*m);
    return m;
}

void LiveClient::fold(const Message& m) {
    for (auto& [name, doc] : docs_) doc.on_message(m);
    if (const auto* a = std::get_if<msg::Applied>(&m); a && a->origin_client == id_) {
        auto it = answers_.find({a->doc, a->op.op_id.seq});
        if (it != answers_.end()) it->second = submit_outcome::Applied{a->version};
    } else if (const auto* r = std::get_if<msg::Reject>(&m); r && r->op_id.client == id_) {
        auto it = answers_.find({r->doc, r->op_id.seq});
        if (it != answers_.end()) it->second = submit_outcome::Rejected{r->reason};
    }
}

std::optional<Message> LiveClient::next_message(std::chrono::milliseconds timeout) {
    return pop_until(Clock::now() + timeout);
}

std::optional<Message> LiveClient::wait_for(const std::function<bool(const Message&)>& pred,
                                            std::chrono::milliseconds timeout) {
    const auto deadline = Clock::now() + timeout;
    while (auto m = pop_until(deadline))
        if (pred(*m)) return m;
    return std::nullopt;
}

ClientDoc& LiveClient::open(const std::string& doc, bool create, std::chrono::milliseconds timeout) {
    docs_[doc] = ClientDoc(doc, id_);
    send(msg::Open{doc, create});
    auto reply = wait_for(
        [&](const Message& m) {
            if (const auto* s = std::get_if<msg::SnapshotMsg>(&m)) return s->doc == doc;
            if (const auto* e = std::get_if<msg::Error>(&m))
                return e->code == "unknown_document" || e->code == "bad_document_name";
            return false;
        },
        timeout);
    if (!reply) {
        docs_.erase(doc);
        throw ClientError("timeout", "no snapshot for '" + doc + "'");
    }
    if (const auto* error = std::get_if<msg::Error>(&*reply)) {
        docs_.erase(doc);
        throw ClientError(error->code, error->detail);
    }
    return docs_.at(doc);
}

ClientDoc* LiveClient::find_doc(const std::string& doc) {
    auto it = docs_.find(doc);
    return it == docs_.end() ? nullptr : &it->second;
}

SubmitOutcome LiveClient::submit_and_await(const std::string& doc, OpPayload payload,
                                           std::chrono::milliseconds timeout) {
    auto results = submit_all(doc, std::span(&payload, 1), timeout);
    return results.front();
}

std::vector<SubmitOutcome> LiveClient::submit_all(const std::string& doc, std::span<const OpPayload> payloads,
                                                  std::chrono::milliseconds timeout) {
    auto it = docs_.find(doc);
    if (it == docs_.end()) throw ClientError("not_open", doc);
    std::vector<std::uint64_t> seqs;
    seqs.reserve(payloads.size());
    for (const auto& payload : payloads) {
        msg::OpSubmit submit = it->second.prepare(payload);
        seqs.push_back(submit.op.op_id.seq);
        answers_[{doc, submit.op.op_id.seq}] = std::nullopt;
        send(submit);
    }

    const auto deadline = Clock::now() + timeout;
    std::size_t answered = 0;
    auto count_answered = [&] {
        answered = 0;
        for (auto seq : seqs)
            if (answers_.at({doc, seq})) ++answered;
    };
    count_answered();
    while (answered < seqs.size()) {
        auto m = pop_until(deadline);
        if (!m) break;
        if (std::holds_alternative<msg::Applied>(*m) || std::holds_alternative<msg::Reject>(*m)) count_answered();
    }

    std::vector<SubmitOutcome> out;
    out.reserve(seqs.size());
    for (auto seq : seqs) {
        auto node = answers_.extract({doc, seq});
        out.push_back(node.mapped() ? *node.mapped() : SubmitOutcome{submit_outcome::Timeout{}});
    }
    return out;
}

std::unique_ptr<LiveClient> connect_and_open(const std::string& address, const std::string& doc, bool create) {
    auto client = LiveClient::connect(address);
    client->open(doc, create);
    return client;
}

namespace {

struct ScriptCommand {
    std::size_t line = 0;
    std::string verb;
    std::vector<std::string> args;
};

std::vector<std::string> tokenize(const std::string& line) {
    std::istringstream in(line);
    std::vector<std::string> out;
    for (std::string t; in >> t;) out.push_back(t);
    return out;
}

AtomId to_id(const std::string& s) {
    std::size_t used = 0;
    if (s.empty() || s.front() == '-') throw std::invalid_argument("bad id");
    auto v = std::stoull(s, &used);
    if (used != s.size()) throw std::invalid_argument("bad id");
    return v;
}

double to_real(const std::string& s) {
    std::size_t used = 0;
    double v = std::stod(s, &used);
    if (used != s.size()) throw std::invalid_argument("bad number");
    return v;
}

std::optional<std::string> check_arity(const ScriptCommand& c) {
    static const std::map<std::string, std::pair<std::size_t, std::size_t>> kArity = {
        {"open", {1, 1}},       {"add-atom", {4, 5}},    {"add-bond", {2, 2}},    {"remove-bond", {2, 2}},
        {"remove-atom", {1, 1}}, {"set-element", {2, 2}}, {"move-atom", {4, 4}},   {"expect-atoms", {1, 1}},
        {"expect-bonds", {1, 1}},
    };
    auto it = kArity.find(c.verb);
    if (it == kArity.end()) return "unknown command '" + c.verb + "'";
    if (c.args.size() < it->second.first || c.args.size() > it->second.second)
        return "wrong number of arguments for '" + c.verb + "'";
    return std::nullopt;
}

/// Op payload for an editing command; nullopt for open/expect-*.
std::optional<OpPayload> to_payload(const ScriptCommand& c) {
    const auto& a = c.args;
    if (c.verb == "add-atom")
        return op::AddAtom{to_id(a[0]), {to_real(a[1]), to_real(a[2]), to_real(a[3])},
                           a.size() == 5 ? a[4] : std::string(kUnassignedElement)};
    if (c.verb == "add-bond") return op::AddBond{to_id(a[0]), to_id(a[1])};
    if (c.verb == "remove-bond") return op::RemoveBond{to_id(a[0]), to_id(a[1])};
    if (c.verb == "remove-atom") return op::RemoveAtom{to_id(a[0])};
    if (c.verb == "set-element") return op::SetElement{to_id(a[0]), a[1]};
    if (c.verb == "move-atom") return op::MoveAtom{to_id(a[0]), {to_real(a[1]), to_real(a[2]), to_real(a[3])}};
    return std::nullopt;
}

ScriptReport fail_at(std::size_t line, int code, const std::string& message, std::size_t run) {
    return {code, line, "line " + std::to_string(line) + ": " + message, run};
}

} // namespace

ScriptReport run_script_text(const std::string& text, const std::string& address,
                             std::chrono::milliseconds op_timeout) {
    std::vector<ScriptCommand> commands;
    std::istringstream in(text);
    std::size_t line_no = 0;
    for (std::string line; std::getline(in, line);) {
        ++line_no;
        auto tokens = tokenize(line);
        if (tokens.empty() || tokens.front().starts_with('#')) continue;
        ScriptCommand c{line_no, tokens.front(), {tokens.begin() + 1, tokens.end()}};
        if (auto problem = check_arity(c)) return fail_at(line_no, 2, *problem, 0);
        try {
            to_payload(c);
            if (c.verb.starts_with("expect-")) to_id(c.args[0]);
        } catch (const std::exception&) {
            return fail_at(line_no, 2, "malformed arguments for '" + c.verb + "'", 0);
        }
        commands.push_back(std::move(c));
    }

    std::unique_ptr<LiveClient> client;
    std::string doc;
    std::size_t run = 0;
    for (const auto& c : commands) {
        try {
            if (!client) client = LiveClient::connect(address, "snbviz-script");
            if (c.verb == "open") {
                doc = c.args[0];
                client->open(doc, true);
            } else if (doc.empty()) {
                return fail_at(c.line, 1, "no document open", run);
            } else if (c.verb == "expect-atoms" || c.verb == "expect-bonds") {
                const auto want = to_id(c.args[0]);
                const MoleculeDoc& local = client->find_doc(doc)->local();
                const auto have = c.verb == "expect-atoms" ? local.atoms().size() : local.bonds().size();
                if (have != want)
                    return fail_at(c.line, 1,
                                   c.verb + " " + std::to_string(want) + " but document has " + std::to_string(have),
                                   run);
            } else {
                auto outcome = client->submit_and_await(doc, *to_payload(c), op_timeout);
                if (auto* rejected = std::get_if<submit_outcome::Rejected>(&outcome))
                    return fail_at(c.line, 1, c.verb + " rejected: " + rejected->reason, run);
                if (std::holds_alternative<submit_outcome::Timeout>(outcome))
                    return fail_at(c.line, 1, c.verb + " timed out", run);
            }
        } catch (const ClientError& e) {
            return fail_at(c.line, 3, e.what(), run);
        }
        ++run;
    }
    return {0, 0, "ok", run};
}

ScriptReport run_script(const std::string& path, const std::string& address, std::chrono::milliseconds op_timeout) {
    std::ifstream in(path);
    if (!in) return {2, 0, "cannot read script " + path, 0};
    std::ostringstream buf;
    buf << in.rdbuf();
    return run_script_text(buf.str(), address, op_timeout);
}

ImportReport import_file(const std::string& path, const std::string& address, const std::string& doc,
                         double bond_threshold, std::chrono::milliseconds timeout) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("cannot read " + path);
    std::ostringstream buf;
    buf << in.rdbuf();
    const Snapshot s = load_structure_text(path, buf.str(), bond_threshold);

    std::vector<OpPayload> payloads;
    payloads.reserve(s.atoms.size() + s.bonds.size());
    for (const auto& atom : s.atoms) payloads.push_back(op::AddAtom{atom.id, atom.position, atom.element});
    for (const auto& bond : s.bonds) payloads.push_back(op::AddBond{bond.a, bond.b});

    auto client = LiveClient::connect(address, "snbviz-import");
    client->open(doc, true);
    ImportReport report;
    for (const auto& outcome : client->submit_all(doc, payloads, timeout)) {
        if (std::holds_alternative<submit_outcome::Applied>(outcome)) ++report.applied;
        else if (std::holds_alternative<submit_outcome::Rejected>(outcome)) ++report.rejected;
        else ++report.timed_out;
    }
    return report;
}

} // namespace snbviz
