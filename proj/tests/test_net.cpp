#include "doctest.h"

#include <boost/asio/connect.hpp>
#include <boost/asio/ip/tcp.hpp>
#include <boost/beast/core.hpp>
#include <boost/beast/websocket.hpp>
#include <filesystem>
#include <fstream>
#include <random>
#include <thread>

#include "snbviz/live_client.hpp"
#include "snbviz/net_server.hpp"
#include "snbviz/snb_ingest.hpp"

using namespace snbviz;
namespace fs = std::filesystem;
using namespace std::chrono_literals;

namespace {

struct TempDir {
    fs::path path;
    TempDir() {
        path = fs::temp_directory_path() / ("snbviz-net-" + std::to_string(std::random_device{}()));
        fs::create_directories(path);
    }
    ~TempDir() { fs::remove_all(path); }
};

/// NetServer on ephemeral ports, running on its own thread.
struct RunningServer {
    std::unique_ptr<NetServer> server;
    std::thread thread;

    explicit RunningServer(ServerConfig cfg) {
        cfg.tcp_listen = "127.0.0.1:0";
        cfg.ws_listen = "127.0.0.1:0";
        server = std::make_unique<NetServer>(std::move(cfg));
        server->start();
        thread = std::thread([this] { server->run(); });
    }
    ~RunningServer() { stop(); }

    void stop(bool crash = false) {
        if (!thread.joinable()) return;
        if (crash) server->abort();
        else server->stop();
        thread.join();
    }
    std::string address() const { return "127.0.0.1:" + std::to_string(server->tcp_port()); }
};

ServerConfig config_in(const TempDir& dir) {
    ServerConfig cfg;
    cfg.data_dir = dir.path / "data";
    return cfg;
}

void write(const fs::path& p, const std::string& text) { std::ofstream(p, std::ios::binary) << text; }

} // namespace

TEST_CASE("clients open documents and see the same snapshot") {
    TempDir dir;
    RunningServer srv(config_in(dir));
    auto a = LiveClient::connect(srv.address());
    a->open("mol", true);
    REQUIRE(std::holds_alternative<submit_outcome::Applied>(
        a->submit_and_await("mol", op::AddAtom{1, {0, 0, 0}, "C"}, 5s)));
    REQUIRE(std::holds_alternative<submit_outcome::Applied>(
        a->submit_and_await("mol", op::AddAtom{2, {1.5, 0, 0}, "C"}, 5s)));

    auto b = LiveClient::connect(srv.address());
    CHECK(b->welcome_doc_names() == std::vector<std::string>{"mol"});
    auto c = connect_and_open(srv.address(), "mol");
    const ClientDoc& bd = b->open("mol");
    CHECK(bd.local_snapshot() == a->find_doc("mol")->local_snapshot());
    CHECK(bd.local_snapshot() == c->find_doc("mol")->local_snapshot());
    CHECK(bd.local_snapshot().atoms.size() == 2);

    try {
        b->open("nothing");
        FAIL("opened a missing document");
    } catch (const ClientError& e) {
        CHECK(e.code() == "unknown_document");
    }
}

TEST_CASE("applied edits reach every replica; a concurrent duplicate is rejected") {
    TempDir dir;
    RunningServer srv(config_in(dir));
    auto a = connect_and_open(srv.address(), "d", true);
    const OpPayload atoms[] = {op::AddAtom{1, {0, 0, 0}, "C"}, op::AddAtom{2, {1, 0, 0}, "O"}};
    for (const auto& o : a->submit_all("d", atoms, 5s)) CHECK(std::holds_alternative<submit_outcome::Applied>(o));
    auto b = connect_and_open(srv.address(), "d");

    // Both send AddBond(1,2) before either hears back.
    b->send(b->find_doc("d")->prepare(op::AddBond{1, 2}));
    const auto first = a->submit_and_await("d", op::AddBond{2, 1}, 5s);
    auto answer = b->wait_for(
        [](const Message& m) { return std::holds_alternative<msg::Applied>(m) || std::holds_alternative<msg::Reject>(m); },
        5s);
    REQUIRE(answer);
    // Drain until both replicas have seen the winning Applied.
    a->wait_for([](const Message&) { return false; }, 200ms);
    b->wait_for([](const Message&) { return false; }, 200ms);

    const bool a_won = std::holds_alternative<submit_outcome::Applied>(first);
    if (a_won) {
        REQUIRE(std::holds_alternative<msg::Applied>(*answer)); // b first hears a's Applied
        CHECK(b->find_doc("d")->rejected() == 1);
    } else {
        CHECK(std::get<submit_outcome::Rejected>(first).reason == "duplicate_bond");
    }
    CHECK(a->find_doc("d")->local_snapshot() == b->find_doc("d")->local_snapshot());
    CHECK(a->find_doc("d")->local().has_bond(1, 2));
}

TEST_CASE("a stopped server turns outstanding submits into timeouts") {
    TempDir dir;
    RunningServer srv(config_in(dir));
    auto a = connect_and_open(srv.address(), "d", true);
    srv.stop();
    const auto outcome = a->submit_and_await("d", op::AddAtom{1, {0, 0, 0}, "C"}, 2s);
    CHECK(std::holds_alternative<submit_outcome::Timeout>(outcome));
    CHECK_FALSE(a->connected());
}

TEST_CASE("protocol version mismatch and bad addresses") {
    TempDir dir;
    RunningServer srv(config_in(dir));
    try {
        LiveClient::connect(srv.address(), "old", 2s, kProtocolVersion + 1);
        FAIL("handshake accepted");
    } catch (const ClientError& e) {
        CHECK(e.code() == "bad_protocol_version");
    }
    CHECK_THROWS_AS(LiveClient::connect("127.0.0.1:1"), ClientError);
    CHECK_THROWS_AS(LiveClient::connect("no-port"), ClientError);
}

TEST_CASE("edit scripts") {
    TempDir dir;
    RunningServer srv(config_in(dir));
    auto ok = run_script_text("open s\nadd-atom 1 0 0 0 C\nadd-atom 2 1.5 0 0\n# comment\nadd-bond 1 2\nexpect-bonds 1\n"
                              "expect-atoms 2\n",
                              srv.address());
    CHECK(ok.exit_code == 0);
    CHECK(ok.commands_run == 6);

    auto wrong = run_script_text("open s\nexpect-atoms 5\n", srv.address());
    CHECK(wrong.exit_code != 0);
    CHECK(wrong.failed_line == 2);
    CHECK(wrong.message.find("line 2") != std::string::npos);

    auto rejected = run_script_text("open s\nadd-bond 1 2\n", srv.address());
    CHECK(rejected.exit_code != 0);
    CHECK(rejected.message.find("duplicate_bond") != std::string::npos);

    auto syntax = run_script_text("open s\nfrobnicate 1\n", srv.address());
    CHECK(syntax.exit_code != 0);
    CHECK(syntax.failed_line == 2);
    CHECK(syntax.commands_run == 0);

    CHECK(run_script_text("", "127.0.0.1:1").exit_code == 0);
    CHECK(run_script_text("# nothing\n\n", "127.0.0.1:1").exit_code == 0);
    CHECK(run_script_text("open s\n", "127.0.0.1:1").exit_code != 0);

    const fs::path script = dir.path / "s.txt";
    write(script, "open t\nadd-atom 1 0 0 0 N\nexpect-atoms 1\n");
    CHECK(run_script(script.string(), srv.address()).exit_code == 0);
}

TEST_CASE("import uploads atoms then bonds") {
    TempDir dir;
    RunningServer srv(config_in(dir));
    const fs::path xyz = dir.path / "w.xyz";
    write(xyz, "3\nwater\nO 0 0 0\nH 0.96 0 0\nH -0.24 0.93 0\n");
    const ImportReport r = import_file(xyz.string(), srv.address(), "water", 1.1);
    CHECK(r.applied == 5);
    CHECK(r.rejected == 0);
    CHECK(r.timed_out == 0);
    auto c = connect_and_open(srv.address(), "water");
    CHECK(c->find_doc("water")->local().bonds().size() == 2);

    const ImportReport again = import_file(xyz.string(), srv.address(), "water", 1.1);
    CHECK(again.rejected == 5);
}

TEST_CASE("websocket clients speak the same JSON payloads") {
    namespace beast = boost::beast;
    namespace net = boost::asio;
    TempDir dir;
    RunningServer srv(config_in(dir));
    auto tcp = connect_and_open(srv.address(), "d", true);

    net::io_context ioc;
    net::ip::tcp::resolver resolver(ioc);
    beast::websocket::stream<beast::tcp_stream> ws(ioc);
    auto results = resolver.resolve("127.0.0.1", std::to_string(srv.server->ws_port()));
    beast::get_lowest_layer(ws).connect(results);
    ws.handshake("127.0.0.1", "/");
    ws.binary(true);

    auto roundtrip = [&](const Message& m) {
        ws.write(net::buffer(encode_payload(m)));
        beast::flat_buffer buf;
        ws.read(buf);
        return decode_payload(beast::buffers_to_string(buf.data()));
    };
    auto welcome = roundtrip(msg::Hello{"browser", kProtocolVersion});
    REQUIRE(std::holds_alternative<msg::Welcome>(welcome));
    CHECK(std::get<msg::Welcome>(welcome).doc_names == std::vector<std::string>{"d"});
    auto snap = roundtrip(msg::Open{"d", false});
    REQUIRE(std::holds_alternative<msg::SnapshotMsg>(snap));
    auto applied = roundtrip(msg::OpSubmit{"d", {{0, 1}, op::AddAtom{1, {0, 0, 0}, "C"}}});
    REQUIRE(std::holds_alternative<msg::Applied>(applied));
    CHECK(std::get<msg::Applied>(applied).version == 1);

    // The TCP client sees the browser's edit.
    auto seen = tcp->wait_for([](const Message& m) { return std::holds_alternative<msg::Applied>(m); }, 5s);
    REQUIRE(seen);
    CHECK(tcp->find_doc("d")->local().atoms().size() == 1);

    // Garbage closes the socket with an error message.
    ws.write(net::buffer(std::string("{oops")));
    beast::flat_buffer buf;
    ws.read(buf);
    auto err = decode_payload(beast::buffers_to_string(buf.data()));
    CHECK(std::holds_alternative<msg::Error>(err));
    beast::error_code ec;
    ws.close(beast::websocket::close_code::normal, ec);
}

TEST_CASE("state survives a clean restart and a crash") {
    TempDir dir;
    std::string text_before;
    Version version_before = 0;
    {
        RunningServer srv(config_in(dir));
        auto a = connect_and_open(srv.address(), "p", true);
        const OpPayload ops[] = {op::AddAtom{1, {0.12345, 0, 0}, "C"}, op::AddAtom{2, {1.5, 0, 0}, "C"},
                                 op::AddBond{1, 2}};
        a->submit_all("p", ops, 5s);
        srv.server->checkpoint_now();
        a->submit_and_await("p", op::SetElement{2, "N"}, 5s);
        text_before = serialize_snbg(a->find_doc("p")->local_snapshot());
        version_before = a->find_doc("p")->last_seen_version();
        srv.stop(/*crash=*/true);
    }
    {
        RunningServer srv(config_in(dir));
        auto a = connect_and_open(srv.address(), "p");
        CHECK(a->find_doc("p")->last_seen_version() == version_before);
        CHECK(serialize_snbg(a->find_doc("p")->local_snapshot()) == text_before);
        a->submit_and_await("p", op::RemoveBond{1, 2}, 5s);
        srv.stop();
    }
    {
        RunningServer srv(config_in(dir));
        auto a = connect_and_open(srv.address(), "p");
        CHECK(a->find_doc("p")->last_seen_version() == version_before + 1);
        CHECK(a->find_doc("p")->local().bonds().empty());
    }
}

TEST_CASE("watched file edits are pushed to connected clients") {
    TempDir dir;
    fs::create_directories(dir.path / "watch");
    const fs::path file = dir.path / "watch" / "live.snbg";
    write(file, "ATOMS 2\n1 0 0 0 C\n2 1.4 0 0 C\nBONDS 0\n");
    ServerConfig cfg = config_in(dir);
    cfg.watch_dirs = {dir.path / "watch"};
    cfg.poll_interval = 100ms;
    RunningServer srv(cfg);

    std::unique_ptr<LiveClient> a;
    for (int tries = 0; tries < 50 && !a; ++tries) {
        try {
            a = connect_and_open(srv.address(), "live");
        } catch (const ClientError&) {
            std::this_thread::sleep_for(20ms);
        }
    }
    REQUIRE(a);
    REQUIRE(std::holds_alternative<submit_outcome::Applied>(a->submit_and_await("live", op::AddBond{1, 2}, 5s)));

    write(file, "ATOMS 3\n1 0 0 0 C\n2 1.4 0 0 C\n3 2.8 0 0 O\nBONDS 0\n");
    auto reloaded = a->wait_for([](const Message& m) { return std::holds_alternative<msg::DocReloaded>(m); }, 5s);
    REQUIRE(reloaded);
    CHECK(std::get<msg::DocReloaded>(*reloaded).dropped_op_count == 0);
    CHECK(a->find_doc("live")->local().atoms().size() == 3);
    CHECK(a->find_doc("live")->local().has_bond(1, 2));
}
