#include <cstdlib>
#include <iostream>

#include <spdlog/spdlog.h>

#include "CLI11.hpp"
#include "snbviz/json_codec.hpp"
#include "snbviz/live_client.hpp"
#include "snbviz/net_server.hpp"
#include "snbviz/simulation.hpp"

using namespace snbviz;

namespace {

int serve(ServerConfig config) {
    config.validate();
    NetServer server(std::move(config));
    server.start();
    server.stop_on_signals();
    server.run();
    return 0;
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"snbviz: collaborative molecular graph server and tools"};
    app.require_subcommand(1);

    ServerConfig config;
    if (const char* env = std::getenv("SNBVIZ_DATA")) config.data_dir = env;
    std::string data_dir = config.data_dir.string();
    std::vector<std::string> watch_dirs;
    long poll_ms = config.poll_interval.count();
    long checkpoint_s = config.checkpoint_interval.count();
    std::string log_level = "info";
    auto* serve_cmd = app.add_subcommand("serve", "Run the server");
    serve_cmd->add_option("--tcp", config.tcp_listen, "TCP listen address")->capture_default_str();
    serve_cmd->add_option("--ws", config.ws_listen, "WebSocket listen address")->capture_default_str();
    serve_cmd->add_option("--data", data_dir, "Data directory (default $SNBVIZ_DATA)")->capture_default_str();
    serve_cmd->add_option("--watch", watch_dirs, "Directory to watch for .snbg/.xyz files");
    serve_cmd->add_option("--poll-ms", poll_ms, "Watch poll interval")->capture_default_str();
    serve_cmd->add_option("--bond-threshold", config.bond_threshold, "Bond inference cutoff in Å")
        ->capture_default_str();
    serve_cmd->add_option("--checkpoint-s", checkpoint_s, "Checkpoint interval")->capture_default_str();
    serve_cmd->add_option("--log-level", log_level, "trace, debug, info, warn, error")->capture_default_str();

    std::string address = "127.0.0.1:5150";
    std::string script;
    auto* edit_cmd = app.add_subcommand("edit", "Run an edit script against a server");
    edit_cmd->add_option("--connect", address)->capture_default_str();
    edit_cmd->add_option("--script", script)->required();

    std::string import_path, doc_name;
    double import_threshold = kDefaultBondThreshold;
    auto* import_cmd = app.add_subcommand("import", "Upload a .snbg or .xyz file as ops");
    import_cmd->add_option("file", import_path)->required();
    import_cmd->add_option("--connect", address)->capture_default_str();
    import_cmd->add_option("--doc", doc_name)->required();
    import_cmd->add_option("--bond-threshold", import_threshold)->capture_default_str();

    std::size_t clients = 3, ops = 100;
    std::uint64_t seed = 1;
    LatencyModel latency;
    auto* sim_cmd = app.add_subcommand("sim", "Simulated clients with random latency; prints a convergence report");
    sim_cmd->add_option("--clients", clients)->capture_default_str();
    sim_cmd->add_option("--ops", ops)->capture_default_str();
    sim_cmd->add_option("--seed", seed)->capture_default_str();
    sim_cmd->add_option("--min-lat", latency.min_ms, "ms")->capture_default_str();
    sim_cmd->add_option("--max-lat", latency.max_ms, "ms")->capture_default_str();

    std::size_t scenes = 20, rays = 50;
    auto* fixture_cmd = app.add_subcommand("pick-fixture", "Print golden pick vectors as JSON");
    fixture_cmd->add_option("--seed", seed)->capture_default_str();
    fixture_cmd->add_option("--scenes", scenes)->capture_default_str();
    fixture_cmd->add_option("--rays", rays)->capture_default_str();

    CLI11_PARSE(app, argc, argv);

    try {
        if (serve_cmd->parsed()) {
            spdlog::set_level(spdlog::level::from_str(log_level));
            config.data_dir = data_dir;
            config.watch_dirs.assign(watch_dirs.begin(), watch_dirs.end());
            config.poll_interval = std::chrono::milliseconds(poll_ms);
            config.checkpoint_interval = std::chrono::seconds(checkpoint_s);
            return serve(std::move(config));
        }
        if (edit_cmd->parsed()) {
            const ScriptReport r = run_script(script, address);
            if (r.exit_code != 0) std::cerr << r.message << '\n';
            return r.exit_code;
        }
        if (import_cmd->parsed()) {
            const ImportReport r = import_file(import_path, address, doc_name, import_threshold);
            std::cout << "applied " << r.applied << ", rejected " << r.rejected << ", timed out " << r.timed_out
                      << '\n';
            return r.rejected == 0 && r.timed_out == 0 ? 0 : 1;
        }
        if (sim_cmd->parsed()) {
            if (clients == 0) throw std::invalid_argument("--clients must be at least 1");
            if (latency.min_ms < 0 || latency.max_ms < latency.min_ms)
                throw std::invalid_argument("latency range must satisfy 0 <= min <= max");
            const ConvergenceReport r = simulate(clients, ops, latency, seed);
            std::cout << r.to_json() << '\n';
            return r.equal ? 0 : 1;
        }
        if (fixture_cmd->parsed()) {
            std::cout << json_codec::pick_fixtures(seed, scenes, rays).dump(1) << '\n';
            return 0;
        }
    } catch (const std::exception& e) {
        std::cerr << "snbviz: " << e.what() << '\n';
        return 2;
    }
    return 0;
}
