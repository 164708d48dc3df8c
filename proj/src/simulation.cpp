#include "snbviz/simulation.hpp"

#include <algorithm>
#include <cmath>
#include <iterator>
#include <set>

#include "json.hpp"
#include "snbviz/snb_ingest.hpp"

namespace snbviz {

std::int64_t uniform_int(std::mt19937_64& rng, std::int64_t lo, std::int64_t hi) {
    if (hi <= lo) return lo;
    const auto span = static_cast<std::uint64_t>(hi - lo) + 1;
    return lo + static_cast<std::int64_t>(rng() % span);
}

double uniform_real(std::mt19937_64& rng, double lo, double hi) {
    const double unit = static_cast<double>(rng() >> 11) * 0x1.0p-53;
    return lo + (hi - lo) * unit;
}

std::string ConvergenceReport::to_json() const {
    nlohmann::ordered_json j;
    j["equal"] = equal;
    j["server_hash"] = server_hash;
    j["client_hashes"] = client_hashes;
    j["ops_submitted"] = ops_submitted;
    j["ops_applied"] = ops_applied;
    j["ops_rejected"] = ops_rejected;
    j["client_acks"] = client_acks;
    return j.dump(2);
}

Simulation::Simulation(std::size_t n_clients, LatencyModel latency, std::uint64_t seed, Snapshot initial)
    : latency_(latency), rng_(seed) {
    server_.add_document(restore(initial, kDocName));
    trace_.initial = initial;
    clients_.resize(n_clients);
    for (std::size_t i = 0; i < n_clients; ++i) connect_client(i);
}

void Simulation::at(std::int64_t time, std::function<void()> action) {
    events_.push(Event{time, next_event_seq_++, std::move(action)});
}

std::int64_t Simulation::draw_delay() { return uniform_int(rng_, latency_.min_ms, latency_.max_ms); }

void Simulation::connect_client(std::size_t i) {
    SimClient& c = clients_[i];
    c.session = server_.connect();
    ++c.epoch;
    by_session_[c.session] = i;
    if (c.doc.name().empty())
        c.doc = ClientDoc(kDocName, c.session);
    else
        c.doc.reset_for_reconnect(c.session);
    send_to_server(i, msg::Hello{"sim-client-" + std::to_string(i), kProtocolVersion});
    send_to_server(i, msg::Open{kDocName, false});
}

void Simulation::send_to_server(std::size_t i, Message m) {
    SimClient& c = clients_[i];
    const std::int64_t t = std::max(now_ + draw_delay(), c.up_last);
    c.up_last = t;
    const std::uint64_t epoch = c.epoch;
    const ClientId session = c.session;
    at(t, [this, i, epoch, session, m = std::move(m)] {
        if (clients_[i].epoch != epoch) return;
        Outbox out = server_.handle_message(session, m, now_);
        collect_log();
        deliver_to_clients(out);
    });
}

void Simulation::deliver_to_clients(const Outbox& out) {
    for (const auto& o : out.messages) {
        auto it = by_session_.find(o.to);
        if (it == by_session_.end()) continue;
        const std::size_t i = it->second;
        SimClient& c = clients_[i];
        const std::int64_t t = std::max(now_ + draw_delay(), c.down_last);
        c.down_last = t;
        const std::uint64_t epoch = c.epoch;
        at(t, [this, i, epoch, m = o.message] {
            SimClient& target = clients_[i];
            if (target.epoch != epoch) return;
            if (std::holds_alternative<msg::Presence>(m)) ++target.presence_seen;
            target.doc.on_message(m);
        });
    }
    for (ClientId id : out.disconnect) {
        server_.disconnect(id);
        by_session_.erase(id);
    }
}

void Simulation::collect_log() {
    for (auto& [doc, entries] : server_.take_log_entries())
        trace_.applied_log.insert(trace_.applied_log.end(), entries.begin(), entries.end());
}

void Simulation::schedule_submit(std::size_t client, std::int64_t at_ms, OpFactory make) {
    at(at_ms, [this, client, make = std::move(make)] { attempt_submit(client, make); });
}

void Simulation::attempt_submit(std::size_t client, const OpFactory& make) {
    SimClient& c = clients_[client];
    if (!c.doc.primed()) {
        at(now_ + 5, [this, client, make] { attempt_submit(client, make); });
        return;
    }
    auto payload = make(c.doc, rng_);
    if (!payload) return;
    ++submitted_;
    send_to_server(client, c.doc.prepare(std::move(*payload)));
}

void Simulation::schedule_reconnect(std::size_t client, std::int64_t at_ms) {
    at(at_ms, [this, client] {
        SimClient& c = clients_[client];
        server_.disconnect(c.session);
        by_session_.erase(c.session);
        c.up_last = now_;
        c.down_last = now_;
        connect_client(client);
    });
}

void Simulation::schedule_presence(std::size_t client, std::int64_t at_ms, Ray cursor) {
    at(at_ms, [this, client, cursor] {
        if (!clients_[client].doc.primed()) return;
        send_to_server(client, msg::Presence{kDocName, clients_[client].session, cursor});
    });
}

void Simulation::run() {
    while (!events_.empty()) {
        Event e = events_.top();
        events_.pop();
        now_ = e.time;
        e.action();
    }
    if (const MoleculeDoc* doc = server_.find_document(kDocName)) trace_.server_final = snapshot(*doc);
}

ConvergenceReport Simulation::report() const {
    ConvergenceReport r;
    const MoleculeDoc* doc = server_.find_document(kDocName);
    r.server_hash = doc ? structural_hash(snapshot(*doc)) : 0;
    r.ops_submitted = submitted_;
    r.ops_applied = server_.counters().applied;
    r.ops_rejected = server_.counters().rejected;
    r.equal = true;
    for (const auto& c : clients_) {
        const std::uint64_t h = structural_hash(c.doc.local_snapshot());
        r.client_hashes.push_back(h);
        r.client_acks.push_back(c.doc.acknowledged());
        if (h != r.server_hash || c.doc.diverged() || !c.doc.primed()) r.equal = false;
    }
    return r;
}

Snapshot random_initial_snapshot(std::uint64_t seed, std::size_t atoms) {
    std::mt19937_64 rng(seed ^ 0x5eed5eed5eed5eedULL);
    static constexpr const char* kElements[] = {"C", "N", "O", "S", "P", "X"};
    Snapshot s;
    for (std::size_t i = 0; i < atoms; ++i)
        s.atoms.push_back({i + 1,
                           {uniform_real(rng, 0.0, 4.0), uniform_real(rng, 0.0, 4.0), uniform_real(rng, 0.0, 4.0)},
                           kElements[uniform_int(rng, 0, 5)]});
    s.bonds = infer_bonds(s.atoms, kDefaultBondThreshold);
    return s;
}

Snapshot random_scene(std::mt19937_64& rng, std::size_t max_atoms, std::size_t max_bonds) {
    static constexpr const char* kElements[] = {"C", "N", "O", "H"};
    Snapshot s;
    const auto n_atoms = static_cast<std::size_t>(uniform_int(rng, 1, static_cast<std::int64_t>(max_atoms)));
    for (std::size_t i = 0; i < n_atoms; ++i)
        s.atoms.push_back({i + 1,
                           {uniform_real(rng, -5.0, 5.0), uniform_real(rng, -5.0, 5.0), uniform_real(rng, -5.0, 5.0)},
                           kElements[uniform_int(rng, 0, 3)]});
    const auto n_bonds = static_cast<std::size_t>(uniform_int(rng, 0, static_cast<std::int64_t>(max_bonds)));
    std::set<Bond> bonds;
    for (std::size_t k = 0; k < n_bonds && n_atoms > 1; ++k) {
        const auto a = static_cast<AtomId>(uniform_int(rng, 1, static_cast<std::int64_t>(n_atoms)));
        const auto b = static_cast<AtomId>(uniform_int(rng, 1, static_cast<std::int64_t>(n_atoms)));
        if (a != b) bonds.insert(Bond::between(a, b));
    }
    s.bonds.assign(bonds.begin(), bonds.end());
    return s;
}

Camera random_camera(std::mt19937_64& rng) {
    Vec3 dir;
    do {
        dir = {uniform_real(rng, -1, 1), uniform_real(rng, -1, 1), uniform_real(rng, -1, 1)};
    } while (norm(dir) < 0.1 || norm(dir) > 1.0);
    const Vec3 eye = normalize(dir) * 25.0;
    const Vec3 target{uniform_real(rng, -2, 2), uniform_real(rng, -2, 2), uniform_real(rng, -2, 2)};
    Vec3 up_hint{0, 1, 0};
    if (std::abs(normalize(target - eye).y) > 0.95) up_hint = {1, 0, 0};
    return Camera::looking(eye, target - eye, up_hint, uniform_real(rng, 0.6, 1.4), uniform_real(rng, 0.75, 2.0));
}

namespace {

template <class Container>
auto pick(const Container& c, std::mt19937_64& rng) {
    auto it = c.begin();
    std::advance(it, uniform_int(rng, 0, static_cast<std::int64_t>(c.size()) - 1));
    return it;
}

} // namespace

std::optional<OpPayload> random_op(const ClientDoc& view, std::mt19937_64& rng) {
    static constexpr const char* kElements[] = {"C", "N", "O", "S", "P", "X"};
    const auto& atoms = view.local().atoms();
    const auto& bonds = view.local().bonds();
    auto random_position = [&] {
        return Vec3{uniform_real(rng, 0.0, 8.0), uniform_real(rng, 0.0, 8.0), uniform_real(rng, 0.0, 8.0)};
    };
    auto add_atom = [&]() -> OpPayload {
        const AtomId max_id = atoms.empty() ? 0 : atoms.rbegin()->first;
        return op::AddAtom{max_id + 1 + static_cast<AtomId>(uniform_int(rng, 0, 999)), random_position(),
                           kElements[uniform_int(rng, 0, 5)]};
    };

    if (atoms.empty()) return add_atom();
    const auto roll = uniform_int(rng, 0, 99);
    if (roll < 25) return add_atom();
    if (roll < 50) {
        if (atoms.size() < 2) return add_atom();
        AtomId a = 0, b = 0;
        for (int attempt = 0; attempt < 8; ++attempt) {
            a = pick(atoms, rng)->first;
            b = pick(atoms, rng)->first;
            if (a != b && !view.local().has_bond(a, b)) break;
        }
        if (a == b) return add_atom();
        return op::AddBond{a, b};
    }
    if (roll < 60 && !bonds.empty()) {
        const Bond bond = *pick(bonds, rng);
        return op::RemoveBond{bond.a, bond.b};
    }
    if (roll < 70) return op::RemoveAtom{pick(atoms, rng)->first};
    if (roll < 85) return op::SetElement{pick(atoms, rng)->first, kElements[uniform_int(rng, 0, 5)]};
    const Atom& atom = pick(atoms, rng)->second;
    return op::MoveAtom{atom.id, atom.position + Vec3{uniform_real(rng, -0.5, 0.5), uniform_real(rng, -0.5, 0.5),
                                                      uniform_real(rng, -0.5, 0.5)}};
}

ConvergenceReport simulate(std::size_t n_clients, std::size_t n_ops, LatencyModel latency, std::uint64_t seed,
                           SimulationTrace* trace) {
    Simulation sim(n_clients, latency, seed, random_initial_snapshot(seed));
    std::mt19937_64 schedule_rng(seed * 0x9e3779b97f4a7c15ULL + 1);
    std::vector<std::int64_t> clock(n_clients, 0);
    for (std::size_t k = 0; k < n_ops; ++k) {
        const std::size_t client = k % n_clients;
        clock[client] += uniform_int(schedule_rng, 1, 40);
        sim.schedule_submit(client, clock[client], random_op);
        if (k % 10 == 0) {
            const Vec3 origin{uniform_real(schedule_rng, -5, 5), uniform_real(schedule_rng, -5, 5), 10.0};
            sim.schedule_presence(client, clock[client], Ray::through(origin, Vec3{0, 0, 0} - origin));
        }
    }
    sim.run();
    if (trace) *trace = sim.trace();
    return sim.report();
}

} // namespace snbviz
