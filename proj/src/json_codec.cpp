#include "snbviz/json_codec.hpp"

#include <cmath>
#include <random>

#include "snbviz/protocol.hpp"
#include "snbviz/simulation.hpp"

namespace snbviz::json_codec {

namespace {

const Json& field(const Json& j, const char* name) {
    if (!j.is_object()) throw ProtocolError("expected object");
    auto it = j.find(name);
    if (it == j.end()) throw ProtocolError(std::string("missing field '") + name + "'");
    return *it;
}

std::uint64_t as_u64(const Json& j, const char* name) {
    const Json& v = field(j, name);
    if (!v.is_number_unsigned()) throw ProtocolError(std::string("field '") + name + "' must be unsigned");
    return v.get<std::uint64_t>();
}

double as_real(const Json& v) {
    if (!v.is_number()) throw ProtocolError("expected number");
    return v.get<double>();
}

std::string as_string(const Json& j, const char* name) {
    const Json& v = field(j, name);
    if (!v.is_string()) throw ProtocolError(std::string("field '") + name + "' must be a string");
    return v.get<std::string>();
}

void require_finite(double v) {
    if (!std::isfinite(v)) throw ProtocolError("non-finite number cannot be encoded");
}

} // namespace

Json to_json(const Vec3& v) {
    require_finite(v.x);
    require_finite(v.y);
    require_finite(v.z);
    return Json::array({v.x, v.y, v.z});
}

Vec3 vec3_from_json(const Json& j) {
    if (!j.is_array() || j.size() != 3) throw ProtocolError("expected [x, y, z]");
    return {as_real(j[0]), as_real(j[1]), as_real(j[2])};
}

Json to_json(const OpId& id) {
    Json j;
    j["client"] = id.client;
    j["seq"] = id.seq;
    return j;
}

OpId op_id_from_json(const Json& j) { return {as_u64(j, "client"), as_u64(j, "seq")}; }

Json to_json(const EditOp& edit) {
    Json j;
    j["kind"] = std::string(to_string(edit.kind()));
    j["op_id"] = to_json(edit.op_id);
    std::visit(
        [&](const auto& p) {
            using T = std::decay_t<decltype(p)>;
            if constexpr (std::is_same_v<T, op::AddAtom>) {
                j["id"] = p.id;
                j["pos"] = to_json(p.position);
                j["element"] = p.element;
            } else if constexpr (std::is_same_v<T, op::RemoveAtom>) {
                j["id"] = p.id;
            } else if constexpr (std::is_same_v<T, op::AddBond> || std::is_same_v<T, op::RemoveBond>) {
                j["a"] = p.a;
                j["b"] = p.b;
            } else if constexpr (std::is_same_v<T, op::SetElement>) {
                j["id"] = p.id;
                j["element"] = p.element;
            } else if constexpr (std::is_same_v<T, op::MoveAtom>) {
                j["id"] = p.id;
                j["pos"] = to_json(p.position);
            }
        },
        edit.payload);
    return j;
}

EditOp edit_op_from_json(const Json& j) {
    EditOp edit;
    edit.op_id = op_id_from_json(field(j, "op_id"));
    const std::string kind = as_string(j, "kind");
    if (kind == "add_atom")
        edit.payload = op::AddAtom{as_u64(j, "id"), vec3_from_json(field(j, "pos")), as_string(j, "element")};
    else if (kind == "remove_atom")
        edit.payload = op::RemoveAtom{as_u64(j, "id")};
    else if (kind == "add_bond")
        edit.payload = op::AddBond{as_u64(j, "a"), as_u64(j, "b")};
    else if (kind == "remove_bond")
        edit.payload = op::RemoveBond{as_u64(j, "a"), as_u64(j, "b")};
    else if (kind == "set_element")
        edit.payload = op::SetElement{as_u64(j, "id"), as_string(j, "element")};
    else if (kind == "move_atom")
        edit.payload = op::MoveAtom{as_u64(j, "id"), vec3_from_json(field(j, "pos"))};
    else
        throw ProtocolError("unknown op kind '" + kind + "'");
    return edit;
}

Json to_json(const Snapshot& s) {
    Json j;
    j["version"] = s.version;
    Json atoms = Json::array();
    for (const auto& atom : s.atoms) {
        Json a;
        a["id"] = atom.id;
        a["pos"] = to_json(atom.position);
        a["element"] = atom.element;
        atoms.push_back(std::move(a));
    }
    j["atoms"] = std::move(atoms);
    Json bonds = Json::array();
    for (const auto& bond : s.bonds) bonds.push_back(Json::array({bond.a, bond.b}));
    j["bonds"] = std::move(bonds);
    return j;
}

Snapshot snapshot_from_json(const Json& j) {
    Snapshot s;
    s.version = as_u64(j, "version");
    const Json& atoms = field(j, "atoms");
    const Json& bonds = field(j, "bonds");
    if (!atoms.is_array() || !bonds.is_array()) throw ProtocolError("atoms/bonds must be arrays");
    for (const auto& a : atoms)
        s.atoms.push_back({as_u64(a, "id"), vec3_from_json(field(a, "pos")), as_string(a, "element")});
    for (const auto& b : bonds) {
        if (!b.is_array() || b.size() != 2 || !b[0].is_number_unsigned() || !b[1].is_number_unsigned())
            throw ProtocolError("bond must be [a, b]");
        s.bonds.push_back({b[0].get<AtomId>(), b[1].get<AtomId>()});
    }
    return s;
}

Json to_json(const Ray& r) {
    Json j;
    j["origin"] = to_json(r.origin);
    j["dir"] = to_json(r.dir);
    return j;
}

Ray ray_from_json(const Json& j) { return {vec3_from_json(field(j, "origin")), vec3_from_json(field(j, "dir"))}; }

Json to_json(const Camera& c) {
    Json j;
    j["eye"] = to_json(c.eye);
    j["right"] = to_json(c.right);
    j["up"] = to_json(c.up);
    j["forward"] = to_json(c.forward);
    j["vfov"] = c.vfov;
    j["aspect"] = c.aspect;
    return j;
}

Json pick_fixtures(std::uint64_t seed, std::size_t scenes, std::size_t rays_per_scene, const PickConfig& cfg) {
    std::mt19937_64 rng(seed);
    Json out;
    out["atom_radius"] = cfg.atom_radius;
    out["bond_radius"] = cfg.bond_radius;
    out["tie_epsilon"] = 1e-9;
    Json cases = Json::array();
    for (std::size_t k = 0; k < scenes; ++k) {
        const Snapshot scene = random_scene(rng);
        const Camera cam = random_camera(rng);
        Json rays = Json::array();
        for (std::size_t r = 0; r < rays_per_scene; ++r) {
            const double nx = uniform_real(rng, -1.0, 1.0);
            const double ny = uniform_real(rng, -1.0, 1.0);
            const Ray ray = mouse_ray(cam, nx, ny);
            Json c;
            c["ndc"] = Json::array({nx, ny});
            c["ray"] = to_json(ray);
            if (auto hit = pick_scene(scene, ray, cfg)) {
                Json h;
                if (const auto* atom = std::get_if<AtomRef>(&hit->entity)) {
                    h["kind"] = "atom";
                    h["id"] = atom->id;
                } else {
                    const Bond& b = std::get<BondRef>(hit->entity).bond;
                    h["kind"] = "bond";
                    h["a"] = b.a;
                    h["b"] = b.b;
                }
                h["t"] = hit->t;
                c["hit"] = std::move(h);
            } else {
                c["hit"] = nullptr;
            }
            rays.push_back(std::move(c));
        }
        Json entry;
        entry["scene"] = to_json(scene);
        entry["camera"] = to_json(cam);
        entry["rays"] = std::move(rays);
        cases.push_back(std::move(entry));
    }
    out["cases"] = std::move(cases);
    return out;
}

} // namespace snbviz::json_codec
