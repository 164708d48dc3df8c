#pragma once

#include "json.hpp"

#include "snbviz/molecular_graph.hpp"
#include "snbviz/pick_geometry.hpp"

namespace snbviz::json_codec {

using Json = nlohmann::ordered_json;

// All readers throw ProtocolError on a missing or mistyped field.

Json to_json(const Vec3& v);
Vec3 vec3_from_json(const Json& j);

Json to_json(const OpId& id);
OpId op_id_from_json(const Json& j);

Json to_json(const EditOp& op);
EditOp edit_op_from_json(const Json& j);

Json to_json(const Snapshot& s);
Snapshot snapshot_from_json(const Json& j);

Json to_json(const Ray& r);
Ray ray_from_json(const Json& j);

Json to_json(const Camera& c);

/// Golden pick vectors for other implementations: random scenes, cameras and mouse positions
/// with the ray and hit this implementation computes.
Json pick_fixtures(std::uint64_t seed, std::size_t scenes, std::size_t rays_per_scene, const PickConfig& cfg = {});

} // namespace snbviz::json_codec
