#pragma once

#include <optional>
#include <variant>

#include "snbviz/molecular_graph.hpp"
#include "snbviz/vec3.hpp"

namespace snbviz {

/// Pick ray. `dir` is unit length.
struct Ray {
    Vec3 origin;
    Vec3 dir{0.0, 0.0, -1.0};

    /// Normalizes `direction`.
    static Ray through(const Vec3& origin, const Vec3& direction) { return {origin, normalize(direction)}; }
    Vec3 at(double t) const { return origin + dir * t; }

    friend bool operator==(const Ray&, const Ray&) = default;
};

struct AtomRef {
    AtomId id = 0;
    friend bool operator==(const AtomRef&, const AtomRef&) = default;
};

struct BondRef {
    Bond bond;
    friend bool operator==(const BondRef&, const BondRef&) = default;
};

using PickEntity = std::variant<AtomRef, BondRef>;

struct Hit {
    PickEntity entity;
    double t = 0.0;
};

/// Perspective pick camera with an orthonormal right/up/forward basis.
struct Camera {
    Vec3 eye;
    Vec3 right{1.0, 0.0, 0.0};
    Vec3 up{0.0, 1.0, 0.0};
    Vec3 forward{0.0, 0.0, -1.0};
    double vfov = 1.5707963267948966;
    double aspect = 1.0;

    /// Camera at `eye` looking along `forward`, with `up_hint` fixing the roll.
    static Camera looking(const Vec3& eye, const Vec3& forward, const Vec3& up_hint, double vfov, double aspect);

    bool valid(double tol = 1e-9) const;
};

struct PickConfig {
    double atom_radius = 0.35;
    double bond_radius = 0.12;

    bool valid() const { return atom_radius > 0.0 && bond_radius > 0.0 && bond_radius < atom_radius; }
};

/// Smallest t >= 0 on the sphere surface; a ray starting inside returns the exit point.
std::optional<double> ray_sphere(const Ray& ray, const Vec3& center, double radius);

/// Smallest t >= 0 on the finite, uncapped cylinder around segment p0-p1.
std::optional<double> ray_cylinder(const Ray& ray, const Vec3& p0, const Vec3& p1, double radius);

/// Eye-through-image-plane ray for normalized device coordinates in [-1, 1]^2.
Ray mouse_ray(const Camera& cam, double ndc_x, double ndc_y);

/// Nearest hit over atom spheres and bond cylinders. Hits closer than 1e-9 apart prefer atoms,
/// then the lower atom id, then the lexicographically smaller bond.
std::optional<Hit> pick_scene(const Snapshot& scene, const Ray& ray, const PickConfig& cfg = {});

/// Strict ordering used for the pick tie-break (atoms before bonds, then by id/pair).
bool entity_less(const PickEntity& l, const PickEntity& r);

} // namespace snbviz
