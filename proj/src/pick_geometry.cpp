#include "snbviz/pick_geometry.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <vector>
#include <unordered_map>

namespace snbviz {

namespace {
constexpr double kTieEpsilon = 1e-9;
}

Camera Camera::looking(const Vec3& eye, const Vec3& forward, const Vec3& up_hint, double vfov, double aspect) {
    Camera cam;
    cam.eye = eye;
    cam.forward = normalize(forward);
    cam.right = normalize(cross(cam.forward, up_hint));
    cam.up = cross(cam.right, cam.forward);
    cam.vfov = vfov;
    cam.aspect = aspect;
    return cam;
}

bool Camera::valid(double tol) const {
    auto unit = [tol](const Vec3& v) { return std::abs(dot(v, v) - 1.0) <= tol; };
    auto ortho = [tol](const Vec3& a, const Vec3& b) { return std::abs(dot(a, b)) <= tol; };
    return unit(right) && unit(up) && unit(forward) && ortho(right, up) && ortho(right, forward) &&
           ortho(up, forward) && vfov > 0.0 && vfov < std::numbers::pi && aspect > 0.0 && is_finite(eye);
}

std::optional<double> ray_sphere(const Ray& ray, const Vec3& center, double radius) {
    const Vec3 oc = center - ray.origin;
    const double along = dot(oc, ray.dir);
    // Squared distance from the center to the ray's line, computed from the perpendicular
    // component directly to avoid cancellation in |oc|^2 - along^2.
    const Vec3 perp = oc - ray.dir * along;
    const double disc = radius * radius - dot(perp, perp);
    if (disc < 0.0) return std::nullopt;
    const double half = std::sqrt(disc);
    const double t_near = along - half;
    const double t_far = along + half;
    if (t_near >= 0.0) return t_near;
    if (t_far >= 0.0) return t_far;
    return std::nullopt;
}

std::optional<double> ray_cylinder(const Ray& ray, const Vec3& p0, const Vec3& p1, double radius) {
    const Vec3 axis_full = p1 - p0;
    const double length = norm(axis_full);
    if (!(length > 0.0)) return std::nullopt;
    const Vec3 axis = axis_full / length;

    const Vec3 w = ray.origin - p0;
    const Vec3 d_perp = ray.dir - axis * dot(ray.dir, axis);
    const Vec3 w_perp = w - axis * dot(w, axis);

    const double a = dot(d_perp, d_perp);
    if (a < 1e-18) return std::nullopt; // parallel to the axis: only caps could be hit
    const double b = dot(d_perp, w_perp);
    const double c = dot(w_perp, w_perp) - radius * radius;
    const double disc = b * b - a * c;
    if (disc < 0.0) return std::nullopt;

    const double root = std::sqrt(disc);
    // Stable quadratic roots.
    const double q = b >= 0.0 ? -(b + root) : -(b - root);
    double t0 = q / a;
    double t1 = q != 0.0 ? c / q : t0;
    if (t0 > t1) std::swap(t0, t1);

    for (double t : {t0, t1}) {
        if (t < 0.0 || !std::isfinite(t)) continue;
        const double s = dot(w + ray.dir * t, axis);
        if (s >= 0.0 && s <= length) return t;
    }
    return std::nullopt;
}

Ray mouse_ray(const Camera& cam, double ndc_x, double ndc_y) {
    const double half = std::tan(cam.vfov / 2.0);
    const Vec3 dir = cam.right * (ndc_x * half * cam.aspect) + cam.up * (ndc_y * half) + cam.forward;
    return {cam.eye, normalize(dir)};
}

bool entity_less(const PickEntity& l, const PickEntity& r) {
    if (l.index() != r.index()) return l.index() < r.index();
    if (const auto* la = std::get_if<AtomRef>(&l)) return la->id < std::get<AtomRef>(r).id;
    return std::get<BondRef>(l).bond < std::get<BondRef>(r).bond;
}

std::optional<Hit> pick_scene(const Snapshot& scene, const Ray& ray, const PickConfig& cfg) {
    std::vector<Hit> hits;
    std::unordered_map<AtomId, Vec3> positions;
    positions.reserve(scene.atoms.size());
    for (const auto& atom : scene.atoms) {
        positions.emplace(atom.id, atom.position);
        if (auto t = ray_sphere(ray, atom.position, cfg.atom_radius)) hits.push_back({AtomRef{atom.id}, *t});
    }
    for (const auto& bond : scene.bonds) {
        auto pa = positions.find(bond.a);
        auto pb = positions.find(bond.b);
        if (pa == positions.end() || pb == positions.end()) continue;
        if (auto t = ray_cylinder(ray, pa->second, pb->second, cfg.bond_radius))
            hits.push_back({BondRef{Bond::between(bond.a, bond.b)}, *t});
    }
    if (hits.empty()) return std::nullopt;

    // Select among everything within the tie window of the minimum so the result does not
    // depend on iteration order.
    double t_min = hits.front().t;
    for (const auto& h : hits) t_min = std::min(t_min, h.t);
    const Hit* best = nullptr;
    for (const auto& h : hits) {
        if (h.t > t_min + kTieEpsilon) continue;
        if (!best || entity_less(h.entity, best->entity)) best = &h;
    }
    return *best;
}

} // namespace snbviz
