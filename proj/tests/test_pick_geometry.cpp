#include "doctest.h"

#include <array>
#include <cmath>
#include <numbers>
#include <random>

#include "oracles/pick_march.hpp"
#include "snbviz/json_codec.hpp"
#include "snbviz/pick_geometry.hpp"
#include "snbviz/simulation.hpp"

using namespace snbviz;

namespace {

using Mat3 = std::array<std::array<double, 3>, 3>;

Vec3 mul(const Mat3& m, const Vec3& v) {
    return {m[0][0] * v.x + m[0][1] * v.y + m[0][2] * v.z, m[1][0] * v.x + m[1][1] * v.y + m[1][2] * v.z,
            m[2][0] * v.x + m[2][1] * v.y + m[2][2] * v.z};
}

Mat3 mul(const Mat3& a, const Mat3& b) {
    Mat3 r{};
    for (int i = 0; i < 3; ++i)
        for (int j = 0; j < 3; ++j)
            for (int k = 0; k < 3; ++k) r[i][j] += a[i][k] * b[k][j];
    return r;
}

Mat3 rot_y(double a) { return {{{std::cos(a), 0, std::sin(a)}, {0, 1, 0}, {-std::sin(a), 0, std::cos(a)}}}; }
Mat3 rot_x(double a) { return {{{1, 0, 0}, {0, std::cos(a), -std::sin(a)}, {0, std::sin(a), std::cos(a)}}}; }
Mat3 rot_z(double a) { return {{{std::cos(a), -std::sin(a), 0}, {std::sin(a), std::cos(a), 0}, {0, 0, 1}}}; }

Mat3 random_rotation(std::mt19937_64& rng) {
    return mul(rot_z(uniform_real(rng, 0, 6.3)), mul(rot_y(uniform_real(rng, 0, 6.3)), rot_x(uniform_real(rng, 0, 6.3))));
}

bool same_entity(const Hit& h, const oracle::MarchHit& m) {
    if (const auto* a = std::get_if<AtomRef>(&h.entity)) return m.is_atom && a->id == m.id;
    return !m.is_atom && std::get<BondRef>(h.entity).bond == m.bond;
}

bool near(const Vec3& a, const Vec3& b, double tol) { return norm(a - b) <= tol; }

} // namespace

TEST_CASE("ray-sphere vectors") {
    CHECK(*ray_sphere({{0, 0, 5}, {0, 0, -1}}, {0, 0, 0}, 1.0) == doctest::Approx(4.0).epsilon(1e-12));
    CHECK(*ray_sphere(Ray::through({0, 3, 4}, {0, -3, -4}), {0, 0, 0}, 1.0) == doctest::Approx(4.0).epsilon(1e-12));
    CHECK_FALSE(ray_sphere({{0, 0, 5}, {0, 1, 0}}, {0, 0, 0}, 1.0));
    CHECK_FALSE(ray_sphere({{0, 0, 5}, {0, 0, 1}}, {0, 0, 0}, 1.0));
    CHECK(*ray_sphere({{0, 0, 0}, {1, 0, 0}}, {0, 0, 0}, 1.0) == doctest::Approx(1.0));
}

TEST_CASE("ray-cylinder vectors") {
    CHECK(*ray_cylinder({{0, 0, 5}, {0, 0, -1}}, {-1, 0, 0}, {1, 0, 0}, 0.2) == doctest::Approx(4.8).epsilon(1e-12));
    CHECK_FALSE(ray_cylinder({{2.5, 0, 5}, {0, 0, -1}}, {-1, 0, 0}, {1, 0, 0}, 0.2));
    CHECK_FALSE(ray_cylinder({{-5, 0, 0}, {1, 0, 0}}, {-1, 0, 0}, {1, 0, 0}, 0.2));
}

TEST_CASE("mouse ray vectors") {
    const Camera cam = Camera::looking({0, 0, 0}, {0, 0, -1}, {0, 1, 0}, std::numbers::pi / 2, 1.0);
    CHECK(cam.valid());
    CHECK(near(mouse_ray(cam, 0, 0).dir, {0, 0, -1}, 1e-12));
    CHECK(near(mouse_ray(cam, 1, 0).dir, normalize({1, 0, -1}), 1e-12));
    CHECK(near(mouse_ray(cam, 0, 1).dir, normalize({0, 1, -1}), 1e-12));
}

TEST_CASE("mouse ray of a rotated camera is the rotated canonical ray") {
    std::mt19937_64 rng(5);
    for (int k = 0; k < 500; ++k) {
        const Mat3 r = k == 0 ? rot_y(std::numbers::pi / 6) : random_rotation(rng);
        const double vfov = uniform_real(rng, 0.3, 2.5), aspect = uniform_real(rng, 0.5, 2.5);
        const Vec3 eye{uniform_real(rng, -9, 9), uniform_real(rng, -9, 9), uniform_real(rng, -9, 9)};
        const Camera canonical = Camera::looking({0, 0, 0}, {0, 0, -1}, {0, 1, 0}, vfov, aspect);
        Camera turned;
        turned.eye = eye;
        turned.right = mul(r, Vec3{1, 0, 0});
        turned.up = mul(r, Vec3{0, 1, 0});
        turned.forward = mul(r, Vec3{0, 0, -1});
        turned.vfov = vfov;
        turned.aspect = aspect;
        CHECK(turned.valid(1e-9));
        const Camera looked = Camera::looking(eye, turned.forward, turned.up, vfov, aspect);
        const double nx = uniform_real(rng, -1, 1), ny = uniform_real(rng, -1, 1);
        const Vec3 want = mul(r, mouse_ray(canonical, nx, ny).dir);
        CHECK(near(mouse_ray(turned, nx, ny).dir, want, 1e-12));
        CHECK(near(mouse_ray(looked, nx, ny).dir, want, 1e-9));
        CHECK(mouse_ray(turned, nx, ny).origin == eye);
    }
}

TEST_CASE("pick vectors") {
    Snapshot one;
    one.atoms = {{1, {0, 0, 0}, "C"}};
    const PickConfig cfg;
    auto hit = pick_scene(one, {{0, 0, 5}, {0, 0, -1}}, cfg);
    REQUIRE(hit);
    CHECK(std::get<AtomRef>(hit->entity).id == 1);
    CHECK(hit->t == doctest::Approx(5 - cfg.atom_radius).epsilon(1e-12));
    CHECK_FALSE(pick_scene(Snapshot{}, {{0, 0, 5}, {0, 0, -1}}, cfg));
    CHECK_FALSE(pick_scene(one, {{0, 0, 5}, {0, 0, 1}}, cfg));

    // Two atoms at the same place: the lower id wins regardless of order.
    Snapshot twins;
    twins.atoms = {{4, {0, 0, 0}, "C"}, {2, {0, 0, 0}, "C"}};
    CHECK(std::get<AtomRef>(pick_scene(twins, {{0, 0, 5}, {0, 0, -1}}, cfg)->entity).id == 2);
}

TEST_CASE("ray primitives agree with the marching oracle") {
    std::mt19937_64 rng(11);
    int sphere_hits = 0, cylinder_hits = 0;
    for (int k = 0; k < 3000; ++k) {
        const Vec3 c{uniform_real(rng, -3, 3), uniform_real(rng, -3, 3), uniform_real(rng, -3, 3)};
        const Vec3 c2{uniform_real(rng, -3, 3), uniform_real(rng, -3, 3), uniform_real(rng, -3, 3)};
        const Vec3 origin{uniform_real(rng, -6, 6), uniform_real(rng, -6, 6), uniform_real(rng, -6, 6)};
        const Vec3 aim = (c + c2) * 0.5 + Vec3{uniform_real(rng, -1, 1), uniform_real(rng, -1, 1), 0};
        const Ray ray = Ray::through(origin, aim - origin);
        const double r = uniform_real(rng, 0.1, 1.2);

        const auto s = ray_sphere(ray, c, r);
        const auto so = oracle::march_sphere(ray, c, r);
        REQUIRE(s.has_value() == so.has_value());
        if (s) {
            ++sphere_hits;
            CHECK(std::abs(*s - *so) <= 1e-6);
        }
        const auto y = ray_cylinder(ray, c, c2, r);
        const auto yo = oracle::march_cylinder(ray, c, c2, r);
        REQUIRE(y.has_value() == yo.has_value());
        if (y) {
            ++cylinder_hits;
            CHECK(std::abs(*y - *yo) <= 1e-6);
        }
    }
    CHECK(sphere_hits > 300);
    CHECK(cylinder_hits > 300);
}

TEST_CASE("pick_scene agrees with the marching oracle on random scenes") {
    std::mt19937_64 rng(21);
    const PickConfig cfg;
    int hits = 0;
    for (int scene_no = 0; scene_no < 5; ++scene_no) {
        const Snapshot scene = random_scene(rng);
        const Camera cam = random_camera(rng);
        for (int k = 0; k < 200; ++k) {
            const Ray ray = mouse_ray(cam, uniform_real(rng, -0.5, 0.5), uniform_real(rng, -0.5, 0.5));
            const auto got = pick_scene(scene, ray, cfg);
            const auto want = oracle::march_pick(scene, ray, cfg.atom_radius, cfg.bond_radius);
            REQUIRE(got.has_value() == want.has_value());
            if (!got) continue;
            ++hits;
            CHECK(same_entity(*got, *want));
            CHECK(std::abs(got->t - want->t) <= 1e-3);
        }
    }
    CHECK(hits > 100);
}

TEST_CASE("picking is equivariant under rigid motion and invariant under reordering") {
    std::mt19937_64 rng(31);
    for (int k = 0; k < 300; ++k) {
        const Snapshot scene = random_scene(rng, 20, 25);
        const Camera cam = random_camera(rng);
        const Ray ray = mouse_ray(cam, uniform_real(rng, -0.4, 0.4), uniform_real(rng, -0.4, 0.4));
        const Mat3 r = random_rotation(rng);
        const Vec3 shift{uniform_real(rng, -20, 20), uniform_real(rng, -20, 20), uniform_real(rng, -20, 20)};
        Snapshot moved = scene;
        for (auto& a : moved.atoms) a.position = mul(r, a.position) + shift;
        const Ray moved_ray{mul(r, ray.origin) + shift, mul(r, ray.dir)};
        const auto a = pick_scene(scene, ray);
        const auto b = pick_scene(moved, moved_ray);
        REQUIRE(a.has_value() == b.has_value());
        if (a) {
            CHECK(a->entity == b->entity);
            CHECK(std::abs(a->t - b->t) <= 1e-9);
        }
        Snapshot shuffled = scene;
        std::shuffle(shuffled.atoms.begin(), shuffled.atoms.end(), rng);
        std::shuffle(shuffled.bonds.begin(), shuffled.bonds.end(), rng);
        const auto c = pick_scene(shuffled, ray);
        REQUIRE(a.has_value() == c.has_value());
        if (a) {
            CHECK(a->entity == c->entity);
            CHECK(a->t == c->t);
        }
    }
}

TEST_CASE("entity ordering") {
    CHECK(entity_less(AtomRef{9}, BondRef{{1, 2}}));
    CHECK(entity_less(AtomRef{1}, AtomRef{2}));
    CHECK(entity_less(BondRef{{1, 2}}, BondRef{{1, 3}}));
    CHECK_FALSE(entity_less(BondRef{{1, 2}}, AtomRef{9}));
}

TEST_CASE("exported golden pick vectors reproduce from their own JSON") {
    const auto fixtures = json_codec::pick_fixtures(3, 4, 25);
    const auto reparsed = json_codec::Json::parse(fixtures.dump());
    PickConfig cfg{reparsed["atom_radius"].get<double>(), reparsed["bond_radius"].get<double>()};
    int rows = 0;
    for (const auto& c : reparsed["cases"]) {
        const Snapshot scene = json_codec::snapshot_from_json(c["scene"]);
        const auto& cj = c["camera"];
        Camera cam;
        cam.eye = json_codec::vec3_from_json(cj["eye"]);
        cam.right = json_codec::vec3_from_json(cj["right"]);
        cam.up = json_codec::vec3_from_json(cj["up"]);
        cam.forward = json_codec::vec3_from_json(cj["forward"]);
        cam.vfov = cj["vfov"].get<double>();
        cam.aspect = cj["aspect"].get<double>();
        for (const auto& r : c["rays"]) {
            ++rows;
            const Ray ray = mouse_ray(cam, r["ndc"][0].get<double>(), r["ndc"][1].get<double>());
            CHECK(ray == json_codec::ray_from_json(r["ray"]));
            const auto hit = pick_scene(scene, ray, cfg);
            REQUIRE(hit.has_value() == !r["hit"].is_null());
            if (!hit) continue;
            CHECK(hit->t == r["hit"]["t"].get<double>());
            if (r["hit"]["kind"] == "atom") CHECK(std::get<AtomRef>(hit->entity).id == r["hit"]["id"].get<AtomId>());
            else CHECK(std::get<BondRef>(hit->entity).bond == Bond{r["hit"]["a"].get<AtomId>(), r["hit"]["b"].get<AtomId>()});
        }
    }
    CHECK(rows == 100);
}
