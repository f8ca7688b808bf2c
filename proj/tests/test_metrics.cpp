#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <convocc/marching_cubes.hpp>
#include <convocc/metrics.hpp>

#include <cmath>

using namespace convocc;

static TriangleMesh sphere_mesh(Vec3 center, double radius, int res = 48) {
    int n = res + 1;
    std::vector<double> field(static_cast<size_t>(n) * n * n);
    size_t idx = 0;
    for (int k = 0; k < n; ++k)
        for (int j = 0; j < n; ++j)
            for (int i = 0; i < n; ++i) {
                Vec3 p{static_cast<double>(i) / res, static_cast<double>(j) / res,
                       static_cast<double>(k) / res};
                field[idx++] = radius - (p - center).norm();  // positive inside
            }
    return marching_cubes_unit(field, {n, n, n}, 0.0);
}

// Two big triangles spanning [lo,hi]^2 at height z.
static TriangleMesh plane_mesh(double z, double lo = 0.0, double hi = 1.0) {
    TriangleMesh m;
    m.vertices = {{lo, lo, z}, {hi, lo, z}, {hi, hi, z}, {lo, hi, z}};
    m.triangles = {{0, 1, 2}, {0, 2, 3}};
    return m;
}

static TriangleMesh translated(const TriangleMesh& mesh, Vec3 delta) {
    TriangleMesh out = mesh;
    for (Vec3& v : out.vertices) v += delta;
    return out;
}

// Brute-force nearest neighbor, the oracle for the accelerated grid.
static std::pair<size_t, double> brute_nearest(const std::vector<Vec3>& pts, const Vec3& q) {
    size_t best = 0;
    double best_d2 = 1e300;
    for (size_t i = 0; i < pts.size(); ++i) {
        Vec3 d = pts[i] - q;
        double d2 = d.dot(d);
        if (d2 < best_d2) {
            best_d2 = d2;
            best = i;
        }
    }
    return {best, std::sqrt(best_d2)};
}

TEST_CASE("GridNN matches the brute-force oracle at n = 1e3") {
    RngStream rng(3);
    std::vector<Vec3> pts;
    for (int i = 0; i < 1000; ++i) pts.push_back({rng.uniform(), rng.uniform(), rng.uniform()});
    GridNN nn(pts);
    for (int q = 0; q < 1000; ++q) {
        Vec3 query{rng.uniform(-0.1, 1.1), rng.uniform(-0.1, 1.1), rng.uniform(-0.1, 1.1)};
        auto [bi, bd] = brute_nearest(pts, query);
        auto [gi, gd] = nn.nearest(query);
        CHECK(gi == bi);
        CHECK(std::abs(gd - bd) < 1e-12);
    }
}

TEST_CASE("volumetric_iou") {
    auto box = [](Vec3 lo, Vec3 hi) {
        return [lo, hi](const Vec3& p) {
            return p.x >= lo.x && p.x <= hi.x && p.y >= lo.y && p.y <= hi.y && p.z >= lo.z && p.z <= hi.z;
        };
    };
    SUBCASE("identical shapes give 1, disjoint give 0") {
        InsideFn a = box({0.1, 0.1, 0.1}, {0.5, 0.5, 0.5});
        CHECK(volumetric_iou(a, a, 20000, 1) == 1.0);
        InsideFn b = box({0.6, 0.6, 0.6}, {0.9, 0.9, 0.9});
        CHECK(volumetric_iou(a, b, 20000, 1) == 0.0);
    }
    SUBCASE("empty union defined as 1") {
        InsideFn none = [](const Vec3&) { return false; };
        CHECK(volumetric_iou(none, none, 1000, 7) == 1.0);
    }
    SUBCASE("boxes overlapping half their volume give 1/3 within Monte-Carlo 3 sigma") {
        InsideFn a = box({0.1, 0.0, 0.0}, {0.5, 1.0, 1.0});
        InsideFn b = box({0.3, 0.0, 0.0}, {0.7, 1.0, 1.0});
        const int64_t n = 1000000;
        double iou = volumetric_iou(a, b, n, 12345);
        // |I| = 0.2, |U| = 0.6; sigma of the ratio is below 1.3e-3 at 1e6.
        CHECK(std::abs(iou - 1.0 / 3.0) < 3 * 1.3e-3);
    }
    SUBCASE("deterministic given seed") {
        InsideFn a = box({0.2, 0.2, 0.2}, {0.8, 0.8, 0.8});
        InsideFn b = box({0.3, 0.1, 0.25}, {0.9, 0.7, 0.75});
        CHECK(volumetric_iou(a, b, 50000, 99) == volumetric_iou(a, b, 50000, 99));
        CHECK(volumetric_iou(a, b, 50000, 99) != volumetric_iou(a, b, 50000, 100));
    }
}

TEST_CASE("mesh inside tester agrees with the analytic sphere") {
    TriangleMesh mesh = sphere_mesh({0.5, 0.5, 0.5}, 0.3);
    InsideFn inside = mesh_inside_tester(mesh);
    RngStream rng(8);
    int agree = 0;
    const int n = 20000;
    for (int i = 0; i < n; ++i) {
        Vec3 p{rng.uniform(), rng.uniform(), rng.uniform()};
        bool truth = (p - Vec3{0.5, 0.5, 0.5}).norm() <= 0.3;
        agree += inside(p) == truth;
    }
    // Disagreements only in the one-cell discretization band.
    CHECK(static_cast<double>(agree) / n > 0.995);
}

TEST_CASE("chamfer_l1") {
    SUBCASE("mesh vs itself is below the self-sampling noise floor") {
        TriangleMesh mesh = sphere_mesh({0.5, 0.5, 0.5}, 0.15);
        SurfaceSamples a = sample_mesh_surface(mesh, 100000, 1);
        SurfaceSamples b = sample_mesh_surface(mesh, 100000, 2);
        CHECK(chamfer_l1(a, b) < 1e-3);
    }
    SUBCASE("parallel planes at distance t") {
        SurfaceSamples a = sample_mesh_surface(plane_mesh(0.4), 30000, 3);
        SurfaceSamples b = sample_mesh_surface(plane_mesh(0.6), 30000, 4);
        double d = chamfer_l1(a, b);
        CHECK(d == doctest::Approx(0.2).epsilon(0.02));
    }
    SUBCASE("translated plane distance within 5%, against the brute-force oracle") {
        // Plane with normal along x, translated along x: every sample moves
        // by delta perpendicular to the surface.
        const double delta = 0.07;
        TriangleMesh p1;
        p1.vertices = {{0.5, 0.2, 0.2}, {0.5, 0.8, 0.2}, {0.5, 0.8, 0.8}, {0.5, 0.2, 0.8}};
        p1.triangles = {{0, 1, 2}, {0, 2, 3}};
        TriangleMesh p2 = translated(p1, {delta, 0, 0});
        SurfaceSamples a = sample_mesh_surface(p1, 1000, 5);
        SurfaceSamples b = sample_mesh_surface(p2, 1000, 6);
        double accel = chamfer_l1(a, b);
        // Brute-force oracle at n = 1e3.
        double acc = 0, comp = 0;
        for (const Vec3& p : a.points) acc += brute_nearest(b.points, p).second;
        for (const Vec3& p : b.points) comp += brute_nearest(a.points, p).second;
        double brute = 0.5 * (acc / a.points.size() + comp / b.points.size());
        CHECK(std::abs(accel - brute) < 1e-12);
        // Shifting a bounded plane along x moves interior points by delta
        // (edge strips see slightly less).
        CHECK(accel < delta * 1.05);
        CHECK(accel > delta * 0.80);
    }
    SUBCASE("symmetric in its arguments") {
        SurfaceSamples a = sample_mesh_surface(sphere_mesh({0.4, 0.5, 0.5}, 0.2), 5000, 7);
        SurfaceSamples b = sample_mesh_surface(sphere_mesh({0.6, 0.5, 0.5}, 0.25), 5000, 8);
        CHECK(chamfer_l1(a, b) == chamfer_l1(b, a));
    }
    SUBCASE("empty mesh reported as infinite") {
        SurfaceSamples a = sample_mesh_surface(TriangleMesh{}, 100, 9);
        SurfaceSamples b = sample_mesh_surface(plane_mesh(0.5), 100, 10);
        CHECK(std::isinf(chamfer_l1(a, b)));
    }
}

TEST_CASE("normal_consistency") {
    SUBCASE("mesh vs itself at least 0.99") {
        TriangleMesh mesh = sphere_mesh({0.5, 0.5, 0.5}, 0.25);
        SurfaceSamples a = sample_mesh_surface(mesh, 20000, 11);
        SurfaceSamples b = sample_mesh_surface(mesh, 20000, 12);
        CHECK(normal_consistency(a, b) >= 0.99);
    }
    SUBCASE("orthogonal planes give 0") {
        TriangleMesh px = plane_mesh(0.5);  // normal along z
        TriangleMesh py;                    // normal along y
        py.vertices = {{0, 0.5, 0}, {1, 0.5, 0}, {1, 0.5, 1}, {0, 0.5, 1}};
        py.triangles = {{0, 1, 2}, {0, 2, 3}};
        SurfaceSamples a = sample_mesh_surface(px, 5000, 13);
        SurfaceSamples b = sample_mesh_surface(py, 5000, 14);
        CHECK(normal_consistency(a, b) == doctest::Approx(0.0).epsilon(1e-12));
    }
    SUBCASE("sphere vs same sphere at least 0.99") {
        SurfaceSamples a = sample_mesh_surface(sphere_mesh({0.5, 0.5, 0.5}, 0.3), 20000, 15);
        SurfaceSamples b = sample_mesh_surface(sphere_mesh({0.5, 0.5, 0.5}, 0.3), 20000, 16);
        CHECK(normal_consistency(a, b) >= 0.99);
    }
}

TEST_CASE("f_score") {
    SUBCASE("identical meshes give 1") {
        TriangleMesh mesh = sphere_mesh({0.5, 0.5, 0.5}, 0.2);
        SurfaceSamples a = sample_mesh_surface(mesh, 20000, 17);
        SurfaceSamples b = sample_mesh_surface(mesh, 20000, 18);
        CHECK(f_score(a, b, 0.01) == doctest::Approx(1.0).epsilon(1e-3));
    }
    SUBCASE("huge threshold gives 1 for any non-empty pair") {
        SurfaceSamples a = sample_mesh_surface(plane_mesh(0.1), 1000, 19);
        SurfaceSamples b = sample_mesh_surface(sphere_mesh({0.5, 0.5, 0.5}, 0.3), 1000, 20);
        CHECK(f_score(a, b, 1e9) == 1.0);
    }
    SUBCASE("parallel planes: 0 at distance 2t, 1 at distance t/2") {
        // Small dense patches so in-plane neighbor spacing stays far below
        // the threshold.
        const double thr = 0.01;
        SurfaceSamples a = sample_mesh_surface(plane_mesh(0.5, 0.35, 0.65), 20000, 21);
        SurfaceSamples far = sample_mesh_surface(plane_mesh(0.5 + 2 * thr, 0.35, 0.65), 20000, 22);
        SurfaceSamples near = sample_mesh_surface(plane_mesh(0.5 + thr / 2, 0.35, 0.65), 20000, 23);
        CHECK(f_score(a, far, thr) == 0.0);
        CHECK(f_score(a, near, thr) == 1.0);
    }
    SUBCASE("swapping arguments swaps precision and recall, F unchanged") {
        SurfaceSamples a = sample_mesh_surface(sphere_mesh({0.45, 0.5, 0.5}, 0.22), 8000, 24);
        SurfaceSamples b = sample_mesh_surface(sphere_mesh({0.55, 0.5, 0.5}, 0.18), 8000, 25);
        CHECK(f_score(a, b, 0.05) == doctest::Approx(f_score(b, a, 0.05)).epsilon(1e-12));
    }
    SUBCASE("non-positive threshold rejected") {
        SurfaceSamples a = sample_mesh_surface(plane_mesh(0.5), 100, 26);
        CHECK_THROWS_AS(f_score(a, a, 0.0), std::invalid_argument);
    }
}

TEST_CASE("metrics are invariant to rigid motions applied to both inputs") {
    TriangleMesh pred = sphere_mesh({0.45, 0.5, 0.5}, 0.2);
    TriangleMesh truth = sphere_mesh({0.55, 0.5, 0.5}, 0.22);
    Mat3 rot = Mat3::from_quaternion(0.9, 0.1, 0.3, 0.2);
    Vec3 shift{0.05, -0.03, 0.02};
    auto rigid = [&](const TriangleMesh& m) {
        TriangleMesh out = m;
        for (Vec3& v : out.vertices) v = rot * (v - Vec3{0.5, 0.5, 0.5}) + Vec3{0.5, 0.5, 0.5} + shift;
        return out;
    };
    SurfaceSamples pa = sample_mesh_surface(pred, 20000, 27);
    SurfaceSamples ta = sample_mesh_surface(truth, 20000, 28);
    SurfaceSamples pb = sample_mesh_surface(rigid(pred), 20000, 27);
    SurfaceSamples tb = sample_mesh_surface(rigid(truth), 20000, 28);
    CHECK(chamfer_l1(pa, ta) == doctest::Approx(chamfer_l1(pb, tb)).epsilon(0.01));
    CHECK(normal_consistency(pa, ta) == doctest::Approx(normal_consistency(pb, tb)).epsilon(0.01));
    CHECK(f_score(pa, ta, 0.05) == doctest::Approx(f_score(pb, tb, 0.05)).epsilon(0.01));
}

TEST_CASE("evaluate_mesh_vs_scene end to end") {
    SceneSpec scene;
    Primitive s;
    s.kind = ShapeKind::sphere;
    s.scale = {0.25, 0.25, 0.25};
    s.translation = {0.5, 0.5, 0.5};
    scene.primitives.push_back(s);
    scene.bounds = {{0, 0, 0}, {1, 1, 1}};
    NormMap map = normalize_scene(scene, 0.0);

    EvalOptions opts;
    opts.surface_samples = 20000;
    opts.volume_samples = 50000;
    opts.seed = 5;

    SUBCASE("matching mesh scores near-perfect") {
        TriangleMesh mesh = sphere_mesh({0.5, 0.5, 0.5}, 0.25, 64);
        EvalReport r = evaluate_mesh_vs_scene(mesh, scene, map, opts);
        CHECK(r.iou > 0.97);
        CHECK(r.chamfer_l1 < 0.01);
        CHECK(r.normal_consistency > 0.98);
        CHECK(r.f_score > 0.95);
        std::string json = report_to_json(r);
        CHECK(json.find("\"iou\"") != std::string::npos);
        std::string table = report_table(r);
        CHECK(table.find("Chamfer-L1") != std::string::npos);
    }
    SUBCASE("threshold option changes only the f-score") {
        // Surface offset of 0.012 sits between the 1% and 1.5% thresholds.
        TriangleMesh mesh = sphere_mesh({0.5, 0.5, 0.5}, 0.238, 96);
        EvalReport r1 = evaluate_mesh_vs_scene(mesh, scene, map, opts);
        EvalOptions o2 = opts;
        o2.fscore_threshold = 0.015;
        EvalReport r2 = evaluate_mesh_vs_scene(mesh, scene, map, o2);
        CHECK(r1.iou == r2.iou);
        CHECK(r1.chamfer_l1 == r2.chamfer_l1);
        CHECK(r1.normal_consistency == r2.normal_consistency);
        CHECK(r1.f_score < r2.f_score);
    }
    SUBCASE("empty prediction flagged") {
        EvalReport r = evaluate_mesh_vs_scene(TriangleMesh{}, scene, map, opts);
        CHECK(r.pred_empty);
        CHECK(std::isinf(r.chamfer_l1));
        CHECK(r.f_score == 0.0);
        CHECK(r.iou < 0.01);
    }
    SUBCASE("single-surface option collapses slabs for scene sampling") {
        SceneSpec room;
        room.bounds = {{0, 0, 0}, {1, 1, 1}};
        room.ground = Aabb{{0.1, 0.1, 0.1}, {0.9, 0.9, 0.1 + kSlabThickness}};
        NormMap rmap = normalize_scene(room, 0.0);
        SurfaceSamples both = sample_scene_surface_points(room, rmap, 20000, 3, false);
        SurfaceSamples single = sample_scene_surface_points(room, rmap, 20000, 3, true);
        // Single-surface sampling stays on the top face.
        double top = room.ground->max.z;
        for (const Vec3& p : single.points) CHECK(std::abs(rmap.to_world(p).z - top) < 1e-9);
        bool saw_bottom = false;
        for (const Vec3& p : both.points)
            if (std::abs(rmap.to_world(p).z - room.ground->min.z) < 1e-9) saw_bottom = true;
        CHECK(saw_bottom);
    }
}

TEST_CASE("evaluate_mesh_vs_mesh reaches 1-ish for identical inputs") {
    TriangleMesh mesh = sphere_mesh({0.5, 0.5, 0.5}, 0.28, 40);
    EvalOptions opts;
    opts.surface_samples = 40000;
    opts.volume_samples = 50000;
    opts.seed = 6;
    EvalReport r = evaluate_mesh_vs_mesh(mesh, mesh, opts);
    CHECK(r.iou > 0.995);
    CHECK(r.f_score > 0.99);
    CHECK(r.normal_consistency > 0.99);
    CHECK(r.chamfer_l1 < 5e-3);
}
