#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <convocc/marching_cubes.hpp>
#include <convocc/mesh_io.hpp>
#include <convocc/mise.hpp>
#include <convocc/sliding_window.hpp>

#include <cmath>
#include <filesystem>
#include <map>
#include <set>

using namespace convocc;

// Edge-use counting: a closed mesh has every undirected edge on exactly
// two triangles.
static bool mesh_closed(const TriangleMesh& mesh) {
    std::map<std::pair<uint32_t, uint32_t>, int> edges;
    for (const auto& t : mesh.triangles)
        for (int k = 0; k < 3; ++k) {
            uint32_t a = t[static_cast<size_t>(k)], b = t[static_cast<size_t>((k + 1) % 3)];
            edges[{std::min(a, b), std::max(a, b)}] += 1;
        }
    for (const auto& [e, count] : edges)
        if (count != 2) return false;
    return !mesh.triangles.empty();
}

static std::vector<double> sphere_prob_field(int nodes, Vec3 center, double radius, double sharp = 40.0) {
    std::vector<double> field(static_cast<size_t>(nodes) * nodes * nodes);
    size_t idx = 0;
    for (int k = 0; k < nodes; ++k)
        for (int j = 0; j < nodes; ++j)
            for (int i = 0; i < nodes; ++i) {
                Vec3 p{static_cast<double>(i) / (nodes - 1), static_cast<double>(j) / (nodes - 1),
                       static_cast<double>(k) / (nodes - 1)};
                double d = (p - center).norm() - radius;
                field[idx++] = 1.0 / (1.0 + std::exp(sharp * d));
            }
    return field;
}

TEST_CASE("marching_cubes basics") {
    SUBCASE("constant field below the threshold gives an empty mesh") {
        std::vector<double> field(9 * 9 * 9, 0.1);
        TriangleMesh mesh = marching_cubes_unit(field, {9, 9, 9}, 0.5);
        CHECK(mesh.vertices.empty());
        CHECK(mesh.triangles.empty());
    }
    SUBCASE("f(x,y,z) = z on a 33^3 grid gives a planar sheet at z = 0.5") {
        const int n = 33;
        std::vector<double> field(static_cast<size_t>(n) * n * n);
        size_t idx = 0;
        for (int k = 0; k < n; ++k)
            for (int j = 0; j < n; ++j)
                for (int i = 0; i < n; ++i) field[idx++] = static_cast<double>(k) / (n - 1);
        TriangleMesh mesh = marching_cubes_unit(field, {n, n, n}, 0.5);
        REQUIRE(!mesh.triangles.empty());
        for (const Vec3& v : mesh.vertices) CHECK(std::abs(v.z - 0.5) < 1e-9);
        // Full sheet: spans the unit square.
        double min_x = 1, max_x = 0;
        for (const Vec3& v : mesh.vertices) {
            min_x = std::min(min_x, v.x);
            max_x = std::max(max_x, v.x);
        }
        CHECK(min_x == doctest::Approx(0.0));
        CHECK(max_x == doctest::Approx(1.0));
    }
    SUBCASE("sphere probability field: vertices within one cell diagonal of the surface") {
        const int n = 33;
        double cell_diag = std::sqrt(3.0) / (n - 1);
        TriangleMesh mesh = marching_cubes_unit(sphere_prob_field(n, {0.5, 0.5, 0.5}, 0.3), {n, n, n}, 0.5);
        REQUIRE(!mesh.triangles.empty());
        for (const Vec3& v : mesh.vertices)
            CHECK(std::abs((v - Vec3{0.5, 0.5, 0.5}).norm() - 0.3) < cell_diag);
        CHECK(mesh_closed(mesh));
    }
    SUBCASE("non-finite field rejected; degenerate dims rejected") {
        std::vector<double> bad(8, 0.0);
        bad[3] = std::nan("");
        CHECK_THROWS_AS(marching_cubes_unit(bad, {2, 2, 2}, 0.5), std::invalid_argument);
        CHECK_THROWS_AS(marching_cubes_unit({0.0}, {1, 1, 1}, 0.5), std::invalid_argument);
    }
}

TEST_CASE("marching_cubes orientation: normals point toward lower field values") {
    const int n = 17;
    TriangleMesh mesh = marching_cubes_unit(sphere_prob_field(n, {0.5, 0.5, 0.5}, 0.3), {n, n, n}, 0.5);
    REQUIRE(!mesh.triangles.empty());
    int outward = 0, inward = 0;
    for (const auto& t : mesh.triangles) {
        Vec3 a = mesh.vertices[t[0]], b = mesh.vertices[t[1]], c = mesh.vertices[t[2]];
        Vec3 nrm = (b - a).cross(c - a);
        Vec3 centroid = (a + b + c) / 3.0 - Vec3{0.5, 0.5, 0.5};
        // Outside the sphere the field is lower, so outward-pointing
        // normals are toward lower values.
        (nrm.dot(centroid) > 0 ? outward : inward) += 1;
    }
    CHECK(inward == 0);
    CHECK(outward == static_cast<int>(mesh.triangles.size()));
}

TEST_CASE("marching_cubes meshes are closed on union and random smooth fields") {
    SUBCASE("two-box union") {
        const int n = 33;
        std::vector<double> field(static_cast<size_t>(n) * n * n);
        auto box_sdf = [](Vec3 p, Vec3 c, Vec3 h) {
            Vec3 d{std::abs(p.x - c.x) - h.x, std::abs(p.y - c.y) - h.y, std::abs(p.z - c.z) - h.z};
            return std::max({d.x, d.y, d.z});
        };
        size_t idx = 0;
        for (int k = 0; k < n; ++k)
            for (int j = 0; j < n; ++j)
                for (int i = 0; i < n; ++i) {
                    Vec3 p{static_cast<double>(i) / (n - 1), static_cast<double>(j) / (n - 1),
                           static_cast<double>(k) / (n - 1)};
                    double d = std::min(box_sdf(p, {0.35, 0.4, 0.4}, {0.15, 0.12, 0.2}),
                                        box_sdf(p, {0.65, 0.6, 0.55}, {0.1, 0.18, 0.14}));
                    field[idx++] = 1.0 / (1.0 + std::exp(60.0 * d));
                }
        TriangleMesh mesh = marching_cubes_unit(field, {n, n, n}, 0.5);
        CHECK(mesh_closed(mesh));
    }
    SUBCASE("random smooth fields (saddle cases exercised)") {
        RngStream rng(7);
        for (int trial = 0; trial < 10; ++trial) {
            // Random low-frequency field, strictly outside at the shell.
            const int n = 17;
            std::vector<double> field(static_cast<size_t>(n) * n * n, 0.0);
            const int waves = 4;
            double ax[waves], ay[waves], az[waves], ph[waves], amp[waves];
            for (int w = 0; w < waves; ++w) {
                ax[w] = rng.uniform(0.5, 2.5) * 2 * M_PI;
                ay[w] = rng.uniform(0.5, 2.5) * 2 * M_PI;
                az[w] = rng.uniform(0.5, 2.5) * 2 * M_PI;
                ph[w] = rng.uniform(0.0, 2 * M_PI);
                amp[w] = rng.uniform(0.3, 1.0);
            }
            size_t idx = 0;
            for (int k = 0; k < n; ++k)
                for (int j = 0; j < n; ++j)
                    for (int i = 0; i < n; ++i) {
                        bool shell = i == 0 || j == 0 || k == 0 || i == n - 1 || j == n - 1 || k == n - 1;
                        double x = static_cast<double>(i) / (n - 1), y = static_cast<double>(j) / (n - 1),
                               z = static_cast<double>(k) / (n - 1);
                        double v = 0;
                        for (int w = 0; w < waves; ++w)
                            v += amp[w] * std::sin(ax[w] * x + ph[w]) * std::sin(ay[w] * y + ph[w]) *
                                 std::sin(az[w] * z + ph[w]);
                        field[idx++] = shell ? -10.0 : v;
                    }
            TriangleMesh mesh = marching_cubes_unit(field, {n, n, n}, 0.0);
            if (!mesh.triangles.empty()) CHECK(mesh_closed(mesh));
        }
    }
}

TEST_CASE("TriangleMesh invariants from extraction") {
    const int n = 17;
    TriangleMesh mesh = marching_cubes_unit(sphere_prob_field(n, {0.5, 0.5, 0.5}, 0.35), {n, n, n}, 0.5);
    for (const auto& t : mesh.triangles) {
        CHECK(t[0] < mesh.vertices.size());
        CHECK(t[1] < mesh.vertices.size());
        CHECK(t[2] < mesh.vertices.size());
        CHECK(t[0] != t[1]);
        CHECK(t[1] != t[2]);
        CHECK(t[0] != t[2]);
    }
}

static FieldEval sphere_eval(Vec3 center, double radius, int64_t* counter = nullptr) {
    return [center, radius, counter](const std::vector<Vec3>& pts) {
        std::vector<double> out(pts.size());
        for (size_t i = 0; i < pts.size(); ++i) {
            double d = (pts[i] - center).norm() - radius;
            out[i] = 1.0 / (1.0 + std::exp(50.0 * d));
        }
        if (counter) *counter += static_cast<int64_t>(pts.size());
        return out;
    };
}

// Vertex sets compared as point sets (order-free symmetric Hausdorff).
static double vertex_set_hausdorff(const TriangleMesh& a, const TriangleMesh& b) {
    auto directed = [](const TriangleMesh& from, const TriangleMesh& to) {
        double worst = 0.0;
        for (const Vec3& p : from.vertices) {
            double best = 1e300;
            for (const Vec3& q : to.vertices) best = std::min(best, (p - q).norm());
            worst = std::max(worst, best);
        }
        return worst;
    };
    if (a.vertices.empty() && b.vertices.empty()) return 0.0;
    if (a.vertices.empty() || b.vertices.empty()) return 1e300;
    return std::max(directed(a, b), directed(b, a));
}

TEST_CASE("mise_extract") {
    SUBCASE("constant evaluator: initial lattice only, empty mesh") {
        int64_t calls = 0;
        FieldEval eval = [](const std::vector<Vec3>& pts) {
            return std::vector<double>(pts.size(), 0.2);
        };
        MiseConfig cfg;
        cfg.initial_resolution = 8;
        cfg.final_resolution = 32;
        TriangleMesh mesh = mise_extract(eval, cfg, &calls);
        CHECK(mesh.triangles.empty());
        CHECK(calls == 9 * 9 * 9);
    }
    SUBCASE("sphere: MISE equals dense extraction, with well under the full call count") {
        MiseConfig cfg;
        cfg.initial_resolution = 16;
        cfg.final_resolution = 64;
        int64_t mise_calls = 0, dense_calls = 0;
        FieldEval eval = sphere_eval({0.5, 0.5, 0.5}, 0.3);
        TriangleMesh mise_mesh = mise_extract(eval, cfg, &mise_calls);
        TriangleMesh dense_mesh = dense_extract(eval, 64, 0.5, &dense_calls);
        REQUIRE(!mise_mesh.triangles.empty());
        CHECK(mise_mesh.vertices.size() == dense_mesh.vertices.size());
        CHECK(mise_mesh.triangles.size() == dense_mesh.triangles.size());
        CHECK(vertex_set_hausdorff(mise_mesh, dense_mesh) < 1e-9);
        CHECK(mise_calls < dense_calls * 3 / 10);
    }
    SUBCASE("off-center small feature caught by the collar") {
        MiseConfig cfg;
        cfg.initial_resolution = 8;
        cfg.final_resolution = 32;
        FieldEval eval = sphere_eval({0.37, 0.52, 0.44}, 0.11);
        TriangleMesh mise_mesh = mise_extract(eval, cfg);
        TriangleMesh dense_mesh = dense_extract(eval, 32, 0.5);
        CHECK(vertex_set_hausdorff(mise_mesh, dense_mesh) < 1e-9);
    }
    SUBCASE("bad resolution pairing rejected") {
        MiseConfig cfg;
        cfg.initial_resolution = 10;
        cfg.final_resolution = 48;
        CHECK_THROWS_AS(mise_extract(sphere_eval({0.5, 0.5, 0.5}, 0.3), cfg), std::invalid_argument);
    }
}

static Model volume_model(uint64_t seed, int res, int depth) {
    Model m;
    m.cfg.encoder.mode = EncoderMode::volume;
    m.cfg.encoder.volume_resolution = res;
    m.cfg.encoder.feature_dim = 8;
    m.cfg.encoder.point_net_blocks = 1;
    m.cfg.head.hidden_dim = 16;
    m.cfg.head.resnet_blocks = 2;
    m.cfg.unet3d_depth = depth;
    m.init(seed);
    RngStream rng(seed + 1);
    for (auto& v : m.head.final_w.values()) v = rng.normal();
    m.head.final_b.data()[0] = rng.normal();
    return m;
}

static PointCloud two_blob_cloud(int n, RngStream& rng) {
    PointCloud cloud;
    for (int i = 0; i < n; ++i) {
        Vec3 c = i % 2 ? Vec3{0.3, 0.5, 0.5} : Vec3{0.72, 0.48, 0.52};
        cloud.points.push_back({c.x + rng.normal() * 0.08, c.y + rng.normal() * 0.08,
                                c.z + rng.normal() * 0.08});
    }
    return cloud;
}

TEST_CASE("sliding window") {
    RngStream rng(11);
    const int res = 32;
    Model m = volume_model(5, res, 1);
    PointCloud cloud = two_blob_cloud(400, rng);

    SUBCASE("single crop covering the scene matches the plain path exactly") {
        SlidingWindowConfig sw;
        sw.set_stride(res);  // one window
        sw.margin_cells = 0;
        StitchedField field = build_sliding_window_field(m, cloud, sw);
        Encoding enc = m.encode(cloud);
        std::vector<Vec3> probes;
        for (int i = 0; i < 300; ++i) probes.push_back({rng.uniform(), rng.uniform(), rng.uniform()});
        auto tiled = field.eval(probes);
        auto whole = m.predict_probabilities(enc, probes);
        for (size_t i = 0; i < probes.size(); ++i) CHECK(std::abs(tiled[i] - whole[i]) < 1e-9);
    }
    SUBCASE("2x1x1 tiling with receptive-field margin matches the whole run") {
        SlidingWindowConfig sw;
        sw.stride_cells = {16, 32, 32};
        StitchedField field = build_sliding_window_field(m, cloud, sw);
        CHECK(field.margin_cells >= unet_receptive_field_radius_cells(m.unet3d.cfg));
        Encoding enc = m.encode(cloud);
        std::vector<Vec3> probes;
        for (int i = 0; i < 500; ++i) probes.push_back({rng.uniform(), rng.uniform(), rng.uniform()});
        // Deliberately include probes near the crop seam.
        for (int i = 0; i < 200; ++i)
            probes.push_back({0.5 + rng.uniform(-0.03, 0.03), rng.uniform(), rng.uniform()});
        auto tiled = field.eval(probes);
        auto whole = m.predict_probabilities(enc, probes);
        double worst = 0;
        for (size_t i = 0; i < probes.size(); ++i) worst = std::max(worst, std::abs(tiled[i] - whole[i]));
        CHECK(worst < 1e-5);
    }
    SUBCASE("zero margin fails at the seam (negative control)") {
        SlidingWindowConfig sw;
        sw.stride_cells = {16, 32, 32};
        sw.margin_cells = 0;
        StitchedField field = build_sliding_window_field(m, cloud, sw);
        Encoding enc = m.encode(cloud);
        std::vector<Vec3> probes;
        for (int i = 0; i < 400; ++i)
            probes.push_back({0.5 + rng.uniform(-0.05, 0.05), rng.uniform(0.3, 0.7), rng.uniform(0.3, 0.7)});
        auto tiled = field.eval(probes);
        auto whole = m.predict_probabilities(enc, probes);
        double worst = 0;
        for (size_t i = 0; i < probes.size(); ++i) worst = std::max(worst, std::abs(tiled[i] - whole[i]));
        CHECK(worst > 1e-5);
    }
    SUBCASE("plane-mode models rejected; misaligned strides rejected") {
        Model planes;
        planes.cfg.encoder.mode = EncoderMode::three_planes;
        planes.cfg.encoder.plane_resolution = 16;
        planes.cfg.encoder.feature_dim = 8;
        planes.cfg.encoder.point_net_blocks = 1;
        planes.cfg.unet2d_depth = 1;
        planes.init(9);
        SlidingWindowConfig sw;
        CHECK_THROWS_AS(build_sliding_window_field(planes, cloud, sw), std::invalid_argument);
        SlidingWindowConfig odd;
        odd.stride_cells = {5, 32, 32};
        CHECK_THROWS_AS(build_sliding_window_field(m, cloud, odd), std::invalid_argument);
    }
    SUBCASE("empty crops are treated as empty space") {
        PointCloud corner_cloud;
        RngStream crng(3);
        for (int i = 0; i < 100; ++i)
            corner_cloud.points.push_back({0.1 + 0.1 * crng.uniform(), 0.1 + 0.1 * crng.uniform(),
                                           0.1 + 0.1 * crng.uniform()});
        SlidingWindowConfig sw;
        sw.stride_cells = {16, 16, 16};
        StitchedField field = build_sliding_window_field(m, corner_cloud, sw);
        auto probs = field.eval({{0.9, 0.9, 0.9}});
        CHECK(probs[0] > 0.0);
        CHECK(probs[0] < 1.0);
    }
}

TEST_CASE("sliding_window_reconstruct single window equals the plain mesh") {
    RngStream rng(21);
    const int res = 16;
    Model m = volume_model(6, res, 1);
    PointCloud cloud = two_blob_cloud(200, rng);
    MiseConfig mise;
    mise.initial_resolution = 8;
    mise.final_resolution = 16;
    SlidingWindowConfig sw;
    sw.set_stride(res);
    sw.margin_cells = 0;
    TriangleMesh tiled = sliding_window_reconstruct(m, cloud, sw, mise);
    TriangleMesh plain = mise_extract(m.field_evaluator(m.encode(cloud)), mise);
    REQUIRE(tiled.vertices.size() == plain.vertices.size());
    REQUIRE(tiled.triangles.size() == plain.triangles.size());
    CHECK(vertex_set_hausdorff(tiled, plain) < 1e-9);
}

TEST_CASE("mesh io round trips") {
    namespace fs = std::filesystem;
    fs::path dir = fs::temp_directory_path() / "convocc_test_meshio";
    fs::remove_all(dir);
    fs::create_directories(dir);
    const int n = 17;
    TriangleMesh mesh = marching_cubes_unit(sphere_prob_field(n, {0.5, 0.5, 0.5}, 0.3), {n, n, n}, 0.5);

    SUBCASE("binary PLY") {
        write_mesh_ply(dir / "m.ply", mesh);
        TriangleMesh back = read_mesh_ply(dir / "m.ply");
        REQUIRE(back.vertices.size() == mesh.vertices.size());
        REQUIRE(back.triangles.size() == mesh.triangles.size());
        for (size_t i = 0; i < mesh.vertices.size(); ++i)
            CHECK(std::abs(back.vertices[i].x - mesh.vertices[i].x) < 1e-6);  // f32
        for (size_t i = 0; i < mesh.triangles.size(); ++i) CHECK(back.triangles[i] == mesh.triangles[i]);
    }
    SUBCASE("OFF") {
        write_mesh_off(dir / "m.off", mesh);
        TriangleMesh back = read_mesh_off(dir / "m.off");
        REQUIRE(back.vertices.size() == mesh.vertices.size());
        for (size_t i = 0; i < mesh.vertices.size(); ++i)
            CHECK(std::abs(back.vertices[i].y - mesh.vertices[i].y) < 1e-12);
        for (size_t i = 0; i < mesh.triangles.size(); ++i) CHECK(back.triangles[i] == mesh.triangles[i]);
    }
    SUBCASE("PLY point reader accepts our mesh files as clouds") {
        write_mesh_ply(dir / "m.ply", mesh);
        PointCloud cloud = read_ply_points(dir / "m.ply");
        CHECK(cloud.points.size() == mesh.vertices.size());
    }
    SUBCASE("XYZ points") {
        std::ofstream xyz(dir / "p.xyz");
        xyz << "# comment line\n0.1 0.2 0.3\n0.4 0.5 0.6 extra ignored\n";
        xyz.close();
        PointCloud cloud = read_xyz_points(dir / "p.xyz");
        REQUIRE(cloud.points.size() == 2);
        CHECK(cloud.points[1].x == 0.4);
        std::ofstream bad(dir / "bad.xyz");
        bad << "0.1 oops 0.3\n";
        bad.close();
        CHECK_THROWS_AS(read_xyz_points(dir / "bad.xyz"), DataError);
    }
    fs::remove_all(dir);
}
