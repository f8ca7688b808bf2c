#include "convocc/metrics.hpp"

#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>

#include "convocc/parallel.hpp"

namespace convocc {

using nlohmann::json;

std::string report_to_json(const EvalReport& r) {
    json j;
    j["iou"] = r.iou;
    j["chamfer_l1"] = r.pred_empty || r.truth_empty ? json("inf") : json(r.chamfer_l1);
    j["normal_consistency"] = r.normal_consistency;
    j["f_score"] = r.f_score;
    j["fscore_threshold"] = r.fscore_threshold;
    j["n_surface_samples"] = r.n_surface_samples;
    j["n_volume_samples"] = r.n_volume_samples;
    j["seed"] = r.seed;
    j["single_surface"] = r.single_surface;
    j["pred_empty"] = r.pred_empty;
    j["truth_empty"] = r.truth_empty;
    return j.dump(2) + "\n";
}

std::string report_table(const EvalReport& r) {
    char buf[256];
    std::snprintf(buf, sizeof(buf),
                  "%-12s %-12s %-12s %-12s\n%-12.4f %-12.4f %-12.4f %-12.4f\n", "IoU",
                  "Chamfer-L1", "Normal C.", "F-Score", r.iou,
                  r.pred_empty || r.truth_empty ? std::numeric_limits<double>::infinity() : r.chamfer_l1,
                  r.normal_consistency, r.f_score);
    return buf;
}

// ---------------------------------------------------------------- sampling

SurfaceSamples sample_mesh_surface(const TriangleMesh& mesh, int n, uint64_t seed) {
    SurfaceSamples out;
    if (mesh.triangles.empty()) return out;
    std::vector<double> cum(mesh.triangles.size());
    std::vector<Vec3> face_normals(mesh.triangles.size());
    double total = 0.0;
    for (size_t t = 0; t < mesh.triangles.size(); ++t) {
        const Vec3& a = mesh.vertices[mesh.triangles[t][0]];
        const Vec3& b = mesh.vertices[mesh.triangles[t][1]];
        const Vec3& c = mesh.vertices[mesh.triangles[t][2]];
        Vec3 cr = (b - a).cross(c - a);
        double area = 0.5 * cr.norm();
        total += area;
        cum[t] = total;
        face_normals[t] = cr.normalized();
    }
    if (total <= 0.0) return out;
    RngStream rng(seed);
    out.points.reserve(static_cast<size_t>(n));
    out.normals.reserve(static_cast<size_t>(n));
    for (int i = 0; i < n; ++i) {
        double pick = rng.uniform() * total;
        size_t t = static_cast<size_t>(std::lower_bound(cum.begin(), cum.end(), pick) - cum.begin());
        if (t >= mesh.triangles.size()) t = mesh.triangles.size() - 1;
        const Vec3& a = mesh.vertices[mesh.triangles[t][0]];
        const Vec3& b = mesh.vertices[mesh.triangles[t][1]];
        const Vec3& c = mesh.vertices[mesh.triangles[t][2]];
        double r1 = std::sqrt(rng.uniform());
        double r2 = rng.uniform();
        Vec3 p = a * (1 - r1) + b * (r1 * (1 - r2)) + c * (r1 * r2);
        out.points.push_back(p);
        out.normals.push_back(face_normals[t]);
    }
    return out;
}

SurfaceSamples sample_scene_surface_points(const SceneSpec& scene, const NormMap& map, int n,
                                           uint64_t seed, bool single_surface) {
    SurfaceSampleOptions opts;
    opts.with_normals = true;
    opts.single_surface = single_surface;
    PointCloud cloud = sample_surface(scene, map, n, 0.0, seed, opts);
    SurfaceSamples out;
    out.points = std::move(cloud.points);
    out.normals = std::move(cloud.normals);
    return out;
}

// ---------------------------------------------------------------- grid NN

GridNN::GridNN(std::vector<Vec3> points) : points_(std::move(points)) {
    if (points_.empty()) throw std::invalid_argument("GridNN: empty point set");
    Vec3 hi = points_[0];
    lo_ = points_[0];
    for (const Vec3& p : points_)
        for (int a = 0; a < 3; ++a) {
            lo_[a] = std::min(lo_[a], p[a]);
            hi[a] = std::max(hi[a], p[a]);
        }
    double extent = std::max({hi.x - lo_.x, hi.y - lo_.y, hi.z - lo_.z, 1e-9});
    res_ = std::clamp(static_cast<int>(std::cbrt(static_cast<double>(points_.size()) / 2.0)), 1, 128);
    cell_ = extent / res_ + 1e-12;
    cells_.assign(static_cast<size_t>(res_) * res_ * res_, {});
    for (size_t i = 0; i < points_.size(); ++i) cells_[cell_of(points_[i])].push_back(static_cast<uint32_t>(i));
}

size_t GridNN::cell_of(const Vec3& p) const {
    int ix = std::clamp(static_cast<int>((p.x - lo_.x) / cell_), 0, res_ - 1);
    int iy = std::clamp(static_cast<int>((p.y - lo_.y) / cell_), 0, res_ - 1);
    int iz = std::clamp(static_cast<int>((p.z - lo_.z) / cell_), 0, res_ - 1);
    return (static_cast<size_t>(iz) * res_ + static_cast<size_t>(iy)) * res_ + static_cast<size_t>(ix);
}

std::pair<size_t, double> GridNN::nearest(const Vec3& q) const {
    int cx = std::clamp(static_cast<int>((q.x - lo_.x) / cell_), 0, res_ - 1);
    int cy = std::clamp(static_cast<int>((q.y - lo_.y) / cell_), 0, res_ - 1);
    int cz = std::clamp(static_cast<int>((q.z - lo_.z) / cell_), 0, res_ - 1);
    size_t best = 0;
    double best_d2 = std::numeric_limits<double>::infinity();
    for (int ring = 0; ring < 2 * res_; ++ring) {
        // Cells whose Chebyshev distance from the query cell equals ring.
        bool scanned_any = false;
        for (int dz = -ring; dz <= ring; ++dz)
            for (int dy = -ring; dy <= ring; ++dy)
                for (int dx = -ring; dx <= ring; ++dx) {
                    if (std::max({std::abs(dx), std::abs(dy), std::abs(dz)}) != ring) continue;
                    int ix = cx + dx, iy = cy + dy, iz = cz + dz;
                    if (ix < 0 || iy < 0 || iz < 0 || ix >= res_ || iy >= res_ || iz >= res_) continue;
                    scanned_any = true;
                    const auto& bucket =
                        cells_[(static_cast<size_t>(iz) * res_ + static_cast<size_t>(iy)) * res_ +
                               static_cast<size_t>(ix)];
                    for (uint32_t idx : bucket) {
                        Vec3 d = points_[idx] - q;
                        double d2 = d.dot(d);
                        if (d2 < best_d2 || (d2 == best_d2 && idx < best)) {
                            best_d2 = d2;
                            best = idx;
                        }
                    }
                }
        // Any point in a farther ring is at least (ring) cells away.
        if (best_d2 < std::numeric_limits<double>::infinity()) {
            double safe = static_cast<double>(ring) * cell_;
            if (best_d2 <= safe * safe) break;
        }
        if (!scanned_any && ring > res_) break;
    }
    return {best, std::sqrt(best_d2)};
}

// ---------------------------------------------------------------- inside tests

InsideFn mesh_inside_tester(const TriangleMesh& mesh) {
    struct Accel {
        std::vector<Vec3> va, vb, vc;
        int res = 64;
        double ylo = 0, zlo = 0, cell = 1;
        std::vector<std::vector<uint32_t>> buckets;
    };
    auto accel = std::make_shared<Accel>();
    if (mesh.triangles.empty()) {
        return [](const Vec3&) { return false; };
    }
    double ylo = 1e300, yhi = -1e300, zlo = 1e300, zhi = -1e300;
    for (const Vec3& v : mesh.vertices) {
        ylo = std::min(ylo, v.y);
        yhi = std::max(yhi, v.y);
        zlo = std::min(zlo, v.z);
        zhi = std::max(zhi, v.z);
    }
    accel->ylo = ylo;
    accel->zlo = zlo;
    accel->cell = std::max({yhi - ylo, zhi - zlo, 1e-9}) / accel->res + 1e-12;
    accel->buckets.assign(static_cast<size_t>(accel->res) * accel->res, {});
    for (size_t t = 0; t < mesh.triangles.size(); ++t) {
        const Vec3& a = mesh.vertices[mesh.triangles[t][0]];
        const Vec3& b = mesh.vertices[mesh.triangles[t][1]];
        const Vec3& c = mesh.vertices[mesh.triangles[t][2]];
        accel->va.push_back(a);
        accel->vb.push_back(b);
        accel->vc.push_back(c);
        int y0 = std::clamp(static_cast<int>((std::min({a.y, b.y, c.y}) - ylo) / accel->cell), 0, accel->res - 1);
        int y1 = std::clamp(static_cast<int>((std::max({a.y, b.y, c.y}) - ylo) / accel->cell), 0, accel->res - 1);
        int z0 = std::clamp(static_cast<int>((std::min({a.z, b.z, c.z}) - zlo) / accel->cell), 0, accel->res - 1);
        int z1 = std::clamp(static_cast<int>((std::max({a.z, b.z, c.z}) - zlo) / accel->cell), 0, accel->res - 1);
        for (int zi = z0; zi <= z1; ++zi)
            for (int yi = y0; yi <= y1; ++yi)
                accel->buckets[static_cast<size_t>(zi) * accel->res + static_cast<size_t>(yi)].push_back(
                    static_cast<uint32_t>(t));
    }
    return [accel](const Vec3& q) {
        int yi = static_cast<int>((q.y - accel->ylo) / accel->cell);
        int zi = static_cast<int>((q.z - accel->zlo) / accel->cell);
        if (yi < 0 || zi < 0 || yi >= accel->res || zi >= accel->res) return false;
        const auto& bucket = accel->buckets[static_cast<size_t>(zi) * accel->res + static_cast<size_t>(yi)];
        int hits = 0;
        for (uint32_t t : bucket) {
            // Moller-Trumbore with ray direction +x.
            const Vec3& a = accel->va[t];
            Vec3 e1 = accel->vb[t] - a;
            Vec3 e2 = accel->vc[t] - a;
            // h = dir x e2 = (1,0,0) x e2
            Vec3 h{0.0, -e2.z, e2.y};
            double det = e1.dot(h);
            if (std::abs(det) < 1e-14) continue;
            double inv = 1.0 / det;
            Vec3 s = q - a;
            double u = s.dot(h) * inv;
            if (u < 0.0 || u > 1.0) continue;
            Vec3 qv = s.cross(e1);
            double v = qv.x * inv;  // dir . qv with dir = +x
            if (v < 0.0 || u + v > 1.0) continue;
            double dist = e2.dot(qv) * inv;
            if (dist > 1e-12) ++hits;
        }
        return (hits & 1) == 1;
    };
}

double volumetric_iou(const InsideFn& a, const InsideFn& b, int64_t n_samples, uint64_t seed, int jobs) {
    if (n_samples < 1) throw std::invalid_argument("volumetric_iou: need at least one sample");
    const int64_t shards = jobs > 1 ? jobs * 8 : 1;
    std::vector<int64_t> inter(static_cast<size_t>(shards), 0), uni(static_cast<size_t>(shards), 0);
    const int64_t per = (n_samples + shards - 1) / shards;
    parallel_for(shards, jobs, [&](int64_t s) {
        RngStream rng(derive_seed(seed, 0x10D0 + static_cast<uint64_t>(s)));
        int64_t lo = s * per, hi = std::min(n_samples, (s + 1) * per);
        for (int64_t i = lo; i < hi; ++i) {
            Vec3 p{rng.uniform(), rng.uniform(), rng.uniform()};
            bool ia = a(p), ib = b(p);
            inter[static_cast<size_t>(s)] += ia && ib;
            uni[static_cast<size_t>(s)] += ia || ib;
        }
    });
    int64_t I = 0, U = 0;
    for (int64_t s = 0; s < shards; ++s) {
        I += inter[static_cast<size_t>(s)];
        U += uni[static_cast<size_t>(s)];
    }
    return U == 0 ? 1.0 : static_cast<double>(I) / static_cast<double>(U);
}

// ---------------------------------------------------------------- distances

static double mean_nn_distance(const SurfaceSamples& from, const GridNN& to) {
    double acc = 0.0;
    for (const Vec3& p : from.points) acc += to.nearest(p).second;
    return acc / static_cast<double>(from.points.size());
}

double chamfer_l1(const SurfaceSamples& pred, const SurfaceSamples& truth) {
    if (pred.points.empty() || truth.points.empty())
        return std::numeric_limits<double>::infinity();
    GridNN pred_nn(pred.points), truth_nn(truth.points);
    double accuracy = mean_nn_distance(pred, truth_nn);
    double completeness = mean_nn_distance(truth, pred_nn);
    return 0.5 * (accuracy + completeness);
}

static double directed_normal_consistency(const SurfaceSamples& from, const SurfaceSamples& to,
                                          const GridNN& to_nn) {
    double acc = 0.0;
    for (size_t i = 0; i < from.points.size(); ++i) {
        size_t j = to_nn.nearest(from.points[i]).first;
        acc += std::abs(from.normals[i].dot(to.normals[j]));
    }
    return acc / static_cast<double>(from.points.size());
}

double normal_consistency(const SurfaceSamples& pred, const SurfaceSamples& truth) {
    if (pred.points.empty() || truth.points.empty()) return 0.0;
    GridNN pred_nn(pred.points), truth_nn(truth.points);
    return 0.5 * (directed_normal_consistency(pred, truth, truth_nn) +
                  directed_normal_consistency(truth, pred, pred_nn));
}

double f_score(const SurfaceSamples& pred, const SurfaceSamples& truth, double threshold) {
    if (threshold <= 0.0) throw std::invalid_argument("f_score: threshold must be positive");
    if (pred.points.empty() || truth.points.empty()) return 0.0;
    GridNN pred_nn(pred.points), truth_nn(truth.points);
    int64_t prec_hits = 0, rec_hits = 0;
    for (const Vec3& p : pred.points)
        if (truth_nn.nearest(p).second <= threshold) ++prec_hits;
    for (const Vec3& p : truth.points)
        if (pred_nn.nearest(p).second <= threshold) ++rec_hits;
    double precision = static_cast<double>(prec_hits) / static_cast<double>(pred.points.size());
    double recall = static_cast<double>(rec_hits) / static_cast<double>(truth.points.size());
    if (precision + recall == 0.0) return 0.0;
    return 2.0 * precision * recall / (precision + recall);
}

// ---------------------------------------------------------------- reports

static EvalReport evaluate_common(const TriangleMesh& pred, const SurfaceSamples& pred_samples,
                                  const SurfaceSamples& truth_samples, const InsideFn& truth_inside,
                                  const EvalOptions& opts) {
    EvalReport r;
    r.fscore_threshold = opts.fscore_threshold;
    r.n_surface_samples = opts.surface_samples;
    r.n_volume_samples = opts.volume_samples;
    r.seed = opts.seed;
    r.single_surface = opts.single_surface;
    r.pred_empty = pred_samples.points.empty();
    r.truth_empty = truth_samples.points.empty();
    InsideFn pred_inside = mesh_inside_tester(pred);
    r.iou = volumetric_iou(pred_inside, truth_inside, opts.volume_samples, derive_seed(opts.seed, 1),
                           opts.jobs);
    if (!r.pred_empty && !r.truth_empty) {
        r.chamfer_l1 = chamfer_l1(pred_samples, truth_samples);
        r.normal_consistency = normal_consistency(pred_samples, truth_samples);
        r.f_score = f_score(pred_samples, truth_samples, opts.fscore_threshold);
    } else {
        r.chamfer_l1 = std::numeric_limits<double>::infinity();
        r.normal_consistency = 0.0;
        r.f_score = 0.0;
    }
    return r;
}

EvalReport evaluate_mesh_vs_scene(const TriangleMesh& pred, const SceneSpec& scene, const NormMap& map,
                                  const EvalOptions& opts) {
    SurfaceSamples ps = sample_mesh_surface(pred, opts.surface_samples, derive_seed(opts.seed, 2));
    SurfaceSamples ts = sample_scene_surface_points(scene, map, opts.surface_samples,
                                                    derive_seed(opts.seed, 3), opts.single_surface);
    InsideFn truth_inside = [&scene, &map](const Vec3& p) { return scene_contains_unit(scene, map, p); };
    return evaluate_common(pred, ps, ts, truth_inside, opts);
}

EvalReport evaluate_mesh_vs_mesh(const TriangleMesh& pred, const TriangleMesh& truth,
                                 const EvalOptions& opts) {
    SurfaceSamples ps = sample_mesh_surface(pred, opts.surface_samples, derive_seed(opts.seed, 2));
    SurfaceSamples ts = sample_mesh_surface(truth, opts.surface_samples, derive_seed(opts.seed, 3));
    InsideFn truth_inside = mesh_inside_tester(truth);
    return evaluate_common(pred, ps, ts, truth_inside, opts);
}

}  // namespace convocc
