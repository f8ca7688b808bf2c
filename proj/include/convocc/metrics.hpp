#pragma once

#include <functional>
#include <string>

#include "convocc/geometry.hpp"

namespace convocc {

struct EvalReport {
    double iou = 0.0;
    double chamfer_l1 = 0.0;
    double normal_consistency = 0.0;
    double f_score = 0.0;
    double fscore_threshold = 0.01;
    int64_t n_surface_samples = 0;
    int64_t n_volume_samples = 0;
    uint64_t seed = 0;
    bool single_surface = false;
    bool pred_empty = false;
    bool truth_empty = false;
};

std::string report_to_json(const EvalReport& report);
// Aligned columns in the usual metric order: IoU, Chamfer-L1, Normal C.,
// F-Score.
std::string report_table(const EvalReport& report);

struct SurfaceSamples {
    std::vector<Vec3> points;
    std::vector<Vec3> normals;
};

// Area-weighted samples with face normals. Deterministic given seed.
SurfaceSamples sample_mesh_surface(const TriangleMesh& mesh, int n, uint64_t seed);
SurfaceSamples sample_scene_surface_points(const SceneSpec& scene, const NormMap& map, int n,
                                           uint64_t seed, bool single_surface);

// Uniform-grid nearest neighbor with deterministic tie-breaking (lowest
// index wins). The brute-force oracle lives in the tests.
class GridNN {
public:
    explicit GridNN(std::vector<Vec3> points);
    // (index, euclidean distance)
    std::pair<size_t, double> nearest(const Vec3& q) const;
    size_t size() const { return points_.size(); }

private:
    std::vector<Vec3> points_;
    Vec3 lo_{0, 0, 0};
    double cell_ = 1.0;
    int res_ = 1;
    std::vector<std::vector<uint32_t>> cells_;
    size_t cell_of(const Vec3& p) const;
};

using InsideFn = std::function<bool(const Vec3&)>;

// Parity ray casting along +x with a (y,z) bucket grid; meshes must be
// closed for meaningful results.
InsideFn mesh_inside_tester(const TriangleMesh& mesh);

// |A and B| / |A or B| over uniform samples of the unit cube; 1 when both
// are empty.
double volumetric_iou(const InsideFn& a, const InsideFn& b, int64_t n_samples, uint64_t seed,
                      int jobs = 1);

// Mean of accuracy and completeness (mean symmetric nearest-neighbor
// distance between the two sample sets).
double chamfer_l1(const SurfaceSamples& pred, const SurfaceSamples& truth);
// Mean absolute cosine between each sample's normal and its nearest
// neighbor's, both directions averaged.
double normal_consistency(const SurfaceSamples& pred, const SurfaceSamples& truth);
// Harmonic mean of precision and recall at the distance threshold.
double f_score(const SurfaceSamples& pred, const SurfaceSamples& truth, double threshold);

struct EvalOptions {
    int surface_samples = 100000;
    int volume_samples = 100000;
    double fscore_threshold = 0.01;
    bool single_surface = false;
    uint64_t seed = 0;
    int jobs = 1;
};

EvalReport evaluate_mesh_vs_scene(const TriangleMesh& pred, const SceneSpec& scene, const NormMap& map,
                                  const EvalOptions& opts);
EvalReport evaluate_mesh_vs_mesh(const TriangleMesh& pred, const TriangleMesh& truth,
                                 const EvalOptions& opts);

}  // namespace convocc
