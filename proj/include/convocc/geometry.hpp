#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <vector>

#include "convocc/common.hpp"

namespace convocc {

enum class ShapeKind { sphere, box, cylinder };
const char* shape_kind_name(ShapeKind kind);

// Unit primitive (sphere radius 1, box [-1,1]^3, cylinder radius 1 with
// z in [-1,1]) mapped to world space as  p = R * (scale .* local) + t.
struct Primitive {
    ShapeKind kind = ShapeKind::sphere;
    Mat3 rotation;
    Vec3 translation{0, 0, 0};
    Vec3 scale{1, 1, 1};
};

// Implicit value in the primitive's local frame; <= 0 inside. This is the
// unit-shape level function, not a metric distance.
double primitive_implicit(const Primitive& prim, const Vec3& world_p);
bool primitive_contains(const Primitive& prim, const Vec3& world_p);
// Surface area in world units (exact for boxes, quadrature for scaled
// spheres/cylinders).
double primitive_surface_area(const Primitive& prim);
// Half-extent of the world-space AABB along each axis (centered at the
// translation).
Vec3 primitive_aabb_half_extent(const Primitive& prim);

struct SceneSpec {
    std::vector<Primitive> primitives;
    std::optional<Aabb> ground;   // slab of thickness kSlabThickness
    std::vector<Aabb> walls;      // 0..4 axis-aligned slabs
    Aabb bounds{{0, 0, 0}, {1, 1, 1}};
    uint64_t seed = 0;
};

inline constexpr double kSlabThickness = 0.01;
// Boundary points count as occupied; this tolerance removes measure-zero
// ambiguity at exact surface points.
inline constexpr double kBoundaryEps = 1e-9;

bool scene_contains(const SceneSpec& scene, const Vec3& world_p);
std::vector<uint8_t> occupancy_query(const SceneSpec& scene, const std::vector<Vec3>& world_points);

// Isotropic map taking scene bounds into [padding/2, 1-padding/2]^3,
// centered. 0 <= padding < 0.5.
struct NormMap {
    double scale = 1.0;
    Vec3 center{0.5, 0.5, 0.5};

    Vec3 to_unit(const Vec3& world) const {
        return {(world.x - center.x) * scale + 0.5, (world.y - center.y) * scale + 0.5,
                (world.z - center.z) * scale + 0.5};
    }
    Vec3 to_world(const Vec3& unit) const {
        return {(unit.x - 0.5) / scale + center.x, (unit.y - 0.5) / scale + center.y,
                (unit.z - 0.5) / scale + center.z};
    }
};

NormMap normalize_scene(const SceneSpec& scene, double padding = 0.1);

inline bool scene_contains_unit(const SceneSpec& scene, const NormMap& map, const Vec3& unit_p) {
    return scene_contains(scene, map.to_world(unit_p));
}

struct PointCloud {
    std::vector<Vec3> points;   // normalized coordinates
    std::vector<Vec3> normals;  // optional, unit length

    bool has_normals() const { return !normals.empty(); }
    size_t size() const { return points.size(); }
};

struct VoxelGrid {
    int resolution = 0;
    std::vector<uint8_t> occupancy;  // [z][y][x], values 0/1
    NormMap map;                     // world-to-grid via normalized coords

    uint8_t at(int ix, int iy, int iz) const {
        return occupancy[(static_cast<size_t>(iz) * resolution + iy) * resolution + ix];
    }
};

struct TriangleMesh {
    std::vector<Vec3> vertices;
    std::vector<std::array<uint32_t, 3>> triangles;

    bool empty() const { return triangles.empty(); }
};

struct SurfaceSampleOptions {
    bool with_normals = false;
    // Collapse double-sided ground/wall slabs to a single surface
    // (their dominant face).
    bool single_surface = false;
};

// Area-weighted surface samples in normalized coordinates, with isotropic
// Gaussian noise of std noise_sigma added per coordinate after
// normalization. Deterministic given seed.
PointCloud sample_surface(const SceneSpec& scene, const NormMap& map, int n, double noise_sigma,
                          uint64_t seed, const SurfaceSampleOptions& opts = {});
PointCloud sample_surface(const SceneSpec& scene, int n, double noise_sigma, uint64_t seed);

// Voxel occupied iff its center (i+0.5)/R in normalized coords lies inside
// the scene. resolution >= 2.
VoxelGrid voxelize(const SceneSpec& scene, const NormMap& map, int resolution);

struct SceneGenConfig {
    int min_objects = 1;
    int max_objects = 3;
    double min_scale = 0.12;       // per-axis half extent, world units
    double max_scale = 0.30;
    bool anisotropic = true;       // spheres always stay isotropic
    bool include_ground = false;
    double wall_probability = 0.0;
    Aabb bounds{{0, 0, 0}, {1, 1, 1}};
};

// Deterministic given (config, seed). Objects rest on or above the ground
// plane and never protrude outside bounds; infeasible configurations are
// rejected.
SceneSpec generate_scene(const SceneGenConfig& config, uint64_t seed);

}  // namespace convocc
