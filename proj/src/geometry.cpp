#include "convocc/geometry.hpp"

#include <algorithm>
#include <cmath>

namespace convocc {

const char* shape_kind_name(ShapeKind kind) {
    switch (kind) {
        case ShapeKind::sphere: return "sphere";
        case ShapeKind::box: return "box";
        case ShapeKind::cylinder: return "cylinder";
    }
    return "?";
}

static Vec3 to_local(const Primitive& prim, const Vec3& world_p) {
    Vec3 r = prim.rotation.transposed_mul(world_p - prim.translation);
    return r.cwise_div(prim.scale);
}

double primitive_implicit(const Primitive& prim, const Vec3& world_p) {
    Vec3 l = to_local(prim, world_p);
    switch (prim.kind) {
        case ShapeKind::sphere:
            return l.norm() - 1.0;
        case ShapeKind::box:
            return std::max({std::abs(l.x), std::abs(l.y), std::abs(l.z)}) - 1.0;
        case ShapeKind::cylinder:
            return std::max(std::hypot(l.x, l.y) - 1.0, std::abs(l.z) - 1.0);
    }
    return 1.0;
}

bool primitive_contains(const Primitive& prim, const Vec3& world_p) {
    return primitive_implicit(prim, world_p) <= kBoundaryEps;
}

static double ellipsoid_density(const Vec3& s, const Vec3& n) {
    return Vec3{s.y * s.z * n.x, s.x * s.z * n.y, s.x * s.y * n.z}.norm();
}

double primitive_surface_area(const Primitive& prim) {
    const Vec3& s = prim.scale;
    switch (prim.kind) {
        case ShapeKind::box:
            return 8.0 * (s.y * s.z + s.x * s.z + s.x * s.y);
        case ShapeKind::sphere: {
            // Quadrature of the area-density over the unit sphere.
            const int nt = 256, np = 512;
            double acc = 0.0;
            for (int i = 0; i < nt; ++i) {
                double theta = M_PI * (i + 0.5) / nt;
                double st = std::sin(theta), ct = std::cos(theta);
                double row = 0.0;
                for (int j = 0; j < np; ++j) {
                    double phi = 2.0 * M_PI * (j + 0.5) / np;
                    Vec3 n{st * std::cos(phi), st * std::sin(phi), ct};
                    row += ellipsoid_density(s, n);
                }
                acc += row * st;
            }
            return acc * (M_PI / nt) * (2.0 * M_PI / np);
        }
        case ShapeKind::cylinder: {
            double caps = 2.0 * M_PI * s.x * s.y;
            const int np = 4096;
            double side = 0.0;
            for (int j = 0; j < np; ++j) {
                double phi = 2.0 * M_PI * (j + 0.5) / np;
                side += std::sqrt(s.x * s.x * std::sin(phi) * std::sin(phi) +
                                  s.y * s.y * std::cos(phi) * std::cos(phi));
            }
            side *= (2.0 * M_PI / np) * 2.0 * s.z;
            return caps + side;
        }
    }
    return 0.0;
}

Vec3 primitive_aabb_half_extent(const Primitive& prim) {
    Vec3 h;
    for (int axis = 0; axis < 3; ++axis) {
        Vec3 e{0, 0, 0};
        e[axis] = 1.0;
        Vec3 u = prim.rotation.transposed_mul(e).cwise_mul(prim.scale);
        switch (prim.kind) {
            case ShapeKind::sphere: h[axis] = u.norm(); break;
            case ShapeKind::box: h[axis] = std::abs(u.x) + std::abs(u.y) + std::abs(u.z); break;
            case ShapeKind::cylinder: h[axis] = std::hypot(u.x, u.y) + std::abs(u.z); break;
        }
    }
    return h;
}

static bool slab_contains(const Aabb& slab, const Vec3& p) {
    return p.x >= slab.min.x - kBoundaryEps && p.x <= slab.max.x + kBoundaryEps &&
           p.y >= slab.min.y - kBoundaryEps && p.y <= slab.max.y + kBoundaryEps &&
           p.z >= slab.min.z - kBoundaryEps && p.z <= slab.max.z + kBoundaryEps;
}

bool scene_contains(const SceneSpec& scene, const Vec3& p) {
    for (const Primitive& prim : scene.primitives)
        if (primitive_contains(prim, p)) return true;
    if (scene.ground && slab_contains(*scene.ground, p)) return true;
    for (const Aabb& wall : scene.walls)
        if (slab_contains(wall, p)) return true;
    return false;
}

std::vector<uint8_t> occupancy_query(const SceneSpec& scene, const std::vector<Vec3>& world_points) {
    std::vector<uint8_t> out(world_points.size(), 0);
    for (size_t i = 0; i < world_points.size(); ++i)
        out[i] = scene_contains(scene, world_points[i]) ? 1 : 0;
    return out;
}

NormMap normalize_scene(const SceneSpec& scene, double padding) {
    if (padding < 0.0 || padding >= 0.5)
        throw std::invalid_argument("normalize_scene: padding " + std::to_string(padding) +
                                    " outside [0, 0.5)");
    Vec3 ext = scene.bounds.extent();
    double m = ext.max_coeff();
    if (m <= 0.0) throw std::invalid_argument("normalize_scene: degenerate bounds (zero extent)");
    NormMap map;
    map.scale = (1.0 - padding) / m;
    map.center = scene.bounds.center();
    return map;
}

// ---------------------------------------------------------------- sampling

namespace {

struct SurfacePart {
    enum class Kind { primitive, slab } kind;
    const Primitive* prim = nullptr;
    Aabb slab;
    bool single_surface = false;
    double area = 0.0;
};

// One point + outward normal on the local unit shape, area-uniform in
// world measure. Uses rejection against the area-density bound for curved
// parts; flat parts transform affinely so plain uniform sampling is exact.
void sample_primitive_world(const Primitive& prim, RngStream& rng, Vec3& point, Vec3& normal) {
    const Vec3& s = prim.scale;
    Vec3 local, ln;
    switch (prim.kind) {
        case ShapeKind::sphere: {
            double mmax = std::max({s.y * s.z, s.x * s.z, s.x * s.y});
            for (;;) {
                Vec3 n{rng.normal(), rng.normal(), rng.normal()};
                double len = n.norm();
                if (len < 1e-12) continue;
                n = n / len;
                if (rng.uniform() * mmax <= ellipsoid_density(s, n)) {
                    local = n;
                    ln = n;
                    break;
                }
            }
            break;
        }
        case ShapeKind::box: {
            double ax = s.y * s.z, ay = s.x * s.z, az = s.x * s.y;
            double pick = rng.uniform() * (ax + ay + az);
            double sign = rng.uniform() < 0.5 ? -1.0 : 1.0;
            double u = rng.uniform(-1.0, 1.0), v = rng.uniform(-1.0, 1.0);
            if (pick < ax) {
                local = {sign, u, v};
                ln = {sign, 0, 0};
            } else if (pick < ax + ay) {
                local = {u, sign, v};
                ln = {0, sign, 0};
            } else {
                local = {u, v, sign};
                ln = {0, 0, sign};
            }
            break;
        }
        case ShapeKind::cylinder: {
            double cap_area = 2.0 * M_PI * s.x * s.y;
            double lmax = std::max(s.x, s.y);
            const int np = 512;
            double side = 0.0;
            for (int j = 0; j < np; ++j) {
                double phi = 2.0 * M_PI * (j + 0.5) / np;
                side += std::sqrt(s.x * s.x * std::sin(phi) * std::sin(phi) +
                                  s.y * s.y * std::cos(phi) * std::cos(phi));
            }
            side *= (2.0 * M_PI / np) * 2.0 * s.z;
            if (rng.uniform() * (side + cap_area) < side) {
                for (;;) {
                    double phi = rng.uniform(0.0, 2.0 * M_PI);
                    double dens = std::sqrt(s.x * s.x * std::sin(phi) * std::sin(phi) +
                                            s.y * s.y * std::cos(phi) * std::cos(phi));
                    if (rng.uniform() * lmax <= dens) {
                        local = {std::cos(phi), std::sin(phi), rng.uniform(-1.0, 1.0)};
                        ln = {std::cos(phi), std::sin(phi), 0};
                        break;
                    }
                }
            } else {
                double r = std::sqrt(rng.uniform());
                double phi = rng.uniform(0.0, 2.0 * M_PI);
                double sign = rng.uniform() < 0.5 ? -1.0 : 1.0;
                local = {r * std::cos(phi), r * std::sin(phi), sign};
                ln = {0, 0, sign};
            }
            break;
        }
    }
    point = prim.rotation * local.cwise_mul(s) + prim.translation;
    // Normals transform with the inverse-transpose of the scaling.
    normal = (prim.rotation * ln.cwise_div(s)).normalized();
}

double slab_area(const Aabb& slab, bool single_surface) {
    Vec3 e = slab.extent();
    if (single_surface) {
        // Dominant face only.
        int thin = 0;
        if (e.y < e[thin]) thin = 1;
        if (e.z < e[thin]) thin = 2;
        double a = 1.0;
        for (int i = 0; i < 3; ++i)
            if (i != thin) a *= e[i];
        return a;
    }
    return 2.0 * (e.x * e.y + e.y * e.z + e.x * e.z);
}

void sample_slab(const Aabb& slab, bool single_surface, const Vec3& toward, RngStream& rng, Vec3& point,
                 Vec3& normal) {
    Vec3 e = slab.extent();
    int face_axis;
    double sign;
    if (single_surface) {
        int thin = 0;
        if (e.y < e[thin]) thin = 1;
        if (e.z < e[thin]) thin = 2;
        face_axis = thin;
        sign = toward[thin] >= slab.center()[thin] ? 1.0 : -1.0;
    } else {
        double ax = e.y * e.z, ay = e.x * e.z, az = e.x * e.y;
        double pick = rng.uniform() * 2.0 * (ax + ay + az);
        if (pick < 2 * ax) face_axis = 0;
        else if (pick < 2 * (ax + ay)) face_axis = 1;
        else face_axis = 2;
        sign = rng.uniform() < 0.5 ? -1.0 : 1.0;
    }
    Vec3 p;
    for (int i = 0; i < 3; ++i)
        p[i] = i == face_axis ? (sign > 0 ? slab.max[i] : slab.min[i])
                              : rng.uniform(slab.min[i], slab.max[i]);
    point = p;
    normal = {0, 0, 0};
    normal[face_axis] = sign;
}

}  // namespace

PointCloud sample_surface(const SceneSpec& scene, const NormMap& map, int n, double noise_sigma,
                          uint64_t seed, const SurfaceSampleOptions& opts) {
    if (n < 1) throw std::invalid_argument("sample_surface: n must be >= 1");
    if (noise_sigma < 0) throw std::invalid_argument("sample_surface: negative noise_sigma");

    std::vector<SurfacePart> parts;
    for (const Primitive& prim : scene.primitives) {
        SurfacePart part;
        part.kind = SurfacePart::Kind::primitive;
        part.prim = &prim;
        part.area = primitive_surface_area(prim);
        parts.push_back(part);
    }
    auto add_slab = [&](const Aabb& slab) {
        SurfacePart part;
        part.kind = SurfacePart::Kind::slab;
        part.slab = slab;
        part.single_surface = opts.single_surface;
        part.area = slab_area(slab, opts.single_surface);
        parts.push_back(part);
    };
    if (scene.ground) add_slab(*scene.ground);
    for (const Aabb& wall : scene.walls) add_slab(wall);

    std::vector<double> cum;
    double total = 0.0;
    for (const SurfacePart& part : parts) {
        total += part.area;
        cum.push_back(total);
    }
    if (total <= 0.0) throw std::invalid_argument("sample_surface: scene has zero total surface area");

    RngStream rng(seed);
    Vec3 toward = scene.bounds.center();
    PointCloud cloud;
    cloud.points.resize(static_cast<size_t>(n));
    if (opts.with_normals) cloud.normals.resize(static_cast<size_t>(n));
    for (int i = 0; i < n; ++i) {
        double pick = rng.uniform() * total;
        size_t pi = static_cast<size_t>(std::lower_bound(cum.begin(), cum.end(), pick) - cum.begin());
        if (pi >= parts.size()) pi = parts.size() - 1;
        Vec3 p, nrm;
        if (parts[pi].kind == SurfacePart::Kind::primitive)
            sample_primitive_world(*parts[pi].prim, rng, p, nrm);
        else
            sample_slab(parts[pi].slab, parts[pi].single_surface, toward, rng, p, nrm);
        Vec3 unit = map.to_unit(p);
        // Noise draws always happen so that the pre-noise stream is
        // identical across sigma values for a given seed.
        Vec3 noise{rng.normal(), rng.normal(), rng.normal()};
        cloud.points[static_cast<size_t>(i)] = unit + noise * noise_sigma;
        if (opts.with_normals) cloud.normals[static_cast<size_t>(i)] = nrm;
    }
    return cloud;
}

PointCloud sample_surface(const SceneSpec& scene, int n, double noise_sigma, uint64_t seed) {
    return sample_surface(scene, normalize_scene(scene), n, noise_sigma, seed);
}

VoxelGrid voxelize(const SceneSpec& scene, const NormMap& map, int resolution) {
    if (resolution < 2) throw std::invalid_argument("voxelize: resolution must be >= 2");
    VoxelGrid grid;
    grid.resolution = resolution;
    grid.map = map;
    grid.occupancy.assign(static_cast<size_t>(resolution) * resolution * resolution, 0);
    size_t idx = 0;
    for (int iz = 0; iz < resolution; ++iz)
        for (int iy = 0; iy < resolution; ++iy)
            for (int ix = 0; ix < resolution; ++ix) {
                Vec3 unit{(ix + 0.5) / resolution, (iy + 0.5) / resolution, (iz + 0.5) / resolution};
                grid.occupancy[idx++] = scene_contains(scene, map.to_world(unit)) ? 1 : 0;
            }
    return grid;
}

// ---------------------------------------------------------------- generator

SceneSpec generate_scene(const SceneGenConfig& config, uint64_t seed) {
    if (config.min_objects < 0 || config.max_objects < config.min_objects)
        throw std::invalid_argument("generate_scene: bad object count range");
    if (config.min_scale <= 0 || config.max_scale < config.min_scale)
        throw std::invalid_argument("generate_scene: bad scale range");

    RngStream rng(seed);
    SceneSpec scene;
    scene.bounds = config.bounds;
    scene.seed = seed;

    Vec3 ext = config.bounds.extent();
    double base_z = config.bounds.min.z;

    if (config.include_ground) {
        // Random width-length ratio, centered in the bounds.
        double half_w = rng.uniform(0.35, 0.5) * ext.x;
        double ratio = rng.uniform(0.5, 1.0);
        double half_l = std::min(half_w * ratio / (ext.x / ext.y), 0.5 * ext.y);
        Vec3 c = config.bounds.center();
        Aabb ground;
        ground.min = {c.x - half_w, c.y - half_l, config.bounds.min.z};
        ground.max = {c.x + half_w, c.y + half_l, config.bounds.min.z + kSlabThickness};
        scene.ground = ground;
        base_z = ground.max.z;

        for (int side = 0; side < 4; ++side) {
            double draw = rng.uniform();
            if (draw >= config.wall_probability) continue;
            double height = rng.uniform(0.25, 0.6) * ext.z;
            Aabb wall;
            wall.min.z = base_z;
            wall.max.z = std::min(base_z + height, config.bounds.max.z);
            if (side < 2) {  // x walls
                double x = side == 0 ? ground.min.x : ground.max.x - kSlabThickness;
                wall.min.x = x;
                wall.max.x = x + kSlabThickness;
                wall.min.y = ground.min.y;
                wall.max.y = ground.max.y;
            } else {  // y walls
                double y = side == 2 ? ground.min.y : ground.max.y - kSlabThickness;
                wall.min.y = y;
                wall.max.y = y + kSlabThickness;
                wall.min.x = ground.min.x;
                wall.max.x = ground.max.x;
            }
            scene.walls.push_back(wall);
        }
    }

    int count = static_cast<int>(rng.uniform_int(config.min_objects, config.max_objects));
    for (int obj = 0; obj < count; ++obj) {
        bool placed = false;
        for (int attempt = 0; attempt < 100 && !placed; ++attempt) {
            Primitive prim;
            int kind = static_cast<int>(rng.uniform_int(0, 2));
            prim.kind = kind == 0 ? ShapeKind::sphere : (kind == 1 ? ShapeKind::box : ShapeKind::cylinder);
            prim.rotation = Mat3::from_quaternion(rng.normal(), rng.normal(), rng.normal(), rng.normal());
            if (config.anisotropic && prim.kind != ShapeKind::sphere) {
                prim.scale = {rng.uniform(config.min_scale, config.max_scale),
                              rng.uniform(config.min_scale, config.max_scale),
                              rng.uniform(config.min_scale, config.max_scale)};
            } else {
                double s = rng.uniform(config.min_scale, config.max_scale);
                prim.scale = {s, s, s};
            }
            Vec3 h = primitive_aabb_half_extent(prim);
            Vec3 lo = {config.bounds.min.x + h.x, config.bounds.min.y + h.y, base_z + h.z};
            Vec3 hi = {config.bounds.max.x - h.x, config.bounds.max.y - h.y, config.bounds.max.z - h.z};
            if (lo.x > hi.x || lo.y > hi.y || lo.z > hi.z) continue;
            double z = rng.uniform() < 0.5 ? lo.z : rng.uniform(lo.z, hi.z);
            prim.translation = {rng.uniform(lo.x, hi.x), rng.uniform(lo.y, hi.y), z};
            scene.primitives.push_back(prim);
            placed = true;
        }
        if (!placed)
            throw std::invalid_argument("generate_scene: infeasible config, object " + std::to_string(obj) +
                                        " with max scale " + std::to_string(config.max_scale) +
                                        " cannot fit in bounds");
    }
    return scene;
}

}  // namespace convocc
