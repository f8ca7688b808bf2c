#include "convocc/dataset.hpp"

#include <json.hpp>

#include <cstring>
#include <fstream>

namespace convocc {

using nlohmann::json;
namespace fs = std::filesystem;

namespace {

class BinReader {
public:
    BinReader(const fs::path& path) : path_(path.string()), in_(path, std::ios::binary) {
        if (!in_) throw DataError("cannot open " + path_);
    }
    void read(void* dst, size_t n) {
        in_.read(static_cast<char*>(dst), static_cast<std::streamsize>(n));
        if (in_.gcount() != static_cast<std::streamsize>(n))
            throw DataError(path_ + ": truncated at byte offset " + std::to_string(offset_ + in_.gcount()));
        offset_ += n;
    }
    void expect_magic(const char* magic) {
        char buf[8] = {};
        size_t len = std::strlen(magic);
        read(buf, len);
        if (std::memcmp(buf, magic, len) != 0)
            throw DataError(path_ + ": bad magic at byte offset 0, expected " + magic);
    }
    uint32_t read_u32() {
        uint32_t v;
        read(&v, 4);
        return v;
    }
    size_t offset() const { return offset_; }

private:
    std::string path_;
    std::ifstream in_;
    size_t offset_ = 0;
};

class BinWriter {
public:
    BinWriter(const fs::path& path) : path_(path.string()), out_(path, std::ios::binary) {
        if (!out_) throw DataError("cannot write " + path_);
    }
    void write(const void* src, size_t n) { out_.write(static_cast<const char*>(src), static_cast<std::streamsize>(n)); }
    void write_u32(uint32_t v) { write(&v, 4); }
    ~BinWriter() {
        out_.flush();
    }

private:
    std::string path_;
    std::ofstream out_;
};

}  // namespace

void write_point_cloud_file(const fs::path& path, const PointCloud& cloud) {
    BinWriter w(path);
    w.write("COPC1", 5);
    w.write_u32(static_cast<uint32_t>(cloud.points.size()));
    for (const Vec3& p : cloud.points) {
        float f[3] = {static_cast<float>(p.x), static_cast<float>(p.y), static_cast<float>(p.z)};
        w.write(f, 12);
    }
}

PointCloud read_point_cloud_file(const fs::path& path) {
    BinReader r(path);
    r.expect_magic("COPC1");
    uint32_t n = r.read_u32();
    PointCloud cloud;
    cloud.points.resize(n);
    for (uint32_t i = 0; i < n; ++i) {
        float f[3];
        r.read(f, 12);
        cloud.points[i] = {f[0], f[1], f[2]};
    }
    return cloud;
}

void write_query_file(const fs::path& path, const std::vector<Vec3>& points,
                      const std::vector<uint8_t>& labels) {
    if (points.size() != labels.size())
        throw std::invalid_argument("write_query_file: point/label count mismatch");
    BinWriter w(path);
    w.write("COQY1", 5);
    w.write_u32(static_cast<uint32_t>(points.size()));
    for (const Vec3& p : points) {
        float f[3] = {static_cast<float>(p.x), static_cast<float>(p.y), static_cast<float>(p.z)};
        w.write(f, 12);
    }
    w.write(labels.data(), labels.size());
}

void read_query_file(const fs::path& path, std::vector<Vec3>& points, std::vector<uint8_t>& labels) {
    BinReader r(path);
    r.expect_magic("COQY1");
    uint32_t m = r.read_u32();
    points.resize(m);
    for (uint32_t i = 0; i < m; ++i) {
        float f[3];
        r.read(f, 12);
        points[i] = {f[0], f[1], f[2]};
    }
    labels.resize(m);
    if (m) r.read(labels.data(), m);
    for (uint32_t i = 0; i < m; ++i)
        if (labels[i] > 1) throw DataError(path.string() + ": label out of range at entry " + std::to_string(i));
}

void write_voxel_file(const fs::path& path, const VoxelGrid& grid) {
    BinWriter w(path);
    w.write("COVX1", 5);
    w.write_u32(static_cast<uint32_t>(grid.resolution));
    size_t nbits = grid.occupancy.size();
    std::vector<uint8_t> packed((nbits + 7) / 8, 0);
    for (size_t i = 0; i < nbits; ++i)
        if (grid.occupancy[i]) packed[i / 8] |= static_cast<uint8_t>(1u << (i % 8));
    w.write(packed.data(), packed.size());
}

VoxelGrid read_voxel_file(const fs::path& path) {
    BinReader r(path);
    r.expect_magic("COVX1");
    uint32_t res = r.read_u32();
    if (res < 2 || res > 4096) throw DataError(path.string() + ": implausible resolution " + std::to_string(res));
    VoxelGrid grid;
    grid.resolution = static_cast<int>(res);
    size_t nbits = static_cast<size_t>(res) * res * res;
    std::vector<uint8_t> packed((nbits + 7) / 8);
    r.read(packed.data(), packed.size());
    grid.occupancy.resize(nbits);
    for (size_t i = 0; i < nbits; ++i) grid.occupancy[i] = (packed[i / 8] >> (i % 8)) & 1u;
    return grid;
}

// ---------------------------------------------------------------- scene json

static json vec3_to_json(const Vec3& v) { return json::array({v.x, v.y, v.z}); }
static Vec3 vec3_from_json(const json& j) { return {j.at(0).get<double>(), j.at(1).get<double>(), j.at(2).get<double>()}; }

static json aabb_to_json(const Aabb& b) { return json{{"min", vec3_to_json(b.min)}, {"max", vec3_to_json(b.max)}}; }
static Aabb aabb_from_json(const json& j) { return {vec3_from_json(j.at("min")), vec3_from_json(j.at("max"))}; }

std::string scene_to_json(const SceneSpec& scene, const NormMap& map) {
    json j;
    j["seed"] = scene.seed;
    j["bounds"] = aabb_to_json(scene.bounds);
    j["norm_map"] = {{"scale", map.scale}, {"center", vec3_to_json(map.center)}};
    if (scene.ground) j["ground"] = aabb_to_json(*scene.ground);
    json walls = json::array();
    for (const Aabb& w : scene.walls) walls.push_back(aabb_to_json(w));
    j["walls"] = walls;
    json prims = json::array();
    for (const Primitive& p : scene.primitives) {
        json pj;
        pj["kind"] = shape_kind_name(p.kind);
        pj["rotation"] = std::vector<double>(p.rotation.m, p.rotation.m + 9);
        pj["translation"] = vec3_to_json(p.translation);
        pj["scale"] = vec3_to_json(p.scale);
        prims.push_back(pj);
    }
    j["primitives"] = prims;
    return j.dump(2) + "\n";
}

void scene_from_json(const std::string& text, SceneSpec& scene, NormMap& map) {
    json j;
    try {
        j = json::parse(text);
    } catch (const json::exception& e) {
        throw DataError(std::string("scene json: ") + e.what());
    }
    scene = SceneSpec{};
    scene.seed = j.at("seed").get<uint64_t>();
    scene.bounds = aabb_from_json(j.at("bounds"));
    map.scale = j.at("norm_map").at("scale").get<double>();
    map.center = vec3_from_json(j.at("norm_map").at("center"));
    if (j.contains("ground")) scene.ground = aabb_from_json(j.at("ground"));
    for (const json& w : j.at("walls")) scene.walls.push_back(aabb_from_json(w));
    for (const json& pj : j.at("primitives")) {
        Primitive p;
        std::string kind = pj.at("kind").get<std::string>();
        if (kind == "sphere") p.kind = ShapeKind::sphere;
        else if (kind == "box") p.kind = ShapeKind::box;
        else if (kind == "cylinder") p.kind = ShapeKind::cylinder;
        else throw DataError("scene json: unknown primitive kind " + kind);
        auto rot = pj.at("rotation").get<std::vector<double>>();
        if (rot.size() != 9) throw DataError("scene json: rotation must have 9 entries");
        std::copy(rot.begin(), rot.end(), p.rotation.m);
        p.translation = vec3_from_json(pj.at("translation"));
        p.scale = vec3_from_json(pj.at("scale"));
        scene.primitives.push_back(p);
    }
}

// ---------------------------------------------------------------- samples

void sample_uniform_queries(const SceneSpec& scene, const NormMap& map, int m, uint64_t seed,
                            std::vector<Vec3>& points, std::vector<uint8_t>& labels) {
    if (m < 1) throw std::invalid_argument("sample_uniform_queries: m must be >= 1");
    RngStream rng(seed);
    points.resize(static_cast<size_t>(m));
    labels.resize(static_cast<size_t>(m));
    for (int i = 0; i < m; ++i) {
        Vec3 p{rng.uniform(), rng.uniform(), rng.uniform()};
        points[static_cast<size_t>(i)] = p;
        labels[static_cast<size_t>(i)] = scene_contains_unit(scene, map, p) ? 1 : 0;
    }
}

Sample make_sample(const SceneGenConfig& gen, const DatasetRecipe& recipe, uint64_t seed) {
    Sample s;
    s.seed = seed;
    s.scene = generate_scene(gen, seed);
    s.map = normalize_scene(s.scene, recipe.padding);
    s.cloud = sample_surface(s.scene, s.map, recipe.input_points, recipe.noise_sigma,
                             derive_seed(seed, 0xC0FFEE));
    sample_uniform_queries(s.scene, s.map, recipe.query_count, derive_seed(seed, 0x9E11), s.query_points,
                           s.query_labels);
    if (recipe.voxel_resolution > 0) s.voxels = voxelize(s.scene, s.map, recipe.voxel_resolution);
    return s;
}

void write_sample(const fs::path& dir, const Sample& sample) {
    std::error_code ec;
    fs::create_directories(dir, ec);
    if (ec) throw DataError("cannot create " + dir.string() + ": " + ec.message());
    write_point_cloud_file(dir / "pointcloud.bin", sample.cloud);
    write_query_file(dir / "queries.bin", sample.query_points, sample.query_labels);
    std::ofstream js(dir / "scene.json", std::ios::binary);
    if (!js) throw DataError("cannot write " + (dir / "scene.json").string());
    js << scene_to_json(sample.scene, sample.map);
    if (sample.voxels) write_voxel_file(dir / "voxels.bin", *sample.voxels);
}

Sample read_sample(const fs::path& dir) {
    Sample s;
    std::ifstream js(dir / "scene.json", std::ios::binary);
    if (!js) throw DataError("cannot open " + (dir / "scene.json").string());
    std::string text((std::istreambuf_iterator<char>(js)), std::istreambuf_iterator<char>());
    scene_from_json(text, s.scene, s.map);
    s.seed = s.scene.seed;
    s.cloud = read_point_cloud_file(dir / "pointcloud.bin");
    read_query_file(dir / "queries.bin", s.query_points, s.query_labels);
    if (fs::exists(dir / "voxels.bin")) {
        s.voxels = read_voxel_file(dir / "voxels.bin");
        s.voxels->map = s.map;
    }
    return s;
}

void write_manifest(const fs::path& dataset_dir, const std::vector<ManifestEntry>& entries,
                    const std::string& config_echo) {
    json j;
    j["format"] = "convocc-dataset";
    j["version"] = 1;
    j["config"] = config_echo;
    json samples = json::array();
    for (const ManifestEntry& e : entries)
        samples.push_back(json{{"dir", e.dir}, {"seed", e.seed}, {"split", e.split}, {"objects", e.object_count}});
    j["samples"] = samples;
    std::ofstream out(dataset_dir / "manifest.json", std::ios::binary);
    if (!out) throw DataError("cannot write " + (dataset_dir / "manifest.json").string());
    out << j.dump(2) << "\n";
}

std::vector<ManifestEntry> read_manifest(const fs::path& dataset_dir) {
    std::ifstream in(dataset_dir / "manifest.json", std::ios::binary);
    if (!in) throw DataError("cannot open " + (dataset_dir / "manifest.json").string());
    json j;
    try {
        in >> j;
    } catch (const json::exception& e) {
        throw DataError("manifest.json: " + std::string(e.what()));
    }
    std::vector<ManifestEntry> entries;
    for (const json& s : j.at("samples")) {
        ManifestEntry e;
        e.dir = s.at("dir").get<std::string>();
        e.seed = s.at("seed").get<uint64_t>();
        e.split = s.at("split").get<std::string>();
        e.object_count = s.at("objects").get<int>();
        entries.push_back(e);
    }
    return entries;
}

Dataset load_dataset(const fs::path& dataset_dir) {
    Dataset ds;
    for (const ManifestEntry& e : read_manifest(dataset_dir)) {
        Sample s = read_sample(dataset_dir / e.dir);
        (e.split == "val" ? ds.val : ds.train).push_back(std::move(s));
    }
    if (ds.train.empty() && ds.val.empty())
        throw DataError("dataset at " + dataset_dir.string() + " is empty");
    return ds;
}

}  // namespace convocc
