#pragma once

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "convocc/geometry.hpp"

namespace convocc {

// ---- shard file codecs (little-endian binary) ----
// pointcloud.bin  magic "COPC1", u32 N, N x 3 f32
// queries.bin     magic "COQY1", u32 M, M x 3 f32, M u8 labels
// voxels.bin      magic "COVX1", u32 R, R^3 bits packed row-major
void write_point_cloud_file(const std::filesystem::path& path, const PointCloud& cloud);
PointCloud read_point_cloud_file(const std::filesystem::path& path);
void write_query_file(const std::filesystem::path& path, const std::vector<Vec3>& points,
                      const std::vector<uint8_t>& labels);
void read_query_file(const std::filesystem::path& path, std::vector<Vec3>& points,
                     std::vector<uint8_t>& labels);
void write_voxel_file(const std::filesystem::path& path, const VoxelGrid& grid);
VoxelGrid read_voxel_file(const std::filesystem::path& path);

// scene.json holds primitives, transforms, seed, bounds and the
// normalization map so labels can be re-derived exactly.
std::string scene_to_json(const SceneSpec& scene, const NormMap& map);
void scene_from_json(const std::string& text, SceneSpec& scene, NormMap& map);

// ---- sample assembly ----

struct DatasetRecipe {
    int input_points = 3000;
    double noise_sigma = 0.05;
    int query_count = 2048;
    int voxel_resolution = 0;  // 0 disables the voxel grid
    double padding = 0.1;
};

struct Sample {
    SceneSpec scene;
    NormMap map;
    PointCloud cloud;
    std::optional<VoxelGrid> voxels;
    std::vector<Vec3> query_points;  // normalized coords
    std::vector<uint8_t> query_labels;
    uint64_t seed = 0;
};

// Uniform query points in [0,1]^3 labeled by the analytic occupancy.
void sample_uniform_queries(const SceneSpec& scene, const NormMap& map, int m, uint64_t seed,
                            std::vector<Vec3>& points, std::vector<uint8_t>& labels);

Sample make_sample(const SceneGenConfig& gen, const DatasetRecipe& recipe, uint64_t seed);
void write_sample(const std::filesystem::path& dir, const Sample& sample);
Sample read_sample(const std::filesystem::path& dir);

struct Dataset {
    std::vector<Sample> train;
    std::vector<Sample> val;
};

struct ManifestEntry {
    std::string dir;
    uint64_t seed = 0;
    std::string split;  // "train" | "val"
    int object_count = 0;
};

void write_manifest(const std::filesystem::path& dataset_dir, const std::vector<ManifestEntry>& entries,
                    const std::string& config_echo);
std::vector<ManifestEntry> read_manifest(const std::filesystem::path& dataset_dir);

Dataset load_dataset(const std::filesystem::path& dataset_dir);

}  // namespace convocc
