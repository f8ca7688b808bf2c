#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "convocc/adam.hpp"
#include "convocc/dataset.hpp"
#include "convocc/model.hpp"

namespace convocc {

enum class TrainTask { object_points, object_voxels, scene_points };
const char* train_task_name(TrainTask task);
TrainTask train_task_from_name(const std::string& name);

struct TrainConfig {
    TrainTask task = TrainTask::object_points;
    int batch_size = 32;
    int queries_per_item = 2048;
    double lr = 1e-4;
    int max_steps = 1000;
    uint64_t seed = 0;
    int eval_every = 100;
    int jobs = 1;
};

// Task defaults: batch 32 / 2048 queries for point tasks, batch 64 / 1024
// queries for the voxel task.
TrainConfig default_train_config(TrainTask task);

std::string train_config_to_json(const TrainConfig& cfg);
TrainConfig train_config_from_json(const std::string& text);

// Fresh uniform query points labeled by the analytic occupancy
// (deterministic given seed).
void sample_queries(const SceneSpec& scene, const NormMap& map, int m, uint64_t seed,
                    std::vector<Vec3>& points, std::vector<uint8_t>& labels);

// One forward/backward/Adam application over a deterministic batch.
// Returns the batch loss. Aborts with NumericalError (naming the first
// non-finite tensor) if the loss or an update goes non-finite.
double train_step(Model& model, const std::vector<const Sample*>& items, const TrainConfig& cfg,
                  std::vector<Tensor>& params, AdamState& adam, int64_t step);

// Mean per-sample IoU at probability threshold 0.5 over the stored query
// banks.
double validation_iou(const Model& model, const std::vector<Sample>& val, TrainTask task, int jobs = 1);

struct TrainResult {
    int64_t steps = 0;
    double final_loss = 0.0;
    double last_val_iou = 0.0;
};

// Runs max_steps steps, appending JSON-lines records to
// out_dir/train_log.jsonl and writing out_dir/checkpoint.bin every
// eval_every steps and at the end. Resumes from the model/adam/step state
// passed in.
TrainResult train_loop(Model& model, AdamState& adam, int64_t& step, const Dataset& data,
                       const TrainConfig& cfg, const std::filesystem::path& out_dir);

// ---- checkpointing ----
// File: magic "COCK1", u32 version, u32 header length, JSON header (configs,
// tensor directory, Adam scalars, step, RNG state), then raw little-endian
// f64 payloads. save(load(x)) is byte-identical to x.
void save_checkpoint(const std::filesystem::path& path, Model& model, const AdamState& adam,
                     int64_t step, const TrainConfig& tcfg);

struct LoadedCheckpoint {
    Model model;
    AdamState adam;
    int64_t step = 0;
    TrainConfig train_cfg;
};
LoadedCheckpoint load_checkpoint(const std::filesystem::path& path);

}  // namespace convocc
