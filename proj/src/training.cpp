#include "convocc/training.hpp"

#include <json.hpp>

#include <chrono>
#include <cmath>
#include <cstring>
#include <fstream>

#include "convocc/parallel.hpp"

namespace convocc {

namespace op = ops;
using nlohmann::json;
namespace fs = std::filesystem;

const char* train_task_name(TrainTask task) {
    switch (task) {
        case TrainTask::object_points: return "object_points";
        case TrainTask::object_voxels: return "object_voxels";
        case TrainTask::scene_points: return "scene_points";
    }
    return "?";
}

TrainTask train_task_from_name(const std::string& name) {
    if (name == "object_points") return TrainTask::object_points;
    if (name == "object_voxels") return TrainTask::object_voxels;
    if (name == "scene_points") return TrainTask::scene_points;
    throw std::invalid_argument("unknown task '" + name +
                                "' (valid: object_points, object_voxels, scene_points)");
}

TrainConfig default_train_config(TrainTask task) {
    TrainConfig cfg;
    cfg.task = task;
    if (task == TrainTask::object_voxels) {
        cfg.batch_size = 64;
        cfg.queries_per_item = 1024;
    } else {
        cfg.batch_size = 32;
        cfg.queries_per_item = 2048;
    }
    return cfg;
}

std::string train_config_to_json(const TrainConfig& cfg) {
    json j;
    j["task"] = train_task_name(cfg.task);
    j["batch_size"] = cfg.batch_size;
    j["queries_per_item"] = cfg.queries_per_item;
    j["lr"] = cfg.lr;
    j["max_steps"] = cfg.max_steps;
    j["seed"] = cfg.seed;
    j["eval_every"] = cfg.eval_every;
    j["jobs"] = cfg.jobs;
    return j.dump();
}

TrainConfig train_config_from_json(const std::string& text) {
    json j;
    try {
        j = json::parse(text);
    } catch (const json::exception& e) {
        throw DataError(std::string("train config: ") + e.what());
    }
    TrainConfig cfg;
    cfg.task = train_task_from_name(j.at("task").get<std::string>());
    cfg.batch_size = j.at("batch_size").get<int>();
    cfg.queries_per_item = j.at("queries_per_item").get<int>();
    cfg.lr = j.at("lr").get<double>();
    cfg.max_steps = j.at("max_steps").get<int>();
    cfg.seed = j.at("seed").get<uint64_t>();
    cfg.eval_every = j.at("eval_every").get<int>();
    cfg.jobs = j.at("jobs").get<int>();
    return cfg;
}

void sample_queries(const SceneSpec& scene, const NormMap& map, int m, uint64_t seed,
                    std::vector<Vec3>& points, std::vector<uint8_t>& labels) {
    sample_uniform_queries(scene, map, m, seed, points, labels);
}

static const char* find_nonfinite_tensor(Model& model) {
    for (auto& nt : model.parameters()) {
        if (!nt.tensor.all_finite()) {
            static thread_local std::string name;
            name = nt.name;
            return name.c_str();
        }
    }
    return nullptr;
}

double train_step(Model& model, const std::vector<const Sample*>& items, const TrainConfig& cfg,
                  std::vector<Tensor>& params, AdamState& adam, int64_t step) {
    if (cfg.queries_per_item < 1) throw std::invalid_argument("train_step: queries_per_item must be >= 1");
    if (items.empty()) throw std::invalid_argument("train_step: empty batch");
    const int b = static_cast<int>(items.size());
    const double inv_b = 1.0 / static_cast<double>(b);

    for (Tensor& t : params) t.zero_grad();

    std::vector<double> losses(static_cast<size_t>(b), 0.0);
    // Waves of `jobs` parallel items, deposited in slot order so the
    // gradient reduction order is fixed for a given jobs setting.
    for (int wave = 0; wave < b; wave += std::max(cfg.jobs, 1)) {
        int wave_end = std::min(b, wave + std::max(cfg.jobs, 1));
        std::vector<Tape> tapes(static_cast<size_t>(wave_end - wave));
        parallel_for(wave_end - wave, cfg.jobs, [&](int64_t k) {
            int slot = wave + static_cast<int>(k);
            const Sample& sample = *items[static_cast<size_t>(slot)];
            std::vector<Vec3> qp;
            std::vector<uint8_t> ql;
            sample_queries(sample.scene, sample.map, cfg.queries_per_item,
                           derive_seed(cfg.seed, 0x51ED5000 + static_cast<uint64_t>(step), static_cast<uint64_t>(slot)),
                           qp, ql);
            Tape& tape = tapes[static_cast<size_t>(k)];
            TapeScope scope(tape);
            Encoding enc = cfg.task == TrainTask::object_voxels
                               ? model.encode(*sample.voxels)
                               : model.encode(sample.cloud);
            Tensor loss = op::bce_with_logits_mean(model.query_logits(enc, qp), ql);
            losses[static_cast<size_t>(slot)] = loss.item();
            tape.backward(loss, /*deposit=*/false);
        });
        for (auto& tape : tapes) tape.deposit_leaf_grads(inv_b);
    }

    double batch_loss = 0.0;
    for (double l : losses) batch_loss += l * inv_b;
    if (!std::isfinite(batch_loss)) {
        const char* name = find_nonfinite_tensor(model);
        throw NumericalError("train_step: non-finite loss at step " + std::to_string(step) +
                             (name ? std::string(", first non-finite tensor: ") + name : std::string()));
    }
    adam_step(params, adam);
    if (const char* name = find_nonfinite_tensor(model))
        throw NumericalError("train_step: non-finite parameter after update: " + std::string(name));
    return batch_loss;
}

double validation_iou(const Model& model, const std::vector<Sample>& val, TrainTask task, int jobs) {
    if (val.empty()) return 0.0;
    std::vector<double> ious(val.size(), 0.0);
    parallel_for(static_cast<int64_t>(val.size()), jobs, [&](int64_t i) {
        const Sample& s = val[static_cast<size_t>(i)];
        Encoding enc = task == TrainTask::object_voxels ? model.encode(*s.voxels) : model.encode(s.cloud);
        std::vector<double> probs = model.predict_probabilities(enc, s.query_points);
        int64_t inter = 0, uni = 0;
        for (size_t q = 0; q < probs.size(); ++q) {
            bool pred = probs[q] >= 0.5;
            bool truth = s.query_labels[q] == 1;
            inter += pred && truth;
            uni += pred || truth;
        }
        ious[static_cast<size_t>(i)] = uni == 0 ? 1.0 : static_cast<double>(inter) / static_cast<double>(uni);
    });
    double acc = 0.0;
    for (double v : ious) acc += v;
    return acc / static_cast<double>(val.size());
}

static std::vector<const Sample*> pick_batch(const Dataset& data, const TrainConfig& cfg, int64_t step) {
    RngStream rng(derive_seed(cfg.seed, 0xBA7C4000 + static_cast<uint64_t>(step)));
    std::vector<const Sample*> items;
    const auto& pool = data.train;
    for (int i = 0; i < cfg.batch_size; ++i)
        items.push_back(&pool[static_cast<size_t>(rng.uniform_int(0, static_cast<int64_t>(pool.size()) - 1))]);
    return items;
}

TrainResult train_loop(Model& model, AdamState& adam, int64_t& step, const Dataset& data,
                       const TrainConfig& cfg, const fs::path& out_dir) {
    if (data.train.empty()) throw DataError("train_loop: dataset has no training samples");
    if (cfg.task == TrainTask::object_voxels)
        for (const Sample& s : data.train)
            if (!s.voxels) throw DataError("train_loop: voxel task needs voxel grids in every shard");

    std::error_code ec;
    fs::create_directories(out_dir, ec);
    std::ofstream log(out_dir / "train_log.jsonl", std::ios::app | std::ios::binary);
    if (!log) throw DataError("cannot write " + (out_dir / "train_log.jsonl").string());

    std::vector<Tensor> params = model.parameter_tensors();
    if (!adam.initialized()) {
        AdamConfig acfg;
        acfg.lr = cfg.lr;
        adam.init(params, acfg);
    }

    TrainResult result;
    result.last_val_iou = -1.0;
    const int64_t target = step + cfg.max_steps;
    while (step < target) {
        auto t0 = std::chrono::steady_clock::now();
        double loss = train_step(model, pick_batch(data, cfg, step), cfg, params, adam, step);
        auto t1 = std::chrono::steady_clock::now();
        step += 1;
        result.steps += 1;
        result.final_loss = loss;
        {
            json rec;
            rec["step"] = step;
            rec["loss"] = loss;
            rec["lr"] = cfg.lr;
            rec["wall_ms"] = std::chrono::duration<double, std::milli>(t1 - t0).count();
            log << rec.dump() << "\n";
        }
        if (cfg.eval_every > 0 && step % cfg.eval_every == 0) {
            if (!data.val.empty()) {
                double iou = validation_iou(model, data.val, cfg.task, cfg.jobs);
                result.last_val_iou = iou;
                json rec;
                rec["step"] = step;
                rec["val_iou"] = iou;
                log << rec.dump() << "\n";
            }
            save_checkpoint(out_dir / "checkpoint.bin", model, adam, step, cfg);
        }
        log.flush();
    }
    save_checkpoint(out_dir / "checkpoint.bin", model, adam, step, cfg);
    return result;
}

// ---------------------------------------------------------------- checkpoint

void save_checkpoint(const fs::path& path, Model& model, const AdamState& adam, int64_t step,
                     const TrainConfig& tcfg) {
    std::vector<NamedTensor> named = model.parameters();
    json dir = json::array();
    uint64_t offset = 0;
    auto add_entry = [&](const std::string& name, const Shape& shape, int64_t numel) {
        json e;
        e["name"] = name;
        e["shape"] = shape;
        e["offset"] = offset;
        dir.push_back(e);
        offset += static_cast<uint64_t>(numel) * 8;
    };
    for (auto& nt : named) add_entry(nt.name, nt.tensor.shape(), nt.tensor.size());
    for (size_t i = 0; i < named.size(); ++i) {
        add_entry("adam.m." + named[i].name, named[i].tensor.shape(), named[i].tensor.size());
        add_entry("adam.v." + named[i].name, named[i].tensor.shape(), named[i].tensor.size());
    }

    json header;
    header["format"] = "convocc-checkpoint";
    header["model_config"] = json::parse(model_config_to_json(model.cfg));
    header["train_config"] = json::parse(train_config_to_json(tcfg));
    header["step"] = step;
    header["rng_state"] = std::to_string(tcfg.seed);
    header["adam"] = {{"t", adam.t},
                      {"lr", adam.cfg.lr},
                      {"beta1", adam.cfg.beta1},
                      {"beta2", adam.cfg.beta2},
                      {"epsilon", adam.cfg.epsilon}};
    header["tensors"] = dir;
    std::string htext = header.dump();

    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw DataError("cannot write " + path.string());
    out.write("COCK1", 5);
    uint32_t version = 1, hlen = static_cast<uint32_t>(htext.size());
    out.write(reinterpret_cast<const char*>(&version), 4);
    out.write(reinterpret_cast<const char*>(&hlen), 4);
    out.write(htext.data(), static_cast<std::streamsize>(htext.size()));
    auto write_doubles = [&](const double* data, size_t n) {
        out.write(reinterpret_cast<const char*>(data), static_cast<std::streamsize>(n * 8));
    };
    for (auto& nt : named) write_doubles(nt.tensor.data(), static_cast<size_t>(nt.tensor.size()));
    for (size_t i = 0; i < named.size(); ++i) {
        if (adam.m.size() != named.size())
            throw std::invalid_argument("save_checkpoint: adam state not aligned with parameters");
        write_doubles(adam.m[i].data(), adam.m[i].size());
        write_doubles(adam.v[i].data(), adam.v[i].size());
    }
}

LoadedCheckpoint load_checkpoint(const fs::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DataError("cannot open " + path.string());
    char magic[5];
    in.read(magic, 5);
    if (in.gcount() != 5 || std::memcmp(magic, "COCK1", 5) != 0)
        throw DataError(path.string() + ": bad checkpoint magic at byte offset 0");
    uint32_t version = 0, hlen = 0;
    in.read(reinterpret_cast<char*>(&version), 4);
    in.read(reinterpret_cast<char*>(&hlen), 4);
    if (!in || version != 1) throw DataError(path.string() + ": unsupported checkpoint version");
    std::string htext(hlen, '\0');
    in.read(htext.data(), hlen);
    if (!in) throw DataError(path.string() + ": truncated header at byte offset 13");
    json header;
    try {
        header = json::parse(htext);
    } catch (const json::exception& e) {
        throw DataError(path.string() + ": header: " + e.what());
    }

    LoadedCheckpoint ck;
    ck.model.cfg = model_config_from_json(header.at("model_config").dump());
    ck.model.init(0);
    ck.train_cfg = train_config_from_json(header.at("train_config").dump());
    ck.step = header.at("step").get<int64_t>();

    std::vector<NamedTensor> named = ck.model.parameters();
    AdamConfig acfg;
    acfg.lr = header.at("adam").at("lr").get<double>();
    acfg.beta1 = header.at("adam").at("beta1").get<double>();
    acfg.beta2 = header.at("adam").at("beta2").get<double>();
    acfg.epsilon = header.at("adam").at("epsilon").get<double>();
    std::vector<Tensor> params;
    for (auto& nt : named) params.push_back(nt.tensor);
    ck.adam.init(params, acfg);
    ck.adam.t = header.at("adam").at("t").get<int64_t>();

    // Payload reads follow the directory order written by save_checkpoint.
    const size_t payload_start = 13 + hlen;
    auto read_into = [&](uint64_t offset, double* dst, size_t n) {
        in.seekg(static_cast<std::streamoff>(payload_start + offset));
        in.read(reinterpret_cast<char*>(dst), static_cast<std::streamsize>(n * 8));
        if (in.gcount() != static_cast<std::streamsize>(n * 8))
            throw DataError(path.string() + ": truncated payload at byte offset " +
                            std::to_string(payload_start + offset));
    };
    for (const json& e : header.at("tensors")) {
        std::string name = e.at("name").get<std::string>();
        uint64_t offset = e.at("offset").get<uint64_t>();
        auto shape = e.at("shape").get<std::vector<int>>();
        double* dst = nullptr;
        size_t n = 0;
        if (name.rfind("adam.m.", 0) == 0 || name.rfind("adam.v.", 0) == 0) {
            bool is_m = name[5] == 'm';
            std::string base = name.substr(7);
            for (size_t i = 0; i < named.size(); ++i)
                if (named[i].name == base) {
                    auto& moments = is_m ? ck.adam.m[i] : ck.adam.v[i];
                    dst = moments.data();
                    n = moments.size();
                    break;
                }
        } else {
            for (auto& nt : named)
                if (nt.name == name) {
                    if (nt.tensor.shape() != Shape(shape.begin(), shape.end()))
                        throw DataError(path.string() + ": shape mismatch for tensor " + name);
                    dst = nt.tensor.data();
                    n = static_cast<size_t>(nt.tensor.size());
                    break;
                }
        }
        if (!dst) throw DataError(path.string() + ": unknown tensor " + name);
        read_into(offset, dst, n);
    }
    return ck;
}

}  // namespace convocc
