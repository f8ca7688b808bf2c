#include <CLI11.hpp>

#include <convocc/dataset.hpp>
#include <convocc/mesh_io.hpp>
#include <convocc/metrics.hpp>
#include <convocc/mise.hpp>
#include <convocc/parallel.hpp>
#include <convocc/sliding_window.hpp>
#include <convocc/training.hpp>

#include <chrono>
#include <cstdio>
#include <fstream>
#include <iostream>

using namespace convocc;
namespace fs = std::filesystem;

namespace {

void write_resolved_config(CLI::App& app, const fs::path& path) {
    std::error_code ec;
    fs::create_directories(path.parent_path(), ec);
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw DataError("cannot write " + path.string());
    out << app.config_to_str(true, false);
}

struct GenOpts {
    std::string out_dir;
    int count = 8;
    int val_count = 0;
    std::string task = "object_points";
    int objects_min = 1, objects_max = 3;
    double scale_min = 0.12, scale_max = 0.3;
    bool ground = false;
    double wall_prob = 0.0;
    int input_points = -1;
    double noise_sigma = 0.05;
    int query_points = -1;
    int voxel_res = -1;
    double padding = 0.1;
    uint64_t seed = 0;
    int jobs = 0;
};

int effective_jobs(int jobs) {
    if (jobs > 0) return jobs;
    unsigned hw = std::thread::hardware_concurrency();
    return hw ? static_cast<int>(hw) : 1;
}

void run_gen_data(CLI::App& cmd, GenOpts& o) {
    TrainTask task = train_task_from_name(o.task);
    SceneGenConfig gen;
    gen.min_objects = o.objects_min;
    gen.max_objects = o.objects_max;
    gen.min_scale = o.scale_min;
    gen.max_scale = o.scale_max;
    gen.include_ground = o.ground || task == TrainTask::scene_points;
    gen.wall_probability = o.wall_prob;

    DatasetRecipe recipe;
    recipe.noise_sigma = o.noise_sigma;
    recipe.padding = o.padding;
    recipe.input_points = o.input_points > 0 ? o.input_points
                          : task == TrainTask::scene_points ? 10000
                                                            : 3000;
    recipe.query_count = o.query_points > 0 ? o.query_points
                         : task == TrainTask::object_voxels ? 1024
                                                            : 2048;
    recipe.voxel_resolution = o.voxel_res >= 0 ? o.voxel_res : (task == TrainTask::object_voxels ? 32 : 0);

    fs::path dir(o.out_dir);
    std::error_code ec;
    fs::create_directories(dir, ec);
    if (ec) throw DataError("cannot create " + dir.string() + ": " + ec.message());

    const int total = o.count + o.val_count;
    std::vector<ManifestEntry> entries(static_cast<size_t>(total));
    parallel_for(total, effective_jobs(o.jobs), [&](int64_t i) {
        uint64_t sample_seed = derive_seed(o.seed, 0xDA7A, static_cast<uint64_t>(i));
        Sample s = make_sample(gen, recipe, sample_seed);
        char name[16];
        std::snprintf(name, sizeof(name), "%06lld", static_cast<long long>(i));
        write_sample(dir / name, s);
        entries[static_cast<size_t>(i)] = {name, sample_seed, i < o.count ? "train" : "val",
                                           static_cast<int>(s.scene.primitives.size())};
    });
    write_manifest(dir, entries, train_task_name(task));
    write_resolved_config(cmd, dir / "run_config.toml");
    std::printf("wrote %d train + %d val shards to %s\n", o.count, o.val_count, dir.string().c_str());
}

struct TrainOpts {
    std::string data_dir, out_dir;
    std::string mode = "three_planes";
    int plane_res = 64, volume_res = 32, feature_dim = 32;
    int pn_blocks = 5, hidden_dim = 32, head_blocks = 5;
    std::string interp = "linear";
    int unet_depth = 0;
    std::string task = "object_points";
    int batch_size = -1, queries = -1;
    double lr = 1e-4;
    int max_steps = 1000, eval_every = 100;
    uint64_t seed = 0;
    int jobs = 0;
    std::string resume;
};

void run_train(CLI::App& cmd, TrainOpts& o) {
    if (o.interp != "linear" && o.interp != "nearest")
        throw std::invalid_argument("--interp must be 'linear' or 'nearest'");
    Dataset data = load_dataset(o.data_dir);

    TrainTask task = train_task_from_name(o.task);
    TrainConfig tcfg = default_train_config(task);
    if (o.batch_size > 0) tcfg.batch_size = o.batch_size;
    if (o.queries > 0) tcfg.queries_per_item = o.queries;
    tcfg.lr = o.lr;
    tcfg.max_steps = o.max_steps;
    tcfg.eval_every = o.eval_every;
    tcfg.seed = o.seed;
    tcfg.jobs = effective_jobs(o.jobs);

    Model model;
    AdamState adam;
    int64_t step = 0;
    if (!o.resume.empty()) {
        LoadedCheckpoint ck = load_checkpoint(o.resume);
        model = std::move(ck.model);
        adam = std::move(ck.adam);
        step = ck.step;
    } else {
        model.cfg.encoder.mode = encoder_mode_from_name(o.mode);
        model.cfg.encoder.plane_resolution = o.plane_res;
        model.cfg.encoder.volume_resolution = o.volume_res;
        model.cfg.encoder.feature_dim = o.feature_dim;
        model.cfg.encoder.point_net_blocks = o.pn_blocks;
        model.cfg.head.hidden_dim = o.hidden_dim;
        model.cfg.head.resnet_blocks = o.head_blocks;
        model.cfg.nearest_interp = o.interp == "nearest";
        model.cfg.unet2d_depth = o.unet_depth;
        model.cfg.unet3d_depth = o.unet_depth;
        model.init(derive_seed(o.seed, 0x1417));
    }

    fs::path out(o.out_dir);
    write_resolved_config(cmd, out / "run_config.toml");
    TrainResult result = train_loop(model, adam, step, data, tcfg, out);
    std::printf("trained %lld steps, final loss %.6f", static_cast<long long>(result.steps),
                result.final_loss);
    if (result.last_val_iou >= 0) std::printf(", val IoU %.4f", result.last_val_iou);
    std::printf("\ncheckpoint: %s\n", (out / "checkpoint.bin").string().c_str());
}

struct ReconstructOpts {
    std::string checkpoint, input, out;
    std::string format;  // "", "ply", "off"
    int mise_initial = 32, mise_res = 128;
    double iso = 0.5;
    bool sliding_window = false;
    int sw_stride = 16, sw_margin = -1;
    int jobs = 0;
};

// Input kind by magic/extension.
enum class InputKind { copc, covx, xyz, ply };
InputKind sniff_input(const fs::path& path) {
    std::string ext = path.extension().string();
    if (ext == ".xyz" || ext == ".txt") return InputKind::xyz;
    if (ext == ".ply") return InputKind::ply;
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DataError("cannot open " + path.string());
    char magic[5] = {};
    in.read(magic, 5);
    if (std::string(magic, 5) == "COPC1") return InputKind::copc;
    if (std::string(magic, 5) == "COVX1") return InputKind::covx;
    throw DataError(path.string() + ": unrecognized input format at byte offset 0 (expected COPC1/COVX1 "
                    "magic, .xyz, or .ply)");
}

void run_reconstruct(CLI::App& cmd, ReconstructOpts& o) {
    auto t0 = std::chrono::steady_clock::now();
    LoadedCheckpoint ck = load_checkpoint(o.checkpoint);
    Model& model = ck.model;

    InputKind kind = sniff_input(o.input);
    MiseConfig mise;
    mise.initial_resolution = o.mise_initial;
    mise.final_resolution = o.mise_res;
    mise.iso = o.iso;

    TriangleMesh mesh;
    if (kind == InputKind::covx) {
        VoxelGrid grid = read_voxel_file(o.input);
        if (o.sliding_window) throw std::invalid_argument("--sliding-window needs a point-cloud input");
        mesh = mise_extract(model.field_evaluator(model.encode(grid)), mise);
    } else {
        PointCloud cloud = kind == InputKind::copc ? read_point_cloud_file(o.input)
                           : kind == InputKind::xyz ? read_xyz_points(o.input)
                                                    : read_ply_points(o.input);
        if (cloud.points.empty()) throw DataError(o.input + ": empty point cloud");
        if (o.sliding_window) {
            SlidingWindowConfig sw;
            sw.set_stride(o.sw_stride);
            sw.margin_cells = o.sw_margin;
            sw.jobs = effective_jobs(o.jobs);
            mesh = sliding_window_reconstruct(model, cloud, sw, mise);
        } else {
            mesh = mise_extract(model.field_evaluator(model.encode(cloud)), mise);
        }
    }

    fs::path out(o.out);
    std::string fmt = !o.format.empty() ? o.format : (out.extension() == ".off" ? "off" : "ply");
    if (fmt == "ply")
        write_mesh_ply(out, mesh);
    else if (fmt == "off")
        write_mesh_off(out, mesh);
    else
        throw std::invalid_argument("--format must be 'ply' or 'off'");
    write_resolved_config(cmd, fs::path(o.out).concat(".config.toml"));
    auto t1 = std::chrono::steady_clock::now();
    std::printf("%zu vertices, %zu triangles, %.1f ms -> %s\n", mesh.vertices.size(),
                mesh.triangles.size(), std::chrono::duration<double, std::milli>(t1 - t0).count(),
                o.out.c_str());
}

struct EvalOpts {
    std::string pred, truth, out = "eval_report.json";
    double fscore_threshold = 0.01;
    bool single_surface = false;
    int surface_samples = 100000;
    int volume_samples = 100000;
    uint64_t seed = 0;
    int jobs = 0;
};

void run_eval(CLI::App& cmd, EvalOpts& o) {
    fs::path pred_path(o.pred);
    TriangleMesh pred = pred_path.extension() == ".off" ? read_mesh_off(pred_path) : read_mesh_ply(pred_path);

    EvalOptions opts;
    opts.surface_samples = o.surface_samples;
    opts.volume_samples = o.volume_samples;
    opts.fscore_threshold = o.fscore_threshold;
    opts.single_surface = o.single_surface;
    opts.seed = o.seed;
    opts.jobs = effective_jobs(o.jobs);

    fs::path truth_path(o.truth);
    EvalReport report;
    if (truth_path.extension() == ".json") {
        std::ifstream in(truth_path, std::ios::binary);
        if (!in) throw DataError("cannot open " + truth_path.string());
        std::string text((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
        SceneSpec scene;
        NormMap map;
        scene_from_json(text, scene, map);
        report = evaluate_mesh_vs_scene(pred, scene, map, opts);
    } else {
        TriangleMesh truth =
            truth_path.extension() == ".off" ? read_mesh_off(truth_path) : read_mesh_ply(truth_path);
        report = evaluate_mesh_vs_mesh(pred, truth, opts);
    }

    std::ofstream out(o.out, std::ios::binary | std::ios::trunc);
    if (!out) throw DataError("cannot write " + o.out);
    out << report_to_json(report);
    out.close();
    write_resolved_config(cmd, fs::path(o.out).concat(".config.toml"));
    std::fputs(report_table(report).c_str(), stdout);
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Convolutional occupancy field reconstruction toolkit"};
    app.require_subcommand(1);
    app.set_config("--config", "", "Read options from a TOML-style file; flags override");
    app.allow_config_extras(false);

    GenOpts gen;
    CLI::App* cgen = app.add_subcommand("gen-data", "Generate synthetic dataset shards");
    cgen->add_option("--out", gen.out_dir, "Output dataset directory")->required();
    cgen->add_option("--count", gen.count, "Training scene count");
    cgen->add_option("--val-count", gen.val_count, "Validation scene count");
    cgen->add_option("--task", gen.task, "object_points | object_voxels | scene_points");
    cgen->add_option("--objects-min", gen.objects_min, "Minimum objects per scene");
    cgen->add_option("--objects-max", gen.objects_max, "Maximum objects per scene");
    cgen->add_option("--scale-min", gen.scale_min, "Minimum object half extent");
    cgen->add_option("--scale-max", gen.scale_max, "Maximum object half extent");
    cgen->add_flag("--ground", gen.ground, "Include a ground slab");
    cgen->add_option("--wall-prob", gen.wall_prob, "Per-side wall probability");
    cgen->add_option("--input-points", gen.input_points, "Input cloud size (default per task)");
    cgen->add_option("--noise-sigma", gen.noise_sigma, "Gaussian noise std in normalized units");
    cgen->add_option("--query-points", gen.query_points, "Stored query count (default per task)");
    cgen->add_option("--voxel-res", gen.voxel_res, "Voxel grid resolution (0 disables)");
    cgen->add_option("--padding", gen.padding, "Normalization padding");
    cgen->add_option("--seed", gen.seed, "Root seed");
    cgen->add_option("--jobs", gen.jobs, "Worker threads (0 = cores)");
    cgen->callback([&] { run_gen_data(app, gen); });

    TrainOpts tr;
    CLI::App* ctrain = app.add_subcommand("train", "Train an occupancy model");
    ctrain->add_option("--data", tr.data_dir, "Dataset directory")->required();
    ctrain->add_option("--out", tr.out_dir, "Run output directory")->required();
    ctrain->add_option("--mode", tr.mode,
                       "single_plane | three_planes | volume | hybrid | global_baseline");
    ctrain->add_option("--plane-res", tr.plane_res, "Feature plane resolution");
    ctrain->add_option("--volume-res", tr.volume_res, "Feature volume resolution");
    ctrain->add_option("--feature-dim", tr.feature_dim, "Feature dimension d");
    ctrain->add_option("--pn-blocks", tr.pn_blocks, "Point network blocks");
    ctrain->add_option("--hidden-dim", tr.hidden_dim, "Occupancy head width");
    ctrain->add_option("--head-blocks", tr.head_blocks, "Occupancy head ResNet blocks");
    ctrain->add_option("--interp", tr.interp, "Feature interpolation: linear | nearest");
    ctrain->add_option("--unet-depth", tr.unet_depth, "U-Net depth override (0 = receptive-field rule)");
    ctrain->add_option("--task", tr.task, "object_points | object_voxels | scene_points");
    ctrain->add_option("--batch-size", tr.batch_size, "Batch size (default per task)");
    ctrain->add_option("--queries", tr.queries, "Query points per item (default per task)");
    ctrain->add_option("--lr", tr.lr, "Adam learning rate");
    ctrain->add_option("--max-steps", tr.max_steps, "Optimization steps");
    ctrain->add_option("--eval-every", tr.eval_every, "Validation/checkpoint period");
    ctrain->add_option("--seed", tr.seed, "Root seed");
    ctrain->add_option("--jobs", tr.jobs, "Worker threads (0 = cores; 1 = bit-deterministic)");
    ctrain->add_option("--resume", tr.resume, "Checkpoint to continue from");
    ctrain->callback([&] { run_train(app, tr); });

    ReconstructOpts rec;
    CLI::App* crec = app.add_subcommand("reconstruct", "Extract a mesh from an input cloud or voxel grid");
    crec->add_option("--checkpoint", rec.checkpoint, "Trained checkpoint")->required();
    crec->add_option("--input", rec.input, "Point cloud (COPC1/.xyz/.ply) or voxel grid (COVX1)")
        ->required();
    crec->add_option("--out", rec.out, "Output mesh path (.ply or .off)")->required();
    crec->add_option("--format", rec.format, "Mesh format override: ply | off");
    crec->add_option("--mise-initial", rec.mise_initial, "MISE initial resolution");
    crec->add_option("--mise-res", rec.mise_res, "MISE final resolution");
    crec->add_option("--iso", rec.iso, "Iso threshold on probability");
    crec->add_flag("--sliding-window", rec.sliding_window, "Overlapping-crop inference (volume mode)");
    crec->add_option("--sw-stride", rec.sw_stride, "Sliding-window interior cells per crop");
    crec->add_option("--sw-margin", rec.sw_margin, "Sliding-window margin cells (-1 = receptive field)");
    crec->add_option("--jobs", rec.jobs, "Worker threads (0 = cores)");
    crec->callback([&] { run_reconstruct(app, rec); });

    EvalOpts ev;
    CLI::App* ceval = app.add_subcommand("eval", "Score a predicted mesh against the ground truth");
    ceval->add_option("--pred", ev.pred, "Predicted mesh (.ply or .off)")->required();
    ceval->add_option("--truth", ev.truth, "Scene .json or reference mesh")->required();
    ceval->add_option("--out", ev.out, "Report JSON path");
    ceval->add_option("--fscore-threshold", ev.fscore_threshold, "F-Score distance threshold (0.01 or 0.015)");
    ceval->add_flag("--single-surface", ev.single_surface, "Collapse wall/ground slabs to one surface");
    ceval->add_option("--surface-samples", ev.surface_samples, "Surface sample count");
    ceval->add_option("--volume-samples", ev.volume_samples, "Volume sample count for IoU");
    ceval->add_option("--seed", ev.seed, "Sampling seed");
    ceval->add_option("--jobs", ev.jobs, "Worker threads (0 = cores)");
    ceval->callback([&] { run_eval(app, ev); });

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        int code = app.exit(e);
        return code == 0 ? 0 : 1;
    } catch (const NumericalError& e) {
        std::fprintf(stderr, "numerical abort: %s\n", e.what());
        return 3;
    } catch (const DataError& e) {
        std::fprintf(stderr, "data error: %s\n", e.what());
        return 2;
    } catch (const std::invalid_argument& e) {
        std::fprintf(stderr, "usage error: %s\n", e.what());
        return 1;
    } catch (const std::exception& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 2;
    }
    return 0;
}
