#include "convocc/mise.hpp"

#include <cmath>

namespace convocc {

namespace {

struct NodeField {
    int n;  // nodes per axis
    std::vector<double> value;
    std::vector<uint8_t> known;

    explicit NodeField(int nodes) : n(nodes), value(static_cast<size_t>(nodes) * nodes * nodes, 0.0),
                                    known(static_cast<size_t>(nodes) * nodes * nodes, 0) {}
    size_t id(int i, int j, int k) const {
        return (static_cast<size_t>(k) * n + static_cast<size_t>(j)) * n + static_cast<size_t>(i);
    }
};

void evaluate_nodes(const FieldEval& eval, NodeField& field, std::vector<size_t>& ids, int final_res,
                    int64_t* calls) {
    if (ids.empty()) return;
    std::vector<Vec3> pts;
    pts.reserve(ids.size());
    for (size_t id : ids) {
        int i = static_cast<int>(id % field.n);
        int j = static_cast<int>((id / field.n) % field.n);
        int k = static_cast<int>(id / (static_cast<size_t>(field.n) * field.n));
        pts.push_back({static_cast<double>(i) / final_res, static_cast<double>(j) / final_res,
                       static_cast<double>(k) / final_res});
    }
    std::vector<double> vals = eval(pts);
    if (vals.size() != ids.size()) throw std::invalid_argument("mise: evaluator returned wrong count");
    for (size_t q = 0; q < ids.size(); ++q) {
        field.value[ids[q]] = vals[q];
        field.known[ids[q]] = 1;
    }
    if (calls) *calls += static_cast<int64_t>(ids.size());
}

}  // namespace

TriangleMesh mise_extract(const FieldEval& eval, const MiseConfig& cfg, int64_t* evaluator_calls) {
    const int initial = cfg.initial_resolution, final_res = cfg.final_resolution;
    if (initial < 2) throw std::invalid_argument("mise: initial resolution must be >= 2");
    int steps = final_res / initial;
    if (steps * initial != final_res || (steps & (steps - 1)) != 0)
        throw std::invalid_argument("mise: final resolution " + std::to_string(final_res) +
                                    " must be initial * 2^k");
    if (evaluator_calls) *evaluator_calls = 0;

    const int n = final_res + 1;
    NodeField field(n);

    // Initial lattice.
    {
        std::vector<size_t> ids;
        for (int k = 0; k <= final_res; k += steps)
            for (int j = 0; j <= final_res; j += steps)
                for (int i = 0; i <= final_res; i += steps) ids.push_back(field.id(i, j, k));
        evaluate_nodes(eval, field, ids, final_res, evaluator_calls);
    }

    // Resolve a node's working value: its own if evaluated, otherwise the
    // min-corner ancestor at successively coarser strides.
    auto resolve = [&](int i, int j, int k) {
        for (int s = 1; s <= steps; s *= 2) {
            int ii = (i / s) * s, jj = (j / s) * s, kk = (k / s) * s;
            if (field.known[field.id(ii, jj, kk)]) return field.value[field.id(ii, jj, kk)];
        }
        return field.value[field.id(0, 0, 0)];
    };

    for (int stride = steps; stride > 1; stride /= 2) {
        const int cells = final_res / stride;
        std::vector<uint8_t> active(static_cast<size_t>(cells) * cells * cells, 0);
        auto cell_id = [&](int ci, int cj, int ck) {
            return (static_cast<size_t>(ck) * cells + static_cast<size_t>(cj)) * cells +
                   static_cast<size_t>(ci);
        };
        for (int ck = 0; ck < cells; ++ck)
            for (int cj = 0; cj < cells; ++cj)
                for (int ci = 0; ci < cells; ++ci) {
                    bool above = false, below = false;
                    for (int c = 0; c < 8; ++c) {
                        double v = resolve((ci + (c & 1)) * stride, (cj + ((c >> 1) & 1)) * stride,
                                           (ck + ((c >> 2) & 1)) * stride);
                        (v >= cfg.iso ? above : below) = true;
                    }
                    if (above && below) active[cell_id(ci, cj, ck)] = 1;
                }
        // One-cell safety collar.
        std::vector<uint8_t> dilated = active;
        for (int ck = 0; ck < cells; ++ck)
            for (int cj = 0; cj < cells; ++cj)
                for (int ci = 0; ci < cells; ++ci) {
                    if (!active[cell_id(ci, cj, ck)]) continue;
                    for (int dk = -1; dk <= 1; ++dk)
                        for (int dj = -1; dj <= 1; ++dj)
                            for (int di = -1; di <= 1; ++di) {
                                int ni = ci + di, nj = cj + dj, nk = ck + dk;
                                if (ni < 0 || nj < 0 || nk < 0 || ni >= cells || nj >= cells || nk >= cells)
                                    continue;
                                dilated[cell_id(ni, nj, nk)] = 1;
                            }
                }
        // Evaluate the refined sub-lattice of every active cell.
        int half = stride / 2;
        std::vector<size_t> pending;
        for (int ck = 0; ck < cells; ++ck)
            for (int cj = 0; cj < cells; ++cj)
                for (int ci = 0; ci < cells; ++ci) {
                    if (!dilated[cell_id(ci, cj, ck)]) continue;
                    for (int dk = 0; dk <= 2; ++dk)
                        for (int dj = 0; dj <= 2; ++dj)
                            for (int di = 0; di <= 2; ++di) {
                                size_t id = field.id(ci * stride + di * half, cj * stride + dj * half,
                                                     ck * stride + dk * half);
                                if (!field.known[id]) {
                                    field.known[id] = 2;  // pending
                                    pending.push_back(id);
                                }
                            }
                }
        for (size_t id : pending) field.known[id] = 0;
        evaluate_nodes(eval, field, pending, final_res, evaluator_calls);
    }

    // Untouched fine nodes inherit their coarse region's value, coarse to
    // fine so every parent is filled before its children.
    for (int stride = steps; stride > 1; stride /= 2) {
        int half = stride / 2;
        for (int k = 0; k <= final_res; k += half)
            for (int j = 0; j <= final_res; j += half)
                for (int i = 0; i <= final_res; i += half) {
                    size_t id = field.id(i, j, k);
                    if (field.known[id]) continue;
                    size_t parent = field.id((i / stride) * stride, (j / stride) * stride,
                                             (k / stride) * stride);
                    field.value[id] = field.value[parent];
                    field.known[id] = 1;
                }
    }

    return marching_cubes_unit(field.value, {n, n, n}, cfg.iso);
}

TriangleMesh dense_extract(const FieldEval& eval, int resolution, double iso, int64_t* evaluator_calls) {
    const int n = resolution + 1;
    if (evaluator_calls) *evaluator_calls = 0;
    std::vector<double> values;
    values.reserve(static_cast<size_t>(n) * n * n);
    std::vector<Vec3> batch;
    const size_t chunk = 65536;
    for (int k = 0; k < n; ++k)
        for (int j = 0; j < n; ++j)
            for (int i = 0; i < n; ++i) {
                batch.push_back({static_cast<double>(i) / resolution, static_cast<double>(j) / resolution,
                                 static_cast<double>(k) / resolution});
                if (batch.size() == chunk) {
                    auto vals = eval(batch);
                    values.insert(values.end(), vals.begin(), vals.end());
                    if (evaluator_calls) *evaluator_calls += static_cast<int64_t>(batch.size());
                    batch.clear();
                }
            }
    if (!batch.empty()) {
        auto vals = eval(batch);
        values.insert(values.end(), vals.begin(), vals.end());
        if (evaluator_calls) *evaluator_calls += static_cast<int64_t>(batch.size());
    }
    return marching_cubes_unit(values, {n, n, n}, iso);
}

}  // namespace convocc
