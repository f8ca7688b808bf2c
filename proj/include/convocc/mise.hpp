#pragma once

#include <cstdint>
#include <functional>

#include "convocc/marching_cubes.hpp"

namespace convocc {

// Batched occupancy evaluator over normalized coordinates.
using FieldEval = std::function<std::vector<double>(const std::vector<Vec3>&)>;

struct MiseConfig {
    int initial_resolution = 32;  // cells per axis
    int final_resolution = 128;   // must be initial * 2^k
    double iso = 0.5;
};

// Multiresolution isosurface extraction: evaluate the initial lattice,
// repeatedly subdivide cells whose corners mix sides of the iso value
// (plus a one-cell safety collar), let untouched fine nodes inherit their
// coarse region's value, then run marching cubes at final resolution.
// evaluator_calls (optional) counts unique node evaluations.
TriangleMesh mise_extract(const FieldEval& eval, const MiseConfig& cfg,
                          int64_t* evaluator_calls = nullptr);

// Exhaustive reference: evaluate every node of the final lattice.
TriangleMesh dense_extract(const FieldEval& eval, int resolution, double iso,
                           int64_t* evaluator_calls = nullptr);

}  // namespace convocc
