#include "convocc/marching_cubes.hpp"

#include <cmath>
#include <unordered_map>

namespace convocc {

#include "mc_tables.inc"

namespace {

// Bourke corner layout on the unit cell.
const int kCornerOffset[8][3] = {{0, 0, 0}, {1, 0, 0}, {1, 1, 0}, {0, 1, 0},
                                 {0, 0, 1}, {1, 0, 1}, {1, 1, 1}, {0, 1, 1}};
const int kEdgeCorners[12][2] = {{0, 1}, {1, 2}, {2, 3}, {3, 0}, {4, 5}, {5, 6},
                                 {6, 7}, {7, 4}, {0, 4}, {1, 5}, {2, 6}, {3, 7}};

// Cyclic corner and edge rings of the six cell faces.
const int kFaceCorners[6][4] = {{0, 1, 2, 3}, {4, 5, 6, 7}, {0, 1, 5, 4},
                                {1, 2, 6, 5}, {2, 3, 7, 6}, {3, 0, 4, 7}};
const int kFaceEdges[6][4] = {{0, 1, 2, 3}, {4, 5, 6, 7}, {0, 9, 4, 8},
                              {1, 10, 5, 9}, {2, 11, 6, 10}, {3, 8, 7, 11}};

// Per case and face: +1 the triangulation joins the inside-diagonal
// corners, -1 it separates them, 0 the face is not ambiguous for the case.
struct FaceConnectivity {
    int8_t implied[256][6];
};

// Whether a face has the diagonal (ambiguous) inside pattern for a case,
// and which diagonal holds the inside corners (0: corners ring 0&2).
bool face_ambiguous(int cube_case, int face, int& inside_diag) {
    bool in[4];
    for (int i = 0; i < 4; ++i) in[i] = (cube_case >> kFaceCorners[face][i]) & 1;
    if (in[0] && in[2] && !in[1] && !in[3]) {
        inside_diag = 0;
        return true;
    }
    if (!in[0] && !in[2] && in[1] && in[3]) {
        inside_diag = 1;
        return true;
    }
    return false;
}

FaceConnectivity build_face_connectivity() {
    FaceConnectivity fc{};
    for (int c = 0; c < 256; ++c) {
        for (int f = 0; f < 6; ++f) {
            int diag = 0;
            fc.implied[c][f] = 0;
            if (!face_ambiguous(c, f, diag)) continue;
            // Collect chords: triangle edges with both endpoints on this
            // face's edge ring.
            int ring_pos[12];
            for (int e = 0; e < 12; ++e) ring_pos[e] = -1;
            for (int i = 0; i < 4; ++i) ring_pos[kFaceEdges[f][i]] = i;
            bool separated = false;
            int chords = 0;
            for (int t = 0; kTriTable[c][t] != -1; t += 3) {
                int tri[3] = {kTriTable[c][t], kTriTable[c][t + 1], kTriTable[c][t + 2]};
                for (int k = 0; k < 3; ++k) {
                    int a = tri[k], b = tri[(k + 1) % 3];
                    if (ring_pos[a] < 0 || ring_pos[b] < 0) continue;
                    ++chords;
                    // A chord separates an inside corner iff it connects the
                    // two ring edges adjacent to that corner.
                    for (int corner = diag; corner < 4; corner += 2) {
                        int e_prev = kFaceEdges[f][(corner + 3) % 4];
                        int e_next = kFaceEdges[f][corner];
                        if ((a == e_prev && b == e_next) || (a == e_next && b == e_prev)) separated = true;
                    }
                }
            }
            if (chords == 0)
                throw std::logic_error("marching_cubes: table case " + std::to_string(c) +
                                       " leaves ambiguous face " + std::to_string(f) + " untriangulated");
            fc.implied[c][f] = separated ? -1 : 1;
        }
    }
    return fc;
}

const FaceConnectivity& face_connectivity() {
    static const FaceConnectivity fc = build_face_connectivity();
    return fc;
}

}  // namespace

TriangleMesh marching_cubes(const std::vector<double>& field, const std::array<int, 3>& node_dims,
                            double iso, const Vec3& origin, const Vec3& spacing) {
    const int nx = node_dims[0], ny = node_dims[1], nz = node_dims[2];
    if (nx < 2 || ny < 2 || nz < 2)
        throw std::invalid_argument("marching_cubes: need at least 2 nodes per axis");
    if (field.size() != static_cast<size_t>(nx) * ny * nz)
        throw std::invalid_argument("marching_cubes: field size does not match node dims");
    for (double v : field)
        if (!std::isfinite(v)) throw std::invalid_argument("marching_cubes: non-finite field value");

    const FaceConnectivity& fc = face_connectivity();
    TriangleMesh mesh;
    std::unordered_map<uint64_t, uint32_t> edge_vertex;
    auto node_id = [&](int i, int j, int k) {
        return (static_cast<uint64_t>(k) * ny + static_cast<uint64_t>(j)) * nx + static_cast<uint64_t>(i);
    };
    auto value_at = [&](int i, int j, int k) { return field[node_id(i, j, k)]; };

    double corner[8];
    int gx[8], gy[8], gz[8];
    for (int k = 0; k + 1 < nz; ++k)
        for (int j = 0; j + 1 < ny; ++j)
            for (int i = 0; i + 1 < nx; ++i) {
                int cube_case = 0;
                for (int c = 0; c < 8; ++c) {
                    gx[c] = i + kCornerOffset[c][0];
                    gy[c] = j + kCornerOffset[c][1];
                    gz[c] = k + kCornerOffset[c][2];
                    corner[c] = value_at(gx[c], gy[c], gz[c]);
                    if (corner[c] < iso) cube_case |= 1 << c;
                }
                if (cube_case == 0 || cube_case == 255) continue;

                // Asymptotic decider per ambiguous face. The standard table
                // is used whenever its implied face connectivity matches the
                // decider; otherwise the cell is triangulated from
                // face-consistent contour loops so neighbors always agree.
                bool table_ok = true;
                bool face_joined[6] = {};
                bool face_is_ambiguous[6] = {};
                for (int f = 0; f < 6; ++f) {
                    int diag = 0;
                    if (!face_ambiguous(cube_case, f, diag)) continue;
                    face_is_ambiguous[f] = true;
                    double v[4];
                    for (int t = 0; t < 4; ++t) v[t] = corner[kFaceCorners[f][t]] - iso;
                    // Saddle value of the bilinear face. Inside corners are
                    // the negative pair under the "< iso" bit convention, so
                    // the inside diagonal is joined iff the saddle value is
                    // negative, whichever diagonal is inside.
                    double denom = v[0] + v[2] - v[1] - v[3];
                    double s = denom != 0.0 ? (v[0] * v[2] - v[1] * v[3]) / denom : 0.0;
                    face_joined[f] = s < 0.0;
                    int implied = fc.implied[cube_case][f];
                    if (implied != 0 && face_joined[f] != (implied > 0)) table_ok = false;
                }

                // Vertices on crossing edges (shared with neighbors).
                uint32_t edge_vi[12];
                int edges = kEdgeTable[cube_case];
                for (int e = 0; e < 12; ++e) {
                    if (!(edges & (1 << e))) continue;
                    int ca = kEdgeCorners[e][0], cb = kEdgeCorners[e][1];
                    uint64_t na = node_id(gx[ca], gy[ca], gz[ca]);
                    uint64_t nb = node_id(gx[cb], gy[cb], gz[cb]);
                    uint64_t key = (std::min(na, nb) << 2) |
                                   static_cast<uint64_t>(gx[ca] != gx[cb] ? 0 : (gy[ca] != gy[cb] ? 1 : 2));
                    auto it = edge_vertex.find(key);
                    if (it != edge_vertex.end()) {
                        edge_vi[e] = it->second;
                        continue;
                    }
                    double va = corner[ca], vb = corner[cb];
                    double t = (iso - va) / (vb - va);
                    if (!(t >= 0.0)) t = 0.0;
                    if (t > 1.0) t = 1.0;
                    Vec3 pa{origin.x + gx[ca] * spacing.x, origin.y + gy[ca] * spacing.y,
                            origin.z + gz[ca] * spacing.z};
                    Vec3 pb{origin.x + gx[cb] * spacing.x, origin.y + gy[cb] * spacing.y,
                            origin.z + gz[cb] * spacing.z};
                    Vec3 p = pa + (pb - pa) * t;
                    uint32_t vi = static_cast<uint32_t>(mesh.vertices.size());
                    mesh.vertices.push_back(p);
                    edge_vertex.emplace(key, vi);
                    edge_vi[e] = vi;
                }

                if (table_ok) {
                    for (int t = 0; kTriTable[cube_case][t] != -1; t += 3) {
                        uint32_t a = edge_vi[kTriTable[cube_case][t]];
                        uint32_t b = edge_vi[kTriTable[cube_case][t + 1]];
                        uint32_t c = edge_vi[kTriTable[cube_case][t + 2]];
                        if (a == b || b == c || a == c) continue;  // collapsed at a corner
                        mesh.triangles.push_back({a, b, c});
                    }
                    continue;
                }

                // Loop fallback: per-face contour segments (connectivity from
                // the pattern, ambiguous faces from the decider), assembled
                // into closed loops, each fanned around its centroid.
                std::vector<std::pair<int, int>> segments;
                for (int f = 0; f < 6; ++f) {
                    int crossed[4];
                    int nc = 0;
                    for (int p = 0; p < 4; ++p) {
                        int e = kFaceEdges[f][p];
                        if (edges & (1 << e)) crossed[nc++] = p;
                    }
                    if (nc == 0) continue;
                    if (nc == 2) {
                        segments.push_back({kFaceEdges[f][crossed[0]], kFaceEdges[f][crossed[1]]});
                        continue;
                    }
                    // Diagonal pattern: all four ring edges crossed. The
                    // segments cut off the two corners opposite the joined
                    // pair; ring corner p sits between ring edges p-1 and p.
                    bool inside0 = (cube_case >> kFaceCorners[f][0]) & 1;
                    int cut_a, cut_b;
                    if (face_joined[f])
                        cut_a = inside0 ? 1 : 0;  // cut the outside pair
                    else
                        cut_a = inside0 ? 0 : 1;  // cut the inside pair
                    cut_b = cut_a + 2;
                    for (int cut : {cut_a, cut_b})
                        segments.push_back({kFaceEdges[f][(cut + 3) % 4], kFaceEdges[f][cut]});
                }
                // Walk loops over the segment graph (each crossing edge has
                // exactly two incident segments).
                int adj[12][2];
                int adj_n[12] = {};
                for (auto& s : segments) {
                    if (adj_n[s.first] < 2) adj[s.first][adj_n[s.first]++] = s.second;
                    if (adj_n[s.second] < 2) adj[s.second][adj_n[s.second]++] = s.first;
                }
                bool used[12] = {};
                for (int start = 0; start < 12; ++start) {
                    if (used[start] || adj_n[start] == 0) continue;
                    std::vector<int> loop;
                    int cur = start, prev = -1;
                    while (true) {
                        loop.push_back(cur);
                        used[cur] = true;
                        int next = adj[cur][0] == prev && adj_n[cur] > 1 ? adj[cur][1] : adj[cur][0];
                        prev = cur;
                        cur = next;
                        if (cur == start || used[cur]) break;
                    }
                    if (loop.size() < 3) continue;
                    Vec3 centroid{0, 0, 0};
                    for (int e : loop) centroid += mesh.vertices[edge_vi[e]];
                    centroid = centroid / static_cast<double>(loop.size());
                    // Orient toward lower field values using the cell's
                    // average gradient.
                    Vec3 grad{0, 0, 0};
                    for (int c = 0; c < 8; ++c) {
                        grad.x += (kCornerOffset[c][0] ? corner[c] : -corner[c]);
                        grad.y += (kCornerOffset[c][1] ? corner[c] : -corner[c]);
                        grad.z += (kCornerOffset[c][2] ? corner[c] : -corner[c]);
                    }
                    Vec3 loop_normal{0, 0, 0};
                    for (size_t li = 0; li < loop.size(); ++li) {
                        Vec3 a = mesh.vertices[edge_vi[loop[li]]] - centroid;
                        Vec3 b = mesh.vertices[edge_vi[loop[(li + 1) % loop.size()]]] - centroid;
                        loop_normal += a.cross(b);
                    }
                    bool flip = loop_normal.dot(grad) > 0.0;
                    uint32_t ci = static_cast<uint32_t>(mesh.vertices.size());
                    mesh.vertices.push_back(centroid);
                    for (size_t li = 0; li < loop.size(); ++li) {
                        uint32_t a = edge_vi[loop[li]];
                        uint32_t b = edge_vi[loop[(li + 1) % loop.size()]];
                        if (a == b || a == ci || b == ci) continue;
                        if (flip)
                            mesh.triangles.push_back({ci, b, a});
                        else
                            mesh.triangles.push_back({ci, a, b});
                    }
                }
            }
    return mesh;
}

TriangleMesh marching_cubes_unit(const std::vector<double>& field, const std::array<int, 3>& node_dims,
                                 double iso) {
    Vec3 spacing{1.0 / (node_dims[0] - 1), 1.0 / (node_dims[1] - 1), 1.0 / (node_dims[2] - 1)};
    return marching_cubes(field, node_dims, iso, {0, 0, 0}, spacing);
}

}  // namespace convocc
