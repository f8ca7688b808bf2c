#include "convocc/mesh_io.hpp"

#include <cstring>
#include <fstream>
#include <sstream>

namespace convocc {

namespace fs = std::filesystem;

void write_mesh_ply(const fs::path& path, const TriangleMesh& mesh) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw DataError("cannot write " + path.string());
    out << "ply\nformat binary_little_endian 1.0\n";
    out << "element vertex " << mesh.vertices.size() << "\n";
    out << "property float x\nproperty float y\nproperty float z\n";
    out << "element face " << mesh.triangles.size() << "\n";
    out << "property list uchar uint vertex_indices\n";
    out << "end_header\n";
    for (const Vec3& v : mesh.vertices) {
        float f[3] = {static_cast<float>(v.x), static_cast<float>(v.y), static_cast<float>(v.z)};
        out.write(reinterpret_cast<const char*>(f), 12);
    }
    for (const auto& t : mesh.triangles) {
        uint8_t n = 3;
        out.write(reinterpret_cast<const char*>(&n), 1);
        out.write(reinterpret_cast<const char*>(t.data()), 12);
    }
}

void write_mesh_off(const fs::path& path, const TriangleMesh& mesh) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw DataError("cannot write " + path.string());
    out << "OFF\n" << mesh.vertices.size() << " " << mesh.triangles.size() << " 0\n";
    out.precision(17);
    for (const Vec3& v : mesh.vertices) out << v.x << " " << v.y << " " << v.z << "\n";
    for (const auto& t : mesh.triangles) out << "3 " << t[0] << " " << t[1] << " " << t[2] << "\n";
}

namespace {

struct PlyProperty {
    std::string type;
    std::string name;
};

struct PlyElement {
    std::string name;
    size_t count = 0;
    std::vector<PlyProperty> properties;
    bool is_list = false;
    std::string list_count_type, list_value_type;
};

size_t scalar_size(const std::string& type) {
    if (type == "char" || type == "uchar" || type == "int8" || type == "uint8") return 1;
    if (type == "short" || type == "ushort" || type == "int16" || type == "uint16") return 2;
    if (type == "int" || type == "uint" || type == "int32" || type == "uint32" || type == "float" ||
        type == "float32")
        return 4;
    if (type == "double" || type == "float64") return 8;
    throw DataError("ply: unsupported property type " + type);
}

struct PlyHeader {
    std::vector<PlyElement> elements;
    size_t header_bytes = 0;
};

PlyHeader parse_ply_header(std::ifstream& in, const std::string& path) {
    PlyHeader header;
    std::string line;
    size_t offset = 0;
    auto next_line = [&]() {
        if (!std::getline(in, line)) throw DataError(path + ": truncated header at byte offset " + std::to_string(offset));
        offset += line.size() + 1;
        return true;
    };
    next_line();
    if (line != "ply") throw DataError(path + ": not a PLY file (bad magic at byte offset 0)");
    next_line();
    if (line.find("binary_little_endian") == std::string::npos)
        throw DataError(path + ": only binary little-endian PLY is supported");
    while (next_line()) {
        if (line == "end_header") break;
        std::istringstream ss(line);
        std::string tok;
        ss >> tok;
        if (tok == "comment") continue;
        if (tok == "element") {
            PlyElement e;
            ss >> e.name >> e.count;
            header.elements.push_back(e);
        } else if (tok == "property") {
            if (header.elements.empty()) throw DataError(path + ": property before element");
            std::string type;
            ss >> type;
            PlyElement& e = header.elements.back();
            if (type == "list") {
                ss >> e.list_count_type >> e.list_value_type;
                e.is_list = true;
                std::string name;
                ss >> name;
            } else {
                PlyProperty p;
                p.type = type;
                ss >> p.name;
                e.properties.push_back(p);
            }
        }
    }
    header.header_bytes = offset;
    return header;
}

double read_scalar(std::ifstream& in, const std::string& type, const std::string& path, size_t& offset) {
    unsigned char buf[8];
    size_t n = scalar_size(type);
    in.read(reinterpret_cast<char*>(buf), static_cast<std::streamsize>(n));
    if (in.gcount() != static_cast<std::streamsize>(n))
        throw DataError(path + ": truncated at byte offset " + std::to_string(offset + static_cast<size_t>(in.gcount())));
    offset += n;
    if (type == "float" || type == "float32") {
        float f;
        std::memcpy(&f, buf, 4);
        return f;
    }
    if (type == "double" || type == "float64") {
        double d;
        std::memcpy(&d, buf, 8);
        return d;
    }
    if (n == 1) return buf[0];
    if (n == 2) {
        uint16_t v;
        std::memcpy(&v, buf, 2);
        return v;
    }
    uint32_t v;
    std::memcpy(&v, buf, 4);
    return v;
}

}  // namespace

PointCloud read_ply_points(const fs::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DataError("cannot open " + path.string());
    PlyHeader header = parse_ply_header(in, path.string());
    size_t offset = header.header_bytes;
    PointCloud cloud;
    for (const PlyElement& e : header.elements) {
        if (e.name != "vertex") {
            // Skip foreign fixed-size elements; lists cannot be skipped
            // without reading, so bail out unless vertices were found.
            if (e.is_list) break;
            size_t row = 0;
            for (const auto& p : e.properties) row += scalar_size(p.type);
            in.seekg(static_cast<std::streamoff>(row * e.count), std::ios::cur);
            offset += row * e.count;
            continue;
        }
        int xi = -1, yi = -1, zi = -1;
        for (size_t i = 0; i < e.properties.size(); ++i) {
            if (e.properties[i].name == "x") xi = static_cast<int>(i);
            if (e.properties[i].name == "y") yi = static_cast<int>(i);
            if (e.properties[i].name == "z") zi = static_cast<int>(i);
        }
        if (xi < 0 || yi < 0 || zi < 0) throw DataError(path.string() + ": vertex element lacks x/y/z");
        for (size_t v = 0; v < e.count; ++v) {
            Vec3 p;
            for (size_t i = 0; i < e.properties.size(); ++i) {
                double val = read_scalar(in, e.properties[i].type, path.string(), offset);
                if (static_cast<int>(i) == xi) p.x = val;
                if (static_cast<int>(i) == yi) p.y = val;
                if (static_cast<int>(i) == zi) p.z = val;
            }
            cloud.points.push_back(p);
        }
        break;
    }
    if (cloud.points.empty()) throw DataError(path.string() + ": no vertices found");
    return cloud;
}

TriangleMesh read_mesh_ply(const fs::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DataError("cannot open " + path.string());
    PlyHeader header = parse_ply_header(in, path.string());
    size_t offset = header.header_bytes;
    TriangleMesh mesh;
    for (const PlyElement& e : header.elements) {
        if (e.name == "vertex") {
            int xi = -1, yi = -1, zi = -1;
            for (size_t i = 0; i < e.properties.size(); ++i) {
                if (e.properties[i].name == "x") xi = static_cast<int>(i);
                if (e.properties[i].name == "y") yi = static_cast<int>(i);
                if (e.properties[i].name == "z") zi = static_cast<int>(i);
            }
            if (xi < 0 || yi < 0 || zi < 0) throw DataError(path.string() + ": vertex element lacks x/y/z");
            for (size_t v = 0; v < e.count; ++v) {
                Vec3 p;
                for (size_t i = 0; i < e.properties.size(); ++i) {
                    double val = read_scalar(in, e.properties[i].type, path.string(), offset);
                    if (static_cast<int>(i) == xi) p.x = val;
                    if (static_cast<int>(i) == yi) p.y = val;
                    if (static_cast<int>(i) == zi) p.z = val;
                }
                mesh.vertices.push_back(p);
            }
        } else if (e.name == "face" && e.is_list) {
            for (size_t f = 0; f < e.count; ++f) {
                double n = read_scalar(in, e.list_count_type, path.string(), offset);
                if (n != 3.0) throw DataError(path.string() + ": non-triangle face at byte offset " + std::to_string(offset));
                std::array<uint32_t, 3> tri{};
                for (int k = 0; k < 3; ++k)
                    tri[static_cast<size_t>(k)] = static_cast<uint32_t>(read_scalar(in, e.list_value_type, path.string(), offset));
                for (uint32_t idx : tri)
                    if (idx >= mesh.vertices.size())
                        throw DataError(path.string() + ": face index out of range at byte offset " + std::to_string(offset));
                mesh.triangles.push_back(tri);
            }
        }
    }
    return mesh;
}

TriangleMesh read_mesh_off(const fs::path& path) {
    std::ifstream in(path);
    if (!in) throw DataError("cannot open " + path.string());
    std::string magic;
    in >> magic;
    if (magic != "OFF") throw DataError(path.string() + ": not an OFF file");
    size_t nv = 0, nf = 0, ne = 0;
    in >> nv >> nf >> ne;
    TriangleMesh mesh;
    for (size_t i = 0; i < nv; ++i) {
        Vec3 v;
        if (!(in >> v.x >> v.y >> v.z)) throw DataError(path.string() + ": truncated vertex list");
        mesh.vertices.push_back(v);
    }
    for (size_t i = 0; i < nf; ++i) {
        size_t n;
        if (!(in >> n) || n != 3) throw DataError(path.string() + ": non-triangle face");
        std::array<uint32_t, 3> tri{};
        for (int k = 0; k < 3; ++k) {
            if (!(in >> tri[static_cast<size_t>(k)]) || tri[static_cast<size_t>(k)] >= nv)
                throw DataError(path.string() + ": bad face index");
        }
        mesh.triangles.push_back(tri);
    }
    return mesh;
}

PointCloud read_xyz_points(const fs::path& path) {
    std::ifstream in(path);
    if (!in) throw DataError("cannot open " + path.string());
    PointCloud cloud;
    std::string line;
    size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.empty() || line[0] == '#') continue;
        std::istringstream ss(line);
        Vec3 p;
        if (!(ss >> p.x >> p.y >> p.z))
            throw DataError(path.string() + ": malformed line " + std::to_string(lineno));
        cloud.points.push_back(p);
    }
    if (cloud.points.empty()) throw DataError(path.string() + ": no points");
    return cloud;
}

}  // namespace convocc
