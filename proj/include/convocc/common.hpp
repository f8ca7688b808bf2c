#pragma once

#include <cmath>
#include <cstdint>
#include <random>
#include <sstream>
#include <stdexcept>
#include <string>

namespace convocc {

// Thrown for unreadable/malformed files and invalid dataset contents.
// The CLI maps this to exit code 2.
class DataError : public std::runtime_error {
public:
    explicit DataError(const std::string& msg) : std::runtime_error(msg) {}
};

// Thrown when a computation produces non-finite values. Exit code 3.
class NumericalError : public std::runtime_error {
public:
    explicit NumericalError(const std::string& msg) : std::runtime_error(msg) {}
};

struct Vec3 {
    double x = 0.0, y = 0.0, z = 0.0;

    Vec3() = default;
    Vec3(double x_, double y_, double z_) : x(x_), y(y_), z(z_) {}

    double operator[](int i) const { return i == 0 ? x : (i == 1 ? y : z); }
    double& operator[](int i) { return i == 0 ? x : (i == 1 ? y : z); }

    Vec3 operator+(const Vec3& o) const { return {x + o.x, y + o.y, z + o.z}; }
    Vec3 operator-(const Vec3& o) const { return {x - o.x, y - o.y, z - o.z}; }
    Vec3 operator*(double s) const { return {x * s, y * s, z * s}; }
    Vec3 operator/(double s) const { return {x / s, y / s, z / s}; }
    Vec3& operator+=(const Vec3& o) { x += o.x; y += o.y; z += o.z; return *this; }

    double dot(const Vec3& o) const { return x * o.x + y * o.y + z * o.z; }
    Vec3 cross(const Vec3& o) const {
        return {y * o.z - z * o.y, z * o.x - x * o.z, x * o.y - y * o.x};
    }
    double norm() const { return std::sqrt(x * x + y * y + z * z); }
    Vec3 normalized() const {
        double n = norm();
        return n > 0.0 ? (*this) / n : Vec3{0.0, 0.0, 0.0};
    }
    Vec3 cwise_mul(const Vec3& o) const { return {x * o.x, y * o.y, z * o.z}; }
    Vec3 cwise_div(const Vec3& o) const { return {x / o.x, y / o.y, z / o.z}; }
    double min_coeff() const { return std::min(x, std::min(y, z)); }
    double max_coeff() const { return std::max(x, std::max(y, z)); }
};

// Row-major 3x3 rotation matrix.
struct Mat3 {
    double m[9] = {1, 0, 0, 0, 1, 0, 0, 0, 1};

    static Mat3 identity() { return Mat3{}; }

    double operator()(int r, int c) const { return m[3 * r + c]; }
    double& operator()(int r, int c) { return m[3 * r + c]; }

    Vec3 operator*(const Vec3& v) const {
        return {m[0] * v.x + m[1] * v.y + m[2] * v.z,
                m[3] * v.x + m[4] * v.y + m[5] * v.z,
                m[6] * v.x + m[7] * v.y + m[8] * v.z};
    }
    // R^T v (inverse rotation for orthonormal R)
    Vec3 transposed_mul(const Vec3& v) const {
        return {m[0] * v.x + m[3] * v.y + m[6] * v.z,
                m[1] * v.x + m[4] * v.y + m[7] * v.z,
                m[2] * v.x + m[5] * v.y + m[8] * v.z};
    }
    Mat3 operator*(const Mat3& o) const {
        Mat3 r;
        for (int i = 0; i < 3; ++i)
            for (int j = 0; j < 3; ++j) {
                double s = 0;
                for (int k = 0; k < 3; ++k) s += (*this)(i, k) * o(k, j);
                r(i, j) = s;
            }
        return r;
    }

    static Mat3 from_quaternion(double w, double x, double y, double z) {
        double n = std::sqrt(w * w + x * x + y * y + z * z);
        w /= n; x /= n; y /= n; z /= n;
        Mat3 r;
        r.m[0] = 1 - 2 * (y * y + z * z); r.m[1] = 2 * (x * y - w * z); r.m[2] = 2 * (x * z + w * y);
        r.m[3] = 2 * (x * y + w * z); r.m[4] = 1 - 2 * (x * x + z * z); r.m[5] = 2 * (y * z - w * x);
        r.m[6] = 2 * (x * z - w * y); r.m[7] = 2 * (y * z + w * x); r.m[8] = 1 - 2 * (x * x + y * y);
        return r;
    }
};

struct Aabb {
    Vec3 min{0, 0, 0};
    Vec3 max{1, 1, 1};

    Vec3 extent() const { return max - min; }
    Vec3 center() const { return (min + max) * 0.5; }
    bool contains(const Vec3& p, double eps = 0.0) const {
        return p.x >= min.x - eps && p.x <= max.x + eps &&
               p.y >= min.y - eps && p.y <= max.y + eps &&
               p.z >= min.z - eps && p.z <= max.z + eps;
    }
};

// Deterministic random stream: std::mt19937_64 engine with explicit,
// implementation-independent transforms so that generated values depend
// only on the seed and the call sequence.
class RngStream {
public:
    explicit RngStream(uint64_t seed) : engine_(seed) {}

    uint64_t next_u64() { return engine_(); }

    // [0, 1)
    double uniform() {
        return static_cast<double>(engine_() >> 11) * 0x1.0p-53;
    }
    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    // Inclusive range.
    int64_t uniform_int(int64_t lo, int64_t hi) {
        // Modulo bias is irrelevant at our range sizes (<< 2^64).
        return lo + static_cast<int64_t>(engine_() % static_cast<uint64_t>(hi - lo + 1));
    }

    // Box-Muller, fresh pair each call (no cached state, so the stream is
    // fully described by the engine state).
    double normal() {
        double u1 = uniform(), u2 = uniform();
        if (u1 <= 0.0) u1 = 0x1.0p-53;
        return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * M_PI * u2);
    }
    double normal(double mean, double stddev) { return mean + stddev * normal(); }

    std::string save_state() const {
        std::ostringstream os;
        os << engine_;
        return os.str();
    }
    void load_state(const std::string& s) {
        std::istringstream is(s);
        is >> engine_;
        if (is.fail()) throw DataError("RngStream: malformed engine state");
    }

private:
    std::mt19937_64 engine_;
};

// splitmix64 finalizer, used to derive independent seeds from a root
// seed plus stream tags so that sampling is reproducible regardless of
// scheduling.
inline uint64_t mix_seed(uint64_t x) {
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

inline uint64_t derive_seed(uint64_t root, uint64_t tag) { return mix_seed(root ^ mix_seed(tag)); }
inline uint64_t derive_seed(uint64_t root, uint64_t tag_a, uint64_t tag_b) {
    return mix_seed(derive_seed(root, tag_a) ^ mix_seed(tag_b + 0x51ed2701ULL));
}

}  // namespace convocc
