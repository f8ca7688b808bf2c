#pragma once

// Independent reference implementations used as test oracles. These are
// deliberately written in the most literal way possible (nested loops,
// direct formulas) and share no code with the library.

#include <cmath>
#include <cstdint>
#include <functional>
#include <unordered_map>
#include <vector>

#include <convocc/tensor.hpp>

namespace oracle {

// Direct windowed-sum convolution: six nested loops for 2D (eight for 3D).
template <class VecX, class VecK, class VecB>
inline std::vector<double> conv2d_loops(const VecX& x, int cin, int h, int w,
                                        const VecK& k, int cout, int kh, int kw,
                                        const VecB& bias, int stride, int pad,
                                        int& ho, int& wo) {
    ho = (h + 2 * pad - kh) / stride + 1;
    wo = (w + 2 * pad - kw) / stride + 1;
    std::vector<double> out(static_cast<size_t>(cout) * ho * wo, 0.0);
    for (int co = 0; co < cout; ++co)
        for (int oy = 0; oy < ho; ++oy)
            for (int ox = 0; ox < wo; ++ox) {
                double s = bias[static_cast<size_t>(co)];
                for (int ci = 0; ci < cin; ++ci)
                    for (int ky = 0; ky < kh; ++ky)
                        for (int kx = 0; kx < kw; ++kx) {
                            int iy = oy * stride + ky - pad;
                            int ix = ox * stride + kx - pad;
                            if (iy < 0 || iy >= h || ix < 0 || ix >= w) continue;
                            s += x[(static_cast<size_t>(ci) * h + iy) * w + ix] *
                                 k[((static_cast<size_t>(co) * cin + ci) * kh + ky) * kw + kx];
                        }
                out[(static_cast<size_t>(co) * ho + oy) * wo + ox] = s;
            }
    return out;
}

template <class VecX, class VecK, class VecB>
inline std::vector<double> conv3d_loops(const VecX& x, int cin, int d, int h, int w,
                                        const VecK& k, int cout, int kd, int kh, int kw,
                                        const VecB& bias, int stride, int pad,
                                        int& dof, int& ho, int& wo) {
    dof = (d + 2 * pad - kd) / stride + 1;
    ho = (h + 2 * pad - kh) / stride + 1;
    wo = (w + 2 * pad - kw) / stride + 1;
    std::vector<double> out(static_cast<size_t>(cout) * dof * ho * wo, 0.0);
    for (int co = 0; co < cout; ++co)
        for (int oz = 0; oz < dof; ++oz)
            for (int oy = 0; oy < ho; ++oy)
                for (int ox = 0; ox < wo; ++ox) {
                    double s = bias[static_cast<size_t>(co)];
                    for (int ci = 0; ci < cin; ++ci)
                        for (int kz = 0; kz < kd; ++kz)
                            for (int ky = 0; ky < kh; ++ky)
                                for (int kx = 0; kx < kw; ++kx) {
                                    int iz = oz * stride + kz - pad;
                                    int iy = oy * stride + ky - pad;
                                    int ix = ox * stride + kx - pad;
                                    if (iz < 0 || iz >= d || iy < 0 || iy >= h || ix < 0 || ix >= w) continue;
                                    s += x[((static_cast<size_t>(ci) * d + iz) * h + iy) * w + ix] *
                                         k[(((static_cast<size_t>(co) * cin + ci) * kd + kz) * kh + ky) * kw + kx];
                                }
                    out[((static_cast<size_t>(co) * dof + oz) * ho + oy) * wo + ox] = s;
                }
    return out;
}

// Hash-map accumulate-then-divide scatter mean.
template <class Vec>
inline std::vector<double> scatter_mean_hashmap(const std::vector<int64_t>& idx,
                                                const Vec& feats, int64_t n, int d,
                                                int64_t cells) {
    std::unordered_map<int64_t, std::pair<std::vector<double>, int64_t>> acc;
    for (int64_t i = 0; i < n; ++i) {
        auto& slot = acc[idx[static_cast<size_t>(i)]];
        if (slot.first.empty()) slot.first.assign(static_cast<size_t>(d), 0.0);
        for (int c = 0; c < d; ++c) slot.first[static_cast<size_t>(c)] += feats[static_cast<size_t>(i * d + c)];
        slot.second += 1;
    }
    std::vector<double> out(static_cast<size_t>(cells * d), 0.0);
    for (auto& [cell, slot] : acc)
        for (int c = 0; c < d; ++c)
            out[static_cast<size_t>(cell * d + c)] = slot.first[static_cast<size_t>(c)] / static_cast<double>(slot.second);
    return out;
}

// Direct corner-weight interpolation formulas. Grid storage is
// channels-first [c][v][u] (planes) / [c][w][v][u] (volume), node i at
// i/(E-1), queries clamped to [0,1].
inline double bilinear_weights(const double* chan, int eu, int ev, double u, double v) {
    auto clamp01 = [](double t) { return t < 0 ? 0.0 : (t > 1 ? 1.0 : t); };
    double x = clamp01(u) * (eu - 1), y = clamp01(v) * (ev - 1);
    int i = std::min(static_cast<int>(std::floor(x)), eu - 2);
    int j = std::min(static_cast<int>(std::floor(y)), ev - 2);
    double tx = x - i, ty = y - j;
    return (1 - ty) * ((1 - tx) * chan[j * eu + i] + tx * chan[j * eu + i + 1]) +
           ty * ((1 - tx) * chan[(j + 1) * eu + i] + tx * chan[(j + 1) * eu + i + 1]);
}

inline double trilinear_weights(const double* chan, int eu, int ev, int ew, double u, double v, double w) {
    auto clamp01 = [](double t) { return t < 0 ? 0.0 : (t > 1 ? 1.0 : t); };
    double z = clamp01(w) * (ew - 1);
    int k = std::min(static_cast<int>(std::floor(z)), ew - 2);
    double tz = z - k;
    const double* s0 = chan + static_cast<size_t>(k) * ev * eu;
    const double* s1 = chan + static_cast<size_t>(k + 1) * ev * eu;
    return (1 - tz) * bilinear_weights(s0, eu, ev, u, v) + tz * bilinear_weights(s1, eu, ev, u, v);
}

inline double nearest_weights(const double* chan, int eu, int ev, double u, double v) {
    auto pick = [](double t, int e) {
        double x = (t < 0 ? 0.0 : (t > 1 ? 1.0 : t)) * (e - 1);
        int i = static_cast<int>(std::floor(x));
        if (x - i > 0.5) ++i;
        return std::min(std::max(i, 0), e - 1);
    };
    return chan[pick(v, ev) * eu + pick(u, eu)];
}

// Transcription of the published Adam recurrences.
struct AdamOracle {
    double lr, b1, b2, eps;
    std::vector<double> m, v;
    int64_t t = 0;
    explicit AdamOracle(size_t n, double lr_ = 1e-4, double b1_ = 0.9, double b2_ = 0.999, double eps_ = 1e-8)
        : lr(lr_), b1(b1_), b2(b2_), eps(eps_), m(n, 0.0), v(n, 0.0) {}
    void step(std::vector<double>& theta, const std::vector<double>& g) {
        t += 1;
        for (size_t i = 0; i < theta.size(); ++i) {
            m[i] = b1 * m[i] + (1 - b1) * g[i];
            v[i] = b2 * v[i] + (1 - b2) * g[i] * g[i];
            double mhat = m[i] / (1 - std::pow(b1, static_cast<double>(t)));
            double vhat = v[i] / (1 - std::pow(b2, static_cast<double>(t)));
            theta[i] -= lr * mhat / (std::sqrt(vhat) + eps);
        }
    }
};

// U-Net receptive-field recurrence: one down/up level with two 3-kernel
// convolutions covers 4 cells; every further level halves the working
// resolution and doubles coverage.
inline int receptive_field_of_depth(int depth) {
    int rf = 4;
    for (int i = 1; i < depth; ++i) rf *= 2;
    return rf;
}

// Central finite differences against an analytic gradient.
struct FdResult {
    double max_rel = 0.0;
    double frac_within_1e4 = 1.0;
    int64_t checked = 0;
};

inline double rel_err(double a, double b) {
    double scale = std::max(std::abs(a), std::abs(b));
    if (scale < 1e-6) scale = 1e-6;
    return std::abs(a - b) / scale;
}

// Perturbs x in place; f() must recompute the scalar loss from scratch.
template <class Vec>
inline FdResult finite_diff_check(convocc::Tensor x, const Vec& analytic,
                                  const std::function<double()>& f, double h = 1e-4) {
    FdResult r;
    int64_t ok = 0;
    for (int64_t i = 0; i < x.size(); ++i) {
        double saved = x.data()[i];
        x.data()[i] = saved + h;
        double fp = f();
        x.data()[i] = saved - h;
        double fm = f();
        x.data()[i] = saved;
        double fd = (fp - fm) / (2 * h);
        double e = rel_err(analytic[static_cast<size_t>(i)], fd);
        if (e > r.max_rel) r.max_rel = e;
        if (e < 1e-4) ++ok;
        ++r.checked;
    }
    r.frac_within_1e4 = r.checked ? static_cast<double>(ok) / static_cast<double>(r.checked) : 1.0;
    return r;
}

}  // namespace oracle
