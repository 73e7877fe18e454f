#pragma once

// Neural-network primitives with explicit forward and backward passes:
// 3x3x3 convolution (stride 1, zero pad 1), 2x2x2 max-pooling, 2x2x2
// stride-2 transposed convolution, fully connected layers, activations,
// channel concatenation, and the Adam optimizer with a linear learning-rate
// ramp. Everything is double precision and deterministic; parallel loops
// assign each output element to exactly one iteration.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <string>
#include <vector>

#include "cmar/core.hpp"

namespace cmar {

struct Tensor {
    std::vector<int> extents;
    std::vector<double> v;

    Tensor() = default;
    explicit Tensor(std::vector<int> ext) : extents(std::move(ext)) {
        size_t n = 1;
        for (int e : extents) n *= size_t(e);
        v.assign(n, 0.0);
    }
    size_t size() const { return v.size(); }
    bool same_shape(const Tensor& o) const { return extents == o.extents; }
};

// Dense 3D feature stack, channel-major then x-fastest:
// v[((c*nz + z)*ny + y)*nx + x].
struct FeatureMap {
    int channels = 0, nx = 0, ny = 0, nz = 0;
    std::vector<double> v;

    FeatureMap() = default;
    FeatureMap(int c, int nx_, int ny_, int nz_)
        : channels(c), nx(nx_), ny(ny_), nz(nz_), v(size_t(c) * nx_ * ny_ * nz_, 0.0) {}

    size_t voxels() const { return size_t(nx) * ny * nz; }
    size_t index(int c, int x, int y, int z) const {
        return ((size_t(c) * nz + z) * ny + y) * nx + x;
    }
    double& at(int c, int x, int y, int z) { return v[index(c, x, y, z)]; }
    double at(int c, int x, int y, int z) const { return v[index(c, x, y, z)]; }
    bool same_dims(const FeatureMap& o) const {
        return nx == o.nx && ny == o.ny && nz == o.nz;
    }
};

namespace nn {

// ---------------------------------------------------------------------------
// conv3d: 3x3x3 cross-correlation, stride 1, zero padding 1.
// Weights [out_ch, in_ch, 3, 3, 3], bias [out_ch].

inline void check_conv3d(const FeatureMap& input, const Tensor& w, const Tensor& b) {
    if (w.extents.size() != 5 || w.extents[2] != 3 || w.extents[3] != 3 || w.extents[4] != 3)
        throw ShapeError("conv3d: weights must be [out,in,3,3,3]");
    if (w.extents[1] != input.channels)
        throw ShapeError("conv3d: input has " + std::to_string(input.channels) +
                         " channels, weights expect " + std::to_string(w.extents[1]));
    if (b.extents.size() != 1 || b.extents[0] != w.extents[0])
        throw ShapeError("conv3d: bias must be [out]");
}

inline FeatureMap conv3d(const FeatureMap& input, const Tensor& w, const Tensor& b) {
    check_conv3d(input, w, b);
    const int oc_n = w.extents[0], ic_n = w.extents[1];
    const int nx = input.nx, ny = input.ny, nz = input.nz;
    FeatureMap out(oc_n, nx, ny, nz);

#ifdef _OPENMP
#pragma omp parallel for schedule(static) collapse(2)
#endif
    for (int oc = 0; oc < oc_n; ++oc) {
        for (int z = 0; z < nz; ++z) {
            for (int y = 0; y < ny; ++y) {
                double* acc = &out.at(oc, 0, y, z);
                for (int x = 0; x < nx; ++x) acc[x] = b.v[oc];
                for (int ic = 0; ic < ic_n; ++ic) {
                    for (int kz = 0; kz < 3; ++kz) {
                        const int zz = z + kz - 1;
                        if (zz < 0 || zz >= nz) continue;
                        for (int ky = 0; ky < 3; ++ky) {
                            const int yy = y + ky - 1;
                            if (yy < 0 || yy >= ny) continue;
                            const double* wrow = &w.v[(((size_t(oc) * ic_n + ic) * 3 + kz) * 3 + ky) * 3];
                            const double* in_row = &input.v[input.index(ic, 0, yy, zz)];
                            const double w0 = wrow[0], w1 = wrow[1], w2 = wrow[2];
                            acc[0] += w1 * in_row[0] + w2 * in_row[1];
                            for (int x = 1; x < nx - 1; ++x)
                                acc[x] += w0 * in_row[x - 1] + w1 * in_row[x] + w2 * in_row[x + 1];
                            acc[nx - 1] += w0 * in_row[nx - 2] + w1 * in_row[nx - 1];
                        }
                    }
                }
            }
        }
    }
    return out;
}

struct ConvGrads {
    FeatureMap d_input;
    Tensor d_w, d_b;
};

inline ConvGrads conv3d_backward(const FeatureMap& input, const Tensor& w,
                                 const FeatureMap& d_out) {
    check_conv3d(input, w, Tensor({w.extents[0]}));
    const int oc_n = w.extents[0], ic_n = w.extents[1];
    const int nx = input.nx, ny = input.ny, nz = input.nz;
    if (d_out.channels != oc_n || !d_out.same_dims(input))
        throw ShapeError("conv3d_backward: upstream gradient shape mismatch");

    ConvGrads g;
    g.d_input = FeatureMap(ic_n, nx, ny, nz);
    g.d_w = Tensor(w.extents);
    g.d_b = Tensor({oc_n});

    // d_input: correlation of d_out with the flipped kernel.
#ifdef _OPENMP
#pragma omp parallel for schedule(static) collapse(2)
#endif
    for (int ic = 0; ic < ic_n; ++ic) {
        for (int z = 0; z < nz; ++z) {
            for (int y = 0; y < ny; ++y) {
                double* acc = &g.d_input.at(ic, 0, y, z);
                for (int oc = 0; oc < oc_n; ++oc) {
                    for (int kz = 0; kz < 3; ++kz) {
                        const int zz = z - kz + 1;
                        if (zz < 0 || zz >= nz) continue;
                        for (int ky = 0; ky < 3; ++ky) {
                            const int yy = y - ky + 1;
                            if (yy < 0 || yy >= ny) continue;
                            const double* wrow = &w.v[(((size_t(oc) * ic_n + ic) * 3 + kz) * 3 + ky) * 3];
                            const double* d_row = &d_out.v[d_out.index(oc, 0, yy, zz)];
                            const double w0 = wrow[0], w1 = wrow[1], w2 = wrow[2];
                            acc[0] += w1 * d_row[0] + w0 * d_row[1];
                            for (int x = 1; x < nx - 1; ++x)
                                acc[x] += w2 * d_row[x - 1] + w1 * d_row[x] + w0 * d_row[x + 1];
                            acc[nx - 1] += w2 * d_row[nx - 2] + w1 * d_row[nx - 1];
                        }
                    }
                }
            }
        }
    }

    // d_w
#ifdef _OPENMP
#pragma omp parallel for schedule(static) collapse(2)
#endif
    for (int oc = 0; oc < oc_n; ++oc) {
        for (int ic = 0; ic < ic_n; ++ic) {
            double local[27] = {0.0};
            for (int z = 0; z < nz; ++z) {
                for (int y = 0; y < ny; ++y) {
                    const double* d_row = &d_out.v[d_out.index(oc, 0, y, z)];
                    for (int kz = 0; kz < 3; ++kz) {
                        const int zz = z + kz - 1;
                        if (zz < 0 || zz >= nz) continue;
                        for (int ky = 0; ky < 3; ++ky) {
                            const int yy = y + ky - 1;
                            if (yy < 0 || yy >= ny) continue;
                            const double* in_row = &input.v[input.index(ic, 0, yy, zz)];
                            double s0 = 0.0, s1 = 0.0, s2 = 0.0;
                            s1 += d_row[0] * in_row[0];
                            s2 += d_row[0] * in_row[1];
                            for (int x = 1; x < nx - 1; ++x) {
                                s0 += d_row[x] * in_row[x - 1];
                                s1 += d_row[x] * in_row[x];
                                s2 += d_row[x] * in_row[x + 1];
                            }
                            s0 += d_row[nx - 1] * in_row[nx - 2];
                            s1 += d_row[nx - 1] * in_row[nx - 1];
                            local[(kz * 3 + ky) * 3 + 0] += s0;
                            local[(kz * 3 + ky) * 3 + 1] += s1;
                            local[(kz * 3 + ky) * 3 + 2] += s2;
                        }
                    }
                }
            }
            double* dst = &g.d_w.v[(size_t(oc) * ic_n + ic) * 27];
            for (int k = 0; k < 27; ++k) dst[k] = local[k];
        }
    }

    // d_b
#ifdef _OPENMP
#pragma omp parallel for schedule(static)
#endif
    for (int oc = 0; oc < oc_n; ++oc) {
        double s = 0.0;
        const double* p = &d_out.v[size_t(oc) * d_out.voxels()];
        for (size_t i = 0; i < d_out.voxels(); ++i) s += p[i];
        g.d_b.v[oc] = s;
    }
    return g;
}

// ---------------------------------------------------------------------------
// maxpool3d: 2x2x2 window, stride 2. Ties go to the lowest linear index,
// which the backward pass routes gradients to.

struct PoolResult {
    FeatureMap out;
    std::vector<size_t> argmax; // input linear index per output element
};

inline PoolResult maxpool3d(const FeatureMap& input) {
    if (input.nx % 2 || input.ny % 2 || input.nz % 2)
        throw ShapeError("maxpool3d: spatial extents must be divisible by 2");
    const int nx = input.nx / 2, ny = input.ny / 2, nz = input.nz / 2;
    PoolResult r;
    r.out = FeatureMap(input.channels, nx, ny, nz);
    r.argmax.assign(r.out.v.size(), 0);

#ifdef _OPENMP
#pragma omp parallel for schedule(static) collapse(2)
#endif
    for (int c = 0; c < input.channels; ++c) {
        for (int z = 0; z < nz; ++z) {
            for (int y = 0; y < ny; ++y) {
                for (int x = 0; x < nx; ++x) {
                    double best = -std::numeric_limits<double>::infinity();
                    size_t best_idx = 0;
                    for (int dz = 0; dz < 2; ++dz)
                        for (int dy = 0; dy < 2; ++dy)
                            for (int dx = 0; dx < 2; ++dx) {
                                const size_t idx =
                                    input.index(c, 2 * x + dx, 2 * y + dy, 2 * z + dz);
                                if (input.v[idx] > best) {
                                    best = input.v[idx];
                                    best_idx = idx;
                                }
                            }
                    const size_t o = r.out.index(c, x, y, z);
                    r.out.v[o] = best;
                    r.argmax[o] = best_idx;
                }
            }
        }
    }
    return r;
}

inline FeatureMap maxpool3d_backward(const FeatureMap& d_out, const std::vector<size_t>& argmax,
                                     int in_nx, int in_ny, int in_nz) {
    if (argmax.size() != d_out.v.size())
        throw ShapeError("maxpool3d_backward: argmax/upstream size mismatch");
    FeatureMap d_in(d_out.channels, in_nx, in_ny, in_nz);
    // Pool windows are disjoint, so scatter targets never collide.
#ifdef _OPENMP
#pragma omp parallel for schedule(static)
#endif
    for (long long i = 0; i < (long long)d_out.v.size(); ++i)
        d_in.v[argmax[size_t(i)]] = d_out.v[size_t(i)];
    return d_in;
}

// ---------------------------------------------------------------------------
// tconv3d: 2x2x2 transposed convolution, stride 2 (exact x2 upsampling).
// Weights [in_ch, out_ch, 2, 2, 2], bias [out_ch]. Each output voxel takes
// exactly one tap from input cell (X>>1, Y>>1, Z>>1).

inline void check_tconv3d(const FeatureMap& input, const Tensor& w, const Tensor& b) {
    if (w.extents.size() != 5 || w.extents[2] != 2 || w.extents[3] != 2 || w.extents[4] != 2)
        throw ShapeError("tconv3d: weights must be [in,out,2,2,2]");
    if (w.extents[0] != input.channels)
        throw ShapeError("tconv3d: input has " + std::to_string(input.channels) +
                         " channels, weights expect " + std::to_string(w.extents[0]));
    if (b.extents.size() != 1 || b.extents[0] != w.extents[1])
        throw ShapeError("tconv3d: bias must be [out]");
}

inline size_t tconv_w_index(int ic, int oc_n, int oc, int kx, int ky, int kz) {
    return (((size_t(ic) * oc_n + oc) * 2 + kz) * 2 + ky) * 2 + kx;
}

inline FeatureMap tconv3d(const FeatureMap& input, const Tensor& w, const Tensor& b) {
    check_tconv3d(input, w, b);
    const int ic_n = w.extents[0], oc_n = w.extents[1];
    FeatureMap out(oc_n, 2 * input.nx, 2 * input.ny, 2 * input.nz);

#ifdef _OPENMP
#pragma omp parallel for schedule(static) collapse(2)
#endif
    for (int oc = 0; oc < oc_n; ++oc) {
        for (int Z = 0; Z < out.nz; ++Z) {
            const int z = Z >> 1, kz = Z & 1;
            for (int Y = 0; Y < out.ny; ++Y) {
                const int y = Y >> 1, ky = Y & 1;
                double* orow = &out.at(oc, 0, Y, Z);
                for (int X = 0; X < out.nx; ++X) {
                    const int x = X >> 1, kx = X & 1;
                    double acc = b.v[oc];
                    for (int ic = 0; ic < ic_n; ++ic)
                        acc += input.at(ic, x, y, z) * w.v[tconv_w_index(ic, oc_n, oc, kx, ky, kz)];
                    orow[X] = acc;
                }
            }
        }
    }
    return out;
}

inline ConvGrads tconv3d_backward(const FeatureMap& input, const Tensor& w,
                                  const FeatureMap& d_out) {
    check_tconv3d(input, w, Tensor({w.extents[1]}));
    const int ic_n = w.extents[0], oc_n = w.extents[1];
    if (d_out.channels != oc_n || d_out.nx != 2 * input.nx || d_out.ny != 2 * input.ny ||
        d_out.nz != 2 * input.nz)
        throw ShapeError("tconv3d_backward: upstream gradient shape mismatch");

    ConvGrads g;
    g.d_input = FeatureMap(ic_n, input.nx, input.ny, input.nz);
    g.d_w = Tensor(w.extents);
    g.d_b = Tensor({oc_n});

#ifdef _OPENMP
#pragma omp parallel for schedule(static) collapse(2)
#endif
    for (int ic = 0; ic < ic_n; ++ic) {
        for (int z = 0; z < input.nz; ++z) {
            for (int y = 0; y < input.ny; ++y) {
                for (int x = 0; x < input.nx; ++x) {
                    double acc = 0.0;
                    for (int oc = 0; oc < oc_n; ++oc)
                        for (int kz = 0; kz < 2; ++kz)
                            for (int ky = 0; ky < 2; ++ky)
                                for (int kx = 0; kx < 2; ++kx)
                                    acc += d_out.at(oc, 2 * x + kx, 2 * y + ky, 2 * z + kz) *
                                           w.v[tconv_w_index(ic, oc_n, oc, kx, ky, kz)];
                    g.d_input.at(ic, x, y, z) = acc;
                }
            }
        }
    }

#ifdef _OPENMP
#pragma omp parallel for schedule(static) collapse(2)
#endif
    for (int ic = 0; ic < ic_n; ++ic) {
        for (int oc = 0; oc < oc_n; ++oc) {
            double local[8] = {0.0};
            for (int z = 0; z < input.nz; ++z)
                for (int y = 0; y < input.ny; ++y)
                    for (int x = 0; x < input.nx; ++x) {
                        const double in_v = input.at(ic, x, y, z);
                        for (int kz = 0; kz < 2; ++kz)
                            for (int ky = 0; ky < 2; ++ky)
                                for (int kx = 0; kx < 2; ++kx)
                                    local[(kz * 2 + ky) * 2 + kx] +=
                                        in_v * d_out.at(oc, 2 * x + kx, 2 * y + ky, 2 * z + kz);
                    }
            for (int kz = 0; kz < 2; ++kz)
                for (int ky = 0; ky < 2; ++ky)
                    for (int kx = 0; kx < 2; ++kx)
                        g.d_w.v[tconv_w_index(ic, oc_n, oc, kx, ky, kz)] =
                            local[(kz * 2 + ky) * 2 + kx];
        }
    }

#ifdef _OPENMP
#pragma omp parallel for schedule(static)
#endif
    for (int oc = 0; oc < oc_n; ++oc) {
        double s = 0.0;
        const double* p = &d_out.v[size_t(oc) * d_out.voxels()];
        for (size_t i = 0; i < d_out.voxels(); ++i) s += p[i];
        g.d_b.v[oc] = s;
    }
    return g;
}

// ---------------------------------------------------------------------------
// fully connected: y = W x + b, weights [out, in].

inline void check_fc(size_t in_len, const Tensor& w, const Tensor& b) {
    if (w.extents.size() != 2) throw ShapeError("fully_connected: weights must be [out,in]");
    if (size_t(w.extents[1]) != in_len)
        throw ShapeError("fully_connected: input length " + std::to_string(in_len) +
                         " does not match weights [" + std::to_string(w.extents[0]) + "," +
                         std::to_string(w.extents[1]) + "]");
    if (b.extents.size() != 1 || b.extents[0] != w.extents[0])
        throw ShapeError("fully_connected: bias must be [out]");
}

inline std::vector<double> fully_connected(const std::vector<double>& x, const Tensor& w,
                                           const Tensor& b) {
    check_fc(x.size(), w, b);
    const int out_n = w.extents[0], in_n = w.extents[1];
    std::vector<double> y(out_n);
#ifdef _OPENMP
#pragma omp parallel for schedule(static)
#endif
    for (int o = 0; o < out_n; ++o) {
        double acc = b.v[o];
        const double* row = &w.v[size_t(o) * in_n];
        for (int i = 0; i < in_n; ++i) acc += row[i] * x[i];
        y[o] = acc;
    }
    return y;
}

struct FcGrads {
    std::vector<double> d_x;
    Tensor d_w, d_b;
};

inline FcGrads fully_connected_backward(const std::vector<double>& x, const Tensor& w,
                                        const std::vector<double>& d_y) {
    check_fc(x.size(), w, Tensor({w.extents[0]}));
    const int out_n = w.extents[0], in_n = w.extents[1];
    if (d_y.size() != size_t(out_n))
        throw ShapeError("fully_connected_backward: upstream length mismatch");
    FcGrads g;
    g.d_x.assign(in_n, 0.0);
    g.d_w = Tensor(w.extents);
    g.d_b = Tensor({out_n});
#ifdef _OPENMP
#pragma omp parallel for schedule(static)
#endif
    for (int i = 0; i < in_n; ++i) {
        double acc = 0.0;
        for (int o = 0; o < out_n; ++o) acc += w.v[size_t(o) * in_n + i] * d_y[o];
        g.d_x[i] = acc;
    }
#ifdef _OPENMP
#pragma omp parallel for schedule(static)
#endif
    for (int o = 0; o < out_n; ++o) {
        const double d = d_y[o];
        double* row = &g.d_w.v[size_t(o) * in_n];
        for (int i = 0; i < in_n; ++i) row[i] = d * x[i];
        g.d_b.v[o] = d;
    }
    return g;
}

// ---------------------------------------------------------------------------
// Activations. The derivative at exactly 0 is the positive-side value (1).

inline void leaky_relu_inplace(std::vector<double>& v, double slope) {
    for (double& x : v) x = x >= 0.0 ? x : slope * x;
}

inline std::vector<double> leaky_relu(std::vector<double> v, double slope) {
    leaky_relu_inplace(v, slope);
    return v;
}

inline std::vector<double> relu(std::vector<double> v) {
    for (double& x : v) x = x >= 0.0 ? x : 0.0;
    return v;
}

// d/dx given the pre-activation input.
inline std::vector<double> leaky_relu_backward(const std::vector<double>& pre_act,
                                               const std::vector<double>& d_out, double slope) {
    if (pre_act.size() != d_out.size())
        throw ShapeError("leaky_relu_backward: size mismatch");
    std::vector<double> d(pre_act.size());
    for (size_t i = 0; i < d.size(); ++i) d[i] = pre_act[i] >= 0.0 ? d_out[i] : slope * d_out[i];
    return d;
}

inline std::vector<double> relu_backward(const std::vector<double>& pre_act,
                                         const std::vector<double>& d_out) {
    return leaky_relu_backward(pre_act, d_out, 0.0);
}

// ---------------------------------------------------------------------------
// Channel concatenation (a first), with the matching gradient split.

inline FeatureMap concat_channels(const FeatureMap& a, const FeatureMap& b) {
    if (!a.same_dims(b)) throw ShapeError("concat_channels: spatial dims mismatch");
    FeatureMap out(a.channels + b.channels, a.nx, a.ny, a.nz);
    std::copy(a.v.begin(), a.v.end(), out.v.begin());
    std::copy(b.v.begin(), b.v.end(), out.v.begin() + a.v.size());
    return out;
}

inline void split_channels_grad(const FeatureMap& d_out, int a_channels, FeatureMap& d_a,
                                FeatureMap& d_b) {
    if (a_channels < 0 || a_channels > d_out.channels)
        throw ShapeError("split_channels_grad: bad channel split");
    d_a = FeatureMap(a_channels, d_out.nx, d_out.ny, d_out.nz);
    d_b = FeatureMap(d_out.channels - a_channels, d_out.nx, d_out.ny, d_out.nz);
    std::copy(d_out.v.begin(), d_out.v.begin() + d_a.v.size(), d_a.v.begin());
    std::copy(d_out.v.begin() + d_a.v.size(), d_out.v.end(), d_b.v.begin());
}

// ---------------------------------------------------------------------------
// Adam with bias correction; eps sits outside the square root.

struct AdamState {
    double beta1 = 0.5, beta2 = 0.9, eps = 1e-8;
    int64_t t = 0;
    std::vector<Tensor> m, v; // mirror the parameter list
};

inline void adam_init(AdamState& state, const std::vector<Tensor>& params) {
    state.t = 0;
    state.m.clear();
    state.v.clear();
    for (const auto& p : params) {
        state.m.emplace_back(p.extents);
        state.v.emplace_back(p.extents);
    }
}

// One optimizer step over a parameter list. `names` is used for fault
// reporting only; the step counter increments once per call.
inline void adam_step(std::vector<Tensor*>& params, const std::vector<const Tensor*>& grads,
                      const std::vector<std::string>& names, AdamState& state, double lr) {
    if (params.size() != grads.size() || params.size() != state.m.size())
        throw ShapeError("adam_step: parameter/gradient/state count mismatch");
    state.t += 1;
    const double bc1 = 1.0 - std::pow(state.beta1, double(state.t));
    const double bc2 = 1.0 - std::pow(state.beta2, double(state.t));
    for (size_t pi = 0; pi < params.size(); ++pi) {
        Tensor& p = *params[pi];
        const Tensor& g = *grads[pi];
        if (!p.same_shape(g) || !p.same_shape(state.m[pi]))
            throw ShapeError("adam_step: shape mismatch for " + names[pi]);
        for (double gv : g.v)
            if (!std::isfinite(gv))
                throw TrainingFault("adam_step: non-finite gradient for parameter " + names[pi]);
        Tensor& m = state.m[pi];
        Tensor& v = state.v[pi];
        for (size_t i = 0; i < p.v.size(); ++i) {
            m.v[i] = state.beta1 * m.v[i] + (1.0 - state.beta1) * g.v[i];
            v.v[i] = state.beta2 * v.v[i] + (1.0 - state.beta2) * g.v[i] * g.v[i];
            const double m_hat = m.v[i] / bc1;
            const double v_hat = v.v[i] / bc2;
            p.v[i] -= lr * m_hat / (std::sqrt(v_hat) + state.eps);
        }
    }
}

// Linear ramp from lr_start to lr_end across total_steps.
inline double lr_schedule(int64_t step, int64_t total_steps, double lr_start = 1e-4,
                          double lr_end = 5e-5) {
    if (step < 0 || step > total_steps) throw ConfigError("lr_schedule: step out of range");
    if (total_steps <= 0) return lr_start;
    return lr_start + (lr_end - lr_start) * double(step) / double(total_steps);
}

// Fan-in scaled uniform init in +-sqrt(6/fan_in).
inline void init_uniform(Tensor& t, int fan_in, Rng& rng) {
    const double bound = std::sqrt(6.0 / double(fan_in));
    for (double& x : t.v) x = rng.uniform(-bound, bound);
}

} // namespace nn
} // namespace cmar
