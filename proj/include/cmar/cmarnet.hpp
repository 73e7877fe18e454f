#pragma once

// CMAR-Net: a volumetric encoder/decoder that maps a degraded radar volume
// to a clean density volume.
//
//   contraction path : num_stages x (3x3x3 conv + LeakyReLU + 2x2x2 maxpool),
//                      channels C, 2C, 4C, ... per stage
//   bottleneck       : projection/reprojection unit -- FC+LeakyReLU to a
//                      hidden width, FC to the latent vector, then the
//                      symmetric expansion with a final FC+ReLU; optionally
//                      replaced by an identity pass-through
//   expansion path   : per stage, 2x2x2 stride-2 transposed conv + ReLU,
//                      channel concat with the same-resolution skip, then a
//                      3x3x3 conv + LeakyReLU
//   output           : 3x3x3 conv to one channel + ReLU (densities >= 0)
//
// Forward, analytic end-to-end backward, latent encoding, feature-space
// interpolation, one Adam training step, and the ".cmn" model format.

#include <array>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <map>
#include <memory>
#include <string>
#include <vector>

#include "cmar/core.hpp"
#include "cmar/image2d.hpp"
#include "cmar/layers.hpp"
#include "cmar/loss_metrics.hpp"
#include "cmar/renderer.hpp"
#include "cmar/voxel.hpp"

namespace cmar {

struct NetConfig {
    int nx = 32, ny = 32, nz = 64; // input dims
    int base_channels = 8;         // C
    int latent_dim = 0;            // 0 = bottleneck_flat / 16
    int prp_hidden = 0;            // 0 = bottleneck_flat / 4
    int num_stages = 4;
    bool prp_enabled = true;
    double opacity_gain = 5.0; // density scale applied before rendering, per meter
    double leaky_slope = 0.2;
};

struct ParameterSet {
    NetConfig config;
    std::vector<std::string> names;
    std::vector<Tensor> tensors;

    Tensor& find(const std::string& name) {
        for (size_t i = 0; i < names.size(); ++i)
            if (names[i] == name) return tensors[i];
        throw ShapeError("parameter not found: " + name);
    }
    const Tensor& find(const std::string& name) const {
        return const_cast<ParameterSet*>(this)->find(name);
    }
};

namespace net {

inline int stage_channels(const NetConfig& c, int stage) {
    return c.base_channels << (stage - 1); // stage 1..S
}

inline int bottleneck_flat(const NetConfig& c) {
    const long long cells = (long long)(c.nx >> c.num_stages) * (c.ny >> c.num_stages) *
                            (c.nz >> c.num_stages);
    return int(cells * stage_channels(c, c.num_stages));
}

inline NetConfig resolve(NetConfig c) {
    if (c.base_channels < 1) throw ConfigError("net: base_channels must be >= 1");
    if (c.num_stages < 1) throw ConfigError("net: num_stages must be >= 1");
    const int div = 1 << c.num_stages;
    if (c.nx % div || c.ny % div || c.nz % div || c.nx < div || c.ny < div || c.nz < div)
        throw ConfigError("net: input extents must be divisible by " + std::to_string(div) +
                          " (" + std::to_string(c.num_stages) + " pooling stages)");
    const int flat = bottleneck_flat(c);
    if (c.latent_dim == 0) c.latent_dim = std::max(1, flat / 16);
    if (c.prp_hidden == 0) c.prp_hidden = std::max(1, flat / 4);
    if (c.latent_dim < 1) throw ConfigError("net: latent_dim must be >= 1");
    if (c.prp_hidden < 1) throw ConfigError("net: prp_hidden must be >= 1");
    if (!(c.opacity_gain > 0.0)) throw ConfigError("net: opacity_gain must be positive");
    return c;
}

// Fixed parameter list (name, extents) for a resolved config.
inline std::vector<std::pair<std::string, std::vector<int>>> parameter_shapes(
    const NetConfig& c) {
    std::vector<std::pair<std::string, std::vector<int>>> shapes;
    const int S = c.num_stages;
    for (int k = 1; k <= S; ++k) {
        const int in_ch = (k == 1) ? 1 : stage_channels(c, k - 1);
        const int out_ch = stage_channels(c, k);
        const std::string p = "enc" + std::to_string(k) + ".conv.";
        shapes.push_back({p + "w", {out_ch, in_ch, 3, 3, 3}});
        shapes.push_back({p + "b", {out_ch}});
    }
    if (c.prp_enabled) {
        const int flat = bottleneck_flat(c);
        shapes.push_back({"prp.fc1.w", {c.prp_hidden, flat}});
        shapes.push_back({"prp.fc1.b", {c.prp_hidden}});
        shapes.push_back({"prp.fc2.w", {c.latent_dim, c.prp_hidden}});
        shapes.push_back({"prp.fc2.b", {c.latent_dim}});
        shapes.push_back({"prp.fc3.w", {c.prp_hidden, c.latent_dim}});
        shapes.push_back({"prp.fc3.b", {c.prp_hidden}});
        shapes.push_back({"prp.fc4.w", {flat, c.prp_hidden}});
        shapes.push_back({"prp.fc4.b", {flat}});
    }
    for (int k = S; k >= 1; --k) {
        const int in_ch = (k == S) ? stage_channels(c, S) : stage_channels(c, k + 1);
        const int out_ch = stage_channels(c, k);
        const std::string p = "dec" + std::to_string(k) + ".";
        shapes.push_back({p + "tconv.w", {in_ch, out_ch, 2, 2, 2}});
        shapes.push_back({p + "tconv.b", {out_ch}});
        shapes.push_back({p + "conv.w", {out_ch, 2 * out_ch, 3, 3, 3}});
        shapes.push_back({p + "conv.b", {out_ch}});
    }
    shapes.push_back({"out.conv.w", {1, c.base_channels, 3, 3, 3}});
    shapes.push_back({"out.conv.b", {1}});
    return shapes;
}

// Seeded parameter construction: fan-in scaled uniform weights, zero biases.
inline ParameterSet build(const NetConfig& config, uint64_t seed) {
    ParameterSet params;
    params.config = resolve(config);
    Rng rng(derive_seed(seed, 0x696e6974ULL)); // "init"
    for (const auto& [name, extents] : parameter_shapes(params.config)) {
        Tensor t(extents);
        const bool is_weight = name.size() >= 2 && name.compare(name.size() - 2, 2, ".w") == 0;
        if (is_weight) {
            int fan_in = 1;
            if (extents.size() == 5 && extents[2] == 3) {
                fan_in = extents[1] * 27; // conv [out,in,3,3,3]
            } else if (extents.size() == 5) {
                fan_in = extents[0] * 8; // tconv [in,out,2,2,2]
            } else {
                fan_in = extents[1]; // fc [out,in]
            }
            nn::init_uniform(t, fan_in, rng);
        }
        params.names.push_back(name);
        params.tensors.push_back(std::move(t));
    }
    return params;
}

// ---------------------------------------------------------------------------
// Forward pass with full caches for the backward pass.

struct EncodeResult {
    std::vector<FeatureMap> xs;    // xs[0] = input, xs[k] = pooled output of stage k
    std::vector<FeatureMap> pre;   // conv pre-activations per stage (1-based: pre[k-1])
    std::vector<FeatureMap> skips; // post-activation, pre-pool
    std::vector<std::vector<size_t>> argmax;
    std::vector<double> fc1_pre, fc1_act;
    std::vector<double> latent; // z when the PRP unit is enabled, else the flat bottleneck
    double spacing = 1.0;
    std::array<double, 3> origin{0, 0, 0};
};

struct DecodeCache {
    std::vector<double> fc3_pre, fc3_act, fc4_pre;
    FeatureMap prp_out;
    // Decoder stages stored in execution order: index i corresponds to stage S-i.
    std::vector<FeatureMap> t_in, t_pre, t_act, cat, c_pre, c_act;
    FeatureMap out_pre;
};

inline void check_input(const ParameterSet& params, const VoxelGrid& volume) {
    const NetConfig& c = params.config;
    if (volume.nx != c.nx || volume.ny != c.ny || volume.nz != c.nz)
        throw ShapeError("net: input volume is " + std::to_string(volume.nx) + "x" +
                         std::to_string(volume.ny) + "x" + std::to_string(volume.nz) +
                         ", config expects " + std::to_string(c.nx) + "x" + std::to_string(c.ny) +
                         "x" + std::to_string(c.nz));
    for (double v : volume.values)
        if (!(v >= 0.0 && v <= 1.0))
            throw InvalidDataError("net: input values must lie in [0,1]");
}

inline EncodeResult encode_impl(const ParameterSet& params, const VoxelGrid& volume) {
    check_input(params, volume);
    const NetConfig& c = params.config;
    const int S = c.num_stages;

    EncodeResult e;
    e.spacing = volume.spacing;
    e.origin = volume.origin;
    FeatureMap x(1, c.nx, c.ny, c.nz);
    x.v = volume.values;
    e.xs.push_back(x);

    for (int k = 1; k <= S; ++k) {
        const std::string p = "enc" + std::to_string(k) + ".conv.";
        FeatureMap pre = nn::conv3d(e.xs.back(), params.find(p + "w"), params.find(p + "b"));
        FeatureMap act = pre;
        nn::leaky_relu_inplace(act.v, c.leaky_slope);
        auto pooled = nn::maxpool3d(act);
        e.pre.push_back(std::move(pre));
        e.skips.push_back(std::move(act));
        e.argmax.push_back(std::move(pooled.argmax));
        e.xs.push_back(std::move(pooled.out));
    }

    if (c.prp_enabled) {
        const FeatureMap& bottleneck = e.xs.back();
        e.fc1_pre = nn::fully_connected(bottleneck.v, params.find("prp.fc1.w"),
                                        params.find("prp.fc1.b"));
        e.fc1_act = nn::leaky_relu(e.fc1_pre, c.leaky_slope);
        e.latent = nn::fully_connected(e.fc1_act, params.find("prp.fc2.w"),
                                       params.find("prp.fc2.b"));
    } else {
        e.latent = e.xs.back().v;
    }
    return e;
}

// Decodes a latent + skip stack to a 1-channel density map. When `cache` is
// non-null every intermediate needed by the backward pass is recorded; the
// arithmetic is identical either way.
inline FeatureMap decode_impl(const ParameterSet& params, const std::vector<double>& latent,
                              const std::vector<FeatureMap>& skips, DecodeCache* cache) {
    const NetConfig& c = params.config;
    const int S = c.num_stages;
    const int bx = c.nx >> S, by = c.ny >> S, bz = c.nz >> S;

    FeatureMap y(stage_channels(c, S), bx, by, bz);
    if (c.prp_enabled) {
        std::vector<double> fc3_pre =
            nn::fully_connected(latent, params.find("prp.fc3.w"), params.find("prp.fc3.b"));
        std::vector<double> fc3_act = nn::leaky_relu(fc3_pre, c.leaky_slope);
        std::vector<double> fc4_pre =
            nn::fully_connected(fc3_act, params.find("prp.fc4.w"), params.find("prp.fc4.b"));
        y.v = nn::relu(fc4_pre);
        if (cache) {
            cache->fc3_pre = std::move(fc3_pre);
            cache->fc3_act = std::move(fc3_act);
            cache->fc4_pre = std::move(fc4_pre);
        }
    } else {
        if (latent.size() != y.v.size())
            throw ShapeError("decode: latent length does not match the bottleneck");
        y.v = latent;
    }
    if (cache) cache->prp_out = y;

    for (int k = S; k >= 1; --k) {
        const std::string p = "dec" + std::to_string(k) + ".";
        if (cache) cache->t_in.push_back(y);
        FeatureMap t_pre = nn::tconv3d(y, params.find(p + "tconv.w"), params.find(p + "tconv.b"));
        FeatureMap t_act = t_pre;
        t_act.v = nn::relu(t_act.v);
        const FeatureMap& skip = skips[size_t(k) - 1];
        FeatureMap cat = nn::concat_channels(t_act, skip);
        FeatureMap c_pre = nn::conv3d(cat, params.find(p + "conv.w"), params.find(p + "conv.b"));
        FeatureMap c_act = c_pre;
        nn::leaky_relu_inplace(c_act.v, c.leaky_slope);
        if (cache) {
            cache->t_pre.push_back(std::move(t_pre));
            cache->t_act.push_back(std::move(t_act));
            cache->cat.push_back(std::move(cat));
            cache->c_pre.push_back(std::move(c_pre));
            cache->c_act.push_back(c_act);
        }
        y = std::move(c_act);
    }

    FeatureMap out_pre = nn::conv3d(y, params.find("out.conv.w"), params.find("out.conv.b"));
    FeatureMap out = out_pre;
    out.v = nn::relu(out.v);
    if (cache) cache->out_pre = std::move(out_pre);
    return out;
}

struct ForwardResult {
    VoxelGrid density;
    EncodeResult enc;
    DecodeCache dec;
};

inline VoxelGrid to_grid(const FeatureMap& map, double spacing,
                         const std::array<double, 3>& origin) {
    VoxelGrid g(map.nx, map.ny, map.nz, spacing, origin);
    g.values = map.v;
    return g;
}

inline ForwardResult forward(const ParameterSet& params, const VoxelGrid& volume) {
    ForwardResult r;
    r.enc = encode_impl(params, volume);
    const FeatureMap out = decode_impl(params, r.enc.latent, r.enc.skips, &r.dec);
    r.density = to_grid(out, volume.spacing, volume.origin);
    return r;
}

// Contraction + projection half only.
struct Encoding {
    std::vector<double> latent;
    std::vector<FeatureMap> skips;
    double spacing = 1.0;
    std::array<double, 3> origin{0, 0, 0};
};

inline Encoding encode(const ParameterSet& params, const VoxelGrid& volume) {
    EncodeResult e = encode_impl(params, volume);
    Encoding enc;
    enc.latent = std::move(e.latent);
    enc.skips = std::move(e.skips);
    enc.spacing = e.spacing;
    enc.origin = e.origin;
    return enc;
}

inline VoxelGrid decode(const ParameterSet& params, const Encoding& enc) {
    const FeatureMap out = decode_impl(params, enc.latent, enc.skips, nullptr);
    return to_grid(out, enc.spacing, enc.origin);
}

// Linear blend of two encodings (latent and skip maps alike), decoded to a
// density volume.
inline VoxelGrid interpolate(const ParameterSet& params, const VoxelGrid& vol_a,
                             const VoxelGrid& vol_b, double alpha) {
    if (!(alpha >= 0.0 && alpha <= 1.0))
        throw ConfigError("interpolate: alpha must lie in [0,1]");
    const Encoding ea = encode(params, vol_a);
    const Encoding eb = encode(params, vol_b);
    Encoding mix = ea;
    for (size_t i = 0; i < mix.latent.size(); ++i)
        mix.latent[i] = (1.0 - alpha) * ea.latent[i] + alpha * eb.latent[i];
    for (size_t s = 0; s < mix.skips.size(); ++s)
        for (size_t i = 0; i < mix.skips[s].v.size(); ++i)
            mix.skips[s].v[i] = (1.0 - alpha) * ea.skips[s].v[i] + alpha * eb.skips[s].v[i];
    return decode(params, mix);
}

// ---------------------------------------------------------------------------
// End-to-end backward: gradient of the loss with respect to every parameter,
// given dL/d(density map). Returns tensors in parameter order.

inline std::vector<Tensor> backward(const ParameterSet& params, const EncodeResult& enc,
                                    const DecodeCache& dec, const FeatureMap& d_density) {
    const NetConfig& c = params.config;
    const int S = c.num_stages;

    std::map<std::string, Tensor> grads;

    // output conv
    std::vector<double> d_out_pre = nn::relu_backward(dec.out_pre.v, d_density.v);
    FeatureMap d_out_map = dec.out_pre;
    d_out_map.v = std::move(d_out_pre);
    {
        auto g = nn::conv3d_backward(dec.c_act.back(), params.find("out.conv.w"), d_out_map);
        grads["out.conv.w"] = std::move(g.d_w);
        grads["out.conv.b"] = std::move(g.d_b);
        d_out_map = std::move(g.d_input);
    }

    // decoder stages in reverse execution order (stage 1 up to stage S);
    // cache index for stage k is S - k.
    std::vector<FeatureMap> d_skips(S);
    FeatureMap d_y = std::move(d_out_map); // gradient wrt c_act of stage 1
    for (int k = 1; k <= S; ++k) {
        const size_t ci = size_t(S - k);
        const std::string p = "dec" + std::to_string(k) + ".";
        FeatureMap d_c_pre = dec.c_pre[ci];
        d_c_pre.v = nn::leaky_relu_backward(dec.c_pre[ci].v, d_y.v, c.leaky_slope);
        auto gc = nn::conv3d_backward(dec.cat[ci], params.find(p + "conv.w"), d_c_pre);
        grads[p + "conv.w"] = std::move(gc.d_w);
        grads[p + "conv.b"] = std::move(gc.d_b);

        FeatureMap d_t_act, d_skip;
        nn::split_channels_grad(gc.d_input, dec.t_act[ci].channels, d_t_act, d_skip);
        d_skips[size_t(k) - 1] = std::move(d_skip);

        FeatureMap d_t_pre = dec.t_pre[ci];
        d_t_pre.v = nn::relu_backward(dec.t_pre[ci].v, d_t_act.v);
        auto gt = nn::tconv3d_backward(dec.t_in[ci], params.find(p + "tconv.w"), d_t_pre);
        grads[p + "tconv.w"] = std::move(gt.d_w);
        grads[p + "tconv.b"] = std::move(gt.d_b);
        d_y = std::move(gt.d_input); // for k<S: wrt c_act of stage k+1; for k=S: wrt prp_out
    }

    // bottleneck gradient
    FeatureMap d_bottleneck;
    if (c.prp_enabled) {
        std::vector<double> d_fc4_pre = nn::relu_backward(dec.fc4_pre, d_y.v);
        auto g4 = nn::fully_connected_backward(dec.fc3_act, params.find("prp.fc4.w"), d_fc4_pre);
        grads["prp.fc4.w"] = std::move(g4.d_w);
        grads["prp.fc4.b"] = std::move(g4.d_b);
        std::vector<double> d_fc3_pre =
            nn::leaky_relu_backward(dec.fc3_pre, g4.d_x, c.leaky_slope);
        auto g3 = nn::fully_connected_backward(enc.latent, params.find("prp.fc3.w"), d_fc3_pre);
        grads["prp.fc3.w"] = std::move(g3.d_w);
        grads["prp.fc3.b"] = std::move(g3.d_b);
        auto g2 = nn::fully_connected_backward(enc.fc1_act, params.find("prp.fc2.w"), g3.d_x);
        grads["prp.fc2.w"] = std::move(g2.d_w);
        grads["prp.fc2.b"] = std::move(g2.d_b);
        std::vector<double> d_fc1_pre =
            nn::leaky_relu_backward(enc.fc1_pre, g2.d_x, c.leaky_slope);
        auto g1 =
            nn::fully_connected_backward(enc.xs.back().v, params.find("prp.fc1.w"), d_fc1_pre);
        grads["prp.fc1.w"] = std::move(g1.d_w);
        grads["prp.fc1.b"] = std::move(g1.d_b);
        d_bottleneck = enc.xs.back();
        d_bottleneck.v = std::move(g1.d_x);
    } else {
        d_bottleneck = enc.xs.back();
        d_bottleneck.v = d_y.v;
    }

    // encoder stages, deepest first; skip gradients from the decoder join here
    FeatureMap d_x = std::move(d_bottleneck);
    for (int k = S; k >= 1; --k) {
        const std::string p = "enc" + std::to_string(k) + ".conv.";
        const FeatureMap& skip = enc.skips[size_t(k) - 1];
        FeatureMap d_act =
            nn::maxpool3d_backward(d_x, enc.argmax[size_t(k) - 1], skip.nx, skip.ny, skip.nz);
        for (size_t i = 0; i < d_act.v.size(); ++i) d_act.v[i] += d_skips[size_t(k) - 1].v[i];
        FeatureMap d_pre = d_act;
        d_pre.v = nn::leaky_relu_backward(enc.pre[size_t(k) - 1].v, d_act.v, c.leaky_slope);
        auto g = nn::conv3d_backward(enc.xs[size_t(k) - 1], params.find(p + "w"), d_pre);
        grads[p + "w"] = std::move(g.d_w);
        grads[p + "b"] = std::move(g.d_b);
        d_x = std::move(g.d_input);
    }

    std::vector<Tensor> ordered;
    ordered.reserve(params.names.size());
    for (const auto& name : params.names) {
        auto it = grads.find(name);
        if (it == grads.end()) throw ShapeError("backward: missing gradient for " + name);
        ordered.push_back(std::move(it->second));
    }
    return ordered;
}

// ---------------------------------------------------------------------------
// Supervised loss: forward, render every view, mean Huber against the masks;
// the gradient flows back through the renderer and the whole network.

struct LossAndGrads {
    double loss = 0.0;
    std::vector<Tensor> grads; // parameter order
};

inline LossAndGrads loss_and_gradients(const ParameterSet& params, const VoxelGrid& sar,
                                       const std::vector<Image>& gt_masks, const ViewSet& views,
                                       double gamma, int n_samples) {
    if (!(gamma > 0.0)) throw ConfigError("train_step: gamma must be positive");
    if (gt_masks.size() != views.size() || views.size() == 0)
        throw ConfigError("train_step: need one mask per view");

    ForwardResult fwd = forward(params, sar);
    VoxelGrid sigma = fwd.density;
    for (double& v : sigma.values) v *= params.config.opacity_gain;

    const double inv_views = 1.0 / double(views.size());
    LossAndGrads out;
    VoxelGrid d_sigma(sigma.nx, sigma.ny, sigma.nz, sigma.spacing, sigma.origin);
    for (size_t v = 0; v < views.size(); ++v) {
        const Camera& cam = views.cameras[v];
        ViewPair pair;
        pair.gt = gt_masks[v];
        pair.rendered = render::render(sigma, cam, n_samples);
        pair.view_index = int(v);
        auto huber = metrics::huber_image_loss(pair, gamma);
        out.loss += huber.loss * inv_views;
        for (double& d : huber.d_rendered.pixels) d *= inv_views;
        const VoxelGrid g = render::render_backward(sigma, cam, n_samples, huber.d_rendered);
        for (size_t i = 0; i < d_sigma.values.size(); ++i) d_sigma.values[i] += g.values[i];
    }

    FeatureMap d_density(1, sar.nx, sar.ny, sar.nz);
    for (size_t i = 0; i < d_density.v.size(); ++i)
        d_density.v[i] = d_sigma.values[i] * params.config.opacity_gain;
    out.grads = backward(params, fwd.enc, fwd.dec, d_density);
    return out;
}

// One training step: loss, gradients, Adam update. Batch size is one sample.
inline double train_step(ParameterSet& params, nn::AdamState& state, const VoxelGrid& sar,
                         const std::vector<Image>& gt_masks, const ViewSet& views, double gamma,
                         double lr, int n_samples) {
    LossAndGrads lg = loss_and_gradients(params, sar, gt_masks, views, gamma, n_samples);
    if (!std::isfinite(lg.loss))
        throw TrainingFault("train_step: non-finite loss at step " + std::to_string(state.t + 1));
    std::vector<Tensor*> p_params;
    std::vector<const Tensor*> p_grads;
    for (size_t i = 0; i < params.tensors.size(); ++i) {
        p_params.push_back(&params.tensors[i]);
        p_grads.push_back(&lg.grads[i]);
    }
    nn::adam_step(p_params, p_grads, params.names, state, lr);
    return lg.loss;
}

// ---------------------------------------------------------------------------
// ".cmn" model format: "CMNW", u32 version, config block, then named tensors
// as (u32 name length, name bytes, u32 rank, u32 extents..., f32 data),
// little-endian. Checkpoints append optimizer state as "opt.*" tensors.

constexpr uint32_t kCmnVersion = 1;

inline void save_model_with_extras(const ParameterSet& params,
                                   const std::vector<std::pair<std::string, Tensor>>& extras,
                                   const std::string& path) {
    std::unique_ptr<std::FILE, img::FileCloser> f(std::fopen(path.c_str(), "wb"));
    if (!f) throw IoError("cannot open for writing: " + path);
    using voxel::detail::write_f32;
    using voxel::detail::write_u32;
    if (std::fwrite("CMNW", 1, 4, f.get()) != 4) throw IoError("short write: " + path);
    write_u32(f.get(), kCmnVersion);
    const NetConfig& c = params.config;
    write_u32(f.get(), uint32_t(c.nx));
    write_u32(f.get(), uint32_t(c.ny));
    write_u32(f.get(), uint32_t(c.nz));
    write_u32(f.get(), uint32_t(c.base_channels));
    write_u32(f.get(), uint32_t(c.latent_dim));
    write_u32(f.get(), uint32_t(c.prp_hidden));
    write_u32(f.get(), uint32_t(c.num_stages));
    write_u32(f.get(), c.prp_enabled ? 1u : 0u); // flags, bit 0
    write_f32(f.get(), float(c.opacity_gain));
    write_f32(f.get(), float(c.leaky_slope));
    write_u32(f.get(), uint32_t(params.tensors.size() + extras.size()));
    auto write_tensor = [&](const std::string& name, const Tensor& t) {
        write_u32(f.get(), uint32_t(name.size()));
        if (std::fwrite(name.data(), 1, name.size(), f.get()) != name.size())
            throw IoError("short write: " + path);
        write_u32(f.get(), uint32_t(t.extents.size()));
        for (int e : t.extents) write_u32(f.get(), uint32_t(e));
        for (double v : t.v) write_f32(f.get(), float(v));
    };
    for (size_t i = 0; i < params.tensors.size(); ++i)
        write_tensor(params.names[i], params.tensors[i]);
    for (const auto& [name, t] : extras) write_tensor(name, t);
}

inline void save_model(const ParameterSet& params, const std::string& path) {
    save_model_with_extras(params, {}, path);
}

struct LoadedModel {
    ParameterSet params;
    std::vector<std::pair<std::string, Tensor>> extras; // "opt.*" tensors, file order
};

inline LoadedModel load_model_full(const std::string& path) {
    std::unique_ptr<std::FILE, img::FileCloser> f(std::fopen(path.c_str(), "rb"));
    if (!f) throw IoError("cannot open: " + path);
    using voxel::detail::read_f32;
    using voxel::detail::read_u32;
    char magic[4];
    if (std::fread(magic, 1, 4, f.get()) != 4 || std::memcmp(magic, "CMNW", 4) != 0)
        throw FormatError("bad magic in " + path + " (expected CMNW)");
    const uint32_t version = read_u32(f.get(), "version");
    if (version != kCmnVersion)
        throw FormatError("unsupported .cmn version " + std::to_string(version) + " in " + path);

    NetConfig c;
    c.nx = int(read_u32(f.get(), "nx"));
    c.ny = int(read_u32(f.get(), "ny"));
    c.nz = int(read_u32(f.get(), "nz"));
    c.base_channels = int(read_u32(f.get(), "base_channels"));
    c.latent_dim = int(read_u32(f.get(), "latent_dim"));
    c.prp_hidden = int(read_u32(f.get(), "prp_hidden"));
    c.num_stages = int(read_u32(f.get(), "num_stages"));
    c.prp_enabled = (read_u32(f.get(), "flags") & 1u) != 0;
    c.opacity_gain = read_f32(f.get(), "opacity_gain");
    c.leaky_slope = read_f32(f.get(), "leaky_slope");

    LoadedModel loaded;
    loaded.params.config = resolve(c);
    const auto expected = parameter_shapes(loaded.params.config);
    const uint32_t count = read_u32(f.get(), "tensor count");

    std::map<std::string, Tensor> by_name;
    for (uint32_t i = 0; i < count; ++i) {
        const uint32_t name_len = read_u32(f.get(), "name length");
        if (name_len == 0 || name_len > 4096) throw FormatError("implausible name length in " + path);
        std::string name(name_len, '\0');
        if (std::fread(name.data(), 1, name_len, f.get()) != name_len)
            throw FormatError("truncated tensor name in " + path);
        const uint32_t rank = read_u32(f.get(), "rank");
        if (rank > 8) throw FormatError("implausible tensor rank in " + path);
        std::vector<int> extents(rank);
        size_t n = 1;
        for (uint32_t r = 0; r < rank; ++r) {
            extents[r] = int(read_u32(f.get(), "extent"));
            n *= size_t(extents[r]);
        }
        if (n > (size_t(1) << 31)) throw FormatError("implausible tensor size in " + path);
        Tensor t(extents);
        for (size_t k = 0; k < n; ++k) t.v[k] = read_f32(f.get(), "tensor data");
        if (name.rfind("opt.", 0) == 0) {
            loaded.extras.emplace_back(name, std::move(t));
        } else {
            by_name[name] = std::move(t);
        }
    }
    for (const auto& [name, extents] : expected) {
        auto it = by_name.find(name);
        if (it == by_name.end()) throw FormatError("missing tensor " + name + " in " + path);
        if (it->second.extents != extents)
            throw FormatError("tensor " + name + " has unexpected shape in " + path);
        loaded.params.names.push_back(name);
        loaded.params.tensors.push_back(std::move(it->second));
    }
    return loaded;
}

inline ParameterSet load_model(const std::string& path) { return load_model_full(path).params; }

// Checkpoints carry the Adam moments and step counter next to the weights.
inline void save_checkpoint(const ParameterSet& params, const nn::AdamState& state,
                            const std::string& path) {
    std::vector<std::pair<std::string, Tensor>> extras;
    for (size_t i = 0; i < params.names.size(); ++i) {
        extras.emplace_back("opt.m." + params.names[i], state.m[i]);
        extras.emplace_back("opt.v." + params.names[i], state.v[i]);
    }
    Tensor t_step({1});
    t_step.v[0] = double(state.t);
    extras.emplace_back("opt.t", t_step);
    save_model_with_extras(params, extras, path);
}

struct Checkpoint {
    ParameterSet params;
    nn::AdamState state;
};

inline Checkpoint load_checkpoint(const std::string& path) {
    LoadedModel loaded = load_model_full(path);
    Checkpoint ck;
    ck.params = std::move(loaded.params);
    std::map<std::string, Tensor> extras;
    for (auto& [name, t] : loaded.extras) extras[name] = std::move(t);
    nn::adam_init(ck.state, ck.params.tensors);
    for (size_t i = 0; i < ck.params.names.size(); ++i) {
        const std::string& n = ck.params.names[i];
        auto im = extras.find("opt.m." + n);
        auto iv = extras.find("opt.v." + n);
        if (im == extras.end() || iv == extras.end())
            throw FormatError("checkpoint missing optimizer state for " + n + " in " + path);
        if (im->second.extents != ck.params.tensors[i].extents ||
            iv->second.extents != ck.params.tensors[i].extents)
            throw FormatError("checkpoint optimizer state shape mismatch for " + n);
        ck.state.m[i] = std::move(im->second);
        ck.state.v[i] = std::move(iv->second);
    }
    auto it = extras.find("opt.t");
    if (it == extras.end()) throw FormatError("checkpoint missing step counter in " + path);
    ck.state.t = int64_t(it->second.v.at(0));
    return ck;
}

} // namespace net
} // namespace cmar
