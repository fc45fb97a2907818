#pragma once

#include <map>
#include <string>
#include <vector>

#include "psrd/ops.hpp"
#include "psrd/ps_roi_pool.hpp"
#include "psrd/rng.hpp"
#include "psrd/tensor.hpp"

namespace psrd {

/// The three residual-block wirings under comparison. They share identical
/// parameters and differ only in where batch norm and the final ReLU sit.
enum class BlockVariant {
    kOriginal,      // relu( bn2(conv2(relu(bn1(conv1 x)))) + shortcut )
    kBnAfterAdd,    // relu( bn2( conv2(relu(bn1(conv1 x))) + shortcut ) )
    kNoSecondRelu,  // bn2(conv2(relu(bn1(conv1 x)))) + shortcut
};

enum class DropoutMode { kNone, kAfterFirstPool, kInsideBlock };

struct DropoutPlacement {
    DropoutMode mode = DropoutMode::kNone;
    Real rate = Real(0.5);
};

struct StemSpec {
    int channels = 16;
    int kernel = 3;
    int stride = 2;
    int pad = 1;
    int pool_win = 2;
    int pool_stride = 2;
};

struct StageSpec {
    int blocks = 2;
    int width = 16;
    int stride = 1;  // applied by the stage's first block
};

struct NetworkConfig {
    StemSpec stem;
    // all residual stages run at the post-pool resolution: total stride 4.
    // At 64x64 with objects from 8 px up, a stride-8 grid cannot place
    // anchors near enough to the smallest boxes for the regressor to reach
    // IoU 0.5, which caps detection recall well below the acceptance bar.
    std::vector<StageSpec> stages = {{2, 16, 1}, {2, 32, 1}, {2, 64, 1}};
    BlockVariant block_variant = BlockVariant::kOriginal;
    DropoutPlacement dropout;
    int head_reduce_channels = 64;
    PSHeadConfig ps;
    int anchors_per_cell = 4;
    Real bn_eps = Real(1e-5);
    Real bn_momentum = Real(0.9);

    int feature_stride() const {
        int s = stem.stride * stem.pool_stride;
        for (const auto& st : stages) s *= st.stride;
        return s;
    }

    void validate() const {
        if (stages.empty()) throw ConfigError("network config: at least one stage is required");
        int prev_width = 0;
        for (const auto& st : stages) {
            if (st.blocks < 1) throw ConfigError("network config: stage block count must be positive");
            if (st.width < prev_width) throw ConfigError("network config: stage widths must be nondecreasing");
            if (st.stride != 1 && st.stride != 2) throw ConfigError("network config: stage stride must be 1 or 2");
            prev_width = st.width;
        }
        if (stem.channels < 1 || stem.kernel < 1 || stem.stride < 1 || stem.pad < 0 ||
            stem.pool_win < 1 || stem.pool_stride < 1) {
            throw ConfigError("network config: invalid stem specification");
        }
        if (head_reduce_channels < 1) throw ConfigError("network config: head channels must be positive");
        if (dropout.rate < Real(0) || dropout.rate >= Real(1)) {
            throw ConfigError("network config: dropout rate must lie in [0, 1)");
        }
        if (ps.k < 1 || ps.C < 1) throw ConfigError("network config: head needs k >= 1 and C >= 1");
        if (anchors_per_cell < 1) throw ConfigError("network config: need at least one anchor per cell");
    }
};

/// Named parameter/buffer registry. Map order is the canonical iteration
/// order for checkpoints and optimizer updates.
struct ParamSet {
    std::map<std::string, Tensor> tensors;

    Tensor add_param(const std::string& name, Tensor t) {
        t.set_requires_grad(true);
        tensors.emplace(name, t);
        return t;
    }
    Tensor add_buffer(const std::string& name, Tensor t) {
        tensors.emplace(name, t);
        return t;
    }

    std::int64_t num_trainable() const {
        std::int64_t n = 0;
        for (const auto& [name, t] : tensors)
            if (t.requires_grad()) n += t.numel();
        return n;
    }

    void zero_grads() {
        for (auto& [name, t] : tensors)
            if (t.requires_grad()) t.zero_grad();
    }
};

struct ConvLayer {
    Tensor w;
    Tensor b;  // undefined for bias-free convs
    int stride = 1;
    int pad = 0;
};

struct Block {
    ConvLayer conv1, conv2;
    BNParams bn1, bn2;
    bool has_proj = false;
    ConvLayer proj;
    BNParams proj_bn;
};

namespace detail {

inline Tensor he_conv_weight(int cout, int cin, int kh, int kw, Rng& rng) {
    Tensor w({cout, cin, kh, kw});
    const double stddev = std::sqrt(2.0 / (static_cast<double>(cin) * kh * kw));
    for (std::int64_t i = 0; i < w.numel(); ++i) w[i] = static_cast<Real>(rng.normal(0.0, stddev));
    return w;
}

inline ConvLayer make_conv(ParamSet& params, const std::string& path, int cout, int cin, int k,
                           int stride, int pad, bool bias, Rng& rng) {
    ConvLayer layer;
    layer.w = params.add_param(path + "/w", he_conv_weight(cout, cin, k, k, rng));
    if (bias) layer.b = params.add_param(path + "/b", Tensor::zeros({cout}));
    layer.stride = stride;
    layer.pad = pad;
    return layer;
}

inline BNParams make_bn(ParamSet& params, const std::string& path, int channels, Real eps,
                        Real momentum) {
    BNParams p = BNParams::make(channels);
    p.eps = eps;
    p.momentum_stat = momentum;
    params.add_param(path + "/gamma", p.gamma);
    params.add_param(path + "/beta", p.beta);
    params.add_buffer(path + "/running_mean", p.running_mean);
    params.add_buffer(path + "/running_var", p.running_var);
    return p;
}

}  // namespace detail

/// Backbone + RPN + position-sensitive heads with all parameters owned by a
/// single named registry (slash-separated paths).
struct Network {
    NetworkConfig cfg;
    ParamSet params;

    ConvLayer stem_conv;
    BNParams stem_bn;
    std::vector<std::vector<Block>> stages;
    ConvLayer reduce;             // 1x1 dimension-reduction conv feeding every head
    ConvLayer cls_head, reg_head; // 1x1 convs emitting k^2(C+1) / 4k^2 score maps
    ConvLayer rpn_conv, rpn_obj, rpn_reg;
};

/// Assembles the network: He-initialized conv weights, BN gamma=1/beta=0.
/// The draw order is fixed, so a seed fully determines the parameter set.
inline Network build_network(const NetworkConfig& cfg, Rng& rng) {
    cfg.validate();
    Network net;
    net.cfg = cfg;
    net.cfg.ps.feature_stride = cfg.feature_stride();

    auto& P = net.params;
    const Real eps = cfg.bn_eps, mom = cfg.bn_momentum;

    net.stem_conv = detail::make_conv(P, "stem/conv", cfg.stem.channels, 3, cfg.stem.kernel,
                                      cfg.stem.stride, cfg.stem.pad, false, rng);
    net.stem_bn = detail::make_bn(P, "stem/bn", cfg.stem.channels, eps, mom);

    int in_ch = cfg.stem.channels;
    for (std::size_t s = 0; s < cfg.stages.size(); ++s) {
        const StageSpec& st = cfg.stages[s];
        std::vector<Block> blocks;
        for (int b = 0; b < st.blocks; ++b) {
            const std::string path = "stage" + std::to_string(s) + "/block" + std::to_string(b);
            const int stride = (b == 0) ? st.stride : 1;
            Block blk;
            blk.conv1 = detail::make_conv(P, path + "/conv1", st.width, in_ch, 3, stride, 1, false, rng);
            blk.bn1 = detail::make_bn(P, path + "/bn1", st.width, eps, mom);
            blk.conv2 = detail::make_conv(P, path + "/conv2", st.width, st.width, 3, 1, 1, false, rng);
            blk.bn2 = detail::make_bn(P, path + "/bn2", st.width, eps, mom);
            if (stride != 1 || in_ch != st.width) {
                blk.has_proj = true;
                blk.proj = detail::make_conv(P, path + "/proj", st.width, in_ch, 1, stride, 0, false, rng);
                blk.proj_bn = detail::make_bn(P, path + "/proj_bn", st.width, eps, mom);
            }
            blocks.push_back(std::move(blk));
            in_ch = st.width;
        }
        net.stages.push_back(std::move(blocks));
    }

    net.reduce = detail::make_conv(P, "head/reduce", cfg.head_reduce_channels, in_ch, 1, 1, 0, true, rng);
    net.cls_head = detail::make_conv(P, "head/cls", cfg.ps.cls_channels(), cfg.head_reduce_channels,
                                     1, 1, 0, true, rng);
    net.reg_head = detail::make_conv(P, "head/reg", cfg.ps.reg_channels(), cfg.head_reduce_channels,
                                     1, 1, 0, true, rng);

    net.rpn_conv = detail::make_conv(P, "rpn/conv", cfg.head_reduce_channels,
                                     cfg.head_reduce_channels, 3, 1, 1, true, rng);
    net.rpn_obj = detail::make_conv(P, "rpn/obj", 2 * cfg.anchors_per_cell,
                                    cfg.head_reduce_channels, 1, 1, 0, true, rng);
    net.rpn_reg = detail::make_conv(P, "rpn/reg", 4 * cfg.anchors_per_cell,
                                    cfg.head_reduce_channels, 1, 1, 0, true, rng);
    return net;
}

/// One residual block under the chosen wiring. `inside_dropout`, when
/// active, sits between the two convs of the residual branch; the identity
/// path never carries dropout.
inline Tensor forward_block(const Tensor& x, Block& blk, BlockVariant variant, bool training,
                            const DropoutPlacement& dp, Rng* rng, Graph* g = nullptr) {
    Tensor shortcut = x;
    if (blk.has_proj) {
        shortcut = conv2d(x, blk.proj.w, blk.proj.b, blk.proj.stride, blk.proj.pad, g);
        shortcut = batch_norm(shortcut, blk.proj_bn, training, g);
    } else if (x.dim(1) != blk.conv2.w.dim(0)) {
        throw DimensionError("forward_block: identity shortcut needs matching channels, got " +
                             std::to_string(x.dim(1)) + " vs " + std::to_string(blk.conv2.w.dim(0)));
    }

    Tensor t = conv2d(x, blk.conv1.w, blk.conv1.b, blk.conv1.stride, blk.conv1.pad, g);
    t = batch_norm(t, blk.bn1, training, g);
    t = relu(t, g);
    if (dp.mode == DropoutMode::kInsideBlock && training) {
        if (!rng) throw ContractError("forward_block: dropout in training mode needs an RNG stream");
        t = dropout(t, dp.rate, training, *rng, g);
    }
    t = conv2d(t, blk.conv2.w, blk.conv2.b, blk.conv2.stride, blk.conv2.pad, g);

    switch (variant) {
        case BlockVariant::kOriginal:
            t = batch_norm(t, blk.bn2, training, g);
            return relu(add(t, shortcut, g), g);
        case BlockVariant::kBnAfterAdd:
            t = add(t, shortcut, g);
            t = batch_norm(t, blk.bn2, training, g);
            return relu(t, g);
        case BlockVariant::kNoSecondRelu:
            t = batch_norm(t, blk.bn2, training, g);
            return add(t, shortcut, g);
    }
    throw ContractError("forward_block: unknown block variant");
}

/// Stem -> pool -> (dropout) -> stages -> dimension-reduction conv.
/// Output spatial size is H,W divided by the total feature stride.
inline Tensor forward_backbone(Network& net, const Tensor& img, bool training, Rng* rng,
                               Graph* g = nullptr) {
    detail::require_rank(img, 4, "backbone input");
    const int stride_total = net.cfg.feature_stride();
    if (img.dim(2) % stride_total != 0 || img.dim(3) % stride_total != 0) {
        throw DimensionError("backbone input axes 2,3 of " + std::to_string(img.dim(2)) + "x" +
                             std::to_string(img.dim(3)) + " must be divisible by the feature stride " +
                             std::to_string(stride_total));
    }
    const DropoutPlacement& dp = net.cfg.dropout;
    if (training && dp.mode != DropoutMode::kNone && !rng) {
        throw ContractError("forward_backbone: dropout in training mode needs an RNG stream");
    }

    Tensor t = conv2d(img, net.stem_conv.w, net.stem_conv.b, net.stem_conv.stride,
                      net.stem_conv.pad, g);
    t = batch_norm(t, net.stem_bn, training, g);
    t = relu(t, g);
    t = max_pool2d(t, net.cfg.stem.pool_win, net.cfg.stem.pool_stride, g);
    if (dp.mode == DropoutMode::kAfterFirstPool && training) {
        t = dropout(t, dp.rate, training, *rng, g);
    }
    for (auto& stage : net.stages) {
        for (auto& blk : stage) {
            t = forward_block(t, blk, net.cfg.block_variant, training, dp, rng, g);
        }
    }
    t = conv2d(t, net.reduce.w, net.reduce.b, net.reduce.stride, net.reduce.pad, g);
    return relu(t, g);
}

/// Sibling 1x1 convs that emit the k^2(C+1) class score maps and the 4k^2
/// regression maps.
inline std::pair<Tensor, Tensor> score_map_heads(Network& net, const Tensor& feat, Graph* g = nullptr) {
    Tensor cls = conv2d(feat, net.cls_head.w, net.cls_head.b, 1, 0, g);
    Tensor reg = conv2d(feat, net.reg_head.w, net.reg_head.b, 1, 0, g);
    return {cls, reg};
}

/// RPN tower: 3x3 conv + relu, then per-anchor objectness (2 channels,
/// bg/fg) and box-delta (4 channels) maps.
inline std::pair<Tensor, Tensor> rpn_heads(Network& net, const Tensor& feat, Graph* g = nullptr) {
    Tensor t = relu(conv2d(feat, net.rpn_conv.w, net.rpn_conv.b, 1, 1, g), g);
    Tensor obj = conv2d(t, net.rpn_obj.w, net.rpn_obj.b, 1, 0, g);
    Tensor reg = conv2d(t, net.rpn_reg.w, net.rpn_reg.b, 1, 0, g);
    return {obj, reg};
}

struct NetOutputs {
    Tensor feat;
    Tensor rpn_obj, rpn_reg;
    Tensor cls_maps, reg_maps;
};

inline NetOutputs forward_all(Network& net, const Tensor& img, bool training, Rng* rng,
                              Graph* g = nullptr) {
    NetOutputs out;
    out.feat = forward_backbone(net, img, training, rng, g);
    auto [obj, rpnreg] = rpn_heads(net, out.feat, g);
    out.rpn_obj = obj;
    out.rpn_reg = rpnreg;
    auto [cls, reg] = score_map_heads(net, out.feat, g);
    out.cls_maps = cls;
    out.reg_maps = reg;
    return out;
}

/// Copies checkpoint tensors into the network by name. Every registered
/// tensor must be present with a matching shape.
inline void load_params(Network& net, const std::map<std::string, Tensor>& loaded) {
    for (auto& [name, t] : net.params.tensors) {
        auto it = loaded.find(name);
        if (it == loaded.end()) throw ParseError("checkpoint is missing tensor " + name);
        if (it->second.shape() != t.shape()) {
            throw DimensionError("checkpoint tensor " + name + " has shape " +
                                 shape_str(it->second.shape()) + ", expected " + shape_str(t.shape()));
        }
        t.values() = it->second.values();
    }
}

}  // namespace psrd
