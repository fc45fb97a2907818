#pragma once

#include <cstdint>
#include <istream>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "psrd/box.hpp"
#include "psrd/detector.hpp"
#include "psrd/net.hpp"
#include "psrd/optim.hpp"
#include "psrd/proposals.hpp"
#include "psrd/synth.hpp"
#include "psrd/text.hpp"

namespace psrd {

inline std::string to_string(BlockVariant v) {
    switch (v) {
        case BlockVariant::kOriginal: return "original";
        case BlockVariant::kBnAfterAdd: return "bn_after_add";
        case BlockVariant::kNoSecondRelu: return "no_second_relu";
    }
    throw ContractError("unknown block variant");
}

inline BlockVariant block_variant_from_string(const std::string& s) {
    if (s == "original") return BlockVariant::kOriginal;
    if (s == "bn_after_add") return BlockVariant::kBnAfterAdd;
    if (s == "no_second_relu") return BlockVariant::kNoSecondRelu;
    throw ParseError("unknown block variant '" + s + "' (original|bn_after_add|no_second_relu)");
}

inline std::string to_string(DropoutMode m) {
    switch (m) {
        case DropoutMode::kNone: return "none";
        case DropoutMode::kAfterFirstPool: return "after_first_pool";
        case DropoutMode::kInsideBlock: return "inside_block";
    }
    throw ContractError("unknown dropout mode");
}

inline DropoutMode dropout_mode_from_string(const std::string& s) {
    if (s == "none") return DropoutMode::kNone;
    if (s == "after_first_pool") return DropoutMode::kAfterFirstPool;
    if (s == "inside_block") return DropoutMode::kInsideBlock;
    throw ParseError("unknown dropout placement '" + s + "' (none|after_first_pool|inside_block)");
}

/// Sampling and loss-weighting knobs for one training run.
struct TrainSampling {
    // 0.45 rather than the Faster R-CNN 0.7: at stride 8 the anchor grid is
    // coarse relative to the smallest objects, and 0.7 leaves most of them
    // with a single positive anchor, starving the box regressor.
    Real pos_iou = Real(0.45);
    Real neg_iou = Real(0.3);
    int rpn_batch = 64;
    Real rpn_fg_fraction = Real(0.5);
    int roi_batch = 32;
    Real roi_fg_fraction = Real(0.25);  // fg:bg 1:3
    Real roi_fg_iou = Real(0.5);
    Real lambda = Real(1);
    // regression deltas are divided by this scale inside the loss; values
    // below 1 push small box errors into smooth-L1's linear region, which
    // strengthens their gradient (Faster R-CNN target normalization)
    Real reg_sigma = Real(1);
    bool include_gt_rois = true;
};

/// Whole-experiment configuration: the flat key=value surface of the CLI.
struct RunConfig {
    DatasetSpec data;
    NetworkConfig net;
    AnchorSpec anchors;
    ProposalConfig rpn;
    TrainSampling train;
    OptimConfig optim;
    Real eval_iou = Real(0.5);
    Real eval_score_thresh = Real(0.05);
    Real eval_nms_thresh = Real(0.3);
    int eval_max_dets = 20;

    RunConfig() { net.dropout = {DropoutMode::kAfterFirstPool, Real(0.5)}; }

    /// Keeps derived fields consistent after edits.
    void finalize() {
        net.anchors_per_cell = anchors.per_cell();
        net.ps.feature_stride = net.feature_stride();
    }

    DetectorConfig detector_config() const {
        DetectorConfig d;
        d.rpn = rpn;
        d.score_thresh = eval_score_thresh;
        d.nms_thresh = eval_nms_thresh;
        d.max_dets = eval_max_dets;
        return d;
    }
};

namespace config_detail {

inline std::string render_value(int v) { return std::to_string(v); }
inline std::string render_value(std::uint64_t v) { return std::to_string(v); }
inline std::string render_value(Real v) { return real_to_string(static_cast<double>(v)); }
inline std::string render_value(bool v) { return v ? "true" : "false"; }
inline std::string render_value(const BlockVariant& v) { return to_string(v); }
inline std::string render_value(const DropoutMode& v) { return to_string(v); }

inline std::string render_value(const std::vector<Real>& v) {
    std::string out;
    for (std::size_t i = 0; i < v.size(); ++i) {
        if (i) out += ',';
        out += real_to_string(static_cast<double>(v[i]));
    }
    return out;
}

inline std::string render_value(const std::vector<StageSpec>& stages) {
    std::string out;
    for (std::size_t i = 0; i < stages.size(); ++i) {
        if (i) out += ',';
        out += std::to_string(stages[i].blocks) + "x" + std::to_string(stages[i].width) + "s" +
               std::to_string(stages[i].stride);
    }
    return out;
}

inline void parse_value(const std::string& s, int& out) {
    std::size_t pos = 0;
    try {
        out = std::stoi(s, &pos);
    } catch (const std::exception&) {
        throw ParseError("bad integer: " + s);
    }
    if (pos != s.size()) throw ParseError("bad integer: " + s);
}
inline void parse_value(const std::string& s, std::uint64_t& out) {
    std::size_t pos = 0;
    try {
        out = std::stoull(s, &pos);
    } catch (const std::exception&) {
        throw ParseError("bad integer: " + s);
    }
    if (pos != s.size()) throw ParseError("bad integer: " + s);
}
inline void parse_value(const std::string& s, Real& out) {
    std::size_t pos = 0;
    try {
        out = static_cast<Real>(std::stod(s, &pos));
    } catch (const std::exception&) {
        throw ParseError("bad real: " + s);
    }
    if (pos != s.size()) throw ParseError("bad real: " + s);
}
inline void parse_value(const std::string& s, bool& out) {
    if (s == "true") out = true;
    else if (s == "false") out = false;
    else throw ParseError("bad boolean '" + s + "' (true|false)");
}
inline void parse_value(const std::string& s, BlockVariant& out) { out = block_variant_from_string(s); }
inline void parse_value(const std::string& s, DropoutMode& out) { out = dropout_mode_from_string(s); }

inline void parse_value(const std::string& s, std::vector<Real>& out) {
    out.clear();
    for (const std::string& part : split(s, ',')) {
        Real v;
        parse_value(trim(part), v);
        out.push_back(v);
    }
}

// stage list: "<blocks>x<width>s<stride>, ..."  e.g. 2x16s1,2x32s2,2x64s1
inline void parse_value(const std::string& s, std::vector<StageSpec>& out) {
    out.clear();
    for (const std::string& part : split(s, ',')) {
        const std::string p = trim(part);
        const std::size_t x = p.find('x');
        const std::size_t st = p.find('s', x == std::string::npos ? 0 : x + 1);
        if (x == std::string::npos || st == std::string::npos) {
            throw ParseError("bad stage spec '" + p + "' (expected <blocks>x<width>s<stride>)");
        }
        StageSpec stage;
        parse_value(p.substr(0, x), stage.blocks);
        parse_value(p.substr(x + 1, st - x - 1), stage.width);
        parse_value(p.substr(st + 1), stage.stride);
        out.push_back(stage);
    }
}

struct Renderer {
    std::ostringstream os;
    template <typename T>
    void field(const char* key, T& ref, const char* doc) {
        os << key << " = " << render_value(ref) << "  # " << doc << "\n";
    }
};

struct Setter {
    std::map<std::string, std::string> values;
    std::set<std::string> known;
    template <typename T>
    void field(const char* key, T& ref, const char* /*doc*/) {
        known.insert(key);
        auto it = values.find(key);
        if (it == values.end()) return;
        try {
            parse_value(it->second, ref);
        } catch (const ParseError& e) {
            throw ParseError(std::string("key ") + key + ": " + e.what());
        }
    }
};

template <typename F>
void visit_config(RunConfig& c, F&& f) {
    f.field("data.width", c.data.width, "image width in pixels");
    f.field("data.height", c.data.height, "image height in pixels");
    f.field("data.n_train", c.data.n_train, "training scenes");
    f.field("data.n_val", c.data.n_val, "validation scenes");
    f.field("data.n_test", c.data.n_test, "test scenes");
    f.field("data.seed", c.data.seed, "dataset generator seed");
    f.field("data.objects_min", c.data.objects_min, "minimum objects per scene");
    f.field("data.objects_max", c.data.objects_max, "maximum objects per scene");
    f.field("data.noise_sigma", c.data.noise_sigma, "additive Gaussian pixel noise");

    f.field("net.stem_channels", c.net.stem.channels, "stem conv output channels");
    f.field("net.stem_kernel", c.net.stem.kernel, "stem conv kernel size");
    f.field("net.stem_stride", c.net.stem.stride, "stem conv stride");
    f.field("net.stem_pad", c.net.stem.pad, "stem conv padding");
    f.field("net.pool_win", c.net.stem.pool_win, "stem max-pool window");
    f.field("net.pool_stride", c.net.stem.pool_stride, "stem max-pool stride");
    f.field("net.stages", c.net.stages, "residual stages as <blocks>x<width>s<stride>");
    f.field("net.block_variant", c.net.block_variant, "original|bn_after_add|no_second_relu");
    f.field("net.dropout", c.net.dropout.mode, "none|after_first_pool|inside_block");
    f.field("net.dropout_rate", c.net.dropout.rate, "dropout rate when placement is active");
    f.field("net.head_channels", c.net.head_reduce_channels, "dimension-reduction conv width");
    f.field("net.bn_eps", c.net.bn_eps, "batch-norm epsilon");
    f.field("net.bn_momentum", c.net.bn_momentum, "running-statistics momentum");

    f.field("head.k", c.net.ps.k, "position-sensitive grid side");
    f.field("head.classes", c.net.ps.C, "foreground class count");

    f.field("anchors.base_sizes", c.anchors.base_sizes, "anchor side lengths in pixels");
    f.field("anchors.aspect_ratios", c.anchors.aspect_ratios, "anchor width/height ratios");

    f.field("rpn.pre_nms_top_n", c.rpn.pre_nms_top_n, "proposals kept before NMS");
    f.field("rpn.post_nms_top_n", c.rpn.post_nms_top_n, "proposals kept after NMS");
    f.field("rpn.nms_thresh", c.rpn.nms_thresh, "proposal NMS IoU threshold");
    f.field("rpn.min_size", c.rpn.min_size, "minimum proposal side length in pixels");

    f.field("train.pos_iou", c.train.pos_iou, "anchor IoU for a positive label");
    f.field("train.neg_iou", c.train.neg_iou, "anchor IoU below which the label is negative");
    f.field("train.rpn_batch", c.train.rpn_batch, "anchors sampled per image");
    f.field("train.rpn_fg_fraction", c.train.rpn_fg_fraction, "positive fraction of the anchor batch");
    f.field("train.roi_batch", c.train.roi_batch, "RoIs sampled per image");
    f.field("train.roi_fg_fraction", c.train.roi_fg_fraction, "foreground fraction of the RoI batch");
    f.field("train.roi_fg_iou", c.train.roi_fg_iou, "RoI IoU for a foreground label");
    f.field("train.lambda", c.train.lambda, "regression loss weight");
    f.field("train.reg_sigma", c.train.reg_sigma, "regression delta scale inside the loss");
    f.field("train.include_gt_rois", c.train.include_gt_rois, "add ground-truth boxes to training RoIs");

    f.field("optim.lr", c.optim.lr, "learning rate (decays x0.1 at 2/3 of epochs)");
    f.field("optim.momentum", c.optim.momentum, "SGD momentum");
    f.field("optim.weight_decay", c.optim.weight_decay, "L2 weight decay");
    f.field("optim.epochs", c.optim.epochs, "training epochs");
    f.field("optim.seed", c.optim.seed, "training seed (init, shuffling, dropout)");

    f.field("eval.iou", c.eval_iou, "IoU threshold for a true positive");
    f.field("eval.score_thresh", c.eval_score_thresh, "detection score floor");
    f.field("eval.nms_thresh", c.eval_nms_thresh, "detection NMS IoU threshold");
    f.field("eval.max_dets", c.eval_max_dets, "detections kept per image");
}

}  // namespace config_detail

/// Canonical text form: every key, with its documentation, in fixed order.
inline std::string render_run_config(const RunConfig& cfg) {
    config_detail::Renderer r;
    config_detail::visit_config(const_cast<RunConfig&>(cfg), r);
    return r.os.str();
}

/// Parses the key=value dialect over the defaults. Unknown keys are
/// rejected; omitted keys keep their documented default.
inline RunConfig parse_run_config(std::istream& is, const std::string& source = "") {
    RunConfig cfg;
    config_detail::Setter s;
    for (const auto& [key, value] : parse_kv(is, source)) {
        if (s.values.count(key)) throw ParseError("duplicate config key: " + key);
        s.values[key] = value;
    }
    config_detail::visit_config(cfg, s);
    for (const auto& [key, value] : s.values) {
        if (!s.known.count(key)) throw ParseError("unknown config key: " + key);
    }
    cfg.finalize();
    return cfg;
}

inline RunConfig parse_run_config_string(const std::string& text) {
    std::istringstream is(text);
    return parse_run_config(is);
}

inline bool operator==(const RunConfig& a, const RunConfig& b) {
    return render_run_config(a) == render_run_config(b);
}

}  // namespace psrd
