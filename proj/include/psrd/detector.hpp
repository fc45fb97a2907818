#pragma once

#include <cstdio>
#include <istream>
#include <map>
#include <ostream>
#include <sstream>
#include <string>
#include <vector>

#include "psrd/box.hpp"
#include "psrd/net.hpp"
#include "psrd/proposals.hpp"
#include "psrd/ps_roi_pool.hpp"

namespace psrd {

/// A scored, classified box. class_id is a foreground class in [1..C];
/// background never surfaces as a detection.
struct Detection {
    Box box;
    int class_id = 1;
    Real score = 0;
};

struct DetectorConfig {
    ProposalConfig rpn;  // img_w/img_h are overwritten per image
    Real score_thresh = Real(0.05);
    Real nms_thresh = Real(0.3);
    int max_dets = 20;
};

/// Full eval-mode inference on one [1,3,H,W] image: propose RoIs, pool the
/// position-sensitive maps, vote, classify with softmax, refine with the
/// regression vote, then per-class NMS.
inline std::vector<Detection> detect(Network& net, const Tensor& img, const AnchorSpec& anchors,
                                     const DetectorConfig& dcfg) {
    detail::require_rank(img, 4, "detect input");
    NetOutputs out = forward_all(net, img, false, nullptr, nullptr);
    const int Hf = out.feat.dim(2), Wf = out.feat.dim(3);
    const int stride = net.cfg.ps.feature_stride;

    ProposalConfig pcfg = dcfg.rpn;
    pcfg.img_w = static_cast<Real>(img.dim(3));
    pcfg.img_h = static_cast<Real>(img.dim(2));
    const std::vector<Box> anchor_boxes = generate_anchors(anchors, Hf, Wf, stride);
    const std::vector<RoI> rois = rpn_propose(out.rpn_obj, out.rpn_reg, anchor_boxes, pcfg);

    std::vector<Detection> raw;
    for (const RoI& roi : rois) {
        Tensor pooled = ps_roi_pool(out.cls_maps, roi, net.cfg.ps);
        Tensor probs = ps_vote_classify(pooled);
        Tensor delta = ps_roi_pool_reg(out.reg_maps, roi, net.cfg.ps);
        const Box refined = decode_box(roi.box, {delta[0], delta[1], delta[2], delta[3]},
                                       pcfg.img_w, pcfg.img_h);
        if (refined.width() <= Real(0) || refined.height() <= Real(0)) continue;
        // every foreground class scores the RoI; NMS and the score floor
        // prune the weak ones
        for (int c = 1; c <= net.cfg.ps.C; ++c) {
            if (probs[c] < dcfg.score_thresh) continue;
            raw.push_back({refined, c, probs[c]});
        }
    }

    // per-class NMS, then a global score-ordered cap
    std::vector<Detection> kept;
    for (int c = 1; c <= net.cfg.ps.C; ++c) {
        std::vector<std::pair<Box, Real>> cls_dets;
        std::vector<int> src;
        for (std::size_t i = 0; i < raw.size(); ++i) {
            if (raw[i].class_id == c) {
                cls_dets.emplace_back(raw[i].box, raw[i].score);
                src.push_back(static_cast<int>(i));
            }
        }
        for (int idx : nms(cls_dets, dcfg.nms_thresh)) kept.push_back(raw[static_cast<std::size_t>(src[static_cast<std::size_t>(idx)])]);
    }
    std::stable_sort(kept.begin(), kept.end(),
                     [](const Detection& a, const Detection& b) { return a.score > b.score; });
    if (static_cast<int>(kept.size()) > dcfg.max_dets) kept.resize(static_cast<std::size_t>(dcfg.max_dets));
    return kept;
}

namespace detail {

inline std::string fmt_g6(Real v) {
    char buf[40];
    std::snprintf(buf, sizeof(buf), "%.6g", static_cast<double>(v));
    return buf;
}

}  // namespace detail

/// One detection per line: `image_id class_id score x1 y1 x2 y2`, reals at
/// 6 significant digits.
inline std::string detection_line(const std::string& image_id, const Detection& d) {
    std::ostringstream os;
    os << image_id << ' ' << d.class_id << ' ' << detail::fmt_g6(d.score) << ' '
       << detail::fmt_g6(d.box.x1) << ' ' << detail::fmt_g6(d.box.y1) << ' '
       << detail::fmt_g6(d.box.x2) << ' ' << detail::fmt_g6(d.box.y2);
    return os.str();
}

inline void write_detections(std::ostream& os,
                             const std::map<std::string, std::vector<Detection>>& dets) {
    for (const auto& [image_id, list] : dets)
        for (const Detection& d : list) os << detection_line(image_id, d) << '\n';
}

inline std::map<std::string, std::vector<Detection>> read_detections(std::istream& is) {
    std::map<std::string, std::vector<Detection>> dets;
    std::string line;
    int line_no = 0;
    while (std::getline(is, line)) {
        ++line_no;
        if (line.empty()) continue;
        std::istringstream ls(line);
        std::string image_id;
        Detection d;
        double score, x1, y1, x2, y2;
        if (!(ls >> image_id >> d.class_id >> score >> x1 >> y1 >> x2 >> y2)) {
            throw ParseError("bad detection line " + std::to_string(line_no) + ": " + line);
        }
        d.score = static_cast<Real>(score);
        d.box = {static_cast<Real>(x1), static_cast<Real>(y1), static_cast<Real>(x2), static_cast<Real>(y2)};
        dets[image_id].push_back(d);
    }
    return dets;
}

}  // namespace psrd
