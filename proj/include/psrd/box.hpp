#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <string>
#include <vector>

#include "psrd/error.hpp"
#include "psrd/tensor.hpp"

namespace psrd {

/// Axis-aligned rectangle in image-pixel coordinates, corners inclusive of
/// the coordinate continuum: x1 <= x2, y1 <= y2.
struct Box {
    Real x1 = 0, y1 = 0, x2 = 0, y2 = 0;

    Real width() const { return x2 - x1; }
    Real height() const { return y2 - y1; }
    Real area() const { return width() * height(); }
    Real cx() const { return (x1 + x2) / 2; }
    Real cy() const { return (y1 + y2) / 2; }

    bool valid() const { return x1 <= x2 && y1 <= y2; }
};

/// Candidate region with the batch element it belongs to.
struct RoI {
    Box box;
    int batch_index = 0;
};

/// Intersection over union; 0 when the union is empty.
inline Real iou(const Box& a, const Box& b) {
    const Real ix = std::max(Real(0), std::min(a.x2, b.x2) - std::max(a.x1, b.x1));
    const Real iy = std::max(Real(0), std::min(a.y2, b.y2) - std::max(a.y1, b.y1));
    const Real inter = ix * iy;
    const Real uni = a.area() + b.area() - inter;
    return uni > Real(0) ? inter / uni : Real(0);
}

inline Box clip_box(const Box& b, Real img_w, Real img_h) {
    Box c;
    c.x1 = std::clamp(b.x1, Real(0), img_w);
    c.y1 = std::clamp(b.y1, Real(0), img_h);
    c.x2 = std::clamp(b.x2, Real(0), img_w);
    c.y2 = std::clamp(b.y2, Real(0), img_h);
    return c;
}

using BoxDelta = std::array<Real, 4>;  // tx, ty, tw, th

/// Center/log-size offsets of gt relative to anchor.
inline BoxDelta encode_box(const Box& anchor, const Box& gt) {
    const Real aw = anchor.width(), ah = anchor.height();
    if (aw <= Real(0) || ah <= Real(0)) {
        throw GeometryError("encode_box: anchor must have positive extent");
    }
    const Real gw = gt.width(), gh = gt.height();
    if (gw <= Real(0) || gh <= Real(0)) {
        throw GeometryError("encode_box: box must have positive extent");
    }
    return {(gt.cx() - anchor.cx()) / aw, (gt.cy() - anchor.cy()) / ah,
            std::log(gw / aw), std::log(gh / ah)};
}

/// Exact inverse of encode_box (no clipping).
inline Box decode_box(const Box& anchor, const BoxDelta& delta) {
    const Real aw = anchor.width(), ah = anchor.height();
    if (aw <= Real(0) || ah <= Real(0)) {
        throw GeometryError("decode_box: anchor must have positive extent");
    }
    const Real cx = anchor.cx() + delta[0] * aw;
    const Real cy = anchor.cy() + delta[1] * ah;
    const Real w = aw * std::exp(delta[2]);
    const Real h = ah * std::exp(delta[3]);
    return {cx - w / 2, cy - h / 2, cx + w / 2, cy + h / 2};
}

/// Decode followed by a clip to [0,img_w] x [0,img_h].
inline Box decode_box(const Box& anchor, const BoxDelta& delta, Real img_w, Real img_h) {
    return clip_box(decode_box(anchor, delta), img_w, img_h);
}

/// Reference boxes replicated over the feature grid.
struct AnchorSpec {
    std::vector<Real> base_sizes = {8, 12, 17, 24};
    std::vector<Real> aspect_ratios = {1};

    int per_cell() const {
        return static_cast<int>(base_sizes.size() * aspect_ratios.size());
    }
};

/// One anchor per (cell, ratio, size), centered at ((j+0.5)*stride,
/// (i+0.5)*stride). Cells enumerate row-major; within a cell ratios are the
/// outer loop. An anchor of base s and ratio r spans s*sqrt(r) x s/sqrt(r),
/// so width/height == r exactly and the area stays s^2.
inline std::vector<Box> generate_anchors(const AnchorSpec& spec, int Hf, int Wf, int stride) {
    if (Hf < 1 || Wf < 1) throw ContractError("generate_anchors: grid must be at least 1x1");
    std::vector<Box> anchors;
    anchors.reserve(static_cast<std::size_t>(Hf) * Wf * spec.per_cell());
    for (int i = 0; i < Hf; ++i) {
        for (int j = 0; j < Wf; ++j) {
            const Real cx = (static_cast<Real>(j) + Real(0.5)) * stride;
            const Real cy = (static_cast<Real>(i) + Real(0.5)) * stride;
            for (Real r : spec.aspect_ratios) {
                for (Real s : spec.base_sizes) {
                    const Real w = s * std::sqrt(r);
                    const Real h = s / std::sqrt(r);
                    anchors.push_back({cx - w / 2, cy - h / 2, cx + w / 2, cy + h / 2});
                }
            }
        }
    }
    return anchors;
}

/// Greedy non-maximum suppression: repeatedly keeps the highest-score box
/// and drops the rest with IoU strictly above iou_thresh against it. Score
/// ties break toward the lower original index; the result is in descending
/// score order.
inline std::vector<int> nms(const std::vector<std::pair<Box, Real>>& dets, Real iou_thresh) {
    std::vector<int> order(dets.size());
    for (std::size_t i = 0; i < dets.size(); ++i) order[i] = static_cast<int>(i);
    std::stable_sort(order.begin(), order.end(), [&](int a, int b) {
        return dets[static_cast<std::size_t>(a)].second > dets[static_cast<std::size_t>(b)].second;
    });
    std::vector<char> suppressed(dets.size(), 0);
    std::vector<int> kept;
    for (std::size_t oi = 0; oi < order.size(); ++oi) {
        const int i = order[oi];
        if (suppressed[static_cast<std::size_t>(i)]) continue;
        kept.push_back(i);
        for (std::size_t oj = oi + 1; oj < order.size(); ++oj) {
            const int j = order[oj];
            if (suppressed[static_cast<std::size_t>(j)]) continue;
            if (iou(dets[static_cast<std::size_t>(i)].first, dets[static_cast<std::size_t>(j)].first) > iou_thresh) {
                suppressed[static_cast<std::size_t>(j)] = 1;
            }
        }
    }
    return kept;
}

}  // namespace psrd
