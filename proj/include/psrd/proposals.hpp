#pragma once

#include <algorithm>
#include <cmath>
#include <vector>

#include "psrd/box.hpp"
#include "psrd/tensor.hpp"

namespace psrd {

struct ProposalConfig {
    int pre_nms_top_n = 200;
    int post_nms_top_n = 50;
    Real nms_thresh = Real(0.7);
    Real min_size = Real(2);
    Real img_w = 64;
    Real img_h = 64;
};

/// Turns RPN outputs into candidate regions: decode every anchor with its
/// predicted delta, clip to the image, drop degenerate boxes, rank by
/// foreground score, NMS, keep the top post_nms_top_n.
///
/// Channel layout per feature cell: objectness holds (bg, fg) logit pairs
/// per anchor, regression holds (tx, ty, tw, th) quads; anchor a at cell
/// (i, j) corresponds to anchors[(i*Wf + j)*A + a].
inline std::vector<RoI> rpn_propose(const Tensor& objectness, const Tensor& reg,
                                    const std::vector<Box>& anchors, const ProposalConfig& cfg,
                                    int batch_index = 0) {
    detail::require_rank(objectness, 4, "rpn objectness");
    detail::require_rank(reg, 4, "rpn regression");
    const int Hf = objectness.dim(2), Wf = objectness.dim(3);
    const int A = objectness.dim(1) / 2;
    if (objectness.dim(1) != 2 * A || reg.dim(1) != 4 * A || reg.dim(2) != Hf || reg.dim(3) != Wf) {
        throw DimensionError("rpn_propose: objectness needs 2 and regression 4 channels per anchor");
    }
    if (anchors.size() != static_cast<std::size_t>(Hf) * Wf * A) {
        throw DimensionError("rpn_propose: anchor count " + std::to_string(anchors.size()) +
                             " does not match grid " + std::to_string(Hf) + "x" + std::to_string(Wf) +
                             " with " + std::to_string(A) + " anchors per cell");
    }

    std::vector<std::pair<Box, Real>> candidates;
    candidates.reserve(anchors.size());
    for (int i = 0; i < Hf; ++i) {
        for (int j = 0; j < Wf; ++j) {
            for (int a = 0; a < A; ++a) {
                const Real bg = objectness.at4(batch_index, 2 * a, i, j);
                const Real fg = objectness.at4(batch_index, 2 * a + 1, i, j);
                // softmax fg probability of a (bg, fg) pair
                const Real score = Real(1) / (Real(1) + std::exp(bg - fg));
                const BoxDelta delta = {reg.at4(batch_index, 4 * a, i, j),
                                        reg.at4(batch_index, 4 * a + 1, i, j),
                                        reg.at4(batch_index, 4 * a + 2, i, j),
                                        reg.at4(batch_index, 4 * a + 3, i, j)};
                const std::size_t idx = (static_cast<std::size_t>(i) * Wf + j) * A + a;
                const Box decoded = decode_box(anchors[idx], delta, cfg.img_w, cfg.img_h);
                if (decoded.width() < cfg.min_size || decoded.height() < cfg.min_size) continue;
                candidates.emplace_back(decoded, score);
            }
        }
    }

    std::vector<int> order(candidates.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = static_cast<int>(i);
    std::stable_sort(order.begin(), order.end(), [&](int a, int b) {
        return candidates[static_cast<std::size_t>(a)].second > candidates[static_cast<std::size_t>(b)].second;
    });
    if (static_cast<int>(order.size()) > cfg.pre_nms_top_n) order.resize(static_cast<std::size_t>(cfg.pre_nms_top_n));

    std::vector<std::pair<Box, Real>> ranked;
    ranked.reserve(order.size());
    for (int idx : order) ranked.push_back(candidates[static_cast<std::size_t>(idx)]);

    const std::vector<int> kept = nms(ranked, cfg.nms_thresh);
    std::vector<RoI> rois;
    for (int idx : kept) {
        if (static_cast<int>(rois.size()) >= cfg.post_nms_top_n) break;
        rois.push_back({ranked[static_cast<std::size_t>(idx)].first, batch_index});
    }
    return rois;
}

}  // namespace psrd
