#pragma once

#include <array>
#include <cmath>
#include <string>
#include <vector>

#include "psrd/box.hpp"
#include "psrd/ops.hpp"
#include "psrd/tensor.hpp"

namespace psrd {

/// Per-anchor training assignment. label: 1 positive, 0 negative, -1
/// ignored. Positive anchors carry the encoded delta toward their best
/// ground-truth box.
struct RpnTargets {
    std::vector<int> labels;
    std::vector<BoxDelta> reg_targets;
    std::vector<int> matched_gt;  // -1 when unmatched
};

/// Anchor labelling: positive when IoU with some ground truth reaches
/// pos_iou, or when the anchor is the best-IoU anchor for a ground-truth
/// box (with nonzero overlap); negative when its best IoU stays below
/// neg_iou; everything else is ignored.
inline RpnTargets assign_rpn_targets(const std::vector<Box>& anchors,
                                     const std::vector<Box>& gt_boxes, Real pos_iou, Real neg_iou) {
    if (pos_iou <= neg_iou) throw ContractError("assign_rpn_targets: pos_iou must exceed neg_iou");
    const std::size_t n = anchors.size();
    RpnTargets t;
    t.labels.assign(n, -1);
    t.reg_targets.assign(n, {0, 0, 0, 0});
    t.matched_gt.assign(n, -1);

    std::vector<Real> best_iou(n, 0);
    std::vector<int> best_gt(n, -1);
    std::vector<Real> gt_best_iou(gt_boxes.size(), 0);
    std::vector<int> gt_best_anchor(gt_boxes.size(), -1);
    for (std::size_t a = 0; a < n; ++a) {
        for (std::size_t g = 0; g < gt_boxes.size(); ++g) {
            const Real v = iou(anchors[a], gt_boxes[g]);
            if (v > best_iou[a]) {
                best_iou[a] = v;
                best_gt[a] = static_cast<int>(g);
            }
            if (v > gt_best_iou[g]) {
                gt_best_iou[g] = v;
                gt_best_anchor[g] = static_cast<int>(a);
            }
        }
    }

    for (std::size_t a = 0; a < n; ++a) {
        if (best_iou[a] < neg_iou) t.labels[a] = 0;
        if (best_gt[a] >= 0 && best_iou[a] >= pos_iou) t.labels[a] = 1;
    }
    for (std::size_t g = 0; g < gt_boxes.size(); ++g) {
        if (gt_best_anchor[g] >= 0 && gt_best_iou[g] > Real(0)) {
            const std::size_t a = static_cast<std::size_t>(gt_best_anchor[g]);
            t.labels[a] = 1;
            if (best_gt[a] < 0) best_gt[a] = static_cast<int>(g);
        }
    }
    for (std::size_t a = 0; a < n; ++a) {
        if (t.labels[a] == 1 && best_gt[a] >= 0) {
            t.matched_gt[a] = best_gt[a];
            t.reg_targets[a] = encode_box(anchors[a], gt_boxes[static_cast<std::size_t>(best_gt[a])]);
        }
    }
    return t;
}

/// Mean negative log-likelihood of the target class, taken on already
/// normalized probabilities (rows of probs sum to 1). Probabilities are
/// clamped at 1e-12 inside the log.
inline Tensor nll_loss(const Tensor& probs, const std::vector<int>& targets, Graph* g = nullptr) {
    detail::require_rank(probs, 2, "nll_loss probabilities");
    const int M = probs.dim(0), K = probs.dim(1);
    if (static_cast<int>(targets.size()) != M) {
        throw DimensionError("nll_loss: got " + std::to_string(targets.size()) + " targets for " +
                             std::to_string(M) + " rows");
    }
    constexpr Real kFloor = Real(1e-12);
    Real acc = 0;
    for (int i = 0; i < M; ++i) {
        const int tgt = targets[static_cast<std::size_t>(i)];
        if (tgt < 0 || tgt >= K) throw ContractError("nll_loss: target class out of range");
        acc -= std::log(std::max(probs[static_cast<std::int64_t>(i) * K + tgt], kFloor));
    }
    Tensor out = Tensor::scalar(acc / static_cast<Real>(M));
    if (g && probs.requires_grad()) {
        out.set_requires_grad(true);
        Tensor pc = probs, oc = out;
        auto tg = std::make_shared<std::vector<int>>(targets);
        g->record([=]() mutable {
            const Real dy = oc.grad()[0] / static_cast<Real>(M);
            Real* dp = pc.grad();
            for (int i = 0; i < M; ++i) {
                const std::int64_t idx = static_cast<std::int64_t>(i) * K + (*tg)[static_cast<std::size_t>(i)];
                dp[idx] -= dy / std::max(pc[idx], kFloor);
            }
        });
    }
    return out;
}

/// Smooth-L1 (0.5x^2 inside |x|<=1, |x|-0.5 outside) summed over all
/// coordinates of pred vs target, normalized by `normalizer`. Rows are
/// positive samples only; an empty pred yields an exact 0.
inline Tensor smooth_l1_loss(const Tensor& pred, const Tensor& target, int normalizer,
                             Graph* g = nullptr) {
    if (!pred.defined()) return Tensor::scalar(0);
    if (pred.shape() != target.shape()) {
        throw DimensionError("smooth_l1_loss shape mismatch: " + shape_str(pred.shape()) + " vs " +
                             shape_str(target.shape()));
    }
    const Real norm = static_cast<Real>(std::max(1, normalizer));
    const std::int64_t n = pred.numel();
    Real acc = 0;
    for (std::int64_t i = 0; i < n; ++i) {
        const Real d = pred[i] - target[i];
        const Real ad = std::abs(d);
        acc += ad <= Real(1) ? Real(0.5) * d * d : ad - Real(0.5);
    }
    Tensor out = Tensor::scalar(acc / norm);
    if (g && pred.requires_grad()) {
        out.set_requires_grad(true);
        Tensor pc = pred, tc = target, oc = out;
        g->record([=]() mutable {
            const Real dy = oc.grad()[0] / norm;
            Real* dp = pc.grad();
            for (std::int64_t i = 0; i < n; ++i) {
                const Real d = pc[i] - tc[i];
                dp[i] += dy * (std::abs(d) <= Real(1) ? d : (d > Real(0) ? Real(1) : Real(-1)));
            }
        });
    }
    return out;
}

/// One head's sampled batch. cls_probs rows are probability distributions;
/// reg rows cover only the positive samples.
struct HeadBatch {
    Tensor cls_probs;              // [M, K]
    std::vector<int> cls_targets;  // length M
    Tensor reg_pred;               // [P, 4] or undefined when P == 0
    Tensor reg_targets;            // same shape as reg_pred
};

struct LossReport {
    Tensor rpn_cls, rpn_reg, roi_cls, roi_reg;
    Tensor total;

    Real total_value() const { return total[0]; }
};

/// Two-term detection loss per head (cross-entropy + lambda * smooth-L1 on
/// positives), summed over the RPN and RoI heads.
inline LossReport detection_loss(const HeadBatch& rpn, const HeadBatch& roi, Real lambda,
                                 Graph* g = nullptr) {
    if (lambda <= Real(0)) throw ContractError("detection_loss: lambda must be positive");
    LossReport r;
    r.rpn_cls = nll_loss(rpn.cls_probs, rpn.cls_targets, g);
    r.rpn_reg = smooth_l1_loss(rpn.reg_pred, rpn.reg_targets,
                               rpn.reg_pred.defined() ? rpn.reg_pred.dim(0) : 0, g);
    r.roi_cls = nll_loss(roi.cls_probs, roi.cls_targets, g);
    r.roi_reg = smooth_l1_loss(roi.reg_pred, roi.reg_targets,
                               roi.reg_pred.defined() ? roi.reg_pred.dim(0) : 0, g);
    Tensor reg_sum = add(scale(r.rpn_reg, lambda, g), scale(r.roi_reg, lambda, g), g);
    r.total = add(add(r.rpn_cls, r.roi_cls, g), reg_sum, g);
    return r;
}

}  // namespace psrd
