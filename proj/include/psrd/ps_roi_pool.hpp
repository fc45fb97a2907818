#pragma once

#include <cmath>
#include <memory>
#include <string>
#include <vector>

#include "psrd/box.hpp"
#include "psrd/ops.hpp"
#include "psrd/tensor.hpp"

namespace psrd {

/// Layout of the position-sensitive head: a k x k grid of bins over each
/// RoI, C foreground classes, and the stride that maps image coordinates
/// onto the score-map grid. Class maps carry k^2*(C+1) channels, regression
/// maps 4*k^2.
struct PSHeadConfig {
    int k = 3;
    int C = 3;
    int feature_stride = 8;

    int cls_channels() const { return k * k * (C + 1); }
    int reg_channels() const { return 4 * k * k; }
};

namespace detail {

// Half-open cell-center rule: cell index r is inside [lo, hi) iff
// lo <= r + 0.5 < hi. Returns begin/end clamped to [0, extent].
inline void bin_cell_range(Real lo, Real hi, int extent, int* begin, int* end) {
    int b = static_cast<int>(std::ceil(static_cast<double>(lo) - 0.5));
    int e = static_cast<int>(std::ceil(static_cast<double>(hi) - 0.5));
    *begin = std::max(0, b);
    *end = std::min(extent, e);
}

struct RoiGrid {
    Real x1, y1, bin_w, bin_h;
    int Hf, Wf;
};

inline RoiGrid roi_feature_grid(const Box& roi_box, const PSHeadConfig& ps, int Hf, int Wf) {
    RoiGrid grid;
    grid.x1 = roi_box.x1 / static_cast<Real>(ps.feature_stride);
    grid.y1 = roi_box.y1 / static_cast<Real>(ps.feature_stride);
    const Real x2 = roi_box.x2 / static_cast<Real>(ps.feature_stride);
    const Real y2 = roi_box.y2 / static_cast<Real>(ps.feature_stride);
    if (grid.x1 >= static_cast<Real>(Wf) || x2 <= Real(0) || grid.y1 >= static_cast<Real>(Hf) ||
        y2 <= Real(0)) {
        throw GeometryError("RoI lies fully outside the feature map");
    }
    grid.bin_w = (x2 - grid.x1) / static_cast<Real>(ps.k);
    grid.bin_h = (y2 - grid.y1) / static_cast<Real>(ps.k);
    grid.Hf = Hf;
    grid.Wf = Wf;
    return grid;
}

}  // namespace detail

/// Position-sensitive RoI pooling. The RoI is split into a k x k grid; bin
/// (i,j) for class c averages ONLY channel (i*k+j)*(C+1)+c over the feature
/// cells whose centers fall inside the bin. Empty bins yield 0.
inline Tensor ps_roi_pool(const Tensor& cls_maps, const RoI& roi, const PSHeadConfig& ps,
                          Graph* g = nullptr) {
    detail::require_rank(cls_maps, 4, "ps_roi_pool score maps");
    const int N = cls_maps.dim(0), Hf = cls_maps.dim(2), Wf = cls_maps.dim(3);
    if (ps.k < 1 || ps.C < 1) throw ContractError("ps_roi_pool requires k >= 1 and C >= 1");
    if (cls_maps.dim(1) != ps.cls_channels()) {
        throw DimensionError("ps_roi_pool expects " + std::to_string(ps.cls_channels()) +
                             " channels, got " + std::to_string(cls_maps.dim(1)));
    }
    if (roi.batch_index < 0 || roi.batch_index >= N) {
        throw ContractError("RoI batch index " + std::to_string(roi.batch_index) +
                            " out of range for batch of " + std::to_string(N));
    }
    const auto grid = detail::roi_feature_grid(roi.box, ps, Hf, Wf);
    const int k = ps.k, nc = ps.C + 1;

    Tensor out({nc, k, k});
    for (int i = 0; i < k; ++i) {
        int r0, r1;
        detail::bin_cell_range(grid.y1 + i * grid.bin_h, grid.y1 + (i + 1) * grid.bin_h, Hf, &r0, &r1);
        for (int j = 0; j < k; ++j) {
            int c0, c1;
            detail::bin_cell_range(grid.x1 + j * grid.bin_w, grid.x1 + (j + 1) * grid.bin_w, Wf, &c0, &c1);
            const int count = std::max(0, r1 - r0) * std::max(0, c1 - c0);
            if (count == 0) continue;
            for (int c = 0; c < nc; ++c) {
                const int ch = (i * k + j) * nc + c;
                Real acc = 0;
                for (int r = r0; r < r1; ++r)
                    for (int cc = c0; cc < c1; ++cc) acc += cls_maps.at4(roi.batch_index, ch, r, cc);
                out[(static_cast<std::int64_t>(c) * k + i) * k + j] = acc / static_cast<Real>(count);
            }
        }
    }

    if (g && cls_maps.requires_grad()) {
        out.set_requires_grad(true);
        Tensor mc = cls_maps, oc = out;
        const RoI roic = roi;
        const PSHeadConfig psc = ps;
        g->record([=]() mutable {
            const auto bgrid = detail::roi_feature_grid(roic.box, psc, Hf, Wf);
            const Real* dy = oc.grad();
            Real* dm = mc.grad();
            for (int i = 0; i < k; ++i) {
                int r0, r1;
                detail::bin_cell_range(bgrid.y1 + i * bgrid.bin_h, bgrid.y1 + (i + 1) * bgrid.bin_h,
                                       Hf, &r0, &r1);
                for (int j = 0; j < k; ++j) {
                    int c0, c1;
                    detail::bin_cell_range(bgrid.x1 + j * bgrid.bin_w,
                                           bgrid.x1 + (j + 1) * bgrid.bin_w, Wf, &c0, &c1);
                    const int count = std::max(0, r1 - r0) * std::max(0, c1 - c0);
                    if (count == 0) continue;
                    for (int c = 0; c < nc; ++c) {
                        const int ch = (i * k + j) * nc + c;
                        const Real go = dy[(static_cast<std::int64_t>(c) * k + i) * k + j] /
                                        static_cast<Real>(count);
                        for (int r = r0; r < r1; ++r)
                            for (int cc = c0; cc < c1; ++cc)
                                dm[mc.flat4(roic.batch_index, ch, r, cc)] += go;
                    }
                }
            }
        });
    }
    return out;
}

/// Averages pooled bin scores [C+1, k, k] over the k x k positions, then
/// softmaxes over the classes.
inline Tensor ps_vote_classify(const Tensor& pooled, Graph* g = nullptr) {
    detail::require_rank(pooled, 3, "ps_vote_classify input");
    const int nc = pooled.dim(0), k = pooled.dim(1);
    if (pooled.dim(2) != k) throw DimensionError("ps_vote_classify expects square bin grid");
    const int bins = k * k;

    Tensor votes({nc});
    for (int c = 0; c < nc; ++c) {
        Real acc = 0;
        for (int b = 0; b < bins; ++b) acc += pooled[static_cast<std::int64_t>(c) * bins + b];
        votes[c] = acc / static_cast<Real>(bins);
    }
    if (g && pooled.requires_grad()) {
        votes.set_requires_grad(true);
        Tensor pc = pooled, vc = votes;
        g->record([=]() mutable {
            const Real* dy = vc.grad();
            Real* dp = pc.grad();
            for (int c = 0; c < nc; ++c) {
                const Real go = dy[c] / static_cast<Real>(bins);
                for (int b = 0; b < bins; ++b) dp[static_cast<std::int64_t>(c) * bins + b] += go;
            }
        });
    }
    return softmax(votes, g);
}

/// Position-sensitive pooling of the 4*k^2 regression maps followed by the
/// average vote: one class-agnostic box delta per RoI. Bin (i,j) reads its
/// four coordinates from channels (i*k+j)*4 .. (i*k+j)*4+3; empty bins
/// contribute 0 to the vote.
inline Tensor ps_roi_pool_reg(const Tensor& reg_maps, const RoI& roi, const PSHeadConfig& ps,
                              Graph* g = nullptr) {
    detail::require_rank(reg_maps, 4, "ps_roi_pool_reg maps");
    const int N = reg_maps.dim(0), Hf = reg_maps.dim(2), Wf = reg_maps.dim(3);
    if (reg_maps.dim(1) != ps.reg_channels()) {
        throw DimensionError("ps_roi_pool_reg expects " + std::to_string(ps.reg_channels()) +
                             " channels, got " + std::to_string(reg_maps.dim(1)));
    }
    if (roi.batch_index < 0 || roi.batch_index >= N) {
        throw ContractError("RoI batch index " + std::to_string(roi.batch_index) +
                            " out of range for batch of " + std::to_string(N));
    }
    const auto grid = detail::roi_feature_grid(roi.box, ps, Hf, Wf);
    const int k = ps.k, bins = k * k;

    Tensor out({4});
    for (int i = 0; i < k; ++i) {
        int r0, r1;
        detail::bin_cell_range(grid.y1 + i * grid.bin_h, grid.y1 + (i + 1) * grid.bin_h, Hf, &r0, &r1);
        for (int j = 0; j < k; ++j) {
            int c0, c1;
            detail::bin_cell_range(grid.x1 + j * grid.bin_w, grid.x1 + (j + 1) * grid.bin_w, Wf, &c0, &c1);
            const int count = std::max(0, r1 - r0) * std::max(0, c1 - c0);
            if (count == 0) continue;
            for (int t = 0; t < 4; ++t) {
                const int ch = (i * k + j) * 4 + t;
                Real acc = 0;
                for (int r = r0; r < r1; ++r)
                    for (int cc = c0; cc < c1; ++cc) acc += reg_maps.at4(roi.batch_index, ch, r, cc);
                out[t] += acc / static_cast<Real>(count);
            }
        }
    }
    for (int t = 0; t < 4; ++t) out[t] /= static_cast<Real>(bins);

    if (g && reg_maps.requires_grad()) {
        out.set_requires_grad(true);
        Tensor mc = reg_maps, oc = out;
        const RoI roic = roi;
        const PSHeadConfig psc = ps;
        g->record([=]() mutable {
            const auto bgrid = detail::roi_feature_grid(roic.box, psc, Hf, Wf);
            const Real* dy = oc.grad();
            Real* dm = mc.grad();
            for (int i = 0; i < k; ++i) {
                int r0, r1;
                detail::bin_cell_range(bgrid.y1 + i * bgrid.bin_h, bgrid.y1 + (i + 1) * bgrid.bin_h,
                                       Hf, &r0, &r1);
                for (int j = 0; j < k; ++j) {
                    int c0, c1;
                    detail::bin_cell_range(bgrid.x1 + j * bgrid.bin_w,
                                           bgrid.x1 + (j + 1) * bgrid.bin_w, Wf, &c0, &c1);
                    const int count = std::max(0, r1 - r0) * std::max(0, c1 - c0);
                    if (count == 0) continue;
                    for (int t = 0; t < 4; ++t) {
                        const int ch = (i * k + j) * 4 + t;
                        const Real go = dy[t] / static_cast<Real>(bins * count);
                        for (int r = r0; r < r1; ++r)
                            for (int cc = c0; cc < c1; ++cc)
                                dm[mc.flat4(roic.batch_index, ch, r, cc)] += go;
                    }
                }
            }
        });
    }
    return out;
}

}  // namespace psrd
