#pragma once

#include <chrono>
#include <cmath>
#include <functional>
#include <string>
#include <vector>

#include "psrd/loss.hpp"
#include "psrd/net.hpp"
#include "psrd/ops.hpp"
#include "psrd/ps_roi_pool.hpp"
#include "psrd/rng.hpp"
#include "psrd/tensor.hpp"

namespace psrd {

/// One finite-difference test case: leaf tensors plus a re-runnable forward
/// closure over them. The closure must be deterministic; pass the Graph
/// only when recording.
struct GradCheckInstance {
    std::vector<Tensor> inputs;
    std::function<Tensor(Graph*)> forward;
};

namespace gradcheck_detail {

#if defined(PSRD_REAL_FLOAT)
inline constexpr double kStep = 1e-3;
inline constexpr double kDefaultTol = 1e-2;
#else
inline constexpr double kStep = 1e-5;
inline constexpr double kDefaultTol = 1e-4;
#endif

inline Tensor randn_tensor(std::vector<int> shape, Rng& rng, double stddev = 1.0) {
    Tensor t(std::move(shape));
    for (std::int64_t i = 0; i < t.numel(); ++i) t[i] = static_cast<Real>(rng.normal(0.0, stddev));
    return t;
}

}  // namespace gradcheck_detail

/// Compares analytic adjoints against central finite differences of a
/// random-weighted scalarization of the output. Returns the maximum
/// relative error over every element of every input.
inline double gradcheck_max_rel_error(GradCheckInstance& inst, Rng& rng) {
    for (Tensor& t : inst.inputs) t.set_requires_grad(true);

    Graph g;
    Tensor out = inst.forward(&g);
    Tensor weights = gradcheck_detail::randn_tensor(out.shape(), rng);
    weights.set_requires_grad(false);

    auto scalarize = [&](const Tensor& o) {
        Real acc = 0;
        for (std::int64_t i = 0; i < o.numel(); ++i) acc += o[i] * weights[i];
        return acc;
    };

    Tensor loss = out.is_scalar() ? out : sum(mul(out, weights, &g), &g);
    if (out.is_scalar()) {
        weights = Tensor::ones(out.shape());
    }
    for (Tensor& t : inst.inputs) t.zero_grad();
    backward(loss, g);

    std::vector<std::vector<Real>> analytic;
    for (Tensor& t : inst.inputs) analytic.push_back(t.grad_values());

    const double h = gradcheck_detail::kStep;
    double max_rel = 0;
    for (std::size_t ti = 0; ti < inst.inputs.size(); ++ti) {
        Tensor& t = inst.inputs[ti];
        for (std::int64_t i = 0; i < t.numel(); ++i) {
            const Real saved = t[i];
            t[i] = saved + static_cast<Real>(h);
            const double f_plus = static_cast<double>(scalarize(inst.forward(nullptr)));
            t[i] = saved - static_cast<Real>(h);
            const double f_minus = static_cast<double>(scalarize(inst.forward(nullptr)));
            t[i] = saved;
            const double fd = (f_plus - f_minus) / (2 * h);
            const double an = static_cast<double>(analytic[ti][static_cast<std::size_t>(i)]);
            const double denom = std::max({std::abs(an), std::abs(fd), 1e-3});
            max_rel = std::max(max_rel, std::abs(an - fd) / denom);
        }
    }
    return max_rel;
}

struct GradCheck {
    std::string name;
    std::function<GradCheckInstance(Rng&)> make;
};

struct GradCheckReport {
    std::string name;
    double max_err = 0;
    double tol = gradcheck_detail::kDefaultTol;
    int instances = 0;
    bool pass = false;
    double seconds = 0;
};

inline GradCheckReport run_gradcheck(const GradCheck& check, int instances = 20,
                                     double tol = gradcheck_detail::kDefaultTol,
                                     std::uint64_t seed = 1234) {
    GradCheckReport report;
    report.name = check.name;
    report.tol = tol;
    report.instances = instances;
    const auto t0 = std::chrono::steady_clock::now();
    Rng rng(seed);
    for (int i = 0; i < instances; ++i) {
        Rng inst_rng = rng.fork(static_cast<std::uint64_t>(i) + 1);
        GradCheckInstance inst = check.make(inst_rng);
        report.max_err = std::max(report.max_err, gradcheck_max_rel_error(inst, inst_rng));
    }
    report.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    report.pass = report.max_err < tol;
    return report;
}

namespace gradcheck_detail {

// keeps random values away from the ReLU / max-pool / smooth-L1 kinks
inline Tensor randn_away_from(std::vector<int> shape, Rng& rng, double avoid, double margin) {
    Tensor t(std::move(shape));
    for (std::int64_t i = 0; i < t.numel(); ++i) {
        double v;
        do {
            v = rng.normal();
        } while (std::abs(std::abs(v) - avoid) < margin);
        t[i] = static_cast<Real>(v);
    }
    return t;
}

inline GradCheckInstance make_block_instance(BlockVariant variant, Rng& rng) {
    GradCheckInstance inst;
    Tensor x = randn_tensor({1, 3, 4, 4}, rng);
    Block blk;
    blk.conv1 = {randn_tensor({4, 3, 3, 3}, rng, 0.4), Tensor(), 1, 1};
    blk.bn1 = BNParams::make(4);
    blk.conv2 = {randn_tensor({4, 4, 3, 3}, rng, 0.4), Tensor(), 1, 1};
    blk.bn2 = BNParams::make(4);
    blk.has_proj = true;
    blk.proj = {randn_tensor({4, 3, 1, 1}, rng, 0.6), Tensor(), 1, 0};
    blk.proj_bn = BNParams::make(4);
    for (BNParams* bn : {&blk.bn1, &blk.bn2, &blk.proj_bn}) {
        for (std::int64_t i = 0; i < bn->gamma.numel(); ++i) {
            bn->gamma[i] = static_cast<Real>(rng.uniform(0.5, 1.5));
            bn->beta[i] = static_cast<Real>(rng.uniform(-0.5, 0.5));
        }
    }
    inst.inputs = {x, blk.conv1.w, blk.bn1.gamma, blk.bn1.beta, blk.conv2.w,
                   blk.bn2.gamma, blk.bn2.beta, blk.proj.w, blk.proj_bn.gamma, blk.proj_bn.beta};
    auto blk_holder = std::make_shared<Block>(blk);
    inst.forward = [x, blk_holder, variant](Graph* g) {
        DropoutPlacement dp;  // none
        return forward_block(x, *blk_holder, variant, true, dp, nullptr, g);
    };
    return inst;
}

}  // namespace gradcheck_detail

/// The named finite-difference suite behind `gradcheck`: every
/// differentiable op, the three block wirings, the position-sensitive head
/// path and the detection loss.
inline std::vector<GradCheck> standard_gradchecks() {
    using gradcheck_detail::randn_away_from;
    using gradcheck_detail::randn_tensor;
    std::vector<GradCheck> checks;

    checks.push_back({"conv2d", [](Rng& rng) {
        GradCheckInstance inst;
        Tensor x = randn_tensor({1, 2, 6, 6}, rng);
        Tensor w = randn_tensor({3, 2, 3, 3}, rng, 0.5);
        Tensor b = randn_tensor({3}, rng, 0.5);
        const int stride = rng.uniform_int(1, 2);
        const int pad = rng.uniform_int(0, 1);
        inst.inputs = {x, w, b};
        inst.forward = [x, w, b, stride, pad](Graph* g) { return conv2d(x, w, b, stride, pad, g); };
        return inst;
    }});

    checks.push_back({"batch_norm", [](Rng& rng) {
        GradCheckInstance inst;
        Tensor x = randn_tensor({2, 3, 4, 4}, rng);
        auto bn = std::make_shared<BNParams>(BNParams::make(3));
        for (int c = 0; c < 3; ++c) {
            bn->gamma[c] = static_cast<Real>(rng.uniform(0.5, 1.5));
            bn->beta[c] = static_cast<Real>(rng.uniform(-0.5, 0.5));
        }
        inst.inputs = {x, bn->gamma, bn->beta};
        inst.forward = [x, bn](Graph* g) { return batch_norm(x, *bn, true, g); };
        return inst;
    }});

    checks.push_back({"batch_norm_eval", [](Rng& rng) {
        GradCheckInstance inst;
        Tensor x = randn_tensor({2, 3, 4, 4}, rng);
        auto bn = std::make_shared<BNParams>(BNParams::make(3));
        for (int c = 0; c < 3; ++c) {
            bn->gamma[c] = static_cast<Real>(rng.uniform(0.5, 1.5));
            bn->beta[c] = static_cast<Real>(rng.uniform(-0.5, 0.5));
            bn->running_mean[c] = static_cast<Real>(rng.uniform(-0.5, 0.5));
            bn->running_var[c] = static_cast<Real>(rng.uniform(0.5, 2.0));
        }
        inst.inputs = {x, bn->gamma, bn->beta};
        inst.forward = [x, bn](Graph* g) { return batch_norm(x, *bn, false, g); };
        return inst;
    }});

    checks.push_back({"relu", [](Rng& rng) {
        GradCheckInstance inst;
        Tensor x = randn_away_from({2, 3, 5}, rng, 0.0, 0.01);
        inst.inputs = {x};
        inst.forward = [x](Graph* g) { return relu(x, g); };
        return inst;
    }});

    checks.push_back({"max_pool", [](Rng& rng) {
        GradCheckInstance inst;
        Tensor x = randn_tensor({1, 2, 6, 6}, rng);
        inst.inputs = {x};
        inst.forward = [x](Graph* g) { return max_pool2d(x, 2, 2, g); };
        return inst;
    }});

    checks.push_back({"dropout_eval", [](Rng& rng) {
        GradCheckInstance inst;
        Tensor x = randn_tensor({3, 7}, rng);
        inst.inputs = {x};
        inst.forward = [x](Graph* g) {
            Rng eval_rng(0);  // unused in eval mode
            return dropout(x, Real(0.5), false, eval_rng, g);
        };
        return inst;
    }});

    checks.push_back({"softmax", [](Rng& rng) {
        GradCheckInstance inst;
        Tensor x = randn_tensor({4, 5}, rng);
        inst.inputs = {x};
        inst.forward = [x](Graph* g) { return softmax(x, g); };
        return inst;
    }});

    checks.push_back({"block_original", [](Rng& rng) {
        return gradcheck_detail::make_block_instance(BlockVariant::kOriginal, rng);
    }});
    checks.push_back({"block_bn_after_add", [](Rng& rng) {
        return gradcheck_detail::make_block_instance(BlockVariant::kBnAfterAdd, rng);
    }});
    checks.push_back({"block_no_second_relu", [](Rng& rng) {
        return gradcheck_detail::make_block_instance(BlockVariant::kNoSecondRelu, rng);
    }});

    checks.push_back({"ps_roi_pool", [](Rng& rng) {
        // full head path: pool -> average vote -> softmax
        GradCheckInstance inst;
        PSHeadConfig ps;
        ps.k = 2;
        ps.C = 2;
        ps.feature_stride = 4;
        Tensor maps = randn_tensor({1, ps.cls_channels(), 6, 6}, rng);
        const Real x1 = static_cast<Real>(rng.uniform(0.0, 10.0));
        const Real y1 = static_cast<Real>(rng.uniform(0.0, 10.0));
        const RoI roi{{x1, y1, x1 + static_cast<Real>(rng.uniform(6.0, 12.0)),
                       y1 + static_cast<Real>(rng.uniform(6.0, 12.0))},
                      0};
        inst.inputs = {maps};
        inst.forward = [maps, roi, ps](Graph* g) {
            return ps_vote_classify(ps_roi_pool(maps, roi, ps, g), g);
        };
        return inst;
    }});

    checks.push_back({"ps_vote_classify", [](Rng& rng) {
        GradCheckInstance inst;
        Tensor pooled = randn_tensor({3, 2, 2}, rng);
        inst.inputs = {pooled};
        inst.forward = [pooled](Graph* g) { return ps_vote_classify(pooled, g); };
        return inst;
    }});

    checks.push_back({"detection_loss", [](Rng& rng) {
        GradCheckInstance inst;
        Tensor rpn_logits = randn_tensor({6, 2}, rng);
        Tensor roi_logits = randn_tensor({5, 4}, rng);
        Tensor rpn_reg = randn_tensor({2, 4}, rng, 0.2);
        Tensor roi_reg = randn_tensor({3, 4}, rng, 0.2);
        auto rpn_tgt = std::make_shared<std::vector<int>>();
        auto roi_tgt = std::make_shared<std::vector<int>>();
        for (int i = 0; i < 6; ++i) rpn_tgt->push_back(rng.uniform_int(0, 1));
        for (int i = 0; i < 5; ++i) roi_tgt->push_back(rng.uniform_int(0, 3));
        Tensor rpn_reg_tgt = randn_tensor({2, 4}, rng, 0.2);
        Tensor roi_reg_tgt = randn_tensor({3, 4}, rng, 0.2);
        inst.inputs = {rpn_logits, roi_logits, rpn_reg, roi_reg};
        inst.forward = [=](Graph* g) {
            HeadBatch rpn{softmax(rpn_logits, g), *rpn_tgt, rpn_reg, rpn_reg_tgt};
            HeadBatch roi{softmax(roi_logits, g), *roi_tgt, roi_reg, roi_reg_tgt};
            return detection_loss(rpn, roi, Real(1), g).total;
        };
        return inst;
    }});

    return checks;
}

}  // namespace psrd
