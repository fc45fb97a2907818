#pragma once

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <string>
#include <vector>

#include "psrd/checkpoint.hpp"
#include "psrd/config.hpp"
#include "psrd/detector.hpp"
#include "psrd/eval.hpp"
#include "psrd/loss.hpp"
#include "psrd/net.hpp"
#include "psrd/optim.hpp"
#include "psrd/proposals.hpp"
#include "psrd/synth.hpp"

namespace psrd {

struct TrainResult {
    std::vector<std::string> metric_lines;  // "epoch total_loss val_mAP"
    Real final_val_map = 0;
    std::string checkpoint_path;
    std::string metrics_path;
};

namespace train_detail {

inline Tensor batch_of_one(const Tensor& chw) {
    Tensor out({1, chw.dim(0), chw.dim(1), chw.dim(2)});
    out.values() = chw.values();
    return out;
}

inline std::vector<Box> gt_boxes_of(const Scene& scene) {
    std::vector<Box> boxes;
    for (const auto& [cls, box] : scene.annotations) boxes.push_back(box);
    return boxes;
}

// anchor list index -> flat positions of its objectness / regression cells
struct AnchorIndexer {
    int Wf, A;
    void locate(int anchor_idx, int* i, int* j, int* a) const {
        *a = anchor_idx % A;
        const int cell = anchor_idx / A;
        *j = cell % Wf;
        *i = cell / Wf;
    }
};

inline LossReport train_step(Network& net, const Scene& scene,
                             const std::vector<Box>& anchor_boxes, const RunConfig& cfg,
                             Rng& rng, SgdState& state, Real lr) {
    Graph g;
    const Tensor img = batch_of_one(scene.image);
    NetOutputs out = forward_all(net, img, true, &rng, &g);
    const int Hf = out.feat.dim(2), Wf = out.feat.dim(3);
    const int A = net.cfg.anchors_per_cell;
    const AnchorIndexer indexer{Wf, A};

    // --- RPN batch ---
    const std::vector<Box> gts = gt_boxes_of(scene);
    const RpnTargets targets = assign_rpn_targets(anchor_boxes, gts, cfg.train.pos_iou, cfg.train.neg_iou);
    std::vector<int> pos, neg;
    for (std::size_t a = 0; a < targets.labels.size(); ++a) {
        if (targets.labels[a] == 1) pos.push_back(static_cast<int>(a));
        else if (targets.labels[a] == 0) neg.push_back(static_cast<int>(a));
    }
    rng.shuffle(pos);
    rng.shuffle(neg);
    const int want_pos = static_cast<int>(cfg.train.rpn_batch * cfg.train.rpn_fg_fraction);
    const int n_pos = std::min<int>(static_cast<int>(pos.size()), want_pos);
    const int n_neg = std::min<int>(static_cast<int>(neg.size()), cfg.train.rpn_batch - n_pos);
    std::vector<int> sampled(pos.begin(), pos.begin() + n_pos);
    sampled.insert(sampled.end(), neg.begin(), neg.begin() + n_neg);

    HeadBatch rpn_batch;
    {
        std::vector<std::int64_t> idx;
        rpn_batch.cls_targets.reserve(sampled.size());
        for (int a_idx : sampled) {
            int i, j, a;
            indexer.locate(a_idx, &i, &j, &a);
            idx.push_back(out.rpn_obj.flat4(0, 2 * a, i, j));
            idx.push_back(out.rpn_obj.flat4(0, 2 * a + 1, i, j));
            rpn_batch.cls_targets.push_back(targets.labels[static_cast<std::size_t>(a_idx)]);
        }
        Tensor logits = gather(out.rpn_obj, idx, {static_cast<int>(sampled.size()), 2}, &g);
        rpn_batch.cls_probs = softmax(logits, &g);
    }
    const Real inv_sigma = Real(1) / cfg.train.reg_sigma;
    if (n_pos > 0) {
        std::vector<std::int64_t> idx;
        std::vector<Real> tgt;
        for (int p = 0; p < n_pos; ++p) {
            int i, j, a;
            const int a_idx = sampled[static_cast<std::size_t>(p)];
            indexer.locate(a_idx, &i, &j, &a);
            for (int t = 0; t < 4; ++t) {
                idx.push_back(out.rpn_reg.flat4(0, 4 * a + t, i, j));
                tgt.push_back(inv_sigma *
                              targets.reg_targets[static_cast<std::size_t>(a_idx)][static_cast<std::size_t>(t)]);
            }
        }
        rpn_batch.reg_pred = scale(gather(out.rpn_reg, idx, {n_pos, 4}, &g), inv_sigma, &g);
        rpn_batch.reg_targets = Tensor::from_values({n_pos, 4}, tgt);
    }

    // --- RoI batch (proposals are sampled detached from the graph) ---
    ProposalConfig pcfg = cfg.rpn;
    pcfg.img_w = static_cast<Real>(img.dim(3));
    pcfg.img_h = static_cast<Real>(img.dim(2));
    std::vector<RoI> rois = rpn_propose(out.rpn_obj, out.rpn_reg, anchor_boxes, pcfg);
    if (cfg.train.include_gt_rois) {
        // ground-truth boxes plus jittered copies keep the foreground quota
        // filled even while the RPN is still cold
        for (const Box& b : gts) {
            rois.push_back({b, 0});
            for (int rep = 0; rep < 3; ++rep) {
                const Real dx = static_cast<Real>(rng.uniform(-0.15, 0.15)) * b.width();
                const Real dy = static_cast<Real>(rng.uniform(-0.15, 0.15)) * b.height();
                const Real sw = static_cast<Real>(std::exp(rng.uniform(-0.15, 0.15)));
                const Real sh = static_cast<Real>(std::exp(rng.uniform(-0.15, 0.15)));
                const Real hw = b.width() * sw / 2, hh = b.height() * sh / 2;
                Box jit{b.cx() + dx - hw, b.cy() + dy - hh, b.cx() + dx + hw, b.cy() + dy + hh};
                jit = clip_box(jit, pcfg.img_w, pcfg.img_h);
                if (jit.width() > Real(2) && jit.height() > Real(2)) rois.push_back({jit, 0});
            }
        }
    }

    struct RoiSample {
        RoI roi;
        int cls;     // 0 = background
        int gt_idx;  // matched gt for foreground
    };
    std::vector<RoiSample> fg, bg;
    for (const RoI& roi : rois) {
        Real best_iou = 0;
        int best_g = -1;
        for (std::size_t gidx = 0; gidx < gts.size(); ++gidx) {
            const Real v = iou(roi.box, gts[gidx]);
            if (v > best_iou) {
                best_iou = v;
                best_g = static_cast<int>(gidx);
            }
        }
        if (best_g >= 0 && best_iou >= cfg.train.roi_fg_iou) {
            fg.push_back({roi, scene.annotations[static_cast<std::size_t>(best_g)].first, best_g});
        } else {
            bg.push_back({roi, 0, -1});
        }
    }
    rng.shuffle(fg);
    rng.shuffle(bg);
    const int want_fg = static_cast<int>(cfg.train.roi_batch * cfg.train.roi_fg_fraction);
    const int n_fg = std::min<int>(static_cast<int>(fg.size()), want_fg);
    const int n_bg = std::min<int>(static_cast<int>(bg.size()), cfg.train.roi_batch - n_fg);
    std::vector<RoiSample> roi_samples(fg.begin(), fg.begin() + n_fg);
    roi_samples.insert(roi_samples.end(), bg.begin(), bg.begin() + n_bg);
    if (roi_samples.empty()) throw ContractError("train_step: no RoIs to sample");

    HeadBatch roi_batch;
    {
        std::vector<Tensor> prob_rows;
        std::vector<Tensor> reg_rows;
        std::vector<Real> reg_tgt;
        for (const RoiSample& s : roi_samples) {
            Tensor pooled = ps_roi_pool(out.cls_maps, s.roi, net.cfg.ps, &g);
            prob_rows.push_back(ps_vote_classify(pooled, &g));
            roi_batch.cls_targets.push_back(s.cls);
            if (s.cls > 0) {
                reg_rows.push_back(ps_roi_pool_reg(out.reg_maps, s.roi, net.cfg.ps, &g));
                const BoxDelta d = encode_box(s.roi.box, gts[static_cast<std::size_t>(s.gt_idx)]);
                for (Real v : d) reg_tgt.push_back(inv_sigma * v);
            }
        }
        roi_batch.cls_probs = stack_rows(prob_rows, &g);
        if (!reg_rows.empty()) {
            roi_batch.reg_pred = scale(stack_rows(reg_rows, &g), inv_sigma, &g);
            roi_batch.reg_targets = Tensor::from_values({static_cast<int>(reg_rows.size()), 4}, reg_tgt);
        }
    }

    LossReport report = detection_loss(rpn_batch, roi_batch, cfg.train.lambda, &g);
    if (!std::isfinite(report.total_value())) {
        throw NumericError("training diverged: non-finite loss on image " + scene.image_id);
    }
    backward(report.total, g);
    OptimConfig opt = cfg.optim;
    sgd_step(net.params, state, opt, lr);
    net.params.zero_grads();
    return report;
}

inline Real validation_map(Network& net, const std::vector<Scene>& scenes, const RunConfig& cfg) {
    std::map<std::string, std::vector<Detection>> dets;
    std::map<std::string, GroundTruth> gt;
    const DetectorConfig dcfg = cfg.detector_config();
    for (const Scene& scene : scenes) {
        dets[scene.image_id] = detect(net, batch_of_one(scene.image), cfg.anchors, dcfg);
        gt[scene.image_id] = scene.annotations;
    }
    return evaluate_detections(dets, gt, cfg.eval_iou, cfg.net.ps.C).map;
}

}  // namespace train_detail

/// Trains backbone + RPN + heads jointly with summed losses. Per epoch:
/// seeded shuffle, one SGD step per image, validation mAP, checkpoint and
/// metrics rewrite. Fully deterministic for a fixed seed and config. On
/// divergence the last epoch's checkpoint stays on disk.
inline TrainResult train(const Dataset& ds, const RunConfig& run_cfg, const std::string& out_dir) {
    if (ds.train.empty()) throw ContractError("train: dataset has no training scenes");
    RunConfig cfg = run_cfg;
    cfg.finalize();
    cfg.optim.validate();

    namespace fs = std::filesystem;
    std::error_code ec;
    fs::create_directories(out_dir, ec);
    if (ec) throw IoError("cannot create output directory " + out_dir + ": " + ec.message());

    Rng master(cfg.optim.seed);
    Rng init_rng = master.fork(1);
    Rng step_rng = master.fork(2);
    Network net = build_network(cfg.net, init_rng);
    SgdState state;

    const int H = ds.spec.height, W = ds.spec.width;
    const int stride = net.cfg.ps.feature_stride;
    if (H % stride != 0 || W % stride != 0) {
        throw ConfigError("image size " + std::to_string(W) + "x" + std::to_string(H) +
                          " is not divisible by the feature stride " + std::to_string(stride));
    }
    const std::vector<Box> anchor_boxes = generate_anchors(cfg.anchors, H / stride, W / stride, stride);

    TrainResult result;
    result.checkpoint_path = (fs::path(out_dir) / "checkpoint.bin").string();
    result.metrics_path = (fs::path(out_dir) / "metrics.txt").string();

    auto write_state = [&]() {
        save_checkpoint(net.params.tensors, result.checkpoint_path);
        std::ofstream mf(result.metrics_path, std::ios::trunc);
        if (!mf) throw IoError("cannot write metrics file " + result.metrics_path);
        for (const std::string& line : result.metric_lines) mf << line << '\n';
    };
    write_state();  // epoch 0 state: initialization only

    // schedule: one warmup epoch at lr/10 for longer runs, then the base
    // rate, then x0.1 from 2/3 of the epochs onward
    const int decay_epoch = (2 * cfg.optim.epochs) / 3;
    const bool warmup = cfg.optim.epochs >= 5;
    Real best_val = Real(-1);
    std::map<std::string, Tensor> best_params;
    for (int epoch = 0; epoch < cfg.optim.epochs; ++epoch) {
        Real lr = cfg.optim.lr;
        if (warmup && epoch == 0) lr *= Real(0.1);
        if (cfg.optim.epochs >= 3 && epoch >= decay_epoch) lr *= Real(0.1);
        std::vector<int> order(ds.train.size());
        for (std::size_t i = 0; i < order.size(); ++i) order[i] = static_cast<int>(i);
        Rng shuffle_rng = master.fork(100 + static_cast<std::uint64_t>(epoch));
        shuffle_rng.shuffle(order);

        Real loss_sum = 0;
        for (int idx : order) {
            const LossReport report = train_detail::train_step(net, ds.train[static_cast<std::size_t>(idx)],
                                                               anchor_boxes, cfg, step_rng, state, lr);
            loss_sum += report.total_value();
        }
        const Real mean_loss = loss_sum / static_cast<Real>(ds.train.size());
        const Real val_map = train_detail::validation_map(net, ds.val, cfg);

        char line[96];
        std::snprintf(line, sizeof(line), "%d %.4f %.4f", epoch + 1, static_cast<double>(mean_loss),
                      static_cast<double>(val_map));
        result.metric_lines.emplace_back(line);
        result.final_val_map = val_map;
        if (val_map > best_val) {
            best_val = val_map;
            best_params.clear();
            for (const auto& [name, t] : net.params.tensors) best_params.emplace(name, t.clone());
        }
        write_state();
    }

    // the shipped checkpoint is the best validation epoch, not the last one
    if (!best_params.empty()) {
        save_checkpoint(best_params, result.checkpoint_path);
        result.final_val_map = best_val;
    }
    if (cfg.optim.epochs == 0) {
        result.final_val_map = ds.val.empty() ? Real(0) : train_detail::validation_map(net, ds.val, cfg);
    }
    return result;
}

struct VariantSpec {
    std::string name;
    RunConfig cfg;
};

/// Trains every variant with the shared dataset and seed and tabulates the
/// final validation mAP, one row per variant in declaration order.
inline std::string ablation_sweep(const std::vector<VariantSpec>& variants, const Dataset& ds,
                                  const std::string& out_dir) {
    if (variants.size() < 2) throw ContractError("ablation_sweep needs at least 2 variants");
    std::string table = "variant  mAP\n";
    for (const VariantSpec& v : variants) {
        const TrainResult r = train(ds, v.cfg, out_dir + "/" + v.name);
        char row[128];
        std::snprintf(row, sizeof(row), "%s  %.4f\n", v.name.c_str(), static_cast<double>(r.final_val_map));
        table += row;
    }
    std::ofstream tf(std::filesystem::path(out_dir) / "ablation.txt");
    if (!tf) throw IoError("cannot write ablation table in " + out_dir);
    tf << table;
    return table;
}

}  // namespace psrd
