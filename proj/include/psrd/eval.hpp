#pragma once

#include <algorithm>
#include <cstdio>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "psrd/box.hpp"
#include "psrd/detector.hpp"
#include "psrd/error.hpp"

namespace psrd {

/// Ground truth for one image: (class_id, box) pairs.
using GroundTruth = std::vector<std::pair<int, Box>>;

/// Greedy matching for one image. Detections must arrive sorted by
/// descending score (ties in input order). Each detection claims the
/// unmatched same-class ground-truth box of highest IoU when that IoU
/// reaches iou_thresh (true positive), otherwise it is a false positive.
/// A ground-truth box matches at most one detection.
inline std::vector<bool> match_detections(const std::vector<Detection>& dets,
                                          const GroundTruth& gt, Real iou_thresh) {
    std::vector<bool> matched(gt.size(), false);
    std::vector<bool> labels;
    labels.reserve(dets.size());
    for (const Detection& d : dets) {
        int best = -1;
        Real best_iou = 0;
        for (std::size_t g = 0; g < gt.size(); ++g) {
            if (matched[g] || gt[g].first != d.class_id) continue;
            const Real v = iou(d.box, gt[g].second);
            if (v > best_iou) {
                best_iou = v;
                best = static_cast<int>(g);
            }
        }
        if (best >= 0 && best_iou >= iou_thresh) {
            matched[static_cast<std::size_t>(best)] = true;
            labels.push_back(true);
        } else {
            labels.push_back(false);
        }
    }
    return labels;
}

/// Area under the precision envelope (all-point interpolation): sum over
/// recall steps of delta-recall times the maximum precision at or beyond
/// that recall. num_gt = 0 yields 0 (the caller excludes the undefined
/// no-gt-no-detection case from the mean).
inline Real average_precision(const std::vector<bool>& labels, int num_gt) {
    if (num_gt < 0) throw ContractError("average_precision: num_gt must be nonnegative");
    if (num_gt == 0 || labels.empty()) return Real(0);
    const std::size_t n = labels.size();
    std::vector<Real> precision(n), recall(n);
    int tp = 0;
    for (std::size_t i = 0; i < n; ++i) {
        if (labels[i]) ++tp;
        precision[i] = static_cast<Real>(tp) / static_cast<Real>(i + 1);
        recall[i] = static_cast<Real>(tp) / static_cast<Real>(num_gt);
    }
    // precision envelope from the right
    for (std::size_t i = n - 1; i > 0; --i) precision[i - 1] = std::max(precision[i - 1], precision[i]);
    Real ap = 0, prev_recall = 0;
    for (std::size_t i = 0; i < n; ++i) {
        if (recall[i] > prev_recall) {
            ap += (recall[i] - prev_recall) * precision[i];
            prev_recall = recall[i];
        }
    }
    return ap;
}

/// Unweighted mean over classes whose AP is defined.
inline Real mean_ap(const std::vector<std::optional<Real>>& per_class_ap) {
    Real sum = 0;
    int count = 0;
    for (const auto& ap : per_class_ap) {
        if (ap.has_value()) {
            sum += *ap;
            ++count;
        }
    }
    if (count == 0) throw EvalError("mAP undefined: no class has ground truth or detections");
    return sum / static_cast<Real>(count);
}

struct EvalResult {
    std::vector<std::optional<Real>> per_class_ap;  // index 0 = class 1
    Real map = 0;
};

/// VOC-style evaluation over an image set: per class, detections are ranked
/// globally by score (ties in input order) and matched greedily against the
/// unmatched ground truth of their image.
inline EvalResult evaluate_detections(const std::map<std::string, std::vector<Detection>>& dets,
                                      const std::map<std::string, GroundTruth>& gt,
                                      Real iou_thresh, int num_classes) {
    EvalResult result;
    result.per_class_ap.resize(static_cast<std::size_t>(num_classes));
    for (int cls = 1; cls <= num_classes; ++cls) {
        int num_gt = 0;
        for (const auto& [id, objs] : gt)
            for (const auto& [c, box] : objs)
                if (c == cls) ++num_gt;

        struct Entry {
            Real score;
            int seq;
            const std::string* image_id;
            const Detection* det;
        };
        std::vector<Entry> entries;
        int seq = 0;
        for (const auto& [id, list] : dets) {
            for (const Detection& d : list) {
                if (d.class_id == cls) entries.push_back({d.score, seq, &id, &d});
                ++seq;
            }
        }
        std::sort(entries.begin(), entries.end(), [](const Entry& a, const Entry& b) {
            if (a.score != b.score) return a.score > b.score;
            return a.seq < b.seq;
        });

        if (num_gt == 0 && entries.empty()) continue;  // undefined, excluded from the mean

        std::map<std::string, std::vector<bool>> matched;
        for (const auto& [id, objs] : gt) matched[id].assign(objs.size(), false);
        std::vector<bool> labels;
        labels.reserve(entries.size());
        for (const Entry& e : entries) {
            auto git = gt.find(*e.image_id);
            int best = -1;
            Real best_iou = 0;
            if (git != gt.end()) {
                auto& m = matched[*e.image_id];
                for (std::size_t gi = 0; gi < git->second.size(); ++gi) {
                    if (m[gi] || git->second[gi].first != cls) continue;
                    const Real v = iou(e.det->box, git->second[gi].second);
                    if (v > best_iou) {
                        best_iou = v;
                        best = static_cast<int>(gi);
                    }
                }
            }
            if (best >= 0 && best_iou >= iou_thresh) {
                matched[*e.image_id][static_cast<std::size_t>(best)] = true;
                labels.push_back(true);
            } else {
                labels.push_back(false);
            }
        }
        result.per_class_ap[static_cast<std::size_t>(cls - 1)] = average_precision(labels, num_gt);
    }
    result.map = mean_ap(result.per_class_ap);
    return result;
}

/// One row per class (`class_id ap`), then `mAP <value>`, 4 decimals.
inline std::string render_eval_table(const EvalResult& r) {
    std::string out;
    char buf[64];
    for (std::size_t i = 0; i < r.per_class_ap.size(); ++i) {
        if (!r.per_class_ap[i].has_value()) continue;
        std::snprintf(buf, sizeof(buf), "%d %.4f\n", static_cast<int>(i + 1),
                      static_cast<double>(*r.per_class_ap[i]));
        out += buf;
    }
    std::snprintf(buf, sizeof(buf), "mAP %.4f\n", static_cast<double>(r.map));
    out += buf;
    return out;
}

}  // namespace psrd
