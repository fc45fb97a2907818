// Acceptance suite: runs every acceptance criterion end to end and prints
// one PASS/FAIL line per criterion. Exits nonzero if any criterion fails.
//
// Usage: acceptance [--cli <path-to-psrd-binary>] [--only <n>]

#include <array>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include "psrd/psrd.hpp"

namespace fs = std::filesystem;
using namespace psrd;

namespace {

std::string g_cli_path;

std::string slurp(const fs::path& p) {
    std::ifstream is(p, std::ios::binary);
    return std::string(std::istreambuf_iterator<char>(is), std::istreambuf_iterator<char>());
}

fs::path scratch_dir() {
    const fs::path dir = fs::temp_directory_path() / "psrd_acceptance";
    fs::create_directories(dir);
    return dir;
}

int run_command(const std::string& cmd, std::string* output) {
    std::FILE* pipe = popen((cmd + " 2>&1").c_str(), "r");
    if (!pipe) return -1;
    char buf[4096];
    output->clear();
    while (std::fgets(buf, sizeof(buf), pipe)) *output += buf;
    return pclose(pipe);
}

Tensor random_tensor(std::vector<int> shape, Rng& rng) {
    Tensor t(std::move(shape));
    for (std::int64_t i = 0; i < t.numel(); ++i) t[i] = static_cast<Real>(rng.normal());
    return t;
}

// ---------------------------------------------------------------------------
// criterion 1: the finite-difference suite over every differentiable op,
// 20 instances each, rel err < 1e-4, total < 60 s
bool criterion_gradients(std::string& detail) {
    const std::vector<std::string> required = {
        "conv2d",        "batch_norm",       "relu",
        "max_pool",      "dropout_eval",     "softmax",
        "block_original", "block_bn_after_add", "block_no_second_relu",
        "ps_roi_pool",   "ps_vote_classify", "detection_loss"};
    const auto t0 = std::chrono::steady_clock::now();
    const std::vector<GradCheck> checks = standard_gradchecks();
    double worst = 0;
    std::string worst_name;
    for (const std::string& name : required) {
        bool found = false;
        for (const GradCheck& c : checks)
            if (c.name == name) found = true;
        if (!found) {
            detail = "missing gradcheck for " + name;
            return false;
        }
    }
    bool all_pass = true;
    for (const GradCheck& c : checks) {
        const GradCheckReport r = run_gradcheck(c, 20, 1e-4);
        if (r.max_err > worst) {
            worst = r.max_err;
            worst_name = r.name;
        }
        all_pass = all_pass && r.pass;
    }
    const double seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    char buf[160];
    std::snprintf(buf, sizeof(buf), "%zu layers, worst rel err %.2e (%s), %.1fs",
                  checks.size(), worst, worst_name.c_str(), seconds);
    detail = buf;
    return all_pass && seconds < 60.0;
}

// ---------------------------------------------------------------------------
// criterion 2: position-sensitive pooling vs a brute-force per-bin oracle on
// 50 random instances, plus the exact channel-coding routing construction
Tensor ps_pool_oracle(const Tensor& maps, const RoI& roi, const PSHeadConfig& ps) {
    const int Hf = maps.dim(2), Wf = maps.dim(3);
    const int k = ps.k, nc = ps.C + 1;
    const Real x1 = roi.box.x1 / ps.feature_stride, x2 = roi.box.x2 / ps.feature_stride;
    const Real y1 = roi.box.y1 / ps.feature_stride, y2 = roi.box.y2 / ps.feature_stride;
    Tensor out({nc, k, k});
    for (int c = 0; c < nc; ++c)
        for (int i = 0; i < k; ++i)
            for (int j = 0; j < k; ++j) {
                const Real ylo = y1 + (y2 - y1) * i / k, yhi = y1 + (y2 - y1) * (i + 1) / k;
                const Real xlo = x1 + (x2 - x1) * j / k, xhi = x1 + (x2 - x1) * (j + 1) / k;
                Real acc = 0;
                int count = 0;
                for (int r = 0; r < Hf; ++r)
                    for (int cc = 0; cc < Wf; ++cc) {
                        const Real cy = r + Real(0.5), cx = cc + Real(0.5);
                        if (cy >= ylo && cy < yhi && cx >= xlo && cx < xhi) {
                            acc += maps.at4(roi.batch_index, (i * k + j) * nc + c, r, cc);
                            ++count;
                        }
                    }
                out[(static_cast<std::int64_t>(c) * k + i) * k + j] =
                    count ? acc / static_cast<Real>(count) : Real(0);
            }
    return out;
}

RoI random_roi(Rng& rng, int Hf, int Wf, int stride) {
    const Real mx = static_cast<Real>(Wf * stride), my = static_cast<Real>(Hf * stride);
    const Real x1 = static_cast<Real>(rng.uniform(0, 0.6 * mx));
    const Real y1 = static_cast<Real>(rng.uniform(0, 0.6 * my));
    return {{x1, y1, std::min(x1 + static_cast<Real>(rng.uniform(0.25 * mx, 0.9 * mx)), mx),
             std::min(y1 + static_cast<Real>(rng.uniform(0.25 * my, 0.9 * my)), my)},
            0};
}

bool criterion_ps_pool_oracle(std::string& detail) {
    Rng rng(271);
    const int ks[4] = {1, 2, 3, 7};
    double worst = 0;
    for (int trial = 0; trial < 50; ++trial) {
        PSHeadConfig ps{ks[trial % 4], 1 + trial % 3, 8};
        const int Hf = 6 + trial % 3, Wf = 5 + trial % 4;
        Tensor maps = random_tensor({1, ps.cls_channels(), Hf, Wf}, rng);
        const RoI roi = random_roi(rng, Hf, Wf, ps.feature_stride);
        const Tensor got = ps_roi_pool(maps, roi, ps);
        const Tensor want = ps_pool_oracle(maps, roi, ps);
        for (std::int64_t i = 0; i < got.numel(); ++i)
            worst = std::max(worst, static_cast<double>(std::abs(got[i] - want[i])));
    }
    if (worst >= 1e-9) {
        detail = "oracle mismatch " + std::to_string(worst);
        return false;
    }

    // channel-coding: bin (i,j), class c reads exactly channel (i*k+j)*(C+1)+c
    PSHeadConfig ps{2, 1, 8};
    Tensor coded({1, 8, 4, 4});
    for (int ch = 0; ch < 8; ++ch)
        for (int r = 0; r < 4; ++r)
            for (int cc = 0; cc < 4; ++cc) coded.at4(0, ch, r, cc) = static_cast<Real>(ch);
    const Tensor pooled = ps_roi_pool(coded, {{0, 0, 32, 32}, 0}, ps);
    for (int c = 0; c < 2; ++c)
        for (int i = 0; i < 2; ++i)
            for (int j = 0; j < 2; ++j)
                if (pooled[(static_cast<std::int64_t>(c) * 2 + i) * 2 + j] !=
                    static_cast<Real>((i * 2 + j) * 2 + c)) {
                    detail = "channel routing broken";
                    return false;
                }
    char buf[96];
    std::snprintf(buf, sizeof(buf), "50 instances, max abs dev %.1e, routing exact", worst);
    detail = buf;
    return true;
}

// ---------------------------------------------------------------------------
// criterion 3: k=1 equals global average pooling within the RoI
bool criterion_k1_degeneration(std::string& detail) {
    Rng rng(314);
    double worst = 0;
    for (int trial = 0; trial < 50; ++trial) {
        PSHeadConfig ps{1, 1 + trial % 3, 8};
        const int Hf = 5 + trial % 4, Wf = 4 + trial % 5;
        Tensor maps = random_tensor({1, ps.cls_channels(), Hf, Wf}, rng);
        const RoI roi = random_roi(rng, Hf, Wf, ps.feature_stride);
        const Tensor pooled = ps_roi_pool(maps, roi, ps);

        // independent global average over cells whose centers fall in the RoI
        const Real x1 = roi.box.x1 / ps.feature_stride, x2 = roi.box.x2 / ps.feature_stride;
        const Real y1 = roi.box.y1 / ps.feature_stride, y2 = roi.box.y2 / ps.feature_stride;
        for (int c = 0; c <= ps.C; ++c) {
            Real acc = 0;
            int count = 0;
            for (int r = 0; r < Hf; ++r)
                for (int cc = 0; cc < Wf; ++cc) {
                    const Real cy = r + Real(0.5), cx = cc + Real(0.5);
                    if (cy >= y1 && cy < y2 && cx >= x1 && cx < x2) {
                        acc += maps.at4(0, c, r, cc);
                        ++count;
                    }
                }
            const Real avg = count ? acc / static_cast<Real>(count) : Real(0);
            worst = std::max(worst, static_cast<double>(std::abs(pooled[c] - avg)));
        }
    }
    char buf[96];
    std::snprintf(buf, sizeof(buf), "50 instances, max abs dev %.1e", worst);
    detail = buf;
    return worst < 1e-9;
}

// ---------------------------------------------------------------------------
// criterion 4: evaluator vs pointwise brute-force PR enumeration
double ap_oracle(const std::vector<bool>& labels, int num_gt) {
    if (num_gt == 0 || labels.empty()) return 0.0;
    const std::size_t n = labels.size();
    std::vector<double> precision(n), recall(n);
    int tp = 0;
    for (std::size_t i = 0; i < n; ++i) {
        if (labels[i]) ++tp;
        precision[i] = static_cast<double>(tp) / static_cast<double>(i + 1);
        recall[i] = static_cast<double>(tp) / num_gt;
    }
    double ap = 0, prev = 0;
    for (std::size_t i = 0; i < n; ++i) {
        if (recall[i] <= prev) continue;
        double best = 0;
        for (std::size_t j = 0; j < n; ++j)
            if (recall[j] >= recall[i]) best = std::max(best, precision[j]);
        ap += (recall[i] - prev) * best;
        prev = recall[i];
    }
    return ap;
}

bool criterion_eval_oracle(std::string& detail) {
    int cases = 0;
    // exhaustive TP/FP sequences up to length 4, multiple gt counts
    for (int len = 1; len <= 4; ++len) {
        for (int bits = 0; bits < (1 << len); ++bits) {
            std::vector<bool> labels;
            int tp = 0;
            for (int i = 0; i < len; ++i) {
                const bool b = (bits >> i) & 1;
                labels.push_back(b);
                tp += b;
            }
            for (int extra = 0; extra <= 2; ++extra) {
                const int num_gt = tp + extra;
                if (num_gt == 0) continue;
                if (static_cast<double>(average_precision(labels, num_gt)) != ap_oracle(labels, num_gt)) {
                    detail = "mismatch on exhaustive case";
                    return false;
                }
                ++cases;
            }
        }
    }
    // random instances up to 10 detections
    Rng rng(99);
    for (int trial = 0; trial < 500; ++trial) {
        const int len = rng.uniform_int(1, 10);
        std::vector<bool> labels;
        int tp = 0;
        for (int i = 0; i < len; ++i) {
            const bool b = rng.uniform() < 0.5;
            labels.push_back(b);
            tp += b;
        }
        const int num_gt = tp + rng.uniform_int(0, 3);
        if (num_gt == 0) continue;
        if (static_cast<double>(average_precision(labels, num_gt)) != ap_oracle(labels, num_gt)) {
            detail = "mismatch on random case";
            return false;
        }
        ++cases;
    }
    // the hand-computed 5/6 example
    if (std::abs(static_cast<double>(average_precision({true, false, true}, 2)) - 5.0 / 6.0) > 1e-12) {
        detail = "AP([TP,FP,TP], 2) != 5/6";
        return false;
    }
    detail = std::to_string(cases) + " cases exact, including AP=5/6";
    return cases >= 30;
}

// ---------------------------------------------------------------------------
// criterion 5: identity propagation through the block variants
bool criterion_identity_propagation(std::string& detail) {
    Block blk;
    blk.conv1 = {Tensor::zeros({2, 2, 3, 3}), Tensor(), 1, 1};
    blk.bn1 = BNParams::make(2);
    blk.conv2 = {Tensor::zeros({2, 2, 3, 3}), Tensor(), 1, 1};
    blk.bn2 = BNParams::make(2);

    Tensor x({1, 2, 4, 4});
    Rng rng(5);
    for (std::int64_t i = 0; i < x.numel(); ++i) x[i] = static_cast<Real>(rng.normal());
    x[3] = Real(-2.5);  // guarantee a negative entry

    DropoutPlacement dp;
    const Tensor identity = forward_block(x, blk, BlockVariant::kNoSecondRelu, false, dp, nullptr);
    for (std::int64_t i = 0; i < x.numel(); ++i) {
        if (identity[i] != x[i]) {
            detail = "no_second_relu with zero branch is not the identity";
            return false;
        }
    }
    const Tensor clipped = forward_block(x, blk, BlockVariant::kOriginal, false, dp, nullptr);
    bool saw_clip = false;
    for (std::int64_t i = 0; i < x.numel(); ++i) {
        if (clipped[i] != std::max(Real(0), x[i])) {
            detail = "original with zero branch is not relu(x)";
            return false;
        }
        saw_clip = saw_clip || clipped[i] != x[i];
    }
    if (!saw_clip) {
        detail = "input had no negative entries";
        return false;
    }
    detail = "identity exact, relu clipping observed elementwise";
    return true;
}

// ---------------------------------------------------------------------------
// criterion 6: the desk-scale end-to-end run
bool criterion_end_to_end(std::string& detail) {
    RunConfig cfg;  // defaults are the experiment: 180/20/25 at 64x64, k=3,
                    // dropout after the first pool at 0.5
    if (cfg.optim.epochs > 30) {
        detail = "default epochs exceed 30";
        return false;
    }
    const fs::path dir = scratch_dir() / "end_to_end";
    fs::remove_all(dir);
    const Dataset ds = generate_dataset(cfg.data);

    const auto t0 = std::chrono::steady_clock::now();
    const TrainResult r1 = train(ds, cfg, (dir / "run1").string());
    const double train_seconds =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();

    // test-split mAP from the saved checkpoint
    RunConfig loaded_cfg = cfg;
    loaded_cfg.finalize();
    Rng rng(0);
    Network net = build_network(loaded_cfg.net, rng);
    load_params(net, load_checkpoint(r1.checkpoint_path));
    std::map<std::string, std::vector<Detection>> dets;
    std::map<std::string, GroundTruth> gt;
    for (const Scene& scene : ds.test) {
        dets[scene.image_id] =
            detect(net, train_detail::batch_of_one(scene.image), cfg.anchors, cfg.detector_config());
        gt[scene.image_id] = scene.annotations;
    }
    const Real test_map = evaluate_detections(dets, gt, cfg.eval_iou, cfg.net.ps.C).map;

    // bit-reproducibility: a second run with the same seed
    const TrainResult r2 = train(ds, cfg, (dir / "run2").string());
    const bool reproducible =
        slurp(dir / "run1" / "metrics.txt") == slurp(dir / "run2" / "metrics.txt") &&
        slurp(dir / "run1" / "checkpoint.bin") == slurp(dir / "run2" / "checkpoint.bin");
    (void)r2;

    char buf[160];
    std::snprintf(buf, sizeof(buf), "test mAP %.4f (>= 0.80), %.0fs train (<= 900), reproducible=%s",
                  static_cast<double>(test_map), train_seconds, reproducible ? "yes" : "no");
    detail = buf;
    return test_map >= Real(0.80) && train_seconds <= 900.0 && reproducible;
}

// ---------------------------------------------------------------------------
// criterion 7: the ablation harness reproduces the row-per-variant tables
bool check_table(const std::string& table, const std::vector<std::string>& names, std::string& why) {
    std::istringstream is(table);
    std::string line;
    if (!std::getline(is, line) || line.find("variant") == std::string::npos ||
        line.find("mAP") == std::string::npos) {
        why = "missing header";
        return false;
    }
    std::size_t rows = 0;
    while (std::getline(is, line)) {
        if (line.empty()) continue;
        if (rows >= names.size()) {
            why = "too many rows";
            return false;
        }
        if (line.rfind(names[rows] + "  ", 0) != 0) {
            why = "row " + std::to_string(rows) + " is not " + names[rows] + ": " + line;
            return false;
        }
        const std::string value = line.substr(names[rows].size() + 2);
        if (value.size() != 6 || value[1] != '.') {  // d.dddd
            why = "mAP not at 4 decimals: " + value;
            return false;
        }
        ++rows;
    }
    if (rows != names.size()) {
        why = "expected " + std::to_string(names.size()) + " rows, got " + std::to_string(rows);
        return false;
    }
    return true;
}

bool criterion_ablation(std::string& detail) {
    if (g_cli_path.empty()) {
        detail = "no --cli path given";
        return false;
    }
    const fs::path dir = scratch_dir() / "ablate";
    fs::remove_all(dir);
    fs::create_directories(dir);

    RunConfig cfg;
    cfg.data.n_train = 8;
    cfg.data.n_val = 4;
    cfg.data.n_test = 2;
    cfg.data.height = cfg.data.width = 32;
    cfg.net.stem = {6, 3, 2, 1, 2, 2};
    cfg.net.stages = {{1, 6, 1}, {1, 8, 2}};
    cfg.net.head_reduce_channels = 8;
    cfg.optim.epochs = 1;
    std::ofstream(dir / "base.cfg") << render_run_config(cfg);

    std::string out;
    if (run_command(g_cli_path + " gen-data --spec " + (dir / "base.cfg").string() + " --out " +
                        (dir / "data").string(),
                    &out) != 0) {
        detail = "gen-data failed: " + out;
        return false;
    }

    const std::string base = g_cli_path + " ablate --config " + (dir / "base.cfg").string() +
                             " --data " + (dir / "data").string();
    std::string k_table;
    if (run_command(base + " --sweep k=1,3,7 --out " + (dir / "k1").string(), &k_table) != 0) {
        detail = "k sweep failed: " + k_table;
        return false;
    }
    std::string why;
    if (!check_table(k_table, {"k=1", "k=3", "k=7"}, why)) {
        detail = "k sweep table: " + why;
        return false;
    }
    std::string k_table2;
    run_command(base + " --sweep k=1,3,7 --out " + (dir / "k2").string(), &k_table2);
    if (k_table != k_table2) {
        detail = "k sweep is not deterministic";
        return false;
    }

    std::string v_table;
    if (run_command(base + " --sweep variants=original,bn_after_add,no_second_relu,dropout_after_pool"
                           " --out " + (dir / "v1").string(),
                    &v_table) != 0) {
        detail = "variant sweep failed: " + v_table;
        return false;
    }
    if (!check_table(v_table, {"original", "bn_after_add", "no_second_relu", "dropout_after_pool"}, why)) {
        detail = "variant table: " + why;
        return false;
    }
    detail = "k sweep: 3 rows, variant sweep: 4 rows, 4-decimal mAP, deterministic";
    return true;
}

// ---------------------------------------------------------------------------
// criterion 8: format round trips
bool criterion_round_trips(std::string& detail) {
    const fs::path dir = scratch_dir() / "roundtrips";
    fs::remove_all(dir);

    // dataset annotations
    DatasetSpec spec;
    spec.n_train = 3;
    spec.n_val = 2;
    spec.n_test = 2;
    spec.height = spec.width = 48;
    spec.seed = 17;
    write_dataset(spec, (dir / "ds").string());
    const Dataset original = generate_dataset(spec);
    const Dataset loaded = read_dataset((dir / "ds").string());
    const std::vector<Scene>* orig_splits[3] = {&original.train, &original.val, &original.test};
    const std::vector<Scene>* load_splits[3] = {&loaded.train, &loaded.val, &loaded.test};
    for (int s = 0; s < 3; ++s) {
        if (orig_splits[s]->size() != load_splits[s]->size()) {
            detail = "dataset split size changed";
            return false;
        }
        for (std::size_t i = 0; i < orig_splits[s]->size(); ++i) {
            const Scene& a = (*orig_splits[s])[i];
            const Scene& b = (*load_splits[s])[i];
            if (a.image_id != b.image_id || a.annotations.size() != b.annotations.size()) {
                detail = "annotations changed in round trip";
                return false;
            }
            for (std::size_t j = 0; j < a.annotations.size(); ++j) {
                if (a.annotations[j].first != b.annotations[j].first ||
                    a.annotations[j].second.x1 != b.annotations[j].second.x1 ||
                    a.annotations[j].second.y1 != b.annotations[j].second.y1 ||
                    a.annotations[j].second.x2 != b.annotations[j].second.x2 ||
                    a.annotations[j].second.y2 != b.annotations[j].second.y2) {
                    detail = "annotation coordinates changed in round trip";
                    return false;
                }
            }
        }
    }

    // checkpoint bits
    Rng rng(23);
    std::map<std::string, Tensor> tensors;
    tensors["w"] = random_tensor({3, 4, 2}, rng);
    tensors["b"] = random_tensor({7}, rng);
    save_checkpoint(tensors, (dir / "ckpt.bin").string());
    const auto back = load_checkpoint((dir / "ckpt.bin").string());
    for (const auto& [name, t] : tensors) {
        const Tensor& u = back.at(name);
        if (u.shape() != t.shape()) {
            detail = "checkpoint shape changed";
            return false;
        }
        for (std::int64_t i = 0; i < t.numel(); ++i)
            if (t[i] != u[i]) {
                detail = "checkpoint bits changed";
                return false;
            }
    }

    // config idempotence
    RunConfig cfg;
    cfg.data.noise_sigma = Real(0.0375);
    cfg.net.stages = {{2, 12, 1}, {1, 24, 2}};
    cfg.optim.lr = Real(0.004);
    cfg.finalize();
    const RunConfig reparsed = parse_run_config_string(render_run_config(cfg));
    if (!(cfg == reparsed)) {
        detail = "config render/parse not idempotent";
        return false;
    }
    detail = "dataset annotations exact, checkpoint bit-exact, config idempotent";
    return true;
}

}  // namespace

int main(int argc, char** argv) {
    int only = 0;
    for (int i = 1; i < argc; ++i) {
        const std::string arg = argv[i];
        if (arg == "--cli" && i + 1 < argc) g_cli_path = argv[++i];
        if (arg == "--only" && i + 1 < argc) only = std::atoi(argv[++i]);
    }

    struct Criterion {
        int id;
        const char* name;
        std::function<bool(std::string&)> run;
    };
    const std::vector<Criterion> criteria = {
        {1, "gradient suite (rel err < 1e-4, < 60 s)", criterion_gradients},
        {2, "position-sensitive pooling oracle (1e-9)", criterion_ps_pool_oracle},
        {3, "k=1 degenerates to global average pooling (1e-9)", criterion_k1_degeneration},
        {4, "evaluator matches brute-force PR enumeration", criterion_eval_oracle},
        {5, "identity propagation through block variants", criterion_identity_propagation},
        {6, "end-to-end desk-scale run (mAP >= 0.80, <= 15 min, reproducible)", criterion_end_to_end},
        {7, "ablation harness emits row-per-variant tables", criterion_ablation},
        {8, "format round trips (dataset, checkpoint, config)", criterion_round_trips},
    };

    bool all_pass = true;
    for (const Criterion& c : criteria) {
        if (only != 0 && c.id != only) continue;
        std::string detail;
        bool ok = false;
        try {
            ok = c.run(detail);
        } catch (const std::exception& e) {
            detail = std::string("exception: ") + e.what();
        }
        std::printf("%s criterion %d: %s%s%s\n", ok ? "PASS" : "FAIL", c.id, c.name,
                    detail.empty() ? "" : " -- ", detail.c_str());
        std::fflush(stdout);
        all_pass = all_pass && ok;
    }
    return all_pass ? 0 : 1;
}
