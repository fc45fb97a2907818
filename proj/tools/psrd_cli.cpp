// Command-line front end: dataset generation, training, evaluation,
// single-image detection, the finite-difference suite and ablation sweeps.

#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "psrd/psrd.hpp"

namespace fs = std::filesystem;

namespace {

psrd::RunConfig load_config(const std::string& path) {
    std::ifstream is(path);
    if (!is) throw psrd::IoError("cannot open config file: " + path);
    return psrd::parse_run_config(is, path);
}

// cmd_train leaves the resolved config next to the checkpoint; eval/detect
// pick it up from there unless --config overrides.
psrd::RunConfig config_for_checkpoint(const std::string& checkpoint, const std::string& override_path) {
    if (!override_path.empty()) return load_config(override_path);
    const fs::path sidecar = fs::path(checkpoint).parent_path() / "config.cfg";
    if (!fs::exists(sidecar)) {
        throw psrd::IoError("no config found at " + sidecar.string() +
                            "; pass --config with the run configuration");
    }
    return load_config(sidecar.string());
}

psrd::Network restore_network(const psrd::RunConfig& cfg, const std::string& checkpoint) {
    psrd::Rng rng(0);  // weights are replaced by the checkpoint
    psrd::Network net = psrd::build_network(cfg.net, rng);
    psrd::load_params(net, psrd::load_checkpoint(checkpoint));
    return net;
}

const std::vector<psrd::Scene>& pick_split(const psrd::Dataset& ds, const std::string& split) {
    if (split == "train") return ds.train;
    if (split == "val") return ds.val;
    if (split == "test") return ds.test;
    throw psrd::ConfigError("unknown split '" + split + "' (train|val|test)");
}

int cmd_gen_data(const std::string& spec_path, const std::string& out_dir, std::int64_t seed) {
    psrd::RunConfig cfg = spec_path.empty() ? psrd::RunConfig{} : load_config(spec_path);
    if (seed >= 0) cfg.data.seed = static_cast<std::uint64_t>(seed);
    psrd::write_dataset(cfg.data, out_dir);
    std::cout << "wrote " << cfg.data.n_train << " train + " << cfg.data.n_val << " val + "
              << cfg.data.n_test << " test scenes to " << out_dir << "\n";
    return 0;
}

int cmd_train(const std::string& config_path, const std::string& data_dir,
              const std::string& out_dir, int epochs_override) {
    psrd::RunConfig cfg = config_path.empty() ? psrd::RunConfig{} : load_config(config_path);
    if (epochs_override >= 0) cfg.optim.epochs = epochs_override;
    const psrd::Dataset ds = psrd::read_dataset(data_dir);

    fs::create_directories(out_dir);
    std::ofstream cf(fs::path(out_dir) / "config.cfg");
    if (!cf) throw psrd::IoError("cannot write config into " + out_dir);
    cf << psrd::render_run_config(cfg);
    cf.close();

    const psrd::TrainResult result = psrd::train(ds, cfg, out_dir);
    for (const std::string& line : result.metric_lines) std::cout << line << "\n";
    std::cout << "checkpoint: " << result.checkpoint_path << "\n";
    return 0;
}

int cmd_eval(const std::string& checkpoint, const std::string& data_dir,
             const std::string& config_path, const std::string& split) {
    const psrd::RunConfig cfg = config_for_checkpoint(checkpoint, config_path);
    psrd::Network net = restore_network(cfg, checkpoint);
    const psrd::Dataset ds = psrd::read_dataset(data_dir);
    const auto& scenes = pick_split(ds, split);

    std::map<std::string, std::vector<psrd::Detection>> dets;
    std::map<std::string, psrd::GroundTruth> gt;
    const psrd::DetectorConfig dcfg = cfg.detector_config();
    for (const psrd::Scene& scene : scenes) {
        dets[scene.image_id] = psrd::detect(net, psrd::train_detail::batch_of_one(scene.image),
                                            cfg.anchors, dcfg);
        gt[scene.image_id] = scene.annotations;
    }
    const psrd::EvalResult result = psrd::evaluate_detections(dets, gt, cfg.eval_iou, cfg.net.ps.C);
    std::cout << psrd::render_eval_table(result);
    return 0;
}

int cmd_detect(const std::string& checkpoint, const std::string& image_path,
               const std::string& out_path, const std::string& config_path) {
    const psrd::RunConfig cfg = config_for_checkpoint(checkpoint, config_path);
    psrd::Network net = restore_network(cfg, checkpoint);

    psrd::Image8 img = psrd::read_ppm(image_path);
    const psrd::Tensor input = psrd::train_detail::batch_of_one(psrd::image_to_tensor(img));
    const std::vector<psrd::Detection> dets =
        psrd::detect(net, input, cfg.anchors, cfg.detector_config());

    // class encoded as outline color
    const unsigned char palette[3][3] = {{255, 40, 40}, {40, 80, 255}, {255, 230, 40}};
    for (const psrd::Detection& d : dets) {
        const auto& c = palette[(d.class_id - 1) % 3];
        psrd::draw_box_outline(img, d.box, c[0], c[1], c[2], 2);
    }
    psrd::write_ppm(out_path, img);
    std::cout << dets.size() << " detections drawn into " << out_path << "\n";
    return 0;
}

int cmd_gradcheck(const std::string& layers) {
    const std::vector<psrd::GradCheck> all = psrd::standard_gradchecks();
    std::vector<psrd::GradCheck> selected;
    if (layers == "all") {
        selected = all;
    } else {
        for (const std::string& name : psrd::split(layers, ',')) {
            bool found = false;
            for (const psrd::GradCheck& c : all) {
                if (c.name == psrd::trim(name)) {
                    selected.push_back(c);
                    found = true;
                    break;
                }
            }
            if (!found) throw psrd::ConfigError("unknown gradcheck layer: " + name);
        }
    }
    bool all_pass = true;
    for (const psrd::GradCheck& c : selected) {
        const psrd::GradCheckReport r = psrd::run_gradcheck(c);
        std::printf("%s  %-22s max_rel_err=%.3e  (n=%d, tol=%.0e, %.2fs)\n",
                    r.pass ? "PASS" : "FAIL", r.name.c_str(), r.max_err, r.instances, r.tol,
                    r.seconds);
        all_pass = all_pass && r.pass;
    }
    if (!all_pass) {
        std::cerr << "ERROR:numeric: gradient check failed\n";
        return 1;
    }
    return 0;
}

int cmd_ablate(const std::string& config_path, const std::string& data_dir,
               const std::string& sweep, const std::string& out_dir) {
    const psrd::RunConfig base = config_path.empty() ? psrd::RunConfig{} : load_config(config_path);
    const psrd::Dataset ds = psrd::read_dataset(data_dir);

    std::vector<psrd::VariantSpec> variants;
    const std::size_t eq = sweep.find('=');
    if (eq == std::string::npos) {
        throw psrd::ConfigError("bad --sweep '" + sweep + "' (use k=1,3,7 or variants=a,b,c)");
    }
    const std::string kind = psrd::trim(sweep.substr(0, eq));
    const std::string args = sweep.substr(eq + 1);
    if (kind == "k") {
        for (const std::string& part : psrd::split(args, ',')) {
            psrd::RunConfig cfg = base;
            cfg.net.ps.k = std::stoi(psrd::trim(part));
            variants.push_back({"k=" + psrd::trim(part), cfg});
        }
    } else if (kind == "variants") {
        for (const std::string& part : psrd::split(args, ',')) {
            const std::string name = psrd::trim(part);
            psrd::RunConfig cfg = base;
            if (name == "dropout_after_pool") {
                cfg.net.dropout = {psrd::DropoutMode::kAfterFirstPool, psrd::Real(0.5)};
            } else if (name == "dropout_inside_block") {
                cfg.net.dropout = {psrd::DropoutMode::kInsideBlock, psrd::Real(0.5)};
            } else if (name == "dropout_none") {
                cfg.net.dropout.mode = psrd::DropoutMode::kNone;
            } else {
                cfg.net.block_variant = psrd::block_variant_from_string(name);
                cfg.net.dropout.mode = psrd::DropoutMode::kNone;
            }
            variants.push_back({name, cfg});
        }
    } else {
        throw psrd::ConfigError("bad --sweep kind '" + kind + "' (k or variants)");
    }

    std::cout << psrd::ablation_sweep(variants, ds, out_dir);
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"position-sensitive region detector, desk scale"};
    app.require_subcommand(1);

    std::string spec_path, config_path, data_dir, out_dir, checkpoint, image_path, out_path;
    std::string split = "test", layers = "all", sweep;
    std::int64_t seed = -1;
    int epochs = -1;

    auto* gen = app.add_subcommand("gen-data", "render the synthetic dataset");
    gen->add_option("--spec", spec_path, "run-config file supplying the data.* keys");
    gen->add_option("--out", out_dir, "output dataset directory")->required();
    gen->add_option("--seed", seed, "override data.seed");

    auto* train = app.add_subcommand("train", "train a detector");
    train->add_option("--config", config_path, "run-config file");
    train->add_option("--data", data_dir, "dataset directory")->required();
    train->add_option("--out", out_dir, "output directory")->required();
    train->add_option("--epochs", epochs, "override optim.epochs");

    auto* eval = app.add_subcommand("eval", "report per-class AP and mAP");
    eval->add_option("--checkpoint", checkpoint, "checkpoint file")->required();
    eval->add_option("--data", data_dir, "dataset directory")->required();
    eval->add_option("--config", config_path, "run-config file (default: config.cfg beside the checkpoint)");
    eval->add_option("--split", split, "train|val|test (default test)");

    auto* detect = app.add_subcommand("detect", "draw detections into an image");
    detect->add_option("--checkpoint", checkpoint, "checkpoint file")->required();
    detect->add_option("--image", image_path, "input PPM image")->required();
    detect->add_option("--out", out_path, "output PPM image")->required();
    detect->add_option("--config", config_path, "run-config file (default: config.cfg beside the checkpoint)");

    auto* gradcheck = app.add_subcommand("gradcheck", "finite-difference check per layer");
    gradcheck->add_option("--layers", layers, "all or a comma-separated list of layer names");

    auto* ablate = app.add_subcommand("ablate", "train a variant sweep and tabulate mAP");
    ablate->add_option("--config", config_path, "base run-config file");
    ablate->add_option("--data", data_dir, "dataset directory")->required();
    ablate->add_option("--sweep", sweep, "k=1,3,7 or variants=<name,...>")->required();
    ablate->add_option("--out", out_dir, "output directory (default ablation_out)");

    CLI11_PARSE(app, argc, argv);

    try {
        if (gen->parsed()) return cmd_gen_data(spec_path, out_dir, seed);
        if (train->parsed()) return cmd_train(config_path, data_dir, out_dir, epochs);
        if (eval->parsed()) return cmd_eval(checkpoint, data_dir, config_path, split);
        if (detect->parsed()) return cmd_detect(checkpoint, image_path, out_path, config_path);
        if (gradcheck->parsed()) return cmd_gradcheck(layers);
        if (ablate->parsed()) return cmd_ablate(config_path, data_dir, sweep,
                                                out_dir.empty() ? "ablation_out" : out_dir);
    } catch (const psrd::Error& e) {
        std::cerr << "ERROR:" << e.category() << ": " << e.what() << "\n";
        return 1;
    } catch (const std::exception& e) {
        std::cerr << "ERROR:internal: " << e.what() << "\n";
        return 1;
    }
    return 0;
}
