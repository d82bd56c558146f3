// artface command-line entry point.
#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <functional>
#include <iostream>
#include <memory>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <httplib.h>
#include <json.hpp>
#include <opencv2/imgproc.hpp>

#include "artface/annotation.hpp"
#include "artface/dataset.hpp"
#include "artface/errors.hpp"
#include "artface/evaluation.hpp"
#include "artface/image.hpp"
#include "artface/model.hpp"
#include "artface/registration.hpp"
#include "artface/training.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace artface;

namespace {

// Binds flags to variables and lets a JSON config file fill in whatever the
// command line left unset (flags > config file > defaults).
class Settings {
public:
    explicit Settings(CLI::App* app) : app_(app) {
        app_->add_option("--config", config_path_, "JSON config file; keys are flag names with underscores");
    }

    template <class T>
    CLI::Option* add(const std::string& name, T& var, const std::string& help) {
        auto* opt = app_->add_option(name, var, help);
        std::string key = opt->get_single_name();
        std::replace(key.begin(), key.end(), '-', '_');
        entries_.push_back({key, opt, [&var](const json& j) { var = j.get<T>(); }, [&var] { return json(var); }});
        return opt;
    }

    /// Extra config-only section (e.g. "training"), handed over verbatim.
    void section(const std::string& key, json* target) { sections_.push_back({key, target}); }

    void resolve() {
        if (config_path_.empty()) return;
        json file;
        try {
            file = json::parse(read_text_file(config_path_));
        } catch (const json::exception& e) {
            throw ParseError("config " + config_path_ + ": " + e.what());
        }
        if (!file.is_object()) throw ValidationError("config " + config_path_ + ": expected a JSON object");
        for (const auto& [key, value] : file.items()) {
            auto it = std::find_if(entries_.begin(), entries_.end(), [&](const Entry& e) { return e.key == key; });
            if (it != entries_.end()) {
                if (it->option->count() > 0) continue;
                try {
                    it->set(value);
                } catch (const json::exception& e) {
                    throw ValidationError("config key '" + key + "': " + e.what());
                }
                continue;
            }
            auto sec = std::find_if(sections_.begin(), sections_.end(), [&](const auto& s) { return s.first == key; });
            if (sec == sections_.end()) throw ValidationError("config " + config_path_ + ": unknown key '" + key + "'");
            *sec->second = value;
        }
    }

    json effective() const {
        json j = json::object();
        for (const auto& e : entries_) j[e.key] = e.get();
        for (const auto& [key, target] : sections_) {
            if (!target->is_null()) j[key] = *target;
        }
        return j;
    }

private:
    struct Entry {
        std::string key;
        CLI::Option* option;
        std::function<void(const json&)> set;
        std::function<json()> get;
    };
    CLI::App* app_;
    std::string config_path_;
    std::vector<Entry> entries_;
    std::vector<std::pair<std::string, json*>> sections_;
};

void echo_config(const fs::path& dir, const std::string& command, json effective,
                 const std::string& name = "effective_config.json") {
    fs::create_directories(dir);
    effective["command"] = command;
    write_file_atomic(dir / name, effective.dump(2) + "\n");
}

fs::path parent_or_dot(const fs::path& p) {
    return p.has_parent_path() ? p.parent_path() : fs::path(".");
}

void require(bool ok, const std::string& what) {
    if (!ok) throw ValidationError(what);
}

TorchNetworks load_networks(const std::string& model) {
    require(!model.empty(), "--model is required (or set ARTFACE_MODEL)");
    return TorchNetworks(ModelBundle::load(model));
}

cv::Mat draw_dots(const cv::Mat& image, const LandmarkSet& lm) {
    cv::Mat out = to_u8(image);
    const int r = std::max(2, std::max(out.cols, out.rows) / 250);
    for (const auto& p : lm.points()) {
        if (!is_finite(p)) continue;
        cv::circle(out, cv::Point2d(p.x, p.y), r, cv::Scalar(0, 255, 255), cv::FILLED, cv::LINE_AA);
    }
    return out;
}

// Softmax probability summed over channels, stretched to 8 bits and colored.
cv::Mat heatmap_png(const HeatmapStack& stack, double temperature) {
    cv::Mat acc(stack.height, stack.width, CV_64F, cv::Scalar(0));
    for (int c = 0; c < stack.channels; ++c) {
        const auto ch = stack.channel(c);
        const double mx = *std::max_element(ch.begin(), ch.end());
        double z = 0.0;
        for (double v : ch) z += std::exp(temperature * (v - mx));
        auto* a = acc.ptr<double>();
        for (std::size_t i = 0; i < ch.size(); ++i) a[i] += std::exp(temperature * (ch[i] - mx)) / z;
    }
    double mx = 0.0;
    cv::minMaxLoc(acc, nullptr, &mx);
    cv::Mat u8;
    acc.convertTo(u8, CV_8U, mx > 0 ? 255.0 / mx : 0.0);
    cv::Mat color;
    cv::applyColorMap(u8, color, cv::COLORMAP_JET);
    return color;
}

// Passes calls through and keeps the logits for rendering.
class RecordingNetworks : public LandmarkNetworks {
public:
    explicit RecordingNetworks(LandmarkNetworks& inner) : inner_(inner) {}
    HeatmapStack global_logits(const PlanarImage& image) override {
        global = inner_.global_logits(image);
        return global;
    }
    HeatmapStack region_logits(const RegionQuery& query) override {
        auto out = inner_.region_logits(query);
        regions.emplace_back(std::string(to_string(query.region)), out);
        return out;
    }
    HeatmapStack global;
    std::vector<std::pair<std::string, HeatmapStack>> regions;

private:
    LandmarkNetworks& inner_;
};

struct ErrorKind {
    const char* name;
    int code;
};

ErrorKind classify(const std::exception& e) {
    if (dynamic_cast<const DivergenceError*>(&e)) return {"divergence", 5};
    if (dynamic_cast<const RegistrationError*>(&e)) return {"registration", 4};
    if (dynamic_cast<const DegenerateError*>(&e)) return {"degenerate", 4};
    if (dynamic_cast<const ValidationError*>(&e)) return {"validation", 2};
    if (dynamic_cast<const ParseError*>(&e)) return {"parse", 3};
    if (dynamic_cast<const IoError*>(&e)) return {"io", 3};
    if (dynamic_cast<const NotFoundError*>(&e)) return {"not_found", 3};
    if (dynamic_cast<const Error*>(&e)) return {"error", 1};
    return {"internal", 1};
}

int fail(const std::string& kind, const std::string& command, const std::string& detail, int code) {
    json j{{"error", kind}, {"detail", detail}};
    if (!command.empty()) j["command"] = command;
    std::cerr << j.dump() << std::endl;
    return code;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Facial landmarks for artwork: training, inference, evaluation, registration"};
    app.require_subcommand(1);
    app.set_version_flag("--version", "artface 1.0");

    std::uint64_t seed = 0;
    struct Command {
        CLI::App* app;
        Settings* settings;
        std::function<void()> run;
    };
    std::vector<Command> commands;
    std::vector<std::unique_ptr<Settings>> owned;
    auto settings_for = [&](CLI::App* sub) {
        owned.push_back(std::make_unique<Settings>(sub));
        return owned.back().get();
    };

    // -- toy-corpus ---------------------------------------------------------
    auto* toy_app = app.add_subcommand("toy-corpus", "Write a synthetic toy-face corpus with a manifest");
    auto* toy = settings_for(toy_app);
    std::string toy_out;
    int toy_train = 8, toy_val = 2, toy_test = 2, toy_size = kHighResSize;
    toy->add("--out", toy_out, "Output directory")->required();
    toy->add("--train", toy_train, "Training images");
    toy->add("--val", toy_val, "Validation images");
    toy->add("--test", toy_test, "Test images");
    toy->add("--size", toy_size, "Image side in pixels");
    toy->add("--seed", seed, "Random seed");
    commands.push_back({toy_app, toy, [&] {
        require(toy_train >= 0 && toy_val >= 0 && toy_test >= 0, "image counts must be >= 0");
        require(toy_size >= 64, "--size must be >= 64");
        echo_config(toy_out, "toy-corpus", toy->effective());
        const auto manifest = write_toy_corpus(toy_out, toy_train, seed, toy_size, toy_val, toy_test);
        std::cout << manifest.string() << "\n";
    }});

    // -- augment ------------------------------------------------------------
    auto* aug_app = app.add_subcommand("augment", "Stylize and geometrically augment manifest images");
    auto* aug = settings_for(aug_app);
    std::string aug_corpus, aug_out, aug_split = "train", aug_out_split, aug_stylizer, aug_provenance = "augmented";
    int aug_per_image = 1;
    json aug_params;
    aug->add("--corpus", aug_corpus, "Source manifest.csv")->required();
    aug->add("--out", aug_out, "Output directory")->required();
    aug->add("--split", aug_split, "Split of the source rows to use");
    aug->add("--output-split", aug_out_split, "Split recorded for new rows (default: --split)");
    aug->add("--per-image", aug_per_image, "Augmentations per source image");
    aug->add("--stylizer", aug_stylizer, "Executable run as <cmd> <in> <out>; empty copies");
    aug->add("--provenance", aug_provenance, "Provenance recorded for new rows");
    aug->add("--seed", seed, "Random seed");
    aug->section("augment", &aug_params);
    commands.push_back({aug_app, aug, [&] {
        SyntheticConfig cfg;
        cfg.stylizer_command = aug_stylizer;
        cfg.augmentations_per_image = aug_per_image;
        cfg.split = split_from_string(aug_out_split.empty() ? aug_split : aug_out_split);
        cfg.provenance = provenance_from_string(aug_provenance);
        cfg.seed = seed;
        require(aug_per_image >= 1, "--per-image must be >= 1");
        if (!aug_params.is_null()) {
            require(aug_params.is_object(), "config 'augment' must be an object");
            for (const auto& [k, v] : aug_params.items()) {
                try {
                    if (k == "group_shift_fraction") cfg.augment.group_shift_fraction = v.get<double>();
                    else if (k == "group_scale_range") cfg.augment.group_scale_range = v.get<double>();
                    else if (k == "stretch_range") cfg.augment.stretch_range = v.get<double>();
                    else if (k == "border_anchors") cfg.augment.border_anchors = v.get<bool>();
                    else if (k == "regularization") cfg.augment.regularization = v.get<double>();
                    else if (k == "max_retries") cfg.augment.max_retries = v.get<int>();
                    else if (k == "max_outside_px") cfg.augment.max_outside_px = v.get<double>();
                    else throw ValidationError("config 'augment': unknown key '" + k + "'");
                } catch (const json::exception& e) {
                    throw ValidationError("config 'augment." + k + "': " + e.what());
                }
            }
        }
        const auto manifest = read_manifest(aug_corpus);
        const auto rows = manifest.split_rows(split_from_string(aug_split));
        require(!rows.empty(), "split '" + aug_split + "' of " + aug_corpus + " is empty");
        std::vector<BaseImage> bases;
        for (const auto& r : rows) bases.push_back({manifest.resolve(r.image), manifest.resolve(r.landmarks), r.source});

        echo_config(aug_out, "augment", aug->effective());
        Manifest out;
        out.root = aug_out;
        out.rows = build_synthetic(bases, aug_out, cfg);
        write_manifest(out, fs::path(aug_out) / "manifest.csv");
        std::cout << out.rows.size() << " images written to " << aug_out << "\n";
    }});

    // -- train --------------------------------------------------------------
    auto* train_app = app.add_subcommand("train", "Train the global network (phase 1) or all networks jointly (phase 2)");
    auto* train = settings_for(train_app);
    int train_phase = 0;
    std::string train_corpus, train_out, train_model;
    json train_params;
    train->add("--phase", train_phase, "1 or 2")->required()->check(CLI::IsMember({1, 2}));
    train->add("--corpus", train_corpus, "Training manifest.csv")->required();
    train->add("--out", train_out, "Run directory")->required();
    train->add("--model", train_model, "Phase-1 run directory or global weights (phase 2)");
    train->add("--seed", seed, "Random seed");
    train->section("training", &train_params);
    commands.push_back({train_app, train, [&] {
        TrainingConfig cfg;
        if (!train_params.is_null()) from_json(train_params, cfg);
        require(train_params.is_null() || !train_params.contains("seed"),
                "set the seed with --seed or the top-level 'seed' key, not inside 'training'");
        cfg.seed = seed;
        cfg.validate();
        if (train_phase == 2) require(!train_model.empty(), "phase 2 needs --model (the phase-1 run)");
        const auto manifest = read_manifest(train_corpus);
        const auto problems = validate_manifest(manifest);
        if (!problems.empty()) throw ValidationError("manifest: " + problems.front());

        train_params = cfg;
        echo_config(train_out, "train", train->effective(), "effective_config_phase" + std::to_string(train_phase) + ".json");
        TrainOptions opts;
        opts.run_dir = train_out;
        opts.on_epoch = [](const EpochMetrics& m) {
            std::cout << "phase " << m.phase << " epoch " << m.epoch << " train " << m.train_loss << " val "
                      << m.val_loss << " lr " << m.lr << std::endl;
        };
        if (train_phase == 1) {
            const auto result = train_global(manifest, cfg, opts);
            std::cout << "best epoch " << result.run.best_epoch << " val " << result.run.best_val_loss << "\n";
        } else {
            const auto initial = ModelBundle::from_global(load_global_network(train_model));
            const auto result = train_joint(initial, manifest, cfg, opts);
            std::cout << "best epoch " << result.run.best_epoch << " val " << result.run.best_val_loss << "\n";
        }
    }});

    // -- infer --------------------------------------------------------------
    auto* infer_app = app.add_subcommand("infer", "Predict 68 landmarks for one image");
    auto* infer = settings_for(infer_app);
    std::string infer_image, infer_model, infer_out, infer_vis;
    double infer_padding = kInferencePadding;
    infer_app->add_option("image", infer_image, "Input image")->required();
    infer->add("--model", infer_model, "Model bundle directory")->envname("ARTFACE_MODEL");
    infer->add("--out", infer_out, "Output landmark JSON")->required();
    infer->add("--vis", infer_vis, "Optional PNG with the landmarks drawn as dots");
    infer->add("--padding", infer_padding, "Region crop padding fraction");
    infer->add("--seed", seed, "Random seed");
    commands.push_back({infer_app, infer, [&] {
        require(infer_padding >= 0.0, "--padding must be >= 0");
        auto nets = load_networks(infer_model);
        const cv::Mat image = load_image(infer_image);
        PipelineOptions opts;
        opts.padding_fraction = infer_padding;
        const auto pred = forward_full(image, nets, opts);
        auto j = prediction_to_json(pred, infer_image);
        j["effective_config"] = infer->effective();
        fs::create_directories(parent_or_dot(infer_out));
        write_file_atomic(infer_out, j.dump(2) + "\n");
        if (!infer_vis.empty()) save_image(draw_dots(image, pred.refined), infer_vis);
        for (const auto& w : pred.warnings) std::cerr << "warning: " << w << "\n";
    }});

    // -- evaluate -----------------------------------------------------------
    auto* eval_app = app.add_subcommand("evaluate", "Mean-error report on a manifest split");
    auto* eval = settings_for(eval_app);
    std::string eval_model, eval_corpus, eval_out, eval_split = "test";
    double eval_padding = kInferencePadding;
    eval->add("--model", eval_model, "Model bundle directory")->envname("ARTFACE_MODEL");
    eval->add("--corpus", eval_corpus, "manifest.csv")->required();
    eval->add("--split", eval_split, "train, val or test");
    eval->add("--out", eval_out, "Report directory")->required();
    eval->add("--padding", eval_padding, "Region crop padding fraction");
    eval->add("--seed", seed, "Random seed");
    commands.push_back({eval_app, eval, [&] {
        require(eval_padding >= 0.0, "--padding must be >= 0");
        const Split split = split_from_string(eval_split);
        const auto manifest = read_manifest(eval_corpus);
        auto nets = load_networks(eval_model);
        echo_config(eval_out, "evaluate", eval->effective());
        PipelineOptions opts;
        opts.padding_fraction = eval_padding;
        const auto report = evaluate(manifest, split, nets, opts);
        const fs::path out(eval_out);
        write_file_atomic(out / "images.csv", report.to_csv());
        write_file_atomic(out / "parts.csv", report.parts_csv());
        std::string summary = "set,n,me68_mean,me68_std,me51_mean,me51_std,global_me68_mean,global_me68_std,"
                              "global_me51_mean,global_me51_std,failed\n";
        for (const auto& g : report.groups) {
            char buf[512];
            std::snprintf(buf, sizeof buf, "%s,%d,%.4f,%.4f,%.4f,%.4f,%.4f,%.4f,%.4f,%.4f,%d\n", g.name.c_str(),
                          g.me68.count, g.me68.mean, g.me68.stddev, g.me51.mean, g.me51.stddev, g.global_me68.mean,
                          g.global_me68.stddev, g.global_me51.mean, g.global_me51.stddev, g.failures);
            summary += buf;
        }
        write_file_atomic(out / "report.csv", summary);
        write_file_atomic(out / "report.txt", report.to_table());
        std::cout << report.to_table();
    }});

    // -- register -----------------------------------------------------------
    auto* reg_app = app.add_subcommand("register", "Similarity registration of a source image onto a target");
    auto* reg = settings_for(reg_app);
    std::string reg_src, reg_dst, reg_out;
    std::vector<std::string> reg_landmarks, reg_contours;
    double reg_threshold = 0.0, reg_alpha = 0.5;
    int reg_trials = 2000, reg_tolerance = 1;
    reg_app->add_option("src", reg_src, "Source image")->required();
    reg_app->add_option("dst", reg_dst, "Target image")->required();
    reg->add("--landmarks", reg_landmarks, "Source and target landmark files (.json or .pts)")->expected(2)->required();
    reg->add("--out", reg_out, "Output directory")->required();
    reg->add("--threshold-px", reg_threshold, "Inlier threshold in target pixels; <= 0 uses 1% of the diagonal");
    reg->add("--alpha", reg_alpha, "Blend weight of the target in overlay.png");
    reg->add("--max-trials", reg_trials, "RANSAC iterations");
    reg->add("--contours", reg_contours, "Source and target contour maps for intersection.png")->expected(2);
    reg->add("--tolerance", reg_tolerance, "Contour dilation radius");
    reg->add("--seed", seed, "Random seed");
    commands.push_back({reg_app, reg, [&] {
        require(reg_alpha >= 0.0 && reg_alpha <= 1.0, "--alpha must be in [0, 1]");
        require(reg_trials >= 1, "--max-trials must be >= 1");
        require(reg_tolerance >= 0, "--tolerance must be >= 0");
        const cv::Mat src = load_image(reg_src);
        const cv::Mat dst = load_image(reg_dst);
        auto read_lm = [](const std::string& path, const cv::Mat& img) {
            PtsOptions o;
            o.image_width = img.cols;
            o.image_height = img.rows;
            return read_landmarks(path, o);
        };
        const auto src_lm = read_lm(reg_landmarks[0], src);
        const auto dst_lm = read_lm(reg_landmarks[1], dst);
        RegistrationOptions opts;
        opts.threshold_px = reg_threshold;
        opts.max_trials = reg_trials;
        opts.seed = seed;
        const fs::path out(reg_out);
        echo_config(out, "register", reg->effective());

        auto result = register_landmarks(src_lm, dst_lm, src, opts);
        if (result.warped.empty() || result.warped.size() != dst.size())
            result.warped = warp_similarity(src, result.transform, dst.cols, dst.rows);
        write_file_atomic(out / "transform.json", registration_to_json(result).dump(2) + "\n");
        save_image(result.warped, out / "warped.png");
        save_image(blend_overlay(dst, result.warped, reg_alpha), out / "overlay.png");
        save_image(draw_matches(src, src_lm, dst, dst_lm, result), out / "matches.png");
        if (!reg_contours.empty()) {
            cv::Mat a = load_image(reg_contours[0]);
            cv::Mat b = load_image(reg_contours[1]);
            require(b.size() == dst.size(), "target contour map must match the target image size");
            auto gray = [](const cv::Mat& m) {
                cv::Mat g;
                cv::cvtColor(m, g, cv::COLOR_BGR2GRAY);
                return g;
            };
            const std::vector<cv::Mat> maps = {gray(warp_similarity(a, result.transform, dst.cols, dst.rows)),
                                               gray(b)};
            ContourOverlayOptions co;
            co.tolerance_radius = reg_tolerance;
            const auto colors = default_contour_colors(2);
            save_image(intersection_contour_overlay(maps, colors, co), out / "intersection.png");
        }
        std::cout << result.inliers.size() << " inliers, " << result.outliers.size() << " outliers\n";
    }});

    // -- serve --------------------------------------------------------------
    auto* serve_app = app.add_subcommand("serve", "HTTP annotation backend");
    auto* serve = settings_for(serve_app);
    std::string serve_corpus, serve_model, serve_host = "127.0.0.1";
    int serve_port = 8080;
    serve->add("--corpus", serve_corpus, "Corpus root (images/, annotations/)")->envname("ARTFACE_CORPUS");
    serve->add("--model", serve_model, "Model bundle for /predict")->envname("ARTFACE_MODEL");
    serve->add("--host", serve_host, "Bind address");
    serve->add("--port", serve_port, "TCP port");
    serve->add("--seed", seed, "Random seed");
    commands.push_back({serve_app, serve, [&] {
        require(!serve_corpus.empty(), "--corpus is required (or set ARTFACE_CORPUS)");
        require(serve_port > 0 && serve_port < 65536, "--port must be in 1..65535");
        AnnotationStore store(serve_corpus);
        Predictor predictor;
        std::shared_ptr<TorchNetworks> nets;
        if (!serve_model.empty()) {
            nets = std::make_shared<TorchNetworks>(ModelBundle::load(serve_model));
            predictor = [nets](const cv::Mat& image) { return forward_full(image, *nets).refined; };
        }
        httplib::Server server;
        install_annotation_routes(server, store, predictor);
        if (!server.bind_to_port(serve_host, serve_port))
            throw IoError("cannot bind " + serve_host + ":" + std::to_string(serve_port));
        std::cout << "listening on " << serve_host << ":" << serve_port << std::endl;
        server.listen_after_bind();
    }});

    // -- render-heatmaps ----------------------------------------------------
    auto* heat_app = app.add_subcommand("render-heatmaps", "Dump global and region logits for one image");
    auto* heat = settings_for(heat_app);
    std::string heat_image, heat_model, heat_out;
    double heat_padding = kInferencePadding;
    heat_app->add_option("image", heat_image, "Input image")->required();
    heat->add("--model", heat_model, "Model bundle directory")->envname("ARTFACE_MODEL");
    heat->add("--out", heat_out, "Output directory")->required();
    heat->add("--padding", heat_padding, "Region crop padding fraction");
    heat->add("--seed", seed, "Random seed");
    commands.push_back({heat_app, heat, [&] {
        require(heat_padding >= 0.0, "--padding must be >= 0");
        auto nets = load_networks(heat_model);
        const cv::Mat image = load_image(heat_image);
        const fs::path out(heat_out);
        echo_config(out, "render-heatmaps", heat->effective());
        RecordingNetworks rec(nets);
        PipelineOptions opts;
        opts.padding_fraction = heat_padding;
        forward_full(image, rec, opts);
        write_heatmap_blob(rec.global, out / "global.heatmaps");
        save_image(heatmap_png(rec.global, opts.temperature), out / "global.png");
        for (const auto& [name, stack] : rec.regions) {
            write_heatmap_blob(stack, out / (name + ".heatmaps"));
            save_image(heatmap_png(stack, opts.temperature), out / (name + ".png"));
        }
    }});

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::CallForAllHelp& e) {
        return app.exit(e);
    } catch (const CLI::CallForVersion& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        return fail("usage", "", e.what(), 2);
    }

    for (const auto& cmd : commands) {
        auto* sub = cmd.app;
        if (!sub->parsed()) continue;
        try {
            cmd.settings->resolve();
            torch::manual_seed(seed);
            cmd.run();
            return 0;
        } catch (const std::exception& e) {
            const auto kind = classify(e);
            return fail(kind.name, sub->get_name(), e.what(), kind.code);
        }
    }
    return fail("usage", "", "no subcommand", 2);
}
