#include "artface/training.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <sstream>

#include "artface/errors.hpp"
#include "artface/seed.hpp"

namespace fs = std::filesystem;

namespace artface {

namespace {

// Samples per forward pass; larger batches accumulate gradients.
constexpr int kMicroBatch = 2;

void validate_phase(const PhaseConfig& p, const char* name) {
    const std::string n(name);
    if (p.epochs < 1) throw ValidationError(n + ".epochs must be >= 1");
    if (!(p.learning_rate > 0.0) || !std::isfinite(p.learning_rate)) throw ValidationError(n + ".learning_rate must be > 0");
    if (p.decay_start < 0 || p.decay_start >= p.epochs) {
        throw ValidationError(n + ".decay_start must lie in [0, epochs)");
    }
    if (p.batch_size < 1) throw ValidationError(n + ".batch_size must be >= 1");
}

void phase_to_json(nlohmann::json& j, const PhaseConfig& p) {
    j = {{"epochs", p.epochs}, {"learning_rate", p.learning_rate}, {"decay_start", p.decay_start}, {"batch_size", p.batch_size}};
}

void phase_from_json(const nlohmann::json& j, PhaseConfig& p, const std::string& name) {
    if (!j.is_object()) throw ValidationError(name + " must be an object");
    for (const auto& [k, v] : j.items()) {
        if (k == "epochs") p.epochs = v.get<int>();
        else if (k == "learning_rate") p.learning_rate = v.get<double>();
        else if (k == "decay_start") p.decay_start = v.get<int>();
        else if (k == "batch_size") p.batch_size = v.get<int>();
        else throw ValidationError("unknown training config key " + name + "." + k);
    }
}

}  // namespace

void TrainingConfig::validate() const {
    if (!(lambda >= 0.0) || !std::isfinite(lambda)) throw ValidationError("lambda must be >= 0");
    validate_phase(phase1, "phase1");
    validate_phase(phase2, "phase2");
    if (patience < 1) throw ValidationError("patience must be >= 1");
    if (width < 1 || res_blocks < 0) throw ValidationError("width must be >= 1 and res_blocks >= 0");
    if (!(temperature > 0.0)) throw ValidationError("temperature must be > 0");
}

void to_json(nlohmann::json& j, const TrainingConfig& c) {
    nlohmann::json p1, p2;
    phase_to_json(p1, c.phase1);
    phase_to_json(p2, c.phase2);
    j = {{"lambda", c.lambda},   {"phase1", p1},         {"phase2", p2},
         {"patience", c.patience}, {"seed", c.seed},     {"width", c.width},
         {"res_blocks", c.res_blocks}, {"temperature", c.temperature}};
}

void from_json(const nlohmann::json& j, TrainingConfig& c) {
    if (!j.is_object()) throw ValidationError("training config must be a JSON object");
    try {
        for (const auto& [k, v] : j.items()) {
            if (k == "lambda") c.lambda = v.get<double>();
            else if (k == "phase1") phase_from_json(v, c.phase1, k);
            else if (k == "phase2") phase_from_json(v, c.phase2, k);
            else if (k == "patience") c.patience = v.get<int>();
            else if (k == "seed") c.seed = v.get<std::uint64_t>();
            else if (k == "width") c.width = v.get<int>();
            else if (k == "res_blocks") c.res_blocks = v.get<int>();
            else if (k == "temperature") c.temperature = v.get<double>();
            else throw ValidationError("unknown training config key " + k);
        }
    } catch (const nlohmann::json::exception& e) {
        throw ValidationError(std::string("training config: ") + e.what());
    }
}

std::string config_fingerprint(const TrainingConfig& c) {
    const std::string text = nlohmann::json(c).dump();
    std::uint64_t h = 1469598103934665603ULL;
    for (unsigned char ch : text) {
        h ^= ch;
        h *= 1099511628211ULL;
    }
    char buf[17];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
    return buf;
}

double learning_rate_at(const PhaseConfig& phase, int epoch) {
    validate_phase(phase, "phase");
    if (epoch < 0 || epoch >= phase.epochs) throw ValidationError("epoch out of range");
    if (epoch < phase.decay_start) return phase.learning_rate;
    const int last = phase.epochs - 1;
    if (epoch == last) return 0.0;
    return phase.learning_rate * static_cast<double>(last - epoch) / static_cast<double>(last - phase.decay_start);
}

double landmark_loss(std::span<const Point2> global_pred, std::span<const Point2> global_gt,
                     std::span<const std::vector<Point2>> region_preds, std::span<const std::vector<Point2>> region_gts,
                     double lambda) {
    if (!(lambda >= 0.0)) throw ValidationError("lambda must be >= 0");
    if (global_pred.size() != global_gt.size() || global_pred.empty()) {
        throw ValidationError("global prediction and ground truth must have the same nonzero count");
    }
    if (region_preds.size() != region_gts.size()) throw ValidationError("region prediction and target counts differ");
    auto check = [](std::span<const Point2> pts) {
        for (const auto& p : pts) {
            if (!is_finite(p) || std::abs(p.x) > 0.5 + kNormalizedSlack || std::abs(p.y) > 0.5 + kNormalizedSlack) {
                throw ValidationError("loss expects coordinates normalized to [-0.5, 0.5]");
            }
        }
    };
    auto mean_sq = [&](std::span<const Point2> a, std::span<const Point2> b) {
        check(a);
        check(b);
        double s = 0.0;
        for (std::size_t i = 0; i < a.size(); ++i) {
            const Point2 d = a[i] - b[i];
            s += d.x * d.x + d.y * d.y;
        }
        return s / static_cast<double>(a.size());
    };
    double regions = 0.0;
    for (std::size_t r = 0; r < region_preds.size(); ++r) {
        if (region_preds[r].size() != region_gts[r].size() || region_preds[r].empty()) {
            throw ValidationError("region " + std::to_string(r) + ": prediction and target counts differ");
        }
        regions += mean_sq(region_preds[r], region_gts[r]);
    }
    return mean_sq(global_pred, global_gt) + lambda * regions;
}

std::vector<Point2> region_targets(const LandmarkSet& gt_hr, const RegionCrop& crop, bool mirrored) {
    const auto order = region_channel_order(crop.name, mirrored);
    std::vector<Point2> out;
    out.reserve(order.size());
    for (int idx : order) {
        Point2 l = global_to_local(gt_hr[idx], crop);
        if (mirrored) l = mirror_local(l, crop.patch_size);
        out.push_back(normalize_point(l, crop.patch_size, crop.patch_size));
    }
    return out;
}

std::vector<Point2> region_targets_to_global(std::span<const Point2> targets, const RegionCrop& crop, RegionName region,
                                             bool mirrored) {
    const auto order = region_channel_order(region, mirrored);
    if (targets.size() != order.size()) throw ValidationError("region target count does not match the region");
    const auto idx = region_indices(region);
    std::vector<Point2> out(idx.size());
    for (std::size_t k = 0; k < order.size(); ++k) {
        Point2 l = denormalize_point(targets[k], crop.patch_size, crop.patch_size);
        if (mirrored) l = mirror_local(l, crop.patch_size);
        const auto pos = std::find(idx.begin(), idx.end(), order[k]) - idx.begin();
        out[static_cast<std::size_t>(pos)] = local_to_global(l, crop);
    }
    return out;
}

RegionCrop training_crop(const LandmarkSet& basis, const LandmarkSet& gt_hr, RegionName region, double padding,
                         bool* used_ground_truth) {
    const auto idx = region_indices(region);
    auto inside = [&](const RegionCrop& crop) {
        for (int i : idx) {
            const Point2 l = global_to_local(gt_hr[i], crop);
            if (!(l.x >= 0.0 && l.y >= 0.0 && l.x <= crop.patch_size && l.y <= crop.patch_size)) return false;
        }
        return true;
    };
    try {
        const RegionCrop crop =
            compute_region_bbox(select_indices(basis, idx), padding, kHighResSize, kHighResSize, region);
        if (inside(crop)) {
            if (used_ground_truth) *used_ground_truth = false;
            return crop;
        }
    } catch (const DegenerateError&) {
        // Collapsed prediction; fall through to the ground-truth box.
    }
    if (used_ground_truth) *used_ground_truth = true;
    return compute_region_bbox(select_indices(gt_hr, idx), padding, kHighResSize, kHighResSize, region);
}

std::vector<PreparedSample> prepare_samples(const Manifest& manifest, Split split) {
    const auto rows = manifest.split_rows(split);
    if (rows.empty()) throw ValidationError("split '" + std::string(to_string(split)) + "' is empty");
    std::vector<PreparedSample> out;
    out.reserve(rows.size());
    for (const auto& row : rows) {
        Sample s = load_sample(manifest, row, kHighResSize);
        PreparedSample p;
        p.id = row.image.generic_string();
        p.small = to_tensor(to_planar(downsample(s.image, kUpscaleFactor))).squeeze(0);
        p.image_hr = s.image;
        p.gt_hr = s.landmarks;
        auto gt = torch::empty({kNumLandmarks, 2}, torch::kFloat);
        for (int i = 0; i < kNumLandmarks; ++i) {
            const Point2 n = normalize_point(s.landmarks[i], kHighResSize, kHighResSize);
            gt[i][0] = n.x;
            gt[i][1] = n.y;
        }
        p.gt_global = gt;
        out.push_back(std::move(p));
    }
    return out;
}

namespace {

torch::Tensor per_sample_sq(const torch::Tensor& pred, const torch::Tensor& gt) {
    return (pred - gt).pow(2).sum(-1).mean(-1);
}

struct GlobalForward {
    torch::Tensor logits;
    torch::Tensor coords;  // pixels, (B, 68, 2)
    torch::Tensor per_sample;
};

GlobalForward forward_global(LandmarkNet& global, std::span<const PreparedSample* const> batch, double temperature) {
    std::vector<torch::Tensor> xs, gts;
    for (const auto* s : batch) {
        xs.push_back(s->small);
        gts.push_back(s->gt_global);
    }
    GlobalForward f;
    f.logits = global->forward(torch::stack(xs));
    f.coords = softargmax(f.logits, temperature);
    f.per_sample = per_sample_sq(f.coords / static_cast<double>(kGlobalSize) - 0.5, torch::stack(gts));
    return f;
}

}  // namespace

BatchLoss global_batch_loss(LandmarkNet& global, std::span<const PreparedSample* const> batch, double temperature) {
    if (batch.empty()) throw ValidationError("empty batch");
    const auto f = forward_global(global, batch, temperature);
    BatchLoss out;
    out.total = f.per_sample.mean();
    out.global_term = out.total.item<double>();
    return out;
}

BatchLoss joint_batch_loss(ModelBundle& bundle, std::span<const PreparedSample* const> batch, double lambda,
                           double temperature, std::mt19937_64* rng) {
    if (batch.empty()) throw ValidationError("empty batch");
    const auto f = forward_global(bundle.global, batch, temperature);
    const auto coords = f.coords.detach().to(torch::kDouble).contiguous();
    const auto logits = f.logits.detach();

    struct Group {
        std::vector<torch::Tensor> inputs;
        std::vector<Point2> targets;
        std::vector<int64_t> owner;
        int per_item = 0;
    };
    std::array<Group, 3> groups;  // eye, nose, mouth
    auto group_of = [&](RegionName r) -> Group& {
        return groups[static_cast<std::size_t>(network_kind(r)) - 1];
    };

    for (std::size_t b = 0; b < batch.size(); ++b) {
        const PreparedSample& s = *batch[b];
        std::vector<Point2> pts(kNumLandmarks);
        const double* c = coords.data_ptr<double>() + b * kNumLandmarks * 2;
        for (int i = 0; i < kNumLandmarks; ++i) pts[static_cast<std::size_t>(i)] = {c[2 * i], c[2 * i + 1]};
        const LandmarkSet predicted = LandmarkSet::from_vector(upscale_global(pts), kHighResSize, kHighResSize);
        const HeatmapStack heat = to_heatmaps(logits[static_cast<int64_t>(b)]);
        for (RegionName r : kRegions) {
            const double padding = rng ? sample_training_padding(*rng) : kInferencePadding;
            const RegionCrop crop = training_crop(predicted, s.gt_hr, r, padding);
            const bool mirrored = r == RegionName::right_eye_region;
            const auto order = region_channel_order(r, mirrored);
            PlanarImage fused = crop_and_fuse(s.image_hr, heat, crop, order);
            if (mirrored) fused = flip_horizontal(fused);
            Group& g = group_of(r);
            g.inputs.push_back(to_tensor(fused));
            const auto t = region_targets(s.gt_hr, crop, mirrored);
            g.targets.insert(g.targets.end(), t.begin(), t.end());
            g.owner.push_back(static_cast<int64_t>(b));
            g.per_item = static_cast<int>(t.size());
        }
    }

    auto region_sum = torch::zeros({static_cast<int64_t>(batch.size())}, torch::kFloat);
    for (std::size_t k = 0; k < groups.size(); ++k) {
        Group& g = groups[k];
        auto& net = bundle.network(static_cast<NetworkKind>(k + 1));
        const auto out = softargmax(net->forward(torch::cat(g.inputs)), temperature);
        const auto n = static_cast<int64_t>(g.inputs.size());
        auto target = torch::empty({n, g.per_item, 2}, torch::kFloat);
        auto acc = target.accessor<float, 3>();
        for (int64_t i = 0; i < n; ++i) {
            for (int j = 0; j < g.per_item; ++j) {
                const Point2& p = g.targets[static_cast<std::size_t>(i * g.per_item + j)];
                acc[i][j][0] = static_cast<float>(p.x);
                acc[i][j][1] = static_cast<float>(p.y);
            }
        }
        const auto per = per_sample_sq(out / static_cast<double>(kPatchSize) - 0.5, target);
        region_sum = region_sum.index_add(0, torch::tensor(g.owner, torch::kLong), per);
    }

    BatchLoss res;
    res.total = (f.per_sample + lambda * region_sum).mean();
    res.global_term = f.per_sample.mean().item<double>();
    res.region_term = region_sum.mean().item<double>();
    return res;
}

void save_global_checkpoint(const LandmarkNet& net, const fs::path& dir, const std::string& stem) {
    fs::create_directories(dir);
    save_network(net, dir / (stem + ".pt"));
    write_file_atomic(dir / (stem + ".json"), spec_to_json(net->spec()).dump(2) + "\n");
}

namespace {

struct PhaseHooks {
    std::function<BatchLoss(std::span<const PreparedSample* const>, std::mt19937_64*)> loss;
    std::function<void(bool)> set_training;
    std::function<void()> keep_best;
    std::function<void(const fs::path&, const std::string&)> save;
};

void write_metrics(const fs::path& run_dir, int phase, const std::vector<EpochMetrics>& metrics) {
    const fs::path path = run_dir / "metrics.csv";
    std::string kept;
    if (fs::exists(path)) {
        std::istringstream in(read_text_file(path));
        std::string line;
        std::getline(in, line);  // header
        while (std::getline(in, line)) {
            const auto a = line.find(',');
            const auto b = line.find(',', a + 1);
            if (a == std::string::npos || b == std::string::npos) continue;
            if (line.substr(a + 1, b - a - 1) != std::to_string(phase)) kept += line + "\n";
        }
    }
    std::string out = "epoch,phase,train_loss,val_loss,lr\n" + kept;
    char buf[160];
    for (const auto& m : metrics) {
        std::snprintf(buf, sizeof buf, "%d,%d,%.10g,%.10g,%.10g\n", m.epoch, m.phase, m.train_loss, m.val_loss, m.lr);
        out += buf;
    }
    write_file_atomic(path, out);
}

std::string batch_ids(std::span<const PreparedSample* const> batch) {
    std::string s;
    for (const auto* p : batch) s += (s.empty() ? "" : " ") + p->id;
    return s;
}

TrainingRun run_phase(int phase, const PhaseConfig& pc, const TrainingConfig& config,
                      const std::vector<torch::Tensor>& params, const std::vector<PreparedSample>& train,
                      const std::vector<PreparedSample>& val, const PhaseHooks& hooks, const TrainOptions& options) {
    torch::AutoGradMode grad_mode(true);
    torch::optim::Adam optimizer(params, torch::optim::AdamOptions(pc.learning_rate));
    std::mt19937_64 rng(derive_seed(config.seed, 100 + static_cast<std::uint64_t>(phase)));
    std::vector<const PreparedSample*> order;
    for (const auto& s : train) order.push_back(&s);
    std::vector<const PreparedSample*> val_ptrs;
    for (const auto& s : val) val_ptrs.push_back(&s);

    if (!options.run_dir.empty()) {
        fs::create_directories(options.run_dir / "checkpoints");
        nlohmann::json cfg = config;
        write_file_atomic(options.run_dir / "config.json", cfg.dump(2) + "\n");
    }

    TrainingRun run;
    int stale = 0;
    const std::string tag = phase == 1 ? "global" : "joint";
    for (int epoch = 0; epoch < pc.epochs; ++epoch) {
        const double lr = learning_rate_at(pc, epoch);
        for (auto& group : optimizer.param_groups()) static_cast<torch::optim::AdamOptions&>(group.options()).lr(lr);
        std::shuffle(order.begin(), order.end(), rng);

        hooks.set_training(true);
        double train_sum = 0.0;
        int batch_no = 0;
        for (std::size_t start = 0; start < order.size(); start += static_cast<std::size_t>(pc.batch_size), ++batch_no) {
            const std::size_t end = std::min(order.size(), start + static_cast<std::size_t>(pc.batch_size));
            const double batch_n = static_cast<double>(end - start);
            optimizer.zero_grad();
            for (std::size_t m = start; m < end; m += kMicroBatch) {
                const std::span<const PreparedSample* const> micro(order.data() + m,
                                                                   std::min(end, m + kMicroBatch) - m);
                BatchLoss l = hooks.loss(micro, &rng);
                const double v = l.total.item<double>();
                if (!std::isfinite(v)) {
                    throw DivergenceError("loss is not finite in phase " + std::to_string(phase) + ", epoch " +
                                          std::to_string(epoch) + ", batch " + std::to_string(batch_no) + " [" +
                                          batch_ids(micro) + "]");
                }
                (l.total * (static_cast<double>(micro.size()) / batch_n)).backward();
                train_sum += v * static_cast<double>(micro.size());
            }
            optimizer.step();
        }

        hooks.set_training(false);
        double val_sum = 0.0;
        {
            torch::NoGradGuard no_grad;
            for (std::size_t m = 0; m < val_ptrs.size(); m += kMicroBatch) {
                const std::span<const PreparedSample* const> micro(val_ptrs.data() + m,
                                                                   std::min(val_ptrs.size(), m + kMicroBatch) - m);
                const double v = hooks.loss(micro, nullptr).total.item<double>();
                if (!std::isfinite(v)) {
                    throw DivergenceError("validation loss is not finite in phase " + std::to_string(phase) +
                                          ", epoch " + std::to_string(epoch) + " [" + batch_ids(micro) + "]");
                }
                val_sum += v * static_cast<double>(micro.size());
            }
        }

        EpochMetrics m{epoch, phase, train_sum / static_cast<double>(order.size()),
                       val_sum / static_cast<double>(val_ptrs.size()), lr};
        run.metrics.push_back(m);
        if (!options.run_dir.empty()) write_metrics(options.run_dir, phase, run.metrics);
        if (options.on_epoch) options.on_epoch(m);

        if (run.best_epoch < 0 || m.val_loss < run.best_val_loss) {
            run.best_epoch = epoch;
            run.best_val_loss = m.val_loss;
            stale = 0;
            hooks.keep_best();
            if (!options.run_dir.empty()) hooks.save(options.run_dir / "checkpoints", tag + "_best");
        } else if (++stale >= config.patience) {
            run.early_stopped = true;
            break;
        }
    }
    if (!options.run_dir.empty()) hooks.save(options.run_dir / "checkpoints", tag + "_last");
    return run;
}

}  // namespace

GlobalTraining train_global(const Manifest& manifest, const TrainingConfig& config, const TrainOptions& options) {
    config.validate();
    const auto train = prepare_samples(manifest, Split::train);
    const auto val = prepare_samples(manifest, Split::val);

    torch::manual_seed(derive_seed(config.seed, 1));
    LandmarkNet net = build_global(config.width, config.res_blocks);
    LandmarkNet best{nullptr};

    PhaseHooks hooks;
    hooks.loss = [&](std::span<const PreparedSample* const> b, std::mt19937_64*) {
        return global_batch_loss(net, b, config.temperature);
    };
    hooks.set_training = [&](bool on) { net->train(on); };
    hooks.keep_best = [&] { best = std::dynamic_pointer_cast<LandmarkNetImpl>(net->clone()); };
    hooks.save = [&](const fs::path& dir, const std::string& stem) { save_global_checkpoint(net, dir, stem); };

    GlobalTraining out;
    out.run = run_phase(1, config.phase1, config, net->parameters(), train, val, hooks, options);
    out.network = best;
    out.network->eval();
    if (!options.run_dir.empty()) save_global_checkpoint(out.network, options.run_dir, "global");
    return out;
}

JointTraining train_joint(const ModelBundle& initial, const Manifest& manifest, const TrainingConfig& config,
                          const TrainOptions& options) {
    config.validate();
    for (NetworkKind k : {NetworkKind::global, NetworkKind::eye, NetworkKind::nose, NetworkKind::mouth}) {
        if (!initial.network(k)) throw ValidationError("joint training needs all networks (phase-1 weights first)");
    }
    const auto train = prepare_samples(manifest, Split::train);
    const auto val = prepare_samples(manifest, Split::val);

    ModelBundle bundle = initial.clone();
    bundle.config_fingerprint = config_fingerprint(config);
    ModelBundle best;

    std::vector<torch::Tensor> params;
    for (NetworkKind k : {NetworkKind::global, NetworkKind::eye, NetworkKind::nose, NetworkKind::mouth}) {
        for (auto& p : bundle.network(k)->parameters()) params.push_back(p);
    }

    PhaseHooks hooks;
    hooks.loss = [&](std::span<const PreparedSample* const> b, std::mt19937_64* rng) {
        return joint_batch_loss(bundle, b, config.lambda, config.temperature, rng);
    };
    hooks.set_training = [&](bool on) { bundle.set_training(on); };
    hooks.keep_best = [&] { best = bundle.clone(); };
    hooks.save = [&](const fs::path& dir, const std::string& stem) { bundle.save(dir / stem); };

    JointTraining out;
    out.run = run_phase(2, config.phase2, config, params, train, val, hooks, options);
    out.bundle = std::move(best);
    out.bundle.set_training(false);
    if (!options.run_dir.empty()) out.bundle.save(options.run_dir / "model");
    return out;
}

}  // namespace artface
