#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <random>

#include "artface/errors.hpp"
#include "artface/training.hpp"
#include "test_support.hpp"

namespace fs = std::filesystem;
using namespace artface;

namespace {

std::vector<Point2> random_normalized(std::mt19937_64& rng, std::size_t n) {
    std::uniform_real_distribution<double> u(-0.5, 0.5);
    std::vector<Point2> out(n);
    for (auto& p : out) p = {u(rng), u(rng)};
    return out;
}

// Independent summation: squared components accumulated separately per axis.
double oracle_loss(const std::vector<Point2>& gp, const std::vector<Point2>& gg,
                   const std::vector<std::vector<Point2>>& rp, const std::vector<std::vector<Point2>>& rg, double lambda) {
    auto term = [](const std::vector<Point2>& a, const std::vector<Point2>& b) {
        double sx = 0.0, sy = 0.0;
        for (std::size_t i = 0; i < a.size(); ++i) {
            sx += std::pow(a[i].x - b[i].x, 2);
            sy += std::pow(a[i].y - b[i].y, 2);
        }
        return sx / a.size() + sy / a.size();
    };
    double r = 0.0;
    for (std::size_t k = 0; k < rp.size(); ++k) r += lambda * term(rp[k], rg[k]);
    return term(gp, gg) + r;
}

std::vector<std::vector<Point2>> region_sets(std::mt19937_64& rng) {
    std::vector<std::vector<Point2>> out;
    for (RegionName r : kRegions) out.push_back(random_normalized(rng, region_indices(r).size()));
    return out;
}

/// Two toy training images with byte-identical copies as the validation split.
class ToyRun : public ::testing::Test {
protected:
    void SetUp() override {
        root = fs::temp_directory_path() / ("artface_train_" + std::to_string(::getpid()) + "_" +
                                            ::testing::UnitTest::GetInstance()->current_test_info()->name());
        fs::remove_all(root);
        write_toy_corpus(root, 2, 21, kHighResSize);
        manifest = read_manifest(root / "manifest.csv");
        const auto train = manifest.rows;
        fs::create_directories(root / "val");
        for (auto r : train) {
            const fs::path img = fs::path("val") / r.image.filename();
            fs::copy_file(manifest.resolve(r.image), root / img);
            r.image = img;
            r.split = Split::val;
            manifest.rows.push_back(r);
        }
        config.width = 4;
        config.res_blocks = 0;
        config.phase1 = {3, 1e-3, 1, 2};
        config.phase2 = {2, 1e-3, 1, 2};
        config.seed = 5;
    }
    void TearDown() override { fs::remove_all(root); }

    fs::path root;
    Manifest manifest;
    TrainingConfig config;
};

}  // namespace

TEST(Loss, PerfectPredictionIsZero) {
    std::mt19937_64 rng(1);
    const auto g = random_normalized(rng, 68);
    const auto r = region_sets(rng);
    EXPECT_EQ(landmark_loss(g, g, r, r, 0.25), 0.0);
}

TEST(Loss, ConstantOffsetCase) {
    std::vector<Point2> gt(68, Point2{0.0, 0.0}), pred(68, Point2{0.1, 0.0});
    std::mt19937_64 rng(2);
    const auto r = region_sets(rng);
    EXPECT_DOUBLE_EQ(landmark_loss(pred, gt, r, r, 0.25), 0.01);
}

TEST(Loss, MatchesSummationOracle) {
    std::mt19937_64 rng(3);
    std::uniform_real_distribution<double> lam(0.0, 2.0);
    for (int trial = 0; trial < 200; ++trial) {
        const auto gp = random_normalized(rng, 68), gg = random_normalized(rng, 68);
        const auto rp = region_sets(rng), rg = region_sets(rng);
        const double l = lam(rng);
        EXPECT_NEAR(landmark_loss(gp, gg, rp, rg, l), oracle_loss(gp, gg, rp, rg, l), 1e-10);
    }
}

TEST(Loss, NonNegativeAndZeroOnlyAtTarget) {
    std::mt19937_64 rng(4);
    const auto g = random_normalized(rng, 68);
    const auto r = region_sets(rng);
    for (int i = 0; i < 68; ++i) {
        auto moved = g;
        moved[static_cast<std::size_t>(i)].x += moved[static_cast<std::size_t>(i)].x > 0 ? -1e-3 : 1e-3;
        EXPECT_GT(landmark_loss(moved, g, r, r, 0.25), 0.0);
    }
    auto moved = r;
    moved[3][5].y = moved[3][5].y > 0 ? moved[3][5].y - 0.01 : moved[3][5].y + 0.01;
    EXPECT_GT(landmark_loss(g, g, moved, r, 0.25), 0.0);
    EXPECT_EQ(landmark_loss(g, g, moved, r, 0.0), 0.0);
}

TEST(Loss, Errors) {
    std::mt19937_64 rng(5);
    const auto g = random_normalized(rng, 68);
    const auto r = region_sets(rng);
    EXPECT_THROW(landmark_loss(std::vector<Point2>(g.begin(), g.end() - 1), g, r, r, 0.25), ValidationError);
    auto short_r = r;
    short_r[2].pop_back();
    EXPECT_THROW(landmark_loss(g, g, short_r, r, 0.25), ValidationError);
    EXPECT_THROW(landmark_loss(g, g, std::span(r).first(3), r, 0.25), ValidationError);
    auto big = g;
    big[0].x = 12.0;  // pixels, not normalized
    EXPECT_THROW(landmark_loss(big, g, r, r, 0.25), ValidationError);
    EXPECT_THROW(landmark_loss(g, g, r, r, -1.0), ValidationError);
}

TEST(Schedule, PointwiseLinearDecay) {
    const PhaseConfig p1{60, 1e-4, 30, 16};
    for (int e = 0; e < 30; ++e) EXPECT_EQ(learning_rate_at(p1, e), 1e-4);
    for (int e = 30; e < 60; ++e) EXPECT_NEAR(learning_rate_at(p1, e), 1e-4 * (59 - e) / 29.0, 1e-18) << e;
    EXPECT_EQ(learning_rate_at(p1, 59), 0.0);
    const PhaseConfig p2{30, 1e-4, 10, 4};
    EXPECT_EQ(learning_rate_at(p2, 9), 1e-4);
    EXPECT_EQ(learning_rate_at(p2, 10), 1e-4);
    EXPECT_NEAR(learning_rate_at(p2, 20), 1e-4 * 9.0 / 19.0, 1e-18);
    EXPECT_EQ(learning_rate_at(p2, 29), 0.0);
    EXPECT_THROW(learning_rate_at(p2, 30), ValidationError);
    EXPECT_THROW(learning_rate_at({10, 1e-4, 10, 1}, 0), ValidationError);
}

TEST(Config, DefaultsJsonAndValidation) {
    TrainingConfig c;
    EXPECT_EQ(c.lambda, 0.25);
    EXPECT_EQ(c.phase1.epochs, 60);
    EXPECT_EQ(c.phase1.decay_start, 30);
    EXPECT_EQ(c.phase1.batch_size, 16);
    EXPECT_EQ(c.phase2.epochs, 30);
    EXPECT_EQ(c.phase2.decay_start, 10);
    EXPECT_EQ(c.phase2.batch_size, 4);
    EXPECT_EQ(c.patience, 10);
    EXPECT_NO_THROW(c.validate());

    TrainingConfig d;
    from_json(nlohmann::json::parse(R"({"lambda": 0.5, "phase2": {"epochs": 7}, "seed": 9})"), d);
    EXPECT_EQ(d.lambda, 0.5);
    EXPECT_EQ(d.phase2.epochs, 7);
    EXPECT_EQ(d.phase2.decay_start, 10);  // untouched, now invalid
    EXPECT_THROW(d.validate(), ValidationError);
    EXPECT_NE(config_fingerprint(c), config_fingerprint(d));

    TrainingConfig e;
    from_json(nlohmann::json(c), e);
    EXPECT_EQ(nlohmann::json(e), nlohmann::json(c));
    EXPECT_EQ(config_fingerprint(e), config_fingerprint(c));
    EXPECT_THROW(from_json(nlohmann::json::parse(R"({"lamda": 1})"), e), ValidationError);
    EXPECT_THROW(from_json(nlohmann::json::parse(R"({"lambda": "x"})"), e), ValidationError);
    e.lambda = -0.1;
    EXPECT_THROW(e.validate(), ValidationError);
}

TEST(Targets, InvertLocalToGlobal) {
    std::mt19937_64 rng(6);
    for (int trial = 0; trial < 50; ++trial) {
        const auto gt = fixtures::random_landmarks(rng, kHighResSize, kHighResSize, 100);
        for (RegionName r : kRegions) {
            const RegionCrop crop =
                compute_region_bbox(select_indices(gt, region_indices(r)), sample_training_padding(rng), kHighResSize,
                                    kHighResSize, r);
            for (bool mirrored : {false, true}) {
                if (mirrored && r != RegionName::right_eye_region) continue;
                const auto t = region_targets(gt, crop, mirrored);
                for (const auto& p : t) {
                    EXPECT_LE(std::abs(p.x), 0.5 + kNormalizedSlack);
                    EXPECT_LE(std::abs(p.y), 0.5 + kNormalizedSlack);
                }
                const auto back = region_targets_to_global(t, crop, r, mirrored);
                const auto idx = region_indices(r);
                for (std::size_t k = 0; k < idx.size(); ++k) EXPECT_LT(distance(back[k], gt[idx[k]]), 1e-9);
            }
        }
    }
}

TEST(Targets, MirroredEyeUsesLeftEyeRoles) {
    std::mt19937_64 rng(7);
    const auto gt = fixtures::random_landmarks(rng, kHighResSize, kHighResSize, 100);
    const RegionName r = RegionName::right_eye_region;
    const RegionCrop crop = compute_region_bbox(select_indices(gt, region_indices(r)), 0.3, kHighResSize, kHighResSize, r);
    const auto t = region_targets(gt, crop, true);
    const auto left = region_indices(RegionName::left_eye_region);
    for (std::size_t k = 0; k < left.size(); ++k) {
        // Channel k holds the mirror partner of left-eye landmark k, flipped in the patch.
        const Point2 local = global_to_local(gt[mirror_index(left[k])], crop);
        EXPECT_NEAR(t[k].x, (crop.patch_size - 1 - local.x) / crop.patch_size - 0.5, 1e-12);
        EXPECT_NEAR(t[k].y, local.y / crop.patch_size - 0.5, 1e-12);
    }
}

TEST(Targets, TrainingCropFallsBackToGroundTruth) {
    std::vector<Point2> face, shifted;
    for (const auto& p : template_face()) {
        face.push_back(Point2{512, 512} + 250.0 * p);
        shifted.push_back(face.back() + Point2{400.0, 0.0});
    }
    const auto gt = LandmarkSet::from_vector(face, kHighResSize, kHighResSize);
    bool fell_back = true;
    const auto same = training_crop(gt, gt, RegionName::mouth, 0.3, &fell_back);
    EXPECT_FALSE(fell_back);
    const auto far = LandmarkSet::from_vector(shifted, kHighResSize, kHighResSize);
    const auto crop = training_crop(far, gt, RegionName::mouth, 0.3, &fell_back);
    EXPECT_TRUE(fell_back);
    EXPECT_DOUBLE_EQ(crop.x0, same.x0);
    const std::vector<Point2> collapsed(68, Point2{500, 500});
    training_crop(LandmarkSet::from_vector(collapsed, kHighResSize, kHighResSize), gt, RegionName::nose, 0.3, &fell_back);
    EXPECT_TRUE(fell_back);
}

TEST_F(ToyRun, BatchLossesMatchScalarLoss) {
    const auto samples = prepare_samples(manifest, Split::train);
    ASSERT_EQ(samples.size(), 2u);
    torch::manual_seed(1);
    auto bundle = ModelBundle::create(4, 0);
    const std::vector<const PreparedSample*> batch = {&samples[0], &samples[1]};
    torch::NoGradGuard no_grad;
    const auto joint = joint_batch_loss(bundle, batch, 0.25, 1.0, nullptr);
    const auto global = global_batch_loss(bundle.global, batch, 1.0);
    EXPECT_NEAR(global.global_term, joint.global_term, 1e-9);

    // Rebuild the same objective through the inference-side path.
    TorchNetworks nets(bundle);
    double expect = 0.0, expect_global = 0.0;
    for (const auto* s : batch) {
        const auto logits = nets.global_logits(to_planar(downsample(s->image_hr, kUpscaleFactor)));
        const auto coarse = spatial_softargmax(logits);
        std::vector<Point2> gp, gg;
        for (int i = 0; i < kNumLandmarks; ++i) {
            gp.push_back(normalize_point(coarse[static_cast<std::size_t>(i)], kGlobalSize, kGlobalSize));
            gg.push_back(normalize_point(s->gt_hr[i], kHighResSize, kHighResSize));
        }
        const auto predicted = LandmarkSet::from_vector(upscale_global(coarse), kHighResSize, kHighResSize);
        std::vector<std::vector<Point2>> rp, rg;
        for (RegionName r : kRegions) {
            const auto crop = training_crop(predicted, s->gt_hr, r, kInferencePadding);
            const bool mirrored = r == RegionName::right_eye_region;
            const auto order = region_channel_order(r, mirrored);
            PlanarImage fused = crop_and_fuse(s->image_hr, logits, crop, order);
            if (mirrored) fused = flip_horizontal(fused);
            const auto local = spatial_softargmax(nets.region_logits({r, crop, mirrored, order, fused}));
            std::vector<Point2> n;
            for (const auto& p : local) n.push_back(normalize_point(p, kPatchSize, kPatchSize));
            rp.push_back(n);
            rg.push_back(region_targets(s->gt_hr, crop, mirrored));
        }
        expect += landmark_loss(gp, gg, rp, rg, 0.25) / 2.0;
        expect_global += landmark_loss(gp, gg, {}, {}, 0.25) / 2.0;
    }
    EXPECT_NEAR(global.global_term, expect_global, 1e-6);
    EXPECT_NEAR(joint.total.item<double>(), expect, 1e-5 * std::max(1.0, expect));
}

TEST_F(ToyRun, ZeroLambdaGivesZeroRegionGradients) {
    const auto samples = prepare_samples(manifest, Split::train);
    const std::vector<const PreparedSample*> batch = {&samples[0], &samples[1]};
    for (double lambda : {0.0, 0.25}) {
        torch::manual_seed(2);
        auto bundle = ModelBundle::create(4, 0);
        std::mt19937_64 rng(3);
        joint_batch_loss(bundle, batch, lambda, 1.0, &rng).total.backward();
        double region_grad = 0.0;
        for (NetworkKind k : {NetworkKind::eye, NetworkKind::nose, NetworkKind::mouth}) {
            for (const auto& p : bundle.network(k)->parameters()) {
                ASSERT_TRUE(p.grad().defined());
                region_grad += p.grad().abs().sum().item<double>();
            }
        }
        double global_grad = 0.0;
        for (const auto& p : bundle.global->parameters()) global_grad += p.grad().abs().sum().item<double>();
        EXPECT_GT(global_grad, 0.0);
        if (lambda == 0.0) {
            EXPECT_EQ(region_grad, 0.0);
        } else {
            EXPECT_GT(region_grad, 0.0);
        }
    }
}

TEST_F(ToyRun, FixedSeedGivesIdenticalCurves) {
    const auto a = train_global(manifest, config);
    const auto b = train_global(manifest, config);
    ASSERT_EQ(a.run.metrics.size(), b.run.metrics.size());
    for (std::size_t i = 0; i < a.run.metrics.size(); ++i) {
        EXPECT_EQ(a.run.metrics[i].train_loss, b.run.metrics[i].train_loss);
        EXPECT_EQ(a.run.metrics[i].val_loss, b.run.metrics[i].val_loss);
    }
    const auto ja = train_joint(ModelBundle::from_global(a.network), manifest, config);
    const auto jb = train_joint(ModelBundle::from_global(b.network), manifest, config);
    for (std::size_t i = 0; i < ja.run.metrics.size(); ++i) {
        EXPECT_EQ(ja.run.metrics[i].train_loss, jb.run.metrics[i].train_loss);
    }
}

TEST_F(ToyRun, RunDirectoryBookkeeping) {
    const fs::path run = root / "run";
    std::vector<EpochMetrics> seen;
    auto g = train_global(manifest, config, {run, [&](const EpochMetrics& m) { seen.push_back(m); }});
    EXPECT_EQ(seen.size(), 3u);
    EXPECT_TRUE(fs::exists(run / "config.json"));
    EXPECT_TRUE(fs::exists(run / "checkpoints" / "global_best.pt"));
    EXPECT_TRUE(fs::exists(run / "checkpoints" / "global_last.pt"));
    TrainingConfig echoed;
    from_json(nlohmann::json::parse(read_text_file(run / "config.json")), echoed);
    EXPECT_EQ(config_fingerprint(echoed), config_fingerprint(config));

    // The returned network is the best-on-validation one and is what global.pt holds.
    auto loaded = load_global_network(run);
    torch::NoGradGuard no_grad;
    const auto x = torch::rand({1, 3, 256, 256});
    EXPECT_TRUE(torch::equal(loaded->forward(x), g.network->forward(x)));
    double best = 1e9;
    for (const auto& m : seen) best = std::min(best, m.val_loss);
    EXPECT_EQ(g.run.best_val_loss, best);

    const auto j = train_joint(ModelBundle::from_global(g.network), manifest, config, {run, {}});
    EXPECT_TRUE(fs::exists(run / "model" / "bundle.json"));
    EXPECT_TRUE(fs::exists(run / "checkpoints" / "joint_best" / "bundle.json"));
    const auto bundle = ModelBundle::load(run / "model");
    EXPECT_EQ(bundle.config_fingerprint, config_fingerprint(config));

    const std::string csv = read_text_file(run / "metrics.csv");
    EXPECT_EQ(csv.rfind("epoch,phase,train_loss,val_loss,lr\n", 0), 0u);
    EXPECT_EQ(std::count(csv.begin(), csv.end(), '\n'), 1 + 3 + 2);
    EXPECT_NE(csv.find("\n0,2,"), std::string::npos);
    EXPECT_NE(csv.find("\n2,1,"), std::string::npos);
}

TEST_F(ToyRun, EarlyStoppingOnStagnation) {
    // A step far below float resolution leaves the weights, and so the validation loss, unchanged.
    config.phase1 = {10, 1e-20, 5, 2};
    config.patience = 2;
    const auto g = train_global(manifest, config);
    EXPECT_TRUE(g.run.early_stopped);
    EXPECT_EQ(g.run.metrics.size(), 3u);
    EXPECT_EQ(g.run.best_epoch, 0);
}

TEST_F(ToyRun, DivergenceNamesTheBatch) {
    config.phase1 = {3, 1e30, 2, 1};
    try {
        train_global(manifest, config);
        FAIL() << "expected divergence";
    } catch (const DivergenceError& e) {
        const std::string msg = e.what();
        EXPECT_NE(msg.find("batch"), std::string::npos);
        EXPECT_NE(msg.find("toy_"), std::string::npos);
    }
}

TEST_F(ToyRun, EmptySplitsAndMissingPhaseOne) {
    Manifest only_train = manifest;
    std::erase_if(only_train.rows, [](const ManifestRow& r) { return r.split == Split::val; });
    EXPECT_THROW(train_global(only_train, config), ValidationError);
    EXPECT_THROW(prepare_samples(manifest, Split::test), ValidationError);
    ModelBundle partial;
    EXPECT_THROW(train_joint(partial, manifest, config), ValidationError);
}
