#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "artface/dataset.hpp"
#include "artface/errors.hpp"
#include "artface/model.hpp"

namespace artface {

struct PhaseConfig {
    int epochs = 60;
    double learning_rate = 1e-4;
    /// First epoch of the linear decay to zero.
    int decay_start = 30;
    int batch_size = 16;
};

struct TrainingConfig {
    double lambda = 0.25;
    PhaseConfig phase1{60, 1e-4, 30, 16};
    PhaseConfig phase2{30, 1e-4, 10, 4};
    /// Epochs without validation improvement before stopping.
    int patience = 10;
    std::uint64_t seed = 0;
    int width = 64;
    int res_blocks = 6;
    double temperature = kDefaultTemperature;

    /// Throws ValidationError on out-of-range values.
    void validate() const;
};

void to_json(nlohmann::json& j, const TrainingConfig& c);
/// Missing keys keep their defaults; unknown keys are rejected.
void from_json(const nlohmann::json& j, TrainingConfig& c);
/// Short stable hash of the canonical JSON form.
std::string config_fingerprint(const TrainingConfig& c);

/// eta before decay_start, then linear to exactly 0 at the final epoch.
double learning_rate_at(const PhaseConfig& phase, int epoch);

/// Coordinates must be normalized to [-0.5, 0.5] in their own frame; values
/// beyond this slack are rejected as unnormalized.
inline constexpr double kNormalizedSlack = 1e-6;

/// mean_i |g_i - G_i|^2 + lambda * sum_r mean_j |y_rj - Y_rj|^2.
/// `region_preds` and `region_gts` hold one point list per region (any count,
/// including none). Throws ValidationError on mismatched counts or
/// unnormalized coordinates.
double landmark_loss(std::span<const Point2> global_pred, std::span<const Point2> global_gt,
                     std::span<const std::vector<Point2>> region_preds, std::span<const std::vector<Point2>> region_gts,
                     double lambda);

/// Ground-truth landmarks of a region in the crop frame, in the channel order
/// the region network uses (mirrored for the right eye), normalized by the
/// patch size.
std::vector<Point2> region_targets(const LandmarkSet& gt_hr, const RegionCrop& crop, bool mirrored);

/// Inverse of region_targets: normalized network-order points back to global pixels in 300-W region order.
std::vector<Point2> region_targets_to_global(std::span<const Point2> targets, const RegionCrop& crop, RegionName region,
                                             bool mirrored);

/// Crop for training: boxed around `basis` (current global prediction) with
/// the given padding; if a ground-truth point of the region falls outside
/// that crop, the crop is boxed around the ground truth instead.
RegionCrop training_crop(const LandmarkSet& basis, const LandmarkSet& gt_hr, RegionName region, double padding,
                         bool* used_ground_truth = nullptr);

/// One training image, preloaded.
struct PreparedSample {
    std::string id;
    torch::Tensor small;  ///< (3, 256, 256) network input
    cv::Mat image_hr;     ///< 1024 x 1024 float BGR
    LandmarkSet gt_hr;    ///< ground truth in the 1024 frame
    torch::Tensor gt_global;  ///< (68, 2) normalized
};

/// Loads a split. Throws ValidationError when it is empty.
std::vector<PreparedSample> prepare_samples(const Manifest& manifest, Split split);

struct BatchLoss {
    torch::Tensor total;  ///< mean over the batch, differentiable
    double global_term = 0.0;
    double region_term = 0.0;
};

/// Phase-1 objective: the global term only.
BatchLoss global_batch_loss(LandmarkNet& global, std::span<const PreparedSample* const> batch, double temperature);

/// Joint objective. Crops come from the detached global prediction with
/// padding drawn from `rng` (nullptr: inference padding).
BatchLoss joint_batch_loss(ModelBundle& bundle, std::span<const PreparedSample* const> batch, double lambda,
                           double temperature, std::mt19937_64* rng);

struct EpochMetrics {
    int epoch = 0;
    int phase = 1;
    double train_loss = 0.0;
    double val_loss = 0.0;
    double lr = 0.0;
};

struct TrainingRun {
    std::vector<EpochMetrics> metrics;
    int best_epoch = -1;
    double best_val_loss = 0.0;
    bool early_stopped = false;
};

struct TrainOptions {
    /// When set: config.json, metrics.csv and checkpoints/ are written here.
    std::filesystem::path run_dir;
    std::function<void(const EpochMetrics&)> on_epoch;
};

/// Loss became NaN or infinite; the message names the offending batch.
class DivergenceError : public Error {
public:
    using Error::Error;
};

struct GlobalTraining {
    LandmarkNet network{nullptr};  ///< best-on-validation weights
    TrainingRun run;
};

struct JointTraining {
    ModelBundle bundle;  ///< best-on-validation weights
    TrainingRun run;
};

GlobalTraining train_global(const Manifest& manifest, const TrainingConfig& config, const TrainOptions& options = {});
JointTraining train_joint(const ModelBundle& initial, const Manifest& manifest, const TrainingConfig& config,
                          const TrainOptions& options = {});

/// global.pt plus global.json (network spec) in `dir`.
void save_global_checkpoint(const LandmarkNet& net, const std::filesystem::path& dir, const std::string& stem = "global");

}  // namespace artface
