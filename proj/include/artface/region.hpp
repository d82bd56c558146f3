#pragma once

#include <array>
#include <optional>
#include <random>
#include <span>
#include <string_view>
#include <vector>

#include <json.hpp>
#include <opencv2/core.hpp>

#include "artface/heatmap.hpp"
#include "artface/image.hpp"
#include "artface/landmarks.hpp"

namespace artface {

enum class RegionName { left_eye_region, right_eye_region, nose, mouth };

inline constexpr std::array<RegionName, 4> kRegions = {RegionName::left_eye_region, RegionName::right_eye_region,
                                                       RegionName::nose, RegionName::mouth};
inline constexpr int kPatchSize = 256;
inline constexpr int kGlobalSize = 256;
inline constexpr int kHighResSize = 1024;
inline constexpr int kUpscaleFactor = kHighResSize / kGlobalSize;
inline constexpr double kInferencePadding = 0.25;
inline constexpr double kTrainPaddingMin = 0.25;
inline constexpr double kTrainPaddingMax = 0.5;

std::string_view to_string(RegionName region);
RegionName region_from_string(std::string_view name);

/// Landmark indices of a region, in 300-W order (11 / 11 / 9 / 20).
std::span<const int> region_indices(RegionName region);

/// Axis-aligned crop in high-resolution pixels, resampled to a square patch.
/// Patch pixel u corresponds to global x0 + u * scale_x.
struct RegionCrop {
    RegionName name = RegionName::nose;
    double x0 = 0.0;
    double y0 = 0.0;
    double w = 0.0;
    double h = 0.0;
    int patch_size = kPatchSize;
    double scale_x = 1.0;
    double scale_y = 1.0;
    double padding_fraction = kInferencePadding;
};

std::vector<Point2> upscale_global(std::span<const Point2> points, double factor = kUpscaleFactor);
std::vector<Point2> downscale_global(std::span<const Point2> points, double factor = kUpscaleFactor);

/// Tight box of the group, padded per side by padding_fraction x its own
/// dimension, grown to a square about its centre, then shifted to lie inside
/// the image (shrunk only if the square is larger than the image).
/// Throws DegenerateError for fewer than 2 points or a box with no extent.
RegionCrop compute_region_bbox(std::span<const Point2> group_points, double padding_fraction, int image_w,
                               int image_h, RegionName name = RegionName::nose, int patch_size = kPatchSize);

/// Uniform draw from the training padding range.
double sample_training_padding(std::mt19937_64& rng);

Point2 local_to_global(Point2 local, const RegionCrop& crop);
Point2 global_to_local(Point2 global, const RegionCrop& crop);
std::vector<Point2> local_to_global(std::span<const Point2> local, const RegionCrop& crop);
std::vector<Point2> global_to_local(std::span<const Point2> global, const RegionCrop& crop);

/// Stack the resampled color crop (3 channels) with the crop of the selected
/// global logit channels, where the logits are upscaled by `factor` to the
/// high-resolution frame. Output is (3 + channels.size()) x patch x patch.
PlanarImage crop_and_fuse(const cv::Mat& image_hr, const HeatmapStack& global_logits, const RegionCrop& crop,
                          std::span<const int> channels, int factor = kUpscaleFactor);

/// Channel (landmark) order a region network sees. The shared eye network is
/// trained on left-eye orientation; a mirrored right-eye crop presents the
/// mirror partners of the left-eye landmarks in the same order.
std::vector<int> region_channel_order(RegionName region, bool mirrored);

/// Flip local patch coordinates left-right.
Point2 mirror_local(Point2 local, int patch_size = kPatchSize);

struct AssembledPrediction {
    LandmarkSet landmarks;
    std::vector<RegionName> missing_regions;
    bool fallback_used() const { return !missing_regions.empty(); }
};

/// Jaw from the global prediction; each refined region overwrites its own
/// indices (points given in region_indices order, global pixels). Regions
/// without a refinement keep their global points and are reported.
AssembledPrediction assemble_full_prediction(const LandmarkSet& global_hr,
                                             std::span<const std::optional<std::vector<Point2>>, 4> refined);

void to_json(nlohmann::json& j, const RegionCrop& crop);
void from_json(const nlohmann::json& j, RegionCrop& crop);

}  // namespace artface
