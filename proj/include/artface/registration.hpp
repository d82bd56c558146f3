#pragma once

#include <array>
#include <span>
#include <vector>

#include <json.hpp>
#include <opencv2/core.hpp>

#include "artface/geometry.hpp"
#include "artface/landmarks.hpp"

namespace artface {

struct RegistrationOptions {
    /// Inlier threshold in target pixels; <= 0 uses 1% of the target diagonal.
    double threshold_px = 0.0;
    int max_trials = 2000;
    std::uint64_t seed = 0;
};

struct RegistrationResult {
    SimilarityTransform transform;  ///< source frame -> target frame
    std::vector<int> inliers;       ///< indices into the 41 registration landmarks
    std::vector<int> outliers;
    std::vector<bool> inlier_mask;
    cv::Mat warped;                 ///< source resampled into the target frame (empty if no image given)
};

/// RANSAC similarity fit on the 41 eye/nose/mouth landmarks, then a bilinear
/// backward warp of `src_image` into a target_w x target_h frame. Never flips;
/// mirror inputs beforehand when needed.
RegistrationResult register_landmarks(const LandmarkSet& src, const LandmarkSet& dst, const cv::Mat& src_image,
                                      const RegistrationOptions& options = {});

/// Warp `image` with `t` (source -> target) into a width x height frame.
cv::Mat warp_similarity(const cv::Mat& image, const SimilarityTransform& t, int width, int height);

/// alpha * target + (1 - alpha) * warped_source.
cv::Mat blend_overlay(const cv::Mat& target, const cv::Mat& warped_source, double alpha);

struct ContourOverlayOptions {
    int tolerance_radius = 1;  ///< dilation radius before the >= 2 test
    double threshold = 0.5;    ///< foreground when value >= threshold * max (255 for 8-bit, 1 for float)
};

/// White where at least two (dilated) contour maps are foreground, otherwise
/// the owning map's color; black background. Inputs are single-channel maps
/// in a common frame; colors are BGR 8-bit, one per map.
cv::Mat intersection_contour_overlay(std::span<const cv::Mat> contours, std::span<const cv::Scalar> colors,
                                     const ContourOverlayOptions& options = {});

/// Distinct default colors for n maps.
std::vector<cv::Scalar> default_contour_colors(int n);

/// Side-by-side source | target with correspondence lines: green inliers, red outliers.
cv::Mat draw_matches(const cv::Mat& src_image, const LandmarkSet& src, const cv::Mat& dst_image, const LandmarkSet& dst,
                     const RegistrationResult& result);

nlohmann::json registration_to_json(const RegistrationResult& result);

}  // namespace artface
