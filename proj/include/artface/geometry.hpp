#pragma once

#include <array>
#include <cstdint>
#include <span>
#include <vector>

#include <json.hpp>
#include <opencv2/core.hpp>

#include "artface/landmarks.hpp"

namespace artface {

// ---------------------------------------------------------------------------
// Thin-plate splines

/// Displacement field d(q) = A [1, x, y]^T + sum_k w_k U(|q - c_k|) with
/// U(r) = r^2 log r^2, interpolating dst_k - src_k at each src_k.
struct TPSField {
    std::vector<Point2> control_src;
    std::vector<Point2> control_dst;
    std::vector<Point2> weights;          ///< one (wx, wy) per control point
    std::array<double, 6> affine{};       ///< x: a0, ax, ay; y: b0, bx, by
    double regularization = 0.0;

    Point2 displacement(Point2 q) const;
    Point2 apply(Point2 q) const { return q + displacement(q); }

    /// Identity field with no control points.
    static TPSField identity();
};

/// Fits the field mapping src_points onto dst_points. `regularization` is the
/// ridge added to the kernel diagonal in a unit-scaled frame; 0 interpolates
/// exactly. Throws DegenerateError for fewer than 3 points, duplicates or a
/// collinear configuration.
TPSField tps_fit(std::span<const Point2> src_points, std::span<const Point2> dst_points,
                 double regularization = 0.0);

/// Backward map over a w x h grid: map(q) = field.apply(q).
std::vector<double> tps_backward_map(const TPSField& field, int width, int height);

/// Backward warp: output pixel q samples `image` at field.apply(q), bilinear,
/// edge replicated. The field is expected in the output -> input direction.
cv::Mat tps_warp_image(const cv::Mat& image, const TPSField& field);

// ---------------------------------------------------------------------------
// Geometric landmark augmentation

struct GroupShift {
    BaseGroup group;
    Point2 offset;
};

struct AugmentConfig {
    /// Per-group translation, uniform in +/- fraction of the landmark bbox diagonal.
    double group_shift_fraction = 0.02;
    /// Per-group scale about the group centroid, uniform in [1 - r, 1 + r].
    double group_scale_range = 0.07;
    /// Whole-face scale per axis about the face centroid, uniform in [1 - r, 1 + r].
    double stretch_range = 0.08;
    /// Deterministic offsets applied after the random part.
    std::vector<GroupShift> fixed_shifts;
    /// Pin the image corners and edge midpoints so the warp fades out at the border.
    bool border_anchors = true;
    double regularization = 0.0;
    int max_retries = 20;
    /// Reject samples whose landmarks leave the image by more than this many pixels.
    double max_outside_px = 0.0;

    bool is_zero() const {
        return group_shift_fraction == 0.0 && group_scale_range == 0.0 && stretch_range == 0.0 && fixed_shifts.empty();
    }
};

struct AugmentResult {
    LandmarkSet landmarks;  ///< displaced ground truth consistent with the warped image
    TPSField field;         ///< backward field (displaced -> original) for tps_warp_image
    int attempts = 1;
};

/// Groups perturbed by augmentation: eyes, brows, nose, mouth.
std::span<const BaseGroup> augmented_groups();

AugmentResult augment_landmarks(const LandmarkSet& landmarks, const AugmentConfig& config, std::uint64_t rng_seed);

// ---------------------------------------------------------------------------
// Similarity transforms

/// Rotation, uniform scale and translation: p' = s R(angle) p + t.
struct SimilarityTransform {
    double angle = 0.0;  ///< radians
    double scale = 1.0;
    double tx = 0.0;
    double ty = 0.0;

    Point2 apply(Point2 p) const;
    SimilarityTransform inverse() const;
    /// (this o other)(p) = this(other(p)).
    SimilarityTransform compose(const SimilarityTransform& other) const;
    /// 2x3 row-major [[s cos, -s sin, tx], [s sin, s cos, ty]].
    std::array<double, 6> matrix() const;
    static SimilarityTransform from_matrix_params(double a, double b, double tx, double ty);
};

/// Least-squares 4-DOF fit minimizing sum |T(src_i) - dst_i|^2 (closed form
/// via the centred cross-covariance). Throws DegenerateError when all source
/// points coincide and ValidationError on size mismatch or fewer than 2 points.
SimilarityTransform fit_similarity(std::span<const Point2> src, std::span<const Point2> dst);

double residual_sum_squares(const SimilarityTransform& t, std::span<const Point2> src, std::span<const Point2> dst);

struct RansacOptions {
    double threshold_px = 3.0;
    int max_trials = 2000;
    int min_inliers = 8;
    std::uint64_t seed = 0;
    bool parallel = true;
    int max_refinements = 20;
};

struct RansacResult {
    SimilarityTransform transform;
    std::vector<bool> inlier_mask;
    int num_trials = 0;
    int num_inliers() const;
};

/// Default inlier threshold: 1% of the image diagonal.
double default_ransac_threshold(int image_width, int image_height);

/// Minimal 2-point samples; trial t draws its pair from an RNG seeded by
/// (seed, t), so results do not depend on thread count. The best-supported
/// hypothesis (ties: lowest trial) is refit on its inliers until the inlier
/// set is stable.
RansacResult ransac_similarity(std::span<const Point2> src, std::span<const Point2> dst, const RansacOptions& options);

/// The pair of indices trial `trial` samples from `n` correspondences.
std::array<int, 2> ransac_sample(std::uint64_t seed, int trial, int n);

// JSON (registration reports)
void to_json(nlohmann::json& j, const SimilarityTransform& t);
void from_json(const nlohmann::json& j, SimilarityTransform& t);
void to_json(nlohmann::json& j, const TPSField& f);
void from_json(const nlohmann::json& j, TPSField& f);

}  // namespace artface
