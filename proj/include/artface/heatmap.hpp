#pragma once

#include <filesystem>
#include <span>
#include <vector>

#include "artface/landmarks.hpp"

namespace artface {

/// Per-landmark score maps (pre-softmax logits), planar (C, H, W).
struct HeatmapStack {
    int channels = 0;
    int height = 0;
    int width = 0;
    std::vector<double> values;

    HeatmapStack() = default;
    HeatmapStack(int c, int h, int w, double fill = 0.0);

    std::span<double> channel(int c);
    std::span<const double> channel(int c) const;
    double& at(int c, int row, int col);
    double at(int c, int row, int col) const;
};

inline constexpr double kDefaultTemperature = 1.0;

/// Differentiable coordinate extraction: per channel, the expectation of the
/// cell coordinates under softmax(temperature * logits). Cell (row i, col j)
/// sits at (x = j, y = i).
std::vector<Point2> spatial_softargmax(const HeatmapStack& stack, double temperature = kDefaultTemperature);

/// Gradient of sum_c (gx_c * x_c + gy_c * y_c) with respect to the logits.
HeatmapStack spatial_softargmax_backward(const HeatmapStack& stack, std::span<const Point2> grad,
                                         double temperature = kDefaultTemperature);

/// One Gaussian bump per point; for visualization and diagnostics.
HeatmapStack render_gaussian(std::span<const Point2> points, double sigma, int height, int width);

/// Logits whose softmax is the bilinear splat of each point over its four
/// neighbouring cells, so spatial_softargmax returns the point exactly for
/// any in-grid location. Cells outside the splat get `floor_logit`.
HeatmapStack render_delta_logits(std::span<const Point2> points, int height, int width,
                                 double floor_logit = -1e4);

/// Binary blob: little-endian int32 C, H, W followed by C*H*W float64 values.
void write_heatmap_blob(const HeatmapStack& stack, const std::filesystem::path& path);
HeatmapStack read_heatmap_blob(const std::filesystem::path& path);

}  // namespace artface
