#pragma once

#include <filesystem>
#include <functional>
#include <span>
#include <vector>

#include <opencv2/core.hpp>

#include "artface/landmarks.hpp"

namespace artface {

// Color images are cv::Mat of type CV_32FC3 (BGR, values in [0, 1]).
// Other float images use CV_32FC(n).

cv::Mat load_image(const std::filesystem::path& path);
void save_image(const cv::Mat& image, const std::filesystem::path& path);

/// Float image -> 8-bit with rounding and saturation.
cv::Mat to_u8(const cv::Mat& image);

/// Output pixel q samples `src` at source_of(q) (bilinear, edge replicated).
cv::Mat remap_image(const cv::Mat& src, int out_w, int out_h, const std::function<Point2(Point2)>& source_of);
cv::Mat remap_image(const cv::Mat& src, int out_w, int out_h, std::span<const double> map_xy);

/// Integer downsample centred on source pixel u * factor (coordinates scale by 1/factor).
cv::Mat downsample(const cv::Mat& src, int factor);

/// Uniform rescale by `scale`: output pixel u samples the source at u / scale,
/// so a point p maps to p * scale. Downscaling pre-averages to limit aliasing.
cv::Mat rescale(const cv::Mat& src, double scale, int out_w, int out_h);

/// Planar float tensor (C, H, W), the layout networks consume.
struct PlanarImage {
    int channels = 0;
    int height = 0;
    int width = 0;
    std::vector<float> data;

    PlanarImage() = default;
    PlanarImage(int c, int h, int w) : channels(c), height(h), width(w), data(static_cast<std::size_t>(c) * h * w) {}
    float& at(int c, int i, int j) { return data[(static_cast<std::size_t>(c) * height + i) * width + j]; }
    float at(int c, int i, int j) const { return data[(static_cast<std::size_t>(c) * height + i) * width + j]; }
};

PlanarImage to_planar(const cv::Mat& image);
cv::Mat from_planar(const PlanarImage& planar);

/// Mirror a planar image left-right.
PlanarImage flip_horizontal(const PlanarImage& image);

}  // namespace artface
