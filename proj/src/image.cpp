#include "artface/image.hpp"

#include <algorithm>
#include <cmath>

#include <opencv2/imgcodecs.hpp>
#include <opencv2/imgproc.hpp>

#include "artface/errors.hpp"
#include "artface/kernels.hpp"

namespace artface {

cv::Mat load_image(const std::filesystem::path& path) {
    cv::Mat raw = cv::imread(path.string(), cv::IMREAD_COLOR);
    if (raw.empty()) throw IoError("cannot read image " + path.string());
    cv::Mat out;
    raw.convertTo(out, CV_32FC3, 1.0 / 255.0);
    return out;
}

cv::Mat to_u8(const cv::Mat& image) {
    cv::Mat out;
    image.convertTo(out, CV_8UC(image.channels()), 255.0);
    return out;
}

void save_image(const cv::Mat& image, const std::filesystem::path& path) {
    const cv::Mat out = image.depth() == CV_8U ? image : to_u8(image);
    if (!cv::imwrite(path.string(), out)) throw IoError("cannot write image " + path.string());
}

cv::Mat remap_image(const cv::Mat& src, int out_w, int out_h, std::span<const double> map_xy) {
    if (src.empty() || src.depth() != CV_32F) throw ValidationError("remap expects a non-empty float image");
    if (map_xy.size() != 2 * static_cast<std::size_t>(out_w) * out_h) throw ValidationError("remap map size mismatch");
    const cv::Mat in = src.isContinuous() ? src : src.clone();
    cv::Mat dst(out_h, out_w, src.type());
    kernels::remap_bilinear(in.ptr<float>(), in.rows, in.cols, in.channels(), map_xy.data(), out_h, out_w,
                            dst.ptr<float>());
    return dst;
}

cv::Mat remap_image(const cv::Mat& src, int out_w, int out_h, const std::function<Point2(Point2)>& source_of) {
    std::vector<double> map(2 * static_cast<std::size_t>(out_w) * out_h);
    for (int i = 0; i < out_h; ++i) {
        for (int j = 0; j < out_w; ++j) {
            const Point2 s = source_of({static_cast<double>(j), static_cast<double>(i)});
            const std::size_t k = static_cast<std::size_t>(i) * out_w + j;
            map[2 * k] = s.x;
            map[2 * k + 1] = s.y;
        }
    }
    return remap_image(src, out_w, out_h, map);
}

cv::Mat downsample(const cv::Mat& src, int factor) {
    if (factor < 1) throw ValidationError("downsample factor must be >= 1");
    if (src.empty() || src.depth() != CV_32F) throw ValidationError("downsample expects a non-empty float image");
    if (factor == 1) return src.clone();
    const cv::Mat in = src.isContinuous() ? src : src.clone();
    cv::Mat dst(in.rows / factor, in.cols / factor, in.type());
    kernels::downsample_centered(in.ptr<float>(), in.rows, in.cols, in.channels(), factor, dst.ptr<float>());
    return dst;
}

cv::Mat rescale(const cv::Mat& src, double scale, int out_w, int out_h) {
    if (!(scale > 0.0)) throw ValidationError("rescale factor must be positive");
    cv::Mat source = src;
    double s = scale;
    // Reduce by whole factors first with the centred box filter.
    const int factor = static_cast<int>(std::floor(1.0 / scale));
    if (factor >= 2) {
        source = downsample(src, factor);
        s = scale * factor;
    }
    return remap_image(source, out_w, out_h, [s](Point2 q) { return Point2{q.x / s, q.y / s}; });
}

PlanarImage to_planar(const cv::Mat& image) {
    if (image.depth() != CV_32F) throw ValidationError("to_planar expects a float image");
    PlanarImage out(image.channels(), image.rows, image.cols);
    for (int i = 0; i < image.rows; ++i) {
        const float* row = image.ptr<float>(i);
        for (int j = 0; j < image.cols; ++j) {
            for (int c = 0; c < out.channels; ++c) out.at(c, i, j) = row[j * out.channels + c];
        }
    }
    return out;
}

cv::Mat from_planar(const PlanarImage& planar) {
    cv::Mat out(planar.height, planar.width, CV_32FC(planar.channels));
    for (int i = 0; i < planar.height; ++i) {
        float* row = out.ptr<float>(i);
        for (int j = 0; j < planar.width; ++j) {
            for (int c = 0; c < planar.channels; ++c) row[j * planar.channels + c] = planar.at(c, i, j);
        }
    }
    return out;
}

PlanarImage flip_horizontal(const PlanarImage& image) {
    PlanarImage out(image.channels, image.height, image.width);
    for (int c = 0; c < image.channels; ++c) {
        for (int i = 0; i < image.height; ++i) {
            for (int j = 0; j < image.width; ++j) out.at(c, i, j) = image.at(c, i, image.width - 1 - j);
        }
    }
    return out;
}

}  // namespace artface
