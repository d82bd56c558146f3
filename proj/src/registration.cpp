#include "artface/registration.hpp"

#include <algorithm>

#include <opencv2/imgproc.hpp>

#include "artface/errors.hpp"
#include "artface/image.hpp"

namespace artface {

cv::Mat warp_similarity(const cv::Mat& image, const SimilarityTransform& t, int width, int height) {
    const SimilarityTransform inv = t.inverse();
    return remap_image(image, width, height, [&](Point2 q) { return inv.apply(q); });
}

RegistrationResult register_landmarks(const LandmarkSet& src, const LandmarkSet& dst, const cv::Mat& src_image,
                                      const RegistrationOptions& options) {
    const auto a = select_group(src, "registration41");
    const auto b = select_group(dst, "registration41");
    RansacOptions ro;
    ro.threshold_px = options.threshold_px > 0.0 ? options.threshold_px
                                                 : default_ransac_threshold(dst.image_width(), dst.image_height());
    ro.max_trials = options.max_trials;
    ro.seed = options.seed;
    const RansacResult r = ransac_similarity(a, b, ro);

    RegistrationResult out;
    out.transform = r.transform;
    out.inlier_mask = r.inlier_mask;
    for (std::size_t i = 0; i < r.inlier_mask.size(); ++i) {
        (r.inlier_mask[i] ? out.inliers : out.outliers).push_back(static_cast<int>(i));
    }
    if (!src_image.empty()) out.warped = warp_similarity(src_image, r.transform, dst.image_width(), dst.image_height());
    return out;
}

cv::Mat blend_overlay(const cv::Mat& target, const cv::Mat& warped_source, double alpha) {
    if (target.size() != warped_source.size() || target.type() != warped_source.type()) {
        throw ValidationError("blend_overlay: images differ in size or type");
    }
    if (!(alpha >= 0.0 && alpha <= 1.0)) throw ValidationError("blend_overlay: alpha must lie in [0, 1]");
    if (alpha == 1.0) return target.clone();
    if (alpha == 0.0) return warped_source.clone();
    cv::Mat out;
    cv::addWeighted(target, alpha, warped_source, 1.0 - alpha, 0.0, out);
    return out;
}

cv::Mat intersection_contour_overlay(std::span<const cv::Mat> contours, std::span<const cv::Scalar> colors,
                                     const ContourOverlayOptions& options) {
    if (contours.size() < 2) throw ValidationError("intersection overlay needs at least 2 contour maps");
    if (colors.size() != contours.size()) throw ValidationError("one color per contour map is required");
    if (options.tolerance_radius < 0) throw ValidationError("tolerance radius must be non-negative");
    const cv::Size size = contours[0].size();
    std::vector<cv::Mat> fg, dilated;
    for (const auto& c : contours) {
        if (c.size() != size) throw ValidationError("contour maps must share one frame");
        cv::Mat gray = c;
        if (c.channels() != 1) cv::cvtColor(c, gray, cv::COLOR_BGR2GRAY);
        cv::Mat f;
        gray.convertTo(f, CV_32F);
        const double full = c.depth() == CV_8U ? 255.0 : 1.0;
        cv::Mat mask = f >= options.threshold * full;
        fg.push_back(mask);
        if (options.tolerance_radius == 0) {
            dilated.push_back(mask);
        } else {
            const int r = options.tolerance_radius;
            const cv::Mat kernel = cv::getStructuringElement(cv::MORPH_ELLIPSE, {2 * r + 1, 2 * r + 1});
            cv::Mat d;
            cv::dilate(mask, d, kernel);
            dilated.push_back(d);
        }
    }
    cv::Mat out(size, CV_8UC3, cv::Scalar::all(0));
    for (int i = 0; i < size.height; ++i) {
        auto* o = out.ptr<cv::Vec3b>(i);
        for (int j = 0; j < size.width; ++j) {
            int owner = -1, covering = 0;
            for (std::size_t m = 0; m < fg.size(); ++m) {
                if (fg[m].at<uchar>(i, j) && owner < 0) owner = static_cast<int>(m);
                covering += dilated[m].at<uchar>(i, j) ? 1 : 0;
            }
            if (owner < 0) continue;
            if (covering >= 2) {
                o[j] = {255, 255, 255};
            } else {
                const auto& c = colors[static_cast<std::size_t>(owner)];
                o[j] = {cv::saturate_cast<uchar>(c[0]), cv::saturate_cast<uchar>(c[1]), cv::saturate_cast<uchar>(c[2])};
            }
        }
    }
    return out;
}

std::vector<cv::Scalar> default_contour_colors(int n) {
    std::vector<cv::Scalar> out;
    for (int k = 0; k < n; ++k) {
        cv::Mat hsv(1, 1, CV_8UC3, cv::Scalar(static_cast<double>(180 * k / std::max(n, 1)), 255, 230));
        cv::Mat bgr;
        cv::cvtColor(hsv, bgr, cv::COLOR_HSV2BGR);
        const auto v = bgr.at<cv::Vec3b>(0, 0);
        out.emplace_back(v[0], v[1], v[2]);
    }
    return out;
}

cv::Mat draw_matches(const cv::Mat& src_image, const LandmarkSet& src, const cv::Mat& dst_image, const LandmarkSet& dst,
                     const RegistrationResult& result) {
    const cv::Mat a = src_image.depth() == CV_8U ? src_image : to_u8(src_image);
    const cv::Mat b = dst_image.depth() == CV_8U ? dst_image : to_u8(dst_image);
    const int h = std::max(a.rows, b.rows);
    cv::Mat canvas(h, a.cols + b.cols, CV_8UC3, cv::Scalar::all(0));
    a.copyTo(canvas(cv::Rect(0, 0, a.cols, a.rows)));
    b.copyTo(canvas(cv::Rect(a.cols, 0, b.cols, b.rows)));
    const auto idx = group_indices("registration41");
    const int thickness = std::max(1, h / 400);
    for (std::size_t k = 0; k < idx.size(); ++k) {
        const Point2 p = src[idx[k]], q = dst[idx[k]];
        const bool inlier = k < result.inlier_mask.size() && result.inlier_mask[k];
        const cv::Scalar color = inlier ? cv::Scalar(0, 200, 0) : cv::Scalar(0, 0, 230);
        cv::line(canvas, cv::Point2d(p.x, p.y), cv::Point2d(q.x + a.cols, q.y), color, thickness, cv::LINE_AA);
    }
    return canvas;
}

nlohmann::json registration_to_json(const RegistrationResult& result) {
    nlohmann::json j;
    j["transform"] = result.transform;
    j["matrix"] = result.transform.matrix();
    j["inliers"] = result.inliers;
    j["outliers"] = result.outliers;
    j["num_inliers"] = result.inliers.size();
    return j;
}

}  // namespace artface
