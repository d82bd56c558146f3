#include "artface/pipeline.hpp"

#include <algorithm>
#include <cmath>
#include <optional>

#include "artface/errors.hpp"

namespace artface {

SquareFit fit_to_square(const cv::Mat& image, int size) {
    if (image.empty()) throw ValidationError("fit_to_square: empty image");
    SquareFit fit;
    fit.source_width = image.cols;
    fit.source_height = image.rows;
    if (image.cols == size && image.rows == size) {
        fit.image = image;
        return fit;
    }
    const int side = std::max(image.cols, image.rows);
    const int pad_x = (side - image.cols) / 2;
    const int pad_y = (side - image.rows) / 2;
    fit.offset = {static_cast<double>(pad_x), static_cast<double>(pad_y)};
    fit.scale = static_cast<double>(size) / side;
    cv::Mat padded;
    cv::copyMakeBorder(image, padded, pad_y, side - image.rows - pad_y, pad_x, side - image.cols - pad_x,
                       cv::BORDER_REPLICATE);
    fit.image = fit.scale == 1.0 ? padded : rescale(padded, fit.scale, size, size);
    return fit;
}

FullPrediction forward_full(const cv::Mat& image, LandmarkNetworks& networks, const PipelineOptions& options) {
    if (image.empty() || image.type() != CV_32FC3) throw ValidationError("forward_full expects a float BGR image");
    const SquareFit fit = fit_to_square(image, kHighResSize);
    const cv::Mat& hr = fit.image;

    const PlanarImage small = to_planar(downsample(hr, kUpscaleFactor));
    const HeatmapStack logits = networks.global_logits(small);
    if (logits.channels != kNumLandmarks || logits.height != kGlobalSize || logits.width != kGlobalSize) {
        throw ValidationError("global network must produce 68 x 256 x 256 logits");
    }
    const auto coarse = upscale_global(spatial_softargmax(logits, options.temperature));
    const LandmarkSet global_hr = LandmarkSet::from_vector(coarse, kHighResSize, kHighResSize);

    FullPrediction out;
    std::array<std::optional<std::vector<Point2>>, 4> refined;
    for (std::size_t r = 0; r < kRegions.size(); ++r) {
        const RegionName region = kRegions[r];
        const auto group = select_indices(global_hr, region_indices(region));
        const RegionCrop crop = compute_region_bbox(group, options.padding_fraction, kHighResSize, kHighResSize, region);
        out.crops[r] = crop;

        const bool mirrored = options.mirror_right_eye && region == RegionName::right_eye_region;
        const auto order = region_channel_order(region, mirrored);
        PlanarImage fused = crop_and_fuse(hr, logits, crop, order);
        if (mirrored) fused = flip_horizontal(fused);

        const HeatmapStack region_logits = networks.region_logits({region, crop, mirrored, order, fused});
        if (region_logits.channels != static_cast<int>(order.size())) {
            throw ValidationError("region network for " + std::string(to_string(region)) + " produced " +
                                  std::to_string(region_logits.channels) + " channels, expected " +
                                  std::to_string(order.size()));
        }
        const auto local = spatial_softargmax(region_logits, options.temperature);

        // Scatter back into 300-W order for this region.
        const auto idx = region_indices(region);
        std::vector<Point2> pts(idx.size());
        for (std::size_t k = 0; k < order.size(); ++k) {
            const Point2 l = mirrored ? mirror_local(local[k], crop.patch_size) : local[k];
            const auto pos = std::find(idx.begin(), idx.end(), order[k]) - idx.begin();
            pts[static_cast<std::size_t>(pos)] = local_to_global(l, crop);
        }
        refined[r] = std::move(pts);
    }
    const auto assembled = assemble_full_prediction(global_hr, refined);
    for (RegionName m : assembled.missing_regions) {
        out.warnings.push_back("region " + std::string(to_string(m)) + " fell back to global points");
    }

    auto to_input_frame = [&](const LandmarkSet& s) {
        std::vector<Point2> pts;
        for (const auto& p : s.points()) pts.push_back(fit.from_square(p));
        return LandmarkSet::from_vector(pts, image.cols, image.rows);
    };
    out.global = to_input_frame(global_hr);
    out.refined = to_input_frame(assembled.landmarks);
    return out;
}

nlohmann::json prediction_to_json(const FullPrediction& prediction, const std::string& image_ref) {
    auto pts = [](const LandmarkSet& s) {
        auto a = nlohmann::json::array();
        for (const auto& p : s.points()) a.push_back({p.x, p.y});
        return a;
    };
    nlohmann::json j;
    j["image"] = image_ref;
    j["width"] = prediction.refined.image_width();
    j["height"] = prediction.refined.image_height();
    j["points"] = pts(prediction.refined);
    j["source"] = "model";
    j["global_points"] = pts(prediction.global);
    j["crops"] = nlohmann::json::array();
    for (const auto& c : prediction.crops) j["crops"].push_back(c);
    j["warnings"] = prediction.warnings;
    return j;
}

}  // namespace artface
