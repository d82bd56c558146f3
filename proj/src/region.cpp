#include "artface/region.hpp"

#include <algorithm>
#include <cmath>

#include "artface/errors.hpp"
#include "artface/kernels.hpp"

namespace artface {

std::string_view to_string(RegionName region) {
    switch (region) {
        case RegionName::left_eye_region: return "left_eye_region";
        case RegionName::right_eye_region: return "right_eye_region";
        case RegionName::nose: return "nose";
        case RegionName::mouth: return "mouth";
    }
    return "?";
}

RegionName region_from_string(std::string_view name) {
    for (RegionName r : kRegions) {
        if (to_string(r) == name) return r;
    }
    throw ValidationError("unknown region '" + std::string(name) + "'");
}

std::span<const int> region_indices(RegionName region) { return group_indices(to_string(region)); }

std::vector<Point2> upscale_global(std::span<const Point2> points, double factor) {
    std::vector<Point2> out(points.begin(), points.end());
    for (auto& p : out) p = p * factor;
    return out;
}

std::vector<Point2> downscale_global(std::span<const Point2> points, double factor) {
    std::vector<Point2> out(points.begin(), points.end());
    for (auto& p : out) p = {p.x / factor, p.y / factor};
    return out;
}

RegionCrop compute_region_bbox(std::span<const Point2> group_points, double padding_fraction, int image_w,
                               int image_h, RegionName name, int patch_size) {
    if (group_points.size() < 2) throw DegenerateError("region box needs at least 2 points");
    if (!(padding_fraction >= 0.0)) throw ValidationError("padding fraction must be non-negative");
    if (image_w <= 0 || image_h <= 0 || patch_size <= 0) throw ValidationError("invalid image or patch size");
    double minx = group_points[0].x, maxx = minx, miny = group_points[0].y, maxy = miny;
    for (const auto& p : group_points) {
        if (!is_finite(p)) throw ValidationError("region points must be finite");
        minx = std::min(minx, p.x);
        maxx = std::max(maxx, p.x);
        miny = std::min(miny, p.y);
        maxy = std::max(maxy, p.y);
    }
    const double tw = maxx - minx, th = maxy - miny;
    if (tw <= 0.0 && th <= 0.0) throw DegenerateError("region box has zero extent");

    const double px0 = minx - padding_fraction * tw, px1 = maxx + padding_fraction * tw;
    const double py0 = miny - padding_fraction * th, py1 = maxy + padding_fraction * th;
    const double cx = 0.5 * (px0 + px1), cy = 0.5 * (py0 + py1);
    double side = std::max(px1 - px0, py1 - py0);
    side = std::min({side, static_cast<double>(image_w), static_cast<double>(image_h)});
    const double x0 = std::clamp(cx - side / 2.0, 0.0, image_w - side);
    const double y0 = std::clamp(cy - side / 2.0, 0.0, image_h - side);

    RegionCrop crop;
    crop.name = name;
    crop.x0 = x0;
    crop.y0 = y0;
    crop.w = side;
    crop.h = side;
    crop.patch_size = patch_size;
    crop.scale_x = side / patch_size;
    crop.scale_y = side / patch_size;
    crop.padding_fraction = padding_fraction;
    return crop;
}

double sample_training_padding(std::mt19937_64& rng) {
    std::uniform_real_distribution<double> dist(kTrainPaddingMin, kTrainPaddingMax);
    return dist(rng);
}

Point2 local_to_global(Point2 local, const RegionCrop& crop) {
    return {crop.x0 + local.x * crop.scale_x, crop.y0 + local.y * crop.scale_y};
}

Point2 global_to_local(Point2 global, const RegionCrop& crop) {
    return {(global.x - crop.x0) / crop.scale_x, (global.y - crop.y0) / crop.scale_y};
}

std::vector<Point2> local_to_global(std::span<const Point2> local, const RegionCrop& crop) {
    std::vector<Point2> out;
    out.reserve(local.size());
    for (const auto& p : local) out.push_back(local_to_global(p, crop));
    return out;
}

std::vector<Point2> global_to_local(std::span<const Point2> global, const RegionCrop& crop) {
    std::vector<Point2> out;
    out.reserve(global.size());
    for (const auto& p : global) out.push_back(global_to_local(p, crop));
    return out;
}

PlanarImage crop_and_fuse(const cv::Mat& image_hr, const HeatmapStack& global_logits, const RegionCrop& crop,
                          std::span<const int> channels, int factor) {
    if (image_hr.empty() || image_hr.type() != CV_32FC3) throw ValidationError("crop_and_fuse expects a float BGR image");
    const double up_w = static_cast<double>(global_logits.width) * factor;
    const double up_h = static_cast<double>(global_logits.height) * factor;
    const double eps = 1e-9;
    if (crop.x0 < -eps || crop.y0 < -eps || crop.x0 + crop.w > up_w + eps || crop.y0 + crop.h > up_h + eps ||
        crop.x0 + crop.w > image_hr.cols + eps || crop.y0 + crop.h > image_hr.rows + eps) {
        throw Error("internal: region crop lies outside the feature-map frame");
    }
    const int n = crop.patch_size;
    PlanarImage out(3 + static_cast<int>(channels.size()), n, n);

    std::vector<double> map(2 * static_cast<std::size_t>(n) * n);
    for (int i = 0; i < n; ++i) {
        for (int j = 0; j < n; ++j) {
            const std::size_t k = static_cast<std::size_t>(i) * n + j;
            map[2 * k] = crop.x0 + j * crop.scale_x;
            map[2 * k + 1] = crop.y0 + i * crop.scale_y;
        }
    }
    const cv::Mat rgb = remap_image(image_hr, n, n, map);
    for (int i = 0; i < n; ++i) {
        const float* row = rgb.ptr<float>(i);
        for (int j = 0; j < n; ++j) {
            for (int c = 0; c < 3; ++c) out.at(c, i, j) = row[j * 3 + c];
        }
    }

    if (!channels.empty()) {
        if (crop.scale_x != crop.scale_y) throw ValidationError("crop_and_fuse expects square crops");
        const auto plane = static_cast<std::size_t>(global_logits.height) * global_logits.width;
        std::vector<double> selected(channels.size() * plane);
        for (std::size_t c = 0; c < channels.size(); ++c) {
            const int ch = channels[c];
            if (ch < 0 || ch >= global_logits.channels) throw ValidationError("feature channel index out of range");
            const auto src = global_logits.channel(ch);
            std::copy(src.begin(), src.end(), selected.begin() + static_cast<std::ptrdiff_t>(c * plane));
        }
        kernels::sample_upscaled_crop(selected.data(), static_cast<int>(channels.size()), global_logits.height,
                                      global_logits.width, factor, crop.x0, crop.y0, crop.scale_x, n,
                                      out.data.data() + 3 * static_cast<std::size_t>(n) * n);
    }
    return out;
}

std::vector<int> region_channel_order(RegionName region, bool mirrored) {
    if (!mirrored) {
        const auto idx = region_indices(region);
        return {idx.begin(), idx.end()};
    }
    if (region != RegionName::right_eye_region && region != RegionName::left_eye_region) {
        throw ValidationError("only eye regions are mirrored");
    }
    const RegionName canonical =
        region == RegionName::right_eye_region ? RegionName::left_eye_region : RegionName::right_eye_region;
    std::vector<int> order;
    for (int i : region_indices(canonical)) order.push_back(mirror_index(i));
    return order;
}

Point2 mirror_local(Point2 local, int patch_size) { return {(patch_size - 1) - local.x, local.y}; }

AssembledPrediction assemble_full_prediction(const LandmarkSet& global_hr,
                                             std::span<const std::optional<std::vector<Point2>>, 4> refined) {
    AssembledPrediction out{global_hr, {}};
    for (std::size_t r = 0; r < kRegions.size(); ++r) {
        const auto idx = region_indices(kRegions[r]);
        if (!refined[r].has_value()) {
            out.missing_regions.push_back(kRegions[r]);
            continue;
        }
        const auto& pts = *refined[r];
        if (pts.size() != idx.size()) {
            throw ValidationError("refinement for " + std::string(to_string(kRegions[r])) + " has " +
                                  std::to_string(pts.size()) + " points, expected " + std::to_string(idx.size()));
        }
        for (std::size_t k = 0; k < idx.size(); ++k) out.landmarks.set_point(idx[k], pts[k]);
    }
    return out;
}

void to_json(nlohmann::json& j, const RegionCrop& crop) {
    j = nlohmann::json{{"name", std::string(to_string(crop.name))},
                       {"bbox", {crop.x0, crop.y0, crop.w, crop.h}},
                       {"patch_size", crop.patch_size},
                       {"scale", {crop.scale_x, crop.scale_y}},
                       {"padding_fraction", crop.padding_fraction}};
}

void from_json(const nlohmann::json& j, RegionCrop& crop) {
    crop.name = region_from_string(j.at("name").get<std::string>());
    const auto bbox = j.at("bbox").get<std::array<double, 4>>();
    crop.x0 = bbox[0];
    crop.y0 = bbox[1];
    crop.w = bbox[2];
    crop.h = bbox[3];
    crop.patch_size = j.at("patch_size").get<int>();
    const auto scale = j.at("scale").get<std::array<double, 2>>();
    crop.scale_x = scale[0];
    crop.scale_y = scale[1];
    crop.padding_fraction = j.value("padding_fraction", kInferencePadding);
}

}  // namespace artface
