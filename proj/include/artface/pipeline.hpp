#pragma once

#include <array>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>
#include <opencv2/core.hpp>

#include "artface/heatmap.hpp"
#include "artface/image.hpp"
#include "artface/landmarks.hpp"
#include "artface/region.hpp"

namespace artface {

/// What a region network is asked to refine.
struct RegionQuery {
    RegionName region;
    const RegionCrop& crop;
    /// Input was flipped left-right (right eye through the shared eye network).
    bool mirrored;
    /// Landmark index represented by each output (and fused input) channel.
    std::span<const int> channel_landmarks;
    /// (3 + N_r) x patch x patch fused input, already mirrored when `mirrored`.
    const PlanarImage& input;
};

/// Source of heatmap logits for the coarse-to-fine pipeline. The trained
/// model implements this; tests plug in oracle stubs.
class LandmarkNetworks {
public:
    virtual ~LandmarkNetworks() = default;
    /// 68 logit maps for a 3 x 256 x 256 input.
    virtual HeatmapStack global_logits(const PlanarImage& image) = 0;
    /// N_r logit maps in the (possibly mirrored) patch frame.
    virtual HeatmapStack region_logits(const RegionQuery& query) = 0;
};

struct PipelineOptions {
    double padding_fraction = kInferencePadding;
    double temperature = kDefaultTemperature;
    bool mirror_right_eye = true;
};

struct FullPrediction {
    LandmarkSet global;   ///< coarse prediction in the input image frame
    LandmarkSet refined;  ///< jaw from global, inner 51 from the region networks
    std::array<RegionCrop, 4> crops{};
    std::vector<std::string> warnings;
};

/// Maps an arbitrary image into a size x size square: pad to square
/// (centred, edge replicated) then rescale. Point p maps to (p + offset) * scale.
struct SquareFit {
    cv::Mat image;
    double scale = 1.0;
    Point2 offset;
    int source_width = 0;
    int source_height = 0;

    Point2 to_square(Point2 p) const { return (p + offset) * scale; }
    Point2 from_square(Point2 p) const { return Point2{p.x / scale, p.y / scale} - offset; }
};

SquareFit fit_to_square(const cv::Mat& image, int size = kHighResSize);

/// Downsize x4, global logits, softargmax, upscale x4, four region crops
/// fused with the matching logit channels, region logits, softargmax, map
/// back, assemble. Inputs other than 1024 x 1024 are padded/rescaled first
/// and results mapped back to the input frame.
FullPrediction forward_full(const cv::Mat& image, LandmarkNetworks& networks, const PipelineOptions& options = {});

nlohmann::json prediction_to_json(const FullPrediction& prediction, const std::string& image_ref);

}  // namespace artface
