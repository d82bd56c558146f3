#pragma once

#include <cmath>
#include <limits>
#include <random>
#include <vector>

#include "artface/heatmap.hpp"
#include "artface/landmarks.hpp"
#include "artface/pipeline.hpp"
#include "artface/region.hpp"

namespace artface::fixtures {

inline LandmarkSet random_landmarks(std::mt19937_64& rng, int w = 1024, int h = 1024, double margin = 0.0) {
    std::uniform_real_distribution<double> ux(margin, w - 1 - margin), uy(margin, h - 1 - margin);
    LandmarkSet::Points pts{};
    for (auto& p : pts) p = {ux(rng), uy(rng)};
    return LandmarkSet(pts, w, h);
}

inline std::vector<Point2> random_points(std::mt19937_64& rng, int n, double lo, double hi) {
    std::uniform_real_distribution<double> u(lo, hi);
    std::vector<Point2> out(static_cast<std::size_t>(n));
    for (auto& p : out) p = {u(rng), u(rng)};
    return out;
}

/// Networks that emit delta logits at known ground truth (1024 frame). The
/// region stub also checks that every fused feature channel peaks where its
/// declared landmark should be, counting mismatches.
class OracleNetworks : public LandmarkNetworks {
public:
    explicit OracleNetworks(LandmarkSet truth_hr) : truth_(std::move(truth_hr)) {}

    HeatmapStack global_logits(const PlanarImage& image) override {
        std::vector<Point2> pts;
        for (const auto& p : truth_.points()) pts.push_back(p * (1.0 / kUpscaleFactor));
        return render_delta_logits(pts, image.height, image.width);
    }

    HeatmapStack region_logits(const RegionQuery& q) override {
        std::vector<Point2> local;
        for (std::size_t k = 0; k < q.channel_landmarks.size(); ++k) {
            Point2 l = global_to_local(truth_[q.channel_landmarks[k]], q.crop);
            if (q.mirrored) l = mirror_local(l, q.crop.patch_size);
            local.push_back(l);
            // Feature channel must peak near its landmark (bilinear upscale blurs by < 1 low-res pixel).
            int bi = 0, bj = 0;
            float best = -std::numeric_limits<float>::infinity();
            for (int i = 0; i < q.input.height; ++i)
                for (int j = 0; j < q.input.width; ++j)
                    if (q.input.at(3 + static_cast<int>(k), i, j) > best) {
                        best = q.input.at(3 + static_cast<int>(k), i, j);
                        bi = i;
                        bj = j;
                    }
            const double tol = 1.5 * kUpscaleFactor / q.crop.scale_x + 1.0;
            if (std::abs(bj - l.x) > tol || std::abs(bi - l.y) > tol) ++channel_mismatches;
        }
        ++region_calls;
        return render_delta_logits(local, q.input.height, q.input.width);
    }

    int channel_mismatches = 0;
    int region_calls = 0;

private:
    LandmarkSet truth_;
};

}  // namespace artface::fixtures
