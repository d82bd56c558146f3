#pragma once

#include <array>
#include <functional>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "artface/dataset.hpp"
#include "artface/landmarks.hpp"
#include "artface/pipeline.hpp"

namespace artface {

/// Parts reported separately: jaw 17, brows 10, nose 9, eyes 12, mouth 20.
enum class Part { jaw, brows, nose, eyes, mouth };
inline constexpr std::array<Part, 5> kParts = {Part::jaw, Part::brows, Part::nose, Part::eyes, Part::mouth};
std::string_view to_string(Part part);
std::vector<int> part_indices(Part part);

/// Mean Euclidean distance over `indices` in raw pixels (no normalization).
/// Throws ValidationError when the two sets describe different frames.
double mean_error(const LandmarkSet& pred, const LandmarkSet& gt, std::span<const int> indices);
double mean_error(const LandmarkSet& pred, const LandmarkSet& gt);  ///< all 68

struct ImageEval {
    std::string image;
    Provenance provenance = Provenance::augmented;
    bool failed = false;
    std::string failure;
    double me68 = 0.0;
    double me51 = 0.0;
    double global_me68 = 0.0;
    double global_me51 = 0.0;
    std::array<double, 5> parts{};
};

struct Stat {
    double mean = 0.0;
    double stddev = 0.0;
    int count = 0;
};

Stat summarize(std::span<const double> values);
/// "12.34 ± 5.67"
std::string format_stat(const Stat& s);

struct EvalGroup {
    std::string name;  ///< provenance class ("painting", "print", "augmented") or "all"
    Stat me68, me51, global_me68, global_me51;
    std::array<Stat, 5> parts;
    int failures = 0;
};

struct EvalReport {
    std::vector<ImageEval> images;
    std::vector<EvalGroup> groups;  ///< per provenance class present, then "all"

    std::string to_csv() const;        ///< one row per image
    std::string to_table() const;      ///< mean ± std per group
    std::string parts_csv() const;     ///< per-part means per group
};

/// Aggregates per-image results. Failed detections are excluded from the
/// statistics and counted.
EvalReport build_report(std::vector<ImageEval> images);

/// Runs the coarse-to-fine pipeline on each sample of the split and compares
/// against ground truth in the original image frame. Throws ValidationError
/// for an empty split.
EvalReport evaluate(const Manifest& manifest, Split split, LandmarkNetworks& networks,
                    const PipelineOptions& options = {});

}  // namespace artface
