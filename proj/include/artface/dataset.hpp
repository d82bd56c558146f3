#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include <opencv2/core.hpp>

#include "artface/geometry.hpp"
#include "artface/landmarks.hpp"
#include "artface/pipeline.hpp"

namespace artface {

enum class Split { train, val, test };

enum class Provenance {
    real_painting,
    real_print,
    syn_adain_painting,
    syn_adain_print,
    syn_cyclegan_painting,
    syn_cyclegan_print,
    augmented,
};

inline constexpr std::array<Provenance, 7> kProvenances = {
    Provenance::real_painting,      Provenance::real_print,         Provenance::syn_adain_painting,
    Provenance::syn_adain_print,    Provenance::syn_cyclegan_painting, Provenance::syn_cyclegan_print,
    Provenance::augmented};

std::string_view to_string(Split split);
std::string_view to_string(Provenance provenance);
Split split_from_string(std::string_view name);
Provenance provenance_from_string(std::string_view name);

/// Coarse class used for report rows: "painting", "print" or "augmented".
std::string_view provenance_class(Provenance provenance);

struct ManifestRow {
    std::filesystem::path image;
    std::filesystem::path landmarks;
    Split split = Split::train;
    Provenance provenance = Provenance::augmented;
    std::string source;

    friend bool operator==(const ManifestRow&, const ManifestRow&) = default;
};

/// CSV with header `image,landmarks,split,provenance,source`. Relative paths
/// are resolved against `root` (the manifest's directory when read from disk).
struct Manifest {
    std::filesystem::path root;
    std::vector<ManifestRow> rows;

    std::filesystem::path resolve(const std::filesystem::path& p) const { return p.is_absolute() ? p : root / p; }
    std::vector<ManifestRow> split_rows(Split split) const;
};

Manifest parse_manifest(const std::string& csv, const std::filesystem::path& root);
Manifest read_manifest(const std::filesystem::path& path);
std::string format_manifest(const Manifest& manifest);
void write_manifest(const Manifest& manifest, const std::filesystem::path& path);

/// Referential integrity (every file exists) and split disjointness (no image
/// listed under two splits). Returns one message per problem.
std::vector<std::string> validate_manifest(const Manifest& manifest);

/// Counts per (provenance, split), rendered as a text table.
std::string manifest_counts_table(const Manifest& manifest);

/// One training/evaluation sample, resized to the high-resolution square.
struct Sample {
    cv::Mat image;          ///< CV_32FC3, kHighResSize x kHighResSize
    LandmarkSet landmarks;  ///< in the square frame
    SquareFit fit;          ///< maps the original frame to the square
    ManifestRow row;
};

/// Loads the image and sidecar; when not already square at `size`, pads to a
/// square (centred, edge replicated) and rescales, transforming landmarks
/// consistently. Throws IoError/ParseError on unreadable input and
/// ValidationError when the sidecar frame disagrees with the image.
Sample load_sample(const Manifest& manifest, const ManifestRow& row, int size = kHighResSize);

/// All samples of a split, loaded eagerly.
std::vector<Sample> load_split(const Manifest& manifest, Split split, int size = kHighResSize);

/// Runs `<cmd> <in> <out>` without a shell. An empty command copies the file.
/// Throws Error on spawn failure or nonzero exit.
void run_stylizer(const std::string& command, const std::filesystem::path& in, const std::filesystem::path& out);

struct BaseImage {
    std::filesystem::path image;
    std::filesystem::path landmarks;
    std::string source;
};

struct SyntheticConfig {
    std::string stylizer_command;  ///< empty: identity
    AugmentConfig augment;
    int augmentations_per_image = 1;
    Split split = Split::train;
    Provenance provenance = Provenance::augmented;
    std::uint64_t seed = 0;
};

/// Stylize each base image (scaled to 1024 x 1024), then apply K geometric
/// augmentations, writing images/<stem>_<k>.png and landmarks/<stem>_<k>.json
/// under out_dir. Returns manifest rows relative to out_dir in input order.
std::vector<ManifestRow> build_synthetic(const std::vector<BaseImage>& bases, const std::filesystem::path& out_dir,
                                         const SyntheticConfig& config);

// ---------------------------------------------------------------------------
// Synthetic toy faces (hermetic tests, demos)

/// Frontal template in a unit face frame (x right, y down, roughly [-1, 1]).
const LandmarkSet::Points& template_face();

struct ToyFace {
    cv::Mat image;  ///< CV_32FC3
    LandmarkSet landmarks;
};

/// Draws a cartoon face with random pose, proportions and palette.
ToyFace render_toy_face(std::uint64_t seed, int size = kHighResSize);

/// Writes train_count + val_count + test_count toy faces and a manifest.csv
/// into dir; returns the manifest path.
std::filesystem::path write_toy_corpus(const std::filesystem::path& dir, int train_count, std::uint64_t seed,
                                       int size = kHighResSize, int val_count = 0, int test_count = 0);

}  // namespace artface
