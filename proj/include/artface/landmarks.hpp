#pragma once

#include <array>
#include <cmath>
#include <filesystem>
#include <functional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace artface {

inline constexpr int kNumLandmarks = 68;

struct Point2 {
    double x = 0.0;
    double y = 0.0;

    friend Point2 operator+(Point2 a, Point2 b) { return {a.x + b.x, a.y + b.y}; }
    friend Point2 operator-(Point2 a, Point2 b) { return {a.x - b.x, a.y - b.y}; }
    friend Point2 operator*(Point2 a, double s) { return {a.x * s, a.y * s}; }
    friend Point2 operator*(double s, Point2 a) { return {a.x * s, a.y * s}; }
    friend bool operator==(Point2 a, Point2 b) = default;
};

inline double norm(Point2 p) { return std::hypot(p.x, p.y); }
inline double distance(Point2 a, Point2 b) { return norm(a - b); }
inline bool is_finite(Point2 p) { return std::isfinite(p.x) && std::isfinite(p.y); }

/// 68 landmarks in 300-W order, pixel units, origin at the center of the
/// top-left pixel. Points may fall outside the image but must be finite.
class LandmarkSet {
public:
    using Points = std::array<Point2, kNumLandmarks>;

    LandmarkSet() = default;
    LandmarkSet(const Points& points, int image_width, int image_height);

    /// Throws ValidationError unless `points` has exactly 68 finite entries.
    static LandmarkSet from_vector(std::span<const Point2> points, int image_width, int image_height);

    const Points& points() const { return points_; }
    const Point2& operator[](int i) const { return points_.at(static_cast<std::size_t>(i)); }
    void set_point(int index, Point2 p);

    int image_width() const { return width_; }
    int image_height() const { return height_; }

    friend bool operator==(const LandmarkSet&, const LandmarkSet&) = default;

private:
    Points points_{};
    int width_ = 1;
    int height_ = 1;
};

// ---------------------------------------------------------------------------
// 300-W index groups

enum class BaseGroup { jaw, right_brow, left_brow, nose, right_eye, left_eye, mouth };

inline constexpr std::array<BaseGroup, 7> kBaseGroups = {
    BaseGroup::jaw,       BaseGroup::right_brow, BaseGroup::left_brow, BaseGroup::nose,
    BaseGroup::right_eye, BaseGroup::left_eye,   BaseGroup::mouth};

std::span<const int> base_group_indices(BaseGroup group);
std::string_view to_string(BaseGroup group);

/// Named selections: jaw, brows, nose, left_eye_region, right_eye_region,
/// mouth, inner51, registration41. Throws ValidationError on unknown names.
std::span<const int> group_indices(std::string_view group_name);
std::vector<std::string_view> group_names();

std::vector<Point2> select_group(const LandmarkSet& landmarks, std::string_view group_name);
std::vector<Point2> select_indices(const LandmarkSet& landmarks, std::span<const int> indices);

/// Horizontal mirror partner of each landmark (right eye corner 36 <-> left 45, ...).
int mirror_index(int index);

// ---------------------------------------------------------------------------
// Normalization to [-0.5, 0.5]

struct NormalizedLandmarks {
    std::array<Point2, kNumLandmarks> points{};
};

Point2 normalize_point(Point2 p, double ref_w, double ref_h);
Point2 denormalize_point(Point2 p, double ref_w, double ref_h);
NormalizedLandmarks normalize(const LandmarkSet& landmarks, double ref_w, double ref_h);
LandmarkSet denormalize(const NormalizedLandmarks& normalized, double ref_w, double ref_h, int image_width,
                        int image_height);

// ---------------------------------------------------------------------------
// File formats

struct PtsOptions {
    /// 300-W files use 1-based pixel coordinates; set false for 0-based files.
    bool one_based = true;
    int image_width = 1024;
    int image_height = 1024;
};

enum class LandmarkSource { manual, model, augmented };
std::string_view to_string(LandmarkSource source);
LandmarkSource landmark_source_from_string(std::string_view s);

/// JSON sidecar payload.
struct LandmarkFile {
    LandmarkSet landmarks;
    std::string image;
    LandmarkSource source = LandmarkSource::manual;
};

LandmarkSet parse_pts(std::string_view text, const PtsOptions& options = {});
std::string format_pts(const LandmarkSet& landmarks, bool one_based = true);

LandmarkFile parse_landmark_json(std::string_view text);
std::string format_landmark_json(const LandmarkFile& file);

/// Format chosen by extension: ".pts" or ".json".
LandmarkSet read_landmarks(const std::filesystem::path& path, const PtsOptions& options = {});
void write_landmarks(const LandmarkSet& landmarks, const std::filesystem::path& path,
                     const std::string& image_ref = {}, LandmarkSource source = LandmarkSource::manual);

LandmarkFile read_landmark_file(const std::filesystem::path& path);
void write_landmark_file(const LandmarkFile& file, const std::filesystem::path& path);

/// Writes `content` to a temporary sibling, syncs it and renames it over
/// `path`. `before_rename` runs between the two steps (fault injection).
void write_file_atomic(const std::filesystem::path& path, std::string_view content,
                       const std::function<void(const std::filesystem::path&)>& before_rename = {});
std::string read_text_file(const std::filesystem::path& path);

}  // namespace artface
