#include "artface/landmarks.hpp"

#include <fcntl.h>
#include <unistd.h>

#include <algorithm>
#include <cerrno>
#include <cstring>
#include <fstream>
#include <iomanip>
#include <limits>
#include <map>
#include <numeric>
#include <random>
#include <sstream>

#include <json.hpp>

#include "artface/errors.hpp"

namespace artface {

namespace {

template <int First, int Count>
constexpr std::array<int, Count> iota_array() {
    std::array<int, Count> out{};
    for (int i = 0; i < Count; ++i) out[static_cast<std::size_t>(i)] = First + i;
    return out;
}

constexpr auto kJaw = iota_array<0, 17>();
constexpr auto kRightBrow = iota_array<17, 5>();
constexpr auto kLeftBrow = iota_array<22, 5>();
constexpr auto kNose = iota_array<27, 9>();
constexpr auto kRightEye = iota_array<36, 6>();
constexpr auto kLeftEye = iota_array<42, 6>();
constexpr auto kMouth = iota_array<48, 20>();
constexpr auto kBrows = iota_array<17, 10>();
constexpr auto kInner51 = iota_array<17, 51>();

constexpr std::array<int, 11> kRightEyeRegion = {17, 18, 19, 20, 21, 36, 37, 38, 39, 40, 41};
constexpr std::array<int, 11> kLeftEyeRegion = {22, 23, 24, 25, 26, 42, 43, 44, 45, 46, 47};

constexpr std::array<int, 41> make_registration41() {
    std::array<int, 41> out{};
    std::size_t k = 0;
    for (int i = 27; i < 68; ++i) out[k++] = i;  // nose, eyes, mouth are contiguous
    return out;
}
constexpr auto kRegistration41 = make_registration41();

// Mirror partners for the 300-W 68-point markup.
constexpr std::array<int, 68> make_mirror_table() {
    std::array<int, 68> m{};
    for (int i = 0; i < 68; ++i) m[static_cast<std::size_t>(i)] = i;
    for (int i = 0; i <= 16; ++i) m[static_cast<std::size_t>(i)] = 16 - i;
    for (int i = 17; i <= 26; ++i) m[static_cast<std::size_t>(i)] = 43 - i;
    // nose bridge 27-30 on the axis; nostrils 31-35 mirror around 33
    for (int i = 31; i <= 35; ++i) m[static_cast<std::size_t>(i)] = 66 - i;
    constexpr std::array<std::pair<int, int>, 6> eyes = {
        std::pair{36, 45}, std::pair{37, 44}, std::pair{38, 43},
        std::pair{39, 42}, std::pair{40, 47}, std::pair{41, 46}};
    for (auto [a, b] : eyes) {
        m[static_cast<std::size_t>(a)] = b;
        m[static_cast<std::size_t>(b)] = a;
    }
    // outer lip 48-59 mirrors around 51/57, inner lip 60-67 around 62/66
    for (int i = 48; i <= 54; ++i) m[static_cast<std::size_t>(i)] = 102 - i;
    for (int i = 55; i <= 59; ++i) m[static_cast<std::size_t>(i)] = 114 - i;
    for (int i = 60; i <= 64; ++i) m[static_cast<std::size_t>(i)] = 124 - i;
    for (int i = 65; i <= 67; ++i) m[static_cast<std::size_t>(i)] = 132 - i;
    return m;
}
constexpr auto kMirror = make_mirror_table();

struct NamedGroup {
    std::string_view name;
    std::span<const int> indices;
};

const std::array<NamedGroup, 8>& named_groups() {
    static const std::array<NamedGroup, 8> groups = {{
        {"jaw", kJaw},
        {"brows", kBrows},
        {"nose", kNose},
        {"left_eye_region", kLeftEyeRegion},
        {"right_eye_region", kRightEyeRegion},
        {"mouth", kMouth},
        {"inner51", kInner51},
        {"registration41", kRegistration41},
    }};
    return groups;
}

void check_dims(int w, int h) {
    if (w <= 0 || h <= 0) {
        throw ValidationError("image dimensions must be positive, got " + std::to_string(w) + "x" +
                              std::to_string(h));
    }
}

void check_finite(Point2 p, int index) {
    if (!is_finite(p)) {
        throw ValidationError("landmark " + std::to_string(index) + " has a non-finite coordinate");
    }
}

// JSON has no NaN/Infinity literals; map them to null so the validator can
// report which point is affected instead of failing with a lexer error.
std::string sanitize_non_finite_literals(std::string_view text) {
    std::string out;
    out.reserve(text.size());
    bool in_string = false;
    for (std::size_t i = 0; i < text.size(); ++i) {
        const char c = text[i];
        if (in_string) {
            out.push_back(c);
            if (c == '\\' && i + 1 < text.size()) {
                out.push_back(text[++i]);
            } else if (c == '"') {
                in_string = false;
            }
            continue;
        }
        if (c == '"') {
            in_string = true;
            out.push_back(c);
            continue;
        }
        auto starts = [&](std::string_view token) { return text.substr(i, token.size()) == token; };
        if (starts("-Infinity")) {
            out += "null";
            i += 8;
        } else if (starts("Infinity")) {
            out += "null";
            i += 7;
        } else if (starts("NaN")) {
            out += "null";
            i += 2;
        } else {
            out.push_back(c);
        }
    }
    return out;
}

}  // namespace

// ---------------------------------------------------------------------------

LandmarkSet::LandmarkSet(const Points& points, int image_width, int image_height)
    : points_(points), width_(image_width), height_(image_height) {
    check_dims(image_width, image_height);
    for (int i = 0; i < kNumLandmarks; ++i) check_finite(points_[static_cast<std::size_t>(i)], i);
}

LandmarkSet LandmarkSet::from_vector(std::span<const Point2> points, int image_width, int image_height) {
    if (points.size() != static_cast<std::size_t>(kNumLandmarks)) {
        throw ValidationError("expected 68 landmarks, found " + std::to_string(points.size()));
    }
    Points arr{};
    std::copy(points.begin(), points.end(), arr.begin());
    return LandmarkSet(arr, image_width, image_height);
}

void LandmarkSet::set_point(int index, Point2 p) {
    if (index < 0 || index >= kNumLandmarks) throw ValidationError("landmark index out of range");
    check_finite(p, index);
    points_[static_cast<std::size_t>(index)] = p;
}

std::span<const int> base_group_indices(BaseGroup group) {
    switch (group) {
        case BaseGroup::jaw: return kJaw;
        case BaseGroup::right_brow: return kRightBrow;
        case BaseGroup::left_brow: return kLeftBrow;
        case BaseGroup::nose: return kNose;
        case BaseGroup::right_eye: return kRightEye;
        case BaseGroup::left_eye: return kLeftEye;
        case BaseGroup::mouth: return kMouth;
    }
    throw ValidationError("unknown base group");
}

std::string_view to_string(BaseGroup group) {
    switch (group) {
        case BaseGroup::jaw: return "jaw";
        case BaseGroup::right_brow: return "right_brow";
        case BaseGroup::left_brow: return "left_brow";
        case BaseGroup::nose: return "nose";
        case BaseGroup::right_eye: return "right_eye";
        case BaseGroup::left_eye: return "left_eye";
        case BaseGroup::mouth: return "mouth";
    }
    return "?";
}

std::span<const int> group_indices(std::string_view group_name) {
    for (const auto& g : named_groups()) {
        if (g.name == group_name) return g.indices;
    }
    throw ValidationError("unknown landmark group '" + std::string(group_name) + "'");
}

std::vector<std::string_view> group_names() {
    std::vector<std::string_view> names;
    for (const auto& g : named_groups()) names.push_back(g.name);
    return names;
}

std::vector<Point2> select_indices(const LandmarkSet& landmarks, std::span<const int> indices) {
    std::vector<Point2> out;
    out.reserve(indices.size());
    for (int i : indices) out.push_back(landmarks[i]);
    return out;
}

std::vector<Point2> select_group(const LandmarkSet& landmarks, std::string_view group_name) {
    return select_indices(landmarks, group_indices(group_name));
}

int mirror_index(int index) {
    if (index < 0 || index >= kNumLandmarks) throw ValidationError("landmark index out of range");
    return kMirror[static_cast<std::size_t>(index)];
}

// ---------------------------------------------------------------------------

Point2 normalize_point(Point2 p, double ref_w, double ref_h) {
    if (!(ref_w > 0.0) || !(ref_h > 0.0)) throw ValidationError("reference dimensions must be positive");
    return {p.x / ref_w - 0.5, p.y / ref_h - 0.5};
}

Point2 denormalize_point(Point2 p, double ref_w, double ref_h) {
    if (!(ref_w > 0.0) || !(ref_h > 0.0)) throw ValidationError("reference dimensions must be positive");
    return {(p.x + 0.5) * ref_w, (p.y + 0.5) * ref_h};
}

NormalizedLandmarks normalize(const LandmarkSet& landmarks, double ref_w, double ref_h) {
    NormalizedLandmarks out;
    for (int i = 0; i < kNumLandmarks; ++i) {
        out.points[static_cast<std::size_t>(i)] = normalize_point(landmarks[i], ref_w, ref_h);
    }
    return out;
}

LandmarkSet denormalize(const NormalizedLandmarks& normalized, double ref_w, double ref_h, int image_width,
                        int image_height) {
    LandmarkSet::Points pts{};
    for (std::size_t i = 0; i < pts.size(); ++i) pts[i] = denormalize_point(normalized.points[i], ref_w, ref_h);
    return LandmarkSet(pts, image_width, image_height);
}

// ---------------------------------------------------------------------------
// .pts

LandmarkSet parse_pts(std::string_view text, const PtsOptions& options) {
    std::istringstream in{std::string(text)};
    std::string line;
    int declared = -1;
    bool in_block = false;
    std::vector<Point2> pts;
    int line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        const auto first = line.find_first_not_of(" \t");
        if (first == std::string::npos) continue;
        std::string_view trimmed = std::string_view(line).substr(first);
        if (!in_block) {
            if (trimmed.starts_with("version")) continue;
            if (trimmed.starts_with("n_points")) {
                const auto colon = trimmed.find(':');
                if (colon == std::string_view::npos) throw ParseError("pts line " + std::to_string(line_no) + ": malformed n_points");
                try {
                    declared = std::stoi(std::string(trimmed.substr(colon + 1)));
                } catch (const std::exception&) {
                    throw ParseError("pts line " + std::to_string(line_no) + ": malformed n_points");
                }
                if (declared != kNumLandmarks) {
                    throw ParseError("pts header declares n_points: " + std::to_string(declared) + ", expected 68");
                }
                continue;
            }
            if (trimmed.starts_with("{")) {
                in_block = true;
                continue;
            }
            throw ParseError("pts line " + std::to_string(line_no) + ": unexpected content before '{'");
        }
        if (trimmed.starts_with("}")) {
            in_block = false;
            break;
        }
        std::istringstream ls{std::string(trimmed)};
        Point2 p;
        if (!(ls >> p.x >> p.y)) throw ParseError("pts line " + std::to_string(line_no) + ": expected 'x y'");
        if (!is_finite(p)) {
            throw ParseError("pts point " + std::to_string(pts.size()) + " has a non-finite coordinate");
        }
        if (options.one_based) p = p - Point2{1.0, 1.0};
        pts.push_back(p);
    }
    if (declared < 0) throw ParseError("pts file lacks an n_points header");
    if (in_block) throw ParseError("pts file lacks closing '}'");
    if (pts.size() != static_cast<std::size_t>(kNumLandmarks)) {
        throw ParseError("pts file has " + std::to_string(pts.size()) + " points, expected 68");
    }
    return LandmarkSet::from_vector(pts, options.image_width, options.image_height);
}

std::string format_pts(const LandmarkSet& landmarks, bool one_based) {
    std::ostringstream out;
    out << std::setprecision(std::numeric_limits<double>::max_digits10);
    out << "version: 1\nn_points: 68\n{\n";
    const double off = one_based ? 1.0 : 0.0;
    for (const auto& p : landmarks.points()) out << (p.x + off) << ' ' << (p.y + off) << '\n';
    out << "}\n";
    return out.str();
}

// ---------------------------------------------------------------------------
// JSON sidecar

std::string_view to_string(LandmarkSource source) {
    switch (source) {
        case LandmarkSource::manual: return "manual";
        case LandmarkSource::model: return "model";
        case LandmarkSource::augmented: return "augmented";
    }
    return "manual";
}

LandmarkSource landmark_source_from_string(std::string_view s) {
    if (s == "manual") return LandmarkSource::manual;
    if (s == "model") return LandmarkSource::model;
    if (s == "augmented") return LandmarkSource::augmented;
    throw ParseError("unknown landmark source '" + std::string(s) + "'");
}

LandmarkFile parse_landmark_json(std::string_view text) {
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(sanitize_non_finite_literals(text));
    } catch (const nlohmann::json::exception& e) {
        throw ParseError(std::string("landmark json: ") + e.what());
    }
    if (!j.is_object()) throw ParseError("landmark json: expected an object");
    if (!j.contains("points") || !j["points"].is_array()) throw ParseError("landmark json: missing 'points' array");
    const auto& arr = j["points"];
    if (arr.size() != static_cast<std::size_t>(kNumLandmarks)) {
        throw ParseError("landmark json: expected 68 points, found " + std::to_string(arr.size()));
    }
    std::vector<Point2> pts;
    pts.reserve(arr.size());
    for (std::size_t i = 0; i < arr.size(); ++i) {
        const auto& e = arr[i];
        if (!e.is_array() || e.size() != 2) {
            throw ParseError("landmark json: point " + std::to_string(i) + " is not an [x, y] pair");
        }
        if (!e[0].is_number() || !e[1].is_number()) {
            throw ParseError("landmark json: point " + std::to_string(i) + " has a non-finite coordinate");
        }
        Point2 p{e[0].get<double>(), e[1].get<double>()};
        if (!is_finite(p)) {
            throw ParseError("landmark json: point " + std::to_string(i) + " has a non-finite coordinate");
        }
        pts.push_back(p);
    }
    const int w = j.value("width", 0);
    const int h = j.value("height", 0);
    if (w <= 0 || h <= 0) throw ParseError("landmark json: width/height must be positive integers");
    LandmarkFile file;
    file.landmarks = LandmarkSet::from_vector(pts, w, h);
    file.image = j.value("image", std::string{});
    file.source = landmark_source_from_string(j.value("source", std::string{"manual"}));
    return file;
}

std::string format_landmark_json(const LandmarkFile& file) {
    nlohmann::json j;
    j["image"] = file.image;
    j["width"] = file.landmarks.image_width();
    j["height"] = file.landmarks.image_height();
    auto pts = nlohmann::json::array();
    for (const auto& p : file.landmarks.points()) pts.push_back({p.x, p.y});
    j["points"] = std::move(pts);
    j["source"] = std::string(to_string(file.source));
    return j.dump(2) + "\n";
}

// ---------------------------------------------------------------------------

std::string read_text_file(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open " + path.string());
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

void write_file_atomic(const std::filesystem::path& path, std::string_view content,
                       const std::function<void(const std::filesystem::path&)>& before_rename) {
    static thread_local std::mt19937_64 rng{std::random_device{}()};
    auto tmp = path;
    tmp += ".tmp" + std::to_string(rng() % 1000000);
    const int fd = ::open(tmp.c_str(), O_WRONLY | O_CREAT | O_TRUNC | O_CLOEXEC, 0644);
    if (fd < 0) throw IoError("cannot write " + tmp.string() + ": " + std::strerror(errno));
    std::size_t done = 0;
    while (done < content.size()) {
        const ssize_t n = ::write(fd, content.data() + done, content.size() - done);
        if (n < 0 && errno == EINTR) continue;
        if (n <= 0) {
            ::close(fd);
            std::filesystem::remove(tmp);
            throw IoError("short write to " + tmp.string());
        }
        done += static_cast<std::size_t>(n);
    }
    if (::fsync(fd) != 0 || ::close(fd) != 0) {
        std::filesystem::remove(tmp);
        throw IoError("cannot flush " + tmp.string());
    }
    if (before_rename) before_rename(tmp);
    std::error_code ec;
    std::filesystem::rename(tmp, path, ec);
    if (ec) {
        std::filesystem::remove(tmp);
        throw IoError("cannot rename onto " + path.string() + ": " + ec.message());
    }
    const auto dir = path.has_parent_path() ? path.parent_path() : std::filesystem::path(".");
    if (const int dfd = ::open(dir.c_str(), O_RDONLY | O_DIRECTORY | O_CLOEXEC); dfd >= 0) {
        ::fsync(dfd);
        ::close(dfd);
    }
}

LandmarkSet read_landmarks(const std::filesystem::path& path, const PtsOptions& options) {
    const auto ext = path.extension().string();
    if (ext == ".pts") return parse_pts(read_text_file(path), options);
    if (ext == ".json") return parse_landmark_json(read_text_file(path)).landmarks;
    throw ParseError("unsupported landmark file extension '" + ext + "'");
}

void write_landmarks(const LandmarkSet& landmarks, const std::filesystem::path& path, const std::string& image_ref,
                     LandmarkSource source) {
    const auto ext = path.extension().string();
    if (ext == ".pts") {
        write_file_atomic(path, format_pts(landmarks));
    } else if (ext == ".json") {
        write_file_atomic(path, format_landmark_json({landmarks, image_ref, source}));
    } else {
        throw ParseError("unsupported landmark file extension '" + ext + "'");
    }
}

LandmarkFile read_landmark_file(const std::filesystem::path& path) {
    return parse_landmark_json(read_text_file(path));
}

void write_landmark_file(const LandmarkFile& file, const std::filesystem::path& path) {
    write_file_atomic(path, format_landmark_json(file));
}

}  // namespace artface
