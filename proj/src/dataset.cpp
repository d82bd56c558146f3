#include "artface/dataset.hpp"

#include <spawn.h>
#include <sys/wait.h>

#include <algorithm>
#include <cmath>
#include <exception>
#include <map>
#include <random>
#include <set>
#include <sstream>

#include <opencv2/imgproc.hpp>

#include "artface/errors.hpp"
#include "artface/image.hpp"
#include "artface/seed.hpp"

extern char** environ;

namespace fs = std::filesystem;

namespace artface {

std::string_view to_string(Split split) {
    switch (split) {
        case Split::train: return "train";
        case Split::val: return "val";
        case Split::test: return "test";
    }
    return "?";
}

std::string_view to_string(Provenance p) {
    switch (p) {
        case Provenance::real_painting: return "real_painting";
        case Provenance::real_print: return "real_print";
        case Provenance::syn_adain_painting: return "syn_adain_painting";
        case Provenance::syn_adain_print: return "syn_adain_print";
        case Provenance::syn_cyclegan_painting: return "syn_cyclegan_painting";
        case Provenance::syn_cyclegan_print: return "syn_cyclegan_print";
        case Provenance::augmented: return "augmented";
    }
    return "?";
}

Split split_from_string(std::string_view name) {
    for (Split s : {Split::train, Split::val, Split::test}) {
        if (to_string(s) == name) return s;
    }
    throw ValidationError("unknown split '" + std::string(name) + "' (expected train, val or test)");
}

Provenance provenance_from_string(std::string_view name) {
    for (Provenance p : kProvenances) {
        if (to_string(p) == name) return p;
    }
    throw ValidationError("unknown provenance '" + std::string(name) + "'");
}

std::string_view provenance_class(Provenance p) {
    switch (p) {
        case Provenance::real_painting:
        case Provenance::syn_adain_painting:
        case Provenance::syn_cyclegan_painting: return "painting";
        case Provenance::real_print:
        case Provenance::syn_adain_print:
        case Provenance::syn_cyclegan_print: return "print";
        case Provenance::augmented: return "augmented";
    }
    return "?";
}

std::vector<ManifestRow> Manifest::split_rows(Split split) const {
    std::vector<ManifestRow> out;
    std::copy_if(rows.begin(), rows.end(), std::back_inserter(out), [&](const ManifestRow& r) { return r.split == split; });
    return out;
}

namespace {

// Minimal RFC 4180 field splitting (quoted fields, doubled quotes).
std::vector<std::string> split_csv_line(const std::string& line, int line_no) {
    std::vector<std::string> fields;
    std::string cur;
    bool quoted = false;
    for (std::size_t i = 0; i < line.size(); ++i) {
        const char c = line[i];
        if (quoted) {
            if (c == '"' && i + 1 < line.size() && line[i + 1] == '"') {
                cur += '"';
                ++i;
            } else if (c == '"') {
                quoted = false;
            } else {
                cur += c;
            }
        } else if (c == '"') {
            quoted = true;
        } else if (c == ',') {
            fields.push_back(std::move(cur));
            cur.clear();
        } else {
            cur += c;
        }
    }
    if (quoted) throw ParseError("manifest line " + std::to_string(line_no) + ": unterminated quote");
    fields.push_back(std::move(cur));
    return fields;
}

std::string csv_field(const std::string& s) {
    if (s.find_first_of(",\"\n") == std::string::npos) return s;
    std::string out = "\"";
    for (char c : s) {
        if (c == '"') out += '"';
        out += c;
    }
    return out + "\"";
}

constexpr const char* kManifestHeader = "image,landmarks,split,provenance,source";

}  // namespace

Manifest parse_manifest(const std::string& csv, const fs::path& root) {
    Manifest m;
    m.root = root;
    std::istringstream in(csv);
    std::string line;
    int line_no = 0;
    bool header_seen = false;
    while (std::getline(in, line)) {
        ++line_no;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty()) continue;
        if (!header_seen) {
            if (line != kManifestHeader) {
                throw ParseError("manifest header must be '" + std::string(kManifestHeader) + "', found '" + line + "'");
            }
            header_seen = true;
            continue;
        }
        const auto f = split_csv_line(line, line_no);
        if (f.size() != 5) {
            throw ParseError("manifest line " + std::to_string(line_no) + ": expected 5 fields, found " +
                             std::to_string(f.size()));
        }
        try {
            m.rows.push_back({f[0], f[1], split_from_string(f[2]), provenance_from_string(f[3]), f[4]});
        } catch (const ValidationError& e) {
            throw ParseError("manifest line " + std::to_string(line_no) + ": " + e.what());
        }
    }
    if (!header_seen) throw ParseError("manifest is empty");
    return m;
}

Manifest read_manifest(const fs::path& path) { return parse_manifest(read_text_file(path), path.parent_path()); }

std::string format_manifest(const Manifest& manifest) {
    std::string out = std::string(kManifestHeader) + "\n";
    for (const auto& r : manifest.rows) {
        out += csv_field(r.image.generic_string()) + "," + csv_field(r.landmarks.generic_string()) + "," +
               std::string(to_string(r.split)) + "," + std::string(to_string(r.provenance)) + "," + csv_field(r.source) +
               "\n";
    }
    return out;
}

void write_manifest(const Manifest& manifest, const fs::path& path) { write_file_atomic(path, format_manifest(manifest)); }

std::vector<std::string> validate_manifest(const Manifest& manifest) {
    std::vector<std::string> problems;
    std::map<fs::path, Split> seen;
    for (const auto& r : manifest.rows) {
        for (const auto& p : {r.image, r.landmarks}) {
            if (!fs::exists(manifest.resolve(p))) problems.push_back("missing file " + p.generic_string());
        }
        const fs::path key = manifest.resolve(r.image).lexically_normal();
        const auto [it, inserted] = seen.emplace(key, r.split);
        if (!inserted && it->second != r.split) {
            problems.push_back("image " + r.image.generic_string() + " appears in splits " +
                               std::string(to_string(it->second)) + " and " + std::string(to_string(r.split)));
        }
    }
    return problems;
}

std::string manifest_counts_table(const Manifest& manifest) {
    std::map<std::pair<Provenance, Split>, int> counts;
    for (const auto& r : manifest.rows) ++counts[{r.provenance, r.split}];
    std::ostringstream out;
    char buf[128];
    std::snprintf(buf, sizeof buf, "%-24s %8s %8s %8s %8s\n", "provenance", "train", "val", "test", "total");
    out << buf;
    int totals[4] = {0, 0, 0, 0};
    for (Provenance p : kProvenances) {
        const int tr = counts[{p, Split::train}], va = counts[{p, Split::val}], te = counts[{p, Split::test}];
        if (tr + va + te == 0) continue;
        std::snprintf(buf, sizeof buf, "%-24s %8d %8d %8d %8d\n", std::string(to_string(p)).c_str(), tr, va, te,
                      tr + va + te);
        out << buf;
        totals[0] += tr;
        totals[1] += va;
        totals[2] += te;
        totals[3] += tr + va + te;
    }
    std::snprintf(buf, sizeof buf, "%-24s %8d %8d %8d %8d\n", "total", totals[0], totals[1], totals[2], totals[3]);
    out << buf;
    return out.str();
}

namespace {

Sample load_pair(const fs::path& image_path, const fs::path& landmark_path, int size) {
    Sample s;
    const cv::Mat raw = load_image(image_path);
    LandmarkSet lm;
    if (landmark_path.extension() == ".pts") {
        lm = read_landmarks(landmark_path, PtsOptions{.one_based = true, .image_width = raw.cols, .image_height = raw.rows});
    } else {
        lm = read_landmark_file(landmark_path).landmarks;
        if (lm.image_width() != raw.cols || lm.image_height() != raw.rows) {
            throw ValidationError("landmarks " + landmark_path.string() + " describe a " +
                                  std::to_string(lm.image_width()) + "x" + std::to_string(lm.image_height()) +
                                  " image but " + image_path.string() + " is " + std::to_string(raw.cols) + "x" +
                                  std::to_string(raw.rows));
        }
    }
    s.fit = fit_to_square(raw, size);
    s.image = s.fit.image;
    std::vector<Point2> pts;
    for (const auto& p : lm.points()) pts.push_back(s.fit.to_square(p));
    s.landmarks = LandmarkSet::from_vector(pts, size, size);
    return s;
}

}  // namespace

Sample load_sample(const Manifest& manifest, const ManifestRow& row, int size) {
    Sample s = load_pair(manifest.resolve(row.image), manifest.resolve(row.landmarks), size);
    s.row = row;
    return s;
}

std::vector<Sample> load_split(const Manifest& manifest, Split split, int size) {
    std::vector<Sample> out;
    for (const auto& r : manifest.split_rows(split)) out.push_back(load_sample(manifest, r, size));
    return out;
}

void run_stylizer(const std::string& command, const fs::path& in, const fs::path& out) {
    if (command.empty()) {
        fs::copy_file(in, out, fs::copy_options::overwrite_existing);
        return;
    }
    std::vector<std::string> args;
    std::istringstream words(command);
    for (std::string w; words >> w;) args.push_back(w);
    args.push_back(in.string());
    args.push_back(out.string());
    std::vector<char*> argv;
    for (auto& a : args) argv.push_back(a.data());
    argv.push_back(nullptr);
    pid_t pid = 0;
    if (const int rc = posix_spawnp(&pid, argv[0], nullptr, nullptr, argv.data(), environ); rc != 0) {
        throw Error("stylizer '" + args[0] + "' could not be started: " + std::strerror(rc));
    }
    int status = 0;
    if (waitpid(pid, &status, 0) < 0) throw Error("waiting for stylizer failed");
    if (!WIFEXITED(status) || WEXITSTATUS(status) != 0) {
        throw Error("stylizer '" + command + "' failed on " + in.string() + " (exit status " +
                    std::to_string(WIFEXITED(status) ? WEXITSTATUS(status) : -1) + ")");
    }
    if (!fs::exists(out)) throw Error("stylizer '" + command + "' produced no output for " + in.string());
}

std::vector<ManifestRow> build_synthetic(const std::vector<BaseImage>& bases, const fs::path& out_dir,
                                         const SyntheticConfig& config) {
    if (config.augmentations_per_image < 1) throw ValidationError("augmentations per image must be >= 1");
    fs::create_directories(out_dir / "images");
    fs::create_directories(out_dir / "landmarks");
    fs::create_directories(out_dir / "tmp");
    const int n = static_cast<int>(bases.size()), k_per = config.augmentations_per_image;
    std::vector<ManifestRow> rows(static_cast<std::size_t>(n) * k_per);
    std::vector<std::exception_ptr> errors(static_cast<std::size_t>(n));

#pragma omp parallel for schedule(dynamic)
    for (int i = 0; i < n; ++i) {
        try {
            const auto& base = bases[static_cast<std::size_t>(i)];
            const Sample s = load_pair(base.image, base.landmarks, kHighResSize);
            const std::string stem = base.image.stem().string();
            const fs::path staged = out_dir / "tmp" / (stem + "_" + std::to_string(i) + "_in.png");
            const fs::path styled = out_dir / "tmp" / (stem + "_" + std::to_string(i) + "_styled.png");
            if (s.fit.scale == 1.0 && s.fit.offset == Point2{} && base.image.extension() == ".png") {
                fs::copy_file(base.image, staged, fs::copy_options::overwrite_existing);
            } else {
                save_image(s.image, staged);
            }
            run_stylizer(config.stylizer_command, staged, styled);
            cv::Mat stylized = load_image(styled);
            if (stylized.cols != kHighResSize || stylized.rows != kHighResSize) {
                throw ValidationError("stylizer changed the image size of " + base.image.string());
            }
            for (int k = 0; k < k_per; ++k) {
                const std::uint64_t seed = derive_seed(config.seed, static_cast<std::uint64_t>(i) * k_per + k);
                const AugmentResult aug = augment_landmarks(s.landmarks, config.augment, seed);
                const cv::Mat warped = aug.field.control_src.empty() ? stylized : tps_warp_image(stylized, aug.field);
                const std::string name = stem + "_" + std::to_string(k);
                const fs::path img_rel = fs::path("images") / (name + ".png");
                const fs::path lm_rel = fs::path("landmarks") / (name + ".json");
                save_image(warped, out_dir / img_rel);
                write_landmark_file({aug.landmarks, img_rel.generic_string(), LandmarkSource::augmented}, out_dir / lm_rel);
                rows[static_cast<std::size_t>(i) * k_per + k] = {img_rel, lm_rel, config.split, config.provenance,
                                                                  base.source};
            }
            fs::remove(staged);
            fs::remove(styled);
        } catch (...) {
            errors[static_cast<std::size_t>(i)] = std::current_exception();
        }
    }
    std::error_code ec;
    fs::remove(out_dir / "tmp", ec);
    for (const auto& e : errors) {
        if (e) std::rethrow_exception(e);
    }
    return rows;
}

// ---------------------------------------------------------------------------
// Toy faces

const LandmarkSet::Points& template_face() {
    static const LandmarkSet::Points pts = [] {
        LandmarkSet::Points p{};
        for (int k = 0; k <= 16; ++k) {
            const double t = M_PI * k / 16.0;
            p[static_cast<std::size_t>(k)] = {-0.8 * std::cos(t), 0.1 + 0.75 * std::sin(t)};
        }
        for (int k = 0; k < 5; ++k) {
            const double x = -0.62 + 0.11 * k;
            const double arch = -0.40 - 0.07 * std::sin(M_PI * (k + 0.5) / 5.0);
            p[static_cast<std::size_t>(17 + k)] = {x, arch};
            p[static_cast<std::size_t>(26 - k)] = {-x, arch};
        }
        for (int k = 0; k < 4; ++k) p[static_cast<std::size_t>(27 + k)] = {0.0, -0.25 + 0.13 * k};
        const double nose_x[5] = {-0.16, -0.08, 0.0, 0.08, 0.16};
        const double nose_y[5] = {0.24, 0.27, 0.29, 0.27, 0.24};
        for (int k = 0; k < 5; ++k) p[static_cast<std::size_t>(31 + k)] = {nose_x[k], nose_y[k]};
        const Point2 eye[6] = {{-0.52, -0.15}, {-0.42, -0.21}, {-0.30, -0.21}, {-0.20, -0.15}, {-0.30, -0.10}, {-0.42, -0.10}};
        for (int k = 0; k < 6; ++k) {
            p[static_cast<std::size_t>(36 + k)] = eye[k];
            p[static_cast<std::size_t>(mirror_index(36 + k))] = {-eye[k].x, eye[k].y};
        }
        const Point2 outer[12] = {{-0.30, 0.50}, {-0.20, 0.44}, {-0.08, 0.41}, {0.0, 0.43}, {0.08, 0.41}, {0.20, 0.44},
                                  {0.30, 0.50},  {0.20, 0.58},  {0.08, 0.62},  {0.0, 0.63}, {-0.08, 0.62}, {-0.20, 0.58}};
        for (int k = 0; k < 12; ++k) p[static_cast<std::size_t>(48 + k)] = outer[k];
        const Point2 inner[8] = {{-0.25, 0.50}, {-0.10, 0.48}, {0.0, 0.485}, {0.10, 0.48},
                                 {0.25, 0.50},  {0.10, 0.535}, {0.0, 0.54},  {-0.10, 0.535}};
        for (int k = 0; k < 8; ++k) p[static_cast<std::size_t>(60 + k)] = inner[k];
        return p;
    }();
    return pts;
}

namespace {

double uni(std::mt19937_64& rng, double lo, double hi) { return std::uniform_real_distribution<double>(lo, hi)(rng); }

cv::Scalar random_color(std::mt19937_64& rng, double lo, double hi) {
    return cv::Scalar(uni(rng, lo, hi), uni(rng, lo, hi), uni(rng, lo, hi));
}

std::vector<cv::Point> to_cv(const std::vector<Point2>& pts, int shift) {
    std::vector<cv::Point> out;
    const double mul = 1 << shift;
    for (const auto& p : pts) out.emplace_back(static_cast<int>(std::lround(p.x * mul)), static_cast<int>(std::lround(p.y * mul)));
    return out;
}

}  // namespace

ToyFace render_toy_face(std::uint64_t seed, int size) {
    std::mt19937_64 rng(splitmix64(seed));
    auto pts = template_face();

    // Per-group proportions, then per-point wobble.
    for (BaseGroup g : kBaseGroups) {
        const auto idx = base_group_indices(g);
        Point2 c;
        for (int i : idx) c = c + pts[static_cast<std::size_t>(i)];
        c = c * (1.0 / static_cast<double>(idx.size()));
        const double sx = uni(rng, 0.9, 1.1), sy = uni(rng, 0.9, 1.1);
        const Point2 shift{uni(rng, -0.03, 0.03), uni(rng, -0.03, 0.03)};
        for (int i : idx) {
            auto& p = pts[static_cast<std::size_t>(i)];
            p = c + Point2{(p.x - c.x) * sx, (p.y - c.y) * sy} + shift;
        }
    }
    for (auto& p : pts) p = p + Point2{uni(rng, -0.008, 0.008), uni(rng, -0.008, 0.008)};

    const double scale = size * uni(rng, 0.27, 0.34);
    const double angle = uni(rng, -12.0, 12.0) * M_PI / 180.0;
    const Point2 centre{size * (0.5 + uni(rng, -0.05, 0.05)), size * (0.5 + uni(rng, -0.05, 0.05))};
    const double ca = std::cos(angle), sa = std::sin(angle);
    auto place = [&](Point2 t) {
        t = t - Point2{0.0, 0.15};
        return centre + Point2{ca * t.x - sa * t.y, sa * t.x + ca * t.y} * scale;
    };
    std::vector<Point2> img_pts;
    for (const auto& p : pts) img_pts.push_back(place(p));

    cv::Mat canvas(size, size, CV_8UC3);
    {
        // Two-tone background gradient with painterly noise.
        const cv::Scalar a = random_color(rng, 20, 200), b = random_color(rng, 20, 200);
        for (int i = 0; i < size; ++i) {
            const double t = static_cast<double>(i) / size;
            canvas.row(i).setTo(a * (1 - t) + b * t);
        }
        cv::Mat noise(size / 16 + 1, size / 16 + 1, CV_8UC3);
        cv::RNG cv_rng(rng());
        cv_rng.fill(noise, cv::RNG::UNIFORM, cv::Scalar::all(0), cv::Scalar::all(40));
        cv::resize(noise, noise, canvas.size(), 0, 0, cv::INTER_CUBIC);
        cv::add(canvas, noise, canvas);
    }
    const int shift = 4;
    const double px = size / 1024.0;
    auto thick = [&](double t) { return std::max(1, static_cast<int>(std::lround(t * px))); };

    // Head: jaw plus an arc over the forehead.
    std::vector<Point2> head(img_pts.begin(), img_pts.begin() + 17);
    for (int k = 1; k < 16; ++k) {
        const double t = M_PI * k / 16.0;
        head.push_back(place({0.8 * std::cos(t), 0.1 - 0.95 * std::sin(t)}));
    }
    const cv::Scalar skin = random_color(rng, 90, 235);
    const cv::Scalar ink = random_color(rng, 0, 70);
    cv::fillPoly(canvas, std::vector<std::vector<cv::Point>>{to_cv(head, shift)}, skin, cv::LINE_AA, shift);
    auto poly = [&](int a, int b, bool closed, double t) {
        std::vector<Point2> seg(img_pts.begin() + a, img_pts.begin() + b + 1);
        cv::polylines(canvas, std::vector<std::vector<cv::Point>>{to_cv(seg, shift)}, closed, ink, thick(t), cv::LINE_AA,
                      shift);
    };
    poly(0, 16, false, 5);
    poly(17, 21, false, 9);
    poly(22, 26, false, 9);
    poly(27, 30, false, 4);
    poly(31, 35, false, 5);
    for (int e : {36, 42}) {
        std::vector<Point2> eye(img_pts.begin() + e, img_pts.begin() + e + 6);
        cv::fillPoly(canvas, std::vector<std::vector<cv::Point>>{to_cv(eye, shift)}, cv::Scalar(235, 235, 235),
                     cv::LINE_AA, shift);
        Point2 c;
        for (const auto& p : eye) c = c + p;
        c = c * (1.0 / 6.0);
        const double r = 0.35 * distance(eye[0], eye[3]);
        cv::circle(canvas, to_cv({c}, shift)[0], static_cast<int>(std::lround(r * (1 << shift))), ink, -1, cv::LINE_AA,
                   shift);
        poly(e, e + 5, true, 3);
    }
    const cv::Scalar lip = random_color(rng, 60, 200);
    {
        std::vector<Point2> outer(img_pts.begin() + 48, img_pts.begin() + 60);
        std::vector<Point2> inner(img_pts.begin() + 60, img_pts.begin() + 68);
        cv::fillPoly(canvas, std::vector<std::vector<cv::Point>>{to_cv(outer, shift)}, lip, cv::LINE_AA, shift);
        cv::fillPoly(canvas, std::vector<std::vector<cv::Point>>{to_cv(inner, shift)}, ink, cv::LINE_AA, shift);
        poly(48, 59, true, 3);
    }
    // Small marks at the landmarks so every point is locally identifiable.
    for (const auto& p : img_pts) {
        cv::circle(canvas, to_cv({p}, shift)[0], static_cast<int>(std::lround(3 * px * (1 << shift))), ink, -1,
                   cv::LINE_AA, shift);
    }

    ToyFace face;
    canvas.convertTo(face.image, CV_32FC3, 1.0 / 255.0);
    face.landmarks = LandmarkSet::from_vector(img_pts, size, size);
    return face;
}

fs::path write_toy_corpus(const fs::path& dir, int train_count, std::uint64_t seed, int size, int val_count,
                          int test_count) {
    fs::create_directories(dir / "images");
    fs::create_directories(dir / "landmarks");
    Manifest m;
    m.root = dir;
    const int total = train_count + val_count + test_count;
    m.rows.resize(static_cast<std::size_t>(total));
#pragma omp parallel for schedule(dynamic)
    for (int i = 0; i < total; ++i) {
        const ToyFace face = render_toy_face(derive_seed(seed, static_cast<std::uint64_t>(i)), size);
        char name[32];
        std::snprintf(name, sizeof name, "toy_%04d", i);
        const fs::path img = fs::path("images") / (std::string(name) + ".png");
        const fs::path lm = fs::path("landmarks") / (std::string(name) + ".json");
        save_image(face.image, dir / img);
        write_landmark_file({face.landmarks, img.generic_string(), LandmarkSource::manual}, dir / lm);
        const Split split = i < train_count ? Split::train : (i < train_count + val_count ? Split::val : Split::test);
        m.rows[static_cast<std::size_t>(i)] = {img, lm, split, Provenance::augmented, "toy"};
    }
    write_manifest(m, dir / "manifest.csv");
    return dir / "manifest.csv";
}

}  // namespace artface
