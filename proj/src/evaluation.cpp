#include "artface/evaluation.hpp"

#include <cmath>
#include <cstdio>
#include <numeric>
#include <set>
#include <sstream>

#include "artface/errors.hpp"

namespace artface {

std::string_view to_string(Part part) {
    switch (part) {
        case Part::jaw: return "jaw";
        case Part::brows: return "brows";
        case Part::nose: return "nose";
        case Part::eyes: return "eyes";
        case Part::mouth: return "mouth";
    }
    return "?";
}

std::vector<int> part_indices(Part part) {
    auto range = [](int lo, int hi) {
        std::vector<int> v(static_cast<std::size_t>(hi - lo));
        std::iota(v.begin(), v.end(), lo);
        return v;
    };
    switch (part) {
        case Part::jaw: return range(0, 17);
        case Part::brows: return range(17, 27);
        case Part::nose: return range(27, 36);
        case Part::eyes: return range(36, 48);
        case Part::mouth: return range(48, 68);
    }
    return {};
}

double mean_error(const LandmarkSet& pred, const LandmarkSet& gt, std::span<const int> indices) {
    if (pred.image_width() != gt.image_width() || pred.image_height() != gt.image_height()) {
        throw ValidationError("mean_error: prediction frame " + std::to_string(pred.image_width()) + "x" +
                              std::to_string(pred.image_height()) + " differs from ground truth " +
                              std::to_string(gt.image_width()) + "x" + std::to_string(gt.image_height()));
    }
    if (indices.empty()) throw ValidationError("mean_error: empty index subset");
    double sum = 0.0;
    for (int i : indices) sum += distance(pred[i], gt[i]);
    return sum / static_cast<double>(indices.size());
}

double mean_error(const LandmarkSet& pred, const LandmarkSet& gt) {
    std::array<int, kNumLandmarks> all{};
    std::iota(all.begin(), all.end(), 0);
    return mean_error(pred, gt, all);
}

Stat summarize(std::span<const double> values) {
    Stat s;
    s.count = static_cast<int>(values.size());
    if (values.empty()) return s;
    s.mean = std::accumulate(values.begin(), values.end(), 0.0) / s.count;
    double var = 0.0;
    for (double v : values) var += (v - s.mean) * (v - s.mean);
    s.stddev = std::sqrt(var / s.count);
    return s;
}

std::string format_stat(const Stat& s) {
    if (s.count == 0) return "n/a";
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.2f ± %.2f", s.mean, s.stddev);
    return buf;
}

EvalReport build_report(std::vector<ImageEval> images) {
    EvalReport report;
    report.images = std::move(images);
    std::vector<std::string> names;
    for (const auto& im : report.images) {
        const std::string c(provenance_class(im.provenance));
        if (std::find(names.begin(), names.end(), c) == names.end()) names.push_back(c);
    }
    names.push_back("all");
    for (const auto& name : names) {
        EvalGroup g;
        g.name = name;
        std::vector<double> a, b, c, d;
        std::array<std::vector<double>, 5> parts;
        for (const auto& im : report.images) {
            if (name != "all" && provenance_class(im.provenance) != name) continue;
            if (im.failed) {
                ++g.failures;
                continue;
            }
            a.push_back(im.me68);
            b.push_back(im.me51);
            c.push_back(im.global_me68);
            d.push_back(im.global_me51);
            for (std::size_t p = 0; p < 5; ++p) parts[p].push_back(im.parts[p]);
        }
        g.me68 = summarize(a);
        g.me51 = summarize(b);
        g.global_me68 = summarize(c);
        g.global_me51 = summarize(d);
        for (std::size_t p = 0; p < 5; ++p) g.parts[p] = summarize(parts[p]);
        report.groups.push_back(std::move(g));
    }
    return report;
}

std::string EvalReport::to_csv() const {
    std::ostringstream out;
    out << "image,provenance,failed,me68,me51,global_me68,global_me51";
    for (Part p : kParts) out << ",me_" << to_string(p);
    out << "\n";
    out.precision(6);
    out << std::fixed;
    for (const auto& im : images) {
        out << im.image << "," << to_string(im.provenance) << "," << (im.failed ? 1 : 0);
        if (im.failed) {
            out << ",,,,";
            for (std::size_t p = 0; p < 5; ++p) out << ",";
        } else {
            out << "," << im.me68 << "," << im.me51 << "," << im.global_me68 << "," << im.global_me51;
            for (double v : im.parts) out << "," << v;
        }
        out << "\n";
    }
    return out.str();
}

std::string EvalReport::to_table() const {
    std::ostringstream out;
    char buf[256];
    std::snprintf(buf, sizeof buf, "%-10s %6s %18s %18s %18s %18s %8s\n", "set", "n", "refined 68", "refined 51",
                  "global 68", "global 51", "failed");
    out << buf;
    for (const auto& g : groups) {
        std::snprintf(buf, sizeof buf, "%-10s %6d %18s %18s %18s %18s %8d\n", g.name.c_str(), g.me68.count,
                      format_stat(g.me68).c_str(), format_stat(g.me51).c_str(), format_stat(g.global_me68).c_str(),
                      format_stat(g.global_me51).c_str(), g.failures);
        out << buf;
    }
    return out.str();
}

std::string EvalReport::parts_csv() const {
    std::ostringstream out;
    out << "set,part,n_points,mean,std\n";
    char buf[128];
    for (const auto& g : groups) {
        for (std::size_t p = 0; p < 5; ++p) {
            std::snprintf(buf, sizeof buf, "%s,%s,%zu,%.2f,%.2f\n", g.name.c_str(),
                          std::string(to_string(kParts[p])).c_str(), part_indices(kParts[p]).size(), g.parts[p].mean,
                          g.parts[p].stddev);
            out << buf;
        }
    }
    return out.str();
}

EvalReport evaluate(const Manifest& manifest, Split split, LandmarkNetworks& networks, const PipelineOptions& options) {
    const auto rows = manifest.split_rows(split);
    if (rows.empty()) throw ValidationError("split '" + std::string(to_string(split)) + "' is empty");
    const auto inner = group_indices("inner51");
    std::vector<ImageEval> results;
    for (const auto& row : rows) {
        ImageEval ev;
        ev.image = row.image.generic_string();
        ev.provenance = row.provenance;
        try {
            const Sample s = load_sample(manifest, row);
            const FullPrediction pred = forward_full(s.image, networks, options);
            const auto& gt = s.landmarks;
            // Errors in the original image frame.
            auto back = [&](const LandmarkSet& l) {
                std::vector<Point2> pts;
                for (const auto& p : l.points()) pts.push_back(s.fit.from_square(p));
                return LandmarkSet::from_vector(pts, s.fit.source_width, s.fit.source_height);
            };
            const LandmarkSet g = back(gt), r = back(pred.refined), c = back(pred.global);
            ev.me68 = mean_error(r, g);
            ev.me51 = mean_error(r, g, inner);
            ev.global_me68 = mean_error(c, g);
            ev.global_me51 = mean_error(c, g, inner);
            for (std::size_t p = 0; p < 5; ++p) ev.parts[p] = mean_error(r, g, part_indices(kParts[p]));
        } catch (const Error& e) {
            ev.failed = true;
            ev.failure = e.what();
        }
        results.push_back(std::move(ev));
    }
    return build_report(std::move(results));
}

}  // namespace artface
