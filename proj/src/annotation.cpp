#include "artface/annotation.hpp"

#include <chrono>
#include <ctime>
#include <set>

#include <httplib.h>
#include <opencv2/imgcodecs.hpp>

#include "artface/dataset.hpp"
#include "artface/errors.hpp"
#include "artface/image.hpp"

namespace fs = std::filesystem;

namespace artface {

std::string_view to_string(AnnotationStatus status) {
    switch (status) {
        case AnnotationStatus::unlabeled: return "unlabeled";
        case AnnotationStatus::predicted: return "predicted";
        case AnnotationStatus::corrected: return "corrected";
    }
    return "?";
}

AnnotationStatus annotation_status_from_string(std::string_view s) {
    for (auto st : {AnnotationStatus::unlabeled, AnnotationStatus::predicted, AnnotationStatus::corrected}) {
        if (to_string(st) == s) return st;
    }
    throw ParseError("unknown annotation status '" + std::string(s) + "'");
}

nlohmann::json to_json(const AnnotationRecord& r) {
    nlohmann::json j;
    j["id"] = r.id;
    j["image"] = r.image;
    j["width"] = r.width;
    j["height"] = r.height;
    j["status"] = std::string(to_string(r.status));
    j["revision"] = r.revision;
    j["modified"] = r.modified;
    if (r.landmarks) {
        auto pts = nlohmann::json::array();
        for (const auto& p : r.landmarks->points()) pts.push_back({p.x, p.y});
        j["points"] = std::move(pts);
        j["source"] = r.status == AnnotationStatus::corrected ? "manual" : "model";
    } else {
        j["points"] = nullptr;
    }
    if (!r.last_error.empty()) j["last_error"] = r.last_error;
    return j;
}

AnnotationRecord annotation_record_from_json(const nlohmann::json& j) {
    try {
        AnnotationRecord r;
        r.id = j.at("id").get<std::string>();
        r.image = j.value("image", std::string{});
        r.width = j.at("width").get<int>();
        r.height = j.at("height").get<int>();
        r.status = annotation_status_from_string(j.at("status").get<std::string>());
        r.revision = j.at("revision").get<std::uint64_t>();
        r.modified = j.value("modified", std::string{});
        r.last_error = j.value("last_error", std::string{});
        if (j.contains("points") && !j["points"].is_null()) {
            r.landmarks = parse_landmark_json(j.dump()).landmarks;
        }
        return r;
    } catch (const nlohmann::json::exception& e) {
        throw ParseError(std::string("annotation record: ") + e.what());
    }
}

namespace {

std::string utc_now() {
    const auto now = std::chrono::system_clock::now();
    const std::time_t t = std::chrono::system_clock::to_time_t(now);
    const auto ms = std::chrono::duration_cast<std::chrono::milliseconds>(now.time_since_epoch()).count() % 1000;
    std::tm tm{};
    gmtime_r(&t, &tm);
    char buf[40];
    std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%S", &tm);
    char out[48];
    std::snprintf(out, sizeof out, "%s.%03dZ", buf, static_cast<int>(ms));
    return out;
}

bool is_image_file(const fs::path& p) {
    static const std::set<std::string> exts = {".png", ".jpg", ".jpeg", ".bmp", ".tif", ".tiff", ".webp"};
    auto e = p.extension().string();
    for (auto& c : e) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
    return exts.count(e) > 0;
}

}  // namespace

AnnotationStore::AnnotationStore(fs::path corpus_root, AnnotationStoreOptions options)
    : root_(std::move(corpus_root)), options_(std::move(options)) {
    if (!fs::is_directory(root_)) throw NotFoundError("corpus directory " + root_.string() + " does not exist");
    std::vector<fs::path> images;
    if (fs::exists(root_ / "manifest.csv")) {
        for (const auto& row : read_manifest(root_ / "manifest.csv").rows) images.push_back(row.image);
    } else if (fs::is_directory(root_ / "images")) {
        for (const auto& e : fs::directory_iterator(root_ / "images")) {
            if (e.is_regular_file() && is_image_file(e.path())) images.push_back(fs::relative(e.path(), root_));
        }
        std::sort(images.begin(), images.end());
    }
    for (const auto& img : images) {
        const std::string id = img.stem().string();
        auto e = std::make_unique<Entry>();
        e->image = img;
        if (!entries_.emplace(id, std::move(e)).second) {
            throw ValidationError("duplicate image id '" + id + "' in corpus " + root_.string());
        }
    }
    fs::create_directories(root_ / "annotations");
}

std::vector<std::string> AnnotationStore::ids() const {
    std::vector<std::string> out;
    for (const auto& [id, _] : entries_) out.push_back(id);
    return out;
}

AnnotationStore::Entry& AnnotationStore::entry(const std::string& id) const {
    const auto it = entries_.find(id);
    if (it == entries_.end()) throw NotFoundError("unknown image id '" + id + "'");
    return *it->second;
}

fs::path AnnotationStore::record_path(const std::string& id) const { return root_ / "annotations" / (id + ".json"); }

fs::path AnnotationStore::image_path(const std::string& id) const { return root_ / entry(id).image; }

std::string AnnotationStore::image_bytes(const std::string& id) const { return read_text_file(image_path(id)); }

AnnotationRecord AnnotationStore::load_record(const std::string& id, Entry& e) const {
    const fs::path path = record_path(id);
    if (fs::exists(path)) {
        auto r = annotation_record_from_json(nlohmann::json::parse(read_text_file(path)));
        e.width = r.width;
        e.height = r.height;
        return r;
    }
    if (e.width == 0) {
        const cv::Mat img = cv::imread((root_ / e.image).string(), cv::IMREAD_UNCHANGED);
        if (img.empty()) throw IoError("cannot read image " + (root_ / e.image).string());
        e.width = img.cols;
        e.height = img.rows;
    }
    AnnotationRecord r;
    r.id = id;
    r.image = e.image.generic_string();
    r.width = e.width;
    r.height = e.height;
    return r;
}

void AnnotationStore::store_record(const AnnotationRecord& record) const {
    write_file_atomic(record_path(record.id), to_json(record).dump(2) + "\n", options_.before_commit);
}

AnnotationRecord AnnotationStore::get_landmarks(const std::string& id) const {
    Entry& e = entry(id);
    std::lock_guard lock(e.mutex);
    return load_record(id, e);
}

std::vector<AnnotationRecord> AnnotationStore::list_images() const {
    std::vector<AnnotationRecord> out;
    for (const auto& [id, _] : entries_) out.push_back(get_landmarks(id));
    return out;
}

AnnotationRecord AnnotationStore::predict_landmarks(const std::string& id, const Predictor& predictor) {
    Entry& e = entry(id);
    {
        std::lock_guard lock(e.mutex);
        if (load_record(id, e).status == AnnotationStatus::corrected) {
            throw ConflictError("image '" + id + "' has corrected landmarks; prediction would overwrite them");
        }
    }
    // Inference outside the record lock; the model is an exclusive resource.
    std::optional<LandmarkSet> result;
    std::string failure;
    try {
        const cv::Mat img = load_image(root_ / e.image);
        std::lock_guard model_lock(predictor_mutex_);
        result = predictor(img);
        if (result->image_width() != img.cols || result->image_height() != img.rows) {
            throw ValidationError("predictor returned landmarks for a different frame");
        }
    } catch (const std::exception& ex) {
        failure = ex.what();
    }

    std::lock_guard lock(e.mutex);
    AnnotationRecord r = load_record(id, e);
    if (r.status == AnnotationStatus::corrected) {
        throw ConflictError("image '" + id + "' was corrected while the prediction ran");
    }
    if (!failure.empty()) {
        r.last_error = failure;
        store_record(r);
        throw Error("prediction failed for '" + id + "': " + failure);
    }
    r.landmarks = *result;
    r.status = AnnotationStatus::predicted;
    r.revision += 1;
    r.modified = utc_now();
    r.last_error.clear();
    store_record(r);
    return r;
}

AnnotationRecord AnnotationStore::put_landmarks(const std::string& id, std::span<const Point2> points,
                                                std::uint64_t expected_revision) {
    Entry& e = entry(id);
    std::lock_guard lock(e.mutex);
    AnnotationRecord r = load_record(id, e);
    const LandmarkSet lm = LandmarkSet::from_vector(points, r.width, r.height);
    if (expected_revision != r.revision) {
        throw ConflictError("revision mismatch for '" + id + "': expected " + std::to_string(expected_revision) +
                            ", current " + std::to_string(r.revision));
    }
    r.landmarks = lm;
    r.status = AnnotationStatus::corrected;
    r.revision += 1;
    r.modified = utc_now();
    r.last_error.clear();
    store_record(r);
    return r;
}

// ---------------------------------------------------------------------------
// HTTP

namespace {

void send_error(httplib::Response& res, int status, std::string_view error, std::string_view detail) {
    res.status = status;
    res.set_content(nlohmann::json{{"error", error}, {"detail", detail}}.dump(), "application/json");
}

void send_json(httplib::Response& res, const nlohmann::json& j) {
    res.status = 200;
    res.set_content(j.dump(), "application/json");
}

template <typename Fn>
httplib::Server::Handler guarded(Fn fn) {
    return [fn](const httplib::Request& req, httplib::Response& res) {
        try {
            fn(req, res);
        } catch (const NotFoundError& e) {
            send_error(res, 404, "not_found", e.what());
        } catch (const ConflictError& e) {
            send_error(res, 409, "conflict", e.what());
        } catch (const ValidationError& e) {
            send_error(res, 422, "validation", e.what());
        } catch (const ParseError& e) {
            send_error(res, 400, "bad_request", e.what());
        } catch (const nlohmann::json::exception& e) {
            send_error(res, 400, "bad_request", e.what());
        } catch (const std::exception& e) {
            send_error(res, 500, "internal", e.what());
        }
    };
}

std::string mime_for(const fs::path& p) {
    const auto e = p.extension().string();
    if (e == ".png") return "image/png";
    if (e == ".jpg" || e == ".jpeg") return "image/jpeg";
    if (e == ".bmp") return "image/bmp";
    if (e == ".tif" || e == ".tiff") return "image/tiff";
    if (e == ".webp") return "image/webp";
    return "application/octet-stream";
}

}  // namespace

void install_annotation_routes(httplib::Server& server, AnnotationStore& store, Predictor predictor) {
    server.Get("/images", guarded([&store](const httplib::Request&, httplib::Response& res) {
        auto arr = nlohmann::json::array();
        for (const auto& r : store.list_images()) {
            arr.push_back({{"id", r.id},
                           {"image", r.image},
                           {"status", std::string(to_string(r.status))},
                           {"revision", r.revision},
                           {"modified", r.modified}});
        }
        send_json(res, {{"images", arr}});
    }));
    server.Get(R"(/images/([^/]+))", guarded([&store](const httplib::Request& req, httplib::Response& res) {
        const std::string id = req.matches[1];
        const auto path = store.image_path(id);
        res.set_content(store.image_bytes(id), mime_for(path));
    }));
    server.Get(R"(/images/([^/]+)/landmarks)", guarded([&store](const httplib::Request& req, httplib::Response& res) {
        send_json(res, to_json(store.get_landmarks(req.matches[1])));
    }));
    server.Post(R"(/images/([^/]+)/predict)",
                guarded([&store, predictor](const httplib::Request& req, httplib::Response& res) {
                    const std::string id = req.matches[1];
                    store.get_landmarks(id);  // 404 before 503
                    if (!predictor) {
                        send_error(res, 503, "unavailable", "no model loaded; start the server with --model");
                        return;
                    }
                    try {
                        send_json(res, to_json(store.predict_landmarks(id, predictor)));
                    } catch (const ConflictError&) {
                        throw;
                    } catch (const NotFoundError&) {
                        throw;
                    } catch (const Error& e) {
                        send_error(res, 500, "inference_failed", e.what());
                    }
                }));
    server.Put(R"(/images/([^/]+)/landmarks)", guarded([&store](const httplib::Request& req, httplib::Response& res) {
        const std::string id = req.matches[1];
        const auto body = nlohmann::json::parse(req.body);
        if (!body.is_object() || !body.contains("points") || !body["points"].is_array()) {
            throw ParseError("body must be {\"points\": [[x, y] x 68], \"revision\": n}");
        }
        if (!body.contains("revision") || !body["revision"].is_number_unsigned()) {
            throw ParseError("body needs a non-negative integer 'revision'");
        }
        std::vector<Point2> pts;
        for (std::size_t i = 0; i < body["points"].size(); ++i) {
            const auto& e = body["points"][i];
            if (!e.is_array() || e.size() != 2 || !e[0].is_number() || !e[1].is_number()) {
                throw ValidationError("point " + std::to_string(i) + " is not a finite [x, y] pair");
            }
            pts.push_back({e[0].get<double>(), e[1].get<double>()});
        }
        if (pts.size() != static_cast<std::size_t>(kNumLandmarks)) {
            throw ValidationError("expected 68 landmarks, found " + std::to_string(pts.size()));
        }
        send_json(res, to_json(store.put_landmarks(id, pts, body["revision"].get<std::uint64_t>())));
    }));
}

}  // namespace artface
