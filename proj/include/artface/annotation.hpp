#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>
#include <opencv2/core.hpp>

#include "artface/landmarks.hpp"

namespace httplib {
class Server;
}

namespace artface {

/// unlabeled -> predicted -> corrected; corrected is absorbing.
enum class AnnotationStatus { unlabeled, predicted, corrected };
std::string_view to_string(AnnotationStatus status);
AnnotationStatus annotation_status_from_string(std::string_view s);

struct AnnotationRecord {
    std::string id;
    std::string image;  ///< path relative to the corpus root
    int width = 0;
    int height = 0;
    AnnotationStatus status = AnnotationStatus::unlabeled;
    std::uint64_t revision = 0;
    std::string modified;  ///< ISO 8601 UTC, empty until the first write
    std::optional<LandmarkSet> landmarks;
    std::string last_error;  ///< most recent failed prediction, if any
};

nlohmann::json to_json(const AnnotationRecord& record);
AnnotationRecord annotation_record_from_json(const nlohmann::json& j);

/// Produces 68 landmarks in the frame of the given image (CV_32FC3).
using Predictor = std::function<LandmarkSet(const cv::Mat& image)>;

struct AnnotationStoreOptions {
    /// Called between writing a record's temp file and renaming it; throwing
    /// here simulates a crash mid-write.
    std::function<void(const std::filesystem::path&)> before_commit;
};

/// File-backed annotation records under <corpus>/annotations/<id>.json. Image
/// ids come from <corpus>/manifest.csv when present (image file stems),
/// otherwise from the image files in <corpus>/images. Record files use the
/// landmark sidecar layout plus status fields, so corrected records can be
/// listed in a training manifest directly.
class AnnotationStore {
public:
    explicit AnnotationStore(std::filesystem::path corpus_root, AnnotationStoreOptions options = {});

    std::vector<std::string> ids() const;
    std::vector<AnnotationRecord> list_images() const;
    std::filesystem::path image_path(const std::string& id) const;
    std::string image_bytes(const std::string& id) const;
    /// Throws NotFoundError for unknown ids.
    AnnotationRecord get_landmarks(const std::string& id) const;

    /// Runs `predictor` and stores its result as `predicted`. Throws
    /// ConflictError on corrected records. A predictor failure is recorded in
    /// last_error, the status and landmarks stay as they were, and the error
    /// is rethrown.
    AnnotationRecord predict_landmarks(const std::string& id, const Predictor& predictor);

    /// Optimistic write: requires `expected_revision` to equal the current
    /// revision (ConflictError otherwise) and 68 finite points
    /// (ValidationError). Result is `corrected`.
    AnnotationRecord put_landmarks(const std::string& id, std::span<const Point2> points, std::uint64_t expected_revision);

    std::filesystem::path record_path(const std::string& id) const;

private:
    struct Entry {
        std::filesystem::path image;  // relative
        std::mutex mutex;
        int width = 0;
        int height = 0;
    };
    Entry& entry(const std::string& id) const;
    AnnotationRecord load_record(const std::string& id, Entry& e) const;
    void store_record(const AnnotationRecord& record) const;

    std::filesystem::path root_;
    AnnotationStoreOptions options_;
    std::map<std::string, std::unique_ptr<Entry>> entries_;
    std::mutex predictor_mutex_;
};

/// Registers the HTTP+JSON API on `server`:
///   GET /images, GET /images/{id}, GET /images/{id}/landmarks,
///   POST /images/{id}/predict, PUT /images/{id}/landmarks.
/// Errors are {"error", "detail"} with 400/404/409/422/500/503 status codes.
/// An empty predictor makes /predict answer 503.
void install_annotation_routes(httplib::Server& server, AnnotationStore& store, Predictor predictor);

}  // namespace artface
