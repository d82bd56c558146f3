#pragma once

#include <filesystem>
#include <string>
#include <string_view>

#include <json.hpp>
#include <torch/torch.h>

#include "artface/heatmap.hpp"
#include "artface/image.hpp"
#include "artface/pipeline.hpp"
#include "artface/region.hpp"

namespace artface {

/// The global network and the three region-network types. Both eye regions
/// go through the one eye network (right-eye crops mirrored).
enum class NetworkKind { global, eye, nose, mouth };

std::string_view to_string(NetworkKind kind);
/// Accepts global, eye, nose, mouth and the region names left_eye_region,
/// right_eye_region. Throws ValidationError otherwise.
NetworkKind network_kind_from_string(std::string_view name);
NetworkKind network_kind(RegionName region);

/// Landmark index of each output channel (300-W order; eye uses left-eye roles).
std::vector<int> output_landmarks(NetworkKind kind);

struct NetworkSpec {
    int input_channels = 3;
    int output_channels = kNumLandmarks;
    int size = kGlobalSize;
    int width = 64;
    int res_blocks = 6;
};

NetworkSpec network_spec(NetworkKind kind, int width = 64, int res_blocks = 6);

class ResidualBlockImpl : public torch::nn::Cloneable<ResidualBlockImpl> {
public:
    explicit ResidualBlockImpl(int channels);
    void reset() override;
    torch::Tensor forward(const torch::Tensor& x);

private:
    int channels_;
    torch::nn::Conv2d conv1_{nullptr}, conv2_{nullptr};
    torch::nn::InstanceNorm2d norm1_{nullptr}, norm2_{nullptr};
};
TORCH_MODULE(ResidualBlock);

/// Encoder (7x7 stem, two stride-2 stages), residual bottleneck, decoder of
/// two (bicubic x2, 3x3 conv) stages and a 1x1 projection to logits.
class LandmarkNetImpl : public torch::nn::Cloneable<LandmarkNetImpl> {
public:
    explicit LandmarkNetImpl(const NetworkSpec& spec);
    void reset() override;
    /// (B, in, S, S) -> (B, out, S, S) logits.
    torch::Tensor forward(torch::Tensor x);
    const NetworkSpec& spec() const { return spec_; }

private:
    NetworkSpec spec_;
    torch::nn::Conv2d stem_{nullptr}, down1_{nullptr}, down2_{nullptr}, up1_{nullptr}, up2_{nullptr}, head_{nullptr};
    torch::nn::InstanceNorm2d stem_norm_{nullptr}, down1_norm_{nullptr}, down2_norm_{nullptr}, up1_norm_{nullptr},
        up2_norm_{nullptr};
    torch::nn::Sequential bottleneck_{nullptr};
};
TORCH_MODULE(LandmarkNet);

LandmarkNet build_global(int width = 64, int res_blocks = 6);
/// `name`: eye, nose, mouth or a region name. Throws ValidationError on anything else.
LandmarkNet build_region(std::string_view name, int width = 64, int res_blocks = 6);

/// Region network initialized from trained global weights: identical layers
/// copied, the stem's extra (feature-map) input channels set to the mean RGB
/// filter divided by N_r, and the head restricted to the region's landmarks.
LandmarkNet init_region_from_global(const LandmarkNet& global, NetworkKind kind);

/// Spatial softargmax over (B, C, H, W) logits -> (B, C, 2) pixel coordinates,
/// differentiable (backward runs the analytic kernel).
torch::Tensor softargmax(const torch::Tensor& logits, double temperature = kDefaultTemperature);

torch::Tensor to_tensor(const PlanarImage& image);
/// First batch item of (B, C, H, W) logits.
HeatmapStack to_heatmaps(const torch::Tensor& logits);

inline constexpr int kBundleFormatVersion = 1;

struct ModelBundle {
    LandmarkNet global{nullptr};
    LandmarkNet eye{nullptr};
    LandmarkNet nose{nullptr};
    LandmarkNet mouth{nullptr};
    std::string version = "artface-1";
    std::string config_fingerprint;

    /// Fresh randomly initialized networks.
    static ModelBundle create(int width = 64, int res_blocks = 6);
    /// Region networks derived from `global` with init_region_from_global.
    static ModelBundle from_global(const LandmarkNet& global);

    LandmarkNet& network(NetworkKind kind);
    const LandmarkNet& network(NetworkKind kind) const;
    /// Deep copy.
    ModelBundle clone() const;
    void set_training(bool on);

    /// Directory with bundle.json and one weight file per distinct network.
    void save(const std::filesystem::path& dir) const;
    static ModelBundle load(const std::filesystem::path& dir);
};

void save_network(const LandmarkNet& net, const std::filesystem::path& path);
LandmarkNet load_network(const std::filesystem::path& path, const NetworkSpec& spec);
/// Loads the global network from a bundle directory, a phase-1 run directory
/// (global.pt + global.json) or a weight file with a sibling .json spec.
LandmarkNet load_global_network(const std::filesystem::path& path);

nlohmann::json spec_to_json(const NetworkSpec& spec);
NetworkSpec spec_from_json(const nlohmann::json& j);

/// Trained networks behind the coarse-to-fine pipeline.
class TorchNetworks : public LandmarkNetworks {
public:
    explicit TorchNetworks(ModelBundle bundle);
    HeatmapStack global_logits(const PlanarImage& image) override;
    HeatmapStack region_logits(const RegionQuery& query) override;
    const ModelBundle& bundle() const { return bundle_; }

private:
    ModelBundle bundle_;
};

}  // namespace artface
