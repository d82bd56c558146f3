#include "artface/model.hpp"

#include <numeric>

#include "artface/errors.hpp"
#include "artface/kernels.hpp"

namespace fs = std::filesystem;
namespace F = torch::nn::functional;

namespace artface {

std::string_view to_string(NetworkKind kind) {
    switch (kind) {
        case NetworkKind::global: return "global";
        case NetworkKind::eye: return "eye";
        case NetworkKind::nose: return "nose";
        case NetworkKind::mouth: return "mouth";
    }
    return "?";
}

NetworkKind network_kind_from_string(std::string_view name) {
    for (NetworkKind k : {NetworkKind::global, NetworkKind::eye, NetworkKind::nose, NetworkKind::mouth}) {
        if (to_string(k) == name) return k;
    }
    for (RegionName r : kRegions) {
        if (to_string(r) == name) return network_kind(r);
    }
    throw ValidationError("unknown network or region name '" + std::string(name) + "'");
}

NetworkKind network_kind(RegionName region) {
    switch (region) {
        case RegionName::left_eye_region:
        case RegionName::right_eye_region: return NetworkKind::eye;
        case RegionName::nose: return NetworkKind::nose;
        case RegionName::mouth: return NetworkKind::mouth;
    }
    throw ValidationError("unknown region");
}

std::vector<int> output_landmarks(NetworkKind kind) {
    std::span<const int> idx;
    switch (kind) {
        case NetworkKind::global: {
            std::vector<int> all(kNumLandmarks);
            std::iota(all.begin(), all.end(), 0);
            return all;
        }
        case NetworkKind::eye: idx = region_indices(RegionName::left_eye_region); break;
        case NetworkKind::nose: idx = region_indices(RegionName::nose); break;
        case NetworkKind::mouth: idx = region_indices(RegionName::mouth); break;
    }
    return {idx.begin(), idx.end()};
}

NetworkSpec network_spec(NetworkKind kind, int width, int res_blocks) {
    if (width < 1 || res_blocks < 0) throw ValidationError("network width must be >= 1 and res_blocks >= 0");
    NetworkSpec s;
    s.width = width;
    s.res_blocks = res_blocks;
    s.output_channels = static_cast<int>(output_landmarks(kind).size());
    s.input_channels = kind == NetworkKind::global ? 3 : 3 + s.output_channels;
    s.size = kind == NetworkKind::global ? kGlobalSize : kPatchSize;
    return s;
}

namespace {

torch::nn::Conv2d conv(int in, int out, int k, int stride = 1) {
    return torch::nn::Conv2d(torch::nn::Conv2dOptions(in, out, k).stride(stride).padding(k / 2));
}

torch::nn::InstanceNorm2d inorm(int c) { return torch::nn::InstanceNorm2d(torch::nn::InstanceNorm2dOptions(c)); }

torch::Tensor upsample2(const torch::Tensor& x) {
    return F::interpolate(x, F::InterpolateFuncOptions()
                                 .scale_factor(std::vector<double>{2.0, 2.0})
                                 .mode(torch::kBicubic)
                                 .align_corners(false));
}

}  // namespace

ResidualBlockImpl::ResidualBlockImpl(int channels) : channels_(channels) { reset(); }

void ResidualBlockImpl::reset() {
    conv1_ = register_module("conv1", conv(channels_, channels_, 3));
    norm1_ = register_module("norm1", inorm(channels_));
    conv2_ = register_module("conv2", conv(channels_, channels_, 3));
    norm2_ = register_module("norm2", inorm(channels_));
}

torch::Tensor ResidualBlockImpl::forward(const torch::Tensor& x) {
    auto y = torch::relu(norm1_->forward(conv1_->forward(x)));
    return x + norm2_->forward(conv2_->forward(y));
}

LandmarkNetImpl::LandmarkNetImpl(const NetworkSpec& spec) : spec_(spec) {
    if (spec.size % 4 != 0) throw ValidationError("network input size must be divisible by 4");
    reset();
}

void LandmarkNetImpl::reset() {
    const int w = spec_.width;
    stem_ = register_module("stem", conv(spec_.input_channels, w, 7));
    stem_norm_ = register_module("stem_norm", inorm(w));
    down1_ = register_module("down1", conv(w, 2 * w, 3, 2));
    down1_norm_ = register_module("down1_norm", inorm(2 * w));
    down2_ = register_module("down2", conv(2 * w, 4 * w, 3, 2));
    down2_norm_ = register_module("down2_norm", inorm(4 * w));
    bottleneck_ = torch::nn::Sequential();
    for (int i = 0; i < spec_.res_blocks; ++i) bottleneck_->push_back(ResidualBlock(4 * w));
    bottleneck_ = register_module("bottleneck", bottleneck_);
    up1_ = register_module("up1", conv(4 * w, 2 * w, 3));
    up1_norm_ = register_module("up1_norm", inorm(2 * w));
    up2_ = register_module("up2", conv(2 * w, w, 3));
    up2_norm_ = register_module("up2_norm", inorm(w));
    head_ = register_module("head", conv(w, spec_.output_channels, 1));
}

torch::Tensor LandmarkNetImpl::forward(torch::Tensor x) {
    if (x.dim() != 4 || x.size(1) != spec_.input_channels || x.size(2) != spec_.size || x.size(3) != spec_.size) {
        throw ValidationError("network expects (B, " + std::to_string(spec_.input_channels) + ", " +
                              std::to_string(spec_.size) + ", " + std::to_string(spec_.size) + ") input");
    }
    x = torch::relu(stem_norm_->forward(stem_->forward(x)));
    x = torch::relu(down1_norm_->forward(down1_->forward(x)));
    x = torch::relu(down2_norm_->forward(down2_->forward(x)));
    if (spec_.res_blocks > 0) x = bottleneck_->forward(x);
    x = torch::relu(up1_norm_->forward(up1_->forward(upsample2(x))));
    x = torch::relu(up2_norm_->forward(up2_->forward(upsample2(x))));
    return head_->forward(x);
}

LandmarkNet build_global(int width, int res_blocks) {
    return LandmarkNet(network_spec(NetworkKind::global, width, res_blocks));
}

LandmarkNet build_region(std::string_view name, int width, int res_blocks) {
    const NetworkKind kind = network_kind_from_string(name);
    if (kind == NetworkKind::global) throw ValidationError("'global' is not a region network");
    return LandmarkNet(network_spec(kind, width, res_blocks));
}

LandmarkNet init_region_from_global(const LandmarkNet& global, NetworkKind kind) {
    if (kind == NetworkKind::global) throw ValidationError("init_region_from_global needs a region kind");
    const NetworkSpec& gs = global->spec();
    if (gs.input_channels != 3 || gs.output_channels != kNumLandmarks) {
        throw ValidationError("init_region_from_global: source is not a global network");
    }
    LandmarkNet region(network_spec(kind, gs.width, gs.res_blocks));
    const auto channels = output_landmarks(kind);
    const auto nr = static_cast<int64_t>(channels.size());
    const auto index = torch::tensor(std::vector<int64_t>(channels.begin(), channels.end()), torch::kLong);

    torch::NoGradGuard no_grad;
    const auto src = global->named_parameters(true);
    auto dst = region->named_parameters(true);
    if (src.size() != dst.size()) throw Error("internal: parameter lists of global and region networks differ");
    for (auto& item : dst) {
        const torch::Tensor* s = src.find(item.key());
        if (s == nullptr) throw Error("internal: global network has no parameter " + item.key());
        torch::Tensor& d = item.value();
        if (item.key() == "stem.weight") {
            d.slice(1, 0, 3).copy_(*s);
            d.slice(1, 3).copy_((s->mean(1, true) / static_cast<double>(nr)).expand({s->size(0), nr, s->size(2), s->size(3)}));
        } else if (item.key() == "head.weight" || item.key() == "head.bias") {
            d.copy_(s->index_select(0, index));
        } else if (d.sizes() == s->sizes()) {
            d.copy_(*s);
        } else {
            throw Error("internal: shape mismatch for parameter " + item.key());
        }
    }
    return region;
}

// ---------------------------------------------------------------------------
// Softargmax as an autograd function backed by the analytic kernels.

namespace {

using torch::autograd::AutogradContext;
using torch::autograd::variable_list;

struct SoftargmaxFunction : torch::autograd::Function<SoftargmaxFunction> {
    static torch::Tensor forward(AutogradContext* ctx, const torch::Tensor& logits, double temperature) {
        const auto x = logits.contiguous();
        const int64_t b = x.size(0), c = x.size(1), h = x.size(2), w = x.size(3);
        auto out = torch::empty({b, c, 2}, torch::kDouble);
        const int64_t plane = c * h * w;
        for (int64_t i = 0; i < b; ++i) {
            double* xy = out.data_ptr<double>() + i * c * 2;
            if (x.scalar_type() == torch::kFloat) {
                kernels::softargmax_forward(x.data_ptr<float>() + i * plane, static_cast<int>(c), static_cast<int>(h),
                                            static_cast<int>(w), temperature, xy);
            } else {
                kernels::softargmax_forward(x.data_ptr<double>() + i * plane, static_cast<int>(c),
                                            static_cast<int>(h), static_cast<int>(w), temperature, xy);
            }
        }
        ctx->save_for_backward({x});
        ctx->saved_data["temperature"] = temperature;
        return out.to(x.scalar_type());
    }

    static variable_list backward(AutogradContext* ctx, variable_list grads) {
        const auto x = ctx->get_saved_variables()[0];
        const double temperature = ctx->saved_data["temperature"].toDouble();
        const auto g = grads[0].to(torch::kDouble).contiguous();
        const int64_t b = x.size(0), c = x.size(1), h = x.size(2), w = x.size(3);
        auto gx = torch::empty_like(x);
        const int64_t plane = c * h * w;
        for (int64_t i = 0; i < b; ++i) {
            const double* gxy = g.data_ptr<double>() + i * c * 2;
            if (x.scalar_type() == torch::kFloat) {
                kernels::softargmax_backward(x.data_ptr<float>() + i * plane, static_cast<int>(c),
                                             static_cast<int>(h), static_cast<int>(w), temperature, gxy,
                                             gx.data_ptr<float>() + i * plane);
            } else {
                kernels::softargmax_backward(x.data_ptr<double>() + i * plane, static_cast<int>(c),
                                             static_cast<int>(h), static_cast<int>(w), temperature, gxy,
                                             gx.data_ptr<double>() + i * plane);
            }
        }
        return {gx, torch::Tensor()};
    }
};

}  // namespace

torch::Tensor softargmax(const torch::Tensor& logits, double temperature) {
    if (logits.dim() != 4) throw ValidationError("softargmax expects (B, C, H, W) logits");
    if (logits.scalar_type() != torch::kFloat && logits.scalar_type() != torch::kDouble) {
        throw ValidationError("softargmax expects float or double logits");
    }
    if (!(temperature > 0.0)) throw ValidationError("softargmax temperature must be positive");
    return SoftargmaxFunction::apply(logits, temperature);
}

torch::Tensor to_tensor(const PlanarImage& image) {
    return torch::from_blob(const_cast<float*>(image.data.data()), {1, image.channels, image.height, image.width},
                            torch::kFloat)
        .clone();
}

HeatmapStack to_heatmaps(const torch::Tensor& logits) {
    const auto t = logits.dim() == 4 ? logits[0] : logits;
    const auto d = t.detach().to(torch::kDouble).contiguous();
    HeatmapStack out(static_cast<int>(d.size(0)), static_cast<int>(d.size(1)), static_cast<int>(d.size(2)));
    std::copy_n(d.data_ptr<double>(), out.values.size(), out.values.begin());
    return out;
}

// ---------------------------------------------------------------------------
// Persistence

nlohmann::json spec_to_json(const NetworkSpec& s) {
    return {{"input_channels", s.input_channels},
            {"output_channels", s.output_channels},
            {"size", s.size},
            {"width", s.width},
            {"res_blocks", s.res_blocks}};
}

NetworkSpec spec_from_json(const nlohmann::json& j) {
    try {
        NetworkSpec s;
        s.input_channels = j.at("input_channels").get<int>();
        s.output_channels = j.at("output_channels").get<int>();
        s.size = j.at("size").get<int>();
        s.width = j.at("width").get<int>();
        s.res_blocks = j.at("res_blocks").get<int>();
        return s;
    } catch (const nlohmann::json::exception& e) {
        throw ParseError(std::string("network spec: ") + e.what());
    }
}

void save_network(const LandmarkNet& net, const fs::path& path) {
    torch::serialize::OutputArchive archive;
    net->save(archive);
    fs::path tmp = path;
    tmp += ".tmp";
    try {
        archive.save_to(tmp.string());
    } catch (const c10::Error& e) {
        throw IoError("cannot write " + path.string() + ": " + e.what_without_backtrace());
    }
    fs::rename(tmp, path);
}

LandmarkNet load_network(const fs::path& path, const NetworkSpec& spec) {
    LandmarkNet net(spec);
    torch::serialize::InputArchive archive;
    try {
        archive.load_from(path.string());
        net->load(archive);
    } catch (const c10::Error& e) {
        throw IoError("cannot load weights " + path.string() + ": " + e.what_without_backtrace());
    }
    net->eval();
    return net;
}

LandmarkNet load_global_network(const fs::path& path) {
    if (fs::is_directory(path)) {
        if (fs::exists(path / "bundle.json")) return ModelBundle::load(path).global;
        return load_global_network(path / "global.pt");
    }
    fs::path spec_path = path;
    spec_path.replace_extension(".json");
    if (!fs::exists(path)) throw IoError("no global weights at " + path.string());
    if (!fs::exists(spec_path)) throw IoError("missing network spec " + spec_path.string());
    const NetworkSpec spec = spec_from_json(nlohmann::json::parse(read_text_file(spec_path)));
    if (spec.input_channels != 3 || spec.output_channels != kNumLandmarks) {
        throw ValidationError(path.string() + " does not hold a global network");
    }
    return load_network(path, spec);
}

namespace {

constexpr std::array<NetworkKind, 4> kKinds = {NetworkKind::global, NetworkKind::eye, NetworkKind::nose,
                                               NetworkKind::mouth};

}  // namespace

ModelBundle ModelBundle::create(int width, int res_blocks) {
    ModelBundle b;
    for (NetworkKind k : kKinds) b.network(k) = LandmarkNet(network_spec(k, width, res_blocks));
    return b;
}

ModelBundle ModelBundle::from_global(const LandmarkNet& global) {
    ModelBundle b;
    b.global = std::dynamic_pointer_cast<LandmarkNetImpl>(global->clone());
    for (NetworkKind k : {NetworkKind::eye, NetworkKind::nose, NetworkKind::mouth}) {
        b.network(k) = init_region_from_global(global, k);
    }
    return b;
}

LandmarkNet& ModelBundle::network(NetworkKind kind) {
    switch (kind) {
        case NetworkKind::global: return global;
        case NetworkKind::eye: return eye;
        case NetworkKind::nose: return nose;
        case NetworkKind::mouth: return mouth;
    }
    throw ValidationError("unknown network kind");
}

const LandmarkNet& ModelBundle::network(NetworkKind kind) const {
    return const_cast<ModelBundle*>(this)->network(kind);
}

ModelBundle ModelBundle::clone() const {
    ModelBundle b;
    for (NetworkKind k : kKinds) {
        b.network(k) = std::dynamic_pointer_cast<LandmarkNetImpl>(network(k)->clone());
    }
    b.version = version;
    b.config_fingerprint = config_fingerprint;
    return b;
}

void ModelBundle::set_training(bool on) {
    for (NetworkKind k : kKinds) network(k)->train(on);
}

void ModelBundle::save(const fs::path& dir) const {
    fs::create_directories(dir);
    nlohmann::json j;
    j["format_version"] = kBundleFormatVersion;
    j["version"] = version;
    j["config_fingerprint"] = config_fingerprint;
    j["input_size"] = kGlobalSize;
    j["patch_size"] = kPatchSize;
    for (NetworkKind k : kKinds) {
        const std::string file = std::string(to_string(k)) + ".pt";
        save_network(network(k), dir / file);
        j["networks"][std::string(to_string(k))] = {{"file", file}, {"spec", spec_to_json(network(k)->spec())}};
    }
    for (RegionName r : kRegions) {
        j["regions"][std::string(to_string(r))] = {{"network", std::string(to_string(network_kind(r)))},
                                                   {"channels", region_indices(r).size()},
                                                   {"mirrored", r == RegionName::right_eye_region}};
    }
    write_file_atomic(dir / "bundle.json", j.dump(2) + "\n");
}

ModelBundle ModelBundle::load(const fs::path& dir) {
    const fs::path meta = dir / "bundle.json";
    if (!fs::exists(meta)) throw IoError("not a model bundle (no bundle.json): " + dir.string());
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(read_text_file(meta));
    } catch (const nlohmann::json::exception& e) {
        throw ParseError(meta.string() + ": " + e.what());
    }
    if (j.value("format_version", 0) != kBundleFormatVersion) {
        throw ValidationError(meta.string() + ": unsupported bundle format version");
    }
    ModelBundle b;
    b.version = j.value("version", "");
    b.config_fingerprint = j.value("config_fingerprint", "");
    for (NetworkKind k : kKinds) {
        const std::string name(to_string(k));
        if (!j.contains("networks") || !j["networks"].contains(name)) {
            throw ValidationError(meta.string() + ": missing network '" + name + "'");
        }
        const auto& n = j["networks"][name];
        const NetworkSpec spec = spec_from_json(n.at("spec"));
        const NetworkSpec want = network_spec(k, spec.width, spec.res_blocks);
        if (spec.input_channels != want.input_channels || spec.output_channels != want.output_channels ||
            spec.size != want.size) {
            throw ValidationError(meta.string() + ": network '" + name + "' has the wrong shape");
        }
        b.network(k) = load_network(dir / n.at("file").get<std::string>(), spec);
    }
    return b;
}

// ---------------------------------------------------------------------------

TorchNetworks::TorchNetworks(ModelBundle bundle) : bundle_(std::move(bundle)) {
    for (NetworkKind k : kKinds) {
        if (!bundle_.network(k)) throw ValidationError("model bundle is missing the " + std::string(to_string(k)) + " network");
    }
    bundle_.set_training(false);
}

HeatmapStack TorchNetworks::global_logits(const PlanarImage& image) {
    torch::NoGradGuard no_grad;
    return to_heatmaps(bundle_.global->forward(to_tensor(image)));
}

HeatmapStack TorchNetworks::region_logits(const RegionQuery& query) {
    const bool right = query.region == RegionName::right_eye_region;
    if (query.mirrored != right) {
        throw ValidationError("the shared eye network needs mirrored right-eye crops and unmirrored others");
    }
    auto& net = bundle_.network(network_kind(query.region));
    if (query.input.channels != net->spec().input_channels) {
        throw ValidationError("region input has " + std::to_string(query.input.channels) + " channels, network expects " +
                              std::to_string(net->spec().input_channels));
    }
    torch::NoGradGuard no_grad;
    return to_heatmaps(net->forward(to_tensor(query.input)));
}

}  // namespace artface
