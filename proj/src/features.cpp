#include "objstyle/features.hpp"

#include <cstdint>
#include <cstdlib>
#include <cstring>
#include <filesystem>
#include <fstream>

#include "objstyle/errors.hpp"

namespace objstyle {

namespace {

struct ConvDef {
    const char* name;
    int in_ch;
    int out_ch;
    bool pool_after; // a 2x2 pool sits between this conv block and the next
};

// VGG19 convolutional trunk.
constexpr ConvDef kTrunk[] = {
    {"conv1_1", 3, 64, false},    {"conv1_2", 64, 64, true},
    {"conv2_1", 64, 128, false},  {"conv2_2", 128, 128, true},
    {"conv3_1", 128, 256, false}, {"conv3_2", 256, 256, false},
    {"conv3_3", 256, 256, false}, {"conv3_4", 256, 256, true},
    {"conv4_1", 256, 512, false}, {"conv4_2", 512, 512, false},
    {"conv4_3", 512, 512, false}, {"conv4_4", 512, 512, true},
    {"conv5_1", 512, 512, false}, {"conv5_2", 512, 512, false},
    {"conv5_3", 512, 512, false}, {"conv5_4", 512, 512, false},
};
constexpr int kNumConvs = static_cast<int>(std::size(kTrunk));
constexpr char kMagic[8] = {'O', 'B', 'J', 'V', 'G', 'G', 'W', '1'};

template <typename T>
void write_pod(std::ofstream& out, const T& v) {
    out.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
T read_pod(std::ifstream& in) {
    T v{};
    in.read(reinterpret_cast<char*>(&v), sizeof(T));
    return v;
}

} // namespace

torch::Tensor to_tensor(const Image& image, torch::Dtype dtype) {
    auto hwc = torch::from_blob(const_cast<float*>(image.pixels.data()),
                                {image.height, image.width, 3}, torch::kFloat);
    return hwc.permute({2, 0, 1}).to(dtype).contiguous();
}

Image to_image(const torch::Tensor& chw) {
    TORCH_CHECK(chw.dim() == 3 && chw.size(0) == 3, "expected a 3xHxW tensor");
    auto t = chw.detach().to(torch::kFloat).clamp(0, 1).permute({1, 2, 0}).contiguous();
    Image img(static_cast<int>(chw.size(1)), static_cast<int>(chw.size(2)));
    std::memcpy(img.pixels.data(), t.data_ptr<float>(), img.pixels.size() * sizeof(float));
    return img;
}

torch::Tensor channel_tensor(const std::vector<std::uint8_t>& raster, int h, int w,
                             torch::Dtype dtype) {
    auto t = torch::empty({h, w}, torch::kFloat);
    float* p = t.data_ptr<float>();
    for (size_t i = 0; i < raster.size(); ++i) p[i] = raster[i];
    return t.to(dtype);
}

const torch::Tensor& FeatureStack::at(const std::string& layer) const {
    auto it = maps.find(layer);
    if (it == maps.end())
        throw UnknownLayer("layer not present in feature stack: " + layer);
    return it->second;
}

torch::Tensor vectorize(const FeatureStack& stack, const std::string& layer) {
    const auto& m = stack.at(layer);
    return m.reshape({m.size(0), m.size(1) * m.size(2)});
}

const std::vector<std::string>& VggExtractor::conv_names() {
    static const std::vector<std::string> names = [] {
        std::vector<std::string> v;
        for (const auto& def : kTrunk) v.emplace_back(def.name);
        return v;
    }();
    return names;
}

bool VggExtractor::known_tap(const std::string& name) {
    std::string base = name;
    if (base.rfind("relu", 0) == 0) base = "conv" + base.substr(4);
    for (const auto& def : kTrunk)
        if (base == def.name) return true;
    return false;
}

VggExtractor VggExtractor::random(std::uint64_t seed) {
    VggExtractor e;
    auto gen = at::detail::createCPUGenerator(seed);
    for (const auto& def : kTrunk) {
        const double he = std::sqrt(2.0 / (def.in_ch * 9));
        auto w = torch::randn({def.out_ch, def.in_ch, 3, 3}, gen,
                              torch::TensorOptions(torch::kFloat)) *
                 he;
        e.weights_.push_back(w.set_requires_grad(false));
        e.biases_.push_back(torch::zeros({def.out_ch}, torch::kFloat));
    }
    return e;
}

VggExtractor VggExtractor::load(const std::string& weights_path) {
    std::ifstream in(weights_path, std::ios::binary);
    if (!in)
        throw WeightsUnavailable("cannot open VGG weights file: " + weights_path);
    char magic[8];
    in.read(magic, 8);
    if (!in || std::memcmp(magic, kMagic, 8) != 0)
        throw WeightsUnavailable("not a VGG weights file: " + weights_path);
    const auto n = read_pod<std::int32_t>(in);
    if (n != kNumConvs)
        throw WeightsUnavailable("weights file must carry all 16 trunk convolutions");

    VggExtractor e;
    for (int i = 0; i < kNumConvs; ++i) {
        const auto name_len = read_pod<std::int32_t>(in);
        std::string name(static_cast<size_t>(name_len), '\0');
        in.read(name.data(), name_len);
        const auto out_ch = read_pod<std::int32_t>(in);
        const auto in_ch = read_pod<std::int32_t>(in);
        const auto kh = read_pod<std::int32_t>(in);
        const auto kw = read_pod<std::int32_t>(in);
        if (!in || name != kTrunk[i].name || out_ch != kTrunk[i].out_ch ||
            in_ch != kTrunk[i].in_ch || kh != 3 || kw != 3)
            throw WeightsUnavailable("weights file layer " + std::to_string(i) +
                                     " does not match the VGG19 trunk");
        auto w = torch::empty({out_ch, in_ch, 3, 3}, torch::kFloat);
        in.read(reinterpret_cast<char*>(w.data_ptr<float>()),
                static_cast<std::streamsize>(w.numel() * sizeof(float)));
        auto b = torch::empty({out_ch}, torch::kFloat);
        in.read(reinterpret_cast<char*>(b.data_ptr<float>()),
                static_cast<std::streamsize>(b.numel() * sizeof(float)));
        if (!in)
            throw WeightsUnavailable("truncated weights file: " + weights_path);
        e.weights_.push_back(w.set_requires_grad(false));
        e.biases_.push_back(b.set_requires_grad(false));
    }
    return e;
}

VggExtractor VggExtractor::from_env() {
    const char* path = std::getenv("OBJSTYLE_VGG_WEIGHTS");
    if (path == nullptr || path[0] == '\0')
        throw WeightsUnavailable(
            "OBJSTYLE_VGG_WEIGHTS is not set; export VGG19 weights with "
            "tools/export_vgg19_weights.py and point the variable at the file");
    return load(path);
}

void VggExtractor::save(const std::string& path) const {
    std::ofstream out(path, std::ios::binary);
    if (!out)
        throw WriteFailure("cannot open weights file for writing: " + path);
    out.write(kMagic, 8);
    write_pod<std::int32_t>(out, kNumConvs);
    for (int i = 0; i < kNumConvs; ++i) {
        const std::string name = kTrunk[i].name;
        write_pod<std::int32_t>(out, static_cast<std::int32_t>(name.size()));
        out.write(name.data(), static_cast<std::streamsize>(name.size()));
        write_pod<std::int32_t>(out, kTrunk[i].out_ch);
        write_pod<std::int32_t>(out, kTrunk[i].in_ch);
        write_pod<std::int32_t>(out, 3);
        write_pod<std::int32_t>(out, 3);
        auto w = weights_[i].contiguous();
        auto b = biases_[i].contiguous();
        out.write(reinterpret_cast<const char*>(w.data_ptr<float>()),
                  static_cast<std::streamsize>(w.numel() * sizeof(float)));
        out.write(reinterpret_cast<const char*>(b.data_ptr<float>()),
                  static_cast<std::streamsize>(b.numel() * sizeof(float)));
    }
    if (!out)
        throw WriteFailure("failed writing weights file: " + path);
}

const std::vector<torch::Tensor>& VggExtractor::weights_for(torch::Dtype dtype) const {
    if (dtype == torch::kFloat) return weights_;
    auto it = weights_cast_.find(dtype);
    if (it == weights_cast_.end()) {
        std::vector<torch::Tensor> cast;
        for (const auto& w : weights_) cast.push_back(w.to(dtype));
        it = weights_cast_.emplace(dtype, std::move(cast)).first;
    }
    return it->second;
}

const std::vector<torch::Tensor>& VggExtractor::biases_for(torch::Dtype dtype) const {
    if (dtype == torch::kFloat) return biases_;
    auto it = biases_cast_.find(dtype);
    if (it == biases_cast_.end()) {
        std::vector<torch::Tensor> cast;
        for (const auto& b : biases_) cast.push_back(b.to(dtype));
        it = biases_cast_.emplace(dtype, std::move(cast)).first;
    }
    return it->second;
}

FeatureStack VggExtractor::extract(const torch::Tensor& image,
                                   const std::vector<std::string>& taps) const {
    TORCH_CHECK(image.dim() == 3 && image.size(0) == 3, "extract expects a 3xHxW tensor");
    if (taps.empty())
        throw UnknownLayer("tap list is empty");
    // deepest conv index needed, and which names to record
    int deepest = -1;
    std::map<std::string, bool> want_relu; // conv name -> tap after relu
    for (const auto& tap : taps) {
        if (!known_tap(tap))
            throw UnknownLayer("unknown layer name: " + tap);
        const bool relu = tap.rfind("relu", 0) == 0;
        const std::string base = relu ? "conv" + tap.substr(4) : tap;
        for (int i = 0; i < kNumConvs; ++i)
            if (base == kTrunk[i].name) deepest = std::max(deepest, i);
        want_relu[tap] = relu;
    }

    const auto dtype = image.scalar_type();
    const auto& ws = weights_for(dtype);
    const auto& bs = biases_for(dtype);

    auto mean = torch::tensor({preprocess.mean[0], preprocess.mean[1], preprocess.mean[2]},
                              torch::kDouble)
                    .to(dtype)
                    .view({3, 1, 1});
    auto x = (image * preprocess.scale - mean).unsqueeze(0);

    FeatureStack stack;
    size_t found = 0;
    for (int i = 0; i <= deepest; ++i) {
        x = torch::conv2d(x, ws[i], bs[i], /*stride=*/1, /*padding=*/1);
        const std::string conv_name = kTrunk[i].name;
        if (want_relu.count(conv_name) && !want_relu[conv_name]) {
            stack.maps[conv_name] = x.squeeze(0);
            ++found;
        }
        x = torch::relu(x);
        const std::string relu_name = "relu" + conv_name.substr(4);
        if (want_relu.count(relu_name)) {
            stack.maps[relu_name] = x.squeeze(0);
            ++found;
        }
        if (found == want_relu.size()) break;
        if (kTrunk[i].pool_after) {
            if (x.size(2) < 2 || x.size(3) < 2)
                throw TooSmall("input too small to reach the requested taps");
            x = average_pool ? torch::avg_pool2d(x, 2, 2) : torch::max_pool2d(x, 2, 2);
        }
    }
    return stack;
}

FeatureStack VggExtractor::extract(const Image& image, const std::vector<std::string>& taps,
                                   torch::Dtype dtype) const {
    return extract(to_tensor(image, dtype), taps);
}

double VggExtractor::weights_checksum() const {
    double sum = 0;
    for (const auto& w : weights_) sum += w.to(torch::kDouble).abs().sum().item<double>();
    for (const auto& b : biases_) sum += b.to(torch::kDouble).abs().sum().item<double>();
    return sum;
}

} // namespace objstyle
