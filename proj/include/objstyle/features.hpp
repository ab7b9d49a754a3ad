#pragma once

#include <array>
#include <map>
#include <string>
#include <vector>

#include <torch/torch.h>

#include "objstyle/image.hpp"

namespace objstyle {

/// Image -> 3xHxW float tensor in [0,1].
torch::Tensor to_tensor(const Image& image, torch::Dtype dtype = torch::kFloat);

/// 3xHxW tensor -> Image, clamping to [0,1].
Image to_image(const torch::Tensor& chw);

/// Binary channel raster -> HxW tensor of 0/1.
torch::Tensor channel_tensor(const std::vector<std::uint8_t>& raster, int h, int w,
                             torch::Dtype dtype = torch::kFloat);

/// Per-layer feature maps keyed by tap name; each entry is N_l x H_l x W_l.
struct FeatureStack {
    std::map<std::string, torch::Tensor> maps;

    bool contains(const std::string& layer) const { return maps.count(layer) > 0; }
    const torch::Tensor& at(const std::string& layer) const;
};

/// N_l x D_l view of a tap, rows are flattened channels (D_l = H_l * W_l).
torch::Tensor vectorize(const FeatureStack& stack, const std::string& layer);

/// Channel-mean subtraction in [0,255] RGB, the classic VGG convention.
struct PreprocessSpec {
    double scale = 255.0;
    std::array<double, 3> mean = {123.68, 116.779, 103.939};
};

/// Frozen VGG19 convolutional trunk. Weights are loaded once and never
/// updated; extraction is a pure function of (image, taps, weights) and the
/// returned maps carry autograd history back to the input tensor.
class VggExtractor {
public:
    static VggExtractor load(const std::string& weights_path);
    /// He-initialized deterministic filter bank, for tests and smoke runs
    /// where the published classifier weights are not on disk.
    static VggExtractor random(std::uint64_t seed);
    /// Reads the weights path from OBJSTYLE_VGG_WEIGHTS.
    static VggExtractor from_env();

    void save(const std::string& path) const;

    /// image must be 3xHxW, already in [0,1]; preprocessing happens inside
    /// so gradients flow to the caller's tensor.
    FeatureStack extract(const torch::Tensor& image, const std::vector<std::string>& taps) const;
    FeatureStack extract(const Image& image, const std::vector<std::string>& taps,
                         torch::Dtype dtype = torch::kFloat) const;

    /// conv1_1 ... conv5_4; relu variants ("relu3_2") tap after the
    /// activation instead.
    static const std::vector<std::string>& conv_names();
    static bool known_tap(const std::string& name);

    double weights_checksum() const;

    PreprocessSpec preprocess;
    bool average_pool = false; // stock classifier uses max pooling

private:
    VggExtractor() = default;
    const std::vector<torch::Tensor>& weights_for(torch::Dtype dtype) const;
    const std::vector<torch::Tensor>& biases_for(torch::Dtype dtype) const;

    std::vector<torch::Tensor> weights_; // float32 canonical, trunk order
    std::vector<torch::Tensor> biases_;
    mutable std::map<torch::Dtype, std::vector<torch::Tensor>> weights_cast_;
    mutable std::map<torch::Dtype, std::vector<torch::Tensor>> biases_cast_;
};

} // namespace objstyle
