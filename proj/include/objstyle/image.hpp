#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

namespace objstyle {

/// RGB raster with float values in [0,1], row-major, interleaved channels.
struct Image {
    int height = 0;
    int width = 0;
    std::vector<float> pixels; // height*width*3

    Image() = default;
    Image(int h, int w, float fill = 0.f)
        : height(h), width(w), pixels(static_cast<size_t>(h) * w * 3, fill) {}

    float& at(int y, int x, int c) {
        return pixels[(static_cast<size_t>(y) * width + x) * 3 + c];
    }
    float at(int y, int x, int c) const {
        return pixels[(static_cast<size_t>(y) * width + x) * 3 + c];
    }
    size_t pixel_count() const { return static_cast<size_t>(height) * width; }
};

/// Stack of binary object channels that partitions the pixel grid.
/// channels[k] holds height*width values that are exactly 0 or 1, and for
/// every pixel exactly one channel is 1.
struct SegmentationMask {
    int height = 0;
    int width = 0;
    std::vector<std::string> labels;
    std::vector<std::vector<std::uint8_t>> channels;

    size_t size() const { return labels.size(); }
    int index_of(const std::string& label) const; // -1 when absent
    void validate() const;                        // throws on broken invariants
};

/// Maps "#RRGGBB" color keys to object labels.
using Palette = std::map<std::string, std::string>;

Palette load_palette(const std::string& path);

/// Decodes an 8/16-bit PNG or JPEG, drops alpha, scales to [0,1] and
/// area-resamples so the longest side is at most max_side.
Image load_image(const std::string& path, int max_side);

/// Rasterizes an indexed-color mask into per-label binary channels aligned
/// with `image`. Without a palette each distinct color becomes its own label
/// ("#RRGGBB"); with a palette colors sharing a label are merged into one
/// channel. The raster is nearest-neighbor resized to the image dims first
/// (unless allow_resize is off, in which case differing dims throw).
SegmentationMask load_mask(const std::string& path, const Image& image,
                           const std::optional<Palette>& palette = std::nullopt,
                           bool allow_resize = true);

/// Area-averages every channel to the target dims, then re-binarizes by
/// per-pixel argmax across channels (ties to the lowest channel index), so
/// the partition property holds exactly at the new scale.
SegmentationMask downsample_mask(const SegmentationMask& mask, int target_h, int target_w);

/// Writes an 8-bit PNG, clamping to [0,1] and rounding to 256 levels.
void save_image(const Image& image, const std::string& path);

/// The image as it will read back after an 8-bit PNG round trip.
Image quantized(const Image& image);

} // namespace objstyle
