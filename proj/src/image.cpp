#include "objstyle/image.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <set>

#include <opencv2/imgcodecs.hpp>
#include <opencv2/imgproc.hpp>

#include <nlohmann/json.hpp>

#include "objstyle/errors.hpp"

namespace objstyle {

namespace {

constexpr int kMinSide = 32;

std::string color_hex(int r, int g, int b) {
    char buf[8];
    std::snprintf(buf, sizeof(buf), "#%02X%02X%02X", r, g, b);
    return buf;
}

cv::Mat read_raster(const std::string& path) {
    cv::Mat raw = cv::imread(path, cv::IMREAD_UNCHANGED);
    if (raw.empty())
        throw UnreadableFile("cannot decode image: " + path);
    if (raw.depth() != CV_8U && raw.depth() != CV_16U)
        throw UnreadableFile("unsupported bit depth in " + path);
    cv::Mat rgb;
    switch (raw.channels()) {
        case 1: cv::cvtColor(raw, rgb, cv::COLOR_GRAY2RGB); break;
        case 3: cv::cvtColor(raw, rgb, cv::COLOR_BGR2RGB); break;
        case 4: cv::cvtColor(raw, rgb, cv::COLOR_BGRA2RGB); break;
        default: throw UnreadableFile("unsupported channel count in " + path);
    }
    return rgb;
}

} // namespace

int SegmentationMask::index_of(const std::string& label) const {
    for (size_t k = 0; k < labels.size(); ++k)
        if (labels[k] == label) return static_cast<int>(k);
    return -1;
}

void SegmentationMask::validate() const {
    if (labels.empty() || channels.size() != labels.size())
        throw DimensionMismatch("mask must carry at least one labeled channel");
    std::set<std::string> seen;
    for (const auto& l : labels) {
        if (l.empty() || !seen.insert(l).second)
            throw Error("duplicate or empty mask label: " + l);
    }
    const size_t n = static_cast<size_t>(height) * width;
    for (const auto& ch : channels)
        if (ch.size() != n)
            throw DimensionMismatch("mask channel size does not match dims");
    for (size_t p = 0; p < n; ++p) {
        int sum = 0;
        for (const auto& ch : channels) sum += ch[p];
        if (sum != 1)
            throw DimensionMismatch("mask channels do not partition the grid");
    }
}

Palette load_palette(const std::string& path) {
    std::ifstream in(path);
    if (!in)
        throw UnreadableFile("cannot open palette: " + path);
    nlohmann::json j;
    try {
        in >> j;
    } catch (const nlohmann::json::exception& e) {
        throw UnreadableFile("bad palette JSON in " + path + ": " + e.what());
    }
    Palette p;
    for (auto& [color, label] : j.items()) {
        if (!label.is_string())
            throw UnreadableFile("palette labels must be strings: " + path);
        p[color] = label.get<std::string>();
    }
    return p;
}

Image load_image(const std::string& path, int max_side) {
    cv::Mat rgb = read_raster(path);
    const double scale = rgb.depth() == CV_16U ? 1.0 / 65535.0 : 1.0 / 255.0;
    cv::Mat f;
    rgb.convertTo(f, CV_32FC3, scale);

    const int longest = std::max(f.rows, f.cols);
    if (longest > max_side) {
        const double r = static_cast<double>(max_side) / longest;
        cv::Size target(std::max(1, static_cast<int>(std::lround(f.cols * r))),
                        std::max(1, static_cast<int>(std::lround(f.rows * r))));
        cv::resize(f, f, target, 0, 0, cv::INTER_AREA);
    }
    if (f.rows < kMinSide || f.cols < kMinSide)
        throw TooSmall("image " + path + " is smaller than 32px after preprocessing");

    Image img(f.rows, f.cols);
    for (int y = 0; y < f.rows; ++y) {
        const cv::Vec3f* row = f.ptr<cv::Vec3f>(y);
        for (int x = 0; x < f.cols; ++x)
            for (int c = 0; c < 3; ++c)
                img.at(y, x, c) = std::clamp(row[x][c], 0.f, 1.f);
    }
    return img;
}

SegmentationMask load_mask(const std::string& path, const Image& image,
                           const std::optional<Palette>& palette, bool allow_resize) {
    cv::Mat rgb = read_raster(path);
    if (rgb.depth() == CV_16U)
        rgb.convertTo(rgb, CV_8UC3, 1.0 / 257.0);

    if (rgb.rows != image.height || rgb.cols != image.width) {
        if (!allow_resize)
            throw DimensionMismatch("mask dims differ from image and resizing is disabled");
        cv::resize(rgb, rgb, cv::Size(image.width, image.height), 0, 0, cv::INTER_NEAREST);
    }

    SegmentationMask mask;
    mask.height = image.height;
    mask.width = image.width;
    const size_t n = image.pixel_count();

    std::map<std::string, int> label_index; // label -> channel
    std::map<uint32_t, int> color_channel;  // packed color -> channel
    std::vector<int> assignment(n);
    for (int y = 0; y < rgb.rows; ++y) {
        const cv::Vec3b* row = rgb.ptr<cv::Vec3b>(y);
        for (int x = 0; x < rgb.cols; ++x) {
            const uint32_t packed = (uint32_t(row[x][0]) << 16) | (uint32_t(row[x][1]) << 8) | row[x][2];
            auto it = color_channel.find(packed);
            if (it == color_channel.end()) {
                const std::string hex = color_hex(row[x][0], row[x][1], row[x][2]);
                std::string label = hex;
                if (palette) {
                    auto pit = palette->find(hex);
                    if (pit == palette->end())
                        throw UnmappedColor("mask color " + hex + " missing from palette");
                    label = pit->second;
                }
                auto lit = label_index.find(label);
                if (lit == label_index.end()) {
                    lit = label_index.emplace(label, static_cast<int>(mask.labels.size())).first;
                    mask.labels.push_back(label);
                    mask.channels.emplace_back(n, 0);
                }
                it = color_channel.emplace(packed, lit->second).first;
            }
            assignment[static_cast<size_t>(y) * rgb.cols + x] = it->second;
        }
    }
    for (size_t p = 0; p < n; ++p)
        mask.channels[assignment[p]][p] = 1;
    mask.validate();
    return mask;
}

SegmentationMask downsample_mask(const SegmentationMask& mask, int target_h, int target_w) {
    if (target_h < 1 || target_w < 1)
        throw DimensionMismatch("mask target dims must be >= 1");
    if (target_h == mask.height && target_w == mask.width)
        return mask;

    const size_t k = mask.size();
    const size_t n_out = static_cast<size_t>(target_h) * target_w;
    // exact fractional-area box filter per channel
    std::vector<std::vector<double>> pooled(k, std::vector<double>(n_out, 0.0));
    const double sy = static_cast<double>(mask.height) / target_h;
    const double sx = static_cast<double>(mask.width) / target_w;
    for (int oy = 0; oy < target_h; ++oy) {
        const double y0 = oy * sy, y1 = (oy + 1) * sy;
        const int iy0 = static_cast<int>(std::floor(y0));
        const int iy1 = std::min(mask.height, static_cast<int>(std::ceil(y1)));
        for (int ox = 0; ox < target_w; ++ox) {
            const double x0 = ox * sx, x1 = (ox + 1) * sx;
            const int ix0 = static_cast<int>(std::floor(x0));
            const int ix1 = std::min(mask.width, static_cast<int>(std::ceil(x1)));
            const size_t out = static_cast<size_t>(oy) * target_w + ox;
            double area = 0.0;
            for (int iy = iy0; iy < iy1; ++iy) {
                const double wy = std::min<double>(iy + 1, y1) - std::max<double>(iy, y0);
                for (int ix = ix0; ix < ix1; ++ix) {
                    const double wx = std::min<double>(ix + 1, x1) - std::max<double>(ix, x0);
                    const double w = wy * wx;
                    area += w;
                    const size_t in = static_cast<size_t>(iy) * mask.width + ix;
                    for (size_t c = 0; c < k; ++c)
                        pooled[c][out] += w * mask.channels[c][in];
                }
            }
            for (size_t c = 0; c < k; ++c) pooled[c][out] /= area;
        }
    }

    SegmentationMask out;
    out.height = target_h;
    out.width = target_w;
    out.labels = mask.labels;
    out.channels.assign(k, std::vector<std::uint8_t>(n_out, 0));
    for (size_t p = 0; p < n_out; ++p) {
        size_t best = 0;
        for (size_t c = 1; c < k; ++c)
            if (pooled[c][p] > pooled[best][p]) best = c; // ties keep lowest index
        out.channels[best][p] = 1;
    }
    out.validate();
    return out;
}

Image quantized(const Image& image) {
    Image out = image;
    for (auto& v : out.pixels)
        v = static_cast<float>(std::lround(std::clamp(v, 0.f, 1.f) * 255.0f) / 255.0);
    return out;
}

void save_image(const Image& image, const std::string& path) {
    cv::Mat bgr(image.height, image.width, CV_8UC3);
    for (int y = 0; y < image.height; ++y) {
        cv::Vec3b* row = bgr.ptr<cv::Vec3b>(y);
        for (int x = 0; x < image.width; ++x) {
            for (int c = 0; c < 3; ++c) {
                const float v = std::clamp(image.at(y, x, c), 0.f, 1.f);
                row[x][2 - c] = static_cast<uint8_t>(std::lround(v * 255.0f));
            }
        }
    }
    bool ok = false;
    try {
        ok = cv::imwrite(path, bgr);
    } catch (const cv::Exception&) {
        ok = false;
    }
    if (!ok)
        throw WriteFailure("cannot write PNG: " + path);
}

} // namespace objstyle
