#include "support/doctest_torch.hpp"

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <random>

#include <unistd.h>

#include "objstyle/errors.hpp"
#include "objstyle/image.hpp"
#include "support/test_support.hpp"

using namespace objstyle;
namespace fs = std::filesystem;

namespace {

fs::path tmp_file(const std::string& name) {
    return fs::temp_directory_path() /
           ("objstyle_imgtest_" + std::to_string(::getpid()) + "_" + name);
}

// paints exact 8-bit colors so they survive the PNG round trip
Image paint(int h, int w, const std::vector<std::array<int, 3>>& colors,
            const std::function<int(int, int)>& pick) {
    Image img(h, w);
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) {
            const auto& c = colors[pick(y, x)];
            for (int ch = 0; ch < 3; ++ch) img.at(y, x, ch) = c[ch] / 255.0f;
        }
    return img;
}

} // namespace

TEST_CASE("load_image keeps dims when within max_side") {
    auto img = testsup::make_photo(48, 64, 1);
    const auto path = tmp_file("a.png");
    save_image(img, path.string());
    auto loaded = load_image(path.string(), 64);
    CHECK(loaded.height == 48);
    CHECK(loaded.width == 64);
    fs::remove(path);
}

TEST_CASE("load_image halves a 2:1 image to max_side preserving aspect") {
    auto img = testsup::make_photo(64, 128, 2);
    const auto path = tmp_file("b.png");
    save_image(img, path.string());
    auto loaded = load_image(path.string(), 64);
    CHECK(loaded.height == 32);
    CHECK(loaded.width == 64);
    fs::remove(path);
}

TEST_CASE("all-white 8-bit raster loads as exactly 1.0") {
    Image white(34, 40, 1.0f);
    const auto path = tmp_file("w.png");
    save_image(white, path.string());
    auto loaded = load_image(path.string(), 64);
    for (float v : loaded.pixels) CHECK(v == 1.0f);
    fs::remove(path);
}

TEST_CASE("save_image quantizes 0.5 to byte 128 and clamps overshoot") {
    Image img(32, 32, 0.5f);
    img.at(0, 0, 0) = 1.0f + 1e-9f;
    const auto path = tmp_file("q.png");
    save_image(img, path.string());
    auto loaded = load_image(path.string(), 64);
    CHECK(loaded.at(0, 0, 0) == doctest::Approx(1.0));
    CHECK(loaded.at(1, 1, 1) == doctest::Approx(128.0 / 255.0).epsilon(1e-6));
    fs::remove(path);
}

TEST_CASE("save/load round trip stays within one quantization level") {
    auto img = testsup::make_photo(40, 40, 3);
    const auto path = tmp_file("rt.png");
    save_image(img, path.string());
    auto loaded = load_image(path.string(), 64);
    float max_err = 0;
    for (size_t i = 0; i < img.pixels.size(); ++i)
        max_err = std::max(max_err, std::abs(img.pixels[i] - loaded.pixels[i]));
    CHECK(max_err <= 1.0f / 255.0f + 1e-6f);
    fs::remove(path);
}

TEST_CASE("load_image errors") {
    CHECK_THROWS_AS(load_image("/nonexistent/nope.png", 64), UnreadableFile);

    auto img = testsup::make_photo(48, 48, 4);
    const auto path = tmp_file("small.png");
    save_image(img, path.string());
    // resizing the longest side to 16 leaves both sides below 32
    CHECK_THROWS_AS(load_image(path.string(), 16), TooSmall);
    fs::remove(path);

    const auto garbage = tmp_file("garbage.png");
    std::ofstream(garbage.string()) << "not a png";
    CHECK_THROWS_AS(load_image(garbage.string(), 64), UnreadableFile);
    fs::remove(garbage);
}

TEST_CASE("load_mask rasterizes palette colors into a partition") {
    const int h = 32, w = 32;
    auto raster = paint(h, w, {{0, 0, 255}, {0, 255, 0}},
                        [&](int y, int) { return y < h / 2 ? 0 : 1; });
    const auto path = tmp_file("mask2.png");
    save_image(raster, path.string());

    Image image(h, w, 0.5f);
    Palette palette{{"#0000FF", "sky"}, {"#00FF00", "grass"}};
    auto mask = load_mask(path.string(), image, palette);
    CHECK(mask.size() == 2);
    CHECK(mask.index_of("sky") >= 0);
    CHECK(mask.index_of("grass") >= 0);
    mask.validate(); // disjoint, sums to one everywhere
    const auto& sky = mask.channels[mask.index_of("sky")];
    CHECK(sky[0] == 1);
    CHECK(sky[static_cast<size_t>(h - 1) * w] == 0);
    fs::remove(path);
}

TEST_CASE("load_mask single color gives a degenerate all-ones partition") {
    auto raster = paint(32, 32, {{255, 0, 0}}, [](int, int) { return 0; });
    const auto path = tmp_file("mask1.png");
    save_image(raster, path.string());
    Image image(32, 32, 0.0f);
    auto mask = load_mask(path.string(), image);
    CHECK(mask.size() == 1);
    for (auto v : mask.channels[0]) CHECK(v == 1);
    fs::remove(path);
}

TEST_CASE("load_mask names the unmapped color in the error") {
    auto raster = paint(32, 32, {{0, 0, 255}, {0, 255, 0}, {255, 0, 0}},
                        [](int y, int) { return y < 10 ? 0 : (y < 20 ? 1 : 2); });
    const auto path = tmp_file("mask3.png");
    save_image(raster, path.string());
    Image image(32, 32, 0.0f);
    Palette palette{{"#0000FF", "sky"}, {"#00FF00", "grass"}};
    try {
        load_mask(path.string(), image, palette);
        FAIL("expected UnmappedColor");
    } catch (const UnmappedColor& e) {
        CHECK(std::string(e.what()).find("#FF0000") != std::string::npos);
    }
    fs::remove(path);
}

TEST_CASE("load_mask merges colors sharing a palette label") {
    auto raster = paint(32, 32, {{0, 0, 255}, {0, 255, 0}},
                        [](int y, int) { return y < 16 ? 0 : 1; });
    const auto path = tmp_file("maskm.png");
    save_image(raster, path.string());
    Image image(32, 32, 0.0f);
    Palette palette{{"#0000FF", "thing"}, {"#00FF00", "thing"}};
    auto mask = load_mask(path.string(), image, palette);
    CHECK(mask.size() == 1);
    for (auto v : mask.channels[0]) CHECK(v == 1);
    fs::remove(path);
}

TEST_CASE("load_mask resizes nearest-neighbor unless disabled") {
    auto raster = paint(64, 64, {{0, 0, 255}, {0, 255, 0}},
                        [](int y, int) { return y < 32 ? 0 : 1; });
    const auto path = tmp_file("maskr.png");
    save_image(raster, path.string());
    Image image(32, 32, 0.0f);
    auto mask = load_mask(path.string(), image);
    CHECK(mask.height == 32);
    CHECK(mask.width == 32);
    CHECK(mask.size() == 2);
    CHECK_THROWS_AS(load_mask(path.string(), image, std::nullopt, /*allow_resize=*/false),
                    DimensionMismatch);
    fs::remove(path);
}

TEST_CASE("downsample_mask halves a banded mask and keeps the partition") {
    auto mask = testsup::make_band_mask(8, 8, {"a", "b"}, {0.5, 0.5});
    auto down = downsample_mask(mask, 4, 4);
    down.validate();
    CHECK(down.height == 4);
    CHECK(down.channels[0][0] == 1);  // top band stays channel 0
    CHECK(down.channels[1][15] == 1); // bottom stays channel 1
}

TEST_CASE("downsample_mask is the identity at its own dims") {
    auto mask = testsup::make_band_mask(10, 6, {"a", "b", "c"}, {0.3, 0.4, 0.3});
    auto same = downsample_mask(mask, 10, 6);
    CHECK(same.channels == mask.channels);
}

TEST_CASE("single-channel mask downsamples to all-ones at any size") {
    auto mask = testsup::make_band_mask(9, 7, {"only"}, {1.0});
    for (auto [th, tw] : {std::pair{4, 3}, {2, 2}, {1, 1}}) {
        auto down = downsample_mask(mask, th, tw);
        for (auto v : down.channels[0]) CHECK(v == 1);
    }
}

TEST_CASE("checkerboard ties break toward channel 0") {
    // Every pooled 2x2 cell of a 4x4 checkerboard averages to exactly 0.5
    // per channel; argmax ties resolve to the lowest channel index, so
    // channel 0 ends up all-ones.
    SegmentationMask mask;
    mask.height = 4;
    mask.width = 4;
    mask.labels = {"even", "odd"};
    mask.channels.assign(2, std::vector<std::uint8_t>(16, 0));
    for (int y = 0; y < 4; ++y)
        for (int x = 0; x < 4; ++x)
            mask.channels[(y + x) % 2][static_cast<size_t>(y) * 4 + x] = 1;
    mask.validate();

    auto down = downsample_mask(mask, 2, 2);
    for (auto v : down.channels[0]) CHECK(v == 1);
    for (auto v : down.channels[1]) CHECK(v == 0);
}

TEST_CASE("downsample_mask keeps the partition for random masks") {
    std::mt19937_64 rng(11);
    for (int trial = 0; trial < 10; ++trial) {
        const int h = 6 + static_cast<int>(rng() % 20);
        const int w = 6 + static_cast<int>(rng() % 20);
        const int k = 1 + static_cast<int>(rng() % 4);
        SegmentationMask mask;
        mask.height = h;
        mask.width = w;
        for (int i = 0; i < k; ++i) mask.labels.push_back("l" + std::to_string(i));
        mask.channels.assign(k, std::vector<std::uint8_t>(static_cast<size_t>(h) * w, 0));
        for (size_t p = 0; p < static_cast<size_t>(h) * w; ++p)
            mask.channels[rng() % k][p] = 1;
        mask.validate();

        const int th = 1 + static_cast<int>(rng() % h);
        const int tw = 1 + static_cast<int>(rng() % w);
        auto down = downsample_mask(mask, th, tw);
        CHECK_NOTHROW(down.validate());
    }
}
