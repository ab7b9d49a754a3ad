#include "support/doctest_torch.hpp"

#include <cstdlib>
#include <filesystem>

#include <unistd.h>

#include "objstyle/errors.hpp"
#include "objstyle/features.hpp"
#include "support/test_support.hpp"

using namespace objstyle;

TEST_CASE("extract is deterministic for identical inputs") {
    const auto& vgg = testsup::shared_vgg();
    auto img = testsup::make_photo(40, 40, 10);
    auto a = vgg.extract(img, {"conv1_1", "conv3_2"});
    auto b = vgg.extract(img, {"conv1_1", "conv3_2"});
    CHECK(a.at("conv1_1").equal(b.at("conv1_1")));
    CHECK(a.at("conv3_2").equal(b.at("conv3_2")));
}

TEST_CASE("tap spatial dims follow the pooling stride arithmetic") {
    const auto& vgg = testsup::shared_vgg();
    auto img = testsup::make_photo(64, 48, 11);
    auto stack = vgg.extract(img, {"conv1_1", "conv2_1", "conv3_1", "conv4_1", "conv5_1"});
    CHECK(stack.at("conv1_1").sizes() == torch::IntArrayRef({64, 64, 48}));
    CHECK(stack.at("conv2_1").sizes() == torch::IntArrayRef({128, 32, 24}));
    CHECK(stack.at("conv3_1").sizes() == torch::IntArrayRef({256, 16, 12}));
    CHECK(stack.at("conv4_1").sizes() == torch::IntArrayRef({512, 8, 6}));
    CHECK(stack.at("conv5_1").sizes() == torch::IntArrayRef({512, 4, 3}));
}

TEST_CASE("vectorize flattens channels row-major") {
    FeatureStack stack;
    stack.maps["toy"] = torch::tensor({{{1.0, 2.0}, {3.0, 4.0}},
                                       {{5.0, 6.0}, {7.0, 8.0}}});
    auto v = vectorize(stack, "toy");
    CHECK(v.sizes() == torch::IntArrayRef({2, 4}));
    CHECK(v[0][0].item<double>() == 1.0);
    CHECK(v[0][3].item<double>() == 4.0);
    CHECK(v[1][0].item<double>() == 5.0);

    // vectorize then reshape back is the identity
    CHECK(v.reshape({2, 2, 2}).equal(stack.maps["toy"]));

    stack.maps["zero"] = torch::zeros({3, 2, 2});
    CHECK(vectorize(stack, "zero").abs().sum().item<double>() == 0.0);

    CHECK_THROWS_AS(vectorize(stack, "missing"), UnknownLayer);
}

TEST_CASE("relu taps are the clamped conv taps") {
    const auto& vgg = testsup::shared_vgg();
    auto img = testsup::make_photo(32, 32, 12);
    auto stack = vgg.extract(img, {"conv1_2", "relu1_2"});
    CHECK(stack.at("relu1_2").equal(stack.at("conv1_2").relu()));
}

TEST_CASE("extract validates tap names and input size") {
    const auto& vgg = testsup::shared_vgg();
    auto img = testsup::make_photo(32, 32, 13);
    CHECK_THROWS_AS(vgg.extract(img, {"conv9_9"}), UnknownLayer);
    CHECK_THROWS_AS(vgg.extract(img, {}), UnknownLayer);

    // 8x8 pools down to 1x1 before block 5
    auto tiny = torch::rand({3, 8, 8});
    CHECK_THROWS_AS(vgg.extract(tiny, {"conv5_1"}), TooSmall);
    CHECK_NOTHROW(vgg.extract(tiny, {"conv4_1"}));
}

TEST_CASE("input gradient matches central finite differences") {
    const auto& vgg = testsup::shared_vgg();
    auto x = (testsup::random_matrix(8, 8 * 3, 21, torch::kDouble) * 0.4 + 0.5)
                 .reshape({3, 8, 8})
                 .clone()
                 .set_requires_grad(true);
    const std::vector<std::string> taps = {"conv1_1", "conv2_2"};

    auto stack = vgg.extract(x, taps);
    auto value = stack.at("conv1_1").sum() + stack.at("conv2_2").sum();
    value.backward();
    auto analytic = x.grad().clone();

    auto f = [&](const torch::Tensor& t) {
        torch::NoGradGuard g;
        auto s = vgg.extract(t, taps);
        return (s.at("conv1_1").sum() + s.at("conv2_2").sum()).item<double>();
    };
    auto numeric = testsup::fd_gradient(f, x.detach(), 1e-6);
    CHECK(testsup::max_rel_error(analytic, numeric) < 1e-3);
}

TEST_CASE("weights survive a save/load round trip") {
    auto vgg = VggExtractor::random(7);
    const auto path = std::filesystem::temp_directory_path() /
                      ("objstyle_wtest_" + std::to_string(::getpid()) + ".bin");
    vgg.save(path.string());
    auto loaded = VggExtractor::load(path.string());
    CHECK(loaded.weights_checksum() == doctest::Approx(vgg.weights_checksum()).epsilon(1e-12));

    auto img = testsup::make_photo(32, 32, 14);
    auto a = vgg.extract(img, {"conv2_1"});
    auto b = loaded.extract(img, {"conv2_1"});
    CHECK(a.at("conv2_1").equal(b.at("conv2_1")));
    std::filesystem::remove(path);
}

TEST_CASE("weights loading failures raise WeightsUnavailable") {
    CHECK_THROWS_AS(VggExtractor::load("/nonexistent/weights.bin"), WeightsUnavailable);
    ::unsetenv("OBJSTYLE_VGG_WEIGHTS");
    CHECK_THROWS_AS(VggExtractor::from_env(), WeightsUnavailable);
    ::setenv("OBJSTYLE_VGG_WEIGHTS", testsup::shared_weights_path().c_str(), 1);
    CHECK_NOTHROW(VggExtractor::from_env());
}

TEST_CASE("extraction leaves the weights checksum untouched") {
    const auto& vgg = testsup::shared_vgg();
    const double before = vgg.weights_checksum();
    auto img = testsup::make_photo(48, 48, 15);
    auto x = to_tensor(img).set_requires_grad(true);
    auto stack = vgg.extract(x, {"conv1_1", "conv4_2"});
    vectorize(stack, "conv4_2").pow(2).sum().backward();
    CHECK(vgg.weights_checksum() == before);
}

TEST_CASE("image/tensor bridges round trip and clamp") {
    auto img = testsup::make_photo(20, 24, 16);
    auto t = to_tensor(img);
    CHECK(t.sizes() == torch::IntArrayRef({3, 20, 24}));
    auto back = to_image(t);
    for (size_t i = 0; i < img.pixels.size(); ++i)
        CHECK(back.pixels[i] == doctest::Approx(img.pixels[i]).epsilon(1e-7));

    auto noisy = t * 3.0 - 1.0; // values outside [0,1]
    auto clamped = to_image(noisy);
    for (float v : clamped.pixels) {
        CHECK(v >= 0.0f);
        CHECK(v <= 1.0f);
    }
}
