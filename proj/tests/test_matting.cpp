#include "support/doctest_torch.hpp"

#include "objstyle/errors.hpp"
#include "objstyle/matting.hpp"
#include "support/test_support.hpp"

using namespace objstyle;

TEST_CASE("matting Laplacian structure on random images") {
    for (std::uint64_t seed : {50, 51, 52}) {
        auto img = testsup::make_photo(8, 8, seed);
        auto m = build_matting_laplacian(img, 1, 1e-5);
        auto dense = m.matrix.to_dense();

        // bitwise symmetry by construction
        CHECK((dense - dense.t()).abs().max().item<double>() <= 1e-12);
        // constant vectors are in the nullspace
        CHECK(dense.sum(1).abs().max().item<double>() <= 1e-8);
        // PSD within numerical tolerance (dense eigendecomposition oracle)
        auto eig = torch::linalg_eigvalsh(dense);
        CHECK(eig.min().item<double>() >= -1e-8);
    }
}

TEST_CASE("photorealism loss vanishes on constants and is tiny on the source") {
    auto img = testsup::make_photo(8, 8, 53);
    auto m = build_matting_laplacian(img, 1, 1e-5);

    auto constant = torch::full({3, 8, 8}, 0.37, torch::kDouble);
    CHECK(photorealism_loss(constant, m).item<double>() <= 1e-8);

    // the image's own channels are locally affine in the image
    auto self = to_tensor(img, torch::kDouble);
    CHECK(photorealism_loss(self, m).item<double>() <= 1e-4 * 64);

    // PSD quadratic form stays non-negative for arbitrary candidates
    for (std::uint64_t seed : {54, 55}) {
        auto other = to_tensor(testsup::make_photo(8, 8, seed), torch::kDouble);
        CHECK(photorealism_loss(other, m).item<double>() >= -1e-8);
    }
}

TEST_CASE("photorealism gradient matches finite differences") {
    auto img = testsup::make_photo(6, 6, 56);
    auto m = build_matting_laplacian(img, 1, 1e-5);
    auto x0 = to_tensor(testsup::make_photo(6, 6, 57), torch::kDouble);

    auto x = x0.clone().set_requires_grad(true);
    photorealism_loss(x, m).backward();
    auto analytic = x.grad().clone();
    auto numeric = testsup::fd_gradient(
        [&](const torch::Tensor& t) {
            torch::NoGradGuard g;
            return photorealism_loss(t, m).item<double>();
        },
        x0, 1e-6);
    CHECK(testsup::max_rel_error(analytic, numeric) < 1e-3);
}

TEST_CASE("matting construction validates sizes") {
    auto img = testsup::make_photo(8, 8, 58);
    CHECK_THROWS_AS(build_matting_laplacian(img, 5, 1e-5), ImageTooSmall);
    Image tiny(2, 2);
    CHECK_THROWS_AS(build_matting_laplacian(tiny, 1, 1e-5), ImageTooSmall);

    auto m = build_matting_laplacian(img, 1, 1e-5);
    auto wrong = torch::rand({3, 4, 4}, torch::kDouble);
    CHECK_THROWS_AS(photorealism_loss(wrong, m), ShapeMismatch);
}

TEST_CASE("window radius is honored") {
    auto img = testsup::make_photo(9, 9, 59);
    auto m = build_matting_laplacian(img, 2, 1e-5);
    CHECK(m.window_radius == 2);
    auto dense = m.matrix.to_dense();
    CHECK(dense.sum(1).abs().max().item<double>() <= 1e-8);
    CHECK(torch::linalg_eigvalsh(dense).min().item<double>() >= -1e-8);
}
