#pragma once

#include <torch/torch.h>

#include "objstyle/image.hpp"

namespace objstyle {

/// Closed-form matting Laplacian of an image: sparse, symmetric, PSD, with
/// zero row sums. Its quadratic form penalizes output colors that are not
/// locally affine functions of the source image.
struct MattingLaplacian {
    torch::Tensor matrix; // sparse coalesced P x P, double precision
    int height = 0;
    int width = 0;
    int window_radius = 1;
    double eps = 1e-5;

    std::int64_t pixel_count() const { return static_cast<std::int64_t>(height) * width; }
};

MattingLaplacian build_matting_laplacian(const Image& content, int window_radius = 1,
                                         double eps = 1e-5);

/// Sum over color channels of v^T M v for the vectorized channels of a
/// 3xHxW tensor. Differentiable with respect to the tensor.
torch::Tensor photorealism_loss(const torch::Tensor& output_chw, const torch::Tensor& laplacian);
torch::Tensor photorealism_loss(const torch::Tensor& output_chw, const MattingLaplacian& m);

} // namespace objstyle
