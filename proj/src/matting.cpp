#include "objstyle/matting.hpp"

#include <array>
#include <cstring>
#include <vector>

#include "objstyle/errors.hpp"

namespace objstyle {

namespace {

// 3x3 symmetric inverse via the adjugate.
std::array<double, 9> invert3(const std::array<double, 9>& m) {
    const double a = m[0], b = m[1], c = m[2];
    const double d = m[3], e = m[4], f = m[5];
    const double g = m[6], h = m[7], i = m[8];
    const double A = e * i - f * h, B = c * h - b * i, C = b * f - c * e;
    const double D = f * g - d * i, E = a * i - c * g, F = c * d - a * f;
    const double G = d * h - e * g, H = b * g - a * h, I = a * e - b * d;
    const double det = a * A + b * D + c * G;
    const double inv = 1.0 / det;
    return {A * inv, B * inv, C * inv, D * inv, E * inv, F * inv, G * inv, H * inv, I * inv};
}

} // namespace

MattingLaplacian build_matting_laplacian(const Image& content, int window_radius, double eps) {
    if (window_radius < 1)
        throw ImageTooSmall("matting window radius must be >= 1");
    const int side = 2 * window_radius + 1;
    if (content.height < side || content.width < side)
        throw ImageTooSmall("image smaller than one matting window");

    const int h = content.height, w = content.width;
    const int wsz = side * side;
    const double inv_w = 1.0 / wsz;

    const int win_rows = h - 2 * window_radius;
    const int win_cols = w - 2 * window_radius;
    const size_t nnz = static_cast<size_t>(win_rows) * win_cols * wsz * wsz;
    std::vector<std::int64_t> rows, cols;
    std::vector<double> vals;
    rows.reserve(nnz);
    cols.reserve(nnz);
    vals.reserve(nnz);

    std::vector<std::int64_t> pix(wsz);
    std::vector<std::array<double, 3>> centered(wsz);

    for (int cy = window_radius; cy < h - window_radius; ++cy) {
        for (int cx = window_radius; cx < w - window_radius; ++cx) {
            // window mean and centered colors
            double mu[3] = {0, 0, 0};
            int t = 0;
            for (int dy = -window_radius; dy <= window_radius; ++dy) {
                for (int dx = -window_radius; dx <= window_radius; ++dx, ++t) {
                    const int y = cy + dy, x = cx + dx;
                    pix[t] = static_cast<std::int64_t>(y) * w + x;
                    for (int c = 0; c < 3; ++c) {
                        centered[t][c] = content.at(y, x, c);
                        mu[c] += centered[t][c];
                    }
                }
            }
            for (int c = 0; c < 3; ++c) mu[c] *= inv_w;
            for (t = 0; t < wsz; ++t)
                for (int c = 0; c < 3; ++c) centered[t][c] -= mu[c];

            // biased covariance, regularized
            std::array<double, 9> cov{};
            for (t = 0; t < wsz; ++t)
                for (int a = 0; a < 3; ++a)
                    for (int b = 0; b < 3; ++b) cov[a * 3 + b] += centered[t][a] * centered[t][b];
            for (int a = 0; a < 9; ++a) cov[a] *= inv_w;
            cov[0] += eps * inv_w;
            cov[4] += eps * inv_w;
            cov[8] += eps * inv_w;
            const auto prec = invert3(cov);

            // entry for every pixel pair; push (a,b) and (b,a) with the same
            // value so the matrix is symmetric to the bit
            for (int a = 0; a < wsz; ++a) {
                double pa[3];
                for (int c = 0; c < 3; ++c)
                    pa[c] = prec[c * 3 + 0] * centered[a][0] + prec[c * 3 + 1] * centered[a][1] +
                            prec[c * 3 + 2] * centered[a][2];
                for (int b = a; b < wsz; ++b) {
                    const double quad =
                        pa[0] * centered[b][0] + pa[1] * centered[b][1] + pa[2] * centered[b][2];
                    const double val = (a == b ? 1.0 : 0.0) - inv_w * (1.0 + quad);
                    rows.push_back(pix[a]);
                    cols.push_back(pix[b]);
                    vals.push_back(val);
                    if (a != b) {
                        rows.push_back(pix[b]);
                        cols.push_back(pix[a]);
                        vals.push_back(val);
                    }
                }
            }
        }
    }

    const std::int64_t p = static_cast<std::int64_t>(h) * w;
    const auto n = static_cast<std::int64_t>(vals.size());
    auto indices = torch::empty({2, n}, torch::kLong);
    std::memcpy(indices[0].data_ptr<std::int64_t>(), rows.data(), sizeof(std::int64_t) * n);
    std::memcpy(indices[1].data_ptr<std::int64_t>(), cols.data(), sizeof(std::int64_t) * n);
    auto values = torch::from_blob(vals.data(), {n}, torch::kDouble).clone();

    MattingLaplacian m;
    m.matrix = torch::sparse_coo_tensor(indices, values, {p, p}).coalesce();
    m.height = h;
    m.width = w;
    m.window_radius = window_radius;
    m.eps = eps;
    return m;
}

torch::Tensor photorealism_loss(const torch::Tensor& output_chw, const torch::Tensor& laplacian) {
    TORCH_CHECK(output_chw.dim() == 3 && output_chw.size(0) == 3,
                "photorealism_loss expects a 3xHxW tensor");
    const auto p = output_chw.size(1) * output_chw.size(2);
    if (laplacian.size(0) != p)
        throw ShapeMismatch("output pixel count does not match the matting Laplacian");
    auto v = output_chw.reshape({3, p}).t(); // P x 3
    auto mv = torch::matmul(laplacian, v);
    return (v * mv).sum();
}

torch::Tensor photorealism_loss(const torch::Tensor& output_chw, const MattingLaplacian& m) {
    return photorealism_loss(output_chw, m.matrix.to(output_chw.dtype()));
}

} // namespace objstyle
