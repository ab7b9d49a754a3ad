#pragma once

#include <map>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include <torch/torch.h>

#include "objstyle/features.hpp"
#include "objstyle/object_map.hpp"

namespace objstyle {

/// Coefficients of the composite objective plus the per-term layer lists
/// and contextual-similarity hyperparameters.
struct LossWeights {
    double alpha = 1.0;     // mapped-objects term
    double beta = 1.0;      // unmapped-objects term
    double alpha1 = 1.0;    // photo-style part of the mapped term
    double alpha2 = 1.0;    // contextual content part of the mapped term
    double beta1 = 1e-2;    // gram part of the unmapped term
    double beta2 = 1.0;     // contextual part of the unmapped term
    double lambda_m = 1e-4; // photorealism regularizer inside the photo-style part

    std::vector<std::string> style_layers = {"conv1_1", "conv2_1", "conv3_1", "conv4_1",
                                             "conv5_1"};
    std::string content_layer = "conv4_2";
    std::vector<std::string> ctx_layers = {"conv3_2", "conv4_2"};

    double cx_bandwidth = 0.5;
    double cx_eps = 1e-5;
    std::int64_t cx_max_columns = 4096; // per-layer column cap for contextual terms

    // Per-object gram matrices are normalized by their mask's column count so
    // small objects still contribute; turning this off restores the plain
    // 1/(2 N^2) normalization.
    bool masked_gram_mean_norm = true;
    bool skip_empty_pairs = true;

    void validate() const; // throws on negative/non-finite weights
};

/// F F^T for an N x D feature matrix.
torch::Tensor gram(const torch::Tensor& F);

/// Style-diffusion gram loss: masked output gram against the full style gram,
/// 1/(2 N^2) sum of squared entry differences. theta zeroes output columns.
torch::Tensor gram_loss_diffusion(const torch::Tensor& F_O, const torch::Tensor& F_S,
                                  const torch::Tensor& theta_cn);

/// Style-utilization gram loss: full output gram against the masked style gram.
torch::Tensor gram_loss_utilization(const torch::Tensor& F_O, const torch::Tensor& F_S,
                                    const torch::Tensor& theta_sm);

/// Contextual similarity between two column sets (columns of X and Y are
/// feature vectors). Both sets are centered by Y's mean column; cosine
/// distances are min-normalized per Y row, turned into exponential
/// affinities, normalized per X column, and the mean best match over X
/// columns is returned. Value in (0,1]; zero-norm columns are perturbed by
/// eps instead of raising.
torch::Tensor contextual_similarity(const torch::Tensor& X, const torch::Tensor& Y,
                                    double bandwidth, double eps);

/// -log CX(F_O, F_C).
torch::Tensor contextual_content_loss(const torch::Tensor& F_O, const torch::Tensor& F_C,
                                      double bandwidth = 0.5, double eps = 1e-5);

enum class MaskSide { output, style };

/// -log CX with the mask applied to one side. Masked columns are dropped,
/// not zeroed, so only in-mask feature vectors participate.
torch::Tensor contextual_style_loss(const torch::Tensor& F_O, const torch::Tensor& F_S,
                                    const std::optional<torch::Tensor>& theta, MaskSide side,
                                    double bandwidth = 0.5, double eps = 1e-5);

using PairMaskTensors = std::vector<std::pair<torch::Tensor, torch::Tensor>>;

/// Sum over mapped pairs of gram distances between the pair-masked output
/// and style features. With mean_normalize each masked gram is divided by
/// its mask's column count.
torch::Tensor segmented_style_loss(const torch::Tensor& F_O, const torch::Tensor& F_S,
                                   const PairMaskTensors& pair_masks, bool mean_normalize = true,
                                   bool skip_empty = true);

/// 1/(2 N D) sum of squared feature differences at the content layer.
torch::Tensor content_loss(const torch::Tensor& F_O, const torch::Tensor& F_C);

/// Everything `prepare` fixes for the duration of a run: detached target
/// features, masks already at every tap's resolution, column subsampling
/// choices, and the photorealism operator.
struct LossContext {
    LossWeights weights;
    StpKind kind = StpKind::E;

    std::vector<std::string> output_taps; // taps to extract from the candidate

    std::map<std::string, torch::Tensor> style_features;   // layer -> N x D, detached
    std::map<std::string, torch::Tensor> content_features; // layer -> N x D, detached

    // segmented style term, per style layer (empty pairs already filtered)
    std::map<std::string, PairMaskTensors> pair_masks;

    // contextual content term: column subsample shared by both sides
    std::map<std::string, torch::Tensor> ctx_content_out_idx; // empty tensor = all columns
    std::map<std::string, torch::Tensor> ctx_content_target;  // pre-selected F_C columns

    // unmapped gram term (STP-C masks live at output scale, STP-S at style scale)
    std::vector<std::string> gram_layers_active;
    std::map<std::string, torch::Tensor> theta_gram; // flat 0/1 over layer columns

    // unmapped contextual term
    std::vector<std::string> ctx_layers_active;
    std::map<std::string, torch::Tensor> ctx_style_out_idx; // indices into F_O columns
    std::map<std::string, torch::Tensor> ctx_style_target;  // pre-selected F_S columns

    torch::Tensor matting; // sparse P x P, same dtype as the run
};

/// Scalar objective with its weighted per-term contributions. The logged
/// scalars are defined as exact sums of the logged terms, so the accounting
/// identity holds regardless of the tensor's working precision.
struct LossBreakdown {
    torch::Tensor total;                 // scalar, carries the autograd graph
    std::map<std::string, double> terms; // weighted contributions by name
    double mapped = 0.0;
    double unmapped = 0.0;

    double value() const { return mapped + unmapped; }
};

LossBreakdown mapped_loss(const LossContext& ctx, const FeatureStack& output_features,
                          const torch::Tensor& output_image);

/// Dispatches style diffusion (STP-C) or style utilization (STP-S);
/// raises WrongKind for STP-E.
LossBreakdown unmapped_loss(const LossContext& ctx, const FeatureStack& output_features);

/// alpha * mapped + beta * unmapped, with the unmapped term defined as 0
/// for STP-E.
LossBreakdown total_loss(const LossContext& ctx, const FeatureStack& output_features,
                         const torch::Tensor& output_image);

} // namespace objstyle
