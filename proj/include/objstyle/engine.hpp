#pragma once

#include <map>
#include <memory>
#include <string>
#include <utility>
#include <vector>

#include <torch/torch.h>

#include "objstyle/features.hpp"
#include "objstyle/image.hpp"
#include "objstyle/losses.hpp"
#include "objstyle/object_map.hpp"

namespace objstyle {

enum class OptimizerKind { lbfgs, adam };
enum class InitMode { content, noise };

OptimizerKind optimizer_from_string(const std::string& s);
InitMode init_from_string(const std::string& s);

struct RunConfig {
    LossWeights weights;
    int iterations = 1000;
    OptimizerKind optimizer = OptimizerKind::lbfgs;
    double step_size = 1.0;
    InitMode init = InitMode::content;
    std::uint64_t seed = 0;
    int checkpoint_every = 100;
    int max_side = 512;
    int matting_radius = 1;
    double matting_eps = 1e-5;
    bool average_pool = false;
    /// Iteration from which the photorealism regularizer becomes active;
    /// 0 keeps it on throughout, a positive value gives a stylize-then-
    /// regularize schedule.
    int lambda_m_start = 0;

    void validate() const;
};

/// Reads a JSON config file onto the given defaults; unknown keys raise.
RunConfig load_run_config(const std::string& path, RunConfig base = {});

struct StepRecord {
    int iteration = 0;
    double total = 0.0;
    double mapped = 0.0;
    double unmapped = 0.0;
    std::map<std::string, double> terms;
    double elapsed_ms = 0.0;
};

struct RunState {
    Image output;
    int iteration = 0;
    std::vector<StepRecord> history;
    /// Breakdown of the quantized final image, so a later `losses` call on
    /// the written PNG reproduces these numbers.
    std::optional<StepRecord> final_record;
};

/// One optimization job: prepares the loss context (cached targets, masks at
/// every tap scale, matting Laplacian, STP classification) and iterates
/// optimizer updates on the output pixels.
class Job {
public:
    Job(const VggExtractor& vgg, const Image& content, const Image& style,
        const SegmentationMask& content_mask, const SegmentationMask& style_mask,
        const ObjectMap& map, const RunConfig& cfg);

    /// One optimizer update; pixels are clamped to [0,1] afterwards.
    /// Raises NonFiniteLoss naming the offending term.
    StepRecord step();

    /// Loss breakdown of an arbitrary candidate image against the prepared
    /// targets, without touching the optimization state.
    LossBreakdown evaluate(const Image& candidate) const;

    Image current() const;
    const RunState& state() const { return state_; }
    const LossContext& context() const { return ctx_; }
    StpKind kind() const { return ctx_.kind; }
    const RunConfig& config() const { return cfg_; }

private:
    VggExtractor vgg_; // cheap copy; tensors are shared, never written
    RunConfig cfg_;
    LossContext ctx_;
    torch::Tensor output_;
    std::unique_ptr<torch::optim::Optimizer> optimizer_;
    RunState state_;
};

/// prepare + iterations x step. When out_dir is non-empty, writes
/// out_dir/step_{k}.png checkpoints, out_dir/final.png and a history.jsonl
/// with one JSON object per step.
std::pair<Image, RunState> run(const VggExtractor& vgg, const Image& content, const Image& style,
                               const SegmentationMask& content_mask,
                               const SegmentationMask& style_mask, const ObjectMap& map,
                               const RunConfig& cfg, const std::string& out_dir = "");

} // namespace objstyle
