#include "objstyle/engine.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <numeric>
#include <random>
#include <set>

#include <nlohmann/json.hpp>

#include "objstyle/errors.hpp"
#include "objstyle/matting.hpp"

namespace objstyle {

namespace {

using json = nlohmann::json;

torch::Tensor raster_to_flat(const std::vector<std::uint8_t>& raster, torch::Dtype dtype) {
    auto t = torch::empty({static_cast<std::int64_t>(raster.size())}, torch::kFloat);
    float* p = t.data_ptr<float>();
    for (size_t i = 0; i < raster.size(); ++i) p[i] = raster[i];
    return t.to(dtype);
}

// Sorted uniform subsample of [0, count) without replacement; identity when
// count fits the cap. Partial Fisher-Yates keeps the choice reproducible
// across standard libraries.
std::vector<std::int64_t> subsample_indices(std::int64_t count, std::int64_t cap,
                                            std::mt19937_64& rng) {
    std::vector<std::int64_t> all(count);
    std::iota(all.begin(), all.end(), 0);
    if (cap <= 0 || count <= cap) return all;
    for (std::int64_t i = 0; i < cap; ++i) {
        const auto j = i + static_cast<std::int64_t>(rng() % static_cast<std::uint64_t>(count - i));
        std::swap(all[i], all[j]);
    }
    all.resize(cap);
    std::sort(all.begin(), all.end());
    return all;
}

torch::Tensor index_tensor(const std::vector<std::int64_t>& idx) {
    auto t = torch::empty({static_cast<std::int64_t>(idx.size())}, torch::kLong);
    std::memcpy(t.data_ptr<std::int64_t>(), idx.data(), idx.size() * sizeof(std::int64_t));
    return t;
}

std::vector<std::int64_t> nonzero_positions(const std::vector<std::uint8_t>& raster) {
    std::vector<std::int64_t> out;
    for (size_t i = 0; i < raster.size(); ++i)
        if (raster[i]) out.push_back(static_cast<std::int64_t>(i));
    return out;
}

json record_to_json(const StepRecord& rec) {
    json j;
    j["iteration"] = rec.iteration;
    j["total"] = rec.total;
    j["mapped"] = rec.mapped;
    j["unmapped"] = rec.unmapped;
    j["terms"] = rec.terms;
    j["elapsed_ms"] = rec.elapsed_ms;
    return j;
}

} // namespace

OptimizerKind optimizer_from_string(const std::string& s) {
    if (s == "lbfgs") return OptimizerKind::lbfgs;
    if (s == "adam") return OptimizerKind::adam;
    throw Error("unknown optimizer: " + s + " (expected lbfgs or adam)");
}

InitMode init_from_string(const std::string& s) {
    if (s == "content") return InitMode::content;
    if (s == "noise") return InitMode::noise;
    throw Error("unknown init mode: " + s + " (expected content or noise)");
}

void RunConfig::validate() const {
    weights.validate();
    if (iterations < 1) throw Error("iterations must be >= 1");
    if (!(step_size > 0)) throw Error("step size must be positive");
    if (max_side < 32) throw Error("max_side must be >= 32");
    if (matting_radius < 1) throw Error("matting radius must be >= 1");
    if (lambda_m_start < 0) throw Error("lambda_m_start must be >= 0");
}

RunConfig load_run_config(const std::string& path, RunConfig base) {
    std::ifstream in(path);
    if (!in) throw UnreadableFile("cannot open config: " + path);
    json j;
    try {
        in >> j;
    } catch (const json::exception& e) {
        throw UnreadableFile("bad config JSON in " + path + ": " + e.what());
    }
    RunConfig cfg = base;
    auto& w = cfg.weights;
    for (const auto& [key, value] : j.items()) {
        if (key == "alpha") w.alpha = value.get<double>();
        else if (key == "beta") w.beta = value.get<double>();
        else if (key == "alpha1") w.alpha1 = value.get<double>();
        else if (key == "alpha2") w.alpha2 = value.get<double>();
        else if (key == "beta1") w.beta1 = value.get<double>();
        else if (key == "beta2") w.beta2 = value.get<double>();
        else if (key == "lambda_m") w.lambda_m = value.get<double>();
        else if (key == "style_layers") w.style_layers = value.get<std::vector<std::string>>();
        else if (key == "content_layer") w.content_layer = value.get<std::string>();
        else if (key == "ctx_layers") w.ctx_layers = value.get<std::vector<std::string>>();
        else if (key == "cx_bandwidth") w.cx_bandwidth = value.get<double>();
        else if (key == "cx_eps") w.cx_eps = value.get<double>();
        else if (key == "cx_max_columns") w.cx_max_columns = value.get<std::int64_t>();
        else if (key == "masked_gram_mean_norm") w.masked_gram_mean_norm = value.get<bool>();
        else if (key == "skip_empty_pairs") w.skip_empty_pairs = value.get<bool>();
        else if (key == "iterations") cfg.iterations = value.get<int>();
        else if (key == "optimizer") cfg.optimizer = optimizer_from_string(value.get<std::string>());
        else if (key == "step_size") cfg.step_size = value.get<double>();
        else if (key == "init") cfg.init = init_from_string(value.get<std::string>());
        else if (key == "seed") cfg.seed = value.get<std::uint64_t>();
        else if (key == "checkpoint_every") cfg.checkpoint_every = value.get<int>();
        else if (key == "max_side") cfg.max_side = value.get<int>();
        else if (key == "matting_radius") cfg.matting_radius = value.get<int>();
        else if (key == "matting_eps") cfg.matting_eps = value.get<double>();
        else if (key == "average_pool") cfg.average_pool = value.get<bool>();
        else if (key == "lambda_m_start") cfg.lambda_m_start = value.get<int>();
        else throw Error("unknown config key: " + key);
    }
    return cfg;
}

Job::Job(const VggExtractor& vgg, const Image& content, const Image& style,
         const SegmentationMask& content_mask, const SegmentationMask& style_mask,
         const ObjectMap& map, const RunConfig& cfg)
    : vgg_(vgg), cfg_(cfg) {
    cfg_.validate();
    if (content_mask.height != content.height || content_mask.width != content.width)
        throw DimensionMismatch("content mask dims do not match the content image");
    if (style_mask.height != style.height || style_mask.width != style.width)
        throw DimensionMismatch("style mask dims do not match the style image");

    torch::manual_seed(cfg_.seed);
    const auto dtype = torch::kFloat;
    const auto& w = cfg_.weights;

    ctx_.weights = w;
    ctx_.kind = classify(map, static_cast<int>(content_mask.size()),
                         static_cast<int>(style_mask.size()));

    // union of taps, deterministic order
    std::vector<std::string> taps;
    std::set<std::string> seen;
    auto add_tap = [&](const std::string& t) {
        if (seen.insert(t).second) taps.push_back(t);
    };
    for (const auto& l : w.style_layers) add_tap(l);
    add_tap(w.content_layer);
    for (const auto& l : w.ctx_layers) add_tap(l);
    ctx_.output_taps = taps;

    // constant targets, extracted once
    vgg_.average_pool = cfg_.average_pool;
    torch::NoGradGuard no_grad;
    auto content_stack = vgg_.extract(content, taps, dtype);
    auto style_stack = vgg_.extract(style, taps, dtype);
    for (const auto& t : taps) {
        ctx_.content_features[t] = vectorize(content_stack, t).detach();
        ctx_.style_features[t] = vectorize(style_stack, t).detach();
    }

    // masks at every tap scale, cached per distinct dims
    std::map<std::pair<int, int>, SegmentationMask> cmask_at, smask_at;
    auto content_mask_at = [&](const torch::Tensor& fmap) -> const SegmentationMask& {
        const auto key = std::make_pair(static_cast<int>(fmap.size(1)),
                                        static_cast<int>(fmap.size(2)));
        auto it = cmask_at.find(key);
        if (it == cmask_at.end())
            it = cmask_at.emplace(key, downsample_mask(content_mask, key.first, key.second)).first;
        return it->second;
    };
    auto style_mask_at = [&](const torch::Tensor& fmap) -> const SegmentationMask& {
        const auto key = std::make_pair(static_cast<int>(fmap.size(1)),
                                        static_cast<int>(fmap.size(2)));
        auto it = smask_at.find(key);
        if (it == smask_at.end())
            it = smask_at.emplace(key, downsample_mask(style_mask, key.first, key.second)).first;
        return it->second;
    };

    // segmented style masks per style layer, dropping pairs that vanish
    for (const auto& layer : w.style_layers) {
        const auto& cm = content_mask_at(content_stack.at(layer));
        const auto& sm = style_mask_at(style_stack.at(layer));
        PairMaskTensors tensors;
        for (const auto& [clabel, slabel] : map.pairs) {
            const auto& craster = cm.channels[cm.index_of(clabel)];
            const auto& sraster = sm.channels[sm.index_of(slabel)];
            const bool c_empty = nonzero_positions(craster).empty();
            const bool s_empty = nonzero_positions(sraster).empty();
            if (c_empty || s_empty) {
                if (!w.skip_empty_pairs)
                    throw EmptyMask("pair (" + clabel + "," + slabel + ") vanished at layer " +
                                    layer);
                std::cerr << "objstyle: warning: pair (" << clabel << "," << slabel
                          << ") vanished at " << layer << ", skipped for that layer\n";
                continue;
            }
            tensors.emplace_back(raster_to_flat(craster, dtype), raster_to_flat(sraster, dtype));
        }
        ctx_.pair_masks[layer] = std::move(tensors);
    }

    // contextual content subsampling (same grid for O and C)
    std::mt19937_64 rng(cfg_.seed ^ 0x9e3779b97f4a7c15ULL);
    for (const auto& layer : w.ctx_layers) {
        const auto d = ctx_.content_features.at(layer).size(1);
        auto idx = subsample_indices(d, w.cx_max_columns, rng);
        if (static_cast<std::int64_t>(idx.size()) == d) {
            ctx_.ctx_content_out_idx[layer] = torch::empty({0}, torch::kLong);
            ctx_.ctx_content_target[layer] = ctx_.content_features.at(layer);
        } else {
            auto t = index_tensor(idx);
            ctx_.ctx_content_out_idx[layer] = t;
            ctx_.ctx_content_target[layer] = ctx_.content_features.at(layer).index_select(1, t);
        }
    }

    // unmapped machinery
    if (ctx_.kind != StpKind::E) {
        const bool diffusion = ctx_.kind == StpKind::C;
        for (const auto& layer : w.style_layers) {
            const auto& m = diffusion ? content_mask_at(content_stack.at(layer))
                                      : style_mask_at(style_stack.at(layer));
            const auto theta = diffusion ? unmapped_content_mask(map, m)
                                         : unmapped_style_mask(map, m);
            if (nonzero_positions(theta).empty()) {
                std::cerr << "objstyle: warning: unmapped region vanished at " << layer
                          << ", gram term skipped for that layer\n";
                continue;
            }
            ctx_.theta_gram[layer] = raster_to_flat(theta, dtype);
            ctx_.gram_layers_active.push_back(layer);
        }
        for (const auto& layer : w.ctx_layers) {
            const auto& cm = content_mask_at(content_stack.at(layer));
            const auto& sm = style_mask_at(style_stack.at(layer));
            std::vector<std::int64_t> out_positions;
            torch::Tensor target;
            if (diffusion) {
                // output side restricted to the unmapped content region
                out_positions = nonzero_positions(unmapped_content_mask(map, cm));
                auto tgt_idx = subsample_indices(ctx_.style_features.at(layer).size(1),
                                                 w.cx_max_columns, rng);
                target = ctx_.style_features.at(layer).index_select(1, index_tensor(tgt_idx));
            } else {
                // output side is the full grid, style side restricted to the
                // unmapped style region
                out_positions.resize(ctx_.content_features.at(layer).size(1));
                std::iota(out_positions.begin(), out_positions.end(), 0);
                auto sel = nonzero_positions(unmapped_style_mask(map, sm));
                if (sel.empty()) {
                    std::cerr << "objstyle: warning: unmapped style region vanished at " << layer
                              << ", contextual term skipped for that layer\n";
                    continue;
                }
                auto sel_sub = subsample_indices(static_cast<std::int64_t>(sel.size()),
                                                 w.cx_max_columns, rng);
                std::vector<std::int64_t> final_sel;
                final_sel.reserve(sel_sub.size());
                for (auto i : sel_sub) final_sel.push_back(sel[i]);
                target = ctx_.style_features.at(layer).index_select(1, index_tensor(final_sel));
            }
            if (out_positions.empty()) {
                std::cerr << "objstyle: warning: unmapped content region vanished at " << layer
                          << ", contextual term skipped for that layer\n";
                continue;
            }
            auto out_sub = subsample_indices(static_cast<std::int64_t>(out_positions.size()),
                                             w.cx_max_columns, rng);
            std::vector<std::int64_t> final_out;
            final_out.reserve(out_sub.size());
            for (auto i : out_sub) final_out.push_back(out_positions[i]);
            ctx_.ctx_style_out_idx[layer] = index_tensor(final_out);
            ctx_.ctx_style_target[layer] = target;
            ctx_.ctx_layers_active.push_back(layer);
        }
    }

    // photorealism operator from the content image
    ctx_.matting =
        build_matting_laplacian(content, cfg_.matting_radius, cfg_.matting_eps).matrix.to(dtype);

    // output init
    torch::Tensor init = cfg_.init == InitMode::content
                             ? to_tensor(content, dtype)
                             : torch::rand({3, content.height, content.width},
                                           torch::TensorOptions(dtype));
    output_ = init.clone().set_requires_grad(true);

    if (cfg_.optimizer == OptimizerKind::lbfgs) {
        auto opts = torch::optim::LBFGSOptions(cfg_.step_size).max_iter(1).history_size(10);
        optimizer_ = std::make_unique<torch::optim::LBFGS>(std::vector<torch::Tensor>{output_},
                                                           opts);
    } else {
        optimizer_ = std::make_unique<torch::optim::Adam>(std::vector<torch::Tensor>{output_},
                                                          torch::optim::AdamOptions(cfg_.step_size));
    }

    state_.output = to_image(output_);
}

StepRecord Job::step() {
    if (state_.iteration >= cfg_.iterations)
        throw Error("job already ran its configured iterations");
    const auto t0 = std::chrono::steady_clock::now();

    // stylize-then-regularize schedule hook
    ctx_.weights.lambda_m = state_.iteration >= cfg_.lambda_m_start ? cfg_.weights.lambda_m : 0.0;

    LossBreakdown bd;
    auto closure = [&]() -> torch::Tensor {
        optimizer_->zero_grad();
        auto fo = vgg_.extract(output_, ctx_.output_taps);
        bd = total_loss(ctx_, fo, output_);
        if (!std::isfinite(bd.value())) {
            std::string offender = "total";
            for (const auto& [name, v] : bd.terms)
                if (!std::isfinite(v)) { offender = name; break; }
            throw NonFiniteLoss("non-finite loss in term '" + offender + "' at iteration " +
                                std::to_string(state_.iteration + 1));
        }
        if (bd.total.requires_grad()) {
            bd.total.backward();
        } else {
            // all active coefficients are zero; hand the optimizer a zero
            // gradient so it leaves the pixels alone
            output_.mutable_grad() = torch::zeros_like(output_);
        }
        return bd.total;
    };
    optimizer_->step(closure);
    {
        torch::NoGradGuard g;
        output_.clamp_(0.0, 1.0);
    }

    StepRecord rec;
    rec.iteration = ++state_.iteration;
    rec.total = bd.value();
    rec.mapped = bd.mapped;
    rec.unmapped = bd.unmapped;
    rec.terms = bd.terms;
    rec.elapsed_ms = std::chrono::duration<double, std::milli>(
                         std::chrono::steady_clock::now() - t0)
                         .count();
    state_.history.push_back(rec);
    state_.output = to_image(output_);
    return rec;
}

LossBreakdown Job::evaluate(const Image& candidate) const {
    torch::NoGradGuard no_grad;
    if (candidate.height != state_.output.height || candidate.width != state_.output.width)
        throw ShapeMismatch("candidate dims do not match the prepared content dims");
    auto tensor = to_tensor(candidate, torch::kFloat);
    auto fo = vgg_.extract(tensor, ctx_.output_taps);
    // candidates are always scored against the full objective, regardless of
    // where the lambda_m schedule currently stands
    auto ctx = ctx_;
    ctx.weights.lambda_m = cfg_.weights.lambda_m;
    return total_loss(ctx, fo, tensor);
}

Image Job::current() const { return to_image(output_); }

std::pair<Image, RunState> run(const VggExtractor& vgg, const Image& content, const Image& style,
                               const SegmentationMask& content_mask,
                               const SegmentationMask& style_mask, const ObjectMap& map,
                               const RunConfig& cfg, const std::string& out_dir) {
    Job job(vgg, content, style, content_mask, style_mask, map, cfg);

    std::ofstream history;
    if (!out_dir.empty()) {
        std::filesystem::create_directories(out_dir);
        history.open(out_dir + "/history.jsonl");
        if (!history) throw WriteFailure("cannot open history.jsonl under " + out_dir);
    }

    for (int k = 1; k <= cfg.iterations; ++k) {
        const auto rec = job.step();
        if (history.is_open())
            history << record_to_json(rec).dump() << "\n";
        if (!out_dir.empty() && cfg.checkpoint_every > 0 && k % cfg.checkpoint_every == 0)
            save_image(job.state().output, out_dir + "/step_" + std::to_string(k) + ".png");
    }

    // terminal record on the quantized image, matching what the written PNG
    // will evaluate to
    auto state = job.state();
    const auto bd = job.evaluate(quantized(state.output));
    StepRecord final_rec;
    final_rec.iteration = cfg.iterations;
    final_rec.total = bd.value();
    final_rec.mapped = bd.mapped;
    final_rec.unmapped = bd.unmapped;
    final_rec.terms = bd.terms;
    state.final_record = final_rec;
    if (history.is_open()) {
        auto j = record_to_json(final_rec);
        j["final"] = true;
        history << j.dump() << "\n";
    }
    if (!out_dir.empty())
        save_image(state.output, out_dir + "/final.png");
    return {state.output, state};
}

} // namespace objstyle
