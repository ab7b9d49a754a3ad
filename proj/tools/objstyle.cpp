#include <cstdlib>
#include <filesystem>
#include <iostream>
#include <optional>
#include <string>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "objstyle/engine.hpp"
#include "objstyle/errors.hpp"
#include "objstyle/eval.hpp"
#include "objstyle/features.hpp"
#include "objstyle/image.hpp"
#include "objstyle/losses.hpp"
#include "objstyle/object_map.hpp"

namespace fs = std::filesystem;
using json = nlohmann::json;
using namespace objstyle;

namespace {

constexpr int kExitRuntime = 1;
constexpr int kExitUsage = 2;

struct CommonOpts {
    std::string content, style, content_mask, style_mask;
    std::string object_map, palette, config;
    std::uint64_t seed = 0;
    int iterations = -1;
    int checkpoint_every = -1;
    int max_side = -1;
    double step_size = -1;
    std::string optimizer, init;
    double alpha = -1, beta = -1, alpha1 = -1, alpha2 = -1, beta1 = -1, beta2 = -1,
           lambda_m = -1;
};

void add_common_options(CLI::App* cmd, CommonOpts& o) {
    cmd->add_option("--content", o.content, "content image (PNG/JPEG)")->required();
    cmd->add_option("--style", o.style, "style image (PNG/JPEG)")->required();
    cmd->add_option("--content-mask", o.content_mask, "content segmentation mask PNG")->required();
    cmd->add_option("--style-mask", o.style_mask, "style segmentation mask PNG")->required();
    cmd->add_option("--object-map", o.object_map, "object-map JSON; omitted = auto by label");
    cmd->add_option("--palette", o.palette, "palette JSON mapping #RRGGBB colors to labels");
    cmd->add_option("--config", o.config, "run config JSON");
    cmd->add_option("--seed", o.seed, "RNG seed");
    cmd->add_option("--iterations", o.iterations, "optimizer iterations");
    cmd->add_option("--checkpoint-every", o.checkpoint_every, "checkpoint interval");
    cmd->add_option("--max-side", o.max_side, "working resolution cap");
    cmd->add_option("--step-size", o.step_size, "optimizer step size");
    cmd->add_option("--optimizer", o.optimizer, "lbfgs or adam");
    cmd->add_option("--init", o.init, "content or noise");
    cmd->add_option("--alpha", o.alpha, "mapped term weight");
    cmd->add_option("--beta", o.beta, "unmapped term weight");
    cmd->add_option("--alpha1", o.alpha1, "photo-style weight inside the mapped term");
    cmd->add_option("--alpha2", o.alpha2, "contextual content weight");
    cmd->add_option("--beta1", o.beta1, "unmapped gram weight");
    cmd->add_option("--beta2", o.beta2, "unmapped contextual weight");
    cmd->add_option("--lambda-m", o.lambda_m, "photorealism regularizer weight");
}

RunConfig build_config(const CLI::App* cmd, const CommonOpts& o) {
    RunConfig cfg;
    if (!o.config.empty()) cfg = load_run_config(o.config);
    // flags beat the config file
    auto set = [&](const char* flag) { return cmd->count(flag) > 0; };
    if (set("--seed")) cfg.seed = o.seed;
    if (set("--iterations")) cfg.iterations = o.iterations;
    if (set("--checkpoint-every")) cfg.checkpoint_every = o.checkpoint_every;
    if (set("--max-side")) cfg.max_side = o.max_side;
    if (set("--step-size")) cfg.step_size = o.step_size;
    if (set("--optimizer")) cfg.optimizer = optimizer_from_string(o.optimizer);
    if (set("--init")) cfg.init = init_from_string(o.init);
    if (set("--alpha")) cfg.weights.alpha = o.alpha;
    if (set("--beta")) cfg.weights.beta = o.beta;
    if (set("--alpha1")) cfg.weights.alpha1 = o.alpha1;
    if (set("--alpha2")) cfg.weights.alpha2 = o.alpha2;
    if (set("--beta1")) cfg.weights.beta1 = o.beta1;
    if (set("--beta2")) cfg.weights.beta2 = o.beta2;
    if (set("--lambda-m")) cfg.weights.lambda_m = o.lambda_m;
    cfg.validate();
    return cfg;
}

struct Instance {
    Image content, style;
    SegmentationMask content_mask, style_mask;
    ObjectMap map;
};

Instance load_instance(const CommonOpts& o, const RunConfig& cfg) {
    Instance in;
    in.content = load_image(o.content, cfg.max_side);
    in.style = load_image(o.style, cfg.max_side);
    std::optional<Palette> palette;
    if (!o.palette.empty()) palette = load_palette(o.palette);
    in.content_mask = load_mask(o.content_mask, in.content, palette);
    in.style_mask = load_mask(o.style_mask, in.style, palette);
    std::optional<PairList> pairs;
    if (!o.object_map.empty()) pairs = load_pair_list(o.object_map);
    in.map = build_map(in.content_mask, in.style_mask, pairs);
    return in;
}

int usage_error(const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitUsage;
}

int runtime_error(const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitRuntime;
}

int cmd_run(const CLI::App* cmd, const CommonOpts& o, const std::string& out_dir) {
    RunConfig cfg;
    std::optional<Instance> inst;
    std::optional<VggExtractor> vgg;
    try {
        cfg = build_config(cmd, o);
        inst = load_instance(o, cfg);
        vgg = VggExtractor::from_env();
        fs::create_directories(out_dir);
    } catch (const std::exception& e) {
        return usage_error(e);
    }
    try {
        auto [image, state] = run(*vgg, inst->content, inst->style, inst->content_mask,
                                  inst->style_mask, inst->map, cfg, out_dir);
        const double final_loss = state.final_record ? state.final_record->total
                                                     : state.history.back().total;
        std::cout << "wrote " << out_dir << "/final.png after " << state.iteration
                  << " iterations; final loss " << final_loss << "\n";
        return 0;
    } catch (const std::exception& e) {
        return runtime_error(e);
    }
}

int cmd_losses(const CLI::App* cmd, const CommonOpts& o, const std::string& candidate_path) {
    RunConfig cfg;
    std::optional<Instance> inst;
    std::optional<VggExtractor> vgg;
    std::optional<Image> candidate;
    try {
        cfg = build_config(cmd, o);
        cfg.iterations = 1;
        inst = load_instance(o, cfg);
        vgg = VggExtractor::from_env();
        candidate = load_image(candidate_path, cfg.max_side);
    } catch (const std::exception& e) {
        return usage_error(e);
    }
    try {
        Job job(*vgg, inst->content, inst->style, inst->content_mask, inst->style_mask, inst->map,
                cfg);
        const auto bd = job.evaluate(*candidate);
        json j;
        for (const auto& [name, v] : bd.terms) j[name] = v;
        j["total"] = bd.value();
        std::cout << j.dump(2) << "\n";
        return 0;
    } catch (const std::exception& e) {
        return runtime_error(e);
    }
}

int cmd_eval(const std::string& corpus, const std::string& out, const std::string& plugins,
             const std::string& scorers_csv, int max_side) {
    EvalConfig cfg;
    cfg.max_side = max_side;
    cfg.plugins_dir = plugins;
    if (!scorers_csv.empty()) {
        std::string rest = scorers_csv;
        size_t pos;
        while ((pos = rest.find(',')) != std::string::npos) {
            cfg.scorers.push_back(rest.substr(0, pos));
            rest = rest.substr(pos + 1);
        }
        if (!rest.empty()) cfg.scorers.push_back(rest);
    }
    std::optional<VggExtractor> vgg;
    std::optional<EvalReport> report;
    try {
        vgg = VggExtractor::from_env();
        report = evaluate_corpus(*vgg, corpus, cfg);
    } catch (const UnreadableFile& e) {
        return usage_error(e); // malformed corpus layout
    } catch (const WeightsUnavailable& e) {
        return usage_error(e);
    } catch (const std::exception& e) {
        return runtime_error(e);
    }
    try {
        emit_report(*report, out);
        std::cout << "wrote " << out << " with " << report->rows.size() << " rows\n";
        return 0;
    } catch (const std::exception& e) {
        return runtime_error(e);
    }
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"object-aware photo style transfer"};
    app.require_subcommand(1);

    CommonOpts run_opts, loss_opts;
    std::string out_dir, candidate;
    std::string corpus, report_out, plugins, scorers;
    int eval_max_side = 256;

    auto* run_cmd = app.add_subcommand("run", "optimize a stylized output image");
    add_common_options(run_cmd, run_opts);
    run_cmd->add_option("--out-dir", out_dir, "output directory")->required();

    auto* losses_cmd = app.add_subcommand("losses", "print the loss breakdown of a candidate");
    add_common_options(losses_cmd, loss_opts);
    losses_cmd->add_option("--candidate", candidate, "candidate output image")->required();

    auto* eval_cmd = app.add_subcommand("eval", "score a corpus of (content,style,output) triples");
    eval_cmd->add_option("--corpus", corpus, "corpus directory")->required();
    eval_cmd->add_option("--out", report_out, "report JSON path")->required();
    eval_cmd->add_option("--plugins", plugins, "scorer plugins directory");
    eval_cmd->add_option("--scorers", scorers, "comma-separated scorer ids");
    eval_cmd->add_option("--max-side", eval_max_side, "working resolution cap");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        if (e.get_exit_code() == 0) return app.exit(e); // --help
        std::cerr << e.what() << "\n";
        return kExitUsage;
    }

    if (run_cmd->parsed()) return cmd_run(run_cmd, run_opts, out_dir);
    if (losses_cmd->parsed()) return cmd_losses(losses_cmd, loss_opts, candidate);
    if (eval_cmd->parsed()) return cmd_eval(corpus, report_out, plugins, scorers, eval_max_side);
    return kExitUsage;
}
