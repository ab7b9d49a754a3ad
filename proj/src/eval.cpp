#include "objstyle/eval.hpp"

#include <algorithm>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <unistd.h>

#include <nlohmann/json.hpp>
#include <torch/torch.h>

#include "objstyle/engine.hpp"
#include "objstyle/errors.hpp"
#include "objstyle/losses.hpp"

namespace fs = std::filesystem;
using json = nlohmann::json;

namespace objstyle {

namespace {

torch::Tensor luminance(const Image& img) {
    auto t = to_tensor(img, torch::kDouble);
    return (0.299 * t[0] + 0.587 * t[1] + 0.114 * t[2]).unsqueeze(0).unsqueeze(0);
}

torch::Tensor gaussian_window(int size, double sigma) {
    auto coords = torch::arange(size, torch::kDouble) - (size - 1) / 2.0;
    auto g = (-coords.pow(2) / (2 * sigma * sigma)).exp();
    g = g / g.sum();
    return g.outer(g).reshape({1, 1, size, size});
}

} // namespace

double structure_score(const Image& output, const Image& content) {
    if (output.height != content.height || output.width != content.width)
        throw ShapeMismatch("structure_score needs equal image dims");
    constexpr int kWin = 11;
    constexpr double kSigma = 1.5;
    constexpr double kC1 = 0.01 * 0.01; // unit data range
    constexpr double kC2 = 0.03 * 0.03;
    if (output.height < kWin || output.width < kWin)
        throw ShapeMismatch("images smaller than the 11x11 SSIM window");

    torch::NoGradGuard no_grad;
    auto x = luminance(output);
    auto y = luminance(content);
    auto w = gaussian_window(kWin, kSigma);

    auto mu_x = torch::conv2d(x, w);
    auto mu_y = torch::conv2d(y, w);
    auto xx = torch::conv2d(x * x, w) - mu_x * mu_x;
    auto yy = torch::conv2d(y * y, w) - mu_y * mu_y;
    auto xy = torch::conv2d(x * y, w) - mu_x * mu_y;

    auto ssim = ((2 * mu_x * mu_y + kC1) * (2 * xy + kC2)) /
                ((mu_x * mu_x + mu_y * mu_y + kC1) * (xx + yy + kC2));
    return ssim.mean().item<double>();
}

double style_gram_distance(const VggExtractor& vgg, const Image& output, const Image& style,
                           const std::vector<std::string>& taps) {
    torch::NoGradGuard no_grad;
    auto fo = vgg.extract(output, taps, torch::kFloat);
    auto fs = vgg.extract(style, taps, torch::kFloat);
    double total = 0.0;
    for (const auto& tap : taps) {
        auto o = vectorize(fo, tap);
        auto ones = torch::ones({o.size(1)}, o.options());
        total += gram_loss_diffusion(o, vectorize(fs, tap), ones).item<double>();
    }
    return total;
}

double external_score(const std::string& image_path, const std::optional<std::string>& reference,
                      const std::string& scorer, const std::string& plugins_dir) {
    if (plugins_dir.empty())
        throw ScorerUnavailable("no plugins directory configured");
    const fs::path manifest_path = fs::path(plugins_dir) / (scorer + ".json");
    if (!fs::exists(manifest_path))
        throw ScorerUnavailable("no manifest for scorer '" + scorer + "' in " + plugins_dir);

    std::ifstream mf(manifest_path);
    json manifest;
    try {
        mf >> manifest;
    } catch (const json::exception& e) {
        throw ScorerUnavailable("bad manifest for scorer '" + scorer + "': " + e.what());
    }
    if (!manifest.contains("command") || !manifest["command"].is_string())
        throw ScorerUnavailable("manifest for '" + scorer + "' lacks a command");
    const bool needs_ref = manifest.value("needs_reference", false);
    if (needs_ref && !reference)
        throw ScorerUnavailable("scorer '" + scorer + "' needs a reference image");

    json request;
    request["image"] = image_path;
    if (needs_ref) request["reference"] = *reference;

    const auto dir = fs::temp_directory_path();
    const auto tag = std::to_string(
        std::hash<std::string>{}(image_path + scorer + std::to_string(::getpid())));
    const fs::path in_path = dir / ("objstyle_scorer_in_" + tag + ".json");
    const fs::path out_path = dir / ("objstyle_scorer_out_" + tag + ".json");
    {
        std::ofstream in(in_path);
        in << request.dump();
    }
    const std::string cmd = manifest["command"].get<std::string>() + " < " + in_path.string() +
                            " > " + out_path.string();
    const int rc = std::system(cmd.c_str());
    std::error_code ec;
    fs::remove(in_path, ec);
    if (rc != 0) {
        fs::remove(out_path, ec);
        throw ScorerUnavailable("scorer '" + scorer + "' exited with status " + std::to_string(rc));
    }
    std::ifstream out(out_path);
    json response;
    try {
        out >> response;
    } catch (const json::exception&) {
        fs::remove(out_path, ec);
        throw ScorerUnavailable("scorer '" + scorer + "' returned malformed JSON");
    }
    fs::remove(out_path, ec);
    if (!response.contains("score") || !response["score"].is_number())
        throw ScorerUnavailable("scorer '" + scorer + "' returned no numeric score");
    return response["score"].get<double>();
}

Aggregate aggregate_of(const std::vector<double>& values) {
    Aggregate a;
    a.count = static_cast<int>(values.size());
    if (values.empty()) return a;
    double sum = 0;
    for (double v : values) sum += v;
    a.mean = sum / a.count;
    auto sorted = values;
    std::sort(sorted.begin(), sorted.end());
    a.median = a.count % 2 == 1 ? sorted[a.count / 2]
                                : 0.5 * (sorted[a.count / 2 - 1] + sorted[a.count / 2]);
    return a;
}

EvalReport evaluate_corpus(const VggExtractor& vgg, const std::string& corpus_dir,
                           const EvalConfig& cfg) {
    if (!fs::is_directory(corpus_dir))
        throw UnreadableFile("corpus directory does not exist: " + corpus_dir);

    std::vector<std::string> ids;
    for (const auto& entry : fs::directory_iterator(corpus_dir))
        if (entry.is_directory()) ids.push_back(entry.path().filename().string());
    std::sort(ids.begin(), ids.end());
    if (ids.empty())
        throw UnreadableFile("corpus is empty: " + corpus_dir);

    EvalReport report;
    for (const auto& id : ids) {
        const fs::path base = fs::path(corpus_dir) / id;
        for (const char* name : {"content.png", "style.png", "output.png"})
            if (!fs::exists(base / name))
                throw UnreadableFile("corpus instance '" + id + "' lacks " + name);

        EvalRow row;
        row.id = id;
        auto content = load_image((base / "content.png").string(), cfg.max_side);
        auto style = load_image((base / "style.png").string(), cfg.max_side);
        auto output = load_image((base / "output.png").string(), cfg.max_side);
        if (output.height != content.height || output.width != content.width)
            throw DimensionMismatch("corpus instance '" + id +
                                    "': output and content dims differ");

        row.structure = structure_score(output, content);
        row.gram_distance = style_gram_distance(vgg, output, style, cfg.gram_taps);

        if (cfg.with_losses) {
            // full-frame breakdown: single-object masks, identity map
            SegmentationMask cm, sm;
            cm.height = content.height;
            cm.width = content.width;
            cm.labels = {"frame"};
            cm.channels = {std::vector<std::uint8_t>(content.pixel_count(), 1)};
            sm.height = style.height;
            sm.width = style.width;
            sm.labels = {"frame"};
            sm.channels = {std::vector<std::uint8_t>(style.pixel_count(), 1)};
            auto map = build_map(cm, sm);
            RunConfig rc;
            rc.iterations = 1;
            Job job(vgg, content, style, cm, sm, map, rc);
            auto bd = job.evaluate(output);
            row.loss_terms = bd.terms;
            row.loss_terms["total"] = bd.value();
        }

        for (const auto& scorer : cfg.scorers) {
            ExternalScore s;
            try {
                s.value = external_score((base / "output.png").string(),
                                         (base / "content.png").string(), scorer,
                                         cfg.plugins_dir);
                s.provenance = "plugin:" + scorer;
            } catch (const ScorerUnavailable& e) {
                s.value = std::nullopt;
                s.provenance = std::string("unavailable: ") + e.what();
            }
            row.external[scorer] = s;
        }
        report.rows.push_back(std::move(row));
    }

    // aggregates over non-null cells
    std::vector<double> structures, grams;
    std::map<std::string, std::vector<double>> externals;
    for (const auto& row : report.rows) {
        structures.push_back(row.structure);
        grams.push_back(row.gram_distance);
        for (const auto& [name, s] : row.external)
            if (s.value) externals[name].push_back(*s.value);
    }
    report.aggregates["structure_score"] = aggregate_of(structures);
    report.aggregates["style_gram_distance"] = aggregate_of(grams);
    for (const auto& [name, vals] : externals)
        report.aggregates[name] = aggregate_of(vals);
    for (const auto& scorer : cfg.scorers)
        if (!report.aggregates.count(scorer)) report.aggregates[scorer] = Aggregate{};
    return report;
}

namespace {

// minimal deterministic bar plot
void write_bar_plot(const std::vector<double>& values, const std::string& title,
                    const std::string& path) {
    const int bar_w = 24, gap = 8, margin = 30;
    const int width = std::max(120, margin * 2 + static_cast<int>(values.size()) * (bar_w + gap));
    const int height = 240;
    Image img(height, width, 1.0f);

    double vmax = 1e-12;
    for (double v : values) vmax = std::max(vmax, std::abs(v));
    const int base_y = height - margin;
    const int span = height - 2 * margin;

    auto put = [&](int y, int x, float r, float g, float b) {
        if (y < 0 || y >= height || x < 0 || x >= width) return;
        img.at(y, x, 0) = r;
        img.at(y, x, 1) = g;
        img.at(y, x, 2) = b;
    };
    for (int x = margin / 2; x < width - margin / 2; ++x) put(base_y, x, 0, 0, 0);
    for (size_t i = 0; i < values.size(); ++i) {
        const int x0 = margin + static_cast<int>(i) * (bar_w + gap);
        const int bh = static_cast<int>(std::abs(values[i]) / vmax * span);
        for (int y = base_y - bh; y < base_y; ++y)
            for (int x = x0; x < x0 + bar_w; ++x) put(y, x, 0.27f, 0.45f, 0.70f);
    }
    (void)title;
    save_image(img, path);
}

json row_to_json(const EvalRow& row) {
    json j;
    j["id"] = row.id;
    j["structure_score"] = row.structure;
    j["style_gram_distance"] = row.gram_distance;
    if (!row.loss_terms.empty()) j["losses"] = row.loss_terms;
    json ext = json::object();
    json prov = json::object();
    for (const auto& [name, s] : row.external) {
        ext[name] = s.value ? json(*s.value) : json(nullptr);
        prov[name] = s.provenance;
    }
    j["external"] = ext;
    j["external_provenance"] = prov;
    j["votes"] = nullptr; // reserved for manually entered user-study data
    return j;
}

} // namespace

void emit_report(const EvalReport& report, const std::string& out_json_path) {
    if (report.rows.empty())
        throw WriteFailure("refusing to emit a report with no rows");
    json j;
    j["rows"] = json::array();
    for (const auto& row : report.rows) j["rows"].push_back(row_to_json(row));
    j["aggregates"] = json::object();
    for (const auto& [name, a] : report.aggregates) {
        j["aggregates"][name] = {{"mean", a.mean}, {"median", a.median}, {"count", a.count}};
    }

    const fs::path out_path(out_json_path);
    if (out_path.has_parent_path())
        fs::create_directories(out_path.parent_path());
    std::ofstream out(out_path);
    if (!out) throw WriteFailure("cannot write report: " + out_json_path);
    out << j.dump(2) << "\n";

    const fs::path dir = out_path.has_parent_path() ? out_path.parent_path() : fs::path(".");
    std::vector<double> structures, grams;
    for (const auto& row : report.rows) {
        structures.push_back(row.structure);
        grams.push_back(row.gram_distance);
    }
    write_bar_plot(structures, "structure_score", (dir / "plot_structure_score.png").string());
    write_bar_plot(grams, "style_gram_distance",
                   (dir / "plot_style_gram_distance.png").string());
}

} // namespace objstyle
