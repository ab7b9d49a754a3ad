#pragma once

#include <map>
#include <optional>
#include <string>
#include <vector>

#include "objstyle/features.hpp"
#include "objstyle/image.hpp"

namespace objstyle {

/// Mean local structural-similarity index over luminance, 11x11 Gaussian
/// windows (sigma 1.5), unit data range. Returns a value in [-1, 1]; 1 for
/// identical images.
double structure_score(const Image& output, const Image& content);

/// Sum over taps of the full-mask gram distance between output and style
/// features, each term 1/(2 N^2)-normalized. Zero when the images coincide.
double style_gram_distance(const VggExtractor& vgg, const Image& output, const Image& style,
                           const std::vector<std::string>& taps);

struct ExternalScore {
    std::optional<double> value; // null when the scorer is unavailable
    std::string provenance;     // "plugin:<id>" or "unavailable:<reason>"
};

/// Invokes the scorer plugin named `scorer` from `plugins_dir` over the
/// stdin/stdout JSON contract ({"image": path, "reference"?: path} ->
/// {"score": number}). Raises ScorerUnavailable when the plugin or its
/// manifest is missing or misbehaves; scores are never fabricated.
double external_score(const std::string& image_path, const std::optional<std::string>& reference,
                      const std::string& scorer, const std::string& plugins_dir);

struct EvalRow {
    std::string id;
    double structure = 0.0;
    double gram_distance = 0.0;
    std::map<std::string, double> loss_terms;
    std::map<std::string, ExternalScore> external;
};

struct Aggregate {
    double mean = 0.0;
    double median = 0.0;
    int count = 0; // non-null cells that entered the aggregate
};

struct EvalReport {
    std::vector<EvalRow> rows;
    std::map<std::string, Aggregate> aggregates;
};

struct EvalConfig {
    int max_side = 256;
    std::vector<std::string> gram_taps = {"conv1_1", "conv2_1", "conv3_1", "conv4_1", "conv5_1"};
    std::vector<std::string> scorers;
    std::string plugins_dir;
    bool with_losses = true; // full-frame loss breakdown per row
};

/// Corpus layout: corpus/<id>/{content.png,style.png,output.png}.
EvalReport evaluate_corpus(const VggExtractor& vgg, const std::string& corpus_dir,
                           const EvalConfig& cfg);

Aggregate aggregate_of(const std::vector<double>& values);

/// Writes report.json plus one bar-plot PNG per metric beside it.
void emit_report(const EvalReport& report, const std::string& out_json_path);

} // namespace objstyle
