#include "support/doctest_torch.hpp"

#include <array>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>

#include <unistd.h>

#include <nlohmann/json.hpp>

#include "objstyle/image.hpp"
#include "support/test_support.hpp"

namespace fs = std::filesystem;
using json = nlohmann::json;
using objstyle::Image;

namespace {

struct CmdResult {
    int code = -1;
    std::string out;
    std::string err;
};

std::string slurp(const fs::path& p) {
    std::ifstream f(p);
    return std::string(std::istreambuf_iterator<char>(f), {});
}

CmdResult run_cli(const std::string& args) {
    static int counter = 0;
    const auto dir = fs::temp_directory_path();
    const auto tag = std::to_string(::getpid()) + "_" + std::to_string(counter++);
    const auto out_path = dir / ("objstyle_cli_out_" + tag);
    const auto err_path = dir / ("objstyle_cli_err_" + tag);
    const std::string cmd = std::string("OBJSTYLE_VGG_WEIGHTS=") + testsup::shared_weights_path() +
                            " " + OBJSTYLE_CLI_PATH + " " + args + " > " + out_path.string() +
                            " 2> " + err_path.string();
    const int status = std::system(cmd.c_str());
    CmdResult r;
    r.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
    r.out = slurp(out_path);
    r.err = slurp(err_path);
    fs::remove(out_path);
    fs::remove(err_path);
    return r;
}

// one shared fixture directory holding a small STP instance as files
struct CliFixture {
    fs::path dir;
    std::string content, style, cmask, smask, cmask3, palette;

    CliFixture() {
        dir = fs::temp_directory_path() / ("objstyle_clifix_" + std::to_string(::getpid()));
        fs::remove_all(dir);
        fs::create_directories(dir);

        auto inst = testsup::make_stp_e(48, 48, 95);
        content = (dir / "content.png").string();
        style = (dir / "style.png").string();
        objstyle::save_image(inst.content, content);
        objstyle::save_image(inst.style, style);

        cmask = (dir / "cmask.png").string();
        smask = (dir / "smask.png").string();
        save_mask_png(inst.content_mask, cmask);
        save_mask_png(inst.style_mask, smask);

        // three-band content mask for the STP-C scenario
        auto mask3 = testsup::make_band_mask(48, 48, {"sky", "building", "lake"},
                                             {0.4, 0.35, 0.25});
        cmask3 = (dir / "cmask3.png").string();
        save_mask_png(mask3, cmask3);

        palette = (dir / "palette.json").string();
        std::ofstream(palette) << R"({"#0000FF": "sky", "#00FF00": "building",)"
                               << R"( "#FF0000": "lake"})";
    }

    static void save_mask_png(const objstyle::SegmentationMask& mask, const std::string& path) {
        static const std::array<std::array<float, 3>, 3> colors = {
            {{0, 0, 1}, {0, 1, 0}, {1, 0, 0}}};
        Image img(mask.height, mask.width);
        for (size_t k = 0; k < mask.size(); ++k)
            for (int y = 0; y < mask.height; ++y)
                for (int x = 0; x < mask.width; ++x)
                    if (mask.channels[k][static_cast<size_t>(y) * mask.width + x])
                        for (int c = 0; c < 3; ++c) img.at(y, x, c) = colors[k][c];
        objstyle::save_image(img, path);
    }

    std::string common_args() const {
        return "--content " + content + " --style " + style + " --content-mask " + cmask +
               " --style-mask " + smask + " --palette " + palette + " --max-side 48";
    }
};

const CliFixture& fixture() {
    static CliFixture f;
    return f;
}

} // namespace

TEST_CASE("missing required flag exits 2 naming the flag") {
    const auto& f = fixture();
    auto r = run_cli("run --content " + f.content + " --content-mask " + f.cmask +
                     " --style-mask " + f.smask + " --out-dir /tmp/x");
    CHECK(r.code == 2);
    CHECK(r.err.find("--style") != std::string::npos);
}

TEST_CASE("unknown subcommand or none exits 2") {
    CHECK(run_cli("").code == 2);
    CHECK(run_cli("frobnicate").code == 2);
}

TEST_CASE("minimal run writes final image, checkpoints and history") {
    const auto& f = fixture();
    const auto out_dir = f.dir / "run_out";
    fs::remove_all(out_dir);
    auto r = run_cli("run " + f.common_args() + " --iterations 1 --checkpoint-every 1 --out-dir " +
                     out_dir.string());
    CAPTURE(r.err);
    CHECK(r.code == 0);
    CHECK(fs::exists(out_dir / "final.png"));
    CHECK(fs::exists(out_dir / "step_1.png"));
    CHECK(!fs::exists(out_dir / "step_2.png")); // exactly one checkpoint plus final

    std::ifstream hist(out_dir / "history.jsonl");
    std::string line;
    int steps = 0;
    json last;
    while (std::getline(hist, line)) {
        last = json::parse(line);
        ++steps;
    }
    CHECK(steps == 2); // one step plus the terminal record
    CHECK(last.value("final", false));
}

TEST_CASE("losses on the content candidate prints the expected schema") {
    const auto& f = fixture();
    auto r = run_cli("losses " + f.common_args() + " --candidate " + f.content);
    CAPTURE(r.err);
    REQUIRE(r.code == 0);
    auto j = json::parse(r.out);

    // STP-E schema: no unmapped keys
    const std::vector<std::string> expected = {"dps_style", "dps_content", "photorealism",
                                               "ctx_content", "total"};
    CHECK(j.size() == expected.size());
    for (const auto& key : expected) CHECK(j.contains(key));
    CHECK(j["dps_content"].get<double>() == 0.0); // candidate == content
    CHECK(j["ctx_content"].get<double>() <= 0.011 * 2);

    double sum = 0;
    for (const auto& key : expected)
        if (key != "total") sum += j[key].get<double>();
    CHECK(sum == doctest::Approx(j["total"].get<double>()).epsilon(1e-9));
}

TEST_CASE("losses on an STP-C instance includes the unmapped terms") {
    const auto& f = fixture();
    auto r = run_cli("losses --content " + f.content + " --style " + f.style + " --content-mask " +
                     f.cmask3 + " --style-mask " + f.smask + " --palette " + f.palette +
                     " --max-side 48 --candidate " + f.content);
    CAPTURE(r.err);
    REQUIRE(r.code == 0);
    auto j = json::parse(r.out);
    CHECK(j.contains("gram_unmapped"));
    CHECK(j.contains("ctx_unmapped"));
}

TEST_CASE("losses reproduces the final logged breakdown of a run") {
    const auto& f = fixture();
    const auto out_dir = f.dir / "run_repro";
    fs::remove_all(out_dir);
    auto r = run_cli("run " + f.common_args() + " --iterations 2 --out-dir " + out_dir.string());
    REQUIRE(r.code == 0);

    json final_rec;
    {
        std::ifstream hist(out_dir / "history.jsonl");
        std::string line;
        while (std::getline(hist, line)) {
            auto j = json::parse(line);
            if (j.value("final", false)) final_rec = j;
        }
    }
    REQUIRE(!final_rec.is_null());

    auto r2 = run_cli("losses " + f.common_args() + " --candidate " +
                      (out_dir / "final.png").string());
    REQUIRE(r2.code == 0);
    auto j2 = json::parse(r2.out);
    const double logged = final_rec["total"].get<double>();
    CHECK(j2["total"].get<double>() ==
          doctest::Approx(logged).epsilon(1e-6));
}

TEST_CASE("DPS+ ablation flag runs") {
    const auto& f = fixture();
    const auto out_dir = f.dir / "run_ablate";
    fs::remove_all(out_dir);
    auto r = run_cli("run --content " + f.content + " --style " + f.style + " --content-mask " +
                     f.cmask3 + " --style-mask " + f.smask + " --palette " + f.palette +
                     " --max-side 48 --alpha2 0 --iterations 1 --out-dir " + out_dir.string());
    CAPTURE(r.err);
    CHECK(r.code == 0);
}

TEST_CASE("flags override config-file values") {
    const auto& f = fixture();
    const auto cfg_path = f.dir / "cfg.json";
    std::ofstream(cfg_path) << R"({"iterations": 5, "checkpoint_every": 0})";
    const auto out_dir = f.dir / "run_precedence";
    fs::remove_all(out_dir);
    auto r = run_cli("run " + f.common_args() + " --config " + cfg_path.string() +
                     " --iterations 1 --out-dir " + out_dir.string());
    CAPTURE(r.err);
    REQUIRE(r.code == 0);
    std::ifstream hist(out_dir / "history.jsonl");
    std::string line;
    int steps = 0;
    while (std::getline(hist, line))
        if (!json::parse(line).value("final", false)) ++steps;
    CHECK(steps == 1); // the flag beat the config file
}

TEST_CASE("bad inputs exit 2") {
    const auto& f = fixture();
    auto r = run_cli("run " + f.common_args() + " --iterations 0 --out-dir /tmp/x");
    CHECK(r.code == 2); // invalid config value

    auto r2 = run_cli("run --content /nonexistent.png --style " + f.style + " --content-mask " +
                      f.cmask + " --style-mask " + f.smask + " --out-dir /tmp/x");
    CHECK(r2.code == 2);
}

TEST_CASE("eval requires a well-formed corpus") {
    const auto& f = fixture();
    const auto empty = f.dir / "empty_corpus";
    fs::create_directories(empty);
    auto r = run_cli("eval --corpus " + empty.string() + " --out " +
                     (f.dir / "report.json").string());
    CHECK(r.code == 2);
}

TEST_CASE("eval writes a report for a valid corpus") {
    const auto& f = fixture();
    const auto corpus = f.dir / "corpus";
    fs::create_directories(corpus / "one");
    fs::copy_file(f.content, corpus / "one" / "content.png",
                  fs::copy_options::overwrite_existing);
    fs::copy_file(f.style, corpus / "one" / "style.png", fs::copy_options::overwrite_existing);
    fs::copy_file(f.content, corpus / "one" / "output.png",
                  fs::copy_options::overwrite_existing);

    const auto report_path = f.dir / "report" / "report.json";
    auto r = run_cli("eval --corpus " + corpus.string() + " --out " + report_path.string() +
                     " --max-side 48 --scorers nima");
    CAPTURE(r.err);
    REQUIRE(r.code == 0);
    auto j = json::parse(slurp(report_path));
    REQUIRE(j["rows"].size() == 1);
    CHECK(j["rows"][0]["structure_score"].get<double>() == doctest::Approx(1.0).epsilon(1e-6));
    CHECK(j["rows"][0]["external"]["nima"].is_null());
}
