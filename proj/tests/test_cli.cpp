// Exercises the installed command-line surface end to end.  The path of the
// ranklsd binary arrives as the first argument (wired up by CMake).
#define DOCTEST_CONFIG_IMPLEMENT
#include "doctest.h"

#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#ifndef _WIN32
#include <sys/wait.h>
#endif

namespace fs = std::filesystem;

namespace {

std::string g_bin;

int run(const std::string& args) {
    const std::string cmd = g_bin + " " + args + " > /dev/null 2>&1";
    const int rc = std::system(cmd.c_str());
#ifndef _WIN32
    return WIFEXITED(rc) ? WEXITSTATUS(rc) : -1;
#else
    return rc;
#endif
}

// run and capture combined stdout/stderr
int run_capture(const std::string& args, std::string& out) {
    const fs::path tmp = fs::path("cli_capture.tmp");
    const std::string cmd = g_bin + " " + args + " > " + tmp.string() + " 2>&1";
    const int rc = std::system(cmd.c_str());
    std::ifstream in(tmp);
    std::stringstream ss;
    ss << in.rdbuf();
    out = ss.str();
    fs::remove(tmp);
#ifndef _WIN32
    return WIFEXITED(rc) ? WEXITSTATUS(rc) : -1;
#else
    return rc;
#endif
}

void write_file(const fs::path& p, const std::string& text) {
    std::ofstream out(p);
    out << text;
}

std::string first_line(const fs::path& p) {
    std::ifstream in(p);
    std::string line;
    std::getline(in, line);
    return line;
}

const char* kTinyConfig =
    "model.input_size = 16\n"
    "model.levels = 16,8\n"
    "model.hidden_dim = 16\n"
    "model.encoder_layers = 1\n"
    "model.heads = 2\n"
    "model.referring_points = 2\n"
    "scene.image_size = 16\n"
    "scene.max_segments = 2\n"
    "train.steps = 2\n"
    "train.train_scenes = 2\n"
    "train.eval_scenes = 2\n";

}  // namespace

TEST_CASE("usage problems exit with code 2") {
    CHECK(run("") == 2);
    CHECK(run("frobnicate") == 2);
    CHECK(run("gradcheck --scope typo") == 2);
    CHECK(run("gradcheck --no-such-flag") == 2);
    CHECK(run("eval") == 2);
    CHECK(run("eval --preds only.txt") == 2);
    CHECK(run("demo") == 2);  // --ckpt is required
    CHECK(run("train --config no_such_config.cfg") == 2);
    CHECK(run("train --steps -1") == 2);
    CHECK(run("eval --ckpt no_such_checkpoint.bin") == 2);
}

TEST_CASE("the help text lists every subcommand") {
    std::string out;
    CHECK(run_capture("--help", out) == 0);
    for (const char* sub : {"train", "eval", "gradcheck", "oracle", "demo"})
        CHECK(out.find(sub) != std::string::npos);
}

TEST_CASE("the seed override env var is validated") {
    const std::string saved = g_bin;
    g_bin = "RANKLSD_SEED=notanumber " + g_bin;
    CHECK(run("gradcheck --scope loss --cases 1") == 2);
    g_bin = "RANKLSD_SEED=12345 " + saved;
    CHECK(run("gradcheck --scope loss --cases 1") == 0);
    g_bin = saved;
}

TEST_CASE("gradcheck reports per-target status and passes") {
    std::string out;
    CHECK(run_capture("gradcheck --scope loss --cases 2", out) == 0);
    CHECK(out.find("worst_rel_err") != std::string::npos);
    CHECK(out.find("loss") != std::string::npos);
    CHECK(out.find(" ok") != std::string::npos);
    CHECK(out.find("FAIL") == std::string::npos);
}

TEST_CASE("file-mode eval scores segment lists") {
    const fs::path dir = "cli_eval_files";
    fs::create_directories(dir);
    write_file(dir / "gts.txt", "0.1 0.1 0.9 0.1\n0.2 0.5 0.8 0.5\n");
    write_file(dir / "empty.txt", "# no detections\n");
    write_file(dir / "perfect.txt", "0.1 0.1 0.9 0.1 0.9\n0.2 0.5 0.8 0.5 0.8\n");
    write_file(dir / "unscored.txt", "0.1 0.1 0.9 0.1\n");

    std::string out;
    SUBCASE("no detections give zero average precision") {
        const std::string cmd = "eval --preds " + (dir / "empty.txt").string() + " --gts " +
                                (dir / "gts.txt").string() + " --out " +
                                (dir / "out_empty").string();
        CHECK(run_capture(cmd, out) == 0);
        CHECK(out.find("threshold,sap,sf") != std::string::npos);
        CHECK(out.find("5,0,0") != std::string::npos);
        CHECK(out.find("10,0,0") != std::string::npos);
        CHECK(out.find("15,0,0") != std::string::npos);
        CHECK(first_line(dir / "out_empty" / "eval.csv").rfind("# cfg ", 0) == 0);
    }
    SUBCASE("exact detections give a perfect score") {
        const std::string cmd = "eval --preds " + (dir / "perfect.txt").string() + " --gts " +
                                (dir / "gts.txt").string() + " --out " +
                                (dir / "out_perfect").string();
        CHECK(run_capture(cmd, out) == 0);
        CHECK(out.find("10,1,1") != std::string::npos);
        CHECK(fs::exists(dir / "out_perfect" / "pr_10.csv"));
    }
    SUBCASE("custom threshold lists are honored") {
        const std::string cmd = "eval --preds " + (dir / "perfect.txt").string() + " --gts " +
                                (dir / "gts.txt").string() + " --thresholds 2.5,7 --out " +
                                (dir / "out_custom").string();
        CHECK(run_capture(cmd, out) == 0);
        CHECK(out.find("2.5,") != std::string::npos);
        CHECK(out.find("\n7,") != std::string::npos);
        CHECK(out.find("15,") == std::string::npos);
    }
    SUBCASE("malformed inputs are usage errors") {
        const std::string base = "eval --gts " + (dir / "gts.txt").string();
        CHECK(run(base + " --preds " + (dir / "unscored.txt").string()) == 2);
        CHECK(run("eval --preds " + (dir / "empty.txt").string() + " --gts " +
                  (dir / "empty.txt").string()) == 2);
        CHECK(run(base + " --preds " + (dir / "empty.txt").string() + " --thresholds abc") == 2);
        CHECK(run(base + " --preds " + (dir / "empty.txt").string() + " --thresholds 0") == 2);
        CHECK(run(base + " --preds " + (dir / "empty.txt").string() + " --ckpt x.bin") == 2);
    }
    fs::remove_all(dir);
}

TEST_CASE("a tiny training run leaves the documented artifacts behind") {
    const fs::path dir = "cli_train_run";
    fs::remove_all(dir);
    fs::create_directories(dir);
    write_file(dir / "run.cfg", std::string(kTinyConfig) +
                                    "train.out_dir = " + (dir / "run").string() + "\n");

    std::string out;
    REQUIRE(run_capture("train --config " + (dir / "run.cfg").string(), out) == 0);
    CHECK(out.rfind("# cfg ", 0) == 0);
    CHECK(out.find("wrote") != std::string::npos);

    CHECK(first_line(dir / "run" / "config.txt").rfind("# cfg ", 0) == 0);
    CHECK(fs::exists(dir / "run" / "ckpt_step1.bin"));
    CHECK(fs::exists(dir / "run" / "ckpt_final.bin"));

    std::ifstream log(dir / "run" / "train_log.csv");
    std::string line;
    std::getline(log, line);
    CHECK(line.rfind("# cfg ", 0) == 0);
    std::getline(log, line);
    CHECK(line == "step,lr_scale,rank,conf,pos,junc,edge,total,positives,negatives");
    int rows = 0;
    while (std::getline(log, line))
        if (!line.empty()) ++rows;
    CHECK(rows == 2);

    SUBCASE("the checkpoint evaluates on the held-out stream") {
        const std::string ckpt = (dir / "run" / "ckpt_final.bin").string();
        CHECK(run_capture("eval --ckpt " + ckpt + " --out " + (dir / "ev").string(), out) == 0);
        CHECK(out.find("threshold,sap,sf") != std::string::npos);
        CHECK(fs::exists(dir / "ev" / "eval.csv"));
        CHECK(fs::exists(dir / "ev" / "pr_5.csv"));
        CHECK(fs::exists(dir / "ev" / "pr_15.csv"));

        // the ablation level must exist
        CHECK(run("eval --ckpt " + ckpt + " --level 1 --out " + (dir / "ev1").string()) == 0);
        CHECK(run("eval --ckpt " + ckpt + " --level 9 --out " + (dir / "ev9").string()) == 1);

        // fusion overrides are accepted
        CHECK(run("eval --ckpt " + ckpt + " --delta-e 0 --delta-d 0 --delta-l 0 --samples 4" +
                  " --out " + (dir / "ev0").string()) == 0);
    }
    SUBCASE("demo renders a scene") {
        const std::string ckpt = (dir / "run" / "ckpt_final.bin").string();
        const fs::path svg = dir / "demo.svg";
        CHECK(run_capture("demo --ckpt " + ckpt + " --index 0 --out " + svg.string(), out) == 0);
        REQUIRE(fs::exists(svg));
        std::ifstream in(svg);
        std::stringstream ss;
        ss << in.rdbuf();
        CHECK(ss.str().find("<svg") != std::string::npos);
        CHECK(run("demo --ckpt " + ckpt + " --index 99 --out " + svg.string()) == 2);
    }
    SUBCASE("training resumes from its own checkpoint") {
        write_file(dir / "longer.cfg", std::string(kTinyConfig) +
                                           "train.out_dir = " + (dir / "run").string() + "\n");
        // same config, resume from the final step: nothing left to do
        CHECK(run("train --config " + (dir / "longer.cfg").string() + " --resume " +
                  (dir / "run" / "ckpt_final.bin").string()) == 0);
    }
    fs::remove_all(dir);
}

TEST_CASE("a step count of zero is an eval-only run") {
    const fs::path dir = "cli_train_zero";
    fs::remove_all(dir);
    fs::create_directories(dir);
    write_file(dir / "run.cfg", std::string(kTinyConfig) + "train.out_dir = " +
                                    (dir / "run").string() + "\n");
    CHECK(run("train --config " + (dir / "run.cfg").string() + " --steps 0") == 0);
    CHECK(fs::exists(dir / "run" / "ckpt_final.bin"));
    CHECK(!fs::exists(dir / "run" / "ckpt_step1.bin"));
    fs::remove_all(dir);
}

TEST_CASE("training rejects a scene size that does not fit the model") {
    const fs::path dir = "cli_train_mismatch";
    fs::remove_all(dir);
    fs::create_directories(dir);
    std::string cfg(kTinyConfig);
    const std::string from = "scene.image_size = 16\n";
    cfg.replace(cfg.find(from), from.size(), "scene.image_size = 32\n");
    write_file(dir / "run.cfg", cfg);
    CHECK(run("train --config " + (dir / "run.cfg").string()) == 2);
    fs::remove_all(dir);
}

TEST_CASE("the oracle experiment prints both variants") {
    const fs::path dir = "cli_oracle";
    fs::remove_all(dir);
    std::string out;
    CHECK(run_capture("oracle --scenes 3 --dup 2 --out " + dir.string(), out) == 0);
    CHECK(out.find("confidence,") != std::string::npos);
    CHECK(out.find("reranked,") != std::string::npos);
    CHECK(out.find("uplift") != std::string::npos);
    CHECK(fs::exists(dir / "oracle.csv"));
    fs::remove_all(dir);
}

int main(int argc, char** argv) {
    if (argc < 2) {
        std::fprintf(stderr, "usage: test_cli <path-to-ranklsd> [doctest options]\n");
        return 2;
    }
    g_bin = argv[1];
    std::vector<char*> args;
    args.push_back(argv[0]);
    for (int i = 2; i < argc; ++i) args.push_back(argv[i]);
    doctest::Context ctx(static_cast<int>(args.size()), args.data());
    return ctx.run();
}
