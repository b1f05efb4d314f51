// Operator surface: train / eval / gradcheck / oracle / demo.
// Exit codes: 0 success, 1 assertion or acceptance failure, 2 usage or
// config error.  RANKLSD_SEED overrides the configured seeds.

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "ranklsd/config.hpp"
#include "ranklsd/gradcheck.hpp"
#include "ranklsd/inference.hpp"
#include "ranklsd/io.hpp"
#include "ranklsd/metrics.hpp"
#include "ranklsd/rng.hpp"

namespace fs = std::filesystem;
using namespace ranklsd;

namespace {

// usage/config problems exit 2, runtime assertion failures exit 1
struct UsageError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

constexpr std::uint64_t kEvalSeedOffset = 1000003;  // held-out scene stream

void apply_seed_override(RunConfig& cfg, const std::optional<std::uint64_t>& seed) {
    if (seed) {
        cfg.train.seed = *seed;
        cfg.scene.seed = *seed;
    }
}

void print_header(const RunConfig& cfg) {
    std::cout << "# cfg " << config_hash_hex(cfg) << "\n" << to_text(cfg) << std::flush;
}

std::ofstream open_artifact(const fs::path& p, const std::string& hash) {
    std::ofstream os(p);
    if (!os) throw std::runtime_error("cannot write '" + p.string() + "'");
    os << "# cfg " << hash << "\n";
    return os;
}

std::vector<double> parse_thresholds(const std::string& s) {
    std::vector<double> out;
    std::stringstream ss(s);
    std::string item;
    while (std::getline(ss, item, ',')) {
        char* end = nullptr;
        double v = std::strtod(item.c_str(), &end);
        if (end != item.c_str() + item.size() || item.empty() || !(v > 0))
            throw UsageError("bad threshold list '" + s + "'");
        out.push_back(v);
    }
    if (out.empty()) throw UsageError("empty threshold list");
    return out;
}

double lr_scale_at(int step, int total) {
    if (step >= (3 * total) / 4) return 0.01;
    if (step >= total / 2) return 0.1;
    return 1.0;
}

std::string fmt17(double v) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

std::string fmt_g(double v) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%g", v);
    return buf;
}

// ------------------------------------------------------------------ train ---

int run_train(RunConfig cfg, const std::string& resume_path) {
    if (cfg.scene.image_size != cfg.model.input_size)
        throw UsageError("scene.image_size must match model.input_size for training");
    print_header(cfg);

    fs::create_directories(cfg.train.out_dir);
    const fs::path out_dir = cfg.train.out_dir;
    const std::string hash = config_hash_hex(cfg);
    {
        auto os = open_artifact(out_dir / "config.txt", hash);
        os << to_text(cfg);
    }

    Model model(cfg.model, cfg.train.seed);
    AdamW opt(cfg.train.lr, cfg.train.weight_decay);
    int start = 0;
    if (!resume_path.empty()) {
        Checkpoint ck = load_checkpoint(resume_path);
        if (to_text(ck.config) != to_text(cfg))
            throw UsageError("resume checkpoint was produced by a different config");
        apply_checkpoint(ck, model, &opt);
        start = ck.step;
        if (start > cfg.train.steps)
            throw UsageError("checkpoint is already past the requested step count");
    }

    const fs::path log_path = out_dir / "train_log.csv";
    std::ofstream log;
    if (start > 0 && fs::exists(log_path)) {
        log.open(log_path, std::ios::app);
    } else {
        log = open_artifact(log_path, hash);
        log << "step,lr_scale,rank,conf,pos,junc,edge,total,positives,negatives\n";
    }

    TrainSettings ts;
    ts.weights = cfg.loss;
    ts.negative_ratio = cfg.train.negative_ratio;
    ts.rank_grad_through_quality = cfg.train.rank_grad_through_quality;
    ts.position_loss_normalized = cfg.train.position_loss_normalized;

    const int total = cfg.train.steps;
    const int b1 = total / 2, b2 = (3 * total) / 4;
    for (int step = start; step < total; ++step) {
        Sample s = generate(cfg.scene, step % cfg.train.train_scenes);
        const double scale = lr_scale_at(step, total);
        TrainStepStats st = train_step(model, s, ts, opt, scale,
                                       derive_seed(cfg.train.seed, static_cast<std::uint64_t>(step)));
        log << step << ',' << fmt_g(scale) << ',' << fmt17(st.rank) << ',' << fmt17(st.conf)
            << ',' << fmt17(st.pos) << ',' << fmt17(st.junc) << ',' << fmt17(st.edge) << ','
            << fmt17(st.total) << ',' << st.positives << ',' << st.negatives << '\n';
        if ((step + 1) % 25 == 0) log.flush();
        if ((step + 1 == b1 && b1 > 0) || (step + 1 == b2 && b2 != b1)) {
            char name[48];
            std::snprintf(name, sizeof name, "ckpt_step%d.bin", step + 1);
            save_checkpoint((out_dir / name).string(), cfg, model, &opt, step + 1);
        }
        if ((step + 1) % 100 == 0 || step + 1 == total)
            std::cout << "step " << step + 1 << "/" << total << "  total " << st.total
                      << "  rank " << st.rank << "  conf " << st.conf << "  pos " << st.pos
                      << "  junc " << st.junc << "  edge " << st.edge << std::endl;
    }
    save_checkpoint((out_dir / "ckpt_final.bin").string(), cfg, model, &opt, total);
    std::cout << "wrote " << (out_dir / "ckpt_final.bin").string() << std::endl;
    return 0;
}

// ------------------------------------------------------------------- eval ---

void write_eval_csvs(const std::vector<std::vector<ScoredSegment>>& preds,
                     const std::vector<std::vector<LineSegment>>& gts,
                     const std::vector<double>& thresholds, const fs::path& out_dir,
                     const std::string& hash) {
    fs::create_directories(out_dir);
    auto summary = open_artifact(out_dir / "eval.csv", hash);
    summary << "threshold,sap,sf\n";
    std::cout << "threshold,sap,sf\n";
    for (double theta : thresholds) {
        std::vector<PRPoint> curve;
        const double ap = sap(preds, gts, theta, kMetricScale, &curve);
        const double f = sf(preds, gts, theta);
        summary << fmt_g(theta) << ',' << fmt17(ap) << ',' << fmt17(f) << '\n';
        std::cout << fmt_g(theta) << ',' << fmt17(ap) << ',' << fmt17(f) << "\n";
        auto pr = open_artifact(out_dir / ("pr_" + fmt_g(theta) + ".csv"), hash);
        pr << "cutoff,precision,recall\n";
        for (const auto& p : curve)
            pr << fmt17(p.cutoff) << ',' << fmt17(p.precision) << ',' << fmt17(p.recall)
               << '\n';
    }
    std::cout << std::flush;
}

int run_eval_model(const std::string& ckpt_path, const std::string& spec_path,
                   const std::string& thresholds_str, const std::string& out_dir, int level,
                   const std::optional<std::uint64_t>& seed,
                   const std::optional<double>& de, const std::optional<double>& dd,
                   const std::optional<double>& dl, const std::optional<int>& m) {
    Checkpoint ck = load_checkpoint(ckpt_path);
    RunConfig cfg = ck.config;
    apply_seed_override(cfg, seed);

    DatasetSpec ds;
    if (!spec_path.empty()) {
        ds = load_dataset_spec(spec_path);
    } else {
        ds.scene = cfg.scene;
        ds.scene.seed = cfg.scene.seed + kEvalSeedOffset;
        ds.count = cfg.train.eval_scenes;
    }
    if (ds.scene.image_size != cfg.model.input_size)
        throw UsageError("dataset image size does not match the checkpoint's input size");

    RerankWeights rw = cfg.rerank;
    if (de) rw.delta_e = *de;
    if (dd) rw.delta_d = *dd;
    if (dl) rw.delta_l = *dl;
    if (m) rw.samples = *m;

    print_header(cfg);
    Model model = model_from_checkpoint(ck);

    std::vector<std::vector<ScoredSegment>> preds;
    std::vector<std::vector<LineSegment>> gts;
    for (int i = 0; i < ds.count; ++i) {
        Sample s = generate(ds.scene, i);
        preds.push_back(detect_at_level(model, s.image, rw, cfg.detect, level));
        gts.push_back(s.gts);
    }
    write_eval_csvs(preds, gts, parse_thresholds(thresholds_str), out_dir,
                    config_hash_hex(cfg));
    return 0;
}

int run_eval_files(const std::string& preds_path, const std::string& gts_path,
                   const std::string& thresholds_str, const std::string& out_dir) {
    RunConfig defaults;  // file mode has no model; header shows the defaults
    print_header(defaults);

    std::ifstream pf(preds_path);
    if (!pf) throw UsageError("cannot open '" + preds_path + "'");
    std::ifstream gf(gts_path);
    if (!gf) throw UsageError("cannot open '" + gts_path + "'");

    std::vector<ScoredSegment> preds;
    for (const auto& r : read_segment_text(pf)) {
        if (!r.has_score)
            throw UsageError("prediction file '" + preds_path + "' has a segment without a score");
        ScoredSegment d;
        d.seg = r.seg.canonicalized();
        d.c = d.s = r.score;
        preds.push_back(d);
    }
    std::vector<LineSegment> gts;
    for (const auto& r : read_segment_text(gf)) gts.push_back(r.seg.canonicalized());
    if (gts.empty()) throw UsageError("ground-truth file '" + gts_path + "' holds no segments");

    write_eval_csvs({preds}, {gts}, parse_thresholds(thresholds_str), out_dir,
                    config_hash_hex(RunConfig{}));
    return 0;
}

// -------------------------------------------------------------- gradcheck ---

int run_gradcheck(const std::string& scope, std::uint64_t seed, int reps, int probes) {
    RunConfig defaults;
    defaults.train.seed = seed;
    print_header(defaults);

    auto is_loss = [](const std::string& name) {
        return name.find("loss") != std::string::npos;
    };

    bool all_pass = true;
    if (scope == "op" || scope == "loss" || scope == "all") {
        // worst case per target across `reps` seeded repetitions
        std::map<std::string, GradCheckResult> worst;
        for (int rep = 0; rep < reps; ++rep) {
            for (auto& r : op_gradcheck_suite(derive_seed(seed, static_cast<std::uint64_t>(rep)))) {
                const bool loss_case = is_loss(r.name);
                if (scope == "op" && loss_case) continue;
                if (scope == "loss" && !loss_case) continue;
                auto& w = worst[r.name];
                if (w.name.empty()) {
                    w = r;
                } else {
                    w.max_rel_err = std::max(w.max_rel_err, r.max_rel_err);
                    w.max_abs_err = std::max(w.max_abs_err, r.max_abs_err);
                    w.checked += r.checked;
                    w.pass = w.pass && r.pass;
                }
            }
        }
        std::printf("%-32s %8s %14s  %s\n", "target", "entries", "worst_rel_err", "status");
        for (const auto& [name, r] : worst) {
            std::printf("%-32s %8d %14.3e  %s\n", name.c_str(), r.checked, r.max_rel_err,
                        r.pass ? "ok" : "FAIL");
            all_pass = all_pass && r.pass;
        }
    }
    if (scope == "end2end" || scope == "all") {
        GradCheckResult r = end_to_end_gradcheck(seed, probes);
        std::printf("%-32s %8d %14.3e  %s\n", r.name.c_str(), r.checked, r.max_rel_err,
                    r.pass ? "ok" : "FAIL");
        all_pass = all_pass && r.pass;
    }
    std::fflush(stdout);
    return all_pass ? 0 : 1;
}

// ----------------------------------------------------------------- oracle ---

int run_oracle(const std::string& spec_path, int scenes, std::uint64_t seed, int dup,
               double noise_px, const RerankWeights& rw, double theta,
               const std::string& out_dir) {
    RunConfig header_cfg;
    header_cfg.train.seed = seed;
    header_cfg.rerank = rw;

    DatasetSpec ds;
    if (!spec_path.empty()) {
        ds = load_dataset_spec(spec_path);
    } else {
        ds.scene.seed = seed;
        ds.count = scenes;
    }
    header_cfg.scene = ds.scene;
    print_header(header_cfg);

    std::vector<std::vector<ScoredSegment>> pools;
    std::vector<std::vector<LineSegment>> gts;
    for (int i = 0; i < ds.count; ++i) {
        Sample s = generate(ds.scene, i);
        pools.push_back(perturb_candidates(s.gts, derive_seed(seed, static_cast<std::uint64_t>(i)),
                                           dup, noise_px));
        gts.push_back(s.gts);
    }
    auto [before, after] =
        oracle_rerank_experiment(pools, gts, rw, ds.scene.image_size, 1.5, theta);

    std::printf("variant,sap%g\n", theta);
    std::printf("confidence,%.17g\n", before);
    std::printf("reranked,%.17g\n", after);
    std::printf("# uplift %.17g\n", after - before);
    std::fflush(stdout);

    fs::create_directories(out_dir);
    auto os = open_artifact(fs::path(out_dir) / "oracle.csv", config_hash_hex(header_cfg));
    os << "variant,sap" << fmt_g(theta) << "\n";
    os << "confidence," << fmt17(before) << "\n";
    os << "reranked," << fmt17(after) << "\n";
    return 0;
}

// ------------------------------------------------------------------- demo ---

int run_demo(const std::string& ckpt_path, const std::string& spec_path, int index,
             const std::string& out_path) {
    Checkpoint ck = load_checkpoint(ckpt_path);
    RunConfig cfg = ck.config;
    print_header(cfg);

    DatasetSpec ds;
    if (!spec_path.empty()) {
        ds = load_dataset_spec(spec_path);
    } else {
        ds.scene = cfg.scene;
        ds.scene.seed = cfg.scene.seed + kEvalSeedOffset;
        ds.count = cfg.train.eval_scenes;
    }
    if (ds.scene.image_size != cfg.model.input_size)
        throw UsageError("dataset image size does not match the checkpoint's input size");
    if (index < 0 || index >= ds.count) throw UsageError("sample index out of range");

    Model model = model_from_checkpoint(ck);
    Sample s = generate(ds.scene, index);
    std::vector<ScoredSegment> dets = detect(model, s.image, cfg.rerank, cfg.detect);
    write_scene_svg(out_path, s.image, s.gts, dets, "cfg " + config_hash_hex(cfg));
    std::cout << "wrote " << out_path << " (" << dets.size() << " detections, "
              << s.gts.size() << " ground-truth segments)" << std::endl;
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"line segment detector: matched prediction, ranking loss, geometric re-ranking"};
    app.require_subcommand(1);

    std::optional<std::uint64_t> seed_override;
    if (const char* env = std::getenv("RANKLSD_SEED")) {
        char* end = nullptr;
        errno = 0;
        unsigned long long v = std::strtoull(env, &end, 10);
        if (errno != 0 || end == env || *end != '\0') {
            std::cerr << "error: RANKLSD_SEED is not an unsigned integer\n";
            return 2;
        }
        seed_override = v;
    }

    // train
    auto* tr = app.add_subcommand("train", "optimize a detector on synthetic scenes");
    std::string tr_config, tr_resume, tr_out;
    int tr_steps = -1;
    std::uint64_t tr_seed = 0;
    tr->add_option("--config", tr_config, "run config file (defaults when omitted)");
    tr->add_option("--steps", tr_steps, "override train.steps");
    tr->add_option("--seed", tr_seed, "override every seed");
    tr->add_option("--out", tr_out, "override train.out_dir");
    tr->add_option("--resume", tr_resume, "checkpoint to continue from");

    // eval
    auto* ev = app.add_subcommand("eval", "score detections against ground truth");
    std::string ev_ckpt, ev_spec, ev_preds, ev_gts, ev_out = "eval_out";
    std::string ev_thresholds = "5,10,15";
    int ev_level = 0;
    std::uint64_t ev_seed = 0;
    double ev_de = 0, ev_dd = 0, ev_dl = 0;
    int ev_m = 0;
    ev->add_option("--ckpt", ev_ckpt, "checkpoint to evaluate");
    ev->add_option("--spec", ev_spec, "dataset spec file (default: held-out stream)");
    ev->add_option("--preds", ev_preds, "prediction segment file (file mode)");
    ev->add_option("--gts", ev_gts, "ground-truth segment file (file mode)");
    ev->add_option("--thresholds", ev_thresholds, "comma-separated theta list")
        ->capture_default_str();
    ev->add_option("--out", ev_out, "output directory")->capture_default_str();
    ev->add_option("--level", ev_level, "pyramid level to decode from (ablation)")
        ->capture_default_str();
    ev->add_option("--seed", ev_seed, "override every seed");
    auto* ev_de_o = ev->add_option("--delta-e", ev_de, "endpoint fusion weight override");
    auto* ev_dd_o = ev->add_option("--delta-d", ev_dd, "edge fusion weight override");
    auto* ev_dl_o = ev->add_option("--delta-l", ev_dl, "length fusion weight override");
    auto* ev_m_o = ev->add_option("--samples", ev_m, "edge-score sample count override");

    // gradcheck
    auto* gc = app.add_subcommand("gradcheck", "verify tape gradients against finite differences");
    std::string gc_scope = "all";
    std::uint64_t gc_seed = 7;
    int gc_reps = 20, gc_probes = 32;
    gc->add_option("--scope", gc_scope, "op | loss | end2end | all")->capture_default_str();
    gc->add_option("--seed", gc_seed, "base seed")->capture_default_str();
    gc->add_option("--cases", gc_reps, "seeded repetitions per target")->capture_default_str();
    gc->add_option("--probes", gc_probes, "end-to-end probe count")->capture_default_str();

    // oracle
    auto* orc = app.add_subcommand("oracle", "ground-truth re-ranking uplift experiment");
    std::string orc_spec, orc_out = "oracle_out";
    int orc_scenes = 200, orc_dup = 4, orc_samples = 32;
    std::uint64_t orc_seed = 7;
    double orc_noise = 6.0, orc_de = 0.5, orc_dd = 0.5, orc_dl = 0.5, orc_theta = 10.0;
    orc->add_option("--spec", orc_spec, "dataset spec file");
    orc->add_option("--scenes", orc_scenes, "scene count")->capture_default_str();
    orc->add_option("--seed", orc_seed, "base seed")->capture_default_str();
    orc->add_option("--dup", orc_dup, "candidates per gt")->capture_default_str();
    orc->add_option("--noise-px", orc_noise, "decoy endpoint noise (px at 128)")
        ->capture_default_str();
    orc->add_option("--delta-e", orc_de, "endpoint fusion weight")->capture_default_str();
    orc->add_option("--delta-d", orc_dd, "edge fusion weight")->capture_default_str();
    orc->add_option("--delta-l", orc_dl, "length fusion weight")->capture_default_str();
    orc->add_option("--samples", orc_samples, "edge-score sample count")->capture_default_str();
    orc->add_option("--theta", orc_theta, "matching threshold")->capture_default_str();
    orc->add_option("--out", orc_out, "output directory")->capture_default_str();

    // demo
    auto* dm = app.add_subcommand("demo", "render one scene with detections as SVG");
    std::string dm_ckpt, dm_spec, dm_out = "demo.svg";
    int dm_index = 0;
    dm->add_option("--ckpt", dm_ckpt, "checkpoint")->required();
    dm->add_option("--spec", dm_spec, "dataset spec file (default: held-out stream)");
    dm->add_option("--index", dm_index, "sample index")->capture_default_str();
    dm->add_option("--out", dm_out, "output SVG path")->capture_default_str();

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : 2;
    }

    try {
        if (tr->parsed()) {
            RunConfig cfg = tr_config.empty() ? RunConfig{} : load_run_config(tr_config);
            apply_seed_override(cfg, seed_override);
            if (tr->count("--seed")) apply_seed_override(cfg, tr_seed);
            if (tr->count("--steps")) {
                if (tr_steps < 0) throw UsageError("--steps must be >= 0");
                cfg.train.steps = tr_steps;
            }
            if (tr->count("--out")) cfg.train.out_dir = tr_out;
            return run_train(std::move(cfg), tr_resume);
        }
        if (ev->parsed()) {
            const bool file_mode = !ev_preds.empty() || !ev_gts.empty();
            if (file_mode) {
                if (ev_preds.empty() || ev_gts.empty())
                    throw UsageError("file mode needs both --preds and --gts");
                if (!ev_ckpt.empty())
                    throw UsageError("--ckpt cannot be combined with --preds/--gts");
                return run_eval_files(ev_preds, ev_gts, ev_thresholds, ev_out);
            }
            if (ev_ckpt.empty()) throw UsageError("eval needs --ckpt or --preds/--gts");
            std::optional<std::uint64_t> seed = seed_override;
            if (ev->count("--seed")) seed = ev_seed;
            return run_eval_model(ev_ckpt, ev_spec, ev_thresholds, ev_out, ev_level, seed,
                                  ev_de_o->count() ? std::optional<double>(ev_de) : std::nullopt,
                                  ev_dd_o->count() ? std::optional<double>(ev_dd) : std::nullopt,
                                  ev_dl_o->count() ? std::optional<double>(ev_dl) : std::nullopt,
                                  ev_m_o->count() ? std::optional<int>(ev_m) : std::nullopt);
        }
        if (gc->parsed()) {
            if (gc_scope != "op" && gc_scope != "loss" && gc_scope != "end2end" &&
                gc_scope != "all")
                throw UsageError("unknown gradcheck scope '" + gc_scope + "'");
            std::uint64_t seed = seed_override.value_or(gc_seed);
            return run_gradcheck(gc_scope, seed, gc_reps, gc_probes);
        }
        if (orc->parsed()) {
            RerankWeights rw{orc_de, orc_dd, orc_dl, orc_samples};
            std::uint64_t seed = seed_override.value_or(orc_seed);
            return run_oracle(orc_spec, orc_scenes, seed, orc_dup, orc_noise, rw, orc_theta,
                              orc_out);
        }
        if (dm->parsed()) return run_demo(dm_ckpt, dm_spec, dm_index, dm_out);
    } catch (const UsageError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    } catch (const std::exception& e) {
        // malformed configs and input files are usage errors; anything else
        // is a runtime assertion
        const std::string what = e.what();
        std::cerr << "error: " << what << "\n";
        const bool usage = what.rfind("config:", 0) == 0 || what.rfind("io:", 0) == 0 ||
                           what.rfind("segment text", 0) == 0;
        return usage ? 2 : 1;
    }
    return 2;
}
