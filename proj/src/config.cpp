#include "ranklsd/config.hpp"

#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <functional>
#include <set>
#include <sstream>
#include <stdexcept>

namespace ranklsd {

namespace {

[[noreturn]] void fail(const std::string& msg) { throw TensorError("config: " + msg); }

[[noreturn]] void fail_line(int line, const std::string& msg) {
    fail("line " + std::to_string(line) + ": " + msg);
}

std::string fmt_double(double v) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

std::string trim(const std::string& s) {
    std::size_t a = s.find_first_not_of(" \t\r");
    if (a == std::string::npos) return "";
    std::size_t b = s.find_last_not_of(" \t\r");
    return s.substr(a, b - a + 1);
}

long long parse_int(const std::string& v, int line) {
    char* end = nullptr;
    errno = 0;
    long long r = std::strtoll(v.c_str(), &end, 10);
    if (errno != 0 || end != v.c_str() + v.size() || v.empty())
        fail_line(line, "expected an integer, got '" + v + "'");
    return r;
}

std::uint64_t parse_u64(const std::string& v, int line) {
    char* end = nullptr;
    errno = 0;
    unsigned long long r = std::strtoull(v.c_str(), &end, 10);
    if (errno != 0 || end != v.c_str() + v.size() || v.empty() || v[0] == '-')
        fail_line(line, "expected an unsigned integer, got '" + v + "'");
    return r;
}

double parse_double(const std::string& v, int line) {
    char* end = nullptr;
    errno = 0;
    double r = std::strtod(v.c_str(), &end);
    if (errno != 0 || end != v.c_str() + v.size() || v.empty())
        fail_line(line, "expected a number, got '" + v + "'");
    return r;
}

bool parse_bool(const std::string& v, int line) {
    if (v == "true") return true;
    if (v == "false") return false;
    fail_line(line, "expected true or false, got '" + v + "'");
}

std::vector<int> parse_levels(const std::string& v, int line) {
    std::vector<int> out;
    std::stringstream ss(v);
    std::string item;
    while (std::getline(ss, item, ','))
        out.push_back(static_cast<int>(parse_int(trim(item), line)));
    if (out.empty()) fail_line(line, "expected a comma-separated resolution list");
    return out;
}

std::string join_levels(const std::vector<int>& levels) {
    std::string out;
    for (std::size_t i = 0; i < levels.size(); ++i) {
        if (i) out += ",";
        out += std::to_string(levels[i]);
    }
    return out;
}

// shared between the run config and the dataset manifest
bool apply_scene_key(SceneSpec& s, const std::string& key, const std::string& val, int line) {
    if (key == "scene.seed")
        s.seed = parse_u64(val, line);
    else if (key == "scene.image_size")
        s.image_size = static_cast<int>(parse_int(val, line));
    else if (key == "scene.min_segments")
        s.min_segments = static_cast<int>(parse_int(val, line));
    else if (key == "scene.max_segments")
        s.max_segments = static_cast<int>(parse_int(val, line));
    else if (key == "scene.weight_box")
        s.weight_box = parse_double(val, line);
    else if (key == "scene.weight_polygon")
        s.weight_polygon = parse_double(val, line);
    else if (key == "scene.weight_free")
        s.weight_free = parse_double(val, line);
    else if (key == "scene.noise_sigma")
        s.noise_sigma = parse_double(val, line);
    else if (key == "scene.blur_passes")
        s.blur_passes = static_cast<int>(parse_int(val, line));
    else if (key == "scene.background_lo")
        s.background_lo = parse_double(val, line);
    else if (key == "scene.background_hi")
        s.background_hi = parse_double(val, line);
    else if (key == "scene.stroke_level")
        s.stroke_level = parse_double(val, line);
    else if (key == "scene.min_length_px")
        s.min_length_px = parse_double(val, line);
    else
        return false;
    return true;
}

void put_scene_text(std::string& out, const SceneSpec& s) {
    auto put = [&](const char* k, const std::string& v) {
        out += k;
        out += " = ";
        out += v;
        out += "\n";
    };
    put("scene.seed", std::to_string(s.seed));
    put("scene.image_size", std::to_string(s.image_size));
    put("scene.min_segments", std::to_string(s.min_segments));
    put("scene.max_segments", std::to_string(s.max_segments));
    put("scene.weight_box", fmt_double(s.weight_box));
    put("scene.weight_polygon", fmt_double(s.weight_polygon));
    put("scene.weight_free", fmt_double(s.weight_free));
    put("scene.noise_sigma", fmt_double(s.noise_sigma));
    put("scene.blur_passes", std::to_string(s.blur_passes));
    put("scene.background_lo", fmt_double(s.background_lo));
    put("scene.background_hi", fmt_double(s.background_hi));
    put("scene.stroke_level", fmt_double(s.stroke_level));
    put("scene.min_length_px", fmt_double(s.min_length_px));
}

// strict key=value reader: comments stripped, duplicates rejected
void parse_kv(const std::string& text,
              const std::function<void(const std::string&, const std::string&, int)>& handle) {
    std::set<std::string> seen;
    std::stringstream ss(text);
    std::string raw;
    int line = 0;
    while (std::getline(ss, raw)) {
        ++line;
        std::size_t hash = raw.find('#');
        if (hash != std::string::npos) raw.erase(hash);
        std::string s = trim(raw);
        if (s.empty()) continue;
        std::size_t eq = s.find('=');
        if (eq == std::string::npos) fail_line(line, "expected 'key = value'");
        std::string key = trim(s.substr(0, eq));
        std::string val = trim(s.substr(eq + 1));
        if (key.empty()) fail_line(line, "empty key");
        if (!seen.insert(key).second) fail_line(line, "duplicate key '" + key + "'");
        handle(key, val, line);
    }
}

}  // namespace

std::string to_text(const RunConfig& c) {
    std::string out;
    auto put = [&](const char* k, const std::string& v) {
        out += k;
        out += " = ";
        out += v;
        out += "\n";
    };
    auto put_i = [&](const char* k, long long v) { put(k, std::to_string(v)); };
    auto put_u = [&](const char* k, std::uint64_t v) { put(k, std::to_string(v)); };
    auto put_d = [&](const char* k, double v) { put(k, fmt_double(v)); };
    auto put_b = [&](const char* k, bool v) { put(k, v ? "true" : "false"); };

    put_i("model.input_size", c.model.input_size);
    put("model.levels", join_levels(c.model.levels));
    put_i("model.hidden_dim", c.model.hidden_dim);
    put_i("model.encoder_layers", c.model.encoder_layers);
    put_i("model.heads", c.model.heads);
    put_i("model.referring_points", c.model.referring_points);
    put_b("model.rotation_augment", c.model.rotation_augment);
    put("model.rotation_merge", c.model.rotation_merge);
    put_d("model.endpoint_sigma_px", c.model.endpoint_sigma_px);

    put_scene_text(out, c.scene);

    put_d("loss.rank", c.loss.rank);
    put_d("loss.conf", c.loss.conf);
    put_d("loss.pos", c.loss.pos);
    put_d("loss.junc", c.loss.junc);
    put_d("loss.edge", c.loss.edge);

    put_d("rerank.delta_e", c.rerank.delta_e);
    put_d("rerank.delta_d", c.rerank.delta_d);
    put_d("rerank.delta_l", c.rerank.delta_l);
    put_i("rerank.samples", c.rerank.samples);

    put_i("detect.top_k", c.detect.top_k);
    put_d("detect.confidence_floor", c.detect.confidence_floor);
    put_d("detect.nms_threshold_px", c.detect.nms_threshold_px);

    put_i("train.steps", c.train.steps);
    put_i("train.train_scenes", c.train.train_scenes);
    put_i("train.eval_scenes", c.train.eval_scenes);
    put_d("train.lr", c.train.lr);
    put_d("train.weight_decay", c.train.weight_decay);
    put_d("train.negative_ratio", c.train.negative_ratio);
    put_b("train.rank_grad_through_quality", c.train.rank_grad_through_quality);
    put_b("train.position_loss_normalized", c.train.position_loss_normalized);
    put_u("train.seed", c.train.seed);
    put("train.out_dir", c.train.out_dir);
    return out;
}

RunConfig parse_run_config(const std::string& text) {
    RunConfig c;
    parse_kv(text, [&](const std::string& key, const std::string& val, int line) {
        if (key == "model.input_size")
            c.model.input_size = static_cast<int>(parse_int(val, line));
        else if (key == "model.levels")
            c.model.levels = parse_levels(val, line);
        else if (key == "model.hidden_dim")
            c.model.hidden_dim = static_cast<int>(parse_int(val, line));
        else if (key == "model.encoder_layers")
            c.model.encoder_layers = static_cast<int>(parse_int(val, line));
        else if (key == "model.heads")
            c.model.heads = static_cast<int>(parse_int(val, line));
        else if (key == "model.referring_points")
            c.model.referring_points = static_cast<int>(parse_int(val, line));
        else if (key == "model.rotation_augment")
            c.model.rotation_augment = parse_bool(val, line);
        else if (key == "model.rotation_merge")
            c.model.rotation_merge = val;
        else if (key == "model.endpoint_sigma_px")
            c.model.endpoint_sigma_px = parse_double(val, line);
        else if (apply_scene_key(c.scene, key, val, line))
            ;
        else if (key == "loss.rank")
            c.loss.rank = parse_double(val, line);
        else if (key == "loss.conf")
            c.loss.conf = parse_double(val, line);
        else if (key == "loss.pos")
            c.loss.pos = parse_double(val, line);
        else if (key == "loss.junc")
            c.loss.junc = parse_double(val, line);
        else if (key == "loss.edge")
            c.loss.edge = parse_double(val, line);
        else if (key == "rerank.delta_e")
            c.rerank.delta_e = parse_double(val, line);
        else if (key == "rerank.delta_d")
            c.rerank.delta_d = parse_double(val, line);
        else if (key == "rerank.delta_l")
            c.rerank.delta_l = parse_double(val, line);
        else if (key == "rerank.samples")
            c.rerank.samples = static_cast<int>(parse_int(val, line));
        else if (key == "detect.top_k")
            c.detect.top_k = static_cast<int>(parse_int(val, line));
        else if (key == "detect.confidence_floor")
            c.detect.confidence_floor = parse_double(val, line);
        else if (key == "detect.nms_threshold_px")
            c.detect.nms_threshold_px = parse_double(val, line);
        else if (key == "train.steps")
            c.train.steps = static_cast<int>(parse_int(val, line));
        else if (key == "train.train_scenes")
            c.train.train_scenes = static_cast<int>(parse_int(val, line));
        else if (key == "train.eval_scenes")
            c.train.eval_scenes = static_cast<int>(parse_int(val, line));
        else if (key == "train.lr")
            c.train.lr = parse_double(val, line);
        else if (key == "train.weight_decay")
            c.train.weight_decay = parse_double(val, line);
        else if (key == "train.negative_ratio")
            c.train.negative_ratio = parse_double(val, line);
        else if (key == "train.rank_grad_through_quality")
            c.train.rank_grad_through_quality = parse_bool(val, line);
        else if (key == "train.position_loss_normalized")
            c.train.position_loss_normalized = parse_bool(val, line);
        else if (key == "train.seed")
            c.train.seed = parse_u64(val, line);
        else if (key == "train.out_dir")
            c.train.out_dir = val;
        else
            fail_line(line, "unknown key '" + key + "'");
    });
    c.model.validate();
    if (c.rerank.samples < 1) fail("rerank.samples must be >= 1");
    if (c.detect.top_k < 1) fail("detect.top_k must be >= 1");
    if (c.train.steps < 0) fail("train.steps must be >= 0");
    return c;
}

std::string to_text(const DatasetSpec& d) {
    std::string out;
    put_scene_text(out, d.scene);
    out += "count = " + std::to_string(d.count) + "\n";
    return out;
}

DatasetSpec parse_dataset_spec(const std::string& text) {
    DatasetSpec d;
    parse_kv(text, [&](const std::string& key, const std::string& val, int line) {
        if (apply_scene_key(d.scene, key, val, line))
            ;
        else if (key == "count")
            d.count = static_cast<int>(parse_int(val, line));
        else
            fail_line(line, "unknown key '" + key + "'");
    });
    if (d.count < 1) fail("count must be >= 1");
    if (d.scene.image_size < 8) fail("scene.image_size must be >= 8");
    return d;
}

DatasetSpec load_dataset_spec(const std::string& path) {
    std::ifstream in(path);
    if (!in) fail("cannot open '" + path + "'");
    std::stringstream buf;
    buf << in.rdbuf();
    return parse_dataset_spec(buf.str());
}

RunConfig load_run_config(const std::string& path) {
    std::ifstream in(path);
    if (!in) fail("cannot open '" + path + "'");
    std::stringstream buf;
    buf << in.rdbuf();
    return parse_run_config(buf.str());
}

std::uint64_t config_hash(const RunConfig& c) {
    std::string text = to_text(c);
    std::uint64_t h = 14695981039346656037ULL;
    for (unsigned char ch : text) {
        h ^= ch;
        h *= 1099511628211ULL;
    }
    return h;
}

std::string config_hash_hex(const RunConfig& c) {
    char buf[24];
    std::snprintf(buf, sizeof buf, "%016llx",
                  static_cast<unsigned long long>(config_hash(c)));
    return buf;
}

}  // namespace ranklsd
