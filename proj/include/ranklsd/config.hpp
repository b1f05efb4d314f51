#pragma once

// Run configuration: one flat key=value text format covering the model,
// scene generator, losses, re-ranking, detection, and training loop.  The
// canonical rendering (fixed key order, %.17g numbers) round-trips exactly
// and is what gets hashed into artifact headers.

#include <cstdint>
#include <string>

#include "ranklsd/inference.hpp"
#include "ranklsd/losses.hpp"
#include "ranklsd/model.hpp"
#include "ranklsd/rerank.hpp"
#include "ranklsd/synthdata.hpp"

namespace ranklsd {

struct TrainConfig {
    int steps = 2000;
    int train_scenes = 1000;
    int eval_scenes = 100;
    double lr = 5e-4;
    double weight_decay = 1e-4;
    double negative_ratio = 3.0;
    bool rank_grad_through_quality = false;
    bool position_loss_normalized = false;
    std::uint64_t seed = 7;
    std::string out_dir = "run";
};

struct RunConfig {
    ModelConfig model;
    SceneSpec scene;
    LossWeights loss;
    RerankWeights rerank;
    DetectionConfig detect;
    TrainConfig train;
};

// dataset manifest: a scene generator spec plus the number of samples
struct DatasetSpec {
    SceneSpec scene;
    int count = 100;
};

std::string to_text(const RunConfig& c);
std::string to_text(const DatasetSpec& d);

// strict: unknown keys, malformed values, and duplicate keys are errors
// (reported with their line number); keys omitted keep their defaults
RunConfig parse_run_config(const std::string& text);
RunConfig load_run_config(const std::string& path);
DatasetSpec parse_dataset_spec(const std::string& text);
DatasetSpec load_dataset_spec(const std::string& path);

// FNV-1a over the canonical text
std::uint64_t config_hash(const RunConfig& c);
std::string config_hash_hex(const RunConfig& c);

}  // namespace ranklsd
