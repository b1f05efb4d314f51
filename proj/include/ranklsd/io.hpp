#pragma once

// Artifact I/O: binary checkpoints (embedded config text, named parameter
// tensors, optional optimizer moments), PGM map dumps, and an SVG scene
// viewer with the rendered image inlined as a BMP data URI.

#include <string>
#include <utility>
#include <vector>

#include "ranklsd/config.hpp"

namespace ranklsd {

void save_checkpoint(const std::string& path, const RunConfig& cfg, const Model& model,
                     const AdamW* opt, int step);

struct Checkpoint {
    RunConfig config;
    int step = 0;
    std::vector<std::pair<std::string, Tensor>> tensors;
    bool has_opt = false;
    long opt_t = 0;
    std::vector<std::vector<double>> m, v;  // aligned with tensors
};

Checkpoint load_checkpoint(const std::string& path);

// strict: parameter names and shapes must match the model exactly.  A null
// opt skips the moments; a missing optimizer section resets a given one.
void apply_checkpoint(const Checkpoint& ck, Model& model, AdamW* opt);

// convenience: rebuild the model a checkpoint was saved from
Model model_from_checkpoint(const Checkpoint& ck);

// 8-bit binary PGM, values clamped into [0,1]; the comment line normally
// carries the config hash
void write_pgm(const std::string& path, const Tensor& map, const std::string& comment);

// grayscale background image, ground truth in green, detections in red with
// opacity following the fused score; the comment normally carries the
// config hash
void write_scene_svg(const std::string& path, const Tensor& image,
                     const std::vector<LineSegment>& gts,
                     const std::vector<ScoredSegment>& dets,
                     const std::string& comment = "");

}  // namespace ranklsd
