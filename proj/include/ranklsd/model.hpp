#pragma once

// Toy end-to-end detector: convolutional pyramid backbone with lateral
// merges, deformable-attention encoder layers over multi-level tokens,
// and the four prediction heads (confidence, location, junction map, edge
// map).  Optional ±90° rotation augmentation averages backbone features
// over three orientations.

#include <cstdint>
#include <string>
#include <vector>

#include "ranklsd/losses.hpp"
#include "ranklsd/synthdata.hpp"
#include "ranklsd/tensor.hpp"

namespace ranklsd {

struct ModelConfig {
    int input_size = 64;
    std::vector<int> levels = {64, 32, 16};  // finest first
    int hidden_dim = 64;
    int encoder_layers = 2;
    int heads = 2;
    int referring_points = 4;  // K sample locations per head per level
    bool rotation_augment = false;
    std::string rotation_merge = "average";  // or "max"
    double endpoint_sigma_px = 1.5;          // gt endpoint-map kernel width

    void validate() const;  // throws on inconsistent settings
};

struct ModelOutput {
    Tensor score;                  // [G,G] post-sigmoid confidences
    Tensor loc;                    // [G,G,4] raw endpoint coordinates
    std::vector<Tensor> junction;  // per level [r,r] in (0,1)
    std::vector<Tensor> edge;      // per level [r,r] in (0,1)
};

class Model {
  public:
    struct Param {
        std::string name;
        Tensor t;
    };

    Model(ModelConfig cfg, std::uint64_t seed);

    const ModelConfig& config() const { return cfg_; }

    // records on the active tape when one is installed
    ModelOutput forward(const Tensor& image) const;

    // stages, exposed for tests
    std::vector<Tensor> backbone_forward(const Tensor& image) const;
    std::vector<Tensor> merged_backbone(const Tensor& image) const;  // augment-aware
    std::vector<Tensor> encode(std::vector<Tensor> features) const;
    ModelOutput heads_forward(const std::vector<Tensor>& features) const;

    std::vector<Param>& params() { return params_; }
    const std::vector<Param>& params() const { return params_; }
    Tensor param(const std::string& name) const;

  private:
    Tensor add_param(const std::string& name, Tensor t);
    void build_constants();

    ModelConfig cfg_;
    std::vector<Param> params_;
    // per-level constants: positional encodings [T,D], reference points and
    // per-column offset scales [T,P*2]
    std::vector<Tensor> pos_, ref_, off_scale_;
};

// decoupled weight decay + adaptive moments
class AdamW {
  public:
    AdamW(double lr = 5e-4, double weight_decay = 1e-4, double beta1 = 0.9,
          double beta2 = 0.999, double eps = 1e-8);

    // applies one update from the accumulated gradients; lr_scale carries
    // the step-decay schedule
    void step(std::vector<Model::Param>& params, double lr_scale = 1.0);

    double lr = 5e-4, weight_decay = 1e-4, beta1 = 0.9, beta2 = 0.999, eps = 1e-8;
    long t = 0;
    std::vector<std::vector<double>> m, v;  // aligned with params
};

struct TrainSettings {
    LossWeights weights;
    double negative_ratio = 3.0;
    bool rank_grad_through_quality = false;
    bool position_loss_normalized = false;
};

struct TrainStepStats {
    double rank = 0, conf = 0, pos = 0, junc = 0, edge = 0, total = 0;
    int positives = 0, negatives = 0;
};

// forward -> assignment gather -> weighted losses; returns the scalar total
// (recorded on the active tape).  sampling_seed drives negative sampling; a
// non-finite total aborts with a diagnostic naming the seed.
Tensor training_objective(const Model& model, const Sample& sample, const TrainSettings& ts,
                          std::uint64_t sampling_seed, TrainStepStats* stats = nullptr);

// one full optimization step: objective -> backward -> AdamW update
TrainStepStats train_step(Model& model, const Sample& sample, const TrainSettings& ts,
                          AdamW& opt, double lr_scale, std::uint64_t step_seed);

}  // namespace ranklsd
