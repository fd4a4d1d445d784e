#pragma once

#include <cmath>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "advsr/audio.hpp"
#include "advsr/dataset.hpp"
#include "advsr/features.hpp"
#include "advsr/map.hpp"
#include "advsr/matrix.hpp"

namespace advsr {

enum class LossKind { CrossEntropy, CwMargin };

struct LossSpec {
    LossKind kind = LossKind::CrossEntropy;
    int label = 0;
    bool targeted = false;  // label is the target class when set
    double kappa = 0.0;     // confidence floor for the CW margin
};

struct AudioNetConfig {
    std::vector<int> conv_channels{16, 32, 32};
    int kernel = 5;
    int stride = 2;
    int embedding_dim = 64;
};

struct ConvLayer {
    Matrix w;  // out_ch x (in_ch * kernel)
    std::vector<double> b;
    int in_ch = 0, out_ch = 0, kernel = 5, stride = 2;
};

// 1-D convolutional speaker classifier over MFCC-family features. The
// penultimate linear layer output is the speaker embedding.
struct Model {
    FeatureConfig feature_cfg;
    AudioNetConfig net;
    int n_classes = 0;
    std::vector<ConvLayer> convs;
    Matrix emb_w;  // embedding_dim x last_channels
    std::vector<double> emb_b;
    Matrix cls_w;  // n_classes x embedding_dim
    std::vector<double> cls_b;
    std::vector<std::string> class_ids;  // speaker id per class index
};

Model make_model(const FeatureConfig& fcfg, const AudioNetConfig& ncfg, int n_classes, uint64_t init_seed);

void save_checkpoint(const Model& m, const std::filesystem::path& path);
Model load_checkpoint(const std::filesystem::path& path);

std::vector<double> forward_logits(const Model& m, const Waveform& w, const DefenseStack* stack = nullptr,
                                   Rng* rng = nullptr);
std::vector<double> embed(const Model& m, const Waveform& w, const DefenseStack* stack = nullptr,
                          Rng* rng = nullptr);
int predict_class(const Model& m, const Waveform& w, const DefenseStack* stack = nullptr, Rng* rng = nullptr);

struct LossGradResult {
    double loss = 0.0;
    std::vector<double> grad;
};

// Backprop through defense stack -> feature pipeline -> network. Transforms
// with GradThrough::Identity pass gradients through unchanged (BPDA).
LossGradResult loss_and_input_grad(const Model& m, const Waveform& w, const LossSpec& spec,
                                   const DefenseStack* stack = nullptr, Rng* rng = nullptr);
double loss_value(const Model& m, const Waveform& w, const LossSpec& spec, const DefenseStack* stack = nullptr,
                  Rng* rng = nullptr);

// Un-floored decision margin: untargeted Z_y - max_{i!=y} Z_i, targeted
// max_{i!=t} Z_i - Z_t. Negative means the attack goal is met.
double decision_margin(const Model& m, const Waveform& w, int label, bool targeted,
                       const DefenseStack* stack = nullptr, Rng* rng = nullptr);

std::vector<double> softmax(const std::vector<double>& logits);
double cross_entropy_from_logits(const std::vector<double>& logits, int label,
                                 std::vector<double>* grad_logits = nullptr);
double cw_margin_from_logits(const std::vector<double>& logits, const LossSpec& spec,
                             std::vector<double>* grad_logits = nullptr);
double raw_margin_from_logits(const std::vector<double>& logits, int label, bool targeted);

// ---- enrollment & task decisions ----

struct EnrollmentDB {
    std::map<std::string, std::vector<double>> embeddings;
    double theta = -HUGE_VAL;  // unset sentinel: SV/OSI degrade to always-accept
};

EnrollmentDB enroll(const Model& m, const DatasetManifest& enroll_set);
void save_enrollment(const EnrollmentDB& db, const std::filesystem::path& path);
EnrollmentDB load_enrollment(const std::filesystem::path& path);

double score_coss(const std::vector<double>& a, const std::vector<double>& b);

enum class Task { CSI_NE, CSI_E, SV, OSI };
Task task_from_name(const std::string& name);
std::string task_name(Task t);

struct Decision {
    bool accepted = false;
    std::string speaker_id;              // empty on reject
    int class_index = -1;                // CSI-NE class, -1 otherwise
    std::map<std::string, double> scores;
};

Decision decide(Task task, const Model& m, const EnrollmentDB* db, const Waveform& w,
                const DefenseStack* stack = nullptr, Rng* rng = nullptr);

// Smallest threshold keeping the imposter false-accept rate at or below
// target_far, estimated from held-out imposter max-scores.
double calibrate_threshold(const EnrollmentDB& db, const Model& m, const DatasetManifest& imposters,
                           double target_far);

// ---- training ----

struct TrainConfig {
    int epochs = 30;
    int batch = 32;
    double lr = 1e-3;
    double noise_budget = 0.002;  // uniform noise added to benign minibatch examples
    uint64_t seed = 1;
    double crop_s = 1.0;  // fixed-length crop/pad for batching
    bool adam = true;     // plain SGD otherwise
};

struct AdvTrainConfig {
    double ratio = 0.5;  // fraction of each minibatch replaced by PGD examples
    int steps = 10;
    double epsilon = 0.002;
    double alpha = 0.0004;
    int eot_r = 10;  // gradient draws per PGD step for randomized defense layers
};

struct EpochLog {
    int epoch = 0;
    double train_loss = 0.0;
    double train_acc = 0.0;
    double eval_acc = 0.0;  // NaN when no eval set
};

struct TrainResult {
    Model model;
    std::vector<EpochLog> log;
};

TrainResult train(const Model& init, const DatasetManifest& train_set, const DatasetManifest* eval_set,
                  const TrainConfig& cfg);

// Half-adversarial minibatch training; an optional defense stack becomes a
// fixed layer of the composed model (trained and evaluated through it).
TrainResult adv_train(const Model& init, const DatasetManifest& train_set, const DatasetManifest* eval_set,
                      const TrainConfig& cfg, const AdvTrainConfig& adv, const DefenseStack* defense = nullptr);

}  // namespace advsr
