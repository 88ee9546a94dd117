#pragma once

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"

#include "dilvae/model.hpp"

namespace dilvae {

struct AdamSettings {
    double lr = 1e-3;
    double beta1 = 0.5;
    double beta2 = 0.999;
    double eps = 1e-8;
    /// Global gradient-norm clip; <= 0 disables clipping.
    double clip_norm = 5.0;
};

/// Adam moments for one parameter list.
struct OptimState {
    std::vector<Tensor> m;
    std::vector<Tensor> v;
    std::size_t step = 0;
    AdamSettings settings;

    OptimState() = default;
    OptimState(std::span<const NamedTensor> params, AdamSettings settings);
};

/// Bias-corrected Adam update at learning rate `lr`. grads[i] matches
/// params[i]; a non-finite entry throws NumericError naming the parameter.
void adam_step(OptimState& state, std::span<const NamedTensor> params, std::span<const Tensor> grads, double lr);

/// Scales grads in place so their global L2 norm is at most max_norm.
/// Returns the norm before clipping.
double clip_gradients(std::span<Tensor> grads, double max_norm);

/// Gradients of every parameter after tape.backward(); zeros where the
/// parameter was not used.
std::vector<Tensor> collect_gradients(Tape& tape, std::span<const NamedTensor> params);

struct Schedule {
    long long kl_anneal_iterations = 10000;  // T
    double kl_floor = 0.01;
    std::size_t lr_half_start_epoch = 30;
    std::size_t lr_half_every = 2;
    std::size_t epochs = 40;
    double tau_start = 1.0;
    double tau_min = 0.1;
    double tau_rate = 3.0;

    void validate() const;
};

/// min(1, floor + (1 - floor) * iteration / T).
double kl_weight(std::size_t iteration, const Schedule& schedule);
/// Base rate before the halving epoch, then halved every lr_half_every
/// epochs, the first halving at lr_half_start_epoch itself.
double learning_rate(std::size_t epoch, const Schedule& schedule, double base);
/// max(tau_min, tau_start * exp(-tau_rate * progress)), progress in [0, 1].
double gumbel_tau(double progress, const Schedule& schedule);

/// lm, vae, semi: as the model kinds. cluster: semi model without labels
/// and with the clamped categorical KL. classifier: encoder + q(y|x)
/// trained on labeled data with cross-entropy only.
enum class TrainKind { lm, vae, semi, cluster, classifier };

std::string to_string(TrainKind kind);
TrainKind train_kind_from_string(const std::string& s);

struct TrainConfig {
    TrainKind kind = TrainKind::vae;
    ModelConfig model;
    Schedule schedule;
    AdamSettings adam;
    std::size_t batch_size = 32;
    bool sort_by_length = true;
    std::uint64_t seed = 1;
    LatentMode eval_mode = LatentMode::mean;
    // semi-supervised and clustering
    double alpha = 0.1;
    std::size_t gumbel_samples = 1;
    double gamma = 1.0;
    // encoder initialization from a pretrained LSTM language model
    bool encoder_init = false;
    std::string pretrain_arch = "LSTM";
    std::size_t pretrain_epochs = 5;
    /// Optional directory for manifest.jsonl and best.ckpt.
    std::optional<std::filesystem::path> out_dir;
    /// Extra metadata stored in checkpoints (for example the vocabulary).
    KeyValues checkpoint_extra;

    void validate() const;
    /// Flat key/value view, model keys prefixed with "model.".
    KeyValues to_kv() const;
    /// Applies "key=value" settings on top of this config.
    void apply(const KeyValues& kv);
};

/// Append-only run log, one JSON object per line.
class RunManifest {
public:
    void append(nlohmann::json record);
    const std::vector<nlohmann::json>& records() const { return records_; }
    /// Epoch records only.
    std::vector<nlohmann::json> epochs() const;
    /// Copy with wall-clock fields removed, for determinism comparisons.
    RunManifest without_timing() const;
    std::string to_jsonl() const;
    void attach_file(const std::filesystem::path& path);

    friend bool operator==(const RunManifest& a, const RunManifest& b) { return a.records_ == b.records_; }

private:
    std::vector<nlohmann::json> records_;
    std::optional<std::filesystem::path> file_;
};

struct TrainData {
    std::vector<Document> train;      // unlabeled (or all) training documents
    std::vector<Document> labeled;    // semi / classifier runs
    std::vector<Document> validation;
};

struct TrainResult {
    TextModel model;  // best-by-validation parameters
    RunManifest manifest;
    std::size_t best_epoch = 0;  // 0 when no epoch completed
    std::optional<EvalResult> best_validation;
    std::optional<double> best_accuracy;
    bool diverged = false;
    std::size_t last_good_epoch = 0;
};

TrainResult train(const TrainConfig& config, const TrainData& data);

/// Copies the language model's LSTM and embedding table into the encoder.
/// The language model must use an LSTM decoder with matching widths.
void init_encoder_from_lm(TextModel& target, const TextModel& lm);

/// Trains an LSTM language model on data.train (plus labeled documents)
/// for config.pretrain_epochs and returns a fresh model of config.model
/// whose encoder starts from it.
TextModel pretrain_lm_then_init_encoder(const TrainConfig& config, const TrainData& data);

/// Language-model config used for encoder pretraining.
TrainConfig pretraining_config(const TrainConfig& config);

} // namespace dilvae
