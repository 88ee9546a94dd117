#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "dilvae/data.hpp"
#include "dilvae/kv.hpp"
#include "dilvae/layers.hpp"

namespace dilvae {

/// lm: decoder only. vae: LSTM encoder + Gaussian z. semi: vae plus a
/// label classifier q(y|x) and a (y, z)-conditioned decoder.
enum class ModelKind { lm, vae, semi };

std::string to_string(ModelKind kind);
ModelKind model_kind_from_string(const std::string& s);

struct ModelConfig {
    ModelKind kind = ModelKind::vae;
    DecoderArch arch = DecoderArch::named("SCNN");
    std::size_t vocab_size = 0;
    std::size_t embed_dim = 16;
    std::size_t encoder_hidden = 32;
    std::size_t decoder_hidden = 32;
    std::size_t z_dim = 8;
    std::size_t num_classes = 0;
    std::size_t classifier_hidden = 32;
    double encoder_dropout = 0.0;
    double decoder_dropout = 0.0;
    double cnn_dropout = 0.1;
    double drop_word = 0.0;
    /// semi models: feed y to every decoder step (true) or only to the
    /// first step / initial state (false).
    bool label_every_step = true;
    std::uint64_t seed = 1;

    bool has_encoder() const { return kind != ModelKind::lm; }
    /// Width of the decoder conditioning vector: 0, z, or y ++ z.
    std::size_t condition_dim() const;
    void validate() const;

    KeyValues to_kv() const;
    /// Unknown keys are rejected; missing keys keep their defaults.
    static ModelConfig from_kv(const KeyValues& kv);
};

/// Switches and randomness for one forward pass.
struct ForwardContext {
    bool training = false;
    Rng* rng = nullptr;  // required when training with dropout or drop-word
};

/// q(z|x) as mean and log-variance rows, [B x z_dim] each.
struct GaussianPosterior {
    Var mu;
    Var logvar;
};

/// Batch means of the per-document terms. total = reconstruction +
/// kl_weight * kl.
struct LossBreakdown {
    Var total;
    Var reconstruction;
    Var kl;
    double kl_weight = 1.0;
};

class TextModel {
public:
    TextModel(ModelConfig config, Rng& rng);
    explicit TextModel(ModelConfig config);

    const ModelConfig& config() const { return config_; }
    /// Every trainable tensor, in a stable order with stable names.
    std::vector<NamedTensor> parameters();
    std::size_t parameter_count();

    /// ids[B*T] -> [B x T x embed_dim].
    Var embed(Tape& tape, std::span<const int> ids, std::size_t batch, std::size_t steps) const;
    /// Last real hidden state of the encoder LSTM, [B x encoder_hidden].
    Var encoder_state(Tape& tape, const Batch& batch, const ForwardContext& ctx) const;
    /// Posterior head; `label` is the (possibly soft) one-hot y for semi models.
    GaussianPosterior posterior(Tape& tape, Var hidden, std::optional<Var> label = std::nullopt) const;
    /// Unnormalized q(y|x) scores, [B x num_classes].
    Var classifier_logits(Tape& tape, Var hidden) const;
    /// Next-token logits [(B*T) x V] from already embedded decoder inputs.
    Var decode_embedded(Tape& tape, Var embedded, std::optional<Var> condition, const ForwardContext& ctx) const;

    // Direct parameter access for initialization and tests.
    Tensor& embedding() { return embedding_; }
    const Tensor& embedding() const { return embedding_; }
    LstmParams& encoder() { return encoder_; }
    Mlp& posterior_head() { return posterior_; }
    Mlp& classifier_head() { return classifier_; }
    LstmParams& decoder_lstm() { return dec_lstm_; }
    const LstmParams& decoder_lstm() const { return dec_lstm_; }
    Linear& decoder_init() { return dec_init_; }
    Tensor& decoder_input_weight() { return dec_in_w_; }
    std::vector<ResidualBlockParams>& decoder_blocks() { return dec_blocks_; }
    Linear& output_layer() { return out_; }

private:
    void build(Rng& rng);
    Var conditioning_steps(Tape& tape, Var condition, std::size_t batch, std::size_t steps) const;

    ModelConfig config_;
    Tensor embedding_;
    LstmParams encoder_;
    Mlp posterior_;
    Mlp classifier_;
    // LSTM decoder
    LstmParams dec_lstm_;
    Linear dec_init_;
    // CNN decoder
    Tensor dec_in_w_, dec_in_b_;
    std::vector<ResidualBlockParams> dec_blocks_;
    Linear out_;
};

GaussianPosterior encode(Tape& tape, const TextModel& model, const Batch& batch, const ForwardContext& ctx = {});

/// z = mu + exp(logvar / 2) * eps.
Var reparameterize(const GaussianPosterior& post, Var eps);

/// Per-example KL(q || N(0, I)) summed over z dimensions, [B].
Var kl_to_standard_normal(const GaussianPosterior& post);

/// Decoder logits for the batch's decoder inputs; [(B*steps) x V].
/// Drop-word is applied to LSTM-decoder inputs while training.
Var decode_logits(Tape& tape, const TextModel& model, std::optional<Var> condition, const Batch& batch,
                  const ForwardContext& ctx = {});

/// Masked cross-entropy summed per document, [B].
Var reconstruction_per_document(Tape& tape, const TextModel& model, std::optional<Var> condition, const Batch& batch,
                                const ForwardContext& ctx = {});

/// Single-sample ELBO loss with eps[B x z_dim].
LossBreakdown elbo_loss(Tape& tape, const TextModel& model, const Batch& batch, const Tensor& eps, double kl_weight,
                        const ForwardContext& ctx = {});

/// Language-model loss (mean NLL per document); kl is a zero constant.
LossBreakdown lm_loss(Tape& tape, const TextModel& model, const Batch& batch, const ForwardContext& ctx = {});

enum class LatentMode { mean, sample };

std::string to_string(LatentMode mode);
LatentMode latent_mode_from_string(const std::string& s);

/// Corpus-level bound. nll, reconstruction and kl are per-document
/// averages; ppl = exp(total nll / total predicted tokens), EOS included.
struct EvalResult {
    double nll = 0.0;
    double reconstruction = 0.0;
    double kl = 0.0;
    double ppl = 0.0;
    std::size_t documents = 0;
    std::size_t tokens = 0;
    LatentMode mode = LatentMode::mean;
};

/// Variational bound with kl weight 1 (exact label enumeration for semi
/// models). `rng` is needed in sample mode.
EvalResult eval_nll_ppl(const TextModel& model, std::span<const Document> docs, LatentMode mode, Rng* rng = nullptr,
                        std::size_t batch_size = 64);

/// Little-endian checkpoint: "DILVAECK", u32 version, u32 line count,
/// length-prefixed "key=value" UTF-8 lines (model config plus any extra
/// metadata), u32 tensor count, then per tensor: u32 name length, name,
/// u32 rank, u64 dims, raw float64 values.
void save_checkpoint(const std::filesystem::path& path, TextModel& model, const KeyValues& extra = {});

struct Checkpoint {
    TextModel model;
    KeyValues extra;  // non-config metadata lines
};

Checkpoint load_checkpoint(const std::filesystem::path& path);

} // namespace dilvae
