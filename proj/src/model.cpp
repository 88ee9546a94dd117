#include "dilvae/model.hpp"

#include <cmath>
#include <sstream>

#include "dilvae/errors.hpp"

namespace dilvae {

std::string to_string(ModelKind kind) {
    switch (kind) {
    case ModelKind::lm: return "lm";
    case ModelKind::vae: return "vae";
    case ModelKind::semi: return "semi";
    }
    return "?";
}

ModelKind model_kind_from_string(const std::string& s) {
    if (s == "lm") return ModelKind::lm;
    if (s == "vae") return ModelKind::vae;
    if (s == "semi") return ModelKind::semi;
    throw ConfigError("unknown model kind '" + s + "'");
}

std::size_t ModelConfig::condition_dim() const {
    switch (kind) {
    case ModelKind::lm: return 0;
    case ModelKind::vae: return z_dim;
    case ModelKind::semi: return z_dim + num_classes;
    }
    return 0;
}

void ModelConfig::validate() const {
    arch.validate();
    if (vocab_size <= static_cast<std::size_t>(kNumReserved)) throw ConfigError("vocab_size must exceed the reserved ids");
    if (embed_dim == 0 || encoder_hidden == 0 || decoder_hidden == 0) throw ConfigError("layer widths must be positive");
    if (kind != ModelKind::lm && z_dim == 0) throw ConfigError("z_dim must be positive for latent-variable models");
    if (kind == ModelKind::semi && (num_classes == 0 || classifier_hidden == 0))
        throw ConfigError("semi models need num_classes and classifier_hidden");
    for (double r : {encoder_dropout, decoder_dropout, cnn_dropout, drop_word})
        if (r < 0.0 || r >= 1.0) throw ConfigError("dropout and drop-word rates must be in [0, 1)");
}


KeyValues ModelConfig::to_kv() const {
    std::string dil;
    for (std::size_t i = 0; i < arch.dilations.size(); ++i) dil += (i ? "," : "") + std::to_string(arch.dilations[i]);
    return {
        {"kind", to_string(kind)},
        {"decoder", to_string(arch.kind)},
        {"arch", arch.name},
        {"filter_size", std::to_string(arch.filter_size)},
        {"dilations", dil},
        {"channels_ext", std::to_string(arch.channels_ext)},
        {"channels_int", std::to_string(arch.channels_int)},
        {"vocab_size", std::to_string(vocab_size)},
        {"embed_dim", std::to_string(embed_dim)},
        {"encoder_hidden", std::to_string(encoder_hidden)},
        {"decoder_hidden", std::to_string(decoder_hidden)},
        {"z_dim", std::to_string(z_dim)},
        {"num_classes", std::to_string(num_classes)},
        {"classifier_hidden", std::to_string(classifier_hidden)},
        {"encoder_dropout", format_double(encoder_dropout)},
        {"decoder_dropout", format_double(decoder_dropout)},
        {"cnn_dropout", format_double(cnn_dropout)},
        {"drop_word", format_double(drop_word)},
        {"label_every_step", label_every_step ? "true" : "false"},
        {"seed", std::to_string(seed)},
    };
}

ModelConfig ModelConfig::from_kv(const KeyValues& kv) {
    ModelConfig c;
    // A named arch sets the dilation schedule; explicit keys refine it.
    if (auto it = kv.find("arch"); it != kv.end() && it->second != "custom") {
        c.arch = DecoderArch::named(it->second);
    } else if (it != kv.end()) {
        c.arch.name = "custom";
    }
    for (const auto& [key, v] : kv) {
        if (key == "arch") continue;
        if (key == "kind") c.kind = model_kind_from_string(v);
        else if (key == "decoder") c.arch.kind = decoder_kind_from_string(v);
        else if (key == "filter_size") c.arch.filter_size = parse_size(key, v);
        else if (key == "dilations") {
            c.arch.dilations.clear();
            std::stringstream ss(v);
            std::string part;
            while (std::getline(ss, part, ','))
                if (!part.empty()) c.arch.dilations.push_back(parse_size(key, part));
        } else if (key == "channels_ext") c.arch.channels_ext = parse_size(key, v);
        else if (key == "channels_int") c.arch.channels_int = parse_size(key, v);
        else if (key == "vocab_size") c.vocab_size = parse_size(key, v);
        else if (key == "embed_dim") c.embed_dim = parse_size(key, v);
        else if (key == "encoder_hidden") c.encoder_hidden = parse_size(key, v);
        else if (key == "decoder_hidden") c.decoder_hidden = parse_size(key, v);
        else if (key == "z_dim") c.z_dim = parse_size(key, v);
        else if (key == "num_classes") c.num_classes = parse_size(key, v);
        else if (key == "classifier_hidden") c.classifier_hidden = parse_size(key, v);
        else if (key == "encoder_dropout") c.encoder_dropout = parse_double(key, v);
        else if (key == "decoder_dropout") c.decoder_dropout = parse_double(key, v);
        else if (key == "cnn_dropout") c.cnn_dropout = parse_double(key, v);
        else if (key == "drop_word") c.drop_word = parse_double(key, v);
        else if (key == "label_every_step") c.label_every_step = parse_bool(key, v);
        else if (key == "seed") c.seed = parse_size(key, v);
        else throw ConfigError("unknown model key '" + key + "'");
    }
    return c;
}

TextModel::TextModel(ModelConfig config, Rng& rng) : config_(std::move(config)) { build(rng); }

TextModel::TextModel(ModelConfig config) : config_(std::move(config)) {
    Rng rng = Rng(config_.seed).split("init");
    build(rng);
}

void TextModel::build(Rng& rng) {
    config_.validate();
    const auto& c = config_;
    Rng emb_rng = rng.split("embedding"), enc_rng = rng.split("encoder"), post_rng = rng.split("posterior"),
        cls_rng = rng.split("classifier"), dec_rng = rng.split("decoder"), out_rng = rng.split("output");
    embedding_ = Tensor::uniform({c.vocab_size, c.embed_dim}, -kInitScale, kInitScale, emb_rng);
    if (c.has_encoder()) {
        encoder_ = LstmParams::init(c.embed_dim, c.encoder_hidden, enc_rng);
        const std::size_t post_in = c.encoder_hidden + (c.kind == ModelKind::semi ? c.num_classes : 0);
        const std::vector<std::size_t> post_widths{post_in, 2 * c.z_dim};
        posterior_ = Mlp::init(post_widths, post_rng);
    }
    if (c.kind == ModelKind::semi) {
        const std::vector<std::size_t> cls_widths{c.encoder_hidden, c.classifier_hidden, c.num_classes};
        classifier_ = Mlp::init(cls_widths, cls_rng);
    }
    const std::size_t dec_in = c.embed_dim + c.condition_dim();
    if (c.arch.kind == DecoderKind::lstm) {
        dec_lstm_ = LstmParams::init(dec_in, c.decoder_hidden, dec_rng);
        if (c.condition_dim() > 0) dec_init_ = Linear::init(c.condition_dim(), c.decoder_hidden, dec_rng);
        out_ = Linear::init(c.decoder_hidden, c.vocab_size, out_rng);
    } else {
        dec_in_w_ = Tensor::uniform({c.arch.channels_ext, dec_in, 1}, -kInitScale, kInitScale, dec_rng);
        dec_in_b_ = Tensor({c.arch.channels_ext});
        for (std::size_t d : c.arch.dilations)
            dec_blocks_.push_back(
                ResidualBlockParams::init(c.arch.channels_ext, c.arch.channels_int, c.arch.filter_size, d, dec_rng));
        out_ = Linear::init(c.arch.channels_ext, c.vocab_size, out_rng);
    }
}

std::vector<NamedTensor> TextModel::parameters() {
    std::vector<NamedTensor> out;
    out.push_back({"embedding", &embedding_});
    if (config_.has_encoder()) {
        encoder_.collect("encoder.lstm", out);
        posterior_.collect("posterior", out);
    }
    if (config_.kind == ModelKind::semi) classifier_.collect("classifier", out);
    if (config_.arch.kind == DecoderKind::lstm) {
        dec_lstm_.collect("decoder.lstm", out);
        if (config_.condition_dim() > 0) dec_init_.collect("decoder.init", out);
    } else {
        out.push_back({"decoder.input.weight", &dec_in_w_});
        out.push_back({"decoder.input.bias", &dec_in_b_});
        for (std::size_t i = 0; i < dec_blocks_.size(); ++i) dec_blocks_[i].collect("decoder.block" + std::to_string(i), out);
    }
    out_.collect("decoder.output", out);
    return out;
}

std::size_t TextModel::parameter_count() {
    std::size_t n = 0;
    for (const auto& p : parameters()) n += p.tensor->numel();
    return n;
}

Var TextModel::embed(Tape& tape, std::span<const int> ids, std::size_t batch, std::size_t steps) const {
    if (ids.size() != batch * steps) throw DimensionError("embed: id count does not match batch x steps");
    return reshape(dilvae::embedding(tape.param(embedding_), ids), {batch, steps, config_.embed_dim});
}

Var TextModel::encoder_state(Tape& tape, const Batch& batch, const ForwardContext& ctx) const {
    if (!config_.has_encoder()) throw ConfigError("language models have no encoder");
    Var emb = embed(tape, batch.tokens, batch.size, batch.width);
    if (ctx.training && config_.encoder_dropout > 0.0) emb = dropout(emb, config_.encoder_dropout, *ctx.rng, true);
    return lstm_encode(tape, encoder_, emb, batch.lengths);
}

GaussianPosterior TextModel::posterior(Tape& tape, Var hidden, std::optional<Var> label) const {
    Var input = hidden;
    if (config_.kind == ModelKind::semi) {
        if (!label) throw ConfigError("semi posterior needs a label distribution");
        input = concat({hidden, *label}, 1);
    }
    Var out = mlp(tape, posterior_, input);
    const std::size_t z = config_.z_dim;
    return {slice(out, 1, 0, z), slice(out, 1, z, 2 * z)};
}

Var TextModel::classifier_logits(Tape& tape, Var hidden) const {
    if (config_.kind != ModelKind::semi) throw ConfigError("only semi models have a classifier");
    return mlp(tape, classifier_, hidden);
}

Var TextModel::conditioning_steps(Tape& tape, Var condition, std::size_t batch, std::size_t steps) const {
    Var all = broadcast_time(condition, steps);
    if (config_.kind != ModelKind::semi || config_.label_every_step) return all;
    // Label part only at the first step; z everywhere.
    const std::size_t y = config_.num_classes, width = config_.condition_dim();
    Tensor mask({batch, steps, width}, 1.0);
    for (std::size_t b = 0; b < batch; ++b)
        for (std::size_t t = 1; t < steps; ++t)
            for (std::size_t k = 0; k < y; ++k) mask.at(b, t, k) = 0.0;
    return mul(all, tape.constant(std::move(mask)));
}

Var TextModel::decode_embedded(Tape& tape, Var embedded, std::optional<Var> condition,
                               const ForwardContext& ctx) const {
    const std::size_t nb = embedded.dim(0), nt = embedded.dim(1);
    if (embedded.dim(2) != config_.embed_dim) throw DimensionError("decoder: embedding width mismatch");
    const std::size_t cdim = config_.condition_dim();
    if (cdim > 0) {
        if (!condition) throw ConfigError("this decoder needs a conditioning vector");
        if (condition->shape() != Shape{nb, cdim})
            throw DimensionError("decoder condition " + shape_str(condition->shape()) + ", expected [" +
                                 std::to_string(nb) + "x" + std::to_string(cdim) + "]");
    } else if (condition) {
        throw ConfigError("language models take no conditioning vector");
    }
    Var inputs = cdim > 0 ? concat({embedded, conditioning_steps(tape, *condition, nb, nt)}, 2) : embedded;
    Var features;
    std::size_t width = 0;
    if (config_.arch.kind == DecoderKind::lstm) {
        if (ctx.training && config_.decoder_dropout > 0.0) inputs = dropout(inputs, config_.decoder_dropout, *ctx.rng, true);
        LstmState init = lstm_zero_state(tape, dec_lstm_, nb);
        if (cdim > 0) init.h = tanh(linear(tape, dec_init_, *condition));
        features = lstm_unroll(tape, dec_lstm_, inputs, init);
        width = config_.decoder_hidden;
    } else {
        Var h = add_channel_bias(conv1d_causal(swap_last_axes(inputs), tape.param(dec_in_w_), 1), tape.param(dec_in_b_));
        for (const auto& block : dec_blocks_) {
            if (ctx.training && config_.cnn_dropout > 0.0) h = dropout(h, config_.cnn_dropout, *ctx.rng, true);
            h = residual_block(tape, block, h);
        }
        features = swap_last_axes(h);
        width = config_.arch.channels_ext;
    }
    return linear(tape, out_, reshape(features, {nb * nt, width}));
}

GaussianPosterior encode(Tape& tape, const TextModel& model, const Batch& batch, const ForwardContext& ctx) {
    if (model.config().kind != ModelKind::vae) throw ConfigError("encode() needs a plain VAE; semi models use q(z|x,y)");
    return model.posterior(tape, model.encoder_state(tape, batch, ctx));
}

Var reparameterize(const GaussianPosterior& post, Var eps) {
    if (eps.shape() != post.mu.shape())
        throw DimensionError("reparameterize: eps " + shape_str(eps.shape()) + " vs mu " + shape_str(post.mu.shape()));
    return add(post.mu, mul(exp(scale(post.logvar, 0.5)), eps));
}

Var kl_to_standard_normal(const GaussianPosterior& post) {
    Var terms = sub(add_scalar(add(square(post.mu), exp(post.logvar)), -1.0), post.logvar);
    return scale(sum_axis(terms, 1), 0.5);
}

Var decode_logits(Tape& tape, const TextModel& model, std::optional<Var> condition, const Batch& batch,
                  const ForwardContext& ctx) {
    std::vector<int> inputs = batch.decoder_inputs();
    const auto& cfg = model.config();
    if (ctx.training && cfg.arch.kind == DecoderKind::lstm && cfg.drop_word > 0.0) {
        if (!ctx.rng) throw ConfigError("drop-word needs a random stream");
        inputs = drop_word(inputs, cfg.drop_word, *ctx.rng);
    }
    return model.decode_embedded(tape, model.embed(tape, inputs, batch.size, batch.steps()), condition, ctx);
}

Var reconstruction_per_document(Tape& tape, const TextModel& model, std::optional<Var> condition, const Batch& batch,
                                const ForwardContext& ctx) {
    Var logits = decode_logits(tape, model, condition, batch, ctx);
    Var rows = softmax_cross_entropy_rows(logits, batch.targets(), batch.target_mask());
    return sum_axis(reshape(rows, {batch.size, batch.steps()}), 1);
}

LossBreakdown elbo_loss(Tape& tape, const TextModel& model, const Batch& batch, const Tensor& eps, double kl_weight,
                        const ForwardContext& ctx) {
    if (kl_weight < 0.0 || kl_weight > 1.0) throw ParameterError("kl_weight must be in [0, 1]");
    GaussianPosterior post = encode(tape, model, batch, ctx);
    Var z = reparameterize(post, tape.constant(eps));
    Var recon = mean(reconstruction_per_document(tape, model, z, batch, ctx));
    Var kl = mean(kl_to_standard_normal(post));
    Var total = kl_weight == 0.0 ? recon : add(recon, scale(kl, kl_weight));
    return {total, recon, kl, kl_weight};
}

LossBreakdown lm_loss(Tape& tape, const TextModel& model, const Batch& batch, const ForwardContext& ctx) {
    if (model.config().kind != ModelKind::lm) throw ConfigError("lm_loss needs a decoder-only model");
    Var recon = mean(reconstruction_per_document(tape, model, std::nullopt, batch, ctx));
    return {recon, recon, tape.constant(Tensor::scalar(0.0)), 0.0};
}

std::string to_string(LatentMode mode) { return mode == LatentMode::mean ? "mean" : "sample"; }

LatentMode latent_mode_from_string(const std::string& s) {
    if (s == "mean") return LatentMode::mean;
    if (s == "sample") return LatentMode::sample;
    throw ConfigError("unknown latent mode '" + s + "' (mean|sample)");
}

namespace {

Tensor latent_noise(LatentMode mode, Shape shape, Rng* rng) {
    if (mode == LatentMode::mean) return Tensor(std::move(shape));
    if (!rng) throw ConfigError("sample mode needs a random stream");
    return Tensor::normal(std::move(shape), *rng);
}

/// Per-document (reconstruction, kl) of the bound for one batch.
void batch_bound(const TextModel& model, const Batch& batch, LatentMode mode, Rng* rng, std::vector<double>& recon,
                 std::vector<double>& kl) {
    const auto& cfg = model.config();
    Tape tape;
    recon.assign(batch.size, 0.0);
    kl.assign(batch.size, 0.0);
    if (cfg.kind == ModelKind::lm) {
        const Tensor& r = reconstruction_per_document(tape, model, std::nullopt, batch).value();
        for (std::size_t b = 0; b < batch.size; ++b) recon[b] = r[b];
        return;
    }
    Var hidden = model.encoder_state(tape, batch, {});
    if (cfg.kind == ModelKind::vae) {
        GaussianPosterior post = model.posterior(tape, hidden);
        Var z = reparameterize(post, tape.constant(latent_noise(mode, post.mu.shape(), rng)));
        const Tensor& r = reconstruction_per_document(tape, model, z, batch).value();
        const Tensor& k = kl_to_standard_normal(post).value();
        for (std::size_t b = 0; b < batch.size; ++b) {
            recon[b] = r[b];
            kl[b] = k[b];
        }
        return;
    }
    // Semi: -U(x) = sum_y q(y|x) [recon_y + KL_z,y] + KL(q(y|x) || uniform).
    const std::size_t c = cfg.num_classes;
    const Tensor logq = log_softmax(model.classifier_logits(tape, hidden)).value();
    for (std::size_t b = 0; b < batch.size; ++b)
        for (std::size_t y = 0; y < c; ++y) {
            const double q = std::exp(logq.at(b, y));
            kl[b] += q * (logq.at(b, y) + std::log(static_cast<double>(c)));
        }
    for (std::size_t y = 0; y < c; ++y) {
        Tensor onehot({batch.size, c});
        for (std::size_t b = 0; b < batch.size; ++b) onehot.at(b, y) = 1.0;
        Var yv = tape.constant(onehot);
        GaussianPosterior post = model.posterior(tape, hidden, yv);
        Var z = reparameterize(post, tape.constant(latent_noise(mode, post.mu.shape(), rng)));
        const Tensor& r = reconstruction_per_document(tape, model, concat({yv, z}, 1), batch).value();
        const Tensor& k = kl_to_standard_normal(post).value();
        for (std::size_t b = 0; b < batch.size; ++b) {
            const double q = std::exp(logq.at(b, y));
            recon[b] += q * r[b];
            kl[b] += q * k[b];
        }
    }
}

} // namespace

EvalResult eval_nll_ppl(const TextModel& model, std::span<const Document> docs, LatentMode mode, Rng* rng,
                        std::size_t batch_size) {
    if (docs.empty()) throw InputError("cannot evaluate on an empty corpus");
    EvalResult res;
    res.mode = mode;
    double recon_total = 0.0, kl_total = 0.0;
    std::vector<double> recon, kl;
    for (const Batch& batch : batchify(docs, batch_size)) {
        batch_bound(model, batch, mode, rng, recon, kl);
        for (std::size_t b = 0; b < batch.size; ++b) {
            recon_total += recon[b];
            kl_total += kl[b];
        }
        res.tokens += batch.target_count();
    }
    res.documents = docs.size();
    const double n = static_cast<double>(docs.size());
    res.reconstruction = recon_total / n;
    res.kl = kl_total / n;
    res.nll = res.reconstruction + res.kl;
    res.ppl = std::exp((recon_total + kl_total) / static_cast<double>(res.tokens));
    if (!std::isfinite(res.nll)) throw NumericError("evaluation produced a non-finite bound");
    return res;
}

} // namespace dilvae
