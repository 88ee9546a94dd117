#include "dilvae/train.hpp"

#include <chrono>
#include <cmath>
#include <fstream>

#include "dilvae/errors.hpp"
#include "dilvae/semi.hpp"

namespace dilvae {

OptimState::OptimState(std::span<const NamedTensor> params, AdamSettings s) : settings(s) {
    for (const auto& p : params) {
        m.emplace_back(p.tensor->shape());
        v.emplace_back(p.tensor->shape());
    }
}

void adam_step(OptimState& state, std::span<const NamedTensor> params, std::span<const Tensor> grads, double lr) {
    if (params.size() != grads.size() || params.size() != state.m.size())
        throw DimensionError("adam_step: parameter, gradient and moment counts differ");
    for (std::size_t i = 0; i < params.size(); ++i) {
        if (grads[i].shape() != params[i].tensor->shape() || state.m[i].shape() != grads[i].shape())
            throw DimensionError("adam_step: shape mismatch for '" + params[i].name + "'");
        if (!grads[i].all_finite()) throw NumericError("non-finite gradient in '" + params[i].name + "'");
    }
    const auto& s = state.settings;
    ++state.step;
    const double c1 = 1.0 - std::pow(s.beta1, static_cast<double>(state.step));
    const double c2 = 1.0 - std::pow(s.beta2, static_cast<double>(state.step));
    for (std::size_t i = 0; i < params.size(); ++i) {
        double* w = params[i].tensor->data();
        double* m = state.m[i].data();
        double* v = state.v[i].data();
        const double* g = grads[i].data();
        for (std::size_t k = 0, n = grads[i].numel(); k < n; ++k) {
            m[k] = s.beta1 * m[k] + (1.0 - s.beta1) * g[k];
            v[k] = s.beta2 * v[k] + (1.0 - s.beta2) * g[k] * g[k];
            w[k] -= lr * (m[k] / c1) / (std::sqrt(v[k] / c2) + s.eps);
        }
    }
}

double clip_gradients(std::span<Tensor> grads, double max_norm) {
    double sq = 0.0;
    for (const auto& g : grads)
        for (double x : g.values()) sq += x * x;
    const double norm = std::sqrt(sq);
    if (max_norm > 0.0 && norm > max_norm) {
        const double f = max_norm / norm;
        for (auto& g : grads)
            for (double& x : g.values()) x *= f;
    }
    return norm;
}

std::vector<Tensor> collect_gradients(Tape& tape, std::span<const NamedTensor> params) {
    std::vector<Tensor> out;
    out.reserve(params.size());
    for (const auto& p : params) {
        const Tensor* g = tape.param_grad(*p.tensor);
        out.push_back(g ? *g : Tensor(p.tensor->shape()));
    }
    return out;
}

void Schedule::validate() const {
    if (kl_anneal_iterations <= 0) throw ConfigError("kl_anneal_iterations must be positive");
    if (kl_floor < 0.0 || kl_floor > 1.0) throw ConfigError("kl_floor must be in [0, 1]");
    if (lr_half_every == 0) throw ConfigError("lr_half_every must be positive");
    if (!(tau_start > 0.0) || !(tau_min > 0.0) || tau_rate < 0.0) throw ConfigError("tau schedule must be positive");
}

double kl_weight(std::size_t iteration, const Schedule& schedule) {
    if (schedule.kl_anneal_iterations <= 0) throw ConfigError("kl_anneal_iterations must be positive");
    const double t = static_cast<double>(iteration) / static_cast<double>(schedule.kl_anneal_iterations);
    return std::min(1.0, schedule.kl_floor + (1.0 - schedule.kl_floor) * t);
}

double learning_rate(std::size_t epoch, const Schedule& schedule, double base) {
    if (epoch < schedule.lr_half_start_epoch) return base;
    const std::size_t halvings = (epoch - schedule.lr_half_start_epoch) / schedule.lr_half_every + 1;
    return base * std::pow(0.5, static_cast<double>(halvings));
}

double gumbel_tau(double progress, const Schedule& schedule) {
    progress = std::clamp(progress, 0.0, 1.0);
    return std::max(schedule.tau_min, schedule.tau_start * std::exp(-schedule.tau_rate * progress));
}

std::string to_string(TrainKind kind) {
    switch (kind) {
    case TrainKind::lm: return "lm";
    case TrainKind::vae: return "vae";
    case TrainKind::semi: return "semi";
    case TrainKind::cluster: return "cluster";
    case TrainKind::classifier: return "classifier";
    }
    return "?";
}

TrainKind train_kind_from_string(const std::string& s) {
    for (TrainKind k : {TrainKind::lm, TrainKind::vae, TrainKind::semi, TrainKind::cluster, TrainKind::classifier})
        if (to_string(k) == s) return k;
    throw ConfigError("unknown training kind '" + s + "'");
}

namespace {

ModelKind model_kind_for(TrainKind kind) {
    switch (kind) {
    case TrainKind::lm: return ModelKind::lm;
    case TrainKind::vae: return ModelKind::vae;
    default: return ModelKind::semi;
    }
}

} // namespace

void TrainConfig::validate() const {
    model.validate();
    schedule.validate();
    if (model.kind != model_kind_for(kind))
        throw ConfigError("training kind '" + to_string(kind) + "' needs a '" + to_string(model_kind_for(kind)) +
                          "' model, got '" + to_string(model.kind) + "'");
    if (batch_size == 0) throw ConfigError("batch_size must be positive");
    if (!(adam.lr > 0.0)) throw ConfigError("learning rate must be positive");
    if (adam.beta1 < 0.0 || adam.beta1 >= 1.0 || adam.beta2 < 0.0 || adam.beta2 >= 1.0)
        throw ConfigError("Adam betas must be in [0, 1)");
    if (alpha < 0.0) throw ConfigError("alpha must be non-negative");
    if (gumbel_samples == 0) throw ConfigError("gumbel_samples must be positive");
    if (gamma < 0.0) throw ConfigError("gamma must be non-negative");
    if (encoder_init && !model.has_encoder()) throw ConfigError("encoder_init needs a model with an encoder");
}

KeyValues TrainConfig::to_kv() const {
    KeyValues kv{
        {"kind", to_string(kind)},
        {"seed", std::to_string(seed)},
        {"batch_size", std::to_string(batch_size)},
        {"sort_by_length", sort_by_length ? "true" : "false"},
        {"eval_mode", to_string(eval_mode)},
        {"alpha", format_double(alpha)},
        {"gumbel_samples", std::to_string(gumbel_samples)},
        {"gamma", format_double(gamma)},
        {"encoder_init", encoder_init ? "true" : "false"},
        {"pretrain_arch", pretrain_arch},
        {"pretrain_epochs", std::to_string(pretrain_epochs)},
        {"epochs", std::to_string(schedule.epochs)},
        {"kl_anneal_iterations", std::to_string(schedule.kl_anneal_iterations)},
        {"kl_floor", format_double(schedule.kl_floor)},
        {"lr_half_start_epoch", std::to_string(schedule.lr_half_start_epoch)},
        {"lr_half_every", std::to_string(schedule.lr_half_every)},
        {"tau_start", format_double(schedule.tau_start)},
        {"tau_min", format_double(schedule.tau_min)},
        {"tau_rate", format_double(schedule.tau_rate)},
        {"lr", format_double(adam.lr)},
        {"beta1", format_double(adam.beta1)},
        {"beta2", format_double(adam.beta2)},
        {"adam_eps", format_double(adam.eps)},
        {"clip_norm", format_double(adam.clip_norm)},
    };
    for (const auto& [k, v] : model.to_kv()) kv["model." + k] = v;
    return kv;
}

void TrainConfig::apply(const KeyValues& kv) {
    KeyValues model_kv = model.to_kv();
    bool model_changed = false;
    // A new named architecture replaces the old schedule unless refined.
    if (kv.count("model.arch") && !kv.count("model.dilations")) model_kv.erase("dilations");
    if (kv.count("model.arch") && !kv.count("model.decoder")) model_kv.erase("decoder");
    for (const auto& [key, v] : kv) {
        if (key.rfind("model.", 0) == 0) {
            model_kv[key.substr(6)] = v;
            model_changed = true;
        } else if (key == "kind") kind = train_kind_from_string(v);
        else if (key == "seed") seed = parse_size(key, v);
        else if (key == "batch_size") batch_size = parse_size(key, v);
        else if (key == "sort_by_length") sort_by_length = parse_bool(key, v);
        else if (key == "eval_mode") eval_mode = latent_mode_from_string(v);
        else if (key == "alpha") alpha = parse_double(key, v);
        else if (key == "gumbel_samples") gumbel_samples = parse_size(key, v);
        else if (key == "gamma") gamma = parse_double(key, v);
        else if (key == "encoder_init") encoder_init = parse_bool(key, v);
        else if (key == "pretrain_arch") pretrain_arch = v;
        else if (key == "pretrain_epochs") pretrain_epochs = parse_size(key, v);
        else if (key == "epochs") schedule.epochs = parse_size(key, v);
        else if (key == "kl_anneal_iterations") schedule.kl_anneal_iterations = parse_int(key, v);
        else if (key == "kl_floor") schedule.kl_floor = parse_double(key, v);
        else if (key == "lr_half_start_epoch") schedule.lr_half_start_epoch = parse_size(key, v);
        else if (key == "lr_half_every") schedule.lr_half_every = parse_size(key, v);
        else if (key == "tau_start") schedule.tau_start = parse_double(key, v);
        else if (key == "tau_min") schedule.tau_min = parse_double(key, v);
        else if (key == "tau_rate") schedule.tau_rate = parse_double(key, v);
        else if (key == "lr") adam.lr = parse_double(key, v);
        else if (key == "beta1") adam.beta1 = parse_double(key, v);
        else if (key == "beta2") adam.beta2 = parse_double(key, v);
        else if (key == "adam_eps") adam.eps = parse_double(key, v);
        else if (key == "clip_norm") adam.clip_norm = parse_double(key, v);
        else throw ConfigError("unknown training key '" + key + "'");
    }
    if (model_changed) model = ModelConfig::from_kv(model_kv);
}

void RunManifest::append(nlohmann::json record) {
    if (file_) {
        std::ofstream out(*file_, std::ios::app);
        if (!out) throw InputError("cannot append to manifest " + file_->string());
        out << record.dump() << '\n';
    }
    records_.push_back(std::move(record));
}

std::vector<nlohmann::json> RunManifest::epochs() const {
    std::vector<nlohmann::json> out;
    for (const auto& r : records_)
        if (r.value("type", "") == "epoch") out.push_back(r);
    return out;
}

RunManifest RunManifest::without_timing() const {
    RunManifest out;
    for (auto r : records_) {
        r.erase("seconds");
        out.records_.push_back(std::move(r));
    }
    return out;
}

std::string RunManifest::to_jsonl() const {
    std::string s;
    for (const auto& r : records_) s += r.dump() + '\n';
    return s;
}

void RunManifest::attach_file(const std::filesystem::path& path) {
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw InputError("cannot create manifest " + path.string());
    for (const auto& r : records_) out << r.dump() << '\n';
    file_ = path;
}

void init_encoder_from_lm(TextModel& target, const TextModel& lm) {
    const auto& t = target.config();
    const auto& l = lm.config();
    if (l.kind != ModelKind::lm || l.arch.kind != DecoderKind::lstm)
        throw ConfigError("encoder initialization needs an LSTM language model");
    if (!t.has_encoder()) throw ConfigError("target model has no encoder");
    if (l.vocab_size != t.vocab_size || l.embed_dim != t.embed_dim || l.decoder_hidden != t.encoder_hidden)
        throw ConfigError("language model and encoder widths differ");
    target.embedding() = lm.embedding();
    target.encoder() = lm.decoder_lstm();
}

TrainConfig pretraining_config(const TrainConfig& config) {
    if (config.pretrain_arch != "LSTM")
        throw ConfigError("only an LSTM language model can initialize the encoder, got '" + config.pretrain_arch +
                          "'");
    TrainConfig pre = config;
    pre.kind = TrainKind::lm;
    pre.encoder_init = false;
    pre.out_dir.reset();
    pre.schedule.epochs = config.pretrain_epochs;
    pre.model = ModelConfig{};
    pre.model.kind = ModelKind::lm;
    pre.model.arch = DecoderArch::named("LSTM");
    pre.model.vocab_size = config.model.vocab_size;
    pre.model.embed_dim = config.model.embed_dim;
    pre.model.decoder_hidden = config.model.encoder_hidden;
    pre.model.decoder_dropout = config.model.encoder_dropout;
    pre.model.seed = config.seed;
    pre.seed = Rng(config.seed).split("pretrain").below(1ull << 62);
    return pre;
}

TextModel pretrain_lm_then_init_encoder(const TrainConfig& config, const TrainData& data) {
    TrainConfig pre = pretraining_config(config);
    TrainData text;
    text.train = data.train;
    text.train.insert(text.train.end(), data.labeled.begin(), data.labeled.end());
    text.validation = data.validation;
    TrainResult lm = train(pre, text);
    ModelConfig mc = config.model;
    mc.seed = config.seed;
    TextModel model(mc);
    init_encoder_from_lm(model, lm.model);
    return model;
}

namespace {

double now_seconds() {
    using clock = std::chrono::steady_clock;
    return std::chrono::duration<double>(clock::now().time_since_epoch()).count();
}

bool all_labeled(std::span<const Document> docs) {
    if (docs.empty()) return false;
    for (const auto& d : docs)
        if (d.label < 0) return false;
    return true;
}

struct StepLoss {
    Var total;
    double reconstruction = 0.0;
    double kl = 0.0;
};

struct Validation {
    std::optional<EvalResult> bound;
    std::optional<double> accuracy;
    double selection = 0.0;  // lower is better
};

Validation validate_epoch(const TrainConfig& config, const TextModel& model, std::span<const Document> docs,
                          Rng& rng) {
    Validation v;
    if (config.kind == TrainKind::classifier) {
        const auto q = class_probabilities(model, docs);
        double nll = 0.0;
        std::size_t correct = 0;
        for (std::size_t n = 0; n < docs.size(); ++n) {
            const auto& row = q[n];
            nll -= std::log(row.at(static_cast<std::size_t>(docs[n].label)));
            correct += static_cast<int>(std::max_element(row.begin(), row.end()) - row.begin()) == docs[n].label;
        }
        v.selection = nll / static_cast<double>(docs.size());
        v.accuracy = static_cast<double>(correct) / static_cast<double>(docs.size());
        return v;
    }
    v.bound = eval_nll_ppl(model, docs, config.eval_mode, &rng);
    v.selection = v.bound->nll;
    if (all_labeled(docs)) {
        if (config.kind == TrainKind::semi) v.accuracy = classification_accuracy(model, docs);
        if (config.kind == TrainKind::cluster) {
            std::vector<int> labels;
            for (const auto& d : docs) labels.push_back(d.label);
            const auto q = class_probabilities(model, docs);
            v.accuracy = assign_and_score(q, labels, q, labels).accuracy;
        }
    }
    return v;
}

} // namespace

TrainResult train(const TrainConfig& config, const TrainData& data) {
    config.validate();
    const bool uses_labels = config.kind == TrainKind::semi || config.kind == TrainKind::classifier;
    if (uses_labels && !data.labeled.empty() && !all_labeled(data.labeled))
        throw InputError("labeled training set contains documents without labels");
    if (config.kind == TrainKind::classifier && data.labeled.empty())
        throw InputError("classifier training needs labeled documents");
    if (config.kind == TrainKind::semi && config.alpha > 0.0 && data.labeled.empty())
        throw InputError("alpha > 0 needs labeled documents");
    if (config.kind == TrainKind::classifier && !all_labeled(data.validation) && !data.validation.empty())
        throw InputError("classifier validation needs labeled documents");
    const bool drive_with_labeled =
        config.kind == TrainKind::classifier || (config.kind == TrainKind::semi && data.train.empty());
    const std::vector<Document>& driver = drive_with_labeled ? data.labeled : data.train;
    if (driver.empty() && config.schedule.epochs > 0) throw InputError("no training documents");

    ModelConfig mc = config.model;
    mc.seed = config.seed;
    TrainResult result{config.encoder_init ? pretrain_lm_then_init_encoder(config, data) : TextModel(mc), {}, 0,
                       std::nullopt, std::nullopt, false, 0};
    TextModel& model = result.model;
    RunManifest& manifest = result.manifest;
    std::optional<std::filesystem::path> best_path;
    if (config.out_dir) {
        std::filesystem::create_directories(*config.out_dir);
        manifest.attach_file(*config.out_dir / "manifest.jsonl");
        best_path = *config.out_dir / "best.ckpt";
    }
    manifest.append({{"type", "config"}, {"kind", to_string(config.kind)}, {"seed", config.seed},
                     {"config", config.to_kv()}, {"parameters", model.parameter_count()}});

    auto params = model.parameters();
    OptimState opt(params, config.adam);
    std::vector<Tensor> best_params;
    for (const auto& p : params) best_params.push_back(*p.tensor);
    double best_score = INFINITY;
    bool have_best = false;

    const Rng root(config.seed);
    const std::size_t per_epoch = (driver.size() + config.batch_size - 1) / config.batch_size;
    const double total_iterations = static_cast<double>(std::max<std::size_t>(1, per_epoch * config.schedule.epochs));
    const std::size_t labeled_batch = std::min(config.batch_size, std::max<std::size_t>(1, data.labeled.size()));
    const RelaxationSettings base_relax{config.schedule.tau_start, config.gumbel_samples, 1.0};
    std::size_t iteration = 0;

    for (std::size_t epoch = 0; epoch < config.schedule.epochs && !result.diverged; ++epoch) {
        const double start = now_seconds();
        const double lr = learning_rate(epoch, config.schedule, config.adam.lr);
        const Rng erng = root.split("epoch").split(epoch);
        Rng shuffle = erng.split("shuffle");
        const std::vector<Batch> batches = batchify(driver, config.batch_size, &shuffle, config.sort_by_length);
        std::vector<Batch> labeled_batches;
        if (config.kind == TrainKind::semi && !data.labeled.empty() && !drive_with_labeled) {
            Rng lshuffle = erng.split("labeled");
            labeled_batches = batchify(data.labeled, labeled_batch, &lshuffle, false);
        }
        double sum_recon = 0.0, sum_kl = 0.0, sum_total = 0.0, weight_sum = 0.0, last_kl_weight = 0.0, tau = 0.0;
        for (std::size_t i = 0; i < batches.size(); ++i) {
            const Batch& batch = batches[i];
            const Rng brng = erng.split("batch").split(i);
            Rng drop = brng.split("dropout"), eps_rng = brng.split("eps"), gumbel = brng.split("gumbel");
            const ForwardContext ctx{true, &drop};
            const double klw = kl_weight(iteration, config.schedule);
            tau = gumbel_tau(static_cast<double>(iteration) / total_iterations, config.schedule);
            RelaxationSettings relax = base_relax;
            relax.tau = tau;
            relax.kl_weight = klw;
            last_kl_weight = klw;
            const std::size_t z = mc.z_dim;

            Tape tape;
            StepLoss step;
            switch (config.kind) {
            case TrainKind::lm: {
                LossBreakdown l = lm_loss(tape, model, batch, ctx);
                step = {l.total, l.reconstruction.value().item(), 0.0};
                break;
            }
            case TrainKind::vae: {
                LossBreakdown l = elbo_loss(tape, model, batch, Tensor::normal({batch.size, z}, eps_rng), klw, ctx);
                step = {l.total, l.reconstruction.value().item(), l.kl.value().item()};
                break;
            }
            case TrainKind::semi: {
                const Batch* lab = drive_with_labeled ? &batch
                                   : labeled_batches.empty()
                                       ? nullptr
                                       : &labeled_batches[i % labeled_batches.size()];
                const Batch* unl = drive_with_labeled ? nullptr : &batch;
                SemiBatchNoise noise;
                noise.labeled_eps = Tensor::normal({lab ? lab->size : 1, z}, eps_rng);
                noise.unlabeled_eps = Tensor::normal({unl ? unl->size * relax.samples : 1, z}, eps_rng);
                SemiObjectiveTerms t = semi_objective(tape, model, lab, unl, config.alpha, noise, gumbel, relax, ctx);
                step = {t.total, t.labeled_loss.value().item(), t.unlabeled_loss.value().item()};
                break;
            }
            case TrainKind::cluster: {
                ClusterLossTerms t = cluster_loss(tape, model, batch, Tensor::normal({batch.size * relax.samples, z}, eps_rng),
                                                  gumbel, relax, config.gamma, ctx);
                step = {t.total, t.labeled_loss.value().item(), t.clamped_kl.value().item()};
                break;
            }
            case TrainKind::classifier: {
                Var hidden = model.encoder_state(tape, batch, ctx);
                Var log_q = log_softmax(model.classifier_logits(tape, hidden));
                Var y = tape.constant(one_hot(batch.labels, mc.num_classes));
                Var loss = scale(sum(mul(log_q, y)), -1.0 / static_cast<double>(batch.size));
                step = {loss, loss.value().item(), 0.0};
                break;
            }
            }
            const double total = step.total.value().item();
            std::string failure;
            if (!std::isfinite(total)) {
                failure = "non-finite training loss";
            } else {
                tape.backward(step.total);
                std::vector<Tensor> grads = collect_gradients(tape, params);
                try {
                    for (std::size_t k = 0; k < grads.size(); ++k)
                        if (!grads[k].all_finite()) throw NumericError("non-finite gradient in '" + params[k].name + "'");
                    clip_gradients(grads, config.adam.clip_norm);
                    adam_step(opt, params, grads, lr);
                } catch (const NumericError& e) {
                    failure = e.what();
                }
            }
            if (!failure.empty()) {
                result.diverged = true;
                result.last_good_epoch = epoch;
                manifest.append({{"type", "diverged"}, {"epoch", epoch}, {"batch", i}, {"reason", failure},
                                 {"last_good_epoch", epoch}});
                break;
            }
            const double w = static_cast<double>(batch.size);
            sum_recon += step.reconstruction * w;
            sum_kl += step.kl * w;
            sum_total += total * w;
            weight_sum += w;
            ++iteration;
        }
        if (result.diverged) break;

        nlohmann::json rec{{"type", "epoch"},
                           {"epoch", epoch},
                           {"lr", lr},
                           {"kl_weight", last_kl_weight},
                           {"iterations", iteration},
                           {"train_reconstruction", sum_recon / weight_sum},
                           {"train_kl", sum_kl / weight_sum},
                           {"train_total", sum_total / weight_sum}};
        if (config.kind == TrainKind::semi || config.kind == TrainKind::cluster) rec["tau"] = tau;
        double score = -static_cast<double>(epoch);  // without validation the latest epoch wins
        if (!data.validation.empty()) {
            Rng vrng = erng.split("validation");
            Validation v;
            try {
                v = validate_epoch(config, model, data.validation, vrng);
            } catch (const NumericError& e) {
                result.diverged = true;
                result.last_good_epoch = epoch;
                manifest.append({{"type", "diverged"}, {"epoch", epoch}, {"reason", e.what()},
                                 {"last_good_epoch", epoch}});
                break;
            }
            if (v.bound) {
                rec["val_reconstruction"] = v.bound->reconstruction;
                rec["val_kl"] = v.bound->kl;
                rec["val_total"] = v.bound->nll;
                rec["val_ppl"] = v.bound->ppl;
            } else {
                rec["val_total"] = v.selection;
            }
            if (v.accuracy) rec["accuracy"] = *v.accuracy;
            score = v.selection;
            if (score < best_score) {
                result.best_validation = v.bound;
                result.best_accuracy = v.accuracy;
            }
        }
        rec["seconds"] = now_seconds() - start;
        manifest.append(rec);
        result.last_good_epoch = epoch + 1;
        if (score < best_score) {
            best_score = score;
            have_best = true;
            result.best_epoch = epoch;
            for (std::size_t k = 0; k < params.size(); ++k) best_params[k] = *params[k].tensor;
            if (best_path) save_checkpoint(*best_path, model, config.checkpoint_extra);
        }
    }
    if (have_best)
        for (std::size_t k = 0; k < params.size(); ++k) *params[k].tensor = best_params[k];
    if (best_path && !have_best) save_checkpoint(*best_path, model, config.checkpoint_extra);
    manifest.append({{"type", "end"},
                     {"status", result.diverged ? "diverged" : "ok"},
                     {"epochs_completed", result.last_good_epoch},
                     {"best_epoch", have_best ? nlohmann::json(result.best_epoch) : nlohmann::json(nullptr)}});
    return result;
}

} // namespace dilvae
