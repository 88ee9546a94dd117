#include "dilvae/semi.hpp"

#include <algorithm>
#include <cmath>
#include <map>

#include "dilvae/errors.hpp"

namespace dilvae {

Var classify(Tape& tape, const TextModel& model, const Batch& batch, const ForwardContext& ctx) {
    return softmax(model.classifier_logits(tape, model.encoder_state(tape, batch, ctx)));
}

Tensor gumbel_noise(Shape shape, Rng& rng) {
    Tensor g(std::move(shape));
    for (double& v : g.values()) v = -std::log(-std::log(rng.uniform_open()));
    return g;
}

Var gumbel_softmax(Var logits, const Tensor& gumbel, double tau) {
    if (!(tau > 0.0)) throw ParameterError("gumbel_softmax: tau must be positive");
    if (gumbel.shape() != logits.shape()) throw DimensionError("gumbel_softmax: noise shape mismatch");
    Var perturbed = add(logits, logits.tape->constant(gumbel));
    return softmax(scale(perturbed, 1.0 / tau));
}

Var gumbel_softmax(Var logits, double tau, Rng& rng) {
    if (!(tau > 0.0)) throw ParameterError("gumbel_softmax: tau must be positive");
    return gumbel_softmax(logits, gumbel_noise(logits.shape(), rng), tau);
}

Var categorical_kl_uniform(Var log_q) {
    const double log_c = std::log(static_cast<double>(log_q.dim(1)));
    return sum_axis(mul(exp(log_q), add_scalar(log_q, log_c)), 1);
}

Var clamped_categorical_kl(Var log_q, double gamma) {
    if (gamma < 0.0) throw ParameterError("gamma must be non-negative");
    return clamp_min(mean(categorical_kl_uniform(log_q)), gamma);
}

Tensor one_hot(std::span<const int> labels, std::size_t num_classes) {
    Tensor out({labels.size(), num_classes});
    for (std::size_t b = 0; b < labels.size(); ++b) {
        if (labels[b] < 0 || static_cast<std::size_t>(labels[b]) >= num_classes)
            throw IndexError("class id " + std::to_string(labels[b]) + " outside " + std::to_string(num_classes) +
                             " classes");
        out.at(b, static_cast<std::size_t>(labels[b])) = 1.0;
    }
    return out;
}

LabeledTerms labeled_bound(Tape& tape, const TextModel& model, const Batch& batch, Var label, const Tensor& eps,
                           double kl_weight, const ForwardContext& ctx, std::optional<Var> hidden) {
    const auto& cfg = model.config();
    if (cfg.kind != ModelKind::semi) throw ConfigError("labeled_bound needs a semi model");
    if (label.shape() != Shape{batch.size, cfg.num_classes}) throw DimensionError("label must be [B x num_classes]");
    Var h = hidden ? *hidden : model.encoder_state(tape, batch, ctx);
    GaussianPosterior post = model.posterior(tape, h, label);
    Var z = reparameterize(post, tape.constant(eps));
    Var recon = reconstruction_per_document(tape, model, concat({label, z}, 1), batch, ctx);
    Var kl = kl_to_standard_normal(post);
    Var loss = kl_weight == 0.0 ? recon : add(recon, scale(kl, kl_weight));
    return {recon, kl, loss};
}

namespace {

Tensor eps_block(const Tensor& eps, std::size_t index, std::size_t batch, std::size_t z) {
    if (eps.rank() != 2 || eps.dim(1) != z || eps.dim(0) < (index + 1) * batch)
        throw DimensionError("eps " + shape_str(eps.shape()) + " too small for sample " + std::to_string(index));
    Tensor out({batch, z});
    std::copy_n(eps.data() + index * batch * z, batch * z, out.data());
    return out;
}

} // namespace

UnlabeledTerms unlabeled_bound(Tape& tape, const TextModel& model, const Batch& batch, const Tensor& eps, Rng& rng,
                               const RelaxationSettings& settings, const ForwardContext& ctx) {
    if (settings.samples < 1) throw ParameterError("need at least one Gumbel sample");
    const auto& cfg = model.config();
    Var hidden = model.encoder_state(tape, batch, ctx);
    Var log_q = log_softmax(model.classifier_logits(tape, hidden));
    Var labeled;
    for (std::size_t s = 0; s < settings.samples; ++s) {
        Var y_soft = gumbel_softmax(log_q, settings.tau, rng);
        Var term = labeled_bound(tape, model, batch, y_soft, eps_block(eps, s, batch.size, cfg.z_dim),
                                 settings.kl_weight, ctx, hidden)
                       .loss;
        labeled = s == 0 ? term : add(labeled, term);
    }
    if (settings.samples > 1) labeled = scale(labeled, 1.0 / static_cast<double>(settings.samples));
    Var cat_kl = categorical_kl_uniform(log_q);
    return {labeled, cat_kl, add(labeled, cat_kl), log_q};
}

Var exact_unlabeled_loss(Tape& tape, const TextModel& model, const Batch& batch, const Tensor& eps, double kl_weight,
                         const ForwardContext& ctx) {
    const std::size_t c = model.config().num_classes;
    Var hidden = model.encoder_state(tape, batch, ctx);
    Var log_q = log_softmax(model.classifier_logits(tape, hidden));
    Var q = exp(log_q);
    std::vector<Var> per_class;
    for (std::size_t y = 0; y < c; ++y) {
        Tensor onehot({batch.size, c});
        for (std::size_t b = 0; b < batch.size; ++b) onehot.at(b, y) = 1.0;
        Var loss = labeled_bound(tape, model, batch, tape.constant(onehot), eps, kl_weight, ctx, hidden).loss;
        per_class.push_back(reshape(loss, {batch.size, 1}));
    }
    Var losses = concat(per_class, 1);  // [B x c]
    return add(sum_axis(mul(q, losses), 1), categorical_kl_uniform(log_q));
}

SemiObjectiveTerms semi_objective(Tape& tape, const TextModel& model, const Batch* labeled, const Batch* unlabeled,
                                  double alpha, const SemiBatchNoise& noise, Rng& rng,
                                  const RelaxationSettings& settings, const ForwardContext& ctx) {
    if (alpha < 0.0) throw ParameterError("alpha must be non-negative");
    if (alpha > 0.0 && (!labeled || labeled->size == 0)) throw InputError("alpha > 0 needs labeled data");
    const auto& cfg = model.config();
    SemiObjectiveTerms terms;
    terms.alpha = alpha;
    Var zero = tape.constant(Tensor::scalar(0.0));
    terms.labeled_loss = zero;
    terms.unlabeled_loss = zero;
    terms.classifier_log_likelihood = zero;
    if (labeled) {
        if (!labeled->has_labels()) throw InputError("labeled batch has documents without labels");
        Var hidden = model.encoder_state(tape, *labeled, ctx);
        Var y = tape.constant(one_hot(labeled->labels, cfg.num_classes));
        terms.labeled_loss =
            mean(labeled_bound(tape, model, *labeled, y, noise.labeled_eps, settings.kl_weight, ctx, hidden).loss);
        Var log_q = log_softmax(model.classifier_logits(tape, hidden));
        terms.classifier_log_likelihood = scale(sum(mul(log_q, y)), 1.0 / static_cast<double>(labeled->size));
    }
    if (unlabeled) {
        terms.unlabeled_loss = mean(unlabeled_bound(tape, model, *unlabeled, noise.unlabeled_eps, rng, settings, ctx).loss);
    }
    terms.total = sub(add(terms.labeled_loss, terms.unlabeled_loss), scale(terms.classifier_log_likelihood, alpha));
    return terms;
}

ClusterLossTerms cluster_loss(Tape& tape, const TextModel& model, const Batch& batch, const Tensor& eps, Rng& rng,
                              const RelaxationSettings& settings, double gamma, const ForwardContext& ctx) {
    UnlabeledTerms u = unlabeled_bound(tape, model, batch, eps, rng, settings, ctx);
    Var labeled = mean(u.labeled_loss);
    Var clamped = clamped_categorical_kl(u.log_q, gamma);
    return {labeled, clamped, add(labeled, clamped)};
}

std::vector<std::vector<double>> class_probabilities(const TextModel& model, std::span<const Document> docs,
                                                     std::size_t batch_size) {
    std::vector<std::vector<double>> out;
    const std::size_t c = model.config().num_classes;
    for (const Batch& batch : batchify(docs, batch_size)) {
        Tape tape;
        const Tensor& q = classify(tape, model, batch).value();
        for (std::size_t b = 0; b < batch.size; ++b) out.emplace_back(q.data() + b * c, q.data() + (b + 1) * c);
    }
    return out;
}

namespace {

std::size_t argmax(const std::vector<double>& row) {
    return static_cast<std::size_t>(std::max_element(row.begin(), row.end()) - row.begin());
}

} // namespace

ClusterReport assign_and_score(const std::vector<std::vector<double>>& valid_q, std::span<const int> valid_labels,
                               const std::vector<std::vector<double>>& test_q, std::span<const int> test_labels) {
    if (valid_q.empty() || test_q.empty()) throw InputError("cluster evaluation needs validation and test documents");
    if (valid_q.size() != valid_labels.size() || test_q.size() != test_labels.size())
        throw DimensionError("cluster evaluation: probabilities and labels disagree in count");
    const std::size_t c = valid_q.front().size();
    constexpr double kTie = 1e-12;
    ClusterReport report;
    report.cluster_label.assign(c, -1);
    for (std::size_t i = 0; i < c; ++i) {
        // Only samples whose most likely cluster is i belong to cluster i.
        double best = -1.0;
        for (std::size_t n = 0; n < valid_q.size(); ++n)
            if (argmax(valid_q[n]) == i) best = std::max(best, valid_q[n][i]);
        if (best < 0.0) {
            report.empty_clusters.push_back(i);
            continue;
        }
        std::map<int, std::size_t> votes;
        for (std::size_t n = 0; n < valid_q.size(); ++n)
            if (argmax(valid_q[n]) == i && valid_q[n][i] >= best - kTie) ++votes[valid_labels[n]];
        int label = -1;
        std::size_t most = 0;
        for (const auto& [l, count] : votes)
            if (count > most) {
                most = count;
                label = l;
            }
        report.cluster_label[i] = label;
    }
    std::size_t correct = 0;
    for (std::size_t n = 0; n < test_q.size(); ++n) {
        const int assigned = report.cluster_label[argmax(test_q[n])];
        correct += assigned >= 0 && assigned == test_labels[n];
    }
    report.accuracy = static_cast<double>(correct) / static_cast<double>(test_q.size());
    return report;
}

ClusterReport cluster_evaluate(const TextModel& model, std::span<const Document> validation,
                               std::span<const Document> test) {
    std::vector<int> vl, tl;
    for (const auto& d : validation) vl.push_back(d.label);
    for (const auto& d : test) tl.push_back(d.label);
    return assign_and_score(class_probabilities(model, validation), vl, class_probabilities(model, test), tl);
}

double classification_accuracy(const TextModel& model, std::span<const Document> docs) {
    if (docs.empty()) throw InputError("no documents to classify");
    const auto q = class_probabilities(model, docs);
    std::size_t correct = 0;
    for (std::size_t n = 0; n < docs.size(); ++n) correct += static_cast<int>(argmax(q[n])) == docs[n].label;
    return static_cast<double>(correct) / static_cast<double>(docs.size());
}

} // namespace dilvae
