#pragma once

#include <optional>
#include <vector>

#include "dilvae/model.hpp"

namespace dilvae {

/// q(y|x) as probabilities [B x c].
Var classify(Tape& tape, const TextModel& model, const Batch& batch, const ForwardContext& ctx = {});

/// Standard Gumbel(0, 1) noise g = -log(-log u).
Tensor gumbel_noise(Shape shape, Rng& rng);

/// Relaxed one-hot sample softmax((log pi + g) / tau) with the given noise.
/// `logits` are log-probabilities up to a per-row constant.
Var gumbel_softmax(Var logits, const Tensor& gumbel, double tau);
Var gumbel_softmax(Var logits, double tau, Rng& rng);

/// Per-example KL(q || uniform) from log q, [B].
Var categorical_kl_uniform(Var log_q);

/// max(gamma, mean_b KL(q_b || uniform)); flat (zero gradient) below gamma.
Var clamped_categorical_kl(Var log_q, double gamma);

/// Per-example terms of the labeled bound. loss = recon + kl_weight * kl
/// is -L(x, y) (up to the constant log p(y)).
struct LabeledTerms {
    Var reconstruction;
    Var kl;
    Var loss;
};

/// -L(x, y) for a one-hot or relaxed label y[B x c]. q(z|x,y) reads the
/// encoder state concatenated with y; the decoder is conditioned on y ++ z.
/// `hidden` reuses an encoder pass when given.
LabeledTerms labeled_bound(Tape& tape, const TextModel& model, const Batch& batch, Var label, const Tensor& eps,
                           double kl_weight, const ForwardContext& ctx = {}, std::optional<Var> hidden = std::nullopt);

/// One-hot rows for integer labels; throws IndexError on a bad class id.
Tensor one_hot(std::span<const int> labels, std::size_t num_classes);

struct UnlabeledTerms {
    Var labeled_loss;     // mean over Gumbel samples of -L(x, y_soft), [B]
    Var categorical_kl;   // KL(q(y|x) || p(y)), [B]
    Var loss;             // -U(x), [B]
    Var log_q;            // log q(y|x), [B x c]
};

struct RelaxationSettings {
    double tau = 1.0;
    std::size_t samples = 1;
    double kl_weight = 1.0;
};

/// -U(x) via the Gumbel-softmax relaxation. eps holds one [B x z] block per
/// Gumbel sample, stacked as [(samples*B) x z].
UnlabeledTerms unlabeled_bound(Tape& tape, const TextModel& model, const Batch& batch, const Tensor& eps, Rng& rng,
                               const RelaxationSettings& settings, const ForwardContext& ctx = {});

/// -U(x) by summing over every class: sum_y q(y|x) (-L(x,y)) + KL(q || p).
/// Same eps for every class.
Var exact_unlabeled_loss(Tape& tape, const TextModel& model, const Batch& batch, const Tensor& eps, double kl_weight,
                         const ForwardContext& ctx = {});

/// Terms of J = E_L[L(x,y)] + E_U[U(x)] + alpha E_L[log q(y|x)], each a batch
/// mean. total is -J, the quantity minimized.
struct SemiObjectiveTerms {
    Var labeled_loss;
    Var unlabeled_loss;
    Var classifier_log_likelihood;
    Var total;
    double alpha = 0.0;
};

struct SemiBatchNoise {
    Tensor labeled_eps;    // [B_l x z]
    Tensor unlabeled_eps;  // [(samples*B_u) x z]
};

SemiObjectiveTerms semi_objective(Tape& tape, const TextModel& model, const Batch* labeled, const Batch* unlabeled,
                                  double alpha, const SemiBatchNoise& noise, Rng& rng,
                                  const RelaxationSettings& settings, const ForwardContext& ctx = {});

/// Unsupervised clustering loss: mean -L(x, y_soft) + max(gamma, KL_y).
struct ClusterLossTerms {
    Var labeled_loss;
    Var clamped_kl;
    Var total;
};

ClusterLossTerms cluster_loss(Tape& tape, const TextModel& model, const Batch& batch, const Tensor& eps, Rng& rng,
                              const RelaxationSettings& settings, double gamma, const ForwardContext& ctx = {});

/// Cluster-to-label assignment and scored accuracy.
struct ClusterReport {
    double accuracy = 0.0;
    std::vector<int> cluster_label;  // -1 for empty clusters
    std::vector<std::size_t> empty_clusters;
};

/// Each cluster i takes the true label of the validation sample with the
/// highest q(y=i|x); ties are settled by majority label among the tied
/// samples. Test documents are scored by their argmax cluster; documents in
/// an empty cluster count as errors.
ClusterReport assign_and_score(const std::vector<std::vector<double>>& valid_q, std::span<const int> valid_labels,
                               const std::vector<std::vector<double>>& test_q, std::span<const int> test_labels);

/// q(y|x) rows for every document (evaluation mode).
std::vector<std::vector<double>> class_probabilities(const TextModel& model, std::span<const Document> docs,
                                                     std::size_t batch_size = 64);

ClusterReport cluster_evaluate(const TextModel& model, std::span<const Document> validation,
                               std::span<const Document> test);

/// Fraction of documents whose argmax q(y|x) equals the label.
double classification_accuracy(const TextModel& model, std::span<const Document> docs);

} // namespace dilvae
