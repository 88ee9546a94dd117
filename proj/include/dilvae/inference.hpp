#pragma once

#include <iosfwd>
#include <optional>
#include <vector>

#include "dilvae/model.hpp"

namespace dilvae {

struct BeamResult {
    std::vector<int> tokens;  // generated ids, EOS excluded
    double log_prob = 0.0;    // sum over emitted tokens including EOS
    double score = 0.0;       // log_prob / emitted token count
    bool finished = false;    // false when the length cap cut it off
};

/// Length-normalized beam search from BOS. `condition` is [1 x cdim] (or
/// absent for language models). PAD and BOS are never emitted.
BeamResult beam_search(const TextModel& model, std::optional<Tensor> condition, std::size_t beam,
                       std::size_t max_length = 200);

/// Greedy argmax decoding under the same token restrictions.
BeamResult greedy_decode(const TextModel& model, std::optional<Tensor> condition, std::size_t max_length = 200);

struct GenerateOptions {
    std::size_t beam = 10;
    std::size_t max_length = 200;
    std::optional<int> label;       // semi models only
    std::optional<std::vector<double>> z;  // default: a draw from N(0, I)
    std::uint64_t seed = 1;
};

struct Generated {
    std::optional<int> label;
    BeamResult result;
};

/// One z for the whole call. Semi models emit one result per class
/// unless a label is given; a label for any other model is a UsageError.
std::vector<Generated> generate(const TextModel& model, const GenerateOptions& options);

/// RFC-4180 field quoting.
std::string csv_field(const std::string& field);

/// Writes "doc_id,label,mu_1,...,mu_z" rows (CRLF line ends) with the
/// posterior mean of every document. Semi models feed q(y|x) to q(z|x,y).
void export_latent(const TextModel& model, std::span<const Document> docs, std::ostream& out);

} // namespace dilvae
