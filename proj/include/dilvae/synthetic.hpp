#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "dilvae/data.hpp"

namespace dilvae {

/// Row-stochastic matrix stored row-major.
struct Markov {
    std::size_t states = 0;
    std::vector<double> start;       // initial distribution; empty = stationary
    std::vector<double> transition;  // [states x states]

    double p(std::size_t from, std::size_t to) const { return transition[from * states + to]; }
};

/// Class-conditional first-order Markov sources for desk-scale corpora.
///
/// File format (key = value lines, '#' comments):
///
///     classes = 2
///     vocab = 50
///     docs = 2000
///     min_length = 30
///     max_length = 50
///     seed = 7
///     generator = shared      # uniform | cycle | disjoint | shared | topic | explicit
///     successors = 4          # nonzero entries per row (disjoint, shared, topic)
///     class_strength = 0.5    # weight of the class-specific part (shared), or
///                             # std-dev of the per-class log weight on each
///                             # next token (topic)
///
/// `generator = explicit` takes one block per class:
///
///     [class 0]
///     start = 1 0 0           # optional
///     transition:
///     0 1 0
///     0 0 1
///     1 0 0
struct SyntheticSpec {
    std::size_t num_classes = 1;
    std::size_t vocab_size = 10;
    std::size_t num_docs = 100;
    std::size_t min_length = 5;
    std::size_t max_length = 10;
    std::uint64_t seed = 1;
    std::string generator = "uniform";
    std::size_t successors = 4;
    double class_strength = 0.5;
    std::vector<Markov> chains;  // filled for explicit specs, or by materialize()

    static SyntheticSpec parse(const std::string& text);
    static SyntheticSpec load(const std::filesystem::path& path);

    /// Builds `chains` from the generator settings (no-op for explicit).
    void materialize();
    /// Throws InputError ("spec error: ...") on non-stochastic rows or
    /// inconsistent sizes.
    void validate() const;
};

struct SyntheticCorpus {
    std::vector<std::string> lines;  // "label<TAB>w3 w17 ..."
    std::vector<int> labels;
    std::vector<std::vector<std::size_t>> states;  // raw state sequences
    std::vector<double> entropy_rate;              // nats per transition, per class
    std::vector<Markov> chains;  // start vectors always filled
};

/// Name of content token for Markov state i.
std::string state_token(std::size_t state);

SyntheticCorpus generate_synthetic(SyntheticSpec spec);

/// Stationary distribution (of the lazy chain, so periodic chains converge).
std::vector<double> stationary_distribution(const Markov& chain);
/// sum_i pi_i H(T_i.) in nats.
double entropy_rate(const Markov& chain);

/// log p(states | class) under the class chain; start uses the stationary
/// law when the chain has none.
double sequence_log_likelihood(const Markov& chain, const std::vector<std::size_t>& states);
/// argmax over classes of the sequence likelihood (uniform class prior).
int bayes_classify(const std::vector<Markov>& chains, const std::vector<std::size_t>& states);

} // namespace dilvae
