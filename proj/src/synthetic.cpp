#include "dilvae/synthetic.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <numeric>
#include <sstream>

#include "dilvae/errors.hpp"

namespace dilvae {

namespace {

std::string trim(const std::string& s) {
    const auto b = s.find_first_not_of(" \t\r");
    if (b == std::string::npos) return {};
    const auto e = s.find_last_not_of(" \t\r");
    return s.substr(b, e - b + 1);
}

std::vector<double> parse_row(const std::string& text, std::size_t line) {
    std::istringstream in(text);
    std::vector<double> row;
    std::string field;
    while (in >> field) {
        try {
            std::size_t used = 0;
            row.push_back(std::stod(field, &used));
            if (used != field.size()) throw std::invalid_argument(field);
        } catch (const std::exception&) {
            throw ParseError("not a number: '" + field + "'", line);
        }
    }
    return row;
}

std::size_t parse_count(const std::string& value, std::size_t line) {
    try {
        std::size_t used = 0;
        const long long v = std::stoll(value, &used);
        if (used != value.size() || v < 0) throw std::invalid_argument(value);
        return static_cast<std::size_t>(v);
    } catch (const std::exception&) {
        throw ParseError("expected a non-negative integer, got '" + value + "'", line);
    }
}

/// Sparse random row: `k` successors with Dirichlet(1) weights.
std::vector<double> sparse_row(std::size_t n, std::span<const std::size_t> support, std::size_t k, Rng& rng) {
    std::vector<std::size_t> pool(support.begin(), support.end());
    k = std::min(k, pool.size());
    for (std::size_t i = 0; i < k; ++i) std::swap(pool[i], pool[i + rng.below(pool.size() - i)]);
    std::vector<double> row(n, 0.0);
    double total = 0.0;
    for (std::size_t i = 0; i < k; ++i) {
        const double w = -std::log(rng.uniform_open());
        row[pool[i]] = w;
        total += w;
    }
    for (double& v : row) v /= total;
    return row;
}

std::size_t sample(std::span<const double> probs, Rng& rng) {
    double u = rng.uniform();
    for (std::size_t i = 0; i < probs.size(); ++i) {
        u -= probs[i];
        if (u < 0.0) return i;
    }
    // Round-off: fall back to the last state with mass.
    for (std::size_t i = probs.size(); i-- > 0;)
        if (probs[i] > 0.0) return i;
    return 0;
}

} // namespace

SyntheticSpec SyntheticSpec::parse(const std::string& text) {
    SyntheticSpec spec;
    std::istringstream in(text);
    std::string raw;
    std::size_t line_no = 0;
    Markov* current = nullptr;
    bool reading_matrix = false;
    std::vector<std::vector<double>> rows;
    auto flush_matrix = [&] {
        if (!current) return;
        for (auto& r : rows) current->transition.insert(current->transition.end(), r.begin(), r.end());
        current->states = rows.size();
        rows.clear();
        reading_matrix = false;
    };
    while (std::getline(in, raw)) {
        ++line_no;
        std::string line = trim(raw.substr(0, raw.find('#')));
        if (line.empty()) continue;
        if (line.front() == '[') {
            flush_matrix();
            if (line.back() != ']' || line.rfind("[class", 0) != 0) throw ParseError("expected '[class N]'", line_no);
            const std::size_t idx = parse_count(trim(line.substr(6, line.size() - 7)), line_no);
            if (idx != spec.chains.size()) throw ParseError("class blocks must appear in order", line_no);
            spec.chains.emplace_back();
            current = &spec.chains.back();
            continue;
        }
        if (line == "transition:") {
            if (!current) throw ParseError("transition block outside a [class N] section", line_no);
            reading_matrix = true;
            continue;
        }
        const auto eq = line.find('=');
        if (eq == std::string::npos) {
            if (!reading_matrix) throw ParseError("expected 'key = value'", line_no);
            rows.push_back(parse_row(line, line_no));
            continue;
        }
        const std::string key = trim(line.substr(0, eq));
        const std::string value = trim(line.substr(eq + 1));
        if (current) {
            if (key != "start") throw ParseError("unknown class key '" + key + "'", line_no);
            current->start = parse_row(value, line_no);
            continue;
        }
        if (key == "classes") spec.num_classes = parse_count(value, line_no);
        else if (key == "vocab") spec.vocab_size = parse_count(value, line_no);
        else if (key == "docs") spec.num_docs = parse_count(value, line_no);
        else if (key == "min_length") spec.min_length = parse_count(value, line_no);
        else if (key == "max_length") spec.max_length = parse_count(value, line_no);
        else if (key == "seed") spec.seed = parse_count(value, line_no);
        else if (key == "generator") spec.generator = value;
        else if (key == "successors") spec.successors = parse_count(value, line_no);
        else if (key == "class_strength") {
            auto v = parse_row(value, line_no);
            if (v.size() != 1) throw ParseError("class_strength takes one number", line_no);
            spec.class_strength = v[0];
        } else {
            throw ParseError("unknown key '" + key + "'", line_no);
        }
    }
    flush_matrix();
    return spec;
}

SyntheticSpec SyntheticSpec::load(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw InputError("cannot read synthetic spec " + path.string());
    std::stringstream ss;
    ss << in.rdbuf();
    return parse(ss.str());
}

void SyntheticSpec::materialize() {
    if (generator == "explicit") return;
    if (num_classes == 0 || vocab_size == 0) throw InputError("spec error: classes and vocab must be positive");
    Rng rng = Rng(seed).split("chains");
    const std::size_t n = vocab_size;
    std::vector<std::size_t> all(n);
    std::iota(all.begin(), all.end(), 0);
    chains.assign(num_classes, Markov{n, {}, std::vector<double>(n * n, 0.0)});
    if (generator == "uniform") {
        for (auto& c : chains) std::fill(c.transition.begin(), c.transition.end(), 1.0 / static_cast<double>(n));
    } else if (generator == "cycle") {
        for (auto& c : chains) {
            for (std::size_t i = 0; i < n; ++i) c.transition[i * n + (i + 1) % n] = 1.0;
            c.start.assign(n, 0.0);
            c.start[0] = 1.0;
        }
    } else if (generator == "disjoint") {
        if (n < num_classes) throw InputError("spec error: disjoint generator needs vocab >= classes");
        for (std::size_t k = 0; k < num_classes; ++k) {
            std::vector<std::size_t> support;
            for (std::size_t i = k; i < n; i += num_classes) support.push_back(i);
            auto& c = chains[k];
            c.start.assign(n, 0.0);
            for (std::size_t s : support) c.start[s] = 1.0 / static_cast<double>(support.size());
            // Rows outside the class support are never visited; keep them stochastic anyway.
            for (std::size_t i = 0; i < n; ++i) {
                auto row = sparse_row(n, support, successors, rng);
                std::copy(row.begin(), row.end(), c.transition.begin() + static_cast<std::ptrdiff_t>(i * n));
            }
        }
    } else if (generator == "shared") {
        if (class_strength < 0.0 || class_strength > 1.0) throw InputError("spec error: class_strength must be in [0,1]");
        std::vector<double> base;
        for (std::size_t i = 0; i < n; ++i) {
            auto row = sparse_row(n, all, successors, rng);
            base.insert(base.end(), row.begin(), row.end());
        }
        for (auto& c : chains)
            for (std::size_t i = 0; i < n; ++i) {
                auto row = sparse_row(n, all, successors, rng);
                for (std::size_t j = 0; j < n; ++j)
                    c.transition[i * n + j] = (1.0 - class_strength) * base[i * n + j] + class_strength * row[j];
            }
    } else if (generator == "topic") {
        if (class_strength < 0.0) throw InputError("spec error: class_strength must be >= 0");
        std::vector<double> base;
        for (std::size_t i = 0; i < n; ++i) {
            auto row = sparse_row(n, all, successors, rng);
            base.insert(base.end(), row.begin(), row.end());
        }
        for (auto& c : chains) {
            std::vector<double> weight(n);
            for (auto& w : weight) w = std::exp(class_strength * rng.normal());
            for (std::size_t i = 0; i < n; ++i) {
                double total = 0.0;
                for (std::size_t j = 0; j < n; ++j) total += base[i * n + j] * weight[j];
                for (std::size_t j = 0; j < n; ++j) c.transition[i * n + j] = base[i * n + j] * weight[j] / total;
            }
        }
    } else {
        throw InputError("spec error: unknown generator '" + generator + "'");
    }
}

void SyntheticSpec::validate() const {
    if (chains.size() != num_classes)
        throw InputError("spec error: " + std::to_string(chains.size()) + " chains for " +
                         std::to_string(num_classes) + " classes");
    if (min_length < 1 || min_length > max_length) throw InputError("spec error: need 1 <= min_length <= max_length");
    for (std::size_t k = 0; k < chains.size(); ++k) {
        const Markov& c = chains[k];
        if (c.states != vocab_size || c.transition.size() != c.states * c.states)
            throw InputError("spec error: class " + std::to_string(k) + " matrix is not " + std::to_string(vocab_size) +
                             "x" + std::to_string(vocab_size));
        for (std::size_t i = 0; i < c.states; ++i) {
            double total = 0.0;
            for (std::size_t j = 0; j < c.states; ++j) {
                const double v = c.p(i, j);
                if (v < 0.0 || !std::isfinite(v))
                    throw InputError("spec error: class " + std::to_string(k) + " row " + std::to_string(i) +
                                     " has a negative entry");
                total += v;
            }
            if (std::abs(total - 1.0) > 1e-9)
                throw InputError("spec error: class " + std::to_string(k) + " row " + std::to_string(i) +
                                 " sums to " + std::to_string(total));
        }
        if (!c.start.empty()) {
            if (c.start.size() != c.states) throw InputError("spec error: start vector has the wrong length");
            const double total = std::accumulate(c.start.begin(), c.start.end(), 0.0);
            if (std::abs(total - 1.0) > 1e-9) throw InputError("spec error: start vector does not sum to 1");
        }
    }
}

std::string state_token(std::size_t state) { return "w" + std::to_string(state); }

std::vector<double> stationary_distribution(const Markov& chain) {
    const std::size_t n = chain.states;
    std::vector<double> pi(n, 1.0 / static_cast<double>(n)), next(n);
    for (int iter = 0; iter < 200000; ++iter) {
        std::fill(next.begin(), next.end(), 0.0);
        for (std::size_t i = 0; i < n; ++i) {
            next[i] += 0.5 * pi[i];
            for (std::size_t j = 0; j < n; ++j) next[j] += 0.5 * pi[i] * chain.p(i, j);
        }
        double diff = 0.0;
        for (std::size_t i = 0; i < n; ++i) diff += std::abs(next[i] - pi[i]);
        pi.swap(next);
        if (diff < 1e-15) break;
    }
    return pi;
}

double entropy_rate(const Markov& chain) {
    const auto pi = stationary_distribution(chain);
    double h = 0.0;
    for (std::size_t i = 0; i < chain.states; ++i) {
        double row = 0.0;
        for (std::size_t j = 0; j < chain.states; ++j) {
            const double p = chain.p(i, j);
            if (p > 0.0) row -= p * std::log(p);
        }
        h += pi[i] * row;
    }
    return h;
}

SyntheticCorpus generate_synthetic(SyntheticSpec spec) {
    spec.materialize();
    spec.validate();
    SyntheticCorpus corpus;
    Rng rng = Rng(spec.seed).split("documents");
    std::vector<std::vector<double>> starts;
    for (const auto& c : spec.chains) {
        starts.push_back(c.start.empty() ? stationary_distribution(c) : c.start);
        corpus.entropy_rate.push_back(entropy_rate(c));
    }
    for (std::size_t d = 0; d < spec.num_docs; ++d) {
        const std::size_t label = rng.below(spec.num_classes);
        const std::size_t len = spec.min_length + rng.below(spec.max_length - spec.min_length + 1);
        const Markov& chain = spec.chains[label];
        std::vector<std::size_t> states;
        states.push_back(sample(starts[label], rng));
        while (states.size() < len) {
            const std::size_t prev = states.back();
            states.push_back(sample(std::span<const double>(chain.transition).subspan(prev * chain.states, chain.states), rng));
        }
        std::string line = std::to_string(label) + "\t";
        for (std::size_t i = 0; i < states.size(); ++i) {
            if (i) line += ' ';
            line += state_token(states[i]);
        }
        corpus.lines.push_back(std::move(line));
        corpus.labels.push_back(static_cast<int>(label));
        corpus.states.push_back(std::move(states));
    }
    corpus.chains = std::move(spec.chains);
    for (std::size_t k = 0; k < corpus.chains.size(); ++k) corpus.chains[k].start = starts[k];
    return corpus;
}

double sequence_log_likelihood(const Markov& chain, const std::vector<std::size_t>& states) {
    if (states.empty()) return 0.0;
    const auto start = chain.start.empty() ? stationary_distribution(chain) : chain.start;
    double ll = std::log(start[states[0]]);
    for (std::size_t i = 1; i < states.size(); ++i) ll += std::log(chain.p(states[i - 1], states[i]));
    return ll;
}

int bayes_classify(const std::vector<Markov>& chains, const std::vector<std::size_t>& states) {
    int best = 0;
    double best_ll = -std::numeric_limits<double>::infinity();
    for (std::size_t k = 0; k < chains.size(); ++k) {
        const double ll = sequence_log_likelihood(chains[k], states);
        if (ll > best_ll) {
            best_ll = ll;
            best = static_cast<int>(k);
        }
    }
    return best;
}

} // namespace dilvae
