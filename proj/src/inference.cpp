#include "dilvae/inference.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <ostream>

#include "dilvae/errors.hpp"
#include "dilvae/semi.hpp"

namespace dilvae {

namespace {

struct Hypothesis {
    std::vector<int> ids;  // BOS first
    double log_prob = 0.0;
};

double normalized(const Hypothesis& h) {
    return h.log_prob / static_cast<double>(h.ids.size() - 1);
}

/// Next-token log-probabilities for each prefix (all the same length).
Tensor next_log_probs(const TextModel& model, const std::optional<Tensor>& condition,
                      const std::vector<Hypothesis>& prefixes) {
    const std::size_t nb = prefixes.size(), nt = prefixes.front().ids.size(), v = model.config().vocab_size;
    std::vector<int> ids;
    ids.reserve(nb * nt);
    for (const auto& h : prefixes) ids.insert(ids.end(), h.ids.begin(), h.ids.end());
    Tape tape;
    std::optional<Var> cond;
    if (condition) {
        Tensor rows({nb, condition->numel()});
        for (std::size_t b = 0; b < nb; ++b) std::copy_n(condition->data(), condition->numel(), rows.data() + b * condition->numel());
        cond = tape.constant(std::move(rows));
    }
    Var logits = model.decode_embedded(tape, model.embed(tape, ids, nb, nt), cond, {});
    Tensor last({nb, v});
    for (std::size_t b = 0; b < nb; ++b)
        std::copy_n(logits.value().data() + (b * nt + nt - 1) * v, v, last.data() + b * v);
    Tape t2;
    return log_softmax(t2.constant(std::move(last))).value();
}

bool allowed(int token) { return token != kPad && token != kBos; }

void check_condition(const TextModel& model, const std::optional<Tensor>& condition) {
    const std::size_t cdim = model.config().condition_dim();
    if (cdim == 0 && condition) throw UsageError("this model takes no conditioning vector");
    if (cdim > 0 && (!condition || condition->numel() != cdim))
        throw UsageError("conditioning vector must have " + std::to_string(cdim) + " entries");
}

} // namespace

BeamResult beam_search(const TextModel& model, std::optional<Tensor> condition, std::size_t beam,
                       std::size_t max_length) {
    if (beam == 0) throw ParameterError("beam width must be positive");
    if (max_length == 0) throw ParameterError("max_length must be positive");
    check_condition(model, condition);
    const int v = static_cast<int>(model.config().vocab_size);
    std::vector<Hypothesis> alive{Hypothesis{{kBos}, 0.0}};
    std::vector<Hypothesis> finished;
    // Runs until every kept candidate has ended or the cap is hit; stopping
    // at `beam` finished hypotheses would favour short outputs.
    for (std::size_t step = 0; step < max_length && !alive.empty(); ++step) {
        const Tensor lp = next_log_probs(model, condition, alive);
        struct Candidate {
            double log_prob;
            std::size_t parent;
            int token;
        };
        std::vector<Candidate> cands;
        for (std::size_t b = 0; b < alive.size(); ++b)
            for (int t = 0; t < v; ++t)
                if (allowed(t)) cands.push_back({alive[b].log_prob + lp.at(b, static_cast<std::size_t>(t)), b, t});
        // Ties resolve toward the earlier beam and the smaller id, matching argmax.
        const std::size_t keep = std::min(beam, cands.size());
        std::partial_sort(cands.begin(), cands.begin() + static_cast<std::ptrdiff_t>(keep), cands.end(),
                          [](const Candidate& a, const Candidate& b) {
                              if (a.log_prob != b.log_prob) return a.log_prob > b.log_prob;
                              if (a.parent != b.parent) return a.parent < b.parent;
                              return a.token < b.token;
                          });
        std::vector<Hypothesis> next;
        for (std::size_t i = 0; i < keep; ++i) {
            Hypothesis h = alive[cands[i].parent];
            h.ids.push_back(cands[i].token);
            h.log_prob = cands[i].log_prob;
            (cands[i].token == kEos ? finished : next).push_back(std::move(h));
        }
        alive = std::move(next);
    }
    const bool any_finished = !finished.empty();
    const std::vector<Hypothesis>& pool = any_finished ? finished : alive;
    const Hypothesis* best = &pool.front();
    for (const auto& h : pool)
        if (normalized(h) > normalized(*best)) best = &h;
    BeamResult out;
    out.finished = any_finished;
    out.log_prob = best->log_prob;
    out.score = normalized(*best);
    for (std::size_t i = 1; i < best->ids.size(); ++i)
        if (best->ids[i] != kEos) out.tokens.push_back(best->ids[i]);
    return out;
}

BeamResult greedy_decode(const TextModel& model, std::optional<Tensor> condition, std::size_t max_length) {
    check_condition(model, condition);
    const std::size_t v = model.config().vocab_size;
    Hypothesis h{{kBos}, 0.0};
    BeamResult out;
    for (std::size_t step = 0; step < max_length; ++step) {
        const Tensor lp = next_log_probs(model, condition, {h});
        int best = -1;
        for (std::size_t t = 0; t < v; ++t)
            if (allowed(static_cast<int>(t)) && (best < 0 || lp[t] > lp[static_cast<std::size_t>(best)]))
                best = static_cast<int>(t);
        h.ids.push_back(best);
        h.log_prob += lp[static_cast<std::size_t>(best)];
        if (best == kEos) {
            out.finished = true;
            break;
        }
        out.tokens.push_back(best);
    }
    out.log_prob = h.log_prob;
    out.score = normalized(h);
    return out;
}

std::vector<Generated> generate(const TextModel& model, const GenerateOptions& options) {
    const auto& cfg = model.config();
    if (options.label && cfg.kind != ModelKind::semi)
        throw UsageError("a label needs a semi-supervised model; this one is '" + to_string(cfg.kind) + "'");
    if (cfg.kind == ModelKind::lm) {
        if (options.z) throw UsageError("a language model takes no z");
        return {{std::nullopt, beam_search(model, std::nullopt, options.beam, options.max_length)}};
    }
    Tensor z({cfg.z_dim});
    if (options.z) {
        if (options.z->size() != cfg.z_dim)
            throw UsageError("z needs " + std::to_string(cfg.z_dim) + " entries, got " + std::to_string(options.z->size()));
        std::copy(options.z->begin(), options.z->end(), z.data());
    } else {
        Rng rng = Rng(options.seed).split("prior");
        z = Tensor::normal({cfg.z_dim}, rng);
    }
    if (cfg.kind == ModelKind::vae)
        return {{std::nullopt, beam_search(model, z.reshaped({1, cfg.z_dim}), options.beam, options.max_length)}};
    std::vector<int> labels;
    if (options.label) {
        if (*options.label < 0 || static_cast<std::size_t>(*options.label) >= cfg.num_classes)
            throw UsageError("label " + std::to_string(*options.label) + " outside " + std::to_string(cfg.num_classes) +
                             " classes");
        labels.push_back(*options.label);
    } else {
        for (std::size_t y = 0; y < cfg.num_classes; ++y) labels.push_back(static_cast<int>(y));
    }
    std::vector<Generated> out;
    for (int y : labels) {
        Tensor cond({1, cfg.num_classes + cfg.z_dim});
        cond[static_cast<std::size_t>(y)] = 1.0;
        std::copy_n(z.data(), cfg.z_dim, cond.data() + cfg.num_classes);
        out.push_back({y, beam_search(model, cond, options.beam, options.max_length)});
    }
    return out;
}

std::string csv_field(const std::string& field) {
    if (field.find_first_of(",\"\r\n") == std::string::npos) return field;
    std::string out = "\"";
    for (char c : field) {
        if (c == '"') out += '"';
        out += c;
    }
    return out + '"';
}

void export_latent(const TextModel& model, std::span<const Document> docs, std::ostream& out) {
    const auto& cfg = model.config();
    if (!cfg.has_encoder()) throw UsageError("latent export needs a model with an encoder");
    if (docs.empty()) throw InputError("no documents to export");
    for (const auto& d : docs)
        for (int t : d.tokens)
            if (t < 0 || static_cast<std::size_t>(t) >= cfg.vocab_size)
                throw InputError("document on line " + std::to_string(d.line) + " has token id " + std::to_string(t) +
                                 " outside the model vocabulary");
    out << "doc_id,label";
    for (std::size_t k = 1; k <= cfg.z_dim; ++k) out << ",mu_" << k;
    out << "\r\n";
    std::size_t id = 0;
    char buf[40];
    for (const Batch& batch : batchify(docs, 64)) {
        Tape tape;
        Var hidden = model.encoder_state(tape, batch, {});
        std::optional<Var> label;
        if (cfg.kind == ModelKind::semi) label = softmax(model.classifier_logits(tape, hidden));
        const Tensor& mu = model.posterior(tape, hidden, label).mu.value();
        for (std::size_t b = 0; b < batch.size; ++b, ++id) {
            out << id << ',' << (batch.labels[b] >= 0 ? std::to_string(batch.labels[b]) : "");
            for (std::size_t k = 0; k < cfg.z_dim; ++k) {
                std::snprintf(buf, sizeof buf, "%.17g", mu.at(b, k));
                out << ',' << buf;
            }
            out << "\r\n";
        }
    }
}

} // namespace dilvae
