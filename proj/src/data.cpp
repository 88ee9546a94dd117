#include "dilvae/data.hpp"

#include <algorithm>
#include <cctype>
#include <charconv>
#include <fstream>
#include <map>
#include <numeric>
#include <sstream>

#include "dilvae/errors.hpp"

namespace dilvae {

std::vector<std::string> tokenize(std::string_view text) {
    std::vector<std::string> out;
    std::string cur;
    for (char ch : text) {
        if (std::isspace(static_cast<unsigned char>(ch))) {
            if (!cur.empty()) out.push_back(std::move(cur));
            cur.clear();
        } else {
            cur.push_back(static_cast<char>(std::tolower(static_cast<unsigned char>(ch))));
        }
    }
    if (!cur.empty()) out.push_back(std::move(cur));
    return out;
}

Vocabulary::Vocabulary() {
    for (const char* t : {"<pad>", "<s>", "</s>", "<unk>"}) add(t);
}

void Vocabulary::add(const std::string& token) {
    token_to_id_.emplace(token, static_cast<int>(id_to_token_.size()));
    id_to_token_.push_back(token);
}

namespace {

std::string_view text_part(std::string_view line, bool labeled) {
    if (!labeled) return line;
    auto tab = line.find('\t');
    return tab == std::string_view::npos ? std::string_view{} : line.substr(tab + 1);
}

} // namespace

Vocabulary Vocabulary::build(std::span<const std::string> lines, std::size_t cap, bool labeled) {
    if (cap <= static_cast<std::size_t>(kNumReserved))
        throw ParameterError("vocabulary cap must exceed the " + std::to_string(kNumReserved) + " reserved ids");
    if (lines.empty()) throw InputError("cannot build a vocabulary from an empty corpus");
    std::map<std::string, std::size_t> counts;
    for (const auto& line : lines)
        for (auto& tok : tokenize(text_part(line, labeled))) ++counts[tok];
    std::vector<std::pair<std::string, std::size_t>> ranked(counts.begin(), counts.end());
    // std::map iteration is lexicographic, so a stable sort keeps ties in that order.
    std::stable_sort(ranked.begin(), ranked.end(), [](const auto& a, const auto& b) { return a.second > b.second; });
    Vocabulary v;
    const std::size_t keep = std::min(ranked.size(), cap - kNumReserved);
    for (std::size_t i = 0; i < keep; ++i) v.add(ranked[i].first);
    return v;
}

Vocabulary Vocabulary::from_tokens(std::span<const std::string> content) {
    Vocabulary v;
    for (const auto& t : content) {
        if (v.token_to_id_.count(t)) throw InputError("duplicate vocabulary token '" + t + "'");
        v.add(t);
    }
    return v;
}

int Vocabulary::lookup(std::string_view token) const {
    auto it = token_to_id_.find(std::string(token));
    if (it == token_to_id_.end() || it->second < kNumReserved) return kUnk;
    return it->second;
}

const std::string& Vocabulary::token(int id) const {
    if (id < 0 || static_cast<std::size_t>(id) >= id_to_token_.size())
        throw IndexError("token id " + std::to_string(id) + " outside vocabulary of size " + std::to_string(size()));
    return id_to_token_[static_cast<std::size_t>(id)];
}

std::vector<std::string> Vocabulary::content_tokens() const {
    return {id_to_token_.begin() + kNumReserved, id_to_token_.end()};
}

void Vocabulary::save(const std::filesystem::path& path) const {
    std::ofstream out(path);
    if (!out) throw InputError("cannot write vocabulary to " + path.string());
    for (const auto& t : content_tokens()) out << t << '\n';
}

Vocabulary Vocabulary::load(const std::filesystem::path& path) {
    auto lines = read_lines(path);
    std::vector<std::string> tokens;
    for (std::size_t i = 0; i < lines.size(); ++i) {
        auto toks = tokenize(lines[i]);
        if (toks.size() != 1) throw ParseError("vocabulary line must hold exactly one token", i + 1);
        tokens.push_back(toks[0]);
    }
    return from_tokens(tokens);
}

Document encode_labeled_line(std::string_view line, const Vocabulary& vocab, bool labeled, std::size_t line_no,
                             std::size_t num_classes) {
    Document doc;
    doc.line = line_no;
    std::string_view text = line;
    if (labeled) {
        auto tab = line.find('\t');
        if (tab == std::string_view::npos) throw ParseError("expected 'label<TAB>text'", line_no);
        std::string_view field = line.substr(0, tab);
        int label = -1;
        auto [ptr, ec] = std::from_chars(field.data(), field.data() + field.size(), label);
        if (ec != std::errc() || ptr != field.data() + field.size() || label < 0)
            throw ParseError("malformed label '" + std::string(field) + "'", line_no);
        if (num_classes && static_cast<std::size_t>(label) >= num_classes)
            throw ParseError("label " + std::to_string(label) + " outside " + std::to_string(num_classes) + " classes",
                             line_no);
        doc.label = label;
        text = line.substr(tab + 1);
    }
    doc.tokens.push_back(kBos);
    for (const auto& tok : tokenize(text)) doc.tokens.push_back(vocab.lookup(tok));
    doc.tokens.push_back(kEos);
    return doc;
}

std::string decode(std::span<const int> ids, const Vocabulary& vocab) {
    std::string out;
    for (int id : ids) {
        if (id == kPad || id == kBos || id == kEos) continue;
        if (!out.empty()) out += ' ';
        out += vocab.token(id);
    }
    return out;
}

std::vector<std::string> read_lines(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw InputError("cannot read " + path.string());
    std::vector<std::string> lines;
    std::string line;
    while (std::getline(in, line)) {
        if (!line.empty() && line.back() == '\r') line.pop_back();
        lines.push_back(std::move(line));
    }
    return lines;
}

std::vector<Document> encode_corpus(std::span<const std::string> lines, const Vocabulary& vocab, bool labeled,
                                    std::size_t num_classes) {
    std::vector<Document> docs;
    docs.reserve(lines.size());
    for (std::size_t i = 0; i < lines.size(); ++i)
        docs.push_back(encode_labeled_line(lines[i], vocab, labeled, i + 1, num_classes));
    return docs;
}

Batch Batch::from_documents(std::span<const Document* const> docs) {
    if (docs.empty()) throw InputError("empty batch");
    Batch b;
    b.size = docs.size();
    for (const Document* d : docs) {
        if (d->tokens.size() < 2 || d->tokens.front() != kBos || d->tokens.back() != kEos)
            throw InputError("document must be wrapped as BOS ... EOS");
        b.width = std::max(b.width, d->tokens.size());
    }
    b.tokens.assign(b.size * b.width, kPad);
    b.mask.assign(b.size * b.width, 0);
    for (std::size_t r = 0; r < b.size; ++r) {
        const auto& toks = docs[r]->tokens;
        std::copy(toks.begin(), toks.end(), b.tokens.begin() + static_cast<std::ptrdiff_t>(r * b.width));
        std::fill_n(b.mask.begin() + static_cast<std::ptrdiff_t>(r * b.width), toks.size(), 1);
        b.lengths.push_back(toks.size());
        b.labels.push_back(docs[r]->label);
    }
    return b;
}

Batch Batch::from_documents(std::span<const Document> docs) {
    std::vector<const Document*> ptrs;
    for (const auto& d : docs) ptrs.push_back(&d);
    return from_documents(std::span<const Document* const>(ptrs));
}

std::vector<int> Batch::decoder_inputs() const {
    std::vector<int> out(size * steps());
    for (std::size_t r = 0; r < size; ++r)
        for (std::size_t t = 0; t < steps(); ++t) out[r * steps() + t] = token(r, t);
    return out;
}

std::vector<int> Batch::targets() const {
    std::vector<int> out(size * steps());
    for (std::size_t r = 0; r < size; ++r)
        for (std::size_t t = 0; t < steps(); ++t) out[r * steps() + t] = token(r, t + 1);
    return out;
}

std::vector<std::uint8_t> Batch::target_mask() const {
    std::vector<std::uint8_t> out(size * steps());
    for (std::size_t r = 0; r < size; ++r)
        for (std::size_t t = 0; t < steps(); ++t) out[r * steps() + t] = t + 1 < lengths[r];
    return out;
}

std::size_t Batch::target_count() const {
    std::size_t n = 0;
    for (auto len : lengths) n += len - 1;
    return n;
}

bool Batch::has_labels() const {
    return std::all_of(labels.begin(), labels.end(), [](int l) { return l >= 0; });
}

std::vector<Batch> batchify(std::span<const Document> docs, std::size_t batch_size, Rng* rng, bool sort_by_length) {
    if (batch_size < 1) throw ParameterError("batch size must be at least 1");
    std::vector<std::size_t> order(docs.size());
    std::iota(order.begin(), order.end(), 0);
    if (rng) {
        for (std::size_t i = order.size(); i > 1; --i) std::swap(order[i - 1], order[rng->below(i)]);
    }
    if (sort_by_length) {
        std::stable_sort(order.begin(), order.end(),
                         [&](std::size_t a, std::size_t b) { return docs[a].length() < docs[b].length(); });
    }
    std::vector<Batch> batches;
    for (std::size_t start = 0; start < order.size(); start += batch_size) {
        std::vector<const Document*> chunk;
        for (std::size_t i = start; i < std::min(order.size(), start + batch_size); ++i) chunk.push_back(&docs[order[i]]);
        batches.push_back(Batch::from_documents(std::span<const Document* const>(chunk)));
    }
    if (rng && sort_by_length) {
        for (std::size_t i = batches.size(); i > 1; --i) std::swap(batches[i - 1], batches[rng->below(i)]);
    }
    return batches;
}

} // namespace dilvae
