#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "dilvae/rng.hpp"
#include "dilvae/tokens.hpp"

namespace dilvae {

/// Lowercased whitespace tokens.
std::vector<std::string> tokenize(std::string_view text);

/// Token <-> id map. Ids 0..3 are PAD, BOS, EOS, UNK; content tokens
/// follow in frequency order.
class Vocabulary {
public:
    Vocabulary();

    /// Keeps the (cap - 4) most frequent tokens, ties broken
    /// lexicographically. With `labeled`, the leading "label<TAB>" field of
    /// each line is skipped.
    static Vocabulary build(std::span<const std::string> lines, std::size_t cap, bool labeled = false);
    /// Content tokens in id order (ids 4, 5, ...).
    static Vocabulary from_tokens(std::span<const std::string> content);

    int lookup(std::string_view token) const;
    const std::string& token(int id) const;
    std::size_t size() const { return id_to_token_.size(); }
    std::vector<std::string> content_tokens() const;

    /// One content token per line; line n holds id n + 4.
    void save(const std::filesystem::path& path) const;
    static Vocabulary load(const std::filesystem::path& path);

    friend bool operator==(const Vocabulary& a, const Vocabulary& b) { return a.id_to_token_ == b.id_to_token_; }

private:
    void add(const std::string& token);

    std::vector<std::string> id_to_token_;
    std::unordered_map<std::string, int> token_to_id_;
};

/// Token ids wrapped as BOS ... EOS, optional class label.
struct Document {
    std::vector<int> tokens;
    int label = -1;
    std::size_t line = 0;

    std::size_t length() const { return tokens.size(); }
};

/// Parses "label<TAB>text" (labeled) or a bare text line. `num_classes`
/// bounds the label when nonzero. Throws ParseError naming the line.
Document encode_labeled_line(std::string_view line, const Vocabulary& vocab, bool labeled, std::size_t line_no = 0,
                             std::size_t num_classes = 0);

/// Content tokens joined by spaces (BOS, EOS and PAD dropped).
std::string decode(std::span<const int> ids, const Vocabulary& vocab);

std::vector<std::string> read_lines(const std::filesystem::path& path);
std::vector<Document> encode_corpus(std::span<const std::string> lines, const Vocabulary& vocab, bool labeled,
                                    std::size_t num_classes = 0);

/// Padded block of documents. Row b holds lengths[b] real tokens followed
/// by PAD; the decoder reads columns [0, width-1) and predicts [1, width).
struct Batch {
    std::size_t size = 0;
    std::size_t width = 0;
    std::vector<int> tokens;          // [size x width]
    std::vector<std::size_t> lengths;  // including BOS and EOS
    std::vector<std::uint8_t> mask;   // [size x width], true on real tokens
    std::vector<int> labels;          // -1 where unknown

    static Batch from_documents(std::span<const Document* const> docs);
    static Batch from_documents(std::span<const Document> docs);

    int token(std::size_t b, std::size_t t) const { return tokens[b * width + t]; }
    std::size_t steps() const { return width - 1; }
    /// Decoder inputs, [size x steps] flattened: BOS x_1 ... x_n PAD...
    std::vector<int> decoder_inputs() const;
    /// Targets aligned with decoder_inputs: x_1 ... x_n EOS PAD...
    std::vector<int> targets() const;
    std::vector<std::uint8_t> target_mask() const;
    std::size_t target_count() const;
    bool has_labels() const;
};

/// Splits documents into batches. With `rng`, the order is shuffled; with
/// `sort_by_length`, the shuffled documents are bucketed by length before
/// cutting batches and the batch order is shuffled again.
std::vector<Batch> batchify(std::span<const Document> docs, std::size_t batch_size, Rng* rng = nullptr,
                            bool sort_by_length = false);

} // namespace dilvae
