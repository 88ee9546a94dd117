#pragma once

#include <filesystem>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include "dilvae/train.hpp"

namespace dilvae {

/// Where corpora come from. Either files (train/valid/test, one document
/// per line, optionally "label<TAB>text") or a synthetic spec that is
/// generated and split by the given fractions.
struct DataConfig {
    std::filesystem::path train;
    std::filesystem::path valid;
    std::filesystem::path test;
    std::filesystem::path labeled;  // optional separate labeled set for semi runs
    std::filesystem::path synthetic;
    double valid_fraction = 0.1;
    double test_fraction = 0.1;
    std::size_t vocab_cap = 20000;
    std::size_t num_labeled = 0;  // labeled documents drawn from train when no labeled file is given

    void apply(const KeyValues& kv);
};

struct RunConfig {
    TrainConfig train;
    DataConfig data;
};

/// Reads an INI-style file ("key = value" lines under [section] headers,
/// '#' or ';' comments) into "section.key" entries.
KeyValues read_config_file(const std::filesystem::path& path);

/// Parses "section.key=value" override strings.
KeyValues parse_overrides(const std::vector<std::string>& overrides);

/// Builds a run from flattened settings. Sections: data, model, train.
RunConfig make_run_config(const KeyValues& flat, TrainKind kind);

/// True when the first non-empty line starts with "INT<TAB>"; later lines
/// are then parsed as labeled and rejected if they are not.
bool looks_labeled(std::span<const std::string> lines);

struct PreparedData {
    Vocabulary vocab;
    bool labeled = false;
    TrainData train;
    std::vector<Document> test;
    std::vector<double> entropy_rate;  // synthetic corpora only
};

/// Loads or generates the corpora, builds the vocabulary and fills in
/// vocab_size and num_classes on the model config.
PreparedData prepare_data(RunConfig& run);

/// Checkpoint metadata holding the vocabulary.
KeyValues vocabulary_metadata(const Vocabulary& vocab);
Vocabulary vocabulary_from_metadata(const KeyValues& extra);

/// Encodes a corpus with a checkpoint's vocabulary; throws InputError when
/// most tokens are unknown to it.
std::vector<Document> encode_for_model(const std::vector<std::string>& lines, const Vocabulary& vocab,
                                       std::size_t num_classes);

/// "NLL (KL)  PPL" table row plus the decomposition.
void print_eval(std::ostream& out, const std::string& name, const EvalResult& r);

/// Trains, writes out_dir/{vocab.txt,manifest.jsonl,best.ckpt,summary.json}
/// and reports held-out results. Returns true unless training diverged.
bool run_training(RunConfig run, const std::filesystem::path& out_dir, std::ostream& out);

} // namespace dilvae
