#include "dilvae/app.hpp"

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <ostream>
#include <regex>

#include <boost/property_tree/ini_parser.hpp>
#include <boost/property_tree/ptree.hpp>

#include "dilvae/errors.hpp"
#include "dilvae/semi.hpp"
#include "dilvae/synthetic.hpp"

namespace dilvae {

void DataConfig::apply(const KeyValues& kv) {
    for (const auto& [key, v] : kv) {
        if (key == "train") train = v;
        else if (key == "valid") valid = v;
        else if (key == "test") test = v;
        else if (key == "labeled") labeled = v;
        else if (key == "synthetic") synthetic = v;
        else if (key == "valid_fraction") valid_fraction = parse_double(key, v);
        else if (key == "test_fraction") test_fraction = parse_double(key, v);
        else if (key == "vocab_cap") vocab_cap = parse_size(key, v);
        else if (key == "num_labeled") num_labeled = parse_size(key, v);
        else throw ConfigError("unknown data key '" + key + "'");
    }
}

KeyValues read_config_file(const std::filesystem::path& path) {
    namespace pt = boost::property_tree;
    pt::ptree tree;
    try {
        pt::read_ini(path.string(), tree);
    } catch (const pt::ini_parser_error& e) {
        if (!std::filesystem::exists(path)) throw InputError("cannot read config " + path.string());
        throw ParseError(e.message() + " in " + path.string(), e.line());
    }
    KeyValues out;
    for (const auto& [section, body] : tree) {
        if (body.empty()) throw ConfigError("config entry '" + section + "' must sit inside a [section]");
        for (const auto& [key, value] : body) out[section + "." + key] = value.data();
    }
    return out;
}

KeyValues parse_overrides(const std::vector<std::string>& overrides) {
    KeyValues out;
    for (const auto& o : overrides) {
        const auto eq = o.find('=');
        if (eq == std::string::npos || eq == 0) throw UsageError("override '" + o + "' is not KEY=VALUE");
        out[o.substr(0, eq)] = o.substr(eq + 1);
    }
    return out;
}

RunConfig make_run_config(const KeyValues& flat, TrainKind kind) {
    RunConfig run;
    run.train.kind = kind;
    run.train.model.kind = kind == TrainKind::lm ? ModelKind::lm : kind == TrainKind::vae ? ModelKind::vae : ModelKind::semi;
    if (kind == TrainKind::lm) run.train.model.z_dim = 0;
    KeyValues train_kv, data_kv;
    for (const auto& [key, v] : flat) {
        const auto dot = key.find('.');
        if (dot == std::string::npos) throw ConfigError("setting '" + key + "' needs a section prefix (data., model., train.)");
        const std::string section = key.substr(0, dot), name = key.substr(dot + 1);
        if (section == "data") data_kv[name] = v;
        else if (section == "model") train_kv["model." + name] = v;
        else if (section == "train") train_kv[name] = v;
        else throw ConfigError("unknown config section '" + section + "'");
    }
    if (train_kv.count("kind") && train_kind_from_string(train_kv["kind"]) != kind)
        throw ConfigError("config asks for '" + train_kv["kind"] + "' training but the command is '" +
                          to_string(kind) + "'");
    if (train_kv.count("model.kind")) throw ConfigError("the model kind follows from the command");
    run.train.apply(train_kv);
    run.data.apply(data_kv);
    return run;
}

bool looks_labeled(std::span<const std::string> lines) {
    static const std::regex pattern("^-?[0-9]+\t.*");
    for (const auto& line : lines)
        if (!line.empty()) return std::regex_match(line, pattern);
    return false;
}

namespace {

std::vector<std::string> read_optional(const std::filesystem::path& p) {
    return p.empty() ? std::vector<std::string>{} : read_lines(p);
}

std::size_t max_label(std::span<const Document> docs) {
    int m = -1;
    for (const auto& d : docs) m = std::max(m, d.label);
    return static_cast<std::size_t>(m + 1);
}

} // namespace

PreparedData prepare_data(RunConfig& run) {
    const DataConfig& dc = run.data;
    std::vector<std::string> train_lines, valid_lines, test_lines, labeled_lines;
    PreparedData out;
    if (!dc.synthetic.empty()) {
        SyntheticSpec spec = SyntheticSpec::load(dc.synthetic);
        SyntheticCorpus corpus = generate_synthetic(spec);
        out.entropy_rate = corpus.entropy_rate;
        if (dc.valid_fraction < 0.0 || dc.test_fraction < 0.0 || dc.valid_fraction + dc.test_fraction >= 1.0)
            throw ConfigError("valid_fraction + test_fraction must stay below 1");
        const std::size_t n = corpus.lines.size();
        const auto n_valid = static_cast<std::size_t>(dc.valid_fraction * static_cast<double>(n));
        const auto n_test = static_cast<std::size_t>(dc.test_fraction * static_cast<double>(n));
        // Generated documents are i.i.d., so a positional split is unbiased.
        for (std::size_t i = 0; i < n; ++i) {
            auto& dst = i < n - n_valid - n_test ? train_lines : i < n - n_test ? valid_lines : test_lines;
            dst.push_back(corpus.lines[i]);
        }
    } else {
        if (dc.train.empty()) throw ConfigError("set data.train or data.synthetic");
        train_lines = read_lines(dc.train);
        valid_lines = read_optional(dc.valid);
        test_lines = read_optional(dc.test);
        labeled_lines = read_optional(dc.labeled);
    }
    if (train_lines.empty()) throw InputError("training corpus is empty");
    out.labeled = looks_labeled(train_lines);
    std::vector<std::string> vocab_lines = train_lines;
    vocab_lines.insert(vocab_lines.end(), labeled_lines.begin(), labeled_lines.end());
    std::vector<std::string> text_only;
    if (!labeled_lines.empty() && !out.labeled) {
        // Mixed formats: strip labels so one vocabulary pass works.
        for (const auto& l : labeled_lines) text_only.push_back(l.substr(l.find('\t') + 1));
        vocab_lines = train_lines;
        vocab_lines.insert(vocab_lines.end(), text_only.begin(), text_only.end());
    }
    out.vocab = Vocabulary::build(vocab_lines, dc.vocab_cap, out.labeled);
    auto encode = [&](const std::vector<std::string>& lines) {
        return encode_corpus(lines, out.vocab, looks_labeled(lines));
    };
    out.train.train = encode(train_lines);
    out.train.validation = encode(valid_lines);
    out.test = encode(test_lines);
    if (!labeled_lines.empty()) out.train.labeled = encode(labeled_lines);

    TrainConfig& tc = run.train;
    tc.model.vocab_size = out.vocab.size();
    const TrainKind kind = tc.kind;
    if (kind == TrainKind::semi || kind == TrainKind::cluster) {
        if (tc.model.num_classes == 0) {
            std::size_t c = std::max({max_label(out.train.train), max_label(out.train.labeled),
                                      max_label(out.train.validation), max_label(out.test)});
            if (c == 0) throw InputError("cannot infer the class count: no labels in the data; set model.num_classes");
            tc.model.num_classes = c;
        }
    }
    if (kind == TrainKind::semi && out.train.labeled.empty() && dc.num_labeled > 0) {
        if (dc.num_labeled > out.train.train.size()) throw ConfigError("num_labeled exceeds the training set");
        Rng rng = Rng(tc.seed).split("labeled_subset");
        std::vector<std::size_t> order(out.train.train.size());
        for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
        for (std::size_t i = order.size(); i > 1; --i) std::swap(order[i - 1], order[rng.below(i)]);
        std::vector<Document> labeled, unlabeled;
        for (std::size_t i = 0; i < order.size(); ++i) {
            Document d = out.train.train[order[i]];
            if (i < dc.num_labeled) {
                if (d.label < 0) throw InputError("num_labeled needs a labeled training corpus");
                labeled.push_back(std::move(d));
            } else {
                d.label = -1;
                unlabeled.push_back(std::move(d));
            }
        }
        out.train.labeled = std::move(labeled);
        out.train.train = std::move(unlabeled);
    } else if (kind == TrainKind::semi) {
        for (auto& d : out.train.train) d.label = -1;
    }
    if (kind == TrainKind::cluster)
        for (auto& d : out.train.train) d.label = -1;
    for (const auto* set : {&out.train.train, &out.train.labeled, &out.train.validation, &out.test})
        for (const auto& d : *set)
            if (d.label >= 0 && tc.model.num_classes > 0 && static_cast<std::size_t>(d.label) >= tc.model.num_classes)
                throw ParseError("label " + std::to_string(d.label) + " outside " +
                                     std::to_string(tc.model.num_classes) + " classes",
                                 d.line);
    return out;
}

KeyValues vocabulary_metadata(const Vocabulary& vocab) {
    std::string joined;
    for (const auto& t : vocab.content_tokens()) joined += (joined.empty() ? "" : " ") + t;
    return {{"vocab", joined}};
}

Vocabulary vocabulary_from_metadata(const KeyValues& extra) {
    auto it = extra.find("vocab");
    if (it == extra.end()) throw InputError("checkpoint carries no vocabulary");
    return Vocabulary::from_tokens(tokenize(it->second));
}

std::vector<Document> encode_for_model(const std::vector<std::string>& lines, const Vocabulary& vocab,
                                       std::size_t num_classes) {
    if (lines.empty()) throw InputError("corpus is empty");
    std::vector<Document> docs = encode_corpus(lines, vocab, looks_labeled(lines), num_classes);
    std::size_t content = 0, unknown = 0;
    for (const auto& d : docs)
        for (std::size_t i = 1; i + 1 < d.tokens.size(); ++i) {
            ++content;
            unknown += d.tokens[i] == kUnk;
        }
    if (content > 0 && 2 * unknown > content)
        throw InputError("corpus does not match the checkpoint vocabulary (" + std::to_string(unknown) + " of " +
                         std::to_string(content) + " tokens unknown)");
    return docs;
}

void print_eval(std::ostream& out, const std::string& name, const EvalResult& r) {
    char buf[256];
    std::snprintf(buf, sizeof buf, "%-12s NLL (KL) %.4f (%.4f)  PPL %.4f\n", name.c_str(), r.nll, r.kl, r.ppl);
    out << buf;
    std::snprintf(buf, sizeof buf,
                  "%-12s documents %zu tokens %zu mode %s nll %.17g reconstruction %.17g kl %.17g\n", "", r.documents,
                  r.tokens, to_string(r.mode).c_str(), r.nll, r.reconstruction, r.kl);
    out << buf;
}

bool run_training(RunConfig run, const std::filesystem::path& out_dir, std::ostream& out) {
    PreparedData data = prepare_data(run);
    std::filesystem::create_directories(out_dir);
    data.vocab.save(out_dir / "vocab.txt");
    run.train.out_dir = out_dir;
    run.train.checkpoint_extra = vocabulary_metadata(data.vocab);
    run.train.checkpoint_extra["train.kind"] = to_string(run.train.kind);
    out << to_string(run.train.kind) << ": " << data.train.train.size() << " train, " << data.train.labeled.size()
        << " labeled, " << data.train.validation.size() << " valid, " << data.test.size() << " test documents; vocab "
        << data.vocab.size() << "\n";
    TrainResult result = train(run.train, data.train);
    for (const auto& rec : result.manifest.epochs()) {
        char buf[200];
        std::snprintf(buf, sizeof buf, "epoch %3d lr %.2e klw %.3f train %.4f valid %.4f", rec["epoch"].get<int>(),
                      rec["lr"].get<double>(), rec["kl_weight"].get<double>(), rec["train_total"].get<double>(),
                      rec.value("val_total", NAN));
        out << buf;
        if (rec.contains("accuracy")) out << " acc " << rec["accuracy"].get<double>();
        out << "\n";
    }
    nlohmann::json summary{{"kind", to_string(run.train.kind)},
                           {"best_epoch", result.best_epoch},
                           {"diverged", result.diverged},
                           {"epochs_completed", result.last_good_epoch}};
    if (!data.entropy_rate.empty()) summary["entropy_rate"] = data.entropy_rate;
    if (result.diverged) out << "training diverged after " << result.last_good_epoch << " good epochs\n";
    if (result.best_validation) print_eval(out, "valid", *result.best_validation);
    if (!data.test.empty()) {
        const TextModel& model = result.model;
        if (run.train.kind == TrainKind::cluster) {
            if (data.train.validation.empty()) throw InputError("cluster evaluation needs a labeled validation set");
            ClusterReport report = cluster_evaluate(model, data.train.validation, data.test);
            out << "cluster accuracy " << report.accuracy << " (empty clusters: " << report.empty_clusters.size()
                << ")\n";
            summary["test_accuracy"] = report.accuracy;
            summary["empty_clusters"] = report.empty_clusters;
        } else {
            Rng rng = Rng(run.train.seed).split("test");
            EvalResult test = eval_nll_ppl(model, data.test, run.train.eval_mode, &rng);
            print_eval(out, "test", test);
            summary["test_nll"] = test.nll;
            summary["test_kl"] = test.kl;
            summary["test_ppl"] = test.ppl;
            if (run.train.kind == TrainKind::semi &&
                std::all_of(data.test.begin(), data.test.end(), [](const Document& d) { return d.label >= 0; })) {
                const double acc = classification_accuracy(model, data.test);
                out << "test accuracy " << acc << "\n";
                summary["test_accuracy"] = acc;
            }
        }
    }
    std::ofstream(out_dir / "summary.json") << summary.dump(2) << '\n';
    out << "wrote " << (out_dir / "best.ckpt").string() << "\n";
    return !result.diverged;
}

} // namespace dilvae
