// Command-line driver: training, evaluation, generation, latent export and
// the receptive-field probe.

#include <cstdio>
#include <fstream>
#include <iostream>
#include <sstream>

#include "CLI11.hpp"
#include "dilvae/app.hpp"
#include "dilvae/errors.hpp"
#include "dilvae/inference.hpp"
#include "dilvae/probe.hpp"
#include "dilvae/semi.hpp"

using namespace dilvae;

namespace {

enum Exit { kOk = 0, kUsage = 1, kData = 2, kNumeric = 3 };

struct Common {
    std::string config;
    std::optional<std::uint64_t> seed;
    std::vector<std::string> overrides;
    std::string out;
};

void add_common(CLI::App* cmd, Common& c, bool with_out) {
    cmd->add_option("--config", c.config, "INI config with [data], [model] and [train] sections")->check(CLI::ExistingFile);
    cmd->add_option("--seed", c.seed, "random seed (overrides train.seed)");
    cmd->add_option("--override", c.overrides, "section.key=value, repeatable")->allow_extra_args(false);
    if (with_out) cmd->add_option("--out", c.out, "output directory");
}

KeyValues settings(const Common& c) {
    KeyValues flat = c.config.empty() ? KeyValues{} : read_config_file(c.config);
    for (const auto& [k, v] : parse_overrides(c.overrides)) flat[k] = v;
    if (c.seed) flat["train.seed"] = std::to_string(*c.seed);
    return flat;
}

int train_command(TrainKind kind, const Common& c) {
    RunConfig run = make_run_config(settings(c), kind);
    const std::string out = c.out.empty() ? "runs/" + to_string(kind) : c.out;
    return run_training(run, out, std::cout) ? kOk : kNumeric;
}

Checkpoint load_model(const std::string& path) { return load_checkpoint(path); }

std::vector<double> parse_vector(const std::string& text) {
    std::vector<double> out;
    std::stringstream ss(text);
    std::string part;
    while (std::getline(ss, part, ',')) out.push_back(parse_double("--z", part));
    return out;
}

int run(int argc, char** argv) {
    CLI::App app{"Text VAEs with dilated CNN decoders"};
    app.require_subcommand(1, 1);

    Common lm_opts, vae_opts, semi_opts, cluster_opts;
    auto* train_lm = app.add_subcommand("train-lm", "train a language model (LSTM or CNN decoder)");
    add_common(train_lm, lm_opts, true);
    auto* train_vae = app.add_subcommand("train-vae", "train a VAE");
    add_common(train_vae, vae_opts, true);
    auto* train_semi = app.add_subcommand("train-semi", "train a semi-supervised VAE");
    add_common(train_semi, semi_opts, true);
    auto* cluster = app.add_subcommand("cluster", "unsupervised clustering with the clamped categorical KL");
    add_common(cluster, cluster_opts, true);

    Common eval_opts;
    std::string eval_ckpt, eval_data, eval_mode = "mean";
    auto* eval = app.add_subcommand("eval", "report NLL (KL) and PPL of a checkpoint on a corpus");
    add_common(eval, eval_opts, false);
    eval->add_option("--checkpoint", eval_ckpt)->required()->check(CLI::ExistingFile);
    eval->add_option("--data", eval_data, "corpus file")->required()->check(CLI::ExistingFile);
    eval->add_option("--mode", eval_mode, "latent used for the reconstruction term")->check(CLI::IsMember({"mean", "sample"}));

    Common gen_opts;
    std::string gen_ckpt, gen_z;
    std::size_t beam = 10, max_length = 200;
    std::optional<int> label;
    auto* gen = app.add_subcommand("generate", "beam-search text from a checkpoint");
    add_common(gen, gen_opts, false);
    gen->add_option("--checkpoint", gen_ckpt)->required()->check(CLI::ExistingFile);
    gen->add_option("--beam", beam, "beam width")->check(CLI::PositiveNumber);
    gen->add_option("--max-length", max_length, "token cap")->check(CLI::PositiveNumber);
    gen->add_option("--label", label, "class to condition on (semi models)");
    gen->add_option("--z", gen_z, "comma-separated latent vector (default: a prior draw)");

    Common exp_opts;
    std::string exp_ckpt, exp_data;
    auto* exp = app.add_subcommand("export-latent", "write posterior means as CSV");
    add_common(exp, exp_opts, true);
    exp->add_option("--checkpoint", exp_ckpt)->required()->check(CLI::ExistingFile);
    exp->add_option("--data", exp_data, "corpus file")->required()->check(CLI::ExistingFile);

    Common probe_opts;
    std::vector<std::string> archs;
    std::size_t random_count = 20;
    auto* probe = app.add_subcommand("probe-arch", "check receptive fields and causality of CNN decoders");
    add_common(probe, probe_opts, false);
    probe->add_option("--arch", archs, "named architecture, repeatable (default: all four)");
    probe->add_option("--random", random_count, "number of random stacks to probe");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        return app.exit(e) == 0 ? kOk : kUsage;
    }

    if (*train_lm) return train_command(TrainKind::lm, lm_opts);
    if (*train_vae) return train_command(TrainKind::vae, vae_opts);
    if (*train_semi) return train_command(TrainKind::semi, semi_opts);
    if (*cluster) return train_command(TrainKind::cluster, cluster_opts);

    if (*eval) {
        const KeyValues flat = settings(eval_opts);
        const std::uint64_t seed = flat.count("train.seed") ? parse_size("seed", flat.at("train.seed")) : 1;
        Checkpoint ck = load_model(eval_ckpt);
        const auto docs = encode_for_model(read_lines(eval_data), vocabulary_from_metadata(ck.extra),
                                           ck.model.config().num_classes);
        Rng rng = Rng(seed).split("eval");
        const EvalResult r = eval_nll_ppl(ck.model, docs, latent_mode_from_string(eval_mode), &rng);
        print_eval(std::cout, to_string(ck.model.config().kind) + "/" + ck.model.config().arch.name, r);
        if (ck.model.config().kind == ModelKind::semi &&
            std::all_of(docs.begin(), docs.end(), [](const Document& d) { return d.label >= 0; }))
            std::cout << "accuracy " << classification_accuracy(ck.model, docs) << "\n";
        return kOk;
    }

    if (*gen) {
        const KeyValues flat = settings(gen_opts);
        Checkpoint ck = load_model(gen_ckpt);
        const Vocabulary vocab = vocabulary_from_metadata(ck.extra);
        GenerateOptions opts;
        opts.beam = beam;
        opts.max_length = max_length;
        opts.label = label;
        opts.seed = flat.count("train.seed") ? parse_size("seed", flat.at("train.seed")) : 1;
        if (!gen_z.empty()) opts.z = parse_vector(gen_z);
        for (const auto& g : generate(ck.model, opts)) {
            if (g.label) std::cout << *g.label << '\t';
            std::cout << decode(g.result.tokens, vocab) << '\n';
        }
        return kOk;
    }

    if (*exp) {
        settings(exp_opts);
        Checkpoint ck = load_model(exp_ckpt);
        const auto docs = encode_for_model(read_lines(exp_data), vocabulary_from_metadata(ck.extra),
                                           ck.model.config().num_classes);
        if (exp_opts.out.empty()) {
            export_latent(ck.model, docs, std::cout);
        } else {
            std::ofstream out(exp_opts.out, std::ios::binary);
            if (!out) throw InputError("cannot write " + exp_opts.out);
            export_latent(ck.model, docs, out);
            std::cout << "wrote " << docs.size() << " rows to " << exp_opts.out << "\n";
        }
        return kOk;
    }

    if (*probe) {
        const KeyValues flat = settings(probe_opts);
        const std::uint64_t seed = flat.count("train.seed") ? parse_size("seed", flat.at("train.seed")) : 1;
        std::vector<DecoderArch> todo;
        if (flat.count("model.arch") || flat.count("model.dilations")) {
            todo.push_back(make_run_config(flat, TrainKind::lm).train.model.arch);
        }
        if (archs.empty() && todo.empty()) archs = DecoderArch::cnn_names();
        for (const auto& name : archs) todo.push_back(DecoderArch::named(name));
        for (const auto& a : random_archs(random_count, seed)) todo.push_back(a);
        bool ok = true;
        for (const auto& a : todo) {
            ProbeReport r = probe_arch(a, seed);
            std::cout << format_probe(r) << "\n";
            ok = ok && r.ok();
        }
        return ok ? kOk : kNumeric;
    }
    return kUsage;
}

} // namespace

int main(int argc, char** argv) {
    try {
        return run(argc, argv);
    } catch (const NumericError& e) {
        std::cerr << "numeric error: " << e.what() << "\n";
        return kNumeric;
    } catch (const InputError& e) {
        std::cerr << "data error: " << e.what() << "\n";
        return kData;
    } catch (const ParseError& e) {
        std::cerr << "data error: " << e.what() << "\n";
        return kData;
    } catch (const IndexError& e) {
        std::cerr << "data error: " << e.what() << "\n";
        return kData;
    } catch (const std::filesystem::filesystem_error& e) {
        std::cerr << "data error: " << e.what() << "\n";
        return kData;
    } catch (const std::invalid_argument& e) {
        // ConfigError, UsageError, ParameterError, DimensionError
        std::cerr << "usage error: " << e.what() << "\n";
        return kUsage;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kData;
    }
}
