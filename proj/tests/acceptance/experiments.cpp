#include "experiments.hpp"

#include <algorithm>

#include "dilvae/semi.hpp"

namespace dilvae::acceptance {

Splits make_splits(const SyntheticSpec& spec) {
    const SyntheticCorpus corpus = generate_synthetic(spec);
    const std::size_t n = corpus.lines.size();
    const std::size_t n_train = n * 8 / 10;
    const std::size_t n_valid = n / 10;
    Splits s;
    const std::vector<std::string> train_lines(corpus.lines.begin(), corpus.lines.begin() + static_cast<std::ptrdiff_t>(n_train));
    s.vocab = Vocabulary::build(train_lines, spec.vocab_size + kNumReserved, true);
    const std::vector<Document> docs = encode_corpus(corpus.lines, s.vocab, true, spec.num_classes);
    s.train.assign(docs.begin(), docs.begin() + static_cast<std::ptrdiff_t>(n_train));
    s.valid.assign(docs.begin() + static_cast<std::ptrdiff_t>(n_train),
                   docs.begin() + static_cast<std::ptrdiff_t>(n_train + n_valid));
    s.test.assign(docs.begin() + static_cast<std::ptrdiff_t>(n_train + n_valid), docs.end());
    return s;
}

TrainConfig experiment_config(TrainKind kind, const std::string& arch, std::size_t vocab_size, std::uint64_t seed) {
    TrainConfig c;
    c.kind = kind;
    c.model.kind = kind == TrainKind::lm    ? ModelKind::lm
                   : kind == TrainKind::vae ? ModelKind::vae
                                            : ModelKind::semi;
    c.model.arch = DecoderArch::named(arch);
    c.model.arch.channels_ext = 32;
    c.model.arch.channels_int = 16;
    c.model.vocab_size = vocab_size;
    c.model.embed_dim = 16;
    c.model.encoder_hidden = 32;
    c.model.decoder_hidden = 32;
    c.model.z_dim = 8;
    c.model.seed = seed;
    c.seed = seed;
    c.batch_size = 16;
    c.adam.lr = 1e-2;
    c.schedule.epochs = 20;
    c.schedule.kl_anneal_iterations = 1000;
    c.schedule.lr_half_start_epoch = 15;
    c.schedule.lr_half_every = 2;
    return c;
}

SyntheticSpec collapse_spec(std::uint64_t seed) {
    SyntheticSpec s;
    s.num_classes = 1000;
    s.vocab_size = 50;
    s.num_docs = 2000;
    s.min_length = 30;
    s.max_length = 50;
    s.generator = "topic";
    s.successors = 8;
    s.class_strength = 1.2;
    s.seed = seed;
    return s;
}

CollapseRun collapse_experiment(std::uint64_t seed, const std::vector<std::string>& archs) {
    const Splits data = make_splits(collapse_spec(seed));
    TrainData td;
    td.train = data.train;
    td.validation = data.valid;
    CollapseRun run;
    for (const auto& arch : archs) {
        TrainResult r = train(experiment_config(TrainKind::vae, arch, data.vocab.size(), seed), td);
        run.archs.push_back(arch);
        run.kl.push_back(r.best_validation ? r.best_validation->kl : 0.0);
    }
    return run;
}

SyntheticSpec class_latent_spec(std::uint64_t seed) {
    SyntheticSpec s = collapse_spec(seed);
    s.seed = seed + 100;
    return s;
}

BoundRun vae_vs_lm_experiment(std::uint64_t seed, const std::string& arch) {
    const Splits data = make_splits(class_latent_spec(seed));
    TrainData td;
    td.train = data.train;
    td.validation = data.valid;
    BoundRun run;
    TrainResult vae = train(experiment_config(TrainKind::vae, arch, data.vocab.size(), seed), td);
    TrainResult lm = train(experiment_config(TrainKind::lm, arch, data.vocab.size(), seed), td);
    run.vae_nll = vae.best_validation->nll;
    run.vae_kl = vae.best_validation->kl;
    run.lm_nll = lm.best_validation->nll;
    return run;
}

SyntheticSpec semi_spec(std::uint64_t seed) {
    SyntheticSpec s = collapse_spec(seed + 200);
    s.num_classes = 4;
    s.class_strength = 0.8;
    // 80% of the documents, about 2000, form the training pool
    s.num_docs = 2500;
    return s;
}

SemiRun semi_experiment(std::uint64_t seed, std::size_t num_labeled) {
    SyntheticSpec spec = semi_spec(seed);
    const Splits data = make_splits(spec);
    TrainData td;
    td.labeled.assign(data.train.begin(), data.train.begin() + static_cast<std::ptrdiff_t>(num_labeled));
    for (std::size_t i = num_labeled; i < data.train.size(); ++i) {
        Document d = data.train[i];
        d.label = -1;
        td.train.push_back(d);
    }
    td.validation = data.valid;

    SemiRun run;
    TrainConfig semi = experiment_config(TrainKind::semi, "SCNN", data.vocab.size(), seed);
    semi.model.num_classes = spec.num_classes;
    semi.alpha = 0.1 * static_cast<double>(td.train.size());
    // a narrow z leaves the class to y
    semi.model.z_dim = 2;
    TrainResult s = train(semi, td);
    run.semi_accuracy = classification_accuracy(s.model, data.test);

    TrainConfig clf = experiment_config(TrainKind::classifier, "SCNN", data.vocab.size(), seed);
    clf.model.num_classes = spec.num_classes;
    // Validation loss selects an early, barely trained epoch for a 20-example
    // classifier; train to convergence and keep the last epoch instead.
    clf.schedule.epochs = 200;
    clf.schedule.lr_half_start_epoch = 150;
    clf.schedule.lr_half_every = 10;
    TrainData labeled_only;
    labeled_only.labeled = td.labeled;
    TrainResult c = train(clf, labeled_only);
    run.classifier_accuracy = classification_accuracy(c.model, data.test);
    return run;
}

ClusterRun cluster_experiment(std::uint64_t seed, std::size_t restarts, double gamma) {
    SyntheticSpec spec;
    spec.num_classes = 3;
    spec.vocab_size = 30;
    spec.num_docs = 1000;
    spec.min_length = 12;
    spec.max_length = 20;
    spec.generator = "disjoint";
    spec.successors = 3;
    spec.seed = seed;
    const Splits data = make_splits(spec);
    TrainData td;
    for (Document d : data.train) {
        d.label = -1;
        td.train.push_back(d);
    }
    td.validation = data.valid;

    ClusterRun run;
    for (std::size_t r = 0; r < restarts; ++r) {
        TrainConfig c = experiment_config(TrainKind::cluster, "SCNN", data.vocab.size(), seed * 1000 + r);
        c.model.num_classes = spec.num_classes;
        c.model.z_dim = 2;
        c.gamma = gamma;
        c.encoder_init = true;
        c.pretrain_epochs = 3;
        c.schedule.epochs = 20;
        c.schedule.lr_half_start_epoch = 30;
        c.schedule.tau_rate = 0.5;
        TrainResult t = train(c, td);
        const double acc = cluster_evaluate(t.model, data.valid, data.test).accuracy;
        run.accuracies.push_back(acc);
        run.best = std::max(run.best, acc);
    }
    return run;
}

} // namespace dilvae::acceptance
