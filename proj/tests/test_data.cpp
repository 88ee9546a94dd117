#include <cmath>
#include <filesystem>
#include <fstream>
#include <map>
#include <set>

#include "doctest.h"
#include "dilvae/errors.hpp"
#include "dilvae/synthetic.hpp"

using namespace dilvae;

TEST_CASE("build_vocab orders by frequency then lexicographically") {
    const std::vector<std::string> corpus{"a a b"};
    Vocabulary v = Vocabulary::build(corpus, 6);
    CHECK(v.lookup("a") == 4);
    CHECK(v.lookup("b") == 5);
    CHECK(v.size() == 6);

    const std::vector<std::string> tie{"b a"};
    Vocabulary t = Vocabulary::build(tie, 6);
    CHECK(t.lookup("a") == 4);
    CHECK(t.lookup("b") == 5);
    CHECK(t.lookup("zebra") == kUnk);
}

TEST_CASE("build_vocab respects the cap and validates input") {
    const std::vector<std::string> corpus{"c c c b b a"};
    Vocabulary v = Vocabulary::build(corpus, 6);
    CHECK(v.lookup("c") == 4);
    CHECK(v.lookup("b") == 5);
    CHECK(v.lookup("a") == kUnk);
    CHECK_THROWS_AS(Vocabulary::build(corpus, 4), ParameterError);
    CHECK_THROWS_AS(Vocabulary::build(std::vector<std::string>{}, 10), InputError);
}

TEST_CASE("labeled vocabulary ignores the label field") {
    const std::vector<std::string> corpus{"7\tx y", "7\ty"};
    Vocabulary v = Vocabulary::build(corpus, 10, true);
    CHECK(v.lookup("7") == kUnk);
    CHECK(v.lookup("y") == 4);
}

TEST_CASE("encode_labeled_line") {
    const std::vector<std::string> corpus{"hello world"};
    Vocabulary v = Vocabulary::build(corpus, 10);
    Document d = encode_labeled_line("1\tHello world", v, true, 3);
    CHECK(d.label == 1);
    CHECK(d.tokens == std::vector<int>{kBos, v.lookup("hello"), v.lookup("world"), kEos});

    Document u = encode_labeled_line("1 hello", v, false);
    CHECK(u.label == -1);
    CHECK(u.tokens.size() == 4);
    CHECK(u.tokens[1] == kUnk);

    Document empty = encode_labeled_line("0\t", v, true);
    CHECK(empty.tokens == std::vector<int>{kBos, kEos});

    try {
        encode_labeled_line("x\thello", v, true, 17);
        FAIL("expected ParseError");
    } catch (const ParseError& e) {
        CHECK(e.line() == 17);
    }
    CHECK_THROWS_AS(encode_labeled_line("no tab here", v, true, 2), ParseError);
    CHECK_THROWS_AS(encode_labeled_line("5\thello", v, true, 2, 3), ParseError);
}

TEST_CASE("decode(encode(text)) reproduces the tokens with UNK substitutions") {
    const std::vector<std::string> corpus{"the cat sat on the mat"};
    Vocabulary v = Vocabulary::build(corpus, 8);  // keeps 4 content tokens
    const std::string text = "The dog sat on THE mat";
    Document d = encode_labeled_line(text, v, false);
    const auto original = tokenize(text);
    const auto decoded = tokenize(decode(d.tokens, v));
    REQUIRE(decoded.size() == original.size());
    for (std::size_t i = 0; i < original.size(); ++i) {
        if (v.lookup(original[i]) == kUnk)
            CHECK(decoded[i] == v.token(kUnk));
        else
            CHECK(decoded[i] == original[i]);
    }
}

TEST_CASE("vocabulary file round trip") {
    const std::vector<std::string> corpus{"b b a c"};
    Vocabulary v = Vocabulary::build(corpus, 10);
    auto path = std::filesystem::temp_directory_path() / "dilvae_vocab_test.txt";
    v.save(path);
    CHECK(Vocabulary::load(path) == v);
    CHECK(read_lines(path).front() == "b");
    std::filesystem::remove(path);
}

namespace {

std::vector<Document> make_docs(std::size_t n) {
    std::vector<Document> docs;
    for (std::size_t i = 0; i < n; ++i) {
        Document d;
        d.tokens.push_back(kBos);
        for (std::size_t k = 0; k <= i % 4; ++k) d.tokens.push_back(static_cast<int>(4 + i));
        d.tokens.push_back(kEos);
        d.label = static_cast<int>(i % 2);
        docs.push_back(d);
    }
    return docs;
}

} // namespace

TEST_CASE("batchify sizes and masks") {
    auto docs = make_docs(5);
    auto batches = batchify(docs, 2);
    REQUIRE(batches.size() == 3);
    CHECK(batches[0].size == 2);
    CHECK(batches[1].size == 2);
    CHECK(batches[2].size == 1);
    const Batch& b = batches[1];
    for (std::size_t r = 0; r < b.size; ++r)
        for (std::size_t t = 0; t < b.width; ++t) {
            CHECK(static_cast<bool>(b.mask[r * b.width + t]) == (t < b.lengths[r]));
            if (!b.mask[r * b.width + t]) CHECK(b.token(r, t) == kPad);
        }
    // Targets end in EOS exactly at the last masked position.
    auto targets = b.targets();
    auto tmask = b.target_mask();
    for (std::size_t r = 0; r < b.size; ++r) {
        const std::size_t last = b.lengths[r] - 2;
        CHECK(targets[r * b.steps() + last] == kEos);
        CHECK(tmask[r * b.steps() + last] == 1);
        if (last + 1 < b.steps()) CHECK(tmask[r * b.steps() + last + 1] == 0);
    }
    CHECK_THROWS_AS(batchify(docs, 0), ParameterError);
}

TEST_CASE("batchify covers every document exactly once and is seed-deterministic") {
    auto docs = make_docs(23);
    for (bool bucket : {false, true}) {
        Rng r1(5), r2(5);
        auto a = batchify(docs, 4, &r1, bucket);
        auto b = batchify(docs, 4, &r2, bucket);
        std::multiset<int> seen;
        REQUIRE(a.size() == b.size());
        for (std::size_t i = 0; i < a.size(); ++i) {
            CHECK(a[i].tokens == b[i].tokens);
            for (std::size_t r = 0; r < a[i].size; ++r) seen.insert(a[i].token(r, 1));
        }
        std::multiset<int> expected;
        for (const auto& d : docs) expected.insert(d.tokens[1]);
        CHECK(seen == expected);
    }
}

TEST_CASE("synthetic spec parsing and validation") {
    const std::string text = R"(# three-state cycle
classes = 1
vocab = 3
docs = 4
min_length = 3
max_length = 3
seed = 9
generator = explicit
[class 0]
start = 1 0 0
transition:
0 1 0
0 0 1
1 0 0
)";
    SyntheticSpec spec = SyntheticSpec::parse(text);
    CHECK(spec.chains.size() == 1);
    CHECK(spec.chains[0].states == 3);
    auto corpus = generate_synthetic(spec);
    REQUIRE(corpus.lines.size() == 4);
    CHECK(corpus.lines[0] == "0\tw0 w1 w2");
    CHECK(corpus.entropy_rate[0] == doctest::Approx(0.0).epsilon(1e-12));

    std::string bad = text;
    bad.replace(bad.find("0 0 1\n"), 6, "0 0.5 1\n");
    CHECK_THROWS_AS(generate_synthetic(SyntheticSpec::parse(bad)), InputError);
    CHECK_THROWS_AS(SyntheticSpec::parse("classes = two\n"), ParseError);
    CHECK_THROWS_AS(SyntheticSpec::parse("colour = red\n"), ParseError);
}

TEST_CASE("entropy rate of a uniform chain is ln V") {
    SyntheticSpec spec;
    spec.vocab_size = 7;
    spec.generator = "uniform";
    auto corpus = generate_synthetic(spec);
    CHECK(corpus.entropy_rate[0] == doctest::Approx(std::log(7.0)).epsilon(1e-12));
}

TEST_CASE("disjoint class supports are perfectly separable") {
    SyntheticSpec spec;
    spec.num_classes = 2;
    spec.vocab_size = 12;
    spec.num_docs = 200;
    spec.generator = "disjoint";
    spec.successors = 3;
    auto corpus = generate_synthetic(spec);
    std::size_t correct = 0;
    for (std::size_t d = 0; d < corpus.states.size(); ++d) {
        for (std::size_t s : corpus.states[d]) CHECK(s % 2 == static_cast<std::size_t>(corpus.labels[d]));
        correct += bayes_classify(corpus.chains, corpus.states[d]) == corpus.labels[d];
    }
    CHECK(correct == corpus.states.size());
}

TEST_CASE("shared generator mixes a common chain with class-specific rows") {
    SyntheticSpec spec;
    spec.num_classes = 3;
    spec.vocab_size = 20;
    spec.num_docs = 300;
    spec.min_length = 20;
    spec.max_length = 30;
    spec.generator = "shared";
    spec.class_strength = 0.5;
    auto corpus = generate_synthetic(spec);
    std::map<int, std::size_t> per_class;
    for (int l : corpus.labels) ++per_class[l];
    CHECK(per_class.size() == 3);
    for (double h : corpus.entropy_rate) {
        CHECK(h > 0.0);
        CHECK(h < std::log(20.0));
    }
    // Same seed, same corpus.
    CHECK(generate_synthetic(spec).lines == corpus.lines);
}
