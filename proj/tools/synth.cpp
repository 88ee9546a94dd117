// Writes train/valid/test corpora from a synthetic Markov spec.

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>

#include "CLI11.hpp"
#include "dilvae/errors.hpp"
#include "dilvae/synthetic.hpp"

using namespace dilvae;

namespace {

void write_lines(const std::filesystem::path& path, const std::vector<std::string>& lines, std::size_t begin,
                 std::size_t end) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw InputError("cannot write " + path.string());
    for (std::size_t i = begin; i < end; ++i) out << lines[i] << '\n';
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"Generate a class-conditional Markov corpus"};
    std::string spec_path, out_dir = ".";
    double valid_fraction = 0.1, test_fraction = 0.1;
    std::optional<std::uint64_t> seed;
    app.add_option("spec", spec_path, "synthetic spec file")->required()->check(CLI::ExistingFile);
    app.add_option("--out", out_dir, "directory for train.txt, valid.txt, test.txt");
    app.add_option("--valid-fraction", valid_fraction)->check(CLI::Range(0.0, 1.0));
    app.add_option("--test-fraction", test_fraction)->check(CLI::Range(0.0, 1.0));
    app.add_option("--seed", seed, "overrides the spec seed");
    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        return app.exit(e) == 0 ? 0 : 1;
    }
    try {
        if (valid_fraction + test_fraction >= 1.0) throw UsageError("valid and test fractions leave no training data");
        SyntheticSpec spec = SyntheticSpec::load(spec_path);
        if (seed) spec.seed = *seed;
        const SyntheticCorpus corpus = generate_synthetic(spec);
        const std::size_t n = corpus.lines.size();
        const auto n_valid = static_cast<std::size_t>(valid_fraction * static_cast<double>(n));
        const auto n_test = static_cast<std::size_t>(test_fraction * static_cast<double>(n));
        const std::size_t n_train = n - n_valid - n_test;
        std::filesystem::create_directories(out_dir);
        const std::filesystem::path dir(out_dir);
        write_lines(dir / "train.txt", corpus.lines, 0, n_train);
        write_lines(dir / "valid.txt", corpus.lines, n_train, n_train + n_valid);
        write_lines(dir / "test.txt", corpus.lines, n_train + n_valid, n);
        std::cout << "train " << n_train << "  valid " << n_valid << "  test " << n_test << "\n";
        const auto& rates = corpus.entropy_rate;
        if (rates.size() <= 10) {
            for (std::size_t c = 0; c < rates.size(); ++c)
                std::cout << "class " << c << " entropy rate " << rates[c] << " nats/token\n";
        } else {
            const auto [lo, hi] = std::minmax_element(rates.begin(), rates.end());
            std::cout << rates.size() << " classes, entropy rate " << *lo << " to " << *hi << " nats/token\n";
        }
        return 0;
    } catch (const std::invalid_argument& e) {
        std::cerr << "usage error: " << e.what() << "\n";
        return 1;
    } catch (const std::exception& e) {
        std::cerr << "data error: " << e.what() << "\n";
        return 2;
    }
}
