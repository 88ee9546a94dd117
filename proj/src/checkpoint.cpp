#include <bit>
#include <cstring>
#include <fstream>

#include "dilvae/errors.hpp"
#include "dilvae/model.hpp"

namespace dilvae {

namespace {

constexpr char kMagic[8] = {'D', 'I', 'L', 'V', 'A', 'E', 'C', 'K'};
constexpr std::uint32_t kVersion = 1;
constexpr const char* kModelPrefix = "model.";

class Writer {
public:
    explicit Writer(std::ostream& out) : out_(out) {}
    void u32(std::uint32_t v) { le(v, 4); }
    void u64(std::uint64_t v) { le(v, 8); }
    void f64(double v) { le(std::bit_cast<std::uint64_t>(v), 8); }
    void str(const std::string& s) {
        u32(static_cast<std::uint32_t>(s.size()));
        out_.write(s.data(), static_cast<std::streamsize>(s.size()));
    }
    void raw(const char* p, std::size_t n) { out_.write(p, static_cast<std::streamsize>(n)); }

private:
    void le(std::uint64_t v, int bytes) {
        char buf[8];
        for (int i = 0; i < bytes; ++i) buf[i] = static_cast<char>((v >> (8 * i)) & 0xff);
        out_.write(buf, bytes);
    }
    std::ostream& out_;
};

class Reader {
public:
    Reader(std::istream& in, std::string path) : in_(in), path_(std::move(path)) {}
    std::uint32_t u32() { return static_cast<std::uint32_t>(le(4)); }
    std::uint64_t u64() { return le(8); }
    double f64() { return std::bit_cast<double>(le(8)); }
    std::string str(std::size_t limit = 1 << 24) {
        const std::uint32_t n = u32();
        if (n > limit) fail("string length out of range");
        std::string s(n, '\0');
        read(s.data(), n);
        return s;
    }
    void read(char* p, std::size_t n) {
        in_.read(p, static_cast<std::streamsize>(n));
        if (static_cast<std::size_t>(in_.gcount()) != n) fail("truncated file");
    }
    [[noreturn]] void fail(const std::string& why) const { throw InputError("checkpoint " + path_ + ": " + why); }

private:
    std::uint64_t le(int bytes) {
        unsigned char buf[8];
        read(reinterpret_cast<char*>(buf), static_cast<std::size_t>(bytes));
        std::uint64_t v = 0;
        for (int i = 0; i < bytes; ++i) v |= static_cast<std::uint64_t>(buf[i]) << (8 * i);
        return v;
    }
    std::istream& in_;
    std::string path_;
};

} // namespace

void save_checkpoint(const std::filesystem::path& path, TextModel& model, const KeyValues& extra) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw InputError("cannot write checkpoint " + path.string());
    Writer w(out);
    w.raw(kMagic, sizeof kMagic);
    w.u32(kVersion);
    std::vector<std::string> lines;
    for (const auto& [k, v] : model.config().to_kv()) lines.push_back(kModelPrefix + k + "=" + v);
    for (const auto& [k, v] : extra) {
        if (k.rfind(kModelPrefix, 0) == 0) throw ConfigError("extra checkpoint key '" + k + "' collides with model keys");
        if (k.find('=') != std::string::npos || k.find('\n') != std::string::npos || v.find('\n') != std::string::npos)
            throw ConfigError("checkpoint metadata must not contain '=' in keys or newlines");
        lines.push_back(k + "=" + v);
    }
    w.u32(static_cast<std::uint32_t>(lines.size()));
    for (const auto& l : lines) w.str(l);
    auto params = model.parameters();
    w.u32(static_cast<std::uint32_t>(params.size()));
    for (const auto& p : params) {
        w.str(p.name);
        w.u32(static_cast<std::uint32_t>(p.tensor->rank()));
        for (auto d : p.tensor->shape()) w.u64(d);
        for (double v : p.tensor->values()) w.f64(v);
    }
    if (!out) throw InputError("failed writing checkpoint " + path.string());
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw InputError("cannot read checkpoint " + path.string());
    Reader r(in, path.string());
    char magic[sizeof kMagic];
    r.read(magic, sizeof magic);
    if (std::memcmp(magic, kMagic, sizeof magic) != 0) r.fail("bad magic");
    if (const auto v = r.u32(); v != kVersion) r.fail("unsupported version " + std::to_string(v));
    KeyValues model_kv, extra;
    const std::uint32_t nlines = r.u32();
    for (std::uint32_t i = 0; i < nlines; ++i) {
        const std::string line = r.str();
        const auto eq = line.find('=');
        if (eq == std::string::npos) r.fail("metadata line without '='");
        std::string key = line.substr(0, eq);
        if (key.rfind(kModelPrefix, 0) == 0)
            model_kv[key.substr(std::strlen(kModelPrefix))] = line.substr(eq + 1);
        else
            extra[key] = line.substr(eq + 1);
    }
    Checkpoint ck{TextModel(ModelConfig::from_kv(model_kv)), std::move(extra)};
    auto params = ck.model.parameters();
    const std::uint32_t count = r.u32();
    if (count != params.size())
        r.fail("expected " + std::to_string(params.size()) + " tensors, found " + std::to_string(count));
    for (auto& p : params) {
        const std::string name = r.str();
        if (name != p.name) r.fail("tensor '" + name + "' where '" + p.name + "' was expected");
        const std::uint32_t rank = r.u32();
        Shape shape;
        for (std::uint32_t i = 0; i < rank; ++i) shape.push_back(r.u64());
        if (shape != p.tensor->shape())
            r.fail("tensor '" + name + "' has shape " + shape_str(shape) + ", model expects " +
                   shape_str(p.tensor->shape()));
        for (double& v : p.tensor->values()) v = r.f64();
    }
    return ck;
}

} // namespace dilvae
