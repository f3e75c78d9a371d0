#pragma once

#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <istream>
#include <ostream>
#include <string>
#include <vector>

#include "lrcn/config.hpp"
#include "lrcn/data.hpp"
#include "lrcn/model.hpp"

namespace lrcn {

/**
 * Binary layout, all integers little-endian u64 unless noted:
 *
 *   "LRCNCKPT" | u32 version | str spec (key=value lines)
 *   | u64 vocab size, str token... | u64 bos | u64 eos | u64 unk (+1, 0 = none)
 *   | u64 block count, { str name | u64 rank | u64 extent... | f64 value... }...
 *   | str rng state | u64 step
 *
 * where str = u64 byte length + bytes and f64 = IEEE-754 bits as u64.
 */
struct Checkpoint {
    Model model;
    std::string rng_state;
    std::uint64_t step = 0;
};

inline constexpr char kCheckpointMagic[8] = {'L', 'R', 'C', 'N', 'C', 'K', 'P', 'T'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

namespace detail {

inline void put_u64(std::ostream& os, std::uint64_t v) {
    char b[8];
    for (int i = 0; i < 8; ++i) b[i] = static_cast<char>((v >> (8 * i)) & 0xff);
    os.write(b, 8);
}

inline void put_u32(std::ostream& os, std::uint32_t v) {
    char b[4];
    for (int i = 0; i < 4; ++i) b[i] = static_cast<char>((v >> (8 * i)) & 0xff);
    os.write(b, 4);
}

inline void put_str(std::ostream& os, const std::string& s) {
    put_u64(os, s.size());
    os.write(s.data(), static_cast<std::streamsize>(s.size()));
}

class Reader {
  public:
    Reader(std::istream& is, std::string path) : is_(is), path_(std::move(path)) {}

    std::uint64_t u64() {
        unsigned char b[8];
        read(b, 8);
        std::uint64_t v = 0;
        for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(b[i]) << (8 * i);
        return v;
    }

    std::uint32_t u32() {
        unsigned char b[4];
        read(b, 4);
        std::uint32_t v = 0;
        for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(b[i]) << (8 * i);
        return v;
    }

    std::string str() {
        const std::uint64_t n = u64();
        if (n > (1u << 30)) fail("implausible string length");
        std::string s(n, '\0');
        read(s.data(), n);
        return s;
    }

    void read(void* dst, std::size_t n) {
        is_.read(static_cast<char*>(dst), static_cast<std::streamsize>(n));
        if (static_cast<std::size_t>(is_.gcount()) != n) fail("truncated file");
    }

    [[noreturn]] void fail(const std::string& what) const {
        throw DataError(path_ + ": corrupt checkpoint: " + what);
    }

  private:
    std::istream& is_;
    std::string path_;
};

}  // namespace detail

inline void write_checkpoint(std::ostream& os, const Checkpoint& ck) {
    os.write(kCheckpointMagic, 8);
    detail::put_u32(os, kCheckpointVersion);
    detail::put_str(os, spec_to_config(ck.model.spec).str());
    const Vocabulary& v = ck.model.spec.vocab;
    detail::put_u64(os, v.tokens.size());
    for (const auto& t : v.tokens) detail::put_str(os, t);
    detail::put_u64(os, v.bos);
    detail::put_u64(os, v.eos);
    detail::put_u64(os, v.unk ? *v.unk + 1 : 0);
    std::uint64_t count = 0;
    ck.model.params.for_each_block([&](const std::string&, const Tensor&) { ++count; });
    detail::put_u64(os, count);
    ck.model.params.for_each_block([&](const std::string& name, const Tensor& t) {
        detail::put_str(os, name);
        detail::put_u64(os, t.rank());
        for (std::size_t e : t.shape()) detail::put_u64(os, e);
        for (double x : t.values()) detail::put_u64(os, std::bit_cast<std::uint64_t>(x));
    });
    detail::put_str(os, ck.rng_state);
    detail::put_u64(os, ck.step);
}

inline Checkpoint read_checkpoint(std::istream& is, const std::string& path = "<checkpoint>") {
    detail::Reader r(is, path);
    char magic[8];
    r.read(magic, 8);
    if (std::memcmp(magic, kCheckpointMagic, 8) != 0) r.fail("bad magic");
    if (const auto ver = r.u32(); ver != kCheckpointVersion) r.fail("unsupported version " + std::to_string(ver));
    const std::string spec_text = r.str();
    ModelSpec spec;
    try {
        spec = spec_from_config(Config::parse(spec_text));
    } catch (const ParseError& e) {
        r.fail(e.what());
    }
    const std::uint64_t nv = r.u64();
    if (nv > (1u << 24)) r.fail("implausible vocabulary size");
    for (std::uint64_t i = 0; i < nv; ++i) spec.vocab.tokens.push_back(r.str());
    spec.vocab.bos = r.u64();
    spec.vocab.eos = r.u64();
    const std::uint64_t unk = r.u64();
    spec.vocab.unk = unk ? std::optional<std::size_t>(unk - 1) : std::nullopt;
    spec.vocab.rebuild_index();
    Checkpoint ck;
    try {
        if (spec.uses_tokens()) spec.vocab.validate();
        ck.model = Model::zeros(spec);
    } catch (const std::invalid_argument& e) {
        r.fail(std::string("invalid model: ") + e.what());
    }
    std::uint64_t expected = 0;
    ck.model.params.for_each_block([&](const std::string&, Tensor&) { ++expected; });
    if (r.u64() != expected) r.fail("block count does not match the model");
    ck.model.params.for_each_block([&](const std::string& name, Tensor& t) {
        if (r.str() != name) r.fail("expected block " + name);
        if (r.u64() != t.rank()) r.fail("rank mismatch in " + name);
        for (std::size_t e : t.shape())
            if (r.u64() != e) r.fail("shape mismatch in " + name);
        for (double& x : t.values()) x = std::bit_cast<double>(r.u64());
    });
    ck.rng_state = r.str();
    ck.step = r.u64();
    return ck;
}

inline void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ck) {
    atomic_write(path, [&](std::ostream& os) { write_checkpoint(os, ck); }, true);
}

inline Checkpoint load_checkpoint(const std::filesystem::path& path) {
    std::ifstream is = open_input(path, true);
    return read_checkpoint(is, path.string());
}

}  // namespace lrcn
