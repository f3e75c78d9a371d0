#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "lrcn/model.hpp"
#include "lrcn/random.hpp"
#include "lrcn/tensor.hpp"

namespace lrcn {

/// Malformed input file; the message carries "path:line: reason".
class ParseError : public std::runtime_error {
  public:
    ParseError(const std::string& path, std::size_t line, const std::string& what)
        : std::runtime_error(path + ":" + std::to_string(line) + ": " + what), line_(line) {}
    std::size_t line() const { return line_; }

  private:
    std::size_t line_;
};

/// I/O failure (missing file, unwritable destination).
class DataError : public std::runtime_error {
  public:
    using std::runtime_error::runtime_error;
};

// ---------------------------------------------------------------------------
// Flow images

/**
 * Encodes a 2 x H x W optical-flow field as a 3 x H x W image:
 * channels 1-2 = clamp(round(scale * flow), -128, 128), channel 3 = the
 * flow magnitude sqrt(u^2 + v^2) of the unscaled field, scaled, rounded and
 * clamped the same way.
 */
inline Tensor flow_to_image(const Tensor& flow, double scale = 16.0) {
    if (flow.rank() != 3 || flow.dim(0) != 2)
        throw DimensionError("flow_to_image: expected a 2 x H x W field, got " +
                             shape_str(flow.shape()));
    const std::size_t h = flow.dim(1), w = flow.dim(2), plane = h * w;
    auto quantize = [&](double v) { return std::clamp(std::round(scale * v), -128.0, 128.0); };
    Tensor img({3, h, w});
    for (std::size_t p = 0; p < plane; ++p) {
        const double u = flow[p], v = flow[plane + p];
        img[p] = quantize(u);
        img[plane + p] = quantize(v);
        img[2 * plane + p] = quantize(std::sqrt(u * u + v * v));
    }
    return img;
}

// ---------------------------------------------------------------------------
// Synthetic tasks

inline Tensor one_hot(std::size_t index, std::size_t n) {
    Tensor t({n});
    t[index] = 1.0;
    return t;
}

struct TokenDataset {
    Vocabulary vocab;
    std::vector<Example> examples;
};

/// Encoder-decoder copy task: one-hot symbol sequence -> same symbols + <EOS>.
inline TokenDataset gen_copy_task(std::uint64_t seed, std::size_t vocab_size, std::size_t seq_len,
                                  std::size_t count) {
    if (vocab_size == 0 || seq_len == 0) throw DomainError("copy task needs symbols and length");
    std::vector<std::string> words;
    for (std::size_t s = 0; s < vocab_size; ++s) words.push_back("s" + std::to_string(s));
    TokenDataset d{Vocabulary::from_words(words), {}};
    Rng rng(seed);
    for (std::size_t i = 0; i < count; ++i) {
        Example ex;
        for (std::size_t t = 0; t < seq_len; ++t) {
            const std::size_t sym = rng.index(vocab_size);
            ex.inputs.push_back(one_hot(sym, vocab_size));
            ex.labels.push_back(d.vocab.id(words[sym]));
        }
        ex.labels.push_back(d.vocab.eos);
        d.examples.push_back(std::move(ex));
    }
    return d;
}

inline const std::vector<std::string>& toy_colors() {
    static const std::vector<std::string> c{"red", "green", "blue", "yellow",
                                            "black", "white", "purple", "orange"};
    return c;
}

inline const std::vector<std::string>& toy_shapes() {
    static const std::vector<std::string> s{"circle", "square", "triangle", "star",
                                            "heart", "cross", "ring", "diamond"};
    return s;
}

struct ToyCaptionDataset {
    Vocabulary vocab;
    std::vector<Example> examples;  // inputs = {image}, labels = caption
    std::vector<std::pair<std::size_t, std::size_t>> attributes;  // (shape, color)
};

/**
 * Image = [onehot(shape) || onehot(color)] + noise * N(0, 1); caption =
 * "<color> <shape> <EOS>". The word for each attribute is fixed, so with
 * zero noise the caption is a deterministic function of the image.
 */
inline ToyCaptionDataset gen_toy_captioning(std::uint64_t seed, std::size_t count, double noise = 0.0) {
    const auto& colors = toy_colors();
    const auto& shapes = toy_shapes();
    std::vector<std::string> words = colors;
    words.insert(words.end(), shapes.begin(), shapes.end());
    ToyCaptionDataset d{Vocabulary::from_words(words), {}, {}};
    Rng rng(seed);
    for (std::size_t i = 0; i < count; ++i) {
        const std::size_t shape = rng.index(shapes.size()), color = rng.index(colors.size());
        Tensor img = concat(one_hot(shape, shapes.size()), one_hot(color, colors.size()));
        if (noise > 0.0)
            for (double& v : img.values()) v += noise * rng.normal();
        Example ex{{std::move(img)},
                   {d.vocab.id(colors[color]), d.vocab.id(shapes[shape]), d.vocab.eos}};
        d.examples.push_back(std::move(ex));
        d.attributes.emplace_back(shape, color);
    }
    return d;
}

/**
 * Order task: each sequence of `length` one-hot frames over `symbols`
 * contains symbol 0 ("A") and symbol 1 ("B") exactly once at random
 * distinct positions, every other frame a random distractor (symbols >= 2).
 * Label 1 iff A precedes B. The multiset of frames carries no label
 * information, so order-free pooling is at chance.
 */
inline std::vector<Example> gen_order_task(std::uint64_t seed, std::size_t count,
                                           std::size_t length = 8, std::size_t symbols = 4) {
    if (length < 2 || symbols < 3) throw DomainError("order task needs length >= 2 and >= 3 symbols");
    Rng rng(seed);
    std::vector<Example> out;
    for (std::size_t i = 0; i < count; ++i) {
        const std::size_t a = rng.index(length);
        std::size_t b = rng.index(length - 1);
        if (b >= a) ++b;
        Example ex;
        for (std::size_t t = 0; t < length; ++t) {
            const std::size_t sym = t == a ? 0 : t == b ? 1 : 2 + rng.index(symbols - 2);
            ex.inputs.push_back(one_hot(sym, symbols));
        }
        ex.labels = {a < b ? std::size_t{1} : std::size_t{0}};
        out.push_back(std::move(ex));
    }
    return out;
}

/**
 * Lag-recall task: `lag + 1` random one-hot symbols; only the last step is
 * labeled, with the symbol seen `lag` steps earlier (the first one).
 */
inline std::vector<Example> gen_lag_task(std::uint64_t seed, std::size_t count, std::size_t lag = 8,
                                         std::size_t symbols = 4) {
    Rng rng(seed);
    std::vector<Example> out;
    for (std::size_t i = 0; i < count; ++i) {
        Example ex;
        std::size_t first = 0;
        for (std::size_t t = 0; t <= lag; ++t) {
            const std::size_t sym = rng.index(symbols);
            if (t == 0) first = sym;
            ex.inputs.push_back(one_hot(sym, symbols));
            ex.labels.push_back(kNoLabel);
        }
        ex.labels.back() = first;
        out.push_back(std::move(ex));
    }
    return out;
}

// ---------------------------------------------------------------------------
// File formats

/// Writes via a temporary sibling and renames it over `path`.
template <class Writer>
void atomic_write(const std::filesystem::path& path, Writer&& write, bool binary = false) {
    const std::filesystem::path tmp = path.string() + ".tmp";
    {
        std::ofstream os(tmp, binary ? std::ios::binary : std::ios::out);
        if (!os) throw DataError("cannot open " + tmp.string() + " for writing");
        write(os);
        os.flush();
        if (!os) throw DataError("write to " + tmp.string() + " failed");
    }
    std::error_code ec;
    std::filesystem::rename(tmp, path, ec);
    if (ec) throw DataError("cannot rename " + tmp.string() + " to " + path.string() + ": " + ec.message());
}

inline std::ifstream open_input(const std::filesystem::path& path, bool binary = false) {
    std::ifstream is(path, binary ? std::ios::binary : std::ios::in);
    if (!is) throw DataError("cannot open " + path.string());
    return is;
}

inline std::vector<std::string> split_ws(const std::string& line) {
    std::istringstream ss(line);
    std::vector<std::string> out;
    for (std::string tok; ss >> tok;) out.push_back(std::move(tok));
    return out;
}

inline std::vector<std::string> split_tabs(const std::string& line) {
    std::vector<std::string> out;
    std::size_t start = 0;
    for (;;) {
        const std::size_t tab = line.find('\t', start);
        out.push_back(line.substr(start, tab - start));
        if (tab == std::string::npos) break;
        start = tab + 1;
    }
    return out;
}

inline std::string strip_cr(std::string s) {
    if (!s.empty() && s.back() == '\r') s.pop_back();
    return s;
}

inline double parse_double(const std::string& s, const std::string& path, std::size_t line) {
    try {
        std::size_t used = 0;
        const double v = std::stod(s, &used);
        if (used != s.size()) throw std::invalid_argument(s);
        return v;
    } catch (const std::exception&) {
        throw ParseError(path, line, "not a number: '" + s + "'");
    }
}

inline std::size_t parse_index(const std::string& s, const std::string& path, std::size_t line) {
    if (s.empty() || !std::all_of(s.begin(), s.end(), [](char c) { return c >= '0' && c <= '9'; }))
        throw ParseError(path, line, "not a non-negative integer: '" + s + "'");
    try {
        return static_cast<std::size_t>(std::stoull(s));
    } catch (const std::exception&) {
        throw ParseError(path, line, "integer out of range: '" + s + "'");
    }
}

inline std::string format_double(double v) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

// (a) token corpus: one caption per line, space-separated tokens, UTF-8.
using Corpus = std::vector<std::vector<std::string>>;

inline Corpus read_corpus(const std::filesystem::path& path) {
    std::ifstream is = open_input(path);
    Corpus out;
    std::size_t n = 0;
    for (std::string line; std::getline(is, line);) {
        ++n;
        auto toks = split_ws(strip_cr(line));
        if (toks.empty()) throw ParseError(path.string(), n, "empty caption");
        out.push_back(std::move(toks));
    }
    return out;
}

inline void write_corpus(const std::filesystem::path& path, const Corpus& corpus) {
    atomic_write(path, [&](std::ostream& os) {
        for (const auto& caption : corpus) {
            for (std::size_t i = 0; i < caption.size(); ++i) os << (i ? " " : "") << caption[i];
            os << '\n';
        }
    });
}

// (b) feature file: "dims d" header, then one space-separated d-vector per line.
inline std::vector<Tensor> read_features(const std::filesystem::path& path) {
    std::ifstream is = open_input(path);
    std::string line;
    if (!std::getline(is, line)) throw ParseError(path.string(), 1, "missing 'dims d' header");
    const auto head = split_ws(strip_cr(line));
    if (head.size() != 2 || head[0] != "dims") throw ParseError(path.string(), 1, "expected 'dims d' header");
    const std::size_t d = parse_index(head[1], path.string(), 1);
    if (d == 0) throw ParseError(path.string(), 1, "dimension must be positive");
    std::vector<Tensor> rows;
    std::size_t n = 1;
    while (std::getline(is, line)) {
        ++n;
        const auto toks = split_ws(strip_cr(line));
        if (toks.size() != d)
            throw ParseError(path.string(), n, "expected " + std::to_string(d) + " values, found " +
                                                   std::to_string(toks.size()));
        std::vector<double> v;
        v.reserve(d);
        for (const auto& t : toks) v.push_back(parse_double(t, path.string(), n));
        rows.push_back(Tensor::vector(std::move(v)));
    }
    return rows;
}

inline void write_features(const std::filesystem::path& path, const std::vector<Tensor>& rows) {
    if (rows.empty()) throw DomainError("write_features: no rows");
    const std::size_t d = rows.front().size();
    atomic_write(path, [&](std::ostream& os) {
        os << "dims " << d << '\n';
        for (const auto& r : rows) {
            if (r.size() != d) throw DimensionError("write_features: ragged rows");
            for (std::size_t k = 0; k < d; ++k) os << (k ? " " : "") << format_double(r[k]);
            os << '\n';
        }
    });
}

// (c) pairing manifest: "feature_row<TAB>caption_line" per line (0-based).
struct Pair {
    std::size_t feature_row;
    std::size_t caption_line;
    bool operator==(const Pair&) const = default;
};

inline std::vector<Pair> read_pairs(const std::filesystem::path& path) {
    std::ifstream is = open_input(path);
    std::vector<Pair> out;
    std::size_t n = 0;
    for (std::string line; std::getline(is, line);) {
        ++n;
        const auto f = split_tabs(strip_cr(line));
        if (f.size() != 2) throw ParseError(path.string(), n, "expected 2 tab-separated fields");
        out.push_back({parse_index(f[0], path.string(), n), parse_index(f[1], path.string(), n)});
    }
    return out;
}

inline void write_pairs(const std::filesystem::path& path, const std::vector<Pair>& pairs) {
    atomic_write(path, [&](std::ostream& os) {
        for (const auto& p : pairs) os << p.feature_row << '\t' << p.caption_line << '\n';
    });
}

// (d) clip manifest: "feature_file<TAB>start_frame<TAB>length<TAB>label" per line.
struct ClipEntry {
    std::string feature_file;  // relative to the manifest's directory
    std::size_t start;
    std::size_t length;
    std::size_t label;
    bool operator==(const ClipEntry&) const = default;
};

inline std::vector<ClipEntry> read_clip_manifest(const std::filesystem::path& path) {
    std::ifstream is = open_input(path);
    std::vector<ClipEntry> out;
    std::size_t n = 0;
    for (std::string line; std::getline(is, line);) {
        ++n;
        const auto f = split_tabs(strip_cr(line));
        if (f.size() != 4) throw ParseError(path.string(), n, "expected 4 tab-separated fields");
        if (f[0].empty()) throw ParseError(path.string(), n, "empty feature file name");
        ClipEntry e{f[0], parse_index(f[1], path.string(), n), parse_index(f[2], path.string(), n),
                    parse_index(f[3], path.string(), n)};
        if (e.length == 0) throw ParseError(path.string(), n, "clip length must be positive");
        out.push_back(std::move(e));
    }
    return out;
}

inline void write_clip_manifest(const std::filesystem::path& path, const std::vector<ClipEntry>& rows) {
    atomic_write(path, [&](std::ostream& os) {
        for (const auto& e : rows)
            os << e.feature_file << '\t' << e.start << '\t' << e.length << '\t' << e.label << '\n';
    });
}

/// Vocabulary file: one token per line; the first three lines are <BOS>, <EOS>, <UNK>.
inline Vocabulary read_vocabulary(const std::filesystem::path& path) {
    std::ifstream is = open_input(path);
    Vocabulary v;
    std::size_t n = 0;
    for (std::string line; std::getline(is, line);) {
        ++n;
        line = strip_cr(line);
        if (line.empty() || line.find_first_of(" \t") != std::string::npos)
            throw ParseError(path.string(), n, "vocabulary entries must be single tokens");
        v.tokens.push_back(line);
    }
    if (v.tokens.size() < 3 || v.tokens[0] != Vocabulary::kBos || v.tokens[1] != Vocabulary::kEos ||
        v.tokens[2] != Vocabulary::kUnk)
        throw ParseError(path.string(), 1,
                         "vocabulary must start with <BOS>, <EOS>, <UNK>");
    v.bos = 0;
    v.eos = 1;
    v.unk = 2;
    v.rebuild_index();
    return v;
}

inline void write_vocabulary(const std::filesystem::path& path, const Vocabulary& v) {
    atomic_write(path, [&](std::ostream& os) {
        for (const auto& t : v.tokens) os << t << '\n';
    });
}

inline std::vector<std::size_t> encode_caption(const Vocabulary& v, const std::vector<std::string>& words) {
    std::vector<std::size_t> ids;
    for (const auto& w : words) ids.push_back(v.id(w));
    ids.push_back(v.eos);
    return ids;
}

inline std::vector<std::string> decode_caption(const Vocabulary& v, const std::vector<std::size_t>& ids) {
    std::vector<std::string> words;
    for (std::size_t id : ids) {
        if (id == v.eos) break;
        words.push_back(v.word(id));
    }
    return words;
}

// ---------------------------------------------------------------------------
// Dataset directories

/// caption / perstep_decode: vocab.txt, features.txt, captions.txt, pairs.tsv.
struct CaptionData {
    Vocabulary vocab;
    std::vector<Tensor> features;
    Corpus captions;
    std::vector<Pair> pairs;

    std::vector<Example> examples() const {
        std::vector<Example> out;
        for (const auto& p : pairs) {
            if (p.feature_row >= features.size() || p.caption_line >= captions.size())
                throw DomainError("pair references a missing feature row or caption line");
            out.push_back({{features[p.feature_row]}, encode_caption(vocab, captions[p.caption_line])});
        }
        return out;
    }
};

inline Corpus corpus_from(const Vocabulary& v, const std::vector<std::vector<std::size_t>>& captions) {
    Corpus c;
    for (const auto& ids : captions) c.push_back(decode_caption(v, ids));
    return c;
}

inline CaptionData load_caption_data(const std::filesystem::path& dir) {
    CaptionData d;
    d.captions = read_corpus(dir / "captions.txt");
    if (std::filesystem::exists(dir / "vocab.txt")) {
        d.vocab = read_vocabulary(dir / "vocab.txt");
    } else {
        std::vector<std::string> words;
        for (const auto& c : d.captions) words.insert(words.end(), c.begin(), c.end());
        std::sort(words.begin(), words.end());
        d.vocab = Vocabulary::from_words(words);
    }
    d.features = read_features(dir / "features.txt");
    d.pairs = read_pairs(dir / "pairs.tsv");
    return d;
}

inline void save_caption_data(const std::filesystem::path& dir, const CaptionData& d) {
    std::filesystem::create_directories(dir);
    write_vocabulary(dir / "vocab.txt", d.vocab);
    write_features(dir / "features.txt", d.features);
    write_corpus(dir / "captions.txt", d.captions);
    write_pairs(dir / "pairs.tsv", d.pairs);
}

/// Reads the frames of every manifest row; feature files are cached per name.
inline std::vector<std::vector<Tensor>> load_clip_frames(const std::filesystem::path& manifest,
                                                         const std::vector<ClipEntry>& rows) {
    std::map<std::string, std::vector<Tensor>> cache;
    std::vector<std::vector<Tensor>> out;
    std::size_t line = 0;
    for (const auto& e : rows) {
        ++line;
        auto it = cache.find(e.feature_file);
        if (it == cache.end())
            it = cache.emplace(e.feature_file, read_features(manifest.parent_path() / e.feature_file)).first;
        const auto& frames = it->second;
        if (e.start + e.length > frames.size())
            throw ParseError(manifest.string(), line,
                             "clip exceeds the " + std::to_string(frames.size()) + " frames of " +
                                 e.feature_file);
        out.emplace_back(frames.begin() + static_cast<std::ptrdiff_t>(e.start),
                         frames.begin() + static_cast<std::ptrdiff_t>(e.start + e.length));
    }
    return out;
}

/// classify: frames.txt + clips.tsv (label = class id).
inline std::vector<Example> load_classify_data(const std::filesystem::path& dir) {
    const auto manifest = dir / "clips.tsv";
    const auto rows = read_clip_manifest(manifest);
    const auto frames = load_clip_frames(manifest, rows);
    std::vector<Example> out;
    for (std::size_t i = 0; i < rows.size(); ++i) out.push_back({frames[i], {rows[i].label}});
    return out;
}

inline void save_classify_data(const std::filesystem::path& dir, const std::vector<Example>& data) {
    std::filesystem::create_directories(dir);
    std::vector<Tensor> frames;
    std::vector<ClipEntry> rows;
    for (const auto& ex : data) {
        rows.push_back({"frames.txt", frames.size(), ex.inputs.size(), ex.labels.at(0)});
        for (const auto& f : ex.inputs) frames.push_back(f.flattened());
    }
    write_features(dir / "frames.txt", frames);
    write_clip_manifest(dir / "clips.tsv", rows);
}

/// encode_decode: vocab.txt, inputs.txt, targets.txt, sequences.tsv (label = target line).
struct Seq2SeqData {
    Vocabulary vocab;
    std::vector<Example> examples;
};

inline Seq2SeqData load_seq2seq_data(const std::filesystem::path& dir) {
    Seq2SeqData d;
    d.vocab = read_vocabulary(dir / "vocab.txt");
    const Corpus targets = read_corpus(dir / "targets.txt");
    const auto manifest = dir / "sequences.tsv";
    const auto rows = read_clip_manifest(manifest);
    const auto frames = load_clip_frames(manifest, rows);
    for (std::size_t i = 0; i < rows.size(); ++i) {
        if (rows[i].label >= targets.size())
            throw ParseError(manifest.string(), i + 1, "target line out of range");
        d.examples.push_back({frames[i], encode_caption(d.vocab, targets[rows[i].label])});
    }
    return d;
}

inline void save_seq2seq_data(const std::filesystem::path& dir, const TokenDataset& d) {
    std::filesystem::create_directories(dir);
    std::vector<Tensor> frames;
    std::vector<ClipEntry> rows;
    Corpus targets;
    for (const auto& ex : d.examples) {
        rows.push_back({"inputs.txt", frames.size(), ex.inputs.size(), targets.size()});
        for (const auto& f : ex.inputs) frames.push_back(f);
        targets.push_back(decode_caption(d.vocab, ex.labels));
    }
    write_vocabulary(dir / "vocab.txt", d.vocab);
    write_features(dir / "inputs.txt", frames);
    write_corpus(dir / "targets.txt", targets);
    write_clip_manifest(dir / "sequences.tsv", rows);
}

}  // namespace lrcn
