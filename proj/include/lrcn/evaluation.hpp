#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <iomanip>
#include <map>
#include <ostream>
#include <string>
#include <vector>

#include "lrcn/model.hpp"
#include "lrcn/tensor.hpp"

namespace lrcn {

// ---------------------------------------------------------------------------
// BLEU

/// Clipped n-gram matches and lengths, summed over sentences before any ratio.
struct BleuStats {
    std::vector<double> matches;
    std::vector<double> totals;
    double candidate_length = 0.0;
    double reference_length = 0.0;

    explicit BleuStats(std::size_t max_n = 4) : matches(max_n, 0.0), totals(max_n, 0.0) {}

    /// Geometric mean of modified precisions times the brevity penalty; no smoothing.
    double score() const {
        if (candidate_length == 0.0) return 0.0;
        double log_sum = 0.0;
        for (std::size_t n = 0; n < matches.size(); ++n) {
            if (matches[n] == 0.0 || totals[n] == 0.0) return 0.0;
            log_sum += std::log(matches[n] / totals[n]);
        }
        const double bp = candidate_length > reference_length
                              ? 1.0
                              : std::exp(1.0 - reference_length / candidate_length);
        return bp * std::exp(log_sum / static_cast<double>(matches.size()));
    }
};

template <class Token>
std::map<std::vector<Token>, double> ngram_counts(const std::vector<Token>& s, std::size_t n) {
    std::map<std::vector<Token>, double> counts;
    for (std::size_t i = 0; i + n <= s.size(); ++i)
        counts[std::vector<Token>(s.begin() + static_cast<std::ptrdiff_t>(i),
                                  s.begin() + static_cast<std::ptrdiff_t>(i + n))] += 1.0;
    return counts;
}

/**
 * Adds one candidate to `stats`. Each n-gram count is clipped to its maximum
 * count in any single reference; the effective reference length is the
 * reference length closest to the candidate's (shorter wins ties).
 */
template <class Token>
void add_sentence(BleuStats& stats, const std::vector<Token>& candidate,
                  const std::vector<std::vector<Token>>& references) {
    if (candidate.empty() || references.empty())
        throw DomainError("bleu: candidate and references must be non-empty");
    const std::size_t max_n = stats.matches.size();
    for (std::size_t n = 1; n <= max_n; ++n) {
        const auto cand = ngram_counts(candidate, n);
        std::map<std::vector<Token>, double> max_ref;
        for (const auto& ref : references)
            for (const auto& [g, c] : ngram_counts(ref, n)) max_ref[g] = std::max(max_ref[g], c);
        double clipped = 0.0, total = 0.0;
        for (const auto& [g, c] : cand) {
            total += c;
            if (auto it = max_ref.find(g); it != max_ref.end()) clipped += std::min(c, it->second);
        }
        stats.matches[n - 1] += clipped;
        stats.totals[n - 1] += total;
    }
    const double c = static_cast<double>(candidate.size());
    double best = static_cast<double>(references.front().size());
    for (const auto& ref : references) {
        const double r = static_cast<double>(ref.size());
        if (std::abs(r - c) < std::abs(best - c) || (std::abs(r - c) == std::abs(best - c) && r < best))
            best = r;
    }
    stats.candidate_length += c;
    stats.reference_length += best;
}

template <class Token>
double bleu(const std::vector<Token>& candidate, const std::vector<std::vector<Token>>& references,
            std::size_t max_n = 4) {
    if (max_n < 1) throw DomainError("bleu: max_n must be at least 1");
    BleuStats stats(max_n);
    add_sentence(stats, candidate, references);
    return stats.score();
}

template <class Token>
double corpus_bleu(const std::vector<std::vector<Token>>& candidates,
                   const std::vector<std::vector<std::vector<Token>>>& references,
                   std::size_t max_n = 4) {
    if (max_n < 1) throw DomainError("bleu: max_n must be at least 1");
    if (candidates.size() != references.size())
        throw DimensionError("corpus_bleu: one reference set per candidate required");
    BleuStats stats(max_n);
    for (std::size_t i = 0; i < candidates.size(); ++i) add_sentence(stats, candidates[i], references[i]);
    return stats.score();
}

// ---------------------------------------------------------------------------
// Retrieval

/// scores(q, c): higher is better. correct[q]: candidate columns that count as hits.
struct ScoreMatrix {
    Tensor scores;
    std::vector<std::vector<std::size_t>> correct;

    std::size_t queries() const { return scores.dim(0); }
    std::size_t candidates() const { return scores.dim(1); }
};

struct RetrievalReport {
    std::vector<std::size_t> ranks;            // 1-based rank of the best correct candidate
    std::map<std::size_t, double> recall_at;   // K -> fraction of queries with rank <= K
    double median_rank = 0.0;
};

/// Ranks candidates by descending score (ties: lower column first).
inline RetrievalReport retrieval_metrics(const ScoreMatrix& s, const std::vector<std::size_t>& ks) {
    require_rank(s.scores, 2, "retrieval_metrics");
    const std::size_t nq = s.queries(), nc = s.candidates();
    if (s.correct.size() != nq) throw DimensionError("retrieval_metrics: ground truth per query required");
    RetrievalReport r;
    for (std::size_t q = 0; q < nq; ++q) {
        if (s.correct[q].empty())
            throw DomainError("query " + std::to_string(q) + " has no correct candidate");
        std::size_t best = nc + 1;
        for (std::size_t target : s.correct[q]) {
            if (target >= nc) throw DomainError("correct candidate index out of range");
            const double v = s.scores(q, target);
            std::size_t rank = 1;
            for (std::size_t c = 0; c < nc; ++c) {
                const double w = s.scores(q, c);
                if (w > v || (w == v && c < target)) ++rank;
            }
            best = std::min(best, rank);
        }
        r.ranks.push_back(best);
    }
    for (std::size_t k : ks) {
        std::size_t hits = 0;
        for (std::size_t rank : r.ranks) hits += rank <= k;
        r.recall_at[k] = static_cast<double>(hits) / static_cast<double>(nq);
    }
    std::vector<std::size_t> sorted = r.ranks;
    std::sort(sorted.begin(), sorted.end());
    const std::size_t n = sorted.size();
    r.median_rank = n % 2 ? static_cast<double>(sorted[n / 2])
                          : 0.5 * static_cast<double>(sorted[n / 2 - 1] + sorted[n / 2]);
    return r;
}

/// scores(i, j) = log P(caption_j | image_i), unnormalized by length.
inline ScoreMatrix score_pairs(const Model& m, const std::vector<Tensor>& images,
                               const std::vector<std::vector<std::size_t>>& captions) {
    if (images.empty() || captions.empty()) throw DomainError("score_pairs: empty input");
    ScoreMatrix s{Tensor({images.size(), captions.size()}), {}};
    for (std::size_t i = 0; i < images.size(); ++i) {
        const Tensor feat = extract(m, images[i]).out;
        for (std::size_t j = 0; j < captions.size(); ++j)
            s.scores(i, j) = caption_log_likelihood(m, feat, captions[j]);
    }
    return s;
}

// ---------------------------------------------------------------------------
// Fusion and clip protocol

/// Elementwise w_a p_a + w_b p_b over matching lists of distributions.
inline std::vector<Tensor> fuse_streams(const std::vector<Tensor>& a, const std::vector<Tensor>& b,
                                        double w_a, double w_b) {
    if (a.size() != b.size()) throw DimensionError("fuse_streams: stream lengths differ");
    if (w_a < 0.0 || w_b < 0.0 || std::abs(w_a + w_b - 1.0) > 1e-12)
        throw DomainError("fuse_streams: weights must be non-negative and sum to 1");
    std::vector<Tensor> out;
    out.reserve(a.size());
    for (std::size_t i = 0; i < a.size(); ++i) {
        require_same_shape(a[i], b[i], "fuse_streams");
        Tensor f(a[i].shape());
        for (std::size_t k = 0; k < f.size(); ++k) f[k] = w_a * a[i][k] + w_b * b[i][k];
        out.push_back(std::move(f));
    }
    return out;
}

struct Clip {
    std::size_t start;
    std::size_t length;
};

/// Windows of `clip_len` frames every `stride` frames; a short video is one truncated clip.
inline std::vector<Clip> extract_clips(std::size_t video_len, std::size_t clip_len, std::size_t stride) {
    if (video_len == 0 || clip_len == 0 || stride == 0)
        throw DomainError("extract_clips: lengths and stride must be positive");
    if (video_len < clip_len) return {{0, video_len}};
    std::vector<Clip> clips;
    for (std::size_t s = 0; s + clip_len <= video_len; s += stride) clips.push_back({s, clip_len});
    return clips;
}

/// Mean over clips of the late-fused clip distributions.
inline Tensor clip_protocol_eval(const Model& m, const std::vector<Tensor>& video,
                                 std::size_t clip_len = 16, std::size_t stride = 8) {
    const auto clips = extract_clips(video.size(), clip_len, stride);
    Tensor avg;
    for (const Clip& c : clips) {
        std::vector<Tensor> frames(video.begin() + static_cast<std::ptrdiff_t>(c.start),
                                   video.begin() + static_cast<std::ptrdiff_t>(c.start + c.length));
        Tensor p = classify_sequence(m, frames);
        if (avg.empty())
            avg = std::move(p);
        else
            add_inplace(avg.values(), p.values());
    }
    for (double& v : avg.values()) v /= static_cast<double>(clips.size());
    return avg;
}

/// "name value" metric record, one per line.
inline void write_metric(std::ostream& os, const std::string& name, double value) {
    os << name << ' ' << std::setprecision(10) << value << '\n';
}

}  // namespace lrcn
