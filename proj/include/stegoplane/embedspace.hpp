#pragma once

#include <Eigen/Dense>

#include <array>
#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

#include "stegoplane/errors.hpp"

namespace stegoplane {

inline constexpr int kLetterCount = 26;

using RowMatrixXd = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

// Frozen token-embedding table: one unit-norm row per token, plus the 26
// token indices that carry the letters a..z. Immutable after construction;
// every scheme in this library treats it as a shared read-only constant.
class EmbeddingMatrix {
public:
    EmbeddingMatrix(RowMatrixXd rows, std::array<std::uint32_t, kLetterCount> letter_tokens);

    std::uint32_t vocab_size() const noexcept { return static_cast<std::uint32_t>(rows_.rows()); }
    std::uint32_t dim() const noexcept { return static_cast<std::uint32_t>(rows_.cols()); }

    const RowMatrixXd & rows() const noexcept { return rows_; }

    Eigen::Ref<const Eigen::RowVectorXd> embedding(std::uint32_t token) const {
        require(token < vocab_size(), Errc::index_out_of_range,
                "token index " + std::to_string(token) + " out of range");
        return rows_.row(token);
    }

    const std::array<std::uint32_t, kLetterCount> & letter_token_ids() const noexcept {
        return letter_tokens_;
    }

    // letter in 'a'..'z'
    std::uint32_t letter_token(char letter) const;

    void save(const std::filesystem::path & path) const;
    static EmbeddingMatrix load(const std::filesystem::path & path);

private:
    RowMatrixXd rows_;
    std::array<std::uint32_t, kLetterCount> letter_tokens_;
};

// Desk-scale stand-in for a real model's embedding table: rows drawn i.i.d.
// standard normal from SplitMix64(seed) in row-major order, each row scaled
// to unit norm. Letters occupy token ids 0..25.
EmbeddingMatrix generate_synthetic_embeddings(std::uint32_t vocab, std::uint32_t dim, std::uint64_t seed);

enum class ThresholdRule {
    median_vocab,   // median projection score over the full vocabulary
    median_letters, // median over the 26 letter rows
    zero,
};

// Seed-derived separating plane: unit normal plus a threshold on the
// projection score. The seed -> normal map is a pure function.
struct Hyperplane {
    std::uint64_t seed = 0;
    Eigen::VectorXd normal;
    double threshold = 0.0;
};

Hyperplane hyperplane_from_seed(const EmbeddingMatrix & embeddings, std::uint64_t seed, ThresholdRule rule);

// Projection score e_t . normal (threshold not applied).
double project(const EmbeddingMatrix & embeddings, const Hyperplane & plane, std::uint32_t token);

struct BucketAssignment {
    enum class Source { hyperplane, parity };

    Source source = Source::parity;
    std::uint64_t hyperplane_seed = 0; // meaningful for Source::hyperplane only
    std::vector<std::uint8_t> buckets; // one {0,1} label per token
    std::array<std::uint32_t, 2> counts{0, 0};

    std::uint8_t of(std::uint32_t token) const {
        require(token < buckets.size(), Errc::index_out_of_range, "token index out of range");
        return buckets[token];
    }
    std::uint32_t vocab_size() const noexcept { return static_cast<std::uint32_t>(buckets.size()); }
};

// Bucket 1 iff the projection score strictly exceeds the threshold; scores
// equal to the threshold land in bucket 0.
BucketAssignment assign_buckets(const EmbeddingMatrix & embeddings, const Hyperplane & plane);

// bucket(t) = t mod 2
BucketAssignment parity_buckets(std::uint32_t vocab);

// Median with the even-count convention used throughout: arithmetic mean of
// the two middle order statistics after an ascending sort.
double median_of(std::vector<double> values);

} // namespace stegoplane
