#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <vector>

#include "stegoplane/codec.hpp"
#include "stegoplane/embedspace.hpp"

namespace stegoplane {

// Next-token distribution over the vocabulary. Construction via validated()
// enforces nonnegativity and normalization to within 1e-9.
struct TokenDistribution {
    Eigen::VectorXd probs;

    static TokenDistribution validated(Eigen::VectorXd probs);
    std::uint32_t vocab_size() const noexcept { return static_cast<std::uint32_t>(probs.size()); }
    double entropy_nats() const;
    std::uint32_t argmax() const; // lowest index wins ties
};

// Deterministic distribution source coupled to the embedding geometry:
// probs ∝ exp(E h / T), state h <- normalize(γ h + (1-γ) e_t) after each
// emitted token. Single-owner mutable state; do not share across threads.
class ToyLM {
public:
    ToyLM(const EmbeddingMatrix & embeddings, std::uint64_t prompt_seed,
          double temperature = 1.0, double mixing = 0.8);

    TokenDistribution next() const;
    void advance(std::uint32_t token);

    std::uint64_t prompt_seed() const noexcept { return prompt_seed_; }
    double temperature() const noexcept { return temperature_; }
    double mixing() const noexcept { return mixing_; }
    const Eigen::VectorXd & state() const noexcept { return state_; }

private:
    const EmbeddingMatrix * embeddings_;
    std::uint64_t prompt_seed_;
    double temperature_;
    double mixing_;
    Eigen::VectorXd state_;
};

// Zeroes the mass outside the target bucket and renormalizes; falls back to
// uniform over the bucket if the surviving mass underflows.
TokenDistribution constrain(const TokenDistribution & dist, const BucketAssignment & buckets, int bit);

struct SampleMode {
    enum class Kind { greedy, sample };
    Kind kind = Kind::greedy;
    std::uint64_t seed = 0;

    static SampleMode greedy() { return {Kind::greedy, 0}; }
    static SampleMode sample(std::uint64_t seed) { return {Kind::sample, seed}; }
};

struct Transcript {
    std::uint64_t prompt_seed = 0;
    Secret secret;
    EncoderKind encoder = EncoderKind::ascii;
    bool xor_masked = false;
    BitVec tx_bits;
    std::vector<std::uint32_t> tokens;
    std::vector<std::uint8_t> compliance; // bucket(tokens[i]) == tx_bits[i]
};

// Generates one token per payload bit. Each position honors the required
// bucket with probability `compliance_rate` and is forced into the opposite
// bucket otherwise, so the observed per-position compliance equals the coin
// and the exact-match rate calibrates to compliance_rate^L_tx.
Transcript transmit(ToyLM lm, const PayloadPlan & plan, const BucketAssignment & buckets,
                    SampleMode mode, double compliance_rate);

struct Decoder {
    EncoderKind encoder = EncoderKind::ascii;
    const LetterCodebook * codebook = nullptr;    // required for embedding decode
    std::optional<Keystream> keystream;           // unmask before decoding when present
};

// bucket labels -> bits (majority vote across repeats, ties toward 0),
// optional unmask, then decode. NO_MATCH comes back as nullopt.
std::optional<Secret> receive(const Transcript & transcript, const BucketAssignment & buckets,
                              const Decoder & decoder);

// Fraction of transcripts whose every position carried the right bucket.
double exact_match_rate(std::span<const Transcript> transcripts, std::span<const PayloadPlan> plans);

void write_transcripts(std::span<const Transcript> transcripts, const std::filesystem::path & path);
std::vector<Transcript> read_transcripts(const std::filesystem::path & path);

} // namespace stegoplane
