#pragma once

#include <cstdint>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "stegoplane/channel.hpp"
#include "stegoplane/ml.hpp"

namespace stegoplane {

// Keyless payload-recoverability harness. Classifier inputs derive only from
// the observed tokens and the public embedding table; bucket seeds,
// codebooks, and keystreams never enter the feature path.

enum class FeatureKind { token_id_bits, embedding_pca };

const char * feature_kind_name(FeatureKind kind);

struct FeatureSet {
    FeatureKind kind = FeatureKind::token_id_bits;
    ml::MatF matrix; // one row per (transcript, position) sample
    std::optional<ml::PcaModel> pca;
};

struct BucketDataset {
    FeatureSet features;
    std::vector<std::uint8_t> labels;     // transmitted bit per sample
    std::vector<std::int32_t> group;      // transcript index per sample
    std::int32_t transcript_count = 0;
    std::int32_t positions_per_transcript = 0;
};

// One sample per (transcript, position). token_id_bits: 16-bit binary
// expansion of the token id (LSB first) plus the id scaled to [0,1].
// embedding_pca: 50-dim projection of the emitted token's embedding, PCA fit
// on the full vocabulary table.
BucketDataset build_bucket_dataset(std::span<const Transcript> transcripts,
                                   const EmbeddingMatrix & embeddings, FeatureKind kind);

struct FamilyStat {
    std::string family;
    double mean_accuracy = 0.0;
    double std_accuracy = 0.0;
    std::vector<double> per_seed;
};

struct BucketStageResult {
    std::vector<FamilyStat> families; // {logreg, mlp, gbdt} x {ids, emb}
    std::string best_family;
    double r_bucket = 0.0;
    std::int32_t n_train = 0; // transcripts, first split
    std::int32_t n_test = 0;
    // held-out predictions of the best family on the first split, one row of
    // L_tx hard bits per held-out transcript
    ml::MatF predicted_bits;
    std::vector<std::int32_t> predicted_transcripts;
};

// 80/20 split by transcript, averaged over 3 derived split seeds.
BucketStageResult train_bucket_classifiers(const BucketDataset & ids, const BucketDataset & emb,
                                           std::uint64_t split_seed);

struct SecretStageResult {
    std::vector<FamilyStat> letter_accuracy; // mean per-letter accuracy
    std::vector<FamilyStat> exact_accuracy;  // whole-secret accuracy
    double r_secret = 0.0;                   // max exact accuracy
    double best_letter_accuracy = 0.0;
    std::int32_t n_train = 0;
    std::int32_t n_test = 0;
};

// bits: one row of L_tx predicted (or true) bits per transcript. Four 26-way
// heads per family; held-out metrics averaged over 3 derived split seeds.
SecretStageResult train_secret_classifiers(const ml::MatF & bits, std::span<const Secret> secrets,
                                           std::uint64_t split_seed);

struct RecoverabilityReport {
    double r_bucket = 0.0;
    double r_secret = 0.0;
    std::uint64_t split_seed = 0;
    std::int32_t n_train = 0;
    std::int32_t n_test = 0;
    BucketStageResult bucket_stage;
    SecretStageResult secret_stage;
};

// Full pipeline: bucket classifiers first, then the best family's held-out
// bit predictions feed the secret classifiers.
RecoverabilityReport recoverability_report(std::span<const Transcript> transcripts,
                                           const EmbeddingMatrix & embeddings,
                                           std::uint64_t split_seed);

} // namespace stegoplane
