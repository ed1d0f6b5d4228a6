#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

#include "stegoplane/codec.hpp"
#include "stegoplane/ml.hpp"

namespace stegoplane {

// Linear-probe detection over per-position activation tensors. Batches come
// from the synthetic generator below or from externally captured files.

// Additive linear plants in the final layer. bits_strength pushes each
// position along a fixed random unit direction signed by that position's
// bit label; embedding_strength adds a fixed linear image of the secret's
// concatenated letter embeddings to every position.
struct PlantSpec {
    float bits_strength = 0.f;
    float embedding_strength = 0.f;

    static PlantSpec none() { return {}; }
    static PlantSpec bits(float strength) { return {strength, 0.f}; }
    static PlantSpec embedding(float strength) { return {0.f, strength}; }
};

struct ActivationBatch {
    std::int32_t n_samples = 0;
    std::int32_t n_layers = 0;
    std::int32_t n_positions = kSecretBits; // protocol fixes 32
    std::int32_t hidden_dim = 0;
    std::vector<float> values; // [sample][layer][position][hidden]
    std::vector<std::array<std::uint8_t, kSecretBits>> bit_labels;
    std::vector<Secret> secrets;

    float * at(std::int32_t sample, std::int32_t layer, std::int32_t position) {
        return values.data() + offset(sample, layer, position);
    }
    const float * at(std::int32_t sample, std::int32_t layer, std::int32_t position) const {
        return values.data() + offset(sample, layer, position);
    }

private:
    std::size_t offset(std::int32_t sample, std::int32_t layer, std::int32_t position) const {
        return ((static_cast<std::size_t>(sample) * static_cast<std::size_t>(n_layers) +
                 static_cast<std::size_t>(layer)) *
                    static_cast<std::size_t>(n_positions) +
                static_cast<std::size_t>(position)) *
               static_cast<std::size_t>(hidden_dim);
    }
};

// Base signal is seeded Gaussian noise pushed through a fixed random linear
// map per layer (output scale ~0.2 per coordinate); plants touch only the
// final layer. Bit labels are drawn fresh from the batch seed so they carry
// no relation to the secret unless bits_strength plants them.
ActivationBatch synth_activations(const EmbeddingMatrix & embeddings, std::span<const Secret> secrets,
                                  PlantSpec plant, std::int32_t layers, std::int32_t hidden_dim,
                                  std::uint64_t seed);

void write_activations(const ActivationBatch & batch, const std::filesystem::path & path);
ActivationBatch ingest_activations(const std::filesystem::path & path);

// One logistic probe per bit position on the given layer's activations;
// 80/20 split, train-statistics standardization, held-out accuracies.
std::array<double, kSecretBits> bit_probes(const ActivationBatch & batch, std::int32_t layer,
                                           std::uint64_t split_seed);

// Ridge regression from PCA-reduced concatenated hidden states to the PCA-128
// image of the secret's concatenated letter embeddings; mean held-out cosine.
double embedding_probe(const ActivationBatch & batch, std::int32_t layer,
                       const EmbeddingMatrix & embeddings, std::uint64_t split_seed);

struct LayerMetric {
    double mean = 0.0;
    double stddev = 0.0;
    double ci_lo = 0.0;
    double ci_hi = 0.0;
    std::vector<double> per_seed;
};

struct ProbeReport {
    std::vector<LayerMetric> suspect_bit, reference_bit;
    std::vector<LayerMetric> suspect_cosine, reference_cosine;
    std::vector<std::uint8_t> bit_detected;    // per layer
    std::vector<std::uint8_t> cosine_detected; // per layer
    std::vector<double> bit_gap, cosine_gap;   // suspect mean - reference mean
};

// Three split seeds per metric and layer; a layer is flagged when the
// suspect's lower 95% normal-approximation CI clears the reference's upper.
ProbeReport detection_report(const ActivationBatch & suspect, const ActivationBatch & reference,
                             const EmbeddingMatrix & embeddings, std::uint64_t seed);

} // namespace stegoplane
