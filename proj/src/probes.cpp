#include "stegoplane/probes.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <numeric>

#include "stegoplane/parallel.hpp"
#include "stegoplane/rng.hpp"

namespace stegoplane {

namespace {

constexpr char kActivationMagic[8] = {'S', 'T', 'E', 'G', 'A', 'C', 'T', '1'};
constexpr float kNoiseScale = 0.2f;
constexpr int kTargetPcaDims = 128;
constexpr int kFeaturePcaCap = 256;
constexpr int kProbeSeeds = 3;

void write_u32(std::ostream & out, std::uint32_t v) {
    unsigned char b[4] = {
        static_cast<unsigned char>(v & 0xFF),
        static_cast<unsigned char>((v >> 8) & 0xFF),
        static_cast<unsigned char>((v >> 16) & 0xFF),
        static_cast<unsigned char>((v >> 24) & 0xFF),
    };
    out.write(reinterpret_cast<const char *>(b), 4);
}

std::uint32_t read_u32(std::istream & in) {
    unsigned char b[4];
    in.read(reinterpret_cast<char *>(b), 4);
    require(bool(in), Errc::dimension_mismatch, "activation file truncated");
    return static_cast<std::uint32_t>(b[0]) | (static_cast<std::uint32_t>(b[1]) << 8) |
           (static_cast<std::uint32_t>(b[2]) << 16) | (static_cast<std::uint32_t>(b[3]) << 24);
}

std::vector<std::int32_t> shuffled_indices(std::int32_t count, std::uint64_t seed) {
    std::vector<std::int32_t> order(static_cast<std::size_t>(count));
    std::iota(order.begin(), order.end(), 0);
    SplitMix64 rng(seed);
    for (std::int32_t i = count - 1; i > 0; --i) {
        const auto j = static_cast<std::int32_t>(rng.next_below(static_cast<std::uint64_t>(i) + 1));
        std::swap(order[static_cast<std::size_t>(i)], order[static_cast<std::size_t>(j)]);
    }
    return order;
}

} // namespace

ActivationBatch synth_activations(const EmbeddingMatrix & embeddings, std::span<const Secret> secrets,
                                  PlantSpec plant, std::int32_t layers, std::int32_t hidden_dim,
                                  std::uint64_t seed) {
    require(!secrets.empty(), Errc::invalid_argument, "need at least one secret");
    require(layers >= 1 && hidden_dim >= 2, Errc::invalid_argument, "bad batch shape");
    require(plant.bits_strength >= 0.f && plant.embedding_strength >= 0.f, Errc::invalid_argument,
            "plant strengths must be nonnegative");

    ActivationBatch batch;
    batch.n_samples = static_cast<std::int32_t>(secrets.size());
    batch.n_layers = layers;
    batch.n_positions = kSecretBits;
    batch.hidden_dim = hidden_dim;
    batch.secrets.assign(secrets.begin(), secrets.end());
    batch.values.resize(static_cast<std::size_t>(batch.n_samples) * static_cast<std::size_t>(layers) *
                        kSecretBits * static_cast<std::size_t>(hidden_dim));

    // independent random bit labels; only a bits plant writes them into values
    SplitMix64 label_rng(splitmix64_mix(seed + 0x1abe1));
    batch.bit_labels.resize(static_cast<std::size_t>(batch.n_samples));
    for (auto & bits : batch.bit_labels) {
        for (auto & b : bits) b = static_cast<std::uint8_t>(label_rng.next_u64() & 1u);
    }

    // fixed per-layer mixing maps, per-position bit directions, secret map
    const float map_scale = 1.f / std::sqrt(static_cast<float>(hidden_dim));
    std::vector<ml::MatF> layer_maps;
    SplitMix64 structure_rng(splitmix64_mix(seed + 0x57a7e));
    layer_maps.reserve(static_cast<std::size_t>(layers));
    for (std::int32_t l = 0; l < layers; ++l) {
        ml::MatF map(hidden_dim, hidden_dim);
        for (Eigen::Index c = 0; c < map.cols(); ++c) {
            for (Eigen::Index r = 0; r < map.rows(); ++r) {
                map(r, c) = static_cast<float>(structure_rng.next_normal()) * map_scale;
            }
        }
        layer_maps.push_back(std::move(map));
    }
    ml::MatF bit_directions(hidden_dim, kSecretBits);
    for (Eigen::Index c = 0; c < bit_directions.cols(); ++c) {
        for (Eigen::Index r = 0; r < bit_directions.rows(); ++r) {
            bit_directions(r, c) = static_cast<float>(structure_rng.next_normal());
        }
        bit_directions.col(c).normalize();
    }
    const int concat_dim = kSecretLetters * static_cast<int>(embeddings.dim());
    ml::MatF secret_map(hidden_dim, concat_dim);
    const float secret_scale = 1.f / std::sqrt(static_cast<float>(concat_dim));
    for (Eigen::Index c = 0; c < secret_map.cols(); ++c) {
        for (Eigen::Index r = 0; r < secret_map.rows(); ++r) {
            secret_map(r, c) = static_cast<float>(structure_rng.next_normal()) * secret_scale;
        }
    }

    SplitMix64 noise_rng(splitmix64_mix(seed + 0x6e015e));
    ml::VecF raw(hidden_dim);
    const std::int32_t final_layer = layers - 1;
    for (std::int32_t s = 0; s < batch.n_samples; ++s) {
        ml::VecF secret_signal;
        if (plant.embedding_strength > 0.f) {
            ml::VecF concat(concat_dim);
            for (int j = 0; j < kSecretLetters; ++j) {
                const auto row = embeddings.embedding(
                    embeddings.letter_token(batch.secrets[static_cast<std::size_t>(s)].letter(j)));
                concat.segment(j * static_cast<int>(embeddings.dim()),
                               static_cast<int>(embeddings.dim())) = row.cast<float>();
            }
            secret_signal = plant.embedding_strength * (secret_map * concat);
        }
        for (std::int32_t l = 0; l < layers; ++l) {
            for (std::int32_t p = 0; p < kSecretBits; ++p) {
                for (Eigen::Index i = 0; i < raw.size(); ++i) {
                    raw[i] = static_cast<float>(noise_rng.next_normal());
                }
                Eigen::Map<ml::VecF> out(batch.at(s, l, p), hidden_dim);
                out.noalias() = kNoiseScale * (layer_maps[static_cast<std::size_t>(l)] * raw);
                if (l == final_layer) {
                    if (plant.bits_strength > 0.f) {
                        const float sign =
                            batch.bit_labels[static_cast<std::size_t>(s)][static_cast<std::size_t>(p)] ? 1.f : -1.f;
                        out += plant.bits_strength * sign * bit_directions.col(p);
                    }
                    if (plant.embedding_strength > 0.f) {
                        out += secret_signal;
                    }
                }
            }
        }
    }
    return batch;
}

void write_activations(const ActivationBatch & batch, const std::filesystem::path & path) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    require(bool(out), Errc::io_error, "cannot open " + path.string() + " for writing");
    out.write(kActivationMagic, 8);
    write_u32(out, static_cast<std::uint32_t>(batch.n_samples));
    write_u32(out, static_cast<std::uint32_t>(batch.n_layers));
    write_u32(out, static_cast<std::uint32_t>(batch.n_positions));
    write_u32(out, static_cast<std::uint32_t>(batch.hidden_dim));
    for (std::int32_t s = 0; s < batch.n_samples; ++s) {
        out.write(reinterpret_cast<const char *>(batch.bit_labels[static_cast<std::size_t>(s)].data()),
                  kSecretBits);
        const std::string letters = batch.secrets[static_cast<std::size_t>(s)].str();
        out.write(letters.data(), kSecretLetters);
    }
    for (const float v : batch.values) {
        std::uint32_t bits;
        std::memcpy(&bits, &v, 4);
        write_u32(out, bits);
    }
    require(bool(out), Errc::io_error, "short write to " + path.string());
}

ActivationBatch ingest_activations(const std::filesystem::path & path) {
    std::ifstream in(path, std::ios::binary);
    require(bool(in), Errc::io_error, "cannot open " + path.string());
    char magic[8];
    in.read(magic, 8);
    require(bool(in) && std::memcmp(magic, kActivationMagic, 8) == 0, Errc::bad_magic,
            "not an activation file: " + path.string());

    ActivationBatch batch;
    batch.n_samples = static_cast<std::int32_t>(read_u32(in));
    batch.n_layers = static_cast<std::int32_t>(read_u32(in));
    batch.n_positions = static_cast<std::int32_t>(read_u32(in));
    batch.hidden_dim = static_cast<std::int32_t>(read_u32(in));
    require(batch.n_samples >= 1 && batch.n_layers >= 1 && batch.hidden_dim >= 2,
            Errc::dimension_mismatch, "activation header invalid");
    require(batch.n_positions == kSecretBits, Errc::dimension_mismatch,
            "activation batches must carry exactly 32 positions");

    batch.bit_labels.resize(static_cast<std::size_t>(batch.n_samples));
    batch.secrets.reserve(static_cast<std::size_t>(batch.n_samples));
    for (std::int32_t s = 0; s < batch.n_samples; ++s) {
        auto & bits = batch.bit_labels[static_cast<std::size_t>(s)];
        in.read(reinterpret_cast<char *>(bits.data()), kSecretBits);
        char letters[kSecretLetters];
        in.read(letters, kSecretLetters);
        require(bool(in), Errc::dimension_mismatch, "activation labels truncated");
        for (const auto b : bits) {
            require(b == 0 || b == 1, Errc::dimension_mismatch, "bit labels must be 0/1 bytes");
        }
        const auto secret = Secret::parse(std::string_view(letters, kSecretLetters));
        require(secret.has_value(), Errc::dimension_mismatch, "secret letters must be a..z");
        batch.secrets.push_back(*secret);
    }

    const std::size_t count = static_cast<std::size_t>(batch.n_samples) *
                              static_cast<std::size_t>(batch.n_layers) * kSecretBits *
                              static_cast<std::size_t>(batch.hidden_dim);
    batch.values.resize(count);
    for (std::size_t i = 0; i < count; ++i) {
        const std::uint32_t bits = read_u32(in);
        float v;
        std::memcpy(&v, &bits, 4);
        require(std::isfinite(v), Errc::non_finite, "activation values must be finite");
        batch.values[i] = v;
    }
    require(in.peek() == std::char_traits<char>::eof(), Errc::dimension_mismatch,
            "activation file has trailing bytes");
    return batch;
}

namespace {

struct SampleSplit {
    std::vector<std::int32_t> train, test;
};

SampleSplit split_samples(std::int32_t count, std::uint64_t seed) {
    const auto order = shuffled_indices(count, seed);
    const std::int32_t n_train = static_cast<std::int32_t>(std::llround(0.8 * count));
    SampleSplit split;
    split.train.assign(order.begin(), order.begin() + n_train);
    split.test.assign(order.begin() + n_train, order.end());
    return split;
}

} // namespace

std::array<double, kSecretBits> bit_probes(const ActivationBatch & batch, std::int32_t layer,
                                           std::uint64_t split_seed) {
    require(layer >= 0 && layer < batch.n_layers, Errc::index_out_of_range, "layer out of range");
    require(batch.n_samples >= 100, Errc::invalid_argument, "need at least 100 samples");

    const SampleSplit split = split_samples(batch.n_samples, split_seed);
    std::array<double, kSecretBits> accuracies{};

    parallel_for(kSecretBits, [&](std::int64_t p) {
        const std::int32_t position = static_cast<std::int32_t>(p);
        ml::MatF train_x(static_cast<Eigen::Index>(split.train.size()), batch.hidden_dim);
        ml::MatF test_x(static_cast<Eigen::Index>(split.test.size()), batch.hidden_dim);
        std::vector<std::uint8_t> train_y(split.train.size()), test_y(split.test.size());
        for (std::size_t i = 0; i < split.train.size(); ++i) {
            train_x.row(static_cast<Eigen::Index>(i)) =
                Eigen::Map<const ml::VecF>(batch.at(split.train[i], layer, position), batch.hidden_dim);
            train_y[i] = batch.bit_labels[static_cast<std::size_t>(split.train[i])][static_cast<std::size_t>(position)];
        }
        for (std::size_t i = 0; i < split.test.size(); ++i) {
            test_x.row(static_cast<Eigen::Index>(i)) =
                Eigen::Map<const ml::VecF>(batch.at(split.test[i], layer, position), batch.hidden_dim);
            test_y[i] = batch.bit_labels[static_cast<std::size_t>(split.test[i])][static_cast<std::size_t>(position)];
        }
        const ml::Standardizer scaler = ml::Standardizer::fit(train_x);
        ml::LogisticRegression probe; // tolerance 1e-3, up to 1000 iterations
        probe.fit(scaler.transform(train_x), train_y);
        accuracies[static_cast<std::size_t>(p)] =
            ml::accuracy(probe.predict(scaler.transform(test_x)), test_y);
    });
    return accuracies;
}

double embedding_probe(const ActivationBatch & batch, std::int32_t layer,
                       const EmbeddingMatrix & embeddings, std::uint64_t split_seed) {
    require(layer >= 0 && layer < batch.n_layers, Errc::index_out_of_range, "layer out of range");
    require(batch.n_samples >= 100, Errc::invalid_argument, "need at least 100 samples");

    const int concat_dim = kSecretLetters * static_cast<int>(embeddings.dim());
    const Eigen::Index feature_dim =
        static_cast<Eigen::Index>(batch.n_positions) * batch.hidden_dim;

    const SampleSplit split = split_samples(batch.n_samples, split_seed);
    const auto gather = [&](const std::vector<std::int32_t> & rows, ml::MatD & X, ml::MatD & Y) {
        X.resize(static_cast<Eigen::Index>(rows.size()), feature_dim);
        Y.resize(static_cast<Eigen::Index>(rows.size()), concat_dim);
        for (std::size_t i = 0; i < rows.size(); ++i) {
            X.row(static_cast<Eigen::Index>(i)) =
                Eigen::Map<const ml::VecF>(batch.at(rows[i], layer, 0), feature_dim).cast<double>();
            const Secret & secret = batch.secrets[static_cast<std::size_t>(rows[i])];
            for (int j = 0; j < kSecretLetters; ++j) {
                Y.row(static_cast<Eigen::Index>(i))
                    .segment(j * static_cast<int>(embeddings.dim()), static_cast<int>(embeddings.dim())) =
                    embeddings.embedding(embeddings.letter_token(secret.letter(j)));
            }
        }
    };
    ml::MatD train_x, train_y, test_x, test_y;
    gather(split.train, train_x, train_y);
    gather(split.test, test_x, test_y);

    const int target_dims = std::min<int>(kTargetPcaDims, std::min<int>(concat_dim, static_cast<int>(train_y.rows())));
    const ml::PcaModel target_pca = ml::pca_fit(train_y, target_dims);
    const int feature_dims = std::min<int>(kFeaturePcaCap, std::min<int>(static_cast<int>(feature_dim),
                                                                         static_cast<int>(train_x.rows())));
    const ml::PcaModel feature_pca = ml::pca_fit(train_x, feature_dims);

    const ml::RidgeModel ridge =
        ml::ridge_fit(feature_pca.transform(train_x), target_pca.transform(train_y), 1.0);
    const ml::MatD predicted = ridge.predict(feature_pca.transform(test_x));
    return ml::mean_row_cosine(predicted, target_pca.transform(test_y));
}

namespace {

LayerMetric summarize(const std::vector<double> & per_seed) {
    LayerMetric m;
    m.per_seed = per_seed;
    m.mean = ml::mean_of(per_seed);
    m.stddev = ml::stddev_of(per_seed);
    const double half = 1.96 * m.stddev / std::sqrt(static_cast<double>(per_seed.size()));
    m.ci_lo = m.mean - half;
    m.ci_hi = m.mean + half;
    return m;
}

} // namespace

ProbeReport detection_report(const ActivationBatch & suspect, const ActivationBatch & reference,
                             const EmbeddingMatrix & embeddings, std::uint64_t seed) {
    require(suspect.n_layers == reference.n_layers && suspect.hidden_dim == reference.hidden_dim &&
                suspect.n_samples == reference.n_samples &&
                suspect.n_positions == reference.n_positions,
            Errc::dimension_mismatch, "suspect and reference batches must share a shape");

    ProbeReport report;
    for (std::int32_t layer = 0; layer < suspect.n_layers; ++layer) {
        std::vector<double> s_bit, r_bit, s_cos, r_cos;
        for (int j = 0; j < kProbeSeeds; ++j) {
            const std::uint64_t split_seed = splitmix64_mix(seed + static_cast<std::uint64_t>(j));
            const auto s_acc = bit_probes(suspect, layer, split_seed);
            const auto r_acc = bit_probes(reference, layer, split_seed);
            s_bit.push_back(std::accumulate(s_acc.begin(), s_acc.end(), 0.0) / kSecretBits);
            r_bit.push_back(std::accumulate(r_acc.begin(), r_acc.end(), 0.0) / kSecretBits);
            s_cos.push_back(embedding_probe(suspect, layer, embeddings, split_seed));
            r_cos.push_back(embedding_probe(reference, layer, embeddings, split_seed));
        }
        report.suspect_bit.push_back(summarize(s_bit));
        report.reference_bit.push_back(summarize(r_bit));
        report.suspect_cosine.push_back(summarize(s_cos));
        report.reference_cosine.push_back(summarize(r_cos));
        const auto & sb = report.suspect_bit.back();
        const auto & rb = report.reference_bit.back();
        const auto & sc = report.suspect_cosine.back();
        const auto & rc = report.reference_cosine.back();
        report.bit_detected.push_back(sb.ci_lo > rb.ci_hi ? 1 : 0);
        report.cosine_detected.push_back(sc.ci_lo > rc.ci_hi ? 1 : 0);
        report.bit_gap.push_back(sb.mean - rb.mean);
        report.cosine_gap.push_back(sc.mean - rc.mean);
    }
    return report;
}

} // namespace stegoplane
