#include "stegoplane/steganalysis.hpp"

#include <algorithm>
#include <numeric>

#include "stegoplane/parallel.hpp"
#include "stegoplane/rng.hpp"

namespace stegoplane {

namespace {

constexpr int kTokenIdBits = 16;
constexpr int kEmbeddingPcaDims = 50;
constexpr int kSplitSeeds = 3;

struct TranscriptSplit {
    std::vector<std::int32_t> train; // shuffled transcript indices
    std::vector<std::int32_t> test;
};

TranscriptSplit split_transcripts(std::int32_t count, std::uint64_t seed) {
    std::vector<std::int32_t> order(static_cast<std::size_t>(count));
    std::iota(order.begin(), order.end(), 0);
    SplitMix64 rng(seed);
    for (std::int32_t i = count - 1; i > 0; --i) {
        const auto j = static_cast<std::int32_t>(rng.next_below(static_cast<std::uint64_t>(i) + 1));
        std::swap(order[static_cast<std::size_t>(i)], order[static_cast<std::size_t>(j)]);
    }
    const std::int32_t n_train = static_cast<std::int32_t>(std::llround(0.8 * count));
    TranscriptSplit split;
    split.train.assign(order.begin(), order.begin() + n_train);
    split.test.assign(order.begin() + n_train, order.end());
    return split;
}

// Rows for the listed transcripts, keeping list order so a trailing slice of
// rows is a trailing slice of whole transcripts.
ml::MatF gather_rows(const ml::MatF & X, const std::vector<std::int32_t> & transcripts,
                     std::int32_t positions) {
    ml::MatF out(static_cast<Eigen::Index>(transcripts.size()) * positions, X.cols());
    Eigen::Index at = 0;
    for (const std::int32_t t : transcripts) {
        out.middleRows(at, positions) =
            X.middleRows(static_cast<Eigen::Index>(t) * positions, positions);
        at += positions;
    }
    return out;
}

std::vector<std::uint8_t> gather_labels(const std::vector<std::uint8_t> & labels,
                                        const std::vector<std::int32_t> & transcripts,
                                        std::int32_t positions) {
    std::vector<std::uint8_t> out;
    out.reserve(transcripts.size() * static_cast<std::size_t>(positions));
    for (const std::int32_t t : transcripts) {
        const std::size_t base = static_cast<std::size_t>(t) * static_cast<std::size_t>(positions);
        out.insert(out.end(), labels.begin() + static_cast<std::ptrdiff_t>(base),
                   labels.begin() + static_cast<std::ptrdiff_t>(base + static_cast<std::size_t>(positions)));
    }
    return out;
}

enum class BucketFamily { logreg, mlp, gbdt };

std::vector<std::uint8_t> fit_predict_bits(BucketFamily family, const ml::MatF & train_x,
                                           const std::vector<std::uint8_t> & train_y,
                                           const ml::MatF & test_x, std::uint64_t model_seed) {
    const ml::Standardizer scaler = ml::Standardizer::fit(train_x);
    const ml::MatF xs = scaler.transform(train_x);
    const ml::MatF ts = scaler.transform(test_x);
    switch (family) {
        case BucketFamily::logreg: {
            ml::LogisticRegression model;
            model.fit(xs, train_y);
            return model.predict(ts);
        }
        case BucketFamily::mlp: {
            ml::MlpConfig config;
            config.hidden = 256;
            config.seed = model_seed;
            ml::MlpBinary model(config);
            model.fit(xs, train_y);
            return model.predict(ts);
        }
        case BucketFamily::gbdt: {
            ml::GbdtBinary model; // depth 3, <= 200 rounds, learning rate 0.1
            model.fit(xs, train_y);
            return model.predict(ts);
        }
    }
    fail(Errc::invalid_argument, "unknown bucket family");
}

} // namespace

const char * feature_kind_name(FeatureKind kind) {
    return kind == FeatureKind::token_id_bits ? "token_id_bits" : "embedding_pca";
}

BucketDataset build_bucket_dataset(std::span<const Transcript> transcripts,
                                   const EmbeddingMatrix & embeddings, FeatureKind kind) {
    require(!transcripts.empty(), Errc::invalid_argument, "no transcripts");
    const std::int32_t positions = static_cast<std::int32_t>(transcripts.front().tokens.size());
    require(positions > 0, Errc::invalid_argument, "empty transcript");
    for (const Transcript & tr : transcripts) {
        require(static_cast<std::int32_t>(tr.tokens.size()) == positions, Errc::length_mismatch,
                "transcripts must share a payload length");
    }

    BucketDataset out;
    out.transcript_count = static_cast<std::int32_t>(transcripts.size());
    out.positions_per_transcript = positions;
    const Eigen::Index n_rows = static_cast<Eigen::Index>(transcripts.size()) * positions;
    out.labels.reserve(static_cast<std::size_t>(n_rows));
    out.group.reserve(static_cast<std::size_t>(n_rows));
    out.features.kind = kind;

    if (kind == FeatureKind::token_id_bits) {
        const float id_scale = 1.f / static_cast<float>(embeddings.vocab_size() - 1);
        out.features.matrix.resize(n_rows, kTokenIdBits + 1);
        Eigen::Index row = 0;
        for (std::size_t t = 0; t < transcripts.size(); ++t) {
            for (std::int32_t i = 0; i < positions; ++i, ++row) {
                const std::uint32_t token = transcripts[t].tokens[static_cast<std::size_t>(i)];
                for (int b = 0; b < kTokenIdBits; ++b) {
                    out.features.matrix(row, b) = static_cast<float>((token >> b) & 1u);
                }
                out.features.matrix(row, kTokenIdBits) = static_cast<float>(token) * id_scale;
                out.labels.push_back(transcripts[t].tx_bits[static_cast<std::size_t>(i)]);
                out.group.push_back(static_cast<std::int32_t>(t));
            }
        }
    } else {
        const int dims = std::min<int>(kEmbeddingPcaDims,
                                       std::min<int>(static_cast<int>(embeddings.dim()),
                                                     static_cast<int>(embeddings.vocab_size())));
        const ml::PcaModel pca = ml::pca_fit(embeddings.rows(), dims);
        const ml::MatD projected = pca.transform(embeddings.rows()); // V x dims
        out.features.matrix.resize(n_rows, dims);
        Eigen::Index row = 0;
        for (std::size_t t = 0; t < transcripts.size(); ++t) {
            for (std::int32_t i = 0; i < positions; ++i, ++row) {
                const std::uint32_t token = transcripts[t].tokens[static_cast<std::size_t>(i)];
                out.features.matrix.row(row) = projected.row(token).cast<float>();
                out.labels.push_back(transcripts[t].tx_bits[static_cast<std::size_t>(i)]);
                out.group.push_back(static_cast<std::int32_t>(t));
            }
        }
        out.features.pca = pca;
    }
    return out;
}

BucketStageResult train_bucket_classifiers(const BucketDataset & ids, const BucketDataset & emb,
                                           std::uint64_t split_seed) {
    require(ids.transcript_count == emb.transcript_count &&
                ids.positions_per_transcript == emb.positions_per_transcript,
            Errc::dimension_mismatch, "feature sets cover different transcripts");
    require(ids.labels.size() >= 100, Errc::invalid_argument, "need at least 100 samples");

    const std::int32_t n_transcripts = ids.transcript_count;
    const std::int32_t positions = ids.positions_per_transcript;

    struct Job {
        BucketFamily family;
        const BucketDataset * data;
        std::string name;
    };
    const std::vector<Job> jobs = {
        {BucketFamily::logreg, &ids, "logreg+token_id_bits"},
        {BucketFamily::logreg, &emb, "logreg+embedding_pca"},
        {BucketFamily::mlp, &ids, "mlp+token_id_bits"},
        {BucketFamily::mlp, &emb, "mlp+embedding_pca"},
        {BucketFamily::gbdt, &ids, "gbdt+token_id_bits"},
        {BucketFamily::gbdt, &emb, "gbdt+embedding_pca"},
    };

    std::vector<TranscriptSplit> splits;
    for (int s = 0; s < kSplitSeeds; ++s) {
        splits.push_back(split_transcripts(n_transcripts, splitmix64_mix(split_seed + static_cast<std::uint64_t>(s))));
    }

    std::vector<std::vector<double>> accs(jobs.size(), std::vector<double>(kSplitSeeds, 0.0));
    parallel_for(static_cast<std::int64_t>(jobs.size()) * kSplitSeeds, [&](std::int64_t idx) {
        const std::size_t j = static_cast<std::size_t>(idx) / kSplitSeeds;
        const int s = static_cast<int>(idx % kSplitSeeds);
        const Job & job = jobs[j];
        const TranscriptSplit & split = splits[static_cast<std::size_t>(s)];
        const ml::MatF train_x = gather_rows(job.data->features.matrix, split.train, positions);
        const ml::MatF test_x = gather_rows(job.data->features.matrix, split.test, positions);
        const auto train_y = gather_labels(job.data->labels, split.train, positions);
        const auto test_y = gather_labels(job.data->labels, split.test, positions);
        const auto predicted = fit_predict_bits(job.family, train_x, train_y, test_x,
                                                splitmix64_mix(split_seed + 977 + static_cast<std::uint64_t>(idx)));
        accs[j][static_cast<std::size_t>(s)] = ml::accuracy(predicted, test_y);
    });

    BucketStageResult out;
    out.n_train = static_cast<std::int32_t>(splits.front().train.size());
    out.n_test = static_cast<std::int32_t>(splits.front().test.size());
    double best = -1.0;
    std::size_t best_job = 0;
    for (std::size_t j = 0; j < jobs.size(); ++j) {
        FamilyStat stat;
        stat.family = jobs[j].name;
        stat.per_seed = accs[j];
        stat.mean_accuracy = ml::mean_of(accs[j]);
        stat.std_accuracy = ml::stddev_of(accs[j]);
        if (stat.mean_accuracy > best) {
            best = stat.mean_accuracy;
            best_job = j;
        }
        out.families.push_back(std::move(stat));
    }
    out.best_family = jobs[best_job].name;
    out.r_bucket = best;

    // refit the winner on the first split; its held-out predictions feed the
    // secret stage
    {
        const Job & job = jobs[best_job];
        const TranscriptSplit & split = splits.front();
        const ml::MatF train_x = gather_rows(job.data->features.matrix, split.train, positions);
        const ml::MatF test_x = gather_rows(job.data->features.matrix, split.test, positions);
        const auto train_y = gather_labels(job.data->labels, split.train, positions);
        const auto predicted = fit_predict_bits(job.family, train_x, train_y, test_x,
                                                splitmix64_mix(split_seed + 977 + static_cast<std::uint64_t>(best_job * kSplitSeeds)));
        out.predicted_bits.resize(static_cast<Eigen::Index>(split.test.size()), positions);
        for (std::size_t r = 0; r < split.test.size(); ++r) {
            for (std::int32_t i = 0; i < positions; ++i) {
                out.predicted_bits(static_cast<Eigen::Index>(r), i) =
                    static_cast<float>(predicted[r * static_cast<std::size_t>(positions) + static_cast<std::size_t>(i)]);
            }
        }
        out.predicted_transcripts = split.test;
    }
    return out;
}

namespace {

enum class SecretFamily { gbdt, mlp };

Eigen::MatrixXi letters_of(std::span<const Secret> secrets) {
    Eigen::MatrixXi out(static_cast<Eigen::Index>(secrets.size()), kSecretLetters);
    for (std::size_t i = 0; i < secrets.size(); ++i) {
        for (int j = 0; j < kSecretLetters; ++j) {
            out(static_cast<Eigen::Index>(i), j) = secrets[i].letter(j) - 'a';
        }
    }
    return out;
}

struct SecretScores {
    double letter_acc = 0.0;
    double exact_acc = 0.0;
};

SecretScores score_letters(const Eigen::MatrixXi & predicted, const Eigen::MatrixXi & truth) {
    SecretScores s;
    std::int64_t letter_hits = 0, exact_hits = 0;
    for (Eigen::Index i = 0; i < truth.rows(); ++i) {
        int ok = 0;
        for (int j = 0; j < kSecretLetters; ++j) ok += predicted(i, j) == truth(i, j) ? 1 : 0;
        letter_hits += ok;
        exact_hits += ok == kSecretLetters ? 1 : 0;
    }
    s.letter_acc = static_cast<double>(letter_hits) / (static_cast<double>(truth.rows()) * kSecretLetters);
    s.exact_acc = static_cast<double>(exact_hits) / static_cast<double>(truth.rows());
    return s;
}

SecretScores fit_score_secret(SecretFamily family, const ml::MatF & train_x,
                              const Eigen::MatrixXi & train_letters, const ml::MatF & test_x,
                              const Eigen::MatrixXi & test_letters, std::uint64_t model_seed) {
    const ml::Standardizer scaler = ml::Standardizer::fit(train_x);
    const ml::MatF xs = scaler.transform(train_x);
    const ml::MatF ts = scaler.transform(test_x);
    Eigen::MatrixXi predicted(test_x.rows(), kSecretLetters);
    if (family == SecretFamily::mlp) {
        ml::MlpConfig config;
        config.hidden = 128;
        config.seed = model_seed;
        ml::MlpClassifierHeads model(config, kSecretLetters, kLetterCount);
        model.fit(xs, train_letters);
        predicted = model.predict(ts);
    } else {
        for (int head = 0; head < kSecretLetters; ++head) {
            std::vector<int> labels(static_cast<std::size_t>(train_letters.rows()));
            for (Eigen::Index i = 0; i < train_letters.rows(); ++i) {
                labels[static_cast<std::size_t>(i)] = train_letters(i, head);
            }
            ml::GbdtOneVsRest model(ml::GbdtConfig{}, kLetterCount);
            model.fit(xs, labels);
            const auto head_pred = model.predict(ts);
            for (Eigen::Index i = 0; i < ts.rows(); ++i) {
                predicted(i, head) = head_pred[static_cast<std::size_t>(i)];
            }
        }
    }
    return score_letters(predicted, test_letters);
}

} // namespace

SecretStageResult train_secret_classifiers(const ml::MatF & bits, std::span<const Secret> secrets,
                                           std::uint64_t split_seed) {
    require(bits.rows() == static_cast<Eigen::Index>(secrets.size()), Errc::length_mismatch,
            "bit rows and secrets must match");
    require(bits.rows() >= 100, Errc::invalid_argument, "need at least 100 samples");

    const std::int32_t n = static_cast<std::int32_t>(bits.rows());
    const Eigen::MatrixXi letters = letters_of(secrets);

    const std::vector<std::pair<SecretFamily, std::string>> jobs = {
        {SecretFamily::gbdt, "gbdt"},
        {SecretFamily::mlp, "mlp"},
    };

    std::vector<TranscriptSplit> splits;
    for (int s = 0; s < kSplitSeeds; ++s) {
        splits.push_back(split_transcripts(n, splitmix64_mix(split_seed + 31 + static_cast<std::uint64_t>(s))));
    }

    std::vector<std::vector<SecretScores>> scores(jobs.size(),
                                                  std::vector<SecretScores>(kSplitSeeds));
    parallel_for(static_cast<std::int64_t>(jobs.size()) * kSplitSeeds, [&](std::int64_t idx) {
        const std::size_t j = static_cast<std::size_t>(idx) / kSplitSeeds;
        const int s = static_cast<int>(idx % kSplitSeeds);
        const TranscriptSplit & split = splits[static_cast<std::size_t>(s)];
        const auto take = [&](const std::vector<std::int32_t> & rows, ml::MatF & x, Eigen::MatrixXi & y) {
            x.resize(static_cast<Eigen::Index>(rows.size()), bits.cols());
            y.resize(static_cast<Eigen::Index>(rows.size()), kSecretLetters);
            for (std::size_t r = 0; r < rows.size(); ++r) {
                x.row(static_cast<Eigen::Index>(r)) = bits.row(rows[r]);
                y.row(static_cast<Eigen::Index>(r)) = letters.row(rows[r]);
            }
        };
        ml::MatF train_x, test_x;
        Eigen::MatrixXi train_y, test_y;
        take(split.train, train_x, train_y);
        take(split.test, test_x, test_y);
        scores[j][static_cast<std::size_t>(s)] =
            fit_score_secret(jobs[j].first, train_x, train_y, test_x, test_y,
                             splitmix64_mix(split_seed + 4099 + static_cast<std::uint64_t>(idx)));
    });

    SecretStageResult out;
    out.n_train = static_cast<std::int32_t>(splits.front().train.size());
    out.n_test = static_cast<std::int32_t>(splits.front().test.size());
    for (std::size_t j = 0; j < jobs.size(); ++j) {
        FamilyStat letter_stat, exact_stat;
        letter_stat.family = jobs[j].second;
        exact_stat.family = jobs[j].second;
        for (int s = 0; s < kSplitSeeds; ++s) {
            letter_stat.per_seed.push_back(scores[j][static_cast<std::size_t>(s)].letter_acc);
            exact_stat.per_seed.push_back(scores[j][static_cast<std::size_t>(s)].exact_acc);
        }
        letter_stat.mean_accuracy = ml::mean_of(letter_stat.per_seed);
        letter_stat.std_accuracy = ml::stddev_of(letter_stat.per_seed);
        exact_stat.mean_accuracy = ml::mean_of(exact_stat.per_seed);
        exact_stat.std_accuracy = ml::stddev_of(exact_stat.per_seed);
        out.best_letter_accuracy = std::max(out.best_letter_accuracy, letter_stat.mean_accuracy);
        out.r_secret = std::max(out.r_secret, exact_stat.mean_accuracy);
        out.letter_accuracy.push_back(std::move(letter_stat));
        out.exact_accuracy.push_back(std::move(exact_stat));
    }
    return out;
}

RecoverabilityReport recoverability_report(std::span<const Transcript> transcripts,
                                           const EmbeddingMatrix & embeddings,
                                           std::uint64_t split_seed) {
    const BucketDataset ids = build_bucket_dataset(transcripts, embeddings, FeatureKind::token_id_bits);
    const BucketDataset emb = build_bucket_dataset(transcripts, embeddings, FeatureKind::embedding_pca);

    RecoverabilityReport report;
    report.split_seed = split_seed;
    report.bucket_stage = train_bucket_classifiers(ids, emb, split_seed);
    report.r_bucket = report.bucket_stage.r_bucket;
    report.n_train = report.bucket_stage.n_train;
    report.n_test = report.bucket_stage.n_test;

    std::vector<Secret> held_out_secrets;
    held_out_secrets.reserve(report.bucket_stage.predicted_transcripts.size());
    for (const std::int32_t t : report.bucket_stage.predicted_transcripts) {
        held_out_secrets.push_back(transcripts[static_cast<std::size_t>(t)].secret);
    }
    report.secret_stage = train_secret_classifiers(report.bucket_stage.predicted_bits,
                                                   held_out_secrets, split_seed);
    report.r_secret = report.secret_stage.r_secret;
    return report;
}

} // namespace stegoplane
