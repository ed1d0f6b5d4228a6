#include <doctest.h>

#include <cmath>

#include "stegoplane/steganalysis.hpp"

using namespace stegoplane;

namespace {

struct Corpus {
    EmbeddingMatrix embeddings;
    LetterCodebook codebook;
    BucketAssignment buckets;
    std::vector<Transcript> transcripts;
    std::vector<Secret> secrets;
};

Corpus make_corpus(std::uint32_t vocab, std::uint32_t dim, bool parity, EncoderKind encoder,
                   bool masked, int count, std::uint64_t seed) {
    EmbeddingMatrix embeddings = generate_synthetic_embeddings(vocab, dim, 900 + seed);
    LetterCodebook codebook = build_codebook(embeddings, 1, 10000);
    BucketAssignment buckets =
        parity ? parity_buckets(vocab)
               : assign_buckets(embeddings, hyperplane_from_seed(embeddings, 4242, ThresholdRule::median_vocab));
    std::vector<Transcript> transcripts;
    std::vector<Secret> secrets;
    SplitMix64 rng(seed);
    transcripts.reserve(static_cast<std::size_t>(count));
    for (int i = 0; i < count; ++i) {
        const Secret s = Secret::random(rng);
        std::optional<Keystream> ks;
        if (masked) ks = keystream(embeddings, s, 777);
        const auto plan = plan_payload(s, encoder, &codebook, 1, ks);
        transcripts.push_back(transmit(ToyLM(embeddings, rng.next_u64()), plan, buckets,
                                       SampleMode::sample(rng.next_u64()), 1.0));
        secrets.push_back(s);
    }
    return Corpus{std::move(embeddings), std::move(codebook), std::move(buckets),
                  std::move(transcripts), std::move(secrets)};
}

ml::MatF true_bit_matrix(std::span<const Transcript> transcripts) {
    ml::MatF bits(static_cast<Eigen::Index>(transcripts.size()),
                  static_cast<Eigen::Index>(transcripts.front().tx_bits.size()));
    for (std::size_t i = 0; i < transcripts.size(); ++i) {
        for (std::size_t j = 0; j < transcripts[i].tx_bits.size(); ++j) {
            bits(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) =
                static_cast<float>(transcripts[i].tx_bits[j]);
        }
    }
    return bits;
}

} // namespace

TEST_SUITE("steganalysis") {

TEST_CASE("bucket datasets expose one sample per position") {
    auto corpus = make_corpus(512, 32, true, EncoderKind::ascii, false, 40, 1);
    const auto ids = build_bucket_dataset(corpus.transcripts, corpus.embeddings,
                                          FeatureKind::token_id_bits);
    CHECK(ids.features.matrix.rows() == 40 * 32);
    CHECK(ids.features.matrix.cols() == 17);
    CHECK(ids.labels.size() == 40 * 32);
    CHECK(ids.transcript_count == 40);

    // under parity the label equals the least-significant-bit feature
    for (Eigen::Index r = 0; r < ids.features.matrix.rows(); ++r) {
        CHECK(static_cast<float>(ids.labels[static_cast<std::size_t>(r)]) == ids.features.matrix(r, 0));
    }

    const auto emb = build_bucket_dataset(corpus.transcripts, corpus.embeddings,
                                          FeatureKind::embedding_pca);
    CHECK(emb.features.matrix.cols() == 32); // min(50, dim)
    REQUIRE(emb.features.pca.has_value());
    CHECK(emb.features.pca->components() == 32);
}

TEST_CASE("geometric bucket labels are a linear function of raw embeddings") {
    // oracle: a linear probe on the raw embedding rows predicts the bucket
    const auto embeddings = generate_synthetic_embeddings(512, 32, 5);
    const auto buckets =
        assign_buckets(embeddings, hyperplane_from_seed(embeddings, 11, ThresholdRule::median_vocab));
    ml::MatF X(512, 32);
    std::vector<std::uint8_t> y(512);
    for (std::uint32_t t = 0; t < 512; ++t) {
        X.row(t) = embeddings.rows().row(t).cast<float>();
        y[t] = buckets.buckets[t];
    }
    ml::LogisticRegression probe;
    probe.fit(X, y);
    CHECK(ml::accuracy(probe.predict(X), y) >= 0.95);
}

TEST_CASE("parity with id features is perfectly recoverable") {
    auto corpus = make_corpus(512, 32, true, EncoderKind::ascii, false, 150, 2);
    const auto ids = build_bucket_dataset(corpus.transcripts, corpus.embeddings,
                                          FeatureKind::token_id_bits);
    const auto emb = build_bucket_dataset(corpus.transcripts, corpus.embeddings,
                                          FeatureKind::embedding_pca);
    const auto result = train_bucket_classifiers(ids, emb, 10);
    CHECK(result.r_bucket == 1.0);
    bool id_family_perfect = false;
    for (const auto & fam : result.families) {
        if (fam.family == "gbdt+token_id_bits" || fam.family == "logreg+token_id_bits") {
            id_family_perfect |= fam.mean_accuracy == 1.0;
        }
    }
    CHECK(id_family_perfect);
    CHECK(result.predicted_bits.rows() == result.n_test);
    CHECK(result.predicted_bits.cols() == 32);
}

TEST_CASE("shuffled labels collapse every family to chance") {
    auto corpus = make_corpus(512, 32, true, EncoderKind::ascii, false, 150, 3);
    auto ids = build_bucket_dataset(corpus.transcripts, corpus.embeddings, FeatureKind::token_id_bits);
    auto emb = build_bucket_dataset(corpus.transcripts, corpus.embeddings, FeatureKind::embedding_pca);
    SplitMix64 rng(17);
    for (auto & label : ids.labels) label = static_cast<std::uint8_t>(rng.next_u64() & 1u);
    emb.labels = ids.labels;
    const auto result = train_bucket_classifiers(ids, emb, 11);
    for (const auto & fam : result.families) {
        CHECK(std::abs(fam.mean_accuracy - 0.5) <= 0.03);
    }
}

TEST_CASE("hidden-seed geometric bucketing is not fully recoverable") {
    auto corpus = make_corpus(2048, 64, false, EncoderKind::embedding, false, 220, 4);
    const auto ids = build_bucket_dataset(corpus.transcripts, corpus.embeddings,
                                          FeatureKind::token_id_bits);
    const auto emb = build_bucket_dataset(corpus.transcripts, corpus.embeddings,
                                          FeatureKind::embedding_pca);
    const auto result = train_bucket_classifiers(ids, emb, 12);
    CHECK(result.r_bucket < 1.0);
    CHECK(result.r_bucket > 0.5); // the pca features do leak geometry
}

TEST_CASE("true ascii bits give away the secret") {
    auto corpus = make_corpus(512, 32, true, EncoderKind::ascii, false, 600, 5);
    const auto result = train_secret_classifiers(true_bit_matrix(corpus.transcripts),
                                                 corpus.secrets, 20);
    CHECK(result.best_letter_accuracy >= 0.99);
    CHECK(result.r_secret >= 0.99);
}

TEST_CASE("random bits predict letters at chance") {
    SplitMix64 rng(21);
    const int n = 1000;
    ml::MatF bits(n, 32);
    std::vector<Secret> secrets;
    for (int i = 0; i < n; ++i) {
        secrets.push_back(Secret::random(rng));
        for (int j = 0; j < 32; ++j) bits(i, j) = static_cast<float>(rng.next_u64() & 1u);
    }
    const auto result = train_secret_classifiers(bits, secrets, 21);
    for (const auto & fam : result.letter_accuracy) {
        CHECK(std::abs(fam.mean_accuracy - 1.0 / 26) <= 0.02);
    }
}

TEST_CASE("xor masking hides the letters from the secret stage") {
    auto corpus = make_corpus(512, 32, true, EncoderKind::ascii, true, 1000, 6);
    // per-secret keystreams: transmitted bits are mask(secret) ^ ascii(secret)
    SplitMix64 rng(23);
    std::vector<Secret> secrets;
    ml::MatF bits(1000, 32);
    for (int i = 0; i < 1000; ++i) {
        const Secret s = Secret::random(rng);
        secrets.push_back(s);
        const auto masked = xor_mask(encode_ascii(s), keystream(corpus.embeddings, s, rng.next_u64()));
        for (int j = 0; j < 32; ++j) bits(i, j) = static_cast<float>(masked[static_cast<std::size_t>(j)]);
    }
    const auto result = train_secret_classifiers(bits, secrets, 22);
    CHECK(result.best_letter_accuracy <= 0.10);
}

TEST_CASE("the full report wires both stages together") {
    auto corpus = make_corpus(512, 32, true, EncoderKind::ascii, false, 500, 7);
    const auto report = recoverability_report(corpus.transcripts, corpus.embeddings, 30);
    CHECK(report.r_bucket == 1.0);
    CHECK(report.r_secret >= 0.95);
    CHECK(report.n_train == 400);
    CHECK(report.n_test == 100);
    CHECK(report.bucket_stage.families.size() == 6);
    CHECK(report.secret_stage.exact_accuracy.size() == 2);
}

} // TEST_SUITE
