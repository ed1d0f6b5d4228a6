#include <doctest.h>

#include <cmath>
#include <filesystem>

#include "stegoplane/channel.hpp"

using namespace stegoplane;

namespace {

struct ChannelFixture {
    EmbeddingMatrix embeddings = generate_synthetic_embeddings(256, 32, 404);
    LetterCodebook codebook = build_codebook(embeddings, 1, 10000);
    BucketAssignment parity = parity_buckets(256);
    BucketAssignment geometric =
        assign_buckets(embeddings, hyperplane_from_seed(embeddings, 42, ThresholdRule::median_vocab));
};

} // namespace

TEST_SUITE("channel") {

TEST_CASE("huge temperature flattens the distribution") {
    const auto e = generate_synthetic_embeddings(1024, 64, 2);
    ToyLM lm(e, 9, 1e6, 0.8);
    const auto dist = lm.next();
    double tv = 0.0;
    const double uniform = 1.0 / 1024;
    for (Eigen::Index t = 0; t < dist.probs.size(); ++t) tv += std::abs(dist.probs[t] - uniform);
    CHECK(tv / 2.0 <= 1e-4);
}

TEST_CASE("the toy lm is deterministic in its seeds and history") {
    const auto e = generate_synthetic_embeddings(256, 32, 3);
    ToyLM a(e, 77), b(e, 77);
    CHECK(a.next().probs == b.next().probs);
    a.advance(5);
    b.advance(5);
    CHECK(a.next().probs == b.next().probs);
    a.advance(200);
    b.advance(201);
    CHECK(a.next().probs != b.next().probs);
}

TEST_CASE("entropy at unit temperature is strictly interior") {
    const auto e = generate_synthetic_embeddings(1024, 64, 2);
    ToyLM lm(e, 9, 1.0, 0.8);
    const double h = lm.next().entropy_nats();
    CHECK(h > 0.0);
    CHECK(h < std::log(1024.0));
}

TEST_CASE("distribution validation enforces the invariants") {
    Eigen::VectorXd good(4);
    good << 0.25, 0.25, 0.25, 0.25;
    CHECK_NOTHROW(TokenDistribution::validated(good));
    Eigen::VectorXd negative(4);
    negative << 0.5, 0.6, -0.1, 0.0;
    CHECK_THROWS_AS(TokenDistribution::validated(negative), StegoError);
    Eigen::VectorXd off(4);
    off << 0.3, 0.3, 0.3, 0.2;
    CHECK_THROWS_AS(TokenDistribution::validated(off), StegoError);
}

TEST_CASE("constraining keeps only the target bucket") {
    // four interesting tokens, uniform base distribution
    const std::uint32_t v = 8;
    Eigen::VectorXd p = Eigen::VectorXd::Constant(v, 1.0 / v);
    const TokenDistribution base{p};

    BucketAssignment buckets;
    buckets.source = BucketAssignment::Source::hyperplane;
    buckets.buckets = {1, 1, 0, 0, 1, 0, 1, 0};
    buckets.counts = {4, 4};

    const auto ones = constrain(base, buckets, 1);
    const auto zeros = constrain(base, buckets, 0);
    for (std::uint32_t t = 0; t < v; ++t) {
        if (buckets.buckets[t] == 1) {
            CHECK(ones.probs[t] == doctest::Approx(0.25));
            CHECK(zeros.probs[t] == 0.0);
        } else {
            CHECK(ones.probs[t] == 0.0);
            CHECK(zeros.probs[t] == doctest::Approx(0.25));
        }
    }
    CHECK(ones.probs.sum() == doctest::Approx(1.0).epsilon(1e-12));
}

TEST_CASE("a full-vocabulary bucket leaves the distribution unchanged") {
    const auto e = generate_synthetic_embeddings(64, 8, 5);
    ToyLM lm(e, 3);
    const auto base = lm.next();
    BucketAssignment all_ones;
    all_ones.buckets.assign(64, 1);
    all_ones.counts = {0, 64};
    const auto constrained = constrain(base, all_ones, 1);
    for (Eigen::Index t = 0; t < 64; ++t) {
        CHECK(constrained.probs[t] == doctest::Approx(base.probs[t]).epsilon(1e-14));
    }
}

TEST_CASE("underflowed buckets fall back to uniform") {
    Eigen::VectorXd p = Eigen::VectorXd::Zero(6);
    p[0] = 1.0; // bucket 0 holds all mass
    const TokenDistribution base{p};
    BucketAssignment buckets;
    buckets.buckets = {0, 1, 0, 1, 0, 1};
    buckets.counts = {3, 3};
    const auto constrained = constrain(base, buckets, 1);
    CHECK(constrained.probs[1] == doctest::Approx(1.0 / 3));
    CHECK(constrained.probs[3] == doctest::Approx(1.0 / 3));
    CHECK(constrained.probs[5] == doctest::Approx(1.0 / 3));
    CHECK(constrained.probs[0] == 0.0);
}

TEST_CASE("an empty target bucket is an error") {
    Eigen::VectorXd p = Eigen::VectorXd::Constant(4, 0.25);
    BucketAssignment buckets;
    buckets.buckets = {0, 0, 0, 0};
    buckets.counts = {4, 0};
    try {
        constrain(TokenDistribution{p}, buckets, 1);
        FAIL("expected EMPTY_BUCKET");
    } catch (const StegoError & err) {
        CHECK(err.code() == Errc::empty_bucket);
    }
}

TEST_CASE("fully compliant transmission matches every target bit") {
    ChannelFixture fx;
    const auto plan = plan_payload(Secret("echo"), EncoderKind::embedding, &fx.codebook, 1, std::nullopt);
    const auto tr = transmit(ToyLM(fx.embeddings, 12), plan, fx.geometric, SampleMode::greedy(), 1.0);
    REQUIRE(tr.tokens.size() == 32);
    for (std::size_t i = 0; i < 32; ++i) {
        CHECK(tr.compliance[i] == 1);
        CHECK(fx.geometric.buckets[tr.tokens[i]] == tr.tx_bits[i]);
    }

    SUBCASE("greedy transcripts are pure functions of the prompt seed") {
        const auto again = transmit(ToyLM(fx.embeddings, 12), plan, fx.geometric, SampleMode::greedy(), 1.0);
        CHECK(again.tokens == tr.tokens);
    }
    SUBCASE("sampled transcripts are pure functions of the sampling seed") {
        const auto s1 = transmit(ToyLM(fx.embeddings, 12), plan, fx.geometric, SampleMode::sample(5), 1.0);
        const auto s2 = transmit(ToyLM(fx.embeddings, 12), plan, fx.geometric, SampleMode::sample(5), 1.0);
        const auto s3 = transmit(ToyLM(fx.embeddings, 12), plan, fx.geometric, SampleMode::sample(6), 1.0);
        CHECK(s1.tokens == s2.tokens);
        CHECK(s1.tokens != s3.tokens);
    }
}

TEST_CASE("zero compliance misses every position") {
    ChannelFixture fx;
    const auto plan = plan_payload(Secret("echo"), EncoderKind::ascii, nullptr, 1, std::nullopt);
    const auto tr = transmit(ToyLM(fx.embeddings, 12), plan, fx.parity, SampleMode::greedy(), 0.0);
    for (std::size_t i = 0; i < 32; ++i) {
        CHECK(tr.compliance[i] == 0);
        CHECK(fx.parity.buckets[tr.tokens[i]] != tr.tx_bits[i]);
    }
}

TEST_CASE("the perfect channel is the identity on secrets") {
    ChannelFixture fx;
    SplitMix64 rng(2024);
    for (const auto encoder : {EncoderKind::embedding, EncoderKind::ascii}) {
        for (const bool use_parity : {true, false}) {
            for (const bool masked : {false, true}) {
                for (const std::uint32_t repeat : {1u, 4u}) {
                    for (int trial = 0; trial < 25; ++trial) {
                        const Secret s = Secret::random(rng);
                        std::optional<Keystream> ks;
                        if (masked) ks = keystream(fx.embeddings, s, 31337);
                        const auto plan = plan_payload(s, encoder, &fx.codebook, repeat, ks);
                        const auto & buckets = use_parity ? fx.parity : fx.geometric;
                        const auto tr = transmit(ToyLM(fx.embeddings, rng.next_u64()), plan, buckets,
                                                 SampleMode::sample(rng.next_u64()), 1.0);
                        Decoder decoder{encoder, &fx.codebook, ks};
                        const auto back = receive(tr, buckets, decoder);
                        REQUIRE(back.has_value());
                        CHECK(*back == s);
                    }
                }
            }
        }
    }
}

TEST_CASE("majority vote absorbs one corrupted repeat per bit") {
    ChannelFixture fx;
    const Secret s("vote");
    const auto plan = plan_payload(s, EncoderKind::ascii, nullptr, 4, std::nullopt);
    auto tr = transmit(ToyLM(fx.embeddings, 5), plan, fx.parity, SampleMode::greedy(), 1.0);

    // flip one repeat of every bit to a wrong-bucket token
    for (int j = 0; j < 32; ++j) {
        const std::size_t at = static_cast<std::size_t>(32 * (j % 4) + j);
        const std::uint8_t want = tr.tx_bits[at];
        tr.tokens[at] = want == 1 ? 0 : 1; // parity: token 0 is bucket 0, token 1 bucket 1
    }
    const auto back = receive(tr, fx.parity, Decoder{EncoderKind::ascii, nullptr, std::nullopt});
    REQUIRE(back.has_value());
    CHECK(*back == s);
}

TEST_CASE("the wrong bucket seed recovers nothing") {
    ChannelFixture fx;
    const auto wrong =
        assign_buckets(fx.embeddings, hyperplane_from_seed(fx.embeddings, 999, ThresholdRule::median_vocab));
    SplitMix64 rng(55);
    int recovered = 0;
    const int n = 1000;
    for (int i = 0; i < n; ++i) {
        const Secret s = Secret::random(rng);
        const auto plan = plan_payload(s, EncoderKind::embedding, &fx.codebook, 1, std::nullopt);
        const auto tr = transmit(ToyLM(fx.embeddings, rng.next_u64()), plan, fx.geometric,
                                 SampleMode::sample(rng.next_u64()), 1.0);
        const auto back = receive(tr, wrong, Decoder{EncoderKind::embedding, &fx.codebook, std::nullopt});
        if (back.has_value() && *back == s) ++recovered;
    }
    CHECK(static_cast<double>(recovered) / n <= 0.01);
}

TEST_CASE("exact match rate counts fully compliant transcripts") {
    ChannelFixture fx;
    std::vector<Transcript> transcripts;
    std::vector<PayloadPlan> plans;
    SplitMix64 rng(8);
    for (int i = 0; i < 10; ++i) {
        const Secret s = Secret::random(rng);
        plans.push_back(plan_payload(s, EncoderKind::ascii, nullptr, 1, std::nullopt));
        transcripts.push_back(transmit(ToyLM(fx.embeddings, rng.next_u64()), plans.back(), fx.parity,
                                       SampleMode::greedy(), 1.0));
    }
    CHECK(exact_match_rate(transcripts, plans) == 1.0);

    transcripts[3].compliance[17] = 0;
    CHECK(exact_match_rate(transcripts, plans) == doctest::Approx(0.9));

    plans.pop_back();
    CHECK_THROWS_AS(exact_match_rate(transcripts, plans), StegoError);
}

TEST_CASE("compliance calibration tracks rho to the 32nd power") {
    ChannelFixture fx;
    SplitMix64 rng(99);
    const int n = 2000;
    std::vector<Transcript> transcripts;
    std::vector<PayloadPlan> plans;
    transcripts.reserve(n);
    plans.reserve(n);
    for (int i = 0; i < n; ++i) {
        plans.push_back(plan_payload(Secret::random(rng), EncoderKind::ascii, nullptr, 1, std::nullopt));
        transcripts.push_back(transmit(ToyLM(fx.embeddings, rng.next_u64()), plans.back(), fx.parity,
                                       SampleMode::sample(rng.next_u64()), 0.9));
    }
    const double rate = exact_match_rate(transcripts, plans);
    CHECK(std::abs(rate - std::pow(0.9, 32)) < 0.025);
}

TEST_CASE("transcript batches round-trip through jsonl") {
    namespace fs = std::filesystem;
    ChannelFixture fx;
    SplitMix64 rng(6);
    std::vector<Transcript> transcripts;
    for (int i = 0; i < 5; ++i) {
        const Secret s = Secret::random(rng);
        const auto ks = keystream(fx.embeddings, s, 12);
        const auto plan = plan_payload(s, EncoderKind::embedding, &fx.codebook, 2, ks);
        transcripts.push_back(transmit(ToyLM(fx.embeddings, rng.next_u64()), plan, fx.geometric,
                                       SampleMode::sample(rng.next_u64()), 0.95));
    }
    const auto dir = fs::temp_directory_path() / "stegoplane_channel_test";
    fs::create_directories(dir);
    const auto path = dir / "batch.jsonl";
    write_transcripts(transcripts, path);
    const auto loaded = read_transcripts(path);
    REQUIRE(loaded.size() == transcripts.size());
    for (std::size_t i = 0; i < loaded.size(); ++i) {
        CHECK(loaded[i].prompt_seed == transcripts[i].prompt_seed);
        CHECK(loaded[i].secret == transcripts[i].secret);
        CHECK(loaded[i].encoder == transcripts[i].encoder);
        CHECK(loaded[i].xor_masked == transcripts[i].xor_masked);
        CHECK(loaded[i].tx_bits == transcripts[i].tx_bits);
        CHECK(loaded[i].tokens == transcripts[i].tokens);
        CHECK(loaded[i].compliance == transcripts[i].compliance);
    }
    fs::remove_all(dir);
}

} // TEST_SUITE
