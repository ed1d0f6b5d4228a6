#include <doctest.h>

#include <cmath>

#include "stegoplane/bounds.hpp"

using namespace stegoplane;

namespace {

TokenDistribution dist_of(std::initializer_list<double> probs) {
    Eigen::VectorXd p(static_cast<Eigen::Index>(probs.size()));
    Eigen::Index i = 0;
    for (const double v : probs) p[i++] = v;
    return TokenDistribution::validated(std::move(p));
}

TokenDistribution random_dist(SplitMix64 & rng, std::uint32_t vocab) {
    Eigen::VectorXd p(vocab);
    for (std::uint32_t t = 0; t < vocab; ++t) p[t] = -std::log(rng.next_unit());
    p /= p.sum();
    return TokenDistribution{std::move(p)};
}

} // namespace

TEST_SUITE("bounds") {

TEST_CASE("peaked worked example pools a single competitor") {
    const auto p = dist_of({0.5, 0.3, 0.1, 0.1});
    const auto sol = optimal_pool(p, 1);
    REQUIRE(sol.pool.size() == 1);
    CHECK(sol.pool[0] == 0);
    CHECK(sol.geo_mean_r == doctest::Approx(std::sqrt(0.15)).epsilon(1e-12));
    CHECK(sol.partition_z == doctest::Approx(2.0 * std::sqrt(0.15) + 0.2).epsilon(1e-12));
    CHECK(sol.kl_nats == doctest::Approx(std::log(1.0 / (2.0 * std::sqrt(0.15) + 0.2))).epsilon(1e-12));
    CHECK(sol.kl_nats == doctest::Approx(0.0257316).epsilon(1e-4));
}

TEST_CASE("an argmax target costs nothing") {
    const auto p = dist_of({0.5, 0.3, 0.2});
    const auto sol = optimal_pool(p, 0);
    CHECK(sol.pool.empty());
    CHECK(sol.kl_nats == 0.0);
    CHECK(sol.geo_mean_r == 0.5);
    for (Eigen::Index t = 0; t < 3; ++t) CHECK(sol.q[t] == p.probs[t]);
}

TEST_CASE("a zero-probability target cannot be promoted") {
    Eigen::VectorXd p(3);
    p << 0.6, 0.4, 0.0;
    try {
        optimal_pool(TokenDistribution{p}, 2);
        FAIL("expected ZERO_TARGET_PROB");
    } catch (const StegoError & err) {
        CHECK(err.code() == Errc::zero_target_prob);
    }
}

TEST_CASE("two-token pooling has the closed form") {
    const auto p = dist_of({0.9, 0.1});
    const auto sol = optimal_pool(p, 1);
    CHECK(sol.geo_mean_r == doctest::Approx(0.3).epsilon(1e-12));
    CHECK(sol.partition_z == doctest::Approx(0.6).epsilon(1e-12));
    CHECK(sol.kl_nats == doctest::Approx(std::log(5.0 / 3.0)).epsilon(1e-12));
    const auto oracle = brute_force_kl(p, 1);
    CHECK(oracle.kl_nats == doctest::Approx(sol.kl_nats).epsilon(1e-12));
    CHECK(oracle.pool == sol.pool);
}

TEST_CASE("the solution satisfies its own structure") {
    SplitMix64 rng(2);
    for (int trial = 0; trial < 200; ++trial) {
        const std::uint32_t vocab = 3 + static_cast<std::uint32_t>(rng.next_below(10));
        const auto p = random_dist(rng, vocab);
        const auto target = static_cast<std::uint32_t>(rng.next_below(vocab));
        const auto sol = optimal_pool(p, target);

        // q is a distribution whose argmax includes the target
        CHECK(std::abs(sol.q.sum() - 1.0) <= 1e-9);
        CHECK(sol.q.maxCoeff() <= sol.q[target] + 1e-15);

        // pooled probabilities sit at or above r, unpooled at or below
        double min_pooled = 1.0, max_unpooled = 0.0;
        std::vector<bool> in_pool(vocab, false);
        in_pool[target] = true;
        for (const auto t : sol.pool) {
            in_pool[t] = true;
            min_pooled = std::min(min_pooled, p.probs[t]);
        }
        for (std::uint32_t t = 0; t < vocab; ++t) {
            if (!in_pool[t]) max_unpooled = std::max(max_unpooled, p.probs[t]);
        }
        if (!sol.pool.empty()) {
            CHECK(min_pooled >= sol.geo_mean_r - 1e-12);
            CHECK(max_unpooled <= sol.geo_mean_r + 1e-12);
        }

        // geometric-mean identity: pooled log-ratios cancel
        double log_ratio = std::log(sol.geo_mean_r / p.probs[target]);
        for (const auto t : sol.pool) log_ratio += std::log(sol.geo_mean_r / p.probs[t]);
        CHECK(std::abs(log_ratio) <= 1e-9);

        // the declared invariant identities
        double geo = std::log(p.probs[target]);
        for (const auto t : sol.pool) geo += std::log(p.probs[t]);
        geo = std::exp(geo / (1.0 + static_cast<double>(sol.pool.size())));
        CHECK(std::abs(geo - sol.geo_mean_r) <= 1e-12);
        CHECK(std::abs(sol.kl_nats - std::log(sol.alpha)) <= 1e-9);
    }
}

TEST_CASE("greedy pooling agrees with the exhaustive oracle") {
    SplitMix64 rng(31);
    for (int trial = 0; trial < 100; ++trial) {
        const std::uint32_t vocab = 3 + static_cast<std::uint32_t>(rng.next_below(10));
        const auto p = random_dist(rng, vocab);
        const auto target = static_cast<std::uint32_t>(rng.next_below(vocab));
        const auto fast = optimal_pool(p, target);
        const auto slow = brute_force_kl(p, target);
        CHECK(std::abs(fast.kl_nats - slow.kl_nats) <= 1e-9);
    }
}

TEST_CASE("the brute force rejects oversized vocabularies") {
    SplitMix64 rng(1);
    const auto p = random_dist(rng, 24);
    CHECK_THROWS_AS(brute_force_kl(p, 0), StegoError);
}

TEST_CASE("the kl cost ignores how the unpooled remainder is split") {
    const double reference = optimal_pool(dist_of({0.5, 0.3, 0.2}), 1).kl_nats;
    CHECK(optimal_pool(dist_of({0.5, 0.3, 0.1, 0.1}), 1).kl_nats == doctest::Approx(reference).epsilon(1e-12));
    CHECK(optimal_pool(dist_of({0.5, 0.3, 0.05, 0.05, 0.05, 0.05}), 1).kl_nats ==
          doctest::Approx(reference).epsilon(1e-12));
    SplitMix64 rng(77);
    for (int trial = 0; trial < 3; ++trial) {
        // random split of the 0.2 remainder over four tokens
        Eigen::VectorXd tail(4);
        for (int i = 0; i < 4; ++i) tail[i] = rng.next_unit();
        tail *= 0.2 / tail.sum();
        Eigen::VectorXd p(6);
        p << 0.5, 0.3, tail[0], tail[1], tail[2], tail[3];
        CHECK(optimal_pool(TokenDistribution{p}, 1).kl_nats == doctest::Approx(reference).epsilon(1e-12));
    }
}

TEST_CASE("the kl cost never rises as the target gains mass") {
    SplitMix64 rng(5);
    for (int sweep = 0; sweep < 20; ++sweep) {
        const std::uint32_t vocab = 4 + static_cast<std::uint32_t>(rng.next_below(8));
        Eigen::VectorXd base(vocab - 1);
        for (Eigen::Index i = 0; i < base.size(); ++i) base[i] = -std::log(rng.next_unit());
        base /= base.sum();
        double previous = std::numeric_limits<double>::infinity();
        for (const double target_mass : {0.02, 0.05, 0.1, 0.2, 0.3, 0.45, 0.6}) {
            Eigen::VectorXd p(vocab);
            p[0] = target_mass;
            p.tail(vocab - 1) = base * (1.0 - target_mass);
            const double kl = optimal_pool(TokenDistribution{p}, 0).kl_nats;
            CHECK(kl <= previous + 1e-12);
            previous = kl;
        }
    }
}

TEST_CASE("expected kl averages per-bucket promotions") {
    const auto p = dist_of({0.5, 0.3, 0.1, 0.1});
    const auto buckets = make_bucketed_vocab(p, {0, 1, 2, 3}, 4);
    CHECK(buckets.per_bucket_argmax == std::vector<std::uint32_t>{0, 1, 2, 3});

    const auto expected = expected_kl(p, buckets);
    double direct = 0.0;
    for (std::uint32_t t = 0; t < 4; ++t) direct += brute_force_kl(p, t).kl_nats;
    direct /= 4.0;
    CHECK(expected.nats == doctest::Approx(direct).epsilon(1e-12));
    CHECK(expected.bits == doctest::Approx(direct / std::log(2.0)).epsilon(1e-12));
    CHECK(expected.closed_form_nats == doctest::Approx(expected.nats).epsilon(1e-9));
}

TEST_CASE("a single bucket holding the argmax has zero expected kl") {
    const auto p = dist_of({0.5, 0.3, 0.2});
    const auto buckets = make_bucketed_vocab(p, {0, 0, 0}, 1);
    CHECK(expected_kl(p, buckets).nats == 0.0);
}

TEST_CASE("uniform distributions are free under any balanced bucketing") {
    const auto p = dist_of({0.25, 0.25, 0.25, 0.25});
    const auto buckets = make_bucketed_vocab(p, {0, 1, 0, 1}, 2);
    const auto expected = expected_kl(p, buckets);
    CHECK(expected.nats == doctest::Approx(0.0).epsilon(1e-15));
    // matches pooling two equal probabilities: r = 1/V, Z = 1, ln(1/Z) = 0
    CHECK(brute_force_kl(p, 1).kl_nats == doctest::Approx(0.0).epsilon(1e-12));
}

TEST_CASE("empty buckets are rejected") {
    const auto p = dist_of({0.5, 0.5});
    CHECK_THROWS_AS(make_bucketed_vocab(p, {0, 0}, 2), StegoError);
}

TEST_CASE("perplexity floor follows the closed form") {
    CHECK(ppl_lower_bound(1) == 1.0);
    CHECK(ppl_lower_bound(2) == doctest::Approx(std::sqrt(2.0)).epsilon(1e-15));
    CHECK(ppl_lower_bound(4) == doctest::Approx(std::pow(2.0, 0.75)).epsilon(1e-15));
    CHECK(ppl_lower_bound(1024) == doctest::Approx(std::pow(2.0, 1023.0 / 1024.0)).epsilon(1e-15));
    CHECK(std::abs(ppl_lower_bound(1000000) - 2.0) < 1e-4);
    CHECK_THROWS_AS(ppl_lower_bound(0), StegoError);
}

TEST_CASE("the tie-construction simulation reproduces the floor") {
    CHECK(simulate_ppl(peaked_distribution_family(4), 1, 1000, 3) == 1.0);

    const double two = simulate_ppl(peaked_distribution_family(8), 2, 100000, 4);
    CHECK(std::abs(two - std::sqrt(2.0)) < 0.01);

    const double big = simulate_ppl(peaked_distribution_family(1024), 1024, 30000, 5);
    CHECK(std::abs(big - ppl_lower_bound(1024)) < 0.01);
}

} // TEST_SUITE
