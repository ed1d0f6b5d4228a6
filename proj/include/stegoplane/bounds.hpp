#pragma once

#include <cstdint>
#include <functional>
#include <vector>

#include "stegoplane/channel.hpp"
#include "stegoplane/rng.hpp"

namespace stegoplane {

// Minimal-KL distribution that promotes a target token to argmax: the target
// is pooled with the largest competing probabilities at their geometric mean
// r, everything is rescaled by alpha = 1/Z, and the KL cost collapses to
// ln(alpha).
struct PooledSolution {
    std::uint32_t target = 0;
    std::vector<std::uint32_t> pool; // competing tokens tied with the target, p descending
    double geo_mean_r = 0.0;
    double partition_z = 1.0;
    double alpha = 1.0;
    double kl_nats = 0.0;
    Eigen::VectorXd q;

    std::size_t pool_size() const noexcept { return pool.size(); }
};

// Greedy pooling: sort competitors by p descending, admit while the
// candidate strictly exceeds the running geometric mean, stop at the first
// candidate at or below it.
PooledSolution optimal_pool(const TokenDistribution & dist, std::uint32_t target);

// Exhaustive oracle over every pool subset (vocab <= 20); keeps candidates
// that satisfy primal feasibility (p_t <= r off the pool) and dual
// feasibility (p_t >= r on the pool) and returns the minimum ln(1/Z).
struct BruteForceResult {
    double kl_nats = 0.0;
    std::vector<std::uint32_t> pool;
};
BruteForceResult brute_force_kl(const TokenDistribution & dist, std::uint32_t target);

struct BucketedVocab {
    std::uint32_t bucket_count = 0;
    std::vector<std::uint32_t> bucket_of;         // one label in [0, n) per token
    std::vector<std::uint32_t> per_bucket_argmax; // under the distribution used to build it
};

BucketedVocab make_bucketed_vocab(const TokenDistribution & dist,
                                  std::vector<std::uint32_t> bucket_of,
                                  std::uint32_t bucket_count);

// Expected minimal KL when the required bucket is uniform over n buckets:
// the direct average (1/n) sum_b kl(argmax of bucket b), cross-checked
// against the closed form ((n-1)/n) * mean ln(1/Z) over non-argmax buckets.
struct ExpectedKl {
    double nats = 0.0;
    double bits = 0.0;
    double closed_form_nats = 0.0;
};
ExpectedKl expected_kl(const TokenDistribution & dist, const BucketedVocab & buckets);

// Per-token perplexity floor under uniform n-bucket targets: 2^((n-1)/n).
double ppl_lower_bound(std::uint64_t bucket_count);

// Monte-Carlo of the tie construction behind the floor: zero loss when the
// drawn bucket already holds the argmax, ln 2 otherwise.
using DistributionFamily = std::function<TokenDistribution(SplitMix64 &)>;

DistributionFamily peaked_distribution_family(std::uint32_t vocab);

double simulate_ppl(const DistributionFamily & family, std::uint32_t bucket_count,
                    std::uint64_t trials, std::uint64_t seed);

} // namespace stegoplane
