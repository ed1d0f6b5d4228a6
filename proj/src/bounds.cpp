#include "stegoplane/bounds.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

namespace stegoplane {

PooledSolution optimal_pool(const TokenDistribution & dist, std::uint32_t target) {
    const Eigen::VectorXd & p = dist.probs;
    require(target < dist.vocab_size(), Errc::index_out_of_range, "target token out of range");
    require(p[target] > 0.0, Errc::zero_target_prob,
            "target token has zero probability; promotion impossible at finite KL");

    PooledSolution out;
    out.target = target;

    std::vector<std::uint32_t> order;
    order.reserve(static_cast<std::size_t>(p.size()) - 1);
    for (std::uint32_t t = 0; t < dist.vocab_size(); ++t) {
        if (t != target) order.push_back(t);
    }
    std::stable_sort(order.begin(), order.end(),
                     [&](std::uint32_t a, std::uint32_t b) { return p[a] > p[b]; });

    // Log-domain running geometric mean keeps r exact for tiny probabilities.
    double log_sum = std::log(p[target]);
    std::size_t pooled = 1;
    double r = p[target];
    for (const std::uint32_t t : order) {
        if (!(p[t] > r)) break;
        log_sum += std::log(p[t]);
        ++pooled;
        r = std::exp(log_sum / static_cast<double>(pooled));
        out.pool.push_back(t);
    }

    double unpooled_mass = 0.0;
    std::vector<std::uint8_t> in_pool(dist.vocab_size(), 0);
    in_pool[target] = 1;
    for (const std::uint32_t t : out.pool) in_pool[t] = 1;
    for (std::uint32_t t = 0; t < dist.vocab_size(); ++t) {
        if (!in_pool[t]) unpooled_mass += p[t];
    }

    out.geo_mean_r = r;
    out.partition_z = static_cast<double>(pooled) * r + unpooled_mass;
    out.alpha = 1.0 / out.partition_z;
    out.kl_nats = out.pool.empty() ? 0.0 : std::log(out.alpha);
    if (out.pool.empty()) {
        // target already an argmax: Z = 1 up to rounding, q = p
        out.partition_z = 1.0;
        out.alpha = 1.0;
        out.q = p;
        return out;
    }

    out.q.resize(p.size());
    for (std::uint32_t t = 0; t < dist.vocab_size(); ++t) {
        out.q[t] = out.alpha * (in_pool[t] ? r : p[t]);
    }
    return out;
}

BruteForceResult brute_force_kl(const TokenDistribution & dist, std::uint32_t target) {
    const Eigen::VectorXd & p = dist.probs;
    require(target < dist.vocab_size(), Errc::index_out_of_range, "target token out of range");
    require(dist.vocab_size() <= 20, Errc::vocab_too_large,
            "brute force enumeration capped at vocab 20");
    require(p[target] > 0.0, Errc::zero_target_prob, "target token has zero probability");

    std::vector<std::uint32_t> others;
    for (std::uint32_t t = 0; t < dist.vocab_size(); ++t) {
        if (t != target) others.push_back(t);
    }
    const std::uint32_t m = static_cast<std::uint32_t>(others.size());
    constexpr double kFeasSlack = 1e-12;

    BruteForceResult best;
    best.kl_nats = std::numeric_limits<double>::infinity();
    for (std::uint64_t mask = 0; mask < (1ull << m); ++mask) {
        double log_sum = std::log(p[target]);
        std::size_t pooled = 1;
        for (std::uint32_t i = 0; i < m; ++i) {
            if (mask & (1ull << i)) {
                if (p[others[i]] <= 0.0) {
                    log_sum = -std::numeric_limits<double>::infinity();
                }
                log_sum += std::log(p[others[i]]);
                ++pooled;
            }
        }
        const double r = std::exp(log_sum / static_cast<double>(pooled));

        bool feasible = true;
        double unpooled_mass = 0.0;
        for (std::uint32_t i = 0; i < m && feasible; ++i) {
            const double pi = p[others[i]];
            if (mask & (1ull << i)) {
                feasible = pi >= r * (1.0 - kFeasSlack); // dual: pooled tokens sit at or above r
            } else {
                feasible = pi <= r * (1.0 + kFeasSlack); // primal: q_t <= q_target off the pool
                unpooled_mass += pi;
            }
        }
        if (!feasible) continue;

        const double z = static_cast<double>(pooled) * r + unpooled_mass;
        const double kl = std::log(1.0 / z);
        if (kl < best.kl_nats) {
            best.kl_nats = kl;
            best.pool.clear();
            for (std::uint32_t i = 0; i < m; ++i) {
                if (mask & (1ull << i)) best.pool.push_back(others[i]);
            }
        }
    }
    require(std::isfinite(best.kl_nats), Errc::invalid_argument,
            "no feasible pooling found (malformed distribution)");
    if (best.kl_nats < 0.0 && best.kl_nats > -1e-15) best.kl_nats = 0.0;
    return best;
}

BucketedVocab make_bucketed_vocab(const TokenDistribution & dist,
                                  std::vector<std::uint32_t> bucket_of,
                                  std::uint32_t bucket_count) {
    require(bucket_count >= 1, Errc::invalid_argument, "bucket count must be >= 1");
    require(bucket_of.size() == dist.vocab_size(), Errc::dimension_mismatch,
            "bucket labels do not cover the vocabulary");
    BucketedVocab out;
    out.bucket_count = bucket_count;
    out.bucket_of = std::move(bucket_of);
    out.per_bucket_argmax.assign(bucket_count, std::numeric_limits<std::uint32_t>::max());
    std::vector<double> best(bucket_count, -1.0);
    for (std::uint32_t t = 0; t < dist.vocab_size(); ++t) {
        const std::uint32_t b = out.bucket_of[t];
        require(b < bucket_count, Errc::index_out_of_range, "bucket label out of range");
        if (dist.probs[t] > best[b]) {
            best[b] = dist.probs[t];
            out.per_bucket_argmax[b] = t;
        }
    }
    for (std::uint32_t b = 0; b < bucket_count; ++b) {
        require(out.per_bucket_argmax[b] != std::numeric_limits<std::uint32_t>::max(),
                Errc::empty_bucket, "bucket " + std::to_string(b) + " is empty");
    }
    return out;
}

ExpectedKl expected_kl(const TokenDistribution & dist, const BucketedVocab & buckets) {
    const std::uint32_t n = buckets.bucket_count;
    double direct = 0.0;
    double non_argmax_sum = 0.0;
    std::uint32_t non_argmax_count = 0;
    const double p_max = dist.probs.maxCoeff();
    for (std::uint32_t b = 0; b < n; ++b) {
        const std::uint32_t t = buckets.per_bucket_argmax[b];
        const PooledSolution sol = optimal_pool(dist, t);
        direct += sol.kl_nats;
        if (dist.probs[t] < p_max) {
            non_argmax_sum += sol.kl_nats;
            ++non_argmax_count;
        }
    }
    ExpectedKl out;
    out.nats = direct / static_cast<double>(n);
    out.bits = out.nats / std::log(2.0);
    out.closed_form_nats = non_argmax_count == 0
                               ? 0.0
                               : (static_cast<double>(n - 1) / static_cast<double>(n)) *
                                     (non_argmax_sum / static_cast<double>(non_argmax_count));
    require(std::abs(out.closed_form_nats - out.nats) <= 1e-9, Errc::invalid_argument,
            "expected-KL closed form disagrees with the direct average");
    return out;
}

double ppl_lower_bound(std::uint64_t bucket_count) {
    require(bucket_count >= 1, Errc::invalid_argument, "bucket count must be >= 1");
    const double n = static_cast<double>(bucket_count);
    return std::exp2((n - 1.0) / n);
}

DistributionFamily peaked_distribution_family(std::uint32_t vocab) {
    require(vocab >= 2, Errc::invalid_argument, "family needs vocab >= 2");
    return [vocab](SplitMix64 & rng) {
        Eigen::VectorXd logits(vocab);
        for (std::uint32_t t = 0; t < vocab; ++t) logits[t] = 2.0 * rng.next_normal();
        logits.array() -= logits.maxCoeff();
        Eigen::VectorXd probs = logits.array().exp();
        probs /= probs.sum();
        return TokenDistribution{std::move(probs)};
    };
}

double simulate_ppl(const DistributionFamily & family, std::uint32_t bucket_count,
                    std::uint64_t trials, std::uint64_t seed) {
    require(bucket_count >= 1, Errc::invalid_argument, "bucket count must be >= 1");
    require(trials >= 1, Errc::invalid_argument, "need at least one trial");
    SplitMix64 rng(seed);
    const double log2v = std::log(2.0);
    double total_loss = 0.0;
    for (std::uint64_t i = 0; i < trials; ++i) {
        const TokenDistribution p = family(rng);
        require(p.vocab_size() >= bucket_count, Errc::invalid_argument,
                "family vocabulary smaller than the bucket count");
        const std::uint32_t top = p.argmax();
        // unique-argmax precondition
        std::uint32_t ties = 0;
        const double p_top = p.probs[top];
        for (std::uint32_t t = 0; t < p.vocab_size(); ++t) ties += p.probs[t] == p_top ? 1 : 0;
        require(ties == 1, Errc::invalid_argument, "drawn distribution has a tied argmax");

        // round-robin bucketing: token t lives in bucket t mod n
        const std::uint64_t target_bucket = rng.next_below(bucket_count);
        if (target_bucket != top % bucket_count) total_loss += log2v;
    }
    return std::exp(total_loss / static_cast<double>(trials));
}

} // namespace stegoplane
