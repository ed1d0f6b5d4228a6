#include "stegoplane/channel.hpp"

#include <cmath>
#include <fstream>

#include <nlohmann/json.hpp>

#include "stegoplane/rng.hpp"

namespace stegoplane {

namespace {

// Mixed into prompt_seed for the greedy compliance coin so greedy
// transcripts stay a pure function of (prompt_seed, plan, buckets).
constexpr std::uint64_t kTransmitNoiseTag = 0x5354454741544fBDull;

} // namespace

TokenDistribution TokenDistribution::validated(Eigen::VectorXd probs) {
    require(probs.size() >= 2, Errc::invalid_argument, "distribution needs at least 2 tokens");
    require(probs.allFinite(), Errc::non_finite, "distribution has non-finite entries");
    require((probs.array() >= 0.0).all(), Errc::invalid_argument, "distribution has negative mass");
    require(std::abs(probs.sum() - 1.0) <= 1e-9, Errc::invalid_argument,
            "distribution must sum to 1 within 1e-9");
    return TokenDistribution{std::move(probs)};
}

double TokenDistribution::entropy_nats() const {
    double h = 0.0;
    for (Eigen::Index i = 0; i < probs.size(); ++i) {
        const double p = probs[i];
        if (p > 0.0) h -= p * std::log(p);
    }
    return h;
}

std::uint32_t TokenDistribution::argmax() const {
    Eigen::Index best = 0;
    probs.maxCoeff(&best);
    // maxCoeff returns the first maximal index for ties
    return static_cast<std::uint32_t>(best);
}

ToyLM::ToyLM(const EmbeddingMatrix & embeddings, std::uint64_t prompt_seed, double temperature,
             double mixing)
    : embeddings_(&embeddings), prompt_seed_(prompt_seed), temperature_(temperature), mixing_(mixing) {
    require(temperature > 0.0, Errc::invalid_argument, "temperature must be positive");
    require(mixing >= 0.0 && mixing < 1.0, Errc::invalid_argument, "mixing must be in [0, 1)");
    SplitMix64 rng(prompt_seed);
    state_.resize(embeddings.dim());
    for (Eigen::Index i = 0; i < state_.size(); ++i) state_[i] = rng.next_normal();
    state_ /= state_.norm();
}

TokenDistribution ToyLM::next() const {
    Eigen::VectorXd logits = (embeddings_->rows() * state_) / temperature_;
    logits.array() -= logits.maxCoeff();
    Eigen::VectorXd probs = logits.array().exp();
    probs /= probs.sum();
    return TokenDistribution{std::move(probs)};
}

void ToyLM::advance(std::uint32_t token) {
    require(token < embeddings_->vocab_size(), Errc::index_out_of_range, "token out of range");
    state_ = mixing_ * state_ + (1.0 - mixing_) * embeddings_->rows().row(token).transpose();
    state_ /= state_.norm();
}

TokenDistribution constrain(const TokenDistribution & dist, const BucketAssignment & buckets, int bit) {
    require(bit == 0 || bit == 1, Errc::invalid_argument, "bit must be 0 or 1");
    require(buckets.vocab_size() == dist.vocab_size(), Errc::dimension_mismatch,
            "bucket assignment does not match distribution size");
    const std::uint32_t bucket_size = buckets.counts[static_cast<std::size_t>(bit)];
    require(bucket_size > 0, Errc::empty_bucket, "target bucket is empty");

    Eigen::VectorXd probs = dist.probs;
    double mass = 0.0;
    for (Eigen::Index t = 0; t < probs.size(); ++t) {
        if (buckets.buckets[static_cast<std::size_t>(t)] != bit) {
            probs[t] = 0.0;
        } else {
            mass += probs[t];
        }
    }
    if (mass < 1e-300) {
        // all surviving mass underflowed; uniform over the bucket
        const double u = 1.0 / bucket_size;
        for (Eigen::Index t = 0; t < probs.size(); ++t) {
            probs[t] = buckets.buckets[static_cast<std::size_t>(t)] == bit ? u : 0.0;
        }
    } else {
        probs /= mass;
    }
    return TokenDistribution{std::move(probs)};
}

namespace {

std::uint32_t pick_greedy(const TokenDistribution & dist) {
    return dist.argmax();
}

std::uint32_t pick_sample(const TokenDistribution & dist, SplitMix64 & rng) {
    const double u = rng.next_unit();
    double acc = 0.0;
    Eigen::Index last_positive = 0;
    for (Eigen::Index t = 0; t < dist.probs.size(); ++t) {
        if (dist.probs[t] <= 0.0) continue;
        acc += dist.probs[t];
        last_positive = t;
        if (u <= acc) return static_cast<std::uint32_t>(t);
    }
    return static_cast<std::uint32_t>(last_positive); // rounding slack at u ~ 1
}

} // namespace

Transcript transmit(ToyLM lm, const PayloadPlan & plan, const BucketAssignment & buckets,
                    SampleMode mode, double compliance_rate) {
    require(compliance_rate >= 0.0 && compliance_rate <= 1.0, Errc::invalid_argument,
            "compliance rate must be in [0, 1]");
    require(!plan.tx_bits.empty(), Errc::invalid_argument, "payload plan has no bits");

    Transcript out;
    out.prompt_seed = lm.prompt_seed();
    out.secret = plan.secret;
    out.encoder = plan.encoder;
    out.xor_masked = plan.mask.has_value();
    out.tx_bits = plan.tx_bits;
    out.tokens.reserve(plan.tx_bits.size());
    out.compliance.reserve(plan.tx_bits.size());

    SplitMix64 rng(mode.kind == SampleMode::Kind::sample
                       ? mode.seed
                       : splitmix64_mix(lm.prompt_seed() + kTransmitNoiseTag));

    for (const std::uint8_t bit : plan.tx_bits) {
        const TokenDistribution base = lm.next();
        const bool comply = compliance_rate >= 1.0 || rng.next_unit() <= compliance_rate;
        const int target = comply ? bit : 1 - bit;
        const TokenDistribution dist = constrain(base, buckets, target);
        const std::uint32_t token = mode.kind == SampleMode::Kind::greedy
                                        ? pick_greedy(dist)
                                        : pick_sample(dist, rng);
        out.tokens.push_back(token);
        out.compliance.push_back(buckets.buckets[token] == bit ? 1 : 0);
        lm.advance(token);
    }
    return out;
}

std::optional<Secret> receive(const Transcript & transcript, const BucketAssignment & buckets,
                              const Decoder & decoder) {
    require(transcript.tokens.size() % kSecretBits == 0, Errc::length_mismatch,
            "transcript length must be a multiple of 32");
    const std::size_t repeats = transcript.tokens.size() / kSecretBits;

    BitVec bits(kSecretBits, 0);
    for (int j = 0; j < kSecretBits; ++j) {
        std::size_t ones = 0;
        for (std::size_t r = 0; r < repeats; ++r) {
            const std::uint32_t token = transcript.tokens[r * kSecretBits + static_cast<std::size_t>(j)];
            require(token < buckets.vocab_size(), Errc::index_out_of_range,
                    "transcript token outside bucket table");
            ones += buckets.buckets[token];
        }
        bits[static_cast<std::size_t>(j)] = 2 * ones > repeats ? 1 : 0; // ties toward 0
    }

    if (decoder.keystream.has_value()) {
        bits = xor_mask(bits, *decoder.keystream);
    }
    if (decoder.encoder == EncoderKind::embedding) {
        require(decoder.codebook != nullptr, Errc::invalid_argument,
                "embedding decode needs a codebook");
        return decode_embedding(*decoder.codebook, bits);
    }
    return decode_ascii(bits);
}

double exact_match_rate(std::span<const Transcript> transcripts, std::span<const PayloadPlan> plans) {
    require(transcripts.size() == plans.size(), Errc::length_mismatch,
            "transcripts and plans must be matched lists");
    require(!transcripts.empty(), Errc::invalid_argument, "no transcripts");
    std::size_t hits = 0;
    for (std::size_t i = 0; i < transcripts.size(); ++i) {
        const Transcript & tr = transcripts[i];
        require(tr.tx_bits == plans[i].tx_bits, Errc::length_mismatch,
                "transcript bits do not match plan at index " + std::to_string(i));
        bool all = true;
        for (const std::uint8_t ok : tr.compliance) {
            if (!ok) {
                all = false;
                break;
            }
        }
        hits += all ? 1 : 0;
    }
    return static_cast<double>(hits) / static_cast<double>(transcripts.size());
}

void write_transcripts(std::span<const Transcript> transcripts, const std::filesystem::path & path) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    require(bool(out), Errc::io_error, "cannot open " + path.string() + " for writing");
    for (const Transcript & tr : transcripts) {
        nlohmann::json line;
        line["prompt_seed"] = tr.prompt_seed;
        line["secret"] = tr.secret.str();
        line["encoder"] = encoder_name(tr.encoder);
        line["xor_masked"] = tr.xor_masked;
        line["tx_bits"] = bits_to_string(tr.tx_bits);
        line["tokens"] = tr.tokens;
        std::vector<bool> compliance(tr.compliance.begin(), tr.compliance.end());
        line["compliance"] = compliance;
        out << line.dump() << '\n';
    }
    require(bool(out), Errc::io_error, "short write to " + path.string());
}

std::vector<Transcript> read_transcripts(const std::filesystem::path & path) {
    std::ifstream in(path);
    require(bool(in), Errc::io_error, "cannot open " + path.string());
    std::vector<Transcript> out;
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty()) continue;
        nlohmann::json doc;
        try {
            doc = nlohmann::json::parse(line);
            Transcript tr;
            tr.prompt_seed = doc.at("prompt_seed").get<std::uint64_t>();
            const auto secret = Secret::parse(doc.at("secret").get<std::string>());
            require(secret.has_value(), Errc::config_invalid, "bad secret in transcript file");
            tr.secret = *secret;
            const auto encoder = encoder_from_name(doc.at("encoder").get<std::string>());
            require(encoder.has_value(), Errc::config_invalid, "bad encoder in transcript file");
            tr.encoder = *encoder;
            tr.xor_masked = doc.at("xor_masked").get<bool>();
            tr.tx_bits = bits_from_string(doc.at("tx_bits").get<std::string>());
            tr.tokens = doc.at("tokens").get<std::vector<std::uint32_t>>();
            const auto compliance = doc.at("compliance").get<std::vector<bool>>();
            tr.compliance.assign(compliance.begin(), compliance.end());
            require(tr.tokens.size() == tr.tx_bits.size() && tr.compliance.size() == tr.tx_bits.size(),
                    Errc::length_mismatch, "transcript field lengths disagree");
            out.push_back(std::move(tr));
        } catch (const nlohmann::json::exception & e) {
            fail(Errc::config_invalid,
                 "transcript parse error at line " + std::to_string(line_no) + ": " + e.what());
        }
    }
    return out;
}

} // namespace stegoplane
