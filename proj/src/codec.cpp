#include "stegoplane/codec.hpp"

#include <algorithm>
#include <cinttypes>
#include <cstdio>
#include <fstream>
#include <set>
#include <sstream>

#include <nlohmann/json.hpp>

namespace stegoplane {

Secret::Secret(std::string_view text) {
    auto parsed = parse(text);
    require(parsed.has_value(), Errc::invalid_argument,
            "secret must be exactly 4 letters in a..z, got \"" + std::string(text) + "\"");
    letters_ = parsed->letters_;
}

std::optional<Secret> Secret::parse(std::string_view text) noexcept {
    if (text.size() != kSecretLetters) return std::nullopt;
    Secret s;
    for (int i = 0; i < kSecretLetters; ++i) {
        const char c = text[static_cast<std::size_t>(i)];
        if (c < 'a' || c > 'z') return std::nullopt;
        s.letters_[static_cast<std::size_t>(i)] = c;
    }
    return s;
}

Secret Secret::random(SplitMix64 & rng) {
    Secret s;
    for (auto & c : s.letters_) c = static_cast<char>('a' + rng.next_below(26));
    return s;
}

std::string bits_to_string(const BitVec & bits) {
    std::string out(bits.size(), '0');
    for (std::size_t i = 0; i < bits.size(); ++i) {
        out[i] = bits[i] ? '1' : '0';
    }
    return out;
}

BitVec bits_from_string(std::string_view text) {
    BitVec out(text.size());
    for (std::size_t i = 0; i < text.size(); ++i) {
        require(text[i] == '0' || text[i] == '1', Errc::invalid_argument,
                "bit strings may only contain 0 and 1");
        out[i] = text[i] == '1' ? 1 : 0;
    }
    return out;
}

BitVec xor_bits(const BitVec & a, const BitVec & b) {
    require(a.size() == b.size(), Errc::length_mismatch, "bit length mismatch in xor");
    BitVec out(a.size());
    for (std::size_t i = 0; i < a.size(); ++i) out[i] = a[i] ^ b[i];
    return out;
}

std::vector<std::uint32_t> hyperplane_codes(const EmbeddingMatrix & embeddings,
                                            std::span<const Hyperplane> planes,
                                            std::span<const std::uint32_t> tokens) {
    require(planes.size() <= 32, Errc::invalid_argument, "at most 32 planes per code");
    std::vector<std::uint32_t> codes(tokens.size(), 0);
    for (std::size_t p = 0; p < planes.size(); ++p) {
        const std::uint32_t bit_pos = static_cast<std::uint32_t>(planes.size() - 1 - p);
        for (std::size_t t = 0; t < tokens.size(); ++t) {
            const double score = project(embeddings, planes[p], tokens[t]);
            if (score > planes[p].threshold) codes[t] |= (1u << bit_pos);
        }
    }
    return codes;
}

namespace {

struct CandidateCodes {
    std::array<Hyperplane, kBitsPerLetter> planes;
    std::array<std::uint8_t, kLetterCount> codes;
    bool collision_free;
};

CandidateCodes codes_for_base_seed(const EmbeddingMatrix & embeddings, std::uint64_t base_seed) {
    CandidateCodes out;
    std::vector<Hyperplane> planes;
    planes.reserve(kBitsPerLetter);
    for (int i = 1; i <= kBitsPerLetter; ++i) {
        planes.push_back(hyperplane_from_seed(
            embeddings, splitmix64_mix(base_seed + static_cast<std::uint64_t>(i)),
            ThresholdRule::median_letters));
    }
    std::vector<std::uint32_t> letters(embeddings.letter_token_ids().begin(),
                                       embeddings.letter_token_ids().end());
    const auto codes = hyperplane_codes(embeddings, planes, letters);
    std::set<std::uint8_t> distinct;
    for (int i = 0; i < kLetterCount; ++i) {
        out.codes[static_cast<std::size_t>(i)] = static_cast<std::uint8_t>(codes[static_cast<std::size_t>(i)]);
        distinct.insert(out.codes[static_cast<std::size_t>(i)]);
    }
    for (int i = 0; i < kBitsPerLetter; ++i) out.planes[static_cast<std::size_t>(i)] = std::move(planes[static_cast<std::size_t>(i)]);
    out.collision_free = distinct.size() == kLetterCount;
    return out;
}

LetterCodebook finish_codebook(std::uint64_t base_seed, const CandidateCodes & cand,
                               std::uint32_t attempts) {
    LetterCodebook cb;
    cb.base_seed = base_seed;
    cb.attempts_used = attempts;
    for (int i = 0; i < kBitsPerLetter; ++i) {
        cb.hyperplane_seeds[static_cast<std::size_t>(i)] = cand.planes[static_cast<std::size_t>(i)].seed;
        cb.thresholds[static_cast<std::size_t>(i)] = cand.planes[static_cast<std::size_t>(i)].threshold;
    }
    cb.codes = cand.codes;
    cb.inverse.fill(-1);
    for (int i = 0; i < kLetterCount; ++i) cb.inverse[cb.codes[static_cast<std::size_t>(i)]] = static_cast<std::int8_t>(i);
    return cb;
}

} // namespace

LetterCodebook build_codebook(const EmbeddingMatrix & embeddings, std::uint64_t start_seed,
                              std::uint32_t max_attempts) {
    require(max_attempts >= 1, Errc::invalid_argument, "max_attempts must be >= 1");
    for (std::uint32_t attempt = 1; attempt <= max_attempts; ++attempt) {
        const std::uint64_t base = start_seed + (attempt - 1);
        const CandidateCodes cand = codes_for_base_seed(embeddings, base);
        if (cand.collision_free) {
            return finish_codebook(base, cand, attempt);
        }
    }
    fail(Errc::exhausted, "no collision-free codebook within " + std::to_string(max_attempts) +
                              " attempts from seed " + std::to_string(start_seed));
}

LetterCodebook codebook_from_base_seed(const EmbeddingMatrix & embeddings, std::uint64_t base_seed) {
    const CandidateCodes cand = codes_for_base_seed(embeddings, base_seed);
    require(cand.collision_free, Errc::invalid_argument,
            "base seed " + std::to_string(base_seed) + " does not yield distinct letter codes");
    return finish_codebook(base_seed, cand, 1);
}

namespace {

void append_code_bits(BitVec & bits, std::uint8_t code) {
    for (int b = kBitsPerLetter - 1; b >= 0; --b) {
        bits.push_back(static_cast<std::uint8_t>((code >> b) & 1));
    }
}

std::uint8_t byte_from_bits(const BitVec & bits, std::size_t offset) {
    std::uint8_t code = 0;
    for (int b = 0; b < kBitsPerLetter; ++b) {
        code = static_cast<std::uint8_t>((code << 1) | bits[offset + static_cast<std::size_t>(b)]);
    }
    return code;
}

} // namespace

BitVec encode_embedding(const LetterCodebook & codebook, const Secret & secret) {
    BitVec bits;
    bits.reserve(kSecretBits);
    for (int i = 0; i < kSecretLetters; ++i) {
        append_code_bits(bits, codebook.codes[static_cast<std::size_t>(secret.letter(i) - 'a')]);
    }
    return bits;
}

std::optional<Secret> decode_embedding(const LetterCodebook & codebook, const BitVec & bits) {
    if (bits.size() != kSecretBits) return std::nullopt;
    std::string letters;
    for (int i = 0; i < kSecretLetters; ++i) {
        const auto letter = codebook.letter_for_code(byte_from_bits(bits, static_cast<std::size_t>(i) * kBitsPerLetter));
        if (!letter) return std::nullopt;
        letters.push_back(*letter);
    }
    return Secret::parse(letters);
}

BitVec encode_ascii(const Secret & secret) {
    BitVec bits;
    bits.reserve(kSecretBits);
    for (int i = 0; i < kSecretLetters; ++i) {
        append_code_bits(bits, static_cast<std::uint8_t>(secret.letter(i)));
    }
    return bits;
}

std::optional<Secret> decode_ascii(const BitVec & bits) {
    if (bits.size() != kSecretBits) return std::nullopt;
    std::string letters;
    for (int i = 0; i < kSecretLetters; ++i) {
        const std::uint8_t byte = byte_from_bits(bits, static_cast<std::size_t>(i) * kBitsPerLetter);
        if (byte < 'a' || byte > 'z') return std::nullopt;
        letters.push_back(static_cast<char>(byte));
    }
    return Secret::parse(letters);
}

Keystream keystream(const EmbeddingMatrix & embeddings, const Secret & secret, std::uint64_t ks_seed) {
    Keystream out;
    out.seed = ks_seed;
    out.bits.resize(kSecretBits);
    for (int l = 1; l <= kSecretBits; ++l) {
        const int letter_index = (l - 1) % kSecretLetters; // cycles 1,2,3,4,1,...
        const Hyperplane plane = hyperplane_from_seed(
            embeddings, splitmix64_mix(ks_seed + static_cast<std::uint64_t>(l)),
            ThresholdRule::median_letters);
        const std::uint32_t token = embeddings.letter_token(secret.letter(letter_index));
        const double score = project(embeddings, plane, token);
        out.hyperplane_seeds[static_cast<std::size_t>(l - 1)] = plane.seed;
        out.thresholds[static_cast<std::size_t>(l - 1)] = plane.threshold;
        out.bits[static_cast<std::size_t>(l - 1)] = score > plane.threshold ? 1 : 0;
    }
    return out;
}

BitVec xor_mask(const BitVec & bits, const Keystream & stream) {
    return xor_bits(bits, stream.bits);
}

const char * encoder_name(EncoderKind kind) {
    return kind == EncoderKind::embedding ? "embedding" : "ascii";
}

std::optional<EncoderKind> encoder_from_name(std::string_view name) {
    if (name == "embedding") return EncoderKind::embedding;
    if (name == "ascii") return EncoderKind::ascii;
    return std::nullopt;
}

PayloadPlan plan_payload(const Secret & secret, EncoderKind encoder, const LetterCodebook * codebook,
                         std::uint32_t repeat, std::optional<Keystream> mask) {
    require(repeat >= 1, Errc::invalid_argument, "repeat must be >= 1");
    require(encoder == EncoderKind::ascii || codebook != nullptr, Errc::invalid_argument,
            "embedding encoder needs a codebook");
    PayloadPlan plan;
    plan.secret = secret;
    plan.encoder = encoder;
    plan.repeat = repeat;
    plan.secret_bits = encoder == EncoderKind::embedding ? encode_embedding(*codebook, secret)
                                                         : encode_ascii(secret);
    BitVec unit = plan.secret_bits;
    if (mask.has_value()) {
        unit = xor_mask(unit, *mask);
        plan.mask = std::move(mask);
    }
    plan.tx_bits.reserve(unit.size() * repeat);
    for (std::uint32_t r = 0; r < repeat; ++r) {
        plan.tx_bits.insert(plan.tx_bits.end(), unit.begin(), unit.end());
    }
    return plan;
}

namespace {

std::string format_seventeen(double v) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

} // namespace

void save_codebook(const LetterCodebook & codebook, const std::filesystem::path & path) {
    // Hand-rolled writer so thresholds carry exactly 17 significant digits.
    std::ostringstream out;
    out << "{\n";
    out << "  \"base_seed\": " << codebook.base_seed << ",\n";
    out << "  \"hyperplane_seeds\": [";
    for (int i = 0; i < kBitsPerLetter; ++i) {
        out << (i ? ", " : "") << codebook.hyperplane_seeds[static_cast<std::size_t>(i)];
    }
    out << "],\n";
    out << "  \"thresholds\": [";
    for (int i = 0; i < kBitsPerLetter; ++i) {
        out << (i ? ", " : "") << format_seventeen(codebook.thresholds[static_cast<std::size_t>(i)]);
    }
    out << "],\n";
    out << "  \"attempts_used\": " << codebook.attempts_used << ",\n";
    out << "  \"codes\": {";
    for (int i = 0; i < kLetterCount; ++i) {
        const std::uint8_t code = codebook.codes[static_cast<std::size_t>(i)];
        out << (i ? ", " : "") << '"' << static_cast<char>('a' + i) << "\": \"";
        for (int b = kBitsPerLetter - 1; b >= 0; --b) out << (((code >> b) & 1) ? '1' : '0');
        out << '"';
    }
    out << "}\n";
    out << "}\n";

    std::ofstream file(path, std::ios::binary | std::ios::trunc);
    require(bool(file), Errc::io_error, "cannot open " + path.string() + " for writing");
    file << out.str();
    require(bool(file), Errc::io_error, "short write to " + path.string());
}

LetterCodebook load_codebook(const std::filesystem::path & path) {
    std::ifstream file(path);
    require(bool(file), Errc::io_error, "cannot open " + path.string());
    nlohmann::json doc;
    try {
        file >> doc;
    } catch (const nlohmann::json::exception & e) {
        fail(Errc::config_invalid, "codebook parse error: " + std::string(e.what()));
    }
    LetterCodebook cb;
    try {
        cb.base_seed = doc.at("base_seed").get<std::uint64_t>();
        const auto seeds = doc.at("hyperplane_seeds");
        const auto thresholds = doc.at("thresholds");
        require(seeds.size() == kBitsPerLetter && thresholds.size() == kBitsPerLetter,
                Errc::config_invalid, "codebook needs 8 seeds and 8 thresholds");
        for (int i = 0; i < kBitsPerLetter; ++i) {
            cb.hyperplane_seeds[static_cast<std::size_t>(i)] = seeds[static_cast<std::size_t>(i)].get<std::uint64_t>();
            cb.thresholds[static_cast<std::size_t>(i)] = thresholds[static_cast<std::size_t>(i)].get<double>();
        }
        cb.attempts_used = doc.at("attempts_used").get<std::uint32_t>();
        const auto codes = doc.at("codes");
        require(codes.size() == kLetterCount, Errc::config_invalid, "codebook needs 26 codes");
        cb.inverse.fill(-1);
        for (int i = 0; i < kLetterCount; ++i) {
            const std::string key(1, static_cast<char>('a' + i));
            const auto bits = bits_from_string(codes.at(key).get<std::string>());
            require(bits.size() == kBitsPerLetter, Errc::config_invalid, "codes must be 8 bits");
            cb.codes[static_cast<std::size_t>(i)] = byte_from_bits(bits, 0);
        }
        for (int i = 0; i < kLetterCount; ++i) {
            const std::uint8_t code = cb.codes[static_cast<std::size_t>(i)];
            require(cb.inverse[code] == -1, Errc::config_invalid, "codebook codes collide");
            cb.inverse[code] = static_cast<std::int8_t>(i);
        }
    } catch (const nlohmann::json::exception & e) {
        fail(Errc::config_invalid, "codebook field error: " + std::string(e.what()));
    }
    return cb;
}

} // namespace stegoplane
