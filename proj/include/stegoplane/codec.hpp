#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "stegoplane/embedspace.hpp"
#include "stegoplane/rng.hpp"

namespace stegoplane {

inline constexpr int kSecretLetters = 4;
inline constexpr int kBitsPerLetter = 8;
inline constexpr int kSecretBits = kSecretLetters * kBitsPerLetter; // 32

// Four lowercase letters a..z. Default-constructs to "aaaa" so it can live
// inside containers and record types.
class Secret {
public:
    Secret() : letters_{'a', 'a', 'a', 'a'} {}
    explicit Secret(std::string_view text);

    static std::optional<Secret> parse(std::string_view text) noexcept;
    static Secret random(SplitMix64 & rng);

    char letter(int index) const { return letters_[static_cast<std::size_t>(index)]; }
    const std::array<char, kSecretLetters> & letters() const noexcept { return letters_; }
    std::string str() const { return std::string(letters_.begin(), letters_.end()); }

    friend bool operator==(const Secret &, const Secret &) = default;

private:
    std::array<char, kSecretLetters> letters_{};
};

// Bit sequences are vectors of 0/1 bytes; "0"/"1" strings at the interfaces.
using BitVec = std::vector<std::uint8_t>;

std::string bits_to_string(const BitVec & bits);
BitVec bits_from_string(std::string_view text);
BitVec xor_bits(const BitVec & a, const BitVec & b);

// Multi-plane code for a list of tokens: bit i of the code comes from plane
// i, with plane 0 in the most significant position.
std::vector<std::uint32_t> hyperplane_codes(const EmbeddingMatrix & embeddings,
                                            std::span<const Hyperplane> planes,
                                            std::span<const std::uint32_t> tokens);

// A collision-free letter -> 8-bit code table, reproducible from
// (embeddings, base_seed) alone. Plane i uses seed splitmix64_mix(base + i),
// i = 1..8, thresholded at the median projection over the 26 letters.
struct LetterCodebook {
    std::uint64_t base_seed = 0;
    std::array<std::uint64_t, kBitsPerLetter> hyperplane_seeds{};
    std::array<double, kBitsPerLetter> thresholds{};
    std::array<std::uint8_t, kLetterCount> codes{};
    std::uint32_t attempts_used = 0;

    // -1 where the byte is not one of the 26 codes, else the letter index.
    std::array<std::int8_t, 256> inverse{};

    std::optional<char> letter_for_code(std::uint8_t code) const {
        const std::int8_t idx = inverse[code];
        if (idx < 0) return std::nullopt;
        return static_cast<char>('a' + idx);
    }
};

// Scans base seeds start_seed, start_seed + 1, ... and returns the first
// collision-free configuration, recording how many candidates were tried.
LetterCodebook build_codebook(const EmbeddingMatrix & embeddings, std::uint64_t start_seed,
                              std::uint32_t max_attempts);

// Rebuilds the table for a known-good base seed (errors if it collides).
LetterCodebook codebook_from_base_seed(const EmbeddingMatrix & embeddings, std::uint64_t base_seed);

void save_codebook(const LetterCodebook & codebook, const std::filesystem::path & path);
LetterCodebook load_codebook(const std::filesystem::path & path);

BitVec encode_embedding(const LetterCodebook & codebook, const Secret & secret);
std::optional<Secret> decode_embedding(const LetterCodebook & codebook, const BitVec & bits);

// 8-bit ASCII per letter, most significant bit first; decode rejects bytes
// outside a..z.
BitVec encode_ascii(const Secret & secret);
std::optional<Secret> decode_ascii(const BitVec & bits);

// Secret-conditioned 32-bit keystream: bit l looks at letter 1+((l-1) mod 4)
// under a fresh hyperplane with seed splitmix64_mix(ks_seed + l) and a
// median-over-letters threshold.
struct Keystream {
    std::uint64_t seed = 0;
    std::array<std::uint64_t, kSecretBits> hyperplane_seeds{};
    std::array<double, kSecretBits> thresholds{};
    BitVec bits; // 32
};

Keystream keystream(const EmbeddingMatrix & embeddings, const Secret & secret, std::uint64_t ks_seed);

BitVec xor_mask(const BitVec & bits, const Keystream & stream);

enum class EncoderKind { embedding, ascii };

const char * encoder_name(EncoderKind kind);
std::optional<EncoderKind> encoder_from_name(std::string_view name);

// Everything the transmitter needs: the 32 secret bits and the transmitted
// stream (masked when a keystream is present, repeated `repeat` times).
// Masked streams carry no directly decodable code; this module never tries
// to decode them without the keystream.
struct PayloadPlan {
    Secret secret;
    EncoderKind encoder = EncoderKind::ascii;
    std::optional<Keystream> mask;
    std::uint32_t repeat = 1;
    BitVec secret_bits; // 32, pre-mask
    BitVec tx_bits;     // 32 * repeat, post-mask
};

PayloadPlan plan_payload(const Secret & secret, EncoderKind encoder, const LetterCodebook * codebook,
                         std::uint32_t repeat, std::optional<Keystream> mask);

} // namespace stegoplane
