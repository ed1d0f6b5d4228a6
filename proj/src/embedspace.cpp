#include "stegoplane/embedspace.hpp"

#include <algorithm>
#include <cstring>
#include <fstream>
#include <limits>

#include "stegoplane/rng.hpp"

namespace stegoplane {

namespace {

constexpr char kEmbeddingMagic[8] = {'S', 'T', 'E', 'G', 'E', 'M', 'B', '1'};

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
    require(bool(in), Errc::dimension_mismatch, "embedding file truncated");
    return static_cast<std::uint32_t>(b[0]) | (static_cast<std::uint32_t>(b[1]) << 8) |
           (static_cast<std::uint32_t>(b[2]) << 16) | (static_cast<std::uint32_t>(b[3]) << 24);
}

void write_f32(std::ostream & out, float v) {
    std::uint32_t bits;
    std::memcpy(&bits, &v, 4);
    write_u32(out, bits);
}

float read_f32(std::istream & in) {
    const std::uint32_t bits = read_u32(in);
    float v;
    std::memcpy(&v, &bits, 4);
    return v;
}

} // namespace

EmbeddingMatrix::EmbeddingMatrix(RowMatrixXd rows, std::array<std::uint32_t, kLetterCount> letter_tokens)
    : rows_(std::move(rows)), letter_tokens_(letter_tokens) {
    require(rows_.rows() >= 2 && rows_.cols() >= 2, Errc::invalid_argument,
            "embedding matrix needs vocab >= 2 and dim >= 2");
    require(rows_.allFinite(), Errc::non_finite, "embedding matrix contains non-finite entries");
    std::array<bool, kLetterCount> seen{};
    for (int i = 0; i < kLetterCount; ++i) {
        require(letter_tokens_[i] < vocab_size(), Errc::index_out_of_range,
                "letter token id out of range");
        for (int j = 0; j < i; ++j) {
            require(letter_tokens_[j] != letter_tokens_[i], Errc::invalid_argument,
                    "letter token ids must be distinct");
        }
        seen[i] = true;
    }
}

std::uint32_t EmbeddingMatrix::letter_token(char letter) const {
    require(letter >= 'a' && letter <= 'z', Errc::invalid_argument,
            "letter must be in a..z");
    return letter_tokens_[letter - 'a'];
}

EmbeddingMatrix generate_synthetic_embeddings(std::uint32_t vocab, std::uint32_t dim, std::uint64_t seed) {
    require(vocab >= 28, Errc::invalid_argument, "synthetic vocabulary needs at least 28 tokens");
    require(dim >= 2, Errc::invalid_argument, "embedding dim must be >= 2");

    SplitMix64 rng(seed);
    RowMatrixXd rows(vocab, dim);
    for (std::uint32_t t = 0; t < vocab; ++t) {
        for (std::uint32_t j = 0; j < dim; ++j) {
            rows(t, j) = rng.next_normal();
        }
        rows.row(t) /= rows.row(t).norm();
    }

    std::array<std::uint32_t, kLetterCount> letters{};
    for (int i = 0; i < kLetterCount; ++i) letters[i] = static_cast<std::uint32_t>(i);
    return EmbeddingMatrix(std::move(rows), letters);
}

void EmbeddingMatrix::save(const std::filesystem::path & path) const {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    require(bool(out), Errc::io_error, "cannot open " + path.string() + " for writing");
    out.write(kEmbeddingMagic, 8);
    write_u32(out, vocab_size());
    write_u32(out, dim());
    for (std::uint32_t id : letter_tokens_) write_u32(out, id);
    for (Eigen::Index r = 0; r < rows_.rows(); ++r) {
        for (Eigen::Index c = 0; c < rows_.cols(); ++c) {
            write_f32(out, static_cast<float>(rows_(r, c)));
        }
    }
    require(bool(out), Errc::io_error, "short write to " + path.string());
}

EmbeddingMatrix EmbeddingMatrix::load(const std::filesystem::path & path) {
    std::ifstream in(path, std::ios::binary);
    require(bool(in), Errc::io_error, "cannot open " + path.string());
    char magic[8];
    in.read(magic, 8);
    require(bool(in) && std::memcmp(magic, kEmbeddingMagic, 8) == 0, Errc::bad_magic,
            "not an embedding file: " + path.string());
    const std::uint32_t vocab = read_u32(in);
    const std::uint32_t dim = read_u32(in);
    require(vocab >= 2 && dim >= 2, Errc::dimension_mismatch, "embedding file header invalid");
    std::array<std::uint32_t, kLetterCount> letters{};
    for (auto & id : letters) id = read_u32(in);
    RowMatrixXd rows(vocab, dim);
    for (std::uint32_t r = 0; r < vocab; ++r) {
        for (std::uint32_t c = 0; c < dim; ++c) {
            rows(r, c) = static_cast<double>(read_f32(in));
        }
    }
    require(in.peek() == std::char_traits<char>::eof(), Errc::dimension_mismatch,
            "embedding file has trailing bytes");
    return EmbeddingMatrix(std::move(rows), letters);
}

double median_of(std::vector<double> values) {
    require(!values.empty(), Errc::invalid_argument, "median of empty set");
    std::stable_sort(values.begin(), values.end());
    const std::size_t n = values.size();
    if (n % 2 == 1) return values[n / 2];
    return 0.5 * (values[n / 2 - 1] + values[n / 2]);
}

Hyperplane hyperplane_from_seed(const EmbeddingMatrix & embeddings, std::uint64_t seed, ThresholdRule rule) {
    SplitMix64 rng(seed);
    Eigen::VectorXd normal(embeddings.dim());
    for (Eigen::Index i = 0; i < normal.size(); ++i) normal[i] = rng.next_normal();
    normal /= normal.norm();

    double threshold = 0.0;
    if (rule == ThresholdRule::median_vocab) {
        Eigen::VectorXd scores = embeddings.rows() * normal;
        threshold = median_of(std::vector<double>(scores.data(), scores.data() + scores.size()));
    } else if (rule == ThresholdRule::median_letters) {
        std::vector<double> scores;
        scores.reserve(kLetterCount);
        for (std::uint32_t id : embeddings.letter_token_ids()) {
            scores.push_back(embeddings.rows().row(id).dot(normal));
        }
        threshold = median_of(std::move(scores));
    }
    return Hyperplane{seed, std::move(normal), threshold};
}

double project(const EmbeddingMatrix & embeddings, const Hyperplane & plane, std::uint32_t token) {
    require(plane.normal.size() == embeddings.dim(), Errc::dimension_mismatch,
            "hyperplane dim does not match embeddings");
    return embeddings.embedding(token).dot(plane.normal);
}

BucketAssignment assign_buckets(const EmbeddingMatrix & embeddings, const Hyperplane & plane) {
    require(plane.normal.size() == embeddings.dim(), Errc::dimension_mismatch,
            "hyperplane dim does not match embeddings");
    BucketAssignment out;
    out.source = BucketAssignment::Source::hyperplane;
    out.hyperplane_seed = plane.seed;
    out.buckets.resize(embeddings.vocab_size());
    Eigen::VectorXd scores = embeddings.rows() * plane.normal;
    for (Eigen::Index t = 0; t < scores.size(); ++t) {
        const std::uint8_t b = scores[t] > plane.threshold ? 1 : 0;
        out.buckets[static_cast<std::size_t>(t)] = b;
        ++out.counts[b];
    }
    return out;
}

BucketAssignment parity_buckets(std::uint32_t vocab) {
    require(vocab >= 2, Errc::invalid_argument, "parity bucketing needs vocab >= 2");
    BucketAssignment out;
    out.source = BucketAssignment::Source::parity;
    out.buckets.resize(vocab);
    for (std::uint32_t t = 0; t < vocab; ++t) {
        const std::uint8_t b = static_cast<std::uint8_t>(t % 2);
        out.buckets[t] = b;
        ++out.counts[b];
    }
    return out;
}

} // namespace stegoplane
