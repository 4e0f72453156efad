#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "bsk/bitstring.hpp"
#include "bsk/crypto.hpp"

namespace bsk {

/// Binary block code (M, K, D): length M, payload K, minimum distance D,
/// correcting e = (D-1)/2 errors. Only the repetition family is implemented;
/// for it M = K * D and D is the (odd) repeat count per payload bit.
struct CodeParams {
    std::string name = "repetition";
    std::size_t codeword_len = 384;  // M
    std::size_t payload_len = 128;   // K
    std::size_t min_distance = 3;    // D

    std::size_t correction_capability() const { return (min_distance - 1) / 2; }

    void validate() const {
        if (name != "repetition")
            throw std::invalid_argument("CodeParams: unknown code family '" + name + "'");
        if (payload_len == 0 || min_distance == 0)
            throw std::invalid_argument("CodeParams: K and D must be positive");
        if (min_distance % 2 == 0)
            throw std::invalid_argument("CodeParams: repetition D must be odd");
        if (codeword_len != payload_len * min_distance)
            throw std::invalid_argument("CodeParams: repetition requires M = K * D");
    }

    bool operator==(const CodeParams&) const = default;
};

struct Codeword {
    BitString bits;    // length M
    CodeParams params;
};

/// The fuzzy-commitment artifact that travels on the wire: the codeword
/// digest and the witness-masked codeword delta = witness XOR c.
struct Commitment {
    Digest256 digest{};
    BitString delta;   // length M
    CodeParams params;

    bool operator==(const Commitment&) const = default;
};

/// Each payload bit repeated D times contiguously.
inline Codeword encode(const CodeParams& params, const BitString& payload) {
    params.validate();
    if (payload.size() != params.payload_len)
        throw std::invalid_argument("encode: payload length does not match K");
    BitString bits = BitString::zeros(params.codeword_len);
    for (std::size_t i = 0; i < params.payload_len; ++i) {
        if (!payload.get(i)) continue;
        for (std::size_t j = 0; j < params.min_distance; ++j)
            bits.set(i * params.min_distance + j, true);
    }
    return Codeword{std::move(bits), params};
}

/// Per-block majority vote. Always yields a K-bit payload; correctness beyond
/// the capability e is not guaranteed -- the digest check at decommit is the
/// arbiter.
inline BitString decode(const CodeParams& params, const BitString& word) {
    params.validate();
    if (word.size() != params.codeword_len)
        throw std::invalid_argument("decode: word length does not match M");
    BitString payload = BitString::zeros(params.payload_len);
    for (std::size_t i = 0; i < params.payload_len; ++i) {
        std::size_t ones = 0;
        for (std::size_t j = 0; j < params.min_distance; ++j)
            ones += word.get(i * params.min_distance + j) ? 1 : 0;
        payload.set(i, ones * 2 > params.min_distance);
    }
    return payload;
}

/// Public, deterministic, injective K -> M map: the encoding of the value.
/// Used wherever a 128-bit secret must be XORed with an M-bit witness.
inline BitString expand(const CodeParams& params, const BitString& value) {
    return encode(params, value).bits;
}

/// Commit phase: c = encode(payload), output (h(c), witness XOR c).
inline Commitment commit(const CodeParams& params, const BitString& payload,
                         const BitString& witness) {
    if (witness.size() != params.codeword_len)
        throw std::invalid_argument("commit: witness length does not match M");
    const Codeword c = encode(params, payload);
    Commitment out;
    out.digest = sha256(c.bits.bytes());
    out.delta = witness ^ c.bits;
    out.params = params;
    return out;
}

/// Decommit phase: decode(witness' XOR delta), accept iff the re-encoded
/// payload hashes to the stored digest. nullopt means the witness was too far
/// or the commitment was tampered with; no partial output is usable.
inline std::optional<BitString> decommit(const Commitment& commitment,
                                         const BitString& witness_prime) {
    if (witness_prime.size() != commitment.params.codeword_len)
        throw std::invalid_argument("decommit: witness length does not match M");
    const BitString payload = decode(commitment.params, witness_prime ^ commitment.delta);
    const Codeword reencoded = encode(commitment.params, payload);
    if (sha256(reencoded.bits.bytes()) != commitment.digest) return std::nullopt;
    return payload;
}

/// Wire layout: digest (32 bytes) || delta (M/8 bytes), big-endian bit order.
inline std::vector<std::uint8_t> commitment_bytes(const Commitment& c) {
    std::vector<std::uint8_t> out;
    out.reserve(c.digest.size() + c.delta.bytes().size());
    out.insert(out.end(), c.digest.begin(), c.digest.end());
    out.insert(out.end(), c.delta.bytes().begin(), c.delta.bytes().end());
    return out;
}

inline Commitment parse_commitment(std::span<const std::uint8_t> bytes,
                                   const CodeParams& params) {
    const std::size_t delta_bytes = (params.codeword_len + 7) / 8;
    if (bytes.size() != 32 + delta_bytes)
        throw std::invalid_argument("parse_commitment: wrong byte count");
    Commitment c;
    std::copy(bytes.begin(), bytes.begin() + 32, c.digest.begin());
    c.delta = BitString::from_bytes(bytes.subspan(32), params.codeword_len);
    c.params = params;
    return c;
}

} // namespace bsk
