#pragma once

#include <bit>
#include <cstddef>
#include <cstdint>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "bsk/rng.hpp"

namespace bsk {

/// Fixed-length bit sequence, packed MSB-first (bit 0 of the string is the
/// most significant bit of the first byte). Substrate for keys, witnesses,
/// codewords and deltas. Length is set at construction and preserved by XOR.
class BitString {
public:
    BitString() = default;

    static BitString zeros(std::size_t nbits) {
        BitString b;
        b.nbits_ = nbits;
        b.bytes_.assign((nbits + 7) / 8, 0);
        return b;
    }

    /// Parse from a string of '0'/'1' characters, e.g. "1010".
    static BitString from_bits(std::string_view s) {
        BitString b = zeros(s.size());
        for (std::size_t i = 0; i < s.size(); ++i) {
            if (s[i] == '1')
                b.set(i, true);
            else if (s[i] != '0')
                throw std::invalid_argument("BitString::from_bits: not a 0/1 string");
        }
        return b;
    }

    /// Adopt packed bytes; unused trailing bits of the last byte must be zero
    /// (enforced by masking).
    static BitString from_bytes(std::span<const std::uint8_t> data, std::size_t nbits) {
        if (data.size() != (nbits + 7) / 8)
            throw std::invalid_argument("BitString::from_bytes: byte count does not match bit length");
        BitString b;
        b.nbits_ = nbits;
        b.bytes_.assign(data.begin(), data.end());
        b.mask_tail();
        return b;
    }

    /// nbits uniform bits drawn from the generator, 8 bytes per word,
    /// big-endian within each word.
    static BitString random(std::size_t nbits, SplitMix64& g) {
        BitString b = zeros(nbits);
        std::uint64_t w = 0;
        for (std::size_t i = 0; i < b.bytes_.size(); ++i) {
            if (i % 8 == 0) w = g.next();
            b.bytes_[i] = static_cast<std::uint8_t>(w >> (56 - 8 * (i % 8)));
        }
        b.mask_tail();
        return b;
    }

    std::size_t size() const { return nbits_; }
    bool empty() const { return nbits_ == 0; }

    bool get(std::size_t i) const {
        check_index(i);
        return (bytes_[i / 8] >> (7 - i % 8)) & 1u;
    }

    void set(std::size_t i, bool v) {
        check_index(i);
        const std::uint8_t m = static_cast<std::uint8_t>(1u << (7 - i % 8));
        if (v)
            bytes_[i / 8] |= m;
        else
            bytes_[i / 8] &= static_cast<std::uint8_t>(~m);
    }

    void flip(std::size_t i) { set(i, !get(i)); }

    BitString operator^(const BitString& o) const {
        if (nbits_ != o.nbits_)
            throw std::invalid_argument("BitString: XOR of unequal lengths");
        BitString r = *this;
        for (std::size_t i = 0; i < bytes_.size(); ++i) r.bytes_[i] ^= o.bytes_[i];
        return r;
    }

    BitString& operator^=(const BitString& o) { return *this = *this ^ o; }

    bool operator==(const BitString& o) const = default;

    const std::vector<std::uint8_t>& bytes() const { return bytes_; }

    std::size_t count_ones() const {
        std::size_t n = 0;
        for (std::uint8_t b : bytes_) n += static_cast<std::size_t>(std::popcount(b));
        return n;
    }

    std::string to_bit_string() const {
        std::string s(nbits_, '0');
        for (std::size_t i = 0; i < nbits_; ++i)
            if (get(i)) s[i] = '1';
        return s;
    }

    std::string to_hex() const {
        static const char* digits = "0123456789abcdef";
        std::string s;
        s.reserve(bytes_.size() * 2);
        for (std::uint8_t b : bytes_) {
            s.push_back(digits[b >> 4]);
            s.push_back(digits[b & 0xf]);
        }
        return s;
    }

private:
    void check_index(std::size_t i) const {
        if (i >= nbits_) throw std::out_of_range("BitString: bit index out of range");
    }

    void mask_tail() {
        const std::size_t tail = nbits_ % 8;
        if (tail != 0 && !bytes_.empty())
            bytes_.back() &= static_cast<std::uint8_t>(0xffu << (8 - tail));
    }

    std::vector<std::uint8_t> bytes_;
    std::size_t nbits_ = 0;
};

/// Count of differing positions. Symmetric, zero iff equal.
inline std::size_t hamming(const BitString& a, const BitString& b) {
    if (a.size() != b.size())
        throw std::invalid_argument("hamming: unequal lengths");
    std::size_t n = 0;
    for (std::size_t i = 0; i < a.bytes().size(); ++i)
        n += static_cast<std::size_t>(std::popcount(static_cast<std::uint8_t>(a.bytes()[i] ^ b.bytes()[i])));
    return n;
}

/// True iff the Hamming distance is no more than t (boundary inclusive).
inline bool similar(const BitString& a, const BitString& b, std::size_t t) {
    return hamming(a, b) <= t;
}

} // namespace bsk
