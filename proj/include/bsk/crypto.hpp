#pragma once

#include <array>
#include <cstdint>
#include <cstring>
#include <span>
#include <stdexcept>
#include <vector>

#include <openssl/evp.h>
#include <openssl/hmac.h>

#include "bsk/bitstring.hpp"

namespace bsk {

using Digest256 = std::array<std::uint8_t, 32>;
using Tag128 = std::array<std::uint8_t, 16>;

/// SHA-256 one-shot. The digest implementation is fetched once per thread
/// and the context reused; the per-call cost matters in the exhaustive
/// code-capability checks.
inline Digest256 sha256(std::span<const std::uint8_t> data) {
    thread_local EVP_MD* md = EVP_MD_fetch(nullptr, "SHA256", nullptr);
    thread_local EVP_MD_CTX* ctx = EVP_MD_CTX_new();
    Digest256 out{};
    unsigned int len = 0;
    if (EVP_DigestInit_ex2(ctx, md, nullptr) != 1 ||
        EVP_DigestUpdate(ctx, data.data(), data.size()) != 1 ||
        EVP_DigestFinal_ex(ctx, out.data(), &len) != 1 || len != out.size())
        throw std::runtime_error("sha256: digest failure");
    return out;
}

/// HMAC-SHA-256 one-shot.
inline Digest256 hmac_sha256(std::span<const std::uint8_t> key,
                             std::span<const std::uint8_t> data) {
    Digest256 out{};
    unsigned int len = 0;
    if (HMAC(EVP_sha256(), key.data(), static_cast<int>(key.size()), data.data(),
             data.size(), out.data(), &len) == nullptr ||
        len != out.size())
        throw std::runtime_error("hmac_sha256: mac failure");
    return out;
}

/// Keyed 128-bit tag: HMAC-SHA-256 truncated to 16 bytes.
inline Tag128 mac128(const BitString& key, std::span<const std::uint8_t> data) {
    const Digest256 full = hmac_sha256(key.bytes(), data);
    Tag128 tag{};
    std::memcpy(tag.data(), full.data(), tag.size());
    return tag;
}

inline std::string hex(std::span<const std::uint8_t> data) {
    static const char* digits = "0123456789abcdef";
    std::string s;
    s.reserve(data.size() * 2);
    for (std::uint8_t b : data) {
        s.push_back(digits[b >> 4]);
        s.push_back(digits[b & 0xf]);
    }
    return s;
}

} // namespace bsk
