#pragma once

#include <algorithm>
#include <array>
#include <cstddef>
#include <cstdint>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace medchain {

using Bytes = std::vector<std::uint8_t>;
using ByteView = std::span<const std::uint8_t>;

/// Raised when a byte sequence does not parse as the expected canonical form.
class DecodeError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

std::string to_hex(ByteView data);
/// Lowercase or uppercase input accepted; throws DecodeError on odd length or bad digit.
Bytes from_hex(std::string_view hex);

inline ByteView as_bytes(std::string_view s) {
    return {reinterpret_cast<const std::uint8_t*>(s.data()), s.size()};
}

template <std::size_t N>
ByteView as_bytes(const std::array<std::uint8_t, N>& a) {
    return {a.data(), a.size()};
}

/// Appends fields in the canonical big-endian layout shared by every on-ledger record.
/// Variable-length fields carry a 4-byte big-endian length prefix.
class ByteWriter {
public:
    ByteWriter& u8(std::uint8_t v);
    ByteWriter& u32(std::uint32_t v);
    ByteWriter& u64(std::uint64_t v);
    ByteWriter& fixed(ByteView data);
    ByteWriter& var(ByteView data);
    ByteWriter& var(std::string_view s) { return var(as_bytes(s)); }

    template <std::size_t N>
    ByteWriter& fixed(const std::array<std::uint8_t, N>& a) {
        return fixed(ByteView{a.data(), N});
    }

    const Bytes& bytes() const& { return out_; }
    Bytes take() && { return std::move(out_); }

private:
    Bytes out_;
};

class ByteReader {
public:
    explicit ByteReader(ByteView data) : data_(data) {}

    std::uint8_t u8();
    std::uint32_t u32();
    std::uint64_t u64();
    ByteView fixed(std::size_t n);
    ByteView var();
    std::string var_string();

    template <std::size_t N>
    std::array<std::uint8_t, N> array() {
        std::array<std::uint8_t, N> out{};
        auto src = fixed(N);
        std::copy(src.begin(), src.end(), out.begin());
        return out;
    }

    std::size_t remaining() const { return data_.size() - pos_; }
    bool done() const { return pos_ == data_.size(); }
    /// Throws DecodeError unless every byte was consumed.
    void expect_done() const;

private:
    ByteView data_;
    std::size_t pos_ = 0;
};

}  // namespace medchain
