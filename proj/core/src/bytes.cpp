#include "medchain/bytes.hpp"

namespace medchain {

namespace {

int nibble(char c) {
    if (c >= '0' && c <= '9') return c - '0';
    if (c >= 'a' && c <= 'f') return c - 'a' + 10;
    if (c >= 'A' && c <= 'F') return c - 'A' + 10;
    return -1;
}

}  // namespace

std::string to_hex(ByteView data) {
    static constexpr char kDigits[] = "0123456789abcdef";
    std::string out;
    out.reserve(data.size() * 2);
    for (auto b : data) {
        out.push_back(kDigits[b >> 4]);
        out.push_back(kDigits[b & 0x0f]);
    }
    return out;
}

Bytes from_hex(std::string_view hex) {
    if (hex.size() % 2 != 0) throw DecodeError("hex string has odd length");
    Bytes out(hex.size() / 2);
    for (std::size_t i = 0; i < out.size(); ++i) {
        int hi = nibble(hex[2 * i]);
        int lo = nibble(hex[2 * i + 1]);
        if (hi < 0 || lo < 0) throw DecodeError("invalid hex digit");
        out[i] = static_cast<std::uint8_t>((hi << 4) | lo);
    }
    return out;
}

ByteWriter& ByteWriter::u8(std::uint8_t v) {
    out_.push_back(v);
    return *this;
}

ByteWriter& ByteWriter::u32(std::uint32_t v) {
    for (int shift = 24; shift >= 0; shift -= 8) out_.push_back(static_cast<std::uint8_t>(v >> shift));
    return *this;
}

ByteWriter& ByteWriter::u64(std::uint64_t v) {
    for (int shift = 56; shift >= 0; shift -= 8) out_.push_back(static_cast<std::uint8_t>(v >> shift));
    return *this;
}

ByteWriter& ByteWriter::fixed(ByteView data) {
    out_.insert(out_.end(), data.begin(), data.end());
    return *this;
}

ByteWriter& ByteWriter::var(ByteView data) {
    if (data.size() > UINT32_MAX) throw std::length_error("field exceeds 4-byte length prefix");
    u32(static_cast<std::uint32_t>(data.size()));
    return fixed(data);
}

std::uint8_t ByteReader::u8() {
    return fixed(1)[0];
}

std::uint32_t ByteReader::u32() {
    auto b = fixed(4);
    std::uint32_t v = 0;
    for (auto x : b) v = (v << 8) | x;
    return v;
}

std::uint64_t ByteReader::u64() {
    auto b = fixed(8);
    std::uint64_t v = 0;
    for (auto x : b) v = (v << 8) | x;
    return v;
}

ByteView ByteReader::fixed(std::size_t n) {
    if (remaining() < n) throw DecodeError("truncated input");
    auto out = data_.subspan(pos_, n);
    pos_ += n;
    return out;
}

ByteView ByteReader::var() {
    return fixed(u32());
}

std::string ByteReader::var_string() {
    auto b = var();
    return {reinterpret_cast<const char*>(b.data()), b.size()};
}

void ByteReader::expect_done() const {
    if (!done()) throw DecodeError("trailing bytes after record");
}

}  // namespace medchain
