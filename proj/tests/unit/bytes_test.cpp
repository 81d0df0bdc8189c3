#include "medchain/bytes.hpp"

#include <gtest/gtest.h>

using namespace medchain;

TEST(Bytes, HexRoundTripIsLowercase) {
    Bytes raw{0x00, 0xab, 0xff, 0x10};
    EXPECT_EQ(to_hex(raw), "00abff10");
    EXPECT_EQ(from_hex("00ABff10"), raw);
}

TEST(Bytes, HexRejectsMalformedInput) {
    EXPECT_THROW(from_hex("abc"), DecodeError);
    EXPECT_THROW(from_hex("zz"), DecodeError);
}

TEST(Bytes, WriterUsesBigEndianAndLengthPrefixes) {
    ByteWriter w;
    w.u8(7).u32(0x01020304).u64(5).var(std::string_view{"ab"});
    const Bytes expected{7, 1, 2, 3, 4, 0, 0, 0, 0, 0, 0, 0, 5, 0, 0, 0, 2, 'a', 'b'};
    EXPECT_EQ(w.bytes(), expected);

    ByteReader r(w.bytes());
    EXPECT_EQ(r.u8(), 7);
    EXPECT_EQ(r.u32(), 0x01020304u);
    EXPECT_EQ(r.u64(), 5u);
    EXPECT_EQ(r.var_string(), "ab");
    EXPECT_NO_THROW(r.expect_done());
}

TEST(Bytes, ReaderDetectsTruncationAndTrailingBytes) {
    const Bytes truncated{0, 0, 0, 9, 'x'};
    ByteReader r(truncated);
    EXPECT_THROW(r.var(), DecodeError);

    const Bytes extra{1, 2};
    ByteReader r2(extra);
    r2.u8();
    EXPECT_THROW(r2.expect_done(), DecodeError);
}
