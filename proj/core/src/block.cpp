#include <fstream>
#include <iterator>

#include "medchain/ledger.hpp"

namespace medchain::ledger {

void advance_tip(LedgerState& state, const ChainTip& tip);

Bytes BlockHeader::encode() const {
    ByteWriter w;
    w.u64(height).fixed(prev_hash.bytes).fixed(tx_root.bytes).u64(timestamp).u32(proposer);
    return std::move(w).take();
}

Bytes Block::encode() const {
    ByteWriter w;
    w.fixed(header.encode());
    w.u32(static_cast<std::uint32_t>(txs.size()));
    for (const auto& tx : txs) w.var(encode_tx(tx));
    return std::move(w).take();
}

Block Block::decode(ByteView bytes) {
    ByteReader r(bytes);
    Block b;
    b.header.height = r.u64();
    b.header.prev_hash.bytes = r.array<Digest::kSize>();
    b.header.tx_root.bytes = r.array<Digest::kSize>();
    b.header.timestamp = r.u64();
    b.header.proposer = r.u32();
    auto count = r.u32();
    if (count > r.remaining() / 4) throw DecodeError("transaction count exceeds block size");
    b.txs.reserve(count);
    for (std::uint32_t i = 0; i < count; ++i) b.txs.push_back(decode_tx(r.var()));
    r.expect_done();
    return b;
}

Digest compute_tx_root(std::span<const Transaction> txs) {
    Bytes all;
    for (const auto& tx : txs) {
        auto enc = encode_tx(tx);
        all.insert(all.end(), enc.begin(), enc.end());
    }
    return crypto::hash(all);
}

Block make_block(const ChainTip& tip, std::uint64_t timestamp, std::uint32_t proposer, std::vector<Transaction> txs) {
    Block b;
    b.header.height = tip.height + 1;
    b.header.prev_hash = tip.hash;
    b.header.tx_root = compute_tx_root(txs);
    b.header.timestamp = timestamp;
    b.header.proposer = proposer;
    b.txs = std::move(txs);
    return b;
}

bool validate_block(const ChainTip& tip, const Block& candidate, const LedgerState& state) {
    const auto& h = candidate.header;
    if (h.height != tip.height + 1 || h.prev_hash != tip.hash) return false;
    if (candidate.txs.size() > kMaxBlockTxs) return false;
    if (h.tx_root != compute_tx_root(candidate.txs)) return false;
    LedgerState scratch = state;
    for (const auto& tx : candidate.txs)
        if (!apply_tx(scratch, tx, nullptr, true).accepted()) return false;
    return true;
}

std::vector<TxOutcome> apply_block(LedgerState& state, const Block& block, store::ContentStore* store) {
    std::vector<TxOutcome> out;
    out.reserve(block.txs.size());
    for (const auto& tx : block.txs) out.push_back(apply_tx(state, tx, store, false));
    advance_tip(state, ChainTip{block.header.height, block.hash()});
    return out;
}

LedgerState replay(std::span<const Block> chain) {
    LedgerState state;
    for (const auto& b : chain) {
        if (!validate_block(state.tip(), b, state))
            throw ChainError(state.height() + 1, "invalid block at height " + std::to_string(state.height() + 1));
        apply_block(state, b, nullptr);
    }
    return state;
}

Bytes encode_chain(std::span<const Block> chain) {
    ByteWriter w;
    for (const auto& b : chain) w.var(b.encode());
    return std::move(w).take();
}

std::vector<Block> decode_chain(ByteView bytes) {
    ByteReader r(bytes);
    std::vector<Block> out;
    while (!r.done()) out.push_back(Block::decode(r.var()));
    return out;
}

void write_chain_file(const std::filesystem::path& path, std::span<const Block> chain) {
    auto bytes = encode_chain(chain);
    auto tmp = path;
    tmp += ".tmp";
    {
        std::ofstream f(tmp, std::ios::binary | std::ios::trunc);
        if (!f) throw std::runtime_error("cannot write " + tmp.string());
        f.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
        if (!f) throw std::runtime_error("short write to " + tmp.string());
    }
    std::filesystem::rename(tmp, path);
}

std::vector<Block> read_chain_file(const std::filesystem::path& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw std::runtime_error("cannot read " + path.string());
    Bytes bytes((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
    return decode_chain(bytes);
}

}  // namespace medchain::ledger
