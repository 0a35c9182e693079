#pragma once

#include <algorithm>
#include <array>
#include <cstdint>
#include <cstring>
#include <stdexcept>
#include <string>
#include <vector>

#include "mdiqds/keyfile.hpp"

namespace mdiqds::wire {

struct WireError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

enum class Role : std::uint8_t { alice = 0, bob = 1, charlie = 2, eve = 3 };

inline const char* role_name(Role r) {
    switch (r) {
        case Role::alice: return "alice";
        case Role::bob: return "bob";
        case Role::charlie: return "charlie";
        case Role::eve: return "eve";
    }
    return "?";
}

enum class MsgType : std::uint8_t {
    party_view = 1,      // eve -> sender: its per-success record for one link
    tally = 2,           // eve -> sender: aggregate joint setting counts
    announce = 3,        // link peer <-> peer: per-success intensity and basis
    test_request = 4,    // sampled test positions for QBER estimation
    test_bits = 5,       // the corresponding bit values
    parity_query = 6,    // cascade: batched parity span requests
    parity_reply = 7,    // cascade: parity bits
    verify_tag = 8,      // reconciliation check tag
    key_report = 9,      // extractable key length announcement
    key_block = 10,      // privacy-amplified key block (demo only, never logged as secret)
    params = 11,         // signer broadcast: L, thresholds, seeds
    sym_half = 12,       // symmetrization: OTP-encrypted forwarded half
    signature = 13,      // messaging: (m, Sig_m)
    decision = 14,       // recipient verdict + mismatch counts
    abort = 15,          // typed failure with stage tag
    instrument = 16,     // adversary demos: side information handed to the cheat
};

constexpr std::array<char, 4> kMagic = {'M', 'Q', 'D', 'S'};
constexpr std::uint8_t kVersion = 1;
constexpr std::size_t kSessionIdLen = 16;
constexpr std::size_t kMacLen = 16;
constexpr std::size_t kHeaderLen = 4 + 1 + kSessionIdLen + 1 + 1 + 1 + 4;

struct Frame {
    std::array<std::uint8_t, kSessionIdLen> session_id{};
    Role sender = Role::alice;
    Role receiver = Role::alice;
    MsgType msg_type = MsgType::abort;
    std::vector<std::uint8_t> payload;
    std::array<std::uint8_t, kMacLen> mac{};
};

namespace detail {

constexpr std::uint64_t kM61 = (std::uint64_t(1) << 61) - 1;

inline std::uint64_t mod_m61(std::uint64_t v) {
    v = (v & kM61) + (v >> 61);
    return v >= kM61 ? v - kM61 : v;
}

inline std::uint64_t mul_m61(std::uint64_t a, std::uint64_t b) {
    const unsigned __int128 p = (unsigned __int128)a * b;
    return mod_m61(std::uint64_t(p & kM61) + std::uint64_t(p >> 61));
}

// Polynomial hash over 7-byte limbs with a final length limb, evaluated at r.
inline std::uint64_t poly_m61(const std::uint8_t* data, std::size_t len, std::uint64_t r) {
    r = mod_m61(r);
    std::uint64_t acc = 0;
    for (std::size_t off = 0; off < len; off += 7) {
        std::uint64_t limb = 0;
        const std::size_t take = std::min<std::size_t>(7, len - off);
        std::memcpy(&limb, data + off, take);
        acc = mod_m61(mul_m61(acc, r) + limb);
    }
    acc = mod_m61(mul_m61(acc, r) + std::uint64_t(len) + 1);
    return acc;
}

}  // namespace detail

// Per-pair authentication material: two fixed evaluation points plus a stream
// of single-use masks, all drawn from a pre-shared key vault. The points are
// reusable across messages as long as every tag gets a fresh mask.
class ChannelKey {
public:
    explicit ChannelKey(OtpVault vault) : vault_(std::move(vault)) {
        Bitstring pts = vault_.take(128);
        auto bytes = pts.to_bytes();
        std::memcpy(&r1_, bytes.data(), 8);
        std::memcpy(&r2_, bytes.data() + 8, 8);
        // Avoid the degenerate evaluation points 0 and M61.
        r1_ = detail::mod_m61(r1_) | 1;
        r2_ = detail::mod_m61(r2_) | 1;
    }

    std::array<std::uint8_t, kMacLen> tag(const std::uint8_t* data, std::size_t len) {
        Bitstring mask = vault_.take(128);
        auto mask_bytes = mask.to_bytes();
        const std::uint64_t h1 = detail::poly_m61(data, len, r1_);
        const std::uint64_t h2 = detail::poly_m61(data, len, r2_);
        std::array<std::uint8_t, kMacLen> out{};
        std::memcpy(out.data(), &h1, 8);
        std::memcpy(out.data() + 8, &h2, 8);
        for (std::size_t i = 0; i < kMacLen; ++i) out[i] ^= mask_bytes[i];
        return out;
    }

    std::uint64_t remaining_messages() const { return vault_.remaining() / 128; }

private:
    OtpVault vault_;
    std::uint64_t r1_ = 0, r2_ = 0;
};

// The MAC covers everything before it: header fields bind routing, payload
// binds content.
inline std::vector<std::uint8_t> frame_authenticated_region(const Frame& f) {
    std::vector<std::uint8_t> buf;
    buf.reserve(kHeaderLen + f.payload.size());
    for (char c : kMagic) buf.push_back(std::uint8_t(c));
    buf.push_back(kVersion);
    buf.insert(buf.end(), f.session_id.begin(), f.session_id.end());
    buf.push_back(std::uint8_t(f.sender));
    buf.push_back(std::uint8_t(f.receiver));
    buf.push_back(std::uint8_t(f.msg_type));
    const std::uint32_t len = std::uint32_t(f.payload.size());
    buf.push_back(std::uint8_t(len >> 24));
    buf.push_back(std::uint8_t(len >> 16));
    buf.push_back(std::uint8_t(len >> 8));
    buf.push_back(std::uint8_t(len));
    buf.insert(buf.end(), f.payload.begin(), f.payload.end());
    return buf;
}

inline void authenticate(Frame& f, ChannelKey& key) {
    if (f.payload.size() > 0xffffffffu) throw WireError("authenticate: payload too large");
    auto region = frame_authenticated_region(f);
    f.mac = key.tag(region.data(), region.size());
}

inline bool check_mac(const Frame& f, ChannelKey& key) {
    auto region = frame_authenticated_region(f);
    auto expect = key.tag(region.data(), region.size());
    // The verifier consumed the same mask offset as the signer, so the tags
    // are comparable directly.
    std::uint8_t diff = 0;
    for (std::size_t i = 0; i < kMacLen; ++i) diff |= std::uint8_t(expect[i] ^ f.mac[i]);
    return diff == 0;
}

inline std::vector<std::uint8_t> encode_frame(const Frame& f) {
    auto buf = frame_authenticated_region(f);
    buf.insert(buf.end(), f.mac.begin(), f.mac.end());
    return buf;
}

inline Frame decode_frame(const std::uint8_t* data, std::size_t len) {
    if (len < kHeaderLen + kMacLen) throw WireError("decode_frame: truncated");
    for (std::size_t i = 0; i < 4; ++i)
        if (data[i] != std::uint8_t(kMagic[i])) throw WireError("decode_frame: bad magic");
    if (data[4] != kVersion) throw WireError("decode_frame: unsupported version");
    Frame f;
    std::memcpy(f.session_id.data(), data + 5, kSessionIdLen);
    std::size_t off = 5 + kSessionIdLen;
    const std::uint8_t sender = data[off++], receiver = data[off++], mt = data[off++];
    if (sender > 3 || receiver > 3) throw WireError("decode_frame: bad role");
    f.sender = Role(sender);
    f.receiver = Role(receiver);
    f.msg_type = MsgType(mt);
    std::uint32_t plen = 0;
    for (int i = 0; i < 4; ++i) plen = (plen << 8) | data[off++];
    if (len != kHeaderLen + plen + kMacLen) throw WireError("decode_frame: length mismatch");
    f.payload.assign(data + off, data + off + plen);
    std::memcpy(f.mac.data(), data + off + plen, kMacLen);
    return f;
}

}  // namespace mdiqds::wire
