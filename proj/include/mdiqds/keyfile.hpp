#pragma once

#include <cstdint>
#include <cstring>
#include <fstream>
#include <map>
#include <stdexcept>
#include <string>
#include <vector>

#include "mdiqds/bitstring.hpp"

namespace mdiqds {

struct KeyFileError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct OtpReuseError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct OtpExhaustedError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Key file layout: 16-byte header, then raw key bytes.
//   bytes 0..3   magic "QKF1"
//   byte  4      format version (1)
//   bytes 5..7   reserved, zero
//   bytes 8..15  bit length, little-endian u64
inline constexpr char kKeyFileMagic[4] = {'Q', 'K', 'F', '1'};
inline constexpr std::uint8_t kKeyFileVersion = 1;

inline void write_key_file(const std::string& path, const Bitstring& bits) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw KeyFileError("cannot open key file for writing: " + path);
    std::uint8_t header[16] = {};
    std::memcpy(header, kKeyFileMagic, 4);
    header[4] = kKeyFileVersion;
    std::uint64_t n = bits.size();
    std::memcpy(header + 8, &n, 8);
    out.write(reinterpret_cast<const char*>(header), 16);
    auto bytes = bits.to_bytes();
    out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw KeyFileError("short write to key file: " + path);
}

inline Bitstring read_key_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw KeyFileError("cannot open key file: " + path);
    std::uint8_t header[16];
    in.read(reinterpret_cast<char*>(header), 16);
    if (in.gcount() != 16) throw KeyFileError("truncated key file header: " + path);
    if (std::memcmp(header, kKeyFileMagic, 4) != 0) throw KeyFileError("bad key file magic: " + path);
    if (header[4] != kKeyFileVersion) throw KeyFileError("unsupported key file version: " + path);
    std::uint64_t n = 0;
    std::memcpy(&n, header + 8, 8);
    std::vector<std::uint8_t> bytes((n + 7) / 8);
    in.read(reinterpret_cast<char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (static_cast<std::size_t>(in.gcount()) != bytes.size())
        throw KeyFileError("truncated key file payload: " + path);
    return Bitstring::from_bytes(bytes.data(), n);
}

// One-time-pad vault. Every consumed range is recorded; overlapping a
// previously consumed range is refused, so no pad bit can be used twice.
class OtpVault {
  public:
    OtpVault() = default;
    explicit OtpVault(Bitstring bits) : bits_(std::move(bits)) {}

    std::size_t size() const { return bits_.size(); }
    std::uint64_t consumed() const { return consumed_; }
    std::uint64_t remaining() const { return bits_.size() - consumed_; }

    // Sequential take from the high-water mark.
    Bitstring take(std::uint64_t n) { return take_at(next_, n); }

    // Take an explicit range; rejects any overlap with the consumed ledger.
    Bitstring take_at(std::uint64_t offset, std::uint64_t n) {
        if (offset + n > bits_.size())
            throw OtpExhaustedError("OTP vault exhausted: need [" + std::to_string(offset) + "," +
                                    std::to_string(offset + n) + ") of " + std::to_string(bits_.size()));
        auto it = ledger_.upper_bound(offset);
        if (it != ledger_.begin()) {
            auto prev = std::prev(it);
            if (prev->first + prev->second > offset)
                throw OtpReuseError("OTP reuse at offset " + std::to_string(offset));
        }
        if (it != ledger_.end() && it->first < offset + n)
            throw OtpReuseError("OTP reuse at offset " + std::to_string(it->first));
        ledger_.emplace(offset, n);
        consumed_ += n;
        next_ = std::max(next_, offset + n);
        return bits_.window(offset, n);
    }

    const std::map<std::uint64_t, std::uint64_t>& ledger() const { return ledger_; }

  private:
    Bitstring bits_;
    std::uint64_t next_ = 0;
    std::uint64_t consumed_ = 0;
    std::map<std::uint64_t, std::uint64_t> ledger_;  // offset -> length
};

}  // namespace mdiqds
