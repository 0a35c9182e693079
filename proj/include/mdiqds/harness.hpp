#pragma once

#include <arpa/inet.h>
#include <netinet/in.h>
#include <netinet/tcp.h>
#include <sys/socket.h>
#include <unistd.h>

#include <algorithm>
#include <array>
#include <atomic>
#include <chrono>
#include <cmath>
#include <condition_variable>
#include <cstdint>
#include <cstring>
#include <deque>
#include <filesystem>
#include <fstream>
#include <memory>
#include <mutex>
#include <optional>
#include <sstream>
#include <stdexcept>
#include <string>
#include <thread>
#include <utility>
#include <vector>

#include "mdiqds/bitstring.hpp"
#include "mdiqds/config.hpp"
#include "mdiqds/decoy_fk.hpp"
#include "mdiqds/keyfile.hpp"
#include "mdiqds/kgp.hpp"
#include "mdiqds/qds.hpp"
#include "mdiqds/quantum_sim.hpp"
#include "mdiqds/reconcile.hpp"
#include "mdiqds/rng.hpp"
#include "mdiqds/wire.hpp"

namespace mdiqds::harness {

using wire::Frame;
using wire::MsgType;
using wire::Role;

struct HarnessError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Protocol-level stop: one party detected a failure, told its peers, and
// everyone unwinds with the stage tag.
struct AbortError : std::runtime_error {
    std::string stage;
    AbortError(std::string stage_, const std::string& detail)
        : std::runtime_error(stage_ + ": " + detail), stage(std::move(stage_)) {}
};

enum class Phase : int { distribution = 0, symmetrization = 1, messaging = 2, done = 3 };

inline const char* phase_name(Phase p) {
    switch (p) {
        case Phase::distribution: return "distribution";
        case Phase::symmetrization: return "symmetrization";
        case Phase::messaging: return "messaging";
        case Phase::done: return "done";
    }
    return "?";
}

inline bool phase_allows(Phase phase, MsgType t) {
    switch (t) {
        case MsgType::party_view:
        case MsgType::tally:
        case MsgType::announce:
        case MsgType::test_request:
        case MsgType::test_bits:
        case MsgType::parity_query:
        case MsgType::parity_reply:
        case MsgType::verify_tag:
        case MsgType::key_report:
        case MsgType::params: return phase == Phase::distribution;
        case MsgType::sym_half: return phase == Phase::symmetrization;
        case MsgType::signature:
        case MsgType::decision:
        case MsgType::instrument: return phase == Phase::messaging;
        case MsgType::abort: return true;
        default: return false;
    }
}

// ---------------------------------------------------------------------------
// Payload marshalling

namespace detail {

struct ByteWriter {
    std::vector<std::uint8_t> buf;

    void u8(std::uint8_t v) { buf.push_back(v); }
    void u32(std::uint32_t v) {
        for (int i = 0; i < 4; ++i) buf.push_back(std::uint8_t(v >> (8 * i)));
    }
    void u64(std::uint64_t v) {
        for (int i = 0; i < 8; ++i) buf.push_back(std::uint8_t(v >> (8 * i)));
    }
    void f64(double v) {
        std::uint64_t raw;
        std::memcpy(&raw, &v, 8);
        u64(raw);
    }
    void bytes(const std::uint8_t* data, std::size_t n) { buf.insert(buf.end(), data, data + n); }
    void bits(const Bitstring& b) {
        u64(b.size());
        auto raw = b.to_bytes();
        bytes(raw.data(), raw.size());
    }
    void str(const std::string& s) {
        u32(std::uint32_t(s.size()));
        bytes(reinterpret_cast<const std::uint8_t*>(s.data()), s.size());
    }
};

struct ByteReader {
    const std::uint8_t* data;
    std::size_t len, off = 0;

    ByteReader(const std::vector<std::uint8_t>& v) : data(v.data()), len(v.size()) {}

    void need(std::size_t n) const {
        if (off + n > len) throw HarnessError("payload truncated");
    }
    std::uint8_t u8() {
        need(1);
        return data[off++];
    }
    std::uint32_t u32() {
        need(4);
        std::uint32_t v = 0;
        for (int i = 0; i < 4; ++i) v |= std::uint32_t(data[off++]) << (8 * i);
        return v;
    }
    std::uint64_t u64() {
        need(8);
        std::uint64_t v = 0;
        for (int i = 0; i < 8; ++i) v |= std::uint64_t(data[off++]) << (8 * i);
        return v;
    }
    double f64() {
        const std::uint64_t raw = u64();
        double v;
        std::memcpy(&v, &raw, 8);
        return v;
    }
    std::vector<std::uint8_t> bytes(std::size_t n) {
        need(n);
        std::vector<std::uint8_t> v(data + off, data + off + n);
        off += n;
        return v;
    }
    Bitstring bits() {
        const std::uint64_t n = u64();
        const std::size_t nbytes = std::size_t((n + 7) / 8);
        need(nbytes);
        Bitstring b = Bitstring::from_bytes(data + off, std::size_t(n));
        off += nbytes;
        return b;
    }
    std::string str() {
        const std::uint32_t n = u32();
        need(n);
        std::string s(reinterpret_cast<const char*>(data + off), n);
        off += n;
        return s;
    }
    void done() const {
        if (off != len) throw HarnessError("payload has trailing bytes");
    }
};

inline std::uint64_t fnv1a64(const std::uint8_t* data, std::size_t n) {
    std::uint64_t h = 0xcbf29ce484222325ull;
    for (std::size_t i = 0; i < n; ++i) {
        h ^= data[i];
        h *= 0x100000001b3ull;
    }
    return h;
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Transcript: per-directed-channel frame log, streamed to disk.

class Transcript {
public:
    Transcript() = default;

    explicit Transcript(std::string dir) : dir_(std::move(dir)) {
        std::filesystem::create_directories(dir_);
    }

    void record(const Frame& f) {
        const int ch = channel_of(f.sender, f.receiver);
        auto encoded = wire::encode_frame(f);
        std::lock_guard<std::mutex> lock(mu_[ch]);
        if (!dir_.empty()) {
            if (!out_[ch].is_open()) {
                out_[ch].open(dir_ + "/" + channel_file(f.sender, f.receiver),
                              std::ios::binary | std::ios::trunc);
                if (!out_[ch]) throw HarnessError("cannot open transcript file");
            }
            std::uint8_t lenbuf[4];
            const std::uint32_t n = std::uint32_t(encoded.size());
            lenbuf[0] = std::uint8_t(n >> 24);
            lenbuf[1] = std::uint8_t(n >> 16);
            lenbuf[2] = std::uint8_t(n >> 8);
            lenbuf[3] = std::uint8_t(n);
            out_[ch].write(reinterpret_cast<const char*>(lenbuf), 4);
            out_[ch].write(reinterpret_cast<const char*>(encoded.data()),
                           std::streamsize(encoded.size()));
        }
        std::ostringstream line;
        line << wire::role_name(f.sender) << "->" << wire::role_name(f.receiver) << " seq "
             << index_[ch].size() << " type " << int(f.msg_type) << " len " << f.payload.size()
             << " fnv " << std::hex << detail::fnv1a64(encoded.data(), encoded.size());
        index_[ch].push_back(line.str());
    }

    // Channel-major index, deterministic ordering regardless of thread timing.
    void finish() {
        if (dir_.empty()) return;
        for (auto& o : out_)
            if (o.is_open()) o.close();
        std::ofstream idx(dir_ + "/index.txt", std::ios::trunc);
        for (int ch = 0; ch < 16; ++ch) {
            std::lock_guard<std::mutex> lock(mu_[ch]);
            for (const auto& line : index_[ch]) idx << line << "\n";
        }
    }

    static int channel_of(Role s, Role r) { return int(s) * 4 + int(r); }

    static std::string channel_file(Role s, Role r) {
        return std::string(wire::role_name(s)) + "-" + wire::role_name(r) + ".bin";
    }

private:
    std::string dir_;
    std::mutex mu_[16];
    std::ofstream out_[16];
    std::vector<std::string> index_[16];
};

// ---------------------------------------------------------------------------
// Transports

class FrameQueue {
public:
    void push(Frame f) {
        {
            std::lock_guard<std::mutex> lock(mu_);
            q_.push_back(std::move(f));
        }
        cv_.notify_all();
    }

    std::optional<Frame> pop(std::chrono::milliseconds timeout) {
        std::unique_lock<std::mutex> lock(mu_);
        if (!cv_.wait_for(lock, timeout, [&] { return !q_.empty(); })) return std::nullopt;
        Frame f = std::move(q_.front());
        q_.pop_front();
        return f;
    }

private:
    std::mutex mu_;
    std::condition_variable cv_;
    std::deque<Frame> q_;
};

// A party's plug into the network: send never blocks, recv waits for the next
// frame from one specific peer.
class Endpoint {
public:
    virtual ~Endpoint() = default;
    virtual void send_frame(Frame f) = 0;
    virtual std::optional<Frame> recv_frame(Role from, std::chrono::milliseconds timeout) = 0;
};

class InprocHub {
public:
    InprocHub() = default;

    class Plug : public Endpoint {
    public:
        Plug(InprocHub* hub, Role self) : hub_(hub), self_(self) {}
        void send_frame(Frame f) override { hub_->queues_[int(f.sender)][int(f.receiver)].push(std::move(f)); }
        std::optional<Frame> recv_frame(Role from, std::chrono::milliseconds timeout) override {
            return hub_->queues_[int(from)][int(self_)].pop(timeout);
        }

    private:
        InprocHub* hub_;
        Role self_;
    };

    std::unique_ptr<Endpoint> plug(Role self) { return std::make_unique<Plug>(this, self); }

private:
    FrameQueue queues_[4][4];
};

// TCP mesh: one connection per unordered pair, the higher role id dials the
// lower one's listener. A writer thread per connection keeps send()
// non-blocking; a reader thread demultiplexes inbound frames by sender.
class SocketNet {
public:
    SocketNet(const std::string& host, int base_port) : host_(host), base_port_(base_port) {}

    ~SocketNet() { shutdown(); }

    void start() {
        for (int r = 0; r < 4; ++r) listen_fd_[r] = make_listener(base_port_ + r);
        for (int r = 0; r < 4; ++r)
            for (int p = 0; p < r; ++p) {
                // r dials p
                const int fd = dial(base_port_ + p, std::uint8_t(r));
                conn_fd_[r][p] = fd;
            }
        for (int r = 0; r < 4; ++r)
            for (int p = r + 1; p < 4; ++p) {
                const int fd = accept_peer(listen_fd_[r], std::uint8_t(p));
                conn_fd_[r][p] = fd;
            }
        for (int r = 0; r < 4; ++r)
            for (int p = 0; p < 4; ++p)
                if (p != r) {
                    readers_.emplace_back([this, r, p] { reader_loop(r, p); });
                    writers_.emplace_back([this, r, p] { writer_loop(r, p); });
                }
    }

    class Plug : public Endpoint {
    public:
        Plug(SocketNet* net, Role self) : net_(net), self_(self) {}
        void send_frame(Frame f) override {
            net_->tx_[int(self_)][int(f.receiver)].push(std::move(f));
        }
        std::optional<Frame> recv_frame(Role from, std::chrono::milliseconds timeout) override {
            return net_->rx_[int(self_)][int(from)].pop(timeout);
        }

    private:
        SocketNet* net_;
        Role self_;
    };

    std::unique_ptr<Endpoint> plug(Role self) { return std::make_unique<Plug>(this, self); }

    void shutdown() {
        bool expected = false;
        if (!stopped_.compare_exchange_strong(expected, true)) return;
        // Poison: sender == receiver never occurs in real traffic.
        for (int r = 0; r < 4; ++r)
            for (int p = 0; p < 4; ++p)
                if (p != r) {
                    Frame poison;
                    poison.sender = poison.receiver = Role::alice;
                    tx_[r][p].push(std::move(poison));
                }
        for (auto& t : writers_) t.join();
        for (int r = 0; r < 4; ++r)
            for (int p = 0; p < 4; ++p)
                if (conn_fd_[r][p] >= 0) ::shutdown(conn_fd_[r][p], SHUT_RDWR);
        for (auto& t : readers_) t.join();
        for (int r = 0; r < 4; ++r)
            for (int p = 0; p < 4; ++p)
                if (conn_fd_[r][p] >= 0) ::close(conn_fd_[r][p]);
        for (int r = 0; r < 4; ++r)
            if (listen_fd_[r] >= 0) ::close(listen_fd_[r]);
    }

private:
    static void write_all(int fd, const std::uint8_t* data, std::size_t n) {
        while (n > 0) {
            const ssize_t w = ::send(fd, data, n, 0);
            if (w <= 0) throw HarnessError("socket write failed");
            data += w;
            n -= std::size_t(w);
        }
    }

    static bool read_all(int fd, std::uint8_t* data, std::size_t n) {
        while (n > 0) {
            const ssize_t r = ::recv(fd, data, n, 0);
            if (r <= 0) return false;
            data += r;
            n -= std::size_t(r);
        }
        return true;
    }

    int make_listener(int port) {
        const int fd = ::socket(AF_INET, SOCK_STREAM, 0);
        if (fd < 0) throw HarnessError("socket() failed");
        const int one = 1;
        ::setsockopt(fd, SOL_SOCKET, SO_REUSEADDR, &one, sizeof one);
        sockaddr_in addr{};
        addr.sin_family = AF_INET;
        addr.sin_port = htons(std::uint16_t(port));
        if (::inet_pton(AF_INET, host_.c_str(), &addr.sin_addr) != 1)
            throw HarnessError("bad host address: " + host_);
        if (::bind(fd, reinterpret_cast<sockaddr*>(&addr), sizeof addr) != 0)
            throw HarnessError("bind failed on port " + std::to_string(port));
        if (::listen(fd, 8) != 0) throw HarnessError("listen failed");
        return fd;
    }

    int dial(int port, std::uint8_t self_role) {
        sockaddr_in addr{};
        addr.sin_family = AF_INET;
        addr.sin_port = htons(std::uint16_t(port));
        ::inet_pton(AF_INET, host_.c_str(), &addr.sin_addr);
        for (int attempt = 0; attempt < 200; ++attempt) {
            const int fd = ::socket(AF_INET, SOCK_STREAM, 0);
            if (fd < 0) throw HarnessError("socket() failed");
            if (::connect(fd, reinterpret_cast<sockaddr*>(&addr), sizeof addr) == 0) {
                const int one = 1;
                ::setsockopt(fd, IPPROTO_TCP, TCP_NODELAY, &one, sizeof one);
                write_all(fd, &self_role, 1);
                return fd;
            }
            ::close(fd);
            std::this_thread::sleep_for(std::chrono::milliseconds(25));
        }
        throw HarnessError("connect failed on port " + std::to_string(port));
    }

    int accept_peer(int listen_fd, std::uint8_t expect_role) {
        for (int attempt = 0; attempt < 4; ++attempt) {
            const int fd = ::accept(listen_fd, nullptr, nullptr);
            if (fd < 0) throw HarnessError("accept failed");
            std::uint8_t role = 0xff;
            if (!read_all(fd, &role, 1)) {
                ::close(fd);
                continue;
            }
            if (role == expect_role) {
                const int one = 1;
                ::setsockopt(fd, IPPROTO_TCP, TCP_NODELAY, &one, sizeof one);
                return fd;
            }
            ::close(fd);
        }
        throw HarnessError("handshake failed");
    }

    void writer_loop(int self, int peer) {
        const int fd = conn_fd_[self][peer];
        while (true) {
            auto f = tx_[self][peer].pop(std::chrono::hours(24));
            if (!f) return;
            if (f->sender == f->receiver) return;  // poison
            try {
                auto bytes = wire::encode_frame(*f);
                write_all(fd, bytes.data(), bytes.size());
            } catch (const HarnessError&) {
                return;
            }
        }
    }

    void reader_loop(int self, int peer) {
        const int fd = conn_fd_[self][peer];
        std::vector<std::uint8_t> buf;
        while (true) {
            std::uint8_t header[wire::kHeaderLen];
            if (!read_all(fd, header, sizeof header)) return;
            std::uint32_t plen = 0;
            for (int i = 0; i < 4; ++i) plen = (plen << 8) | header[wire::kHeaderLen - 4 + i];
            buf.assign(sizeof header + plen + wire::kMacLen, 0);
            std::memcpy(buf.data(), header, sizeof header);
            if (!read_all(fd, buf.data() + sizeof header, plen + wire::kMacLen)) return;
            Frame f;
            try {
                f = wire::decode_frame(buf.data(), buf.size());
            } catch (const wire::WireError&) {
                continue;  // malformed stream data; drop
            }
            // Deliver only frames addressed to this endpoint from this peer.
            if (int(f.sender) != peer || int(f.receiver) != self) continue;
            rx_[self][peer].push(std::move(f));
        }
    }

    std::string host_;
    int base_port_;
    int listen_fd_[4] = {-1, -1, -1, -1};
    int conn_fd_[4][4] = {{-1, -1, -1, -1}, {-1, -1, -1, -1}, {-1, -1, -1, -1}, {-1, -1, -1, -1}};
    FrameQueue tx_[4][4], rx_[4][4];
    std::vector<std::thread> readers_, writers_;
    std::atomic<bool> stopped_{false};
};

// ---------------------------------------------------------------------------
// Authenticated per-party session layer

struct AuditEvent {
    std::string what;
};

inline std::string pair_key_name(Role a, Role b) {
    if (int(a) > int(b)) std::swap(a, b);
    return std::string(wire::role_name(a)) + "-" + wire::role_name(b) + ".key";
}

// Generates the pre-shared pairwise authentication key files if absent.
inline void ensure_auth_keys(const std::string& dir, std::uint64_t bits, std::uint64_t seed) {
    std::filesystem::create_directories(dir);
    const Role roles[4] = {Role::alice, Role::bob, Role::charlie, Role::eve};
    int pair_index = 0;
    for (int i = 0; i < 4; ++i)
        for (int j = i + 1; j < 4; ++j, ++pair_index) {
            const std::string path = dir + "/" + pair_key_name(roles[i], roles[j]);
            if (std::filesystem::exists(path)) continue;
            SplitRng rng = SplitRng(seed).split(0xa0 + std::uint64_t(pair_index));
            Bitstring key = Bitstring::random(bits, rng);
            write_key_file(path, key);
        }
}

class Channels {
public:
    Channels(Role self, Endpoint* ep, Transcript* transcript,
             const std::array<std::uint8_t, wire::kSessionIdLen>& session_id,
             const std::string& key_dir, std::chrono::milliseconds timeout)
        : self_(self), ep_(ep), transcript_(transcript), session_id_(session_id), timeout_(timeout) {
        for (int p = 0; p < 4; ++p) {
            if (p == int(self)) continue;
            const std::string path = key_dir + "/" + pair_key_name(self, Role(p));
            Bitstring pair_key = read_key_file(path);
            const std::uint64_t half = pair_key.size() / 2;
            // Lower half authenticates low-role -> high-role traffic.
            Bitstring lo = pair_key.window(0, half), hi = pair_key.window(half, half);
            const bool self_is_low = int(self) < p;
            tx_[p] = std::make_unique<wire::ChannelKey>(OtpVault(self_is_low ? lo : hi));
            rx_[p] = std::make_unique<wire::ChannelKey>(OtpVault(self_is_low ? hi : lo));
        }
    }

    Phase phase() const { return phase_; }
    void advance_phase(Phase p) { phase_ = p; }
    Role self() const { return self_; }
    const std::vector<AuditEvent>& audit() const { return audit_; }

    void send(Role to, MsgType type, std::vector<std::uint8_t> payload) {
        Frame f;
        f.session_id = session_id_;
        f.sender = self_;
        f.receiver = to;
        f.msg_type = type;
        f.payload = std::move(payload);
        wire::authenticate(f, *tx_[int(to)]);
        transcript_->record(f);
        ep_->send_frame(std::move(f));
    }

    // Next valid frame from one peer. MAC failures and phase violations are
    // dropped with an audit entry; abort frames raise; anything else must be
    // the expected type.
    std::vector<std::uint8_t> recv(Role from, MsgType expect) {
        while (true) {
            auto f = ep_->recv_frame(from, timeout_);
            if (!f)
                throw HarnessError(std::string(wire::role_name(self_)) + ": timeout waiting for " +
                                   wire::role_name(from));
            if (f->session_id != session_id_) {
                audit_.push_back({"foreign session frame dropped"});
                continue;
            }
            if (!wire::check_mac(*f, *rx_[int(from)])) {
                audit_.push_back({std::string("bad mac on frame from ") + wire::role_name(from)});
                continue;
            }
            if (f->msg_type == MsgType::abort) {
                detail::ByteReader r(f->payload);
                const std::string stage = r.str(), detail_text = r.str();
                throw AbortError(stage, detail_text);
            }
            if (!phase_allows(phase_, f->msg_type)) {
                audit_.push_back({"out-of-phase frame type " + std::to_string(int(f->msg_type)) +
                                  " in " + phase_name(phase_)});
                continue;
            }
            if (f->msg_type != expect)
                throw HarnessError(std::string(wire::role_name(self_)) + ": expected type " +
                                   std::to_string(int(expect)) + " from " + wire::role_name(from) +
                                   ", got " + std::to_string(int(f->msg_type)));
            return std::move(f->payload);
        }
    }

    void send_abort(Role to, const std::string& stage, const std::string& detail_text) {
        detail::ByteWriter w;
        w.str(stage);
        w.str(detail_text);
        try {
            send(to, MsgType::abort, std::move(w.buf));
        } catch (const std::exception&) {
            // best effort: peers may be gone already
        }
    }

private:
    Role self_;
    Endpoint* ep_;
    Transcript* transcript_;
    std::array<std::uint8_t, wire::kSessionIdLen> session_id_;
    std::chrono::milliseconds timeout_;
    Phase phase_ = Phase::distribution;
    std::unique_ptr<wire::ChannelKey> tx_[4], rx_[4];
    std::vector<AuditEvent> audit_;
};

// ---------------------------------------------------------------------------
// Protocol data shared by the party programs

enum class LinkId : std::uint8_t { ab = 0, ac = 1, bc = 2 };

inline const char* link_name(LinkId l) {
    switch (l) {
        case LinkId::ab: return "ab";
        case LinkId::ac: return "ac";
        case LinkId::bc: return "bc";
    }
    return "?";
}

struct DecisionRecord {
    std::uint64_t trial = 0;
    bool accept = false;
    std::uint64_t mismatch_direct = 0, mismatch_forwarded = 0;
};

struct PartyOutcome {
    Role role = Role::alice;
    bool aborted = false;
    std::string abort_stage, abort_detail;
    std::uint64_t ell = 0;
    std::size_t L = 0;
    std::uint64_t otp_consumed = 0;
    std::vector<DecisionRecord> decisions;
    std::uint64_t adversary_successes = 0, adversary_trials = 0;
    bool have_report = false;
    qds::SecurityReport report;
    std::string table1_text;
    std::vector<AuditEvent> audit;
};

struct RunResult {
    PartyOutcome alice, bob, charlie;
    bool success = false;
    std::string failure_stage;
    std::string transcript_dir;

    const PartyOutcome& party(Role r) const {
        switch (r) {
            case Role::alice: return alice;
            case Role::bob: return bob;
            case Role::charlie: return charlie;
            default: throw HarnessError("no outcome for that role");
        }
    }
};

namespace detail {

// Seed salt registry. All party programs derive randomness from the session
// seed through these, so both transports and repeated runs agree bit for bit.
enum : std::uint64_t {
    kSaltSession = 5,
    kSaltLinkBase = 11,      // +0 ab, +1 ac, +2 bc
    kSaltQberTest = 20,      // +setting
    kSaltCascade = 30,       // +setting
    kSaltVerify = 40,        // +setting
    kSaltToeplitz = 50,      // +setting
    kSaltKgpAb = 55,
    kSaltKgpAc = 56,
    kSaltSymBob = 61,
    kSaltSymCharlie = 62,
    kSaltPlant = 70,         // .split(trial)
    kSaltForge = 71,         // .split(trial)
    kSaltFixtureRaw = 80,    // +link
    kSaltFixtureOtp = 83,
    kSaltAuthKeys = 0xa0,
};

inline std::array<std::uint8_t, wire::kSessionIdLen> session_id_from_seed(std::uint64_t seed) {
    SplitRng rng = SplitRng(seed).split(kSaltSession);
    std::array<std::uint8_t, wire::kSessionIdLen> id{};
    for (std::size_t i = 0; i < id.size(); i += 8) {
        const std::uint64_t v = rng.next_u64();
        std::memcpy(id.data() + i, &v, 8);
    }
    return id;
}

// Sample k distinct positions out of n, identical on both sides of a link.
inline std::vector<std::uint32_t> sample_positions(std::size_t n, std::size_t k,
                                                   std::uint64_t seed) {
    if (k > n) throw HarnessError("test sample larger than population");
    std::vector<std::uint32_t> idx(n);
    for (std::size_t i = 0; i < n; ++i) idx[i] = std::uint32_t(i);
    SplitRng rng(seed);
    rng.shuffle(idx);
    idx.resize(k);
    std::sort(idx.begin(), idx.end());
    return idx;
}

inline Bitstring remove_positions(const Bitstring& b, const std::vector<std::uint32_t>& sorted_pos) {
    std::vector<std::uint32_t> keep;
    keep.reserve(b.size() - sorted_pos.size());
    std::size_t j = 0;
    for (std::uint32_t i = 0; i < b.size(); ++i) {
        if (j < sorted_pos.size() && sorted_pos[j] == i) {
            ++j;
            continue;
        }
        keep.push_back(i);
    }
    return b.select(keep);
}

struct LinkStation {
    sim::PartyView view;
    sim::TallyMatrix tally;
    sim::LinkSiftIndex idx;
    int side = 0;

    Bitstring bits(sim::Intensity b, sim::Intensity c, sim::Basis beta) const {
        return sim::view_bits(view, idx.idx[int(b)][int(c)][int(beta)], side == 1);
    }
    std::size_t setting_size(sim::Intensity b, sim::Intensity c, sim::Basis beta) const {
        return idx.idx[int(b)][int(c)][int(beta)].size();
    }
};

inline std::vector<std::uint8_t> encode_view(LinkId link, const sim::PartyView& v) {
    ByteWriter w;
    w.u8(std::uint8_t(link));
    w.u64(v.packed.size());
    w.bytes(v.packed.data(), v.packed.size());
    return std::move(w.buf);
}

inline sim::PartyView decode_view(const std::vector<std::uint8_t>& payload, LinkId expect) {
    ByteReader r(payload);
    if (r.u8() != std::uint8_t(expect)) throw HarnessError("view for wrong link");
    const std::uint64_t n = r.u64();
    sim::PartyView v;
    v.packed = r.bytes(std::size_t(n));
    r.done();
    return v;
}

inline std::vector<std::uint8_t> encode_tally(LinkId link, const sim::TallyMatrix& t) {
    std::ostringstream os;
    t.serialize(os);
    ByteWriter w;
    w.u8(std::uint8_t(link));
    w.str(os.str());
    return std::move(w.buf);
}

inline sim::TallyMatrix decode_tally(const std::vector<std::uint8_t>& payload, LinkId expect) {
    ByteReader r(payload);
    if (r.u8() != std::uint8_t(expect)) throw HarnessError("tally for wrong link");
    std::istringstream is(r.str());
    r.done();
    return sim::TallyMatrix::parse(is);
}

inline std::vector<std::uint8_t> encode_announce(LinkId link, const std::vector<std::uint8_t>& a) {
    ByteWriter w;
    w.u8(std::uint8_t(link));
    w.u64(a.size());
    w.bytes(a.data(), a.size());
    return std::move(w.buf);
}

inline std::vector<std::uint8_t> decode_announce(const std::vector<std::uint8_t>& payload,
                                                 LinkId expect) {
    ByteReader r(payload);
    if (r.u8() != std::uint8_t(expect)) throw HarnessError("announcement for wrong link");
    const std::uint64_t n = r.u64();
    auto a = r.bytes(std::size_t(n));
    r.done();
    return a;
}

// Cascade parity service spanning the wire.
class RemoteParitySource : public rec::ParitySource {
public:
    RemoteParitySource(Channels& ch, Role peer, std::uint8_t setting)
        : ch_(ch), peer_(peer), setting_(setting) {}

    std::vector<std::uint8_t> answer(const std::vector<rec::ParityQuery>& queries) override {
        ByteWriter w;
        w.u8(setting_);
        w.u32(std::uint32_t(queries.size()));
        for (const auto& q : queries) {
            w.u8(q.pass);
            w.u32(q.lo);
            w.u32(q.hi);
        }
        ch_.send(peer_, MsgType::parity_query, std::move(w.buf));
        auto reply = ch_.recv(peer_, MsgType::parity_reply);
        ByteReader r(reply);
        if (r.u8() != setting_) throw HarnessError("parity reply for wrong setting");
        Bitstring bits = r.bits();
        r.done();
        if (bits.size() != queries.size()) throw HarnessError("parity reply count mismatch");
        std::vector<std::uint8_t> out(queries.size());
        for (std::size_t i = 0; i < out.size(); ++i) out[i] = bits.get(i) ? 1 : 0;
        return out;
    }

    void finish() {
        ByteWriter w;
        w.u8(setting_);
        w.u32(0);
        ch_.send(peer_, MsgType::parity_query, std::move(w.buf));
    }

private:
    Channels& ch_;
    Role peer_;
    std::uint8_t setting_;
};

}  // namespace detail

// ---------------------------------------------------------------------------
// Party programs

struct PartyIo {
    const cfg::ExperimentConfig* config = nullptr;
    Channels* channels = nullptr;
    std::uint64_t seed = 0;
    PartyOutcome out;

    SplitRng root() const { return SplitRng(seed); }
};

namespace detail {

inline std::size_t qber_test_count(const cfg::ReconcilePlan& plan, std::size_t n) {
    std::size_t k = std::size_t(double(n) * plan.test_fraction);
    k = std::max<std::size_t>(k, std::size_t(plan.min_test_bits));
    k = std::min<std::size_t>(k, std::size_t(plan.max_test_bits));
    k = std::min(k, n / 2);
    return k;
}

// Shared announce exchange. Low role sends first by convention; queues are
// buffered so the order is immaterial, but it keeps the transcript tidy.
inline void exchange_announcements(Channels& ch, Role peer, LinkId link, LinkStation& st) {
    auto mine = sim::make_announce(st.view);
    ch.send(peer, MsgType::announce, encode_announce(link, mine));
    auto theirs = decode_announce(ch.recv(peer, MsgType::announce), link);
    if (st.side == 0)
        st.idx = sim::LinkSiftIndex::build(mine, theirs);
    else
        st.idx = sim::LinkSiftIndex::build(theirs, mine);
}

struct QkdSettingResult {
    Bitstring key;  // reconciled working key
    std::uint64_t leak_bits = 0;
    std::uint64_t test_count = 0, test_errors = 0;
};

struct QkdOutcome {
    std::uint64_t ell_used = 0;
    std::array<std::uint64_t, 4> out_len{};
    Bitstring s_bc;
    decoy::FiniteKeyBounds bounds;
    std::string table1_text;
};

// Both ends of the B-C link walk the same per-setting schedule; `reference`
// marks Bob's side (test sampler, parity answerer).
inline QkdOutcome qkd_post_processing(PartyIo& io, Channels& ch, Role peer, LinkStation& st,
                                      bool reference) {
    const auto& config = *io.config;
    SplitRng root = io.root();
    QkdOutcome res;

    std::array<QkdSettingResult, 4> per_setting;
    for (int s = 0; s < 4; ++s) {
        const auto [ib, ic] = decoy::kKeySettings[std::size_t(s)];
        Bitstring key = st.bits(ib, ic, sim::Basis::Z);
        const std::size_t n = key.size();
        if (n < 16) {
            if (reference) {
                ch.send_abort(peer, "key_length", "too few sifted bits");
                ch.send_abort(Role::alice, "key_length", "too few sifted bits");
            }
            throw AbortError("key_length", "too few sifted bits");
        }

        // QBER estimate: seeded sample, disclosed both ways, then removed.
        const std::uint64_t test_seed = root.split(kSaltQberTest + std::uint64_t(s)).seed_key();
        const std::size_t k = qber_test_count(config.reconcile, n);
        if (reference) {
            ByteWriter w;
            w.u8(std::uint8_t(s));
            w.u64(test_seed);
            w.u64(k);
            ch.send(peer, MsgType::test_request, std::move(w.buf));
        } else {
            auto req = ch.recv(peer, MsgType::test_request);
            ByteReader r(req);
            if (r.u8() != s) throw HarnessError("test request setting mismatch");
            if (r.u64() != test_seed || r.u64() != k)
                throw HarnessError("test request diverges from shared schedule");
            r.done();
        }
        const auto positions = sample_positions(n, k, test_seed);
        std::vector<std::uint32_t> pos_vec(positions.begin(), positions.end());
        Bitstring my_test = key.select(pos_vec);
        {
            ByteWriter w;
            w.u8(std::uint8_t(s));
            w.bits(my_test);
            ch.send(peer, MsgType::test_bits, std::move(w.buf));
        }
        Bitstring peer_test;
        {
            auto payload = ch.recv(peer, MsgType::test_bits);
            ByteReader r(payload);
            if (r.u8() != s) throw HarnessError("test bits setting mismatch");
            peer_test = r.bits();
            r.done();
        }
        if (peer_test.size() != k) throw HarnessError("test bits length mismatch");
        const std::uint64_t test_errors = my_test.mismatches(peer_test);
        const double qber = k ? double(test_errors) / double(k) : 0.0;
        Bitstring working = remove_positions(key, positions);

        // Cascade: the non-reference side corrects toward the reference.
        const std::uint64_t casc_seed = root.split(kSaltCascade + std::uint64_t(s)).seed_key();
        std::uint64_t cascade_leak = 0;
        const int passes = std::max(config.reconcile.passes, 4);  // driver clamps the same way
        if (reference) {
            rec::LocalParitySource local(working, passes, casc_seed);
            while (true) {
                auto payload = ch.recv(peer, MsgType::parity_query);
                ByteReader r(payload);
                if (r.u8() != s) throw HarnessError("parity query setting mismatch");
                const std::uint32_t nq = r.u32();
                if (nq == 0) {
                    r.done();
                    break;
                }
                std::vector<rec::ParityQuery> queries(nq);
                for (auto& q : queries) {
                    q.pass = r.u8();
                    q.lo = r.u32();
                    q.hi = r.u32();
                }
                r.done();
                auto bits = local.answer(queries);
                Bitstring packed(bits.size());
                for (std::size_t i = 0; i < bits.size(); ++i) packed.set(i, bits[i] != 0);
                ByteWriter w;
                w.u8(std::uint8_t(s));
                w.bits(packed);
                ch.send(peer, MsgType::parity_reply, std::move(w.buf));
                cascade_leak += nq;
            }
        } else {
            RemoteParitySource remote(ch, peer, std::uint8_t(s));
            rec::CascadeDriver driver(working, qber, passes, casc_seed, remote);
            auto rr = driver.run();
            remote.finish();
            cascade_leak = rr.leak_bits;
        }

        // Correctness check over the shared tag seed.
        const std::uint64_t ver_seed = root.split(kSaltVerify + std::uint64_t(s)).seed_key();
        const std::uint32_t tag_bits = rec::verification_tag_bits(config.budget.eps_cor);
        SplitRng tag_rng(ver_seed);
        Bitstring tag_seed_bits = Bitstring::random(working.size() + tag_bits - 1, tag_rng);
        Bitstring my_tag = rec::detail::toeplitz_multiply(working, tag_bits, tag_seed_bits);
        if (reference) {
            ByteWriter w;
            w.u8(std::uint8_t(s));
            w.u8(1);
            w.bits(my_tag);
            ch.send(peer, MsgType::verify_tag, std::move(w.buf));
            auto payload = ch.recv(peer, MsgType::verify_tag);
            ByteReader r(payload);
            if (r.u8() != s) throw HarnessError("verify tag setting mismatch");
            const bool peer_ok = r.u8() != 0;
            Bitstring peer_tag = r.bits();
            r.done();
            if (!peer_ok || peer_tag != my_tag) {
                ch.send_abort(peer, "verify", "reconciliation tags differ");
                ch.send_abort(Role::alice, "verify", "reconciliation tags differ");
                throw AbortError("verify", "reconciliation tags differ");
            }
        } else {
            auto payload = ch.recv(peer, MsgType::verify_tag);
            ByteReader r(payload);
            if (r.u8() != s) throw HarnessError("verify tag setting mismatch");
            const bool unused_flag = r.u8() != 0;
            (void)unused_flag;
            Bitstring ref_tag = r.bits();
            r.done();
            const bool ok = ref_tag == my_tag;
            ByteWriter w;
            w.u8(std::uint8_t(s));
            w.u8(ok ? 1 : 0);
            w.bits(my_tag);
            ch.send(peer, MsgType::verify_tag, std::move(w.buf));
            if (!ok) throw AbortError("verify", "reconciliation tags differ");
        }

        per_setting[std::size_t(s)] = QkdSettingResult{std::move(working),
                                                       std::uint64_t(k) + cascade_leak + tag_bits,
                                                       std::uint64_t(k), test_errors};
    }

    // Finite-key analysis over the public tallies plus the leak just incurred.
    res.bounds = decoy::estimate_all(st.tally, config.budget, config.deviation);
    for (int s = 0; s < 4; ++s) {
        res.bounds.s[std::size_t(s)].leak_ec = double(per_setting[std::size_t(s)].leak_bits);
    }
    auto report = decoy::key_length(res.bounds, config.budget);
    {
        std::ostringstream os;
        decoy::write_table1(os, res.bounds);
        res.table1_text = os.str();
    }

    for (int s = 0; s < 4; ++s) {
        const double c = report.contribution[std::size_t(s)];
        const double capped =
            std::min(c, double(per_setting[std::size_t(s)].key.size()));
        res.out_len[std::size_t(s)] = c > 0 ? std::uint64_t(std::floor(capped)) : 0;
        res.ell_used += res.out_len[std::size_t(s)];
    }

    if (res.ell_used < 12) {
        if (reference) {
            ch.send_abort(peer, "key_length", "no extractable key");
            ch.send_abort(Role::alice, "key_length", "no extractable key");
        }
        throw AbortError("key_length", "no extractable key");
    }

    // Privacy amplification with shared public seeds; both sides now hold the
    // same verified keys, so the outputs agree.
    for (int s = 0; s < 4; ++s) {
        const auto& ps = per_setting[std::size_t(s)];
        const std::uint64_t out_len = res.out_len[std::size_t(s)];
        if (out_len == 0) continue;
        SplitRng pa_rng = root.split(kSaltToeplitz + std::uint64_t(s));
        Bitstring seed_bits = Bitstring::random(ps.key.size() + std::size_t(out_len) - 1, pa_rng);
        res.s_bc.append(rec::toeplitz_extract(ps.key, std::size_t(out_len), seed_bits));
    }
    res.ell_used = res.s_bc.size();
    return res;
}

struct KgpLinkState {
    Bitstring raw;          // own (Z, mu, mu) bits, flip applied on side b
    std::size_t n_sifted = 0;
    double n1 = 0, e1 = 0.5;  // finite-key stats for p_E
    bool have_stats = false;
};

inline KgpLinkState kgp_collect(const cfg::ExperimentConfig& config, LinkStation& st) {
    KgpLinkState k;
    k.raw = st.bits(sim::Intensity::sig, sim::Intensity::sig, sim::Basis::Z);
    k.n_sifted = k.raw.size();
    auto bounds = decoy::estimate_all(st.tally, config.budget, config.deviation);
    k.n1 = bounds.at(sim::Intensity::sig, sim::Intensity::sig).n1;
    k.e1 = bounds.at(sim::Intensity::sig, sim::Intensity::sig).e1;
    k.have_stats = true;
    return k;
}

struct KgpTestStats {
    std::uint64_t errors[2] = {0, 0};
    std::uint64_t tested[2] = {0, 0};
    double e_bound[2] = {1.0, 1.0};
    double observed_rate() const {
        const std::uint64_t t = tested[0] + tested[1];
        return t ? double(errors[0] + errors[1]) / double(t) : 0.0;
    }
};

// Both ends run this after the selection seed is known: exchange the
// announced test bits and bound the kept error rate per message value.
inline KgpTestStats kgp_test_exchange(Channels& ch, Role peer, LinkId link, const Bitstring& raw,
                                      const kgp::KgpSelection& sel, std::size_t L, double eps_pe) {
    ByteWriter w;
    w.u8(std::uint8_t(link));
    w.bits(raw.select(sel.test[0]));
    w.bits(raw.select(sel.test[1]));
    ch.send(peer, MsgType::test_bits, std::move(w.buf));
    auto payload = ch.recv(peer, MsgType::test_bits);
    ByteReader r(payload);
    if (r.u8() != std::uint8_t(link)) throw HarnessError("kgp test bits for wrong link");
    Bitstring peer_test_0 = r.bits(), peer_test_1 = r.bits();
    r.done();

    KgpTestStats stats;
    for (int m = 0; m < 2; ++m) {
        const Bitstring mine = raw.select(sel.test[m]);
        const Bitstring& theirs = m == 0 ? peer_test_0 : peer_test_1;
        if (theirs.size() != mine.size()) throw HarnessError("kgp test length mismatch");
        stats.errors[m] = mine.mismatches(theirs);
        stats.tested[m] = mine.size();
        stats.e_bound[m] = serfling_bound(stats.errors[m], stats.tested[m], L, eps_pe);
    }
    return stats;
}

inline std::vector<std::uint8_t> encode_params1(std::size_t L, std::uint64_t kgp_seed) {
    ByteWriter w;
    w.u8(1);
    w.u64(L);
    w.u64(kgp_seed);
    return std::move(w.buf);
}

struct Params2 {
    double e_bar = 0, p_e = 0, s_a = 0, s_v = 0;
    std::uint64_t count_a = 0, count_v = 0;
    std::uint64_t trials = 1;
    std::uint8_t message = 1;
    std::uint8_t adversary = 0;  // 0 honest, 1 repudiating-signer, 2 forging-recipient
    double forge_rate = 0;
};

inline std::vector<std::uint8_t> encode_params2(const Params2& p) {
    ByteWriter w;
    w.u8(2);
    w.f64(p.e_bar);
    w.f64(p.p_e);
    w.f64(p.s_a);
    w.f64(p.s_v);
    w.u64(p.count_a);
    w.u64(p.count_v);
    w.u64(p.trials);
    w.u8(p.message);
    w.u8(p.adversary);
    w.f64(p.forge_rate);
    return std::move(w.buf);
}

inline Params2 decode_params2(const std::vector<std::uint8_t>& payload) {
    ByteReader r(payload);
    if (r.u8() != 2) throw HarnessError("expected stage-2 parameters");
    Params2 p;
    p.e_bar = r.f64();
    p.p_e = r.f64();
    p.s_a = r.f64();
    p.s_v = r.f64();
    p.count_a = r.u64();
    p.count_v = r.u64();
    p.trials = r.u64();
    p.message = r.u8();
    p.adversary = r.u8();
    p.forge_rate = r.f64();
    return p;
}

inline std::vector<std::uint8_t> encode_signature(std::uint64_t trial, const qds::Signature& sig) {
    ByteWriter w;
    w.u8(std::uint8_t(sig.m));
    w.u64(trial);
    w.bits(sig.sig_b);
    w.bits(sig.sig_c);
    return std::move(w.buf);
}

inline std::pair<std::uint64_t, qds::Signature> decode_signature(
    const std::vector<std::uint8_t>& payload) {
    ByteReader r(payload);
    qds::Signature sig;
    sig.m = r.u8();
    const std::uint64_t trial = r.u64();
    sig.sig_b = r.bits();
    sig.sig_c = r.bits();
    r.done();
    return {trial, sig};
}

inline std::vector<std::uint8_t> encode_decision(const DecisionRecord& d) {
    ByteWriter w;
    w.u8(d.accept ? 1 : 0);
    w.u64(d.mismatch_direct);
    w.u64(d.mismatch_forwarded);
    w.u64(d.trial);
    return std::move(w.buf);
}

inline DecisionRecord decode_decision(const std::vector<std::uint8_t>& payload) {
    ByteReader r(payload);
    DecisionRecord d;
    d.accept = r.u8() != 0;
    d.mismatch_direct = r.u64();
    d.mismatch_forwarded = r.u64();
    d.trial = r.u64();
    r.done();
    return d;
}

inline int adversary_code(const std::string& name) {
    if (name == "honest") return 0;
    if (name == "repudiating-signer") return 1;
    if (name == "forging-recipient") return 2;
    throw HarnessError("unknown adversary strategy: " + name);
}

inline Bitstring fixture_raw(const cfg::ExperimentConfig& config, std::uint64_t seed,
                             std::uint64_t salt, bool with_noise) {
    SplitRng rng = SplitRng(seed).split(salt);
    Bitstring bits = Bitstring::random(config.fixture.kgp_raw, rng);
    if (with_noise) {
        SplitRng noise = SplitRng(seed).split(salt + 1);
        inject_flip_noise(bits, config.fixture.kgp_error_rate, noise);
    }
    return bits;
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Eve: runs the three quantum sessions and distributes each sender's own
// records plus the public aggregate counts.

inline void run_eve(PartyIo& io) {
    const auto& config = *io.config;
    io.out.role = Role::eve;
    if (config.fixture.enabled) return;
    Channels& ch = *io.channels;
    SplitRng root = io.root();

    struct LinkPlan {
        LinkId id;
        Role x, y;
        const sim::SourceConfig *sx, *sy;
        const sim::LinkConfig* link;
        std::uint64_t pulses;
    };
    const LinkPlan plans[3] = {
        {LinkId::ab, Role::alice, Role::bob, &config.source_alice, &config.source_bob,
         &config.link_ab, config.session.pulses_ab},
        {LinkId::ac, Role::alice, Role::charlie, &config.source_alice, &config.source_charlie,
         &config.link_ac, config.session.pulses_ac},
        {LinkId::bc, Role::bob, Role::charlie, &config.source_bob, &config.source_charlie,
         &config.link_bc, config.session.pulses_bc},
    };
    for (const auto& plan : plans) {
        const std::uint64_t seed =
            root.split(detail::kSaltLinkBase + std::uint64_t(plan.id)).seed_key();
        auto session = sim::sample_session(*plan.sx, *plan.sy, *plan.link, plan.pulses, seed,
                                           /*oracle=*/false, /*materialize=*/true);
        ch.send(plan.x, MsgType::party_view,
                detail::encode_view(plan.id, sim::make_view(session.events, 0)));
        ch.send(plan.x, MsgType::tally, detail::encode_tally(plan.id, session.tally));
        ch.send(plan.y, MsgType::party_view,
                detail::encode_view(plan.id, sim::make_view(session.events, 1)));
        ch.send(plan.y, MsgType::tally, detail::encode_tally(plan.id, session.tally));
    }
}

// ---------------------------------------------------------------------------
// Alice: signer.

inline void run_alice(PartyIo& io) {
    const auto& config = *io.config;
    Channels& ch = *io.channels;
    SplitRng root = io.root();
    io.out.role = Role::alice;

    detail::KgpLinkState kgp_ab, kgp_ac;
    if (config.fixture.enabled) {
        kgp_ab.raw = detail::fixture_raw(config, io.seed, detail::kSaltFixtureRaw + 0, false);
        kgp_ac.raw = detail::fixture_raw(config, io.seed, detail::kSaltFixtureRaw + 4, false);
        kgp_ab.n_sifted = kgp_ab.raw.size();
        kgp_ac.n_sifted = kgp_ac.raw.size();
    } else {
        detail::LinkStation st_ab, st_ac;
        st_ab.side = 0;
        st_ac.side = 0;
        st_ab.view = detail::decode_view(ch.recv(Role::eve, MsgType::party_view), LinkId::ab);
        st_ab.tally = detail::decode_tally(ch.recv(Role::eve, MsgType::tally), LinkId::ab);
        st_ac.view = detail::decode_view(ch.recv(Role::eve, MsgType::party_view), LinkId::ac);
        st_ac.tally = detail::decode_tally(ch.recv(Role::eve, MsgType::tally), LinkId::ac);
        detail::exchange_announcements(ch, Role::bob, LinkId::ab, st_ab);
        detail::exchange_announcements(ch, Role::charlie, LinkId::ac, st_ac);
        kgp_ab = detail::kgp_collect(config, st_ab);
        kgp_ac = detail::kgp_collect(config, st_ac);
    }

    // Extractable key length from the B-C pair.
    std::uint64_t ell = 0;
    {
        auto payload = ch.recv(Role::bob, MsgType::key_report);
        detail::ByteReader r(payload);
        ell = r.u64();
        io.out.table1_text = r.str();
        r.done();
    }
    io.out.ell = ell;

    // Signature length: the key budget, capped by the raw material and the
    // configured ceiling.
    std::size_t L = 0;
    try {
        L = qds::select_L(ell);
    } catch (const qds::QdsError& e) {
        ch.send_abort(Role::bob, "signature_length", e.what());
        ch.send_abort(Role::charlie, "signature_length", e.what());
        throw AbortError("signature_length", e.what());
    }
    for (const auto* k : {&kgp_ab, &kgp_ac}) {
        const std::uint64_t half = k->n_sifted / 2;
        const std::uint64_t cap =
            half > config.harness.min_kgp_test ? half - config.harness.min_kgp_test : 0;
        L = std::min<std::size_t>(L, std::size_t(cap));
    }
    if (config.harness.max_L > 0) L = std::min<std::size_t>(L, std::size_t(config.harness.max_L));
    L &= ~std::size_t(1);
    io.out.L = L;
    if (L < 2) {
        ch.send_abort(Role::bob, "signature_length", "not enough raw signature material");
        ch.send_abort(Role::charlie, "signature_length", "not enough raw signature material");
        throw AbortError("signature_length", "not enough raw signature material");
    }

    const std::uint64_t kgp_seed_ab = root.split(detail::kSaltKgpAb).seed_key();
    const std::uint64_t kgp_seed_ac = root.split(detail::kSaltKgpAc).seed_key();
    ch.send(Role::bob, MsgType::params, detail::encode_params1(L, kgp_seed_ab));
    ch.send(Role::charlie, MsgType::params, detail::encode_params1(L, kgp_seed_ac));

    const auto sel_ab = kgp::kgp_select(kgp_ab.raw.size(), L, kgp_seed_ab);
    const auto sel_ac = kgp::kgp_select(kgp_ac.raw.size(), L, kgp_seed_ac);
    auto stats_ab = detail::kgp_test_exchange(ch, Role::bob, LinkId::ab, kgp_ab.raw, sel_ab, L,
                                              config.security.eps_pe);
    auto stats_ac = detail::kgp_test_exchange(ch, Role::charlie, LinkId::ac, kgp_ac.raw, sel_ac, L,
                                              config.security.eps_pe);

    double e_bar = std::max({stats_ab.e_bound[0], stats_ab.e_bound[1], stats_ac.e_bound[0],
                             stats_ac.e_bound[1]});
    const double observed_rate =
        std::max(stats_ab.observed_rate(), stats_ac.observed_rate());

    double p_e = 0;
    if (config.thresholds.p_e_override) {
        p_e = *config.thresholds.p_e_override;
    } else if (kgp_ab.have_stats && kgp_ac.have_stats) {
        try {
            const double frac_ab = kgp_ab.n1 / double(std::max<std::size_t>(kgp_ab.n_sifted, 1));
            const double frac_ac = kgp_ac.n1 / double(std::max<std::size_t>(kgp_ac.n_sifted, 1));
            const double pe_ab = qds::estimate_p_e(double(L) / 2.0 * frac_ab, kgp_ab.e1, L);
            const double pe_ac = qds::estimate_p_e(double(L) / 2.0 * frac_ac, kgp_ac.e1, L);
            p_e = std::min(pe_ab, pe_ac);
        } catch (const qds::QdsError& e) {
            ch.send_abort(Role::bob, "p_e", e.what());
            ch.send_abort(Role::charlie, "p_e", e.what());
            throw AbortError("p_e", e.what());
        }
    } else {
        ch.send_abort(Role::bob, "p_e", "fixture mode requires a p_e override");
        ch.send_abort(Role::charlie, "p_e", "fixture mode requires a p_e override");
        throw AbortError("p_e", "fixture mode requires a p_e override");
    }
    if (config.thresholds.e_bar_override) e_bar = *config.thresholds.e_bar_override;

    qds::Thresholds thresholds;
    try {
        if (config.thresholds.count_a && config.thresholds.count_v) {
            thresholds = qds::Thresholds::from_counts(*config.thresholds.count_a,
                                                      *config.thresholds.count_v, L, e_bar, p_e);
        } else {
            thresholds = qds::choose_thresholds(e_bar, p_e, L, config.thresholds.delta);
        }
    } catch (const qds::QdsError& e) {
        ch.send_abort(Role::bob, "thresholds", e.what());
        ch.send_abort(Role::charlie, "thresholds", e.what());
        throw AbortError("thresholds", e.what());
    }

    detail::Params2 p2;
    p2.e_bar = thresholds.e_bar;
    p2.p_e = thresholds.p_e;
    p2.s_a = thresholds.s_a;
    p2.s_v = thresholds.s_v;
    p2.count_a = thresholds.count_a;
    p2.count_v = thresholds.count_v;
    p2.trials = config.harness.trials;
    p2.message = std::uint8_t(config.harness.message & 1);
    p2.adversary = std::uint8_t(detail::adversary_code(config.harness.adversary));
    p2.forge_rate =
        config.fixture.forge_error_rate > 0 ? config.fixture.forge_error_rate : thresholds.p_e;
    ch.send(Role::bob, MsgType::params, detail::encode_params2(p2));
    ch.send(Role::charlie, MsgType::params, detail::encode_params2(p2));

    ch.advance_phase(Phase::messaging);

    // Signature strings per recipient and message value.
    const int m = p2.message;
    Bitstring A_b[2] = {kgp_ab.raw.select(sel_ab.keep[0]), kgp_ab.raw.select(sel_ab.keep[1])};
    Bitstring A_c[2] = {kgp_ac.raw.select(sel_ac.keep[0]), kgp_ac.raw.select(sel_ac.keep[1])};

    if (p2.adversary == 0) {
        qds::Signature sig = qds::sign(m, A_b[m], A_c[m]);
        ch.send(Role::bob, MsgType::signature, detail::encode_signature(0, sig));
        io.out.decisions.push_back(detail::decode_decision(ch.recv(Role::bob, MsgType::decision)));
        io.out.decisions.push_back(
            detail::decode_decision(ch.recv(Role::charlie, MsgType::decision)));
    } else if (p2.adversary == 1) {
        // Repudiation: plant just enough mismatches in Bob's string that his
        // acceptance forces Charlie past the verification budget.
        const std::uint64_t planted = p2.count_a + p2.count_v - 1;
        SplitRng plant_root = root.split(detail::kSaltPlant);
        io.out.adversary_trials = p2.trials;
        for (std::uint64_t t = 0; t < p2.trials; ++t) {
            qds::Signature sig = qds::sign(m, A_b[m], A_c[m]);
            SplitRng rng = plant_root.split(t);
            std::vector<std::uint32_t> pos(L);
            for (std::size_t i = 0; i < L; ++i) pos[i] = std::uint32_t(i);
            rng.shuffle(pos);
            for (std::uint64_t i = 0; i < planted && i < L; ++i) sig.sig_b.flip(pos[i]);
            ch.send(Role::bob, MsgType::signature, detail::encode_signature(t, sig));
            auto d_b = detail::decode_decision(ch.recv(Role::bob, MsgType::decision));
            auto d_c = detail::decode_decision(ch.recv(Role::charlie, MsgType::decision));
            if (d_b.accept && !d_c.accept) ++io.out.adversary_successes;
            if (t == 0) {
                io.out.decisions.push_back(d_b);
                io.out.decisions.push_back(d_c);
            }
        }
    } else {
        // Forging runs entirely between the recipients; collect the summary.
        auto payload = ch.recv(Role::bob, MsgType::decision);
        auto d = detail::decode_decision(payload);
        io.out.adversary_successes = d.mismatch_direct;
        io.out.adversary_trials = d.mismatch_forwarded;
    }

    // Security report.
    qds::SecurityReport rep;
    rep.thresholds = thresholds;
    rep.eps_rob = qds::robustness_bound(observed_rate, thresholds.s_a, L, config.security.eps_pe);
    rep.eps_rep = qds::repudiation_bound(thresholds.s_a, thresholds.s_v, L, config.budget.eps_qkd);
    try {
        rep.eps_for = qds::forging_bound(thresholds.p_e, thresholds.s_v, L, config.security.f,
                                         config.security.eps, config.security.eps_pe,
                                         config.security.eps_est);
    } catch (const qds::QdsError&) {
        rep.eps_for = qds::BoundResult{1.0, true};
        rep.notes.push_back("forging bound vacuous: no entropy gap");
    }
    rep.notes.push_back("eps_for split (f, eps, eps_PE, eps_est) is calibrated, not derived");
    if (config.thresholds.p_e_override) rep.notes.push_back("p_E pinned by configuration");
    if (config.thresholds.e_bar_override) rep.notes.push_back("E_bar pinned by configuration");
    io.out.report = rep;
    io.out.have_report = true;
    ch.advance_phase(Phase::done);
}

// ---------------------------------------------------------------------------
// Recipients. Bob is the B-C reference side and the message conduit.

inline void run_recipient(PartyIo& io, Role self) {
    const auto& config = *io.config;
    Channels& ch = *io.channels;
    SplitRng root = io.root();
    io.out.role = self;
    const bool is_bob = self == Role::bob;
    const Role other = is_bob ? Role::charlie : Role::bob;

    // Distribution: B-C QKD for the OTP, A-side KGP for the signature keys.
    detail::QkdOutcome qkd;
    detail::KgpLinkState kgp_link;
    if (config.fixture.enabled) {
        SplitRng otp_rng = SplitRng(io.seed).split(detail::kSaltFixtureOtp);
        qkd.s_bc = Bitstring::random(config.fixture.ell, otp_rng);
        qkd.ell_used = qkd.s_bc.size();
        const std::uint64_t salt = detail::kSaltFixtureRaw + (is_bob ? 0 : 4);
        kgp_link.raw = detail::fixture_raw(config, io.seed, salt, true);
        kgp_link.n_sifted = kgp_link.raw.size();
        if (is_bob) {
            detail::ByteWriter w;
            w.u64(qkd.ell_used);
            w.str("");
            ch.send(Role::alice, MsgType::key_report, std::move(w.buf));
        }
    } else {
        detail::LinkStation st_bc, st_a;
        st_bc.side = is_bob ? 0 : 1;
        st_a.side = 1;
        // Eve sends the A-link material first for Alice's links; for this
        // party the order is: its A-link (ab or ac), then bc. Receive in
        // Eve's emission order: ab, ac, bc.
        if (is_bob) {
            st_a.view = detail::decode_view(ch.recv(Role::eve, MsgType::party_view), LinkId::ab);
            st_a.tally = detail::decode_tally(ch.recv(Role::eve, MsgType::tally), LinkId::ab);
            st_bc.view = detail::decode_view(ch.recv(Role::eve, MsgType::party_view), LinkId::bc);
            st_bc.tally = detail::decode_tally(ch.recv(Role::eve, MsgType::tally), LinkId::bc);
        } else {
            st_a.view = detail::decode_view(ch.recv(Role::eve, MsgType::party_view), LinkId::ac);
            st_a.tally = detail::decode_tally(ch.recv(Role::eve, MsgType::tally), LinkId::ac);
            st_bc.view = detail::decode_view(ch.recv(Role::eve, MsgType::party_view), LinkId::bc);
            st_bc.tally = detail::decode_tally(ch.recv(Role::eve, MsgType::tally), LinkId::bc);
        }
        detail::exchange_announcements(ch, Role::alice, is_bob ? LinkId::ab : LinkId::ac, st_a);
        detail::exchange_announcements(ch, other, LinkId::bc, st_bc);
        kgp_link = detail::kgp_collect(config, st_a);

        qkd = detail::qkd_post_processing(io, ch, other, st_bc, is_bob);
        if (is_bob) {
            detail::ByteWriter w;
            w.u64(qkd.ell_used);
            w.str(qkd.table1_text);
            ch.send(Role::alice, MsgType::key_report, std::move(w.buf));
        }
    }
    io.out.ell = qkd.ell_used;
    io.out.table1_text = qkd.table1_text;

    // Parameters from the signer.
    std::size_t L = 0;
    std::uint64_t kgp_seed = 0;
    {
        auto payload = ch.recv(Role::alice, MsgType::params);
        detail::ByteReader r(payload);
        if (r.u8() != 1) throw HarnessError("expected stage-1 parameters");
        L = std::size_t(r.u64());
        kgp_seed = r.u64();
        r.done();
    }
    io.out.L = L;
    const auto sel = kgp::kgp_select(kgp_link.raw.size(), L, kgp_seed);
    detail::kgp_test_exchange(ch, Role::alice, is_bob ? LinkId::ab : LinkId::ac, kgp_link.raw, sel,
                              L, config.security.eps_pe);
    const Bitstring K[2] = {kgp_link.raw.select(sel.keep[0]), kgp_link.raw.select(sel.keep[1])};

    detail::Params2 p2 = detail::decode_params2(ch.recv(Role::alice, MsgType::params));
    // Re-derive locally so a malformed parameter set fails here, not mid-verify.
    (void)qds::Thresholds::from_counts(p2.count_a, p2.count_v, L, p2.e_bar, p2.p_e);

    // Symmetrization.
    ch.advance_phase(Phase::symmetrization);
    OtpVault vault(qkd.s_bc);
    const std::uint64_t my_base = is_bob ? 0 : 3 * std::uint64_t(L);
    const std::uint64_t peer_base = is_bob ? 3 * std::uint64_t(L) : 0;
    SplitRng sym_rng = root.split(is_bob ? detail::kSaltSymBob : detail::kSaltSymCharlie);
    qds::SymmetrizedState state;
    state.who = is_bob ? qds::Recipient::bob : qds::Recipient::charlie;
    state.L = L;
    qds::HalfSelection half_sel[2];
    for (int m = 0; m < 2; ++m) {
        SplitRng rng = sym_rng.split(std::uint64_t(m));
        half_sel[m] = qds::select_half(L, rng);
        Bitstring pad = vault.take_at(my_base + std::uint64_t(m) * (3 * std::uint64_t(L) / 2),
                                      3 * std::uint64_t(L) / 2);
        Bitstring cipher = qds::otp_crypt(qds::encode_half_message(K[m], half_sel[m]), pad);
        detail::ByteWriter w;
        w.u8(std::uint8_t(m));
        w.u64(L);
        w.bits(cipher);
        ch.send(other, MsgType::sym_half, std::move(w.buf));
        state.msg[m].kept.bits = K[m].select(half_sel[m].kept_idx);
        state.msg[m].kept.indices = half_sel[m].kept_idx;
    }
    for (int i = 0; i < 2; ++i) {
        auto payload = ch.recv(other, MsgType::sym_half);
        detail::ByteReader r(payload);
        const int m = r.u8();
        if (r.u64() != L) throw HarnessError("symmetrization length mismatch");
        Bitstring cipher = r.bits();
        r.done();
        if (m != 0 && m != 1) throw HarnessError("symmetrization message index out of range");
        Bitstring pad = vault.take_at(peer_base + std::uint64_t(m) * (3 * std::uint64_t(L) / 2),
                                      3 * std::uint64_t(L) / 2);
        state.msg[m].forwarded = qds::decode_half_message(qds::otp_crypt(cipher, pad), L);
    }
    state.otp_consumed = vault.consumed();
    io.out.otp_consumed = vault.consumed();

    // Messaging.
    ch.advance_phase(Phase::messaging);
    if (p2.adversary == 2) {
        // Forging: Charlie hands the instrument data over, Bob fabricates.
        const int m_forge = 1 - int(p2.message);
        if (!is_bob) {
            detail::ByteWriter w;
            w.u8(std::uint8_t(m_forge));
            w.bits(state.msg[m_forge].kept.bits);
            ch.send(Role::bob, MsgType::instrument, std::move(w.buf));
            io.out.adversary_trials = p2.trials;
            for (std::uint64_t t = 0; t < p2.trials; ++t) {
                auto [trial, sig] = detail::decode_signature(ch.recv(Role::bob, MsgType::signature));
                auto v = qds::verify(sig, state, p2.count_v);
                DecisionRecord d{trial, v.accept, v.mismatch_direct, v.mismatch_forwarded};
                ch.send(Role::bob, MsgType::decision, detail::encode_decision(d));
                if (v.accept) ++io.out.adversary_successes;
                if (t == 0) io.out.decisions.push_back(d);
            }
        } else {
            Bitstring charlie_kept;
            std::vector<std::uint32_t> charlie_kept_idx;
            {
                auto payload = ch.recv(other, MsgType::instrument);
                detail::ByteReader r(payload);
                if (r.u8() != m_forge) throw HarnessError("instrument for wrong message");
                charlie_kept = r.bits();
                r.done();
            }
            // Charlie's kept positions are the complement of what he sent us.
            {
                Bitstring sent_marker(L);
                for (auto i : state.msg[m_forge].forwarded.indices) sent_marker.set(i, true);
                for (std::uint32_t i = 0; i < L; ++i)
                    if (!sent_marker.get(i)) charlie_kept_idx.push_back(i);
            }
            if (charlie_kept.size() != charlie_kept_idx.size())
                throw HarnessError("instrument length mismatch");
            SplitRng forge_root = root.split(detail::kSaltForge);
            io.out.adversary_trials = p2.trials;
            for (std::uint64_t t = 0; t < p2.trials; ++t) {
                SplitRng rng = forge_root.split(t);
                qds::Signature sig;
                sig.m = m_forge;
                sig.sig_b = K[m_forge];
                Bitstring guess(L);
                for (std::size_t i = 0; i < state.msg[m_forge].forwarded.indices.size(); ++i)
                    guess.set(state.msg[m_forge].forwarded.indices[i],
                              state.msg[m_forge].forwarded.bits.get(i));
                for (std::size_t i = 0; i < charlie_kept_idx.size(); ++i) {
                    const bool truth = charlie_kept.get(i);
                    guess.set(charlie_kept_idx[i],
                              rng.bernoulli(p2.forge_rate) ? !truth : truth);
                }
                sig.sig_c = guess;
                ch.send(other, MsgType::signature, detail::encode_signature(t, sig));
                auto d = detail::decode_decision(ch.recv(other, MsgType::decision));
                if (d.accept) ++io.out.adversary_successes;
                if (t == 0) io.out.decisions.push_back(d);
            }
            DecisionRecord summary;
            summary.trial = p2.trials;
            summary.accept = io.out.adversary_successes == 0;
            summary.mismatch_direct = io.out.adversary_successes;
            summary.mismatch_forwarded = p2.trials;
            ch.send(Role::alice, MsgType::decision, detail::encode_decision(summary));
        }
    } else {
        const std::uint64_t budget = is_bob ? p2.count_a : p2.count_v;
        const std::uint64_t trials = p2.adversary == 1 ? p2.trials : 1;
        for (std::uint64_t t = 0; t < trials; ++t) {
            auto [trial, sig] =
                detail::decode_signature(ch.recv(is_bob ? Role::alice : Role::bob, MsgType::signature));
            auto v = qds::verify(sig, state, budget);
            DecisionRecord d{trial, v.accept, v.mismatch_direct, v.mismatch_forwarded};
            io.out.decisions.push_back(d);
            if (is_bob) {
                ch.send(other, MsgType::signature, detail::encode_signature(trial, sig));
                ch.send(Role::alice, MsgType::decision, detail::encode_decision(d));
            } else {
                ch.send(Role::alice, MsgType::decision, detail::encode_decision(d));
                if (p2.adversary == 0)
                    ch.send(Role::bob, MsgType::decision, detail::encode_decision(d));
            }
        }
        if (is_bob && p2.adversary == 0) {
            auto d = detail::decode_decision(ch.recv(other, MsgType::decision));
            (void)d;
        }
    }
    ch.advance_phase(Phase::done);
}

// ---------------------------------------------------------------------------
// Orchestration

inline RunResult run_protocol(const cfg::ExperimentConfig& config, const std::string& out_dir) {
    config.validate();
    ensure_auth_keys(config.key_dir, config.harness.auth_key_bits, config.session.seed);

    const std::string transcript_dir = out_dir + "/transcript";
    std::filesystem::create_directories(out_dir);
    Transcript transcript(transcript_dir);
    const auto session_id = detail::session_id_from_seed(config.session.seed);
    const auto timeout = std::chrono::milliseconds(std::int64_t(config.harness.timeout_s) * 1000);

    std::unique_ptr<InprocHub> hub;
    std::unique_ptr<SocketNet> net;
    std::unique_ptr<Endpoint> plugs[4];
    if (config.harness.transport == "inproc") {
        hub = std::make_unique<InprocHub>();
        for (int r = 0; r < 4; ++r) plugs[r] = hub->plug(Role(r));
    } else if (config.harness.transport == "socket") {
        net = std::make_unique<SocketNet>(config.harness.host, config.harness.base_port);
        net->start();
        for (int r = 0; r < 4; ++r) plugs[r] = net->plug(Role(r));
    } else {
        throw HarnessError("unknown transport: " + config.harness.transport);
    }

    std::array<std::unique_ptr<Channels>, 4> channels;
    for (int r = 0; r < 4; ++r)
        channels[std::size_t(r)] = std::make_unique<Channels>(
            Role(r), plugs[r].get(), &transcript, session_id, config.key_dir, timeout);

    std::array<PartyIo, 4> ios;
    for (int r = 0; r < 4; ++r) {
        ios[std::size_t(r)].config = &config;
        ios[std::size_t(r)].channels = channels[std::size_t(r)].get();
        ios[std::size_t(r)].seed = config.session.seed;
    }

    std::array<std::exception_ptr, 4> errors{};
    auto worker = [&](int r) {
        try {
            switch (Role(r)) {
                case Role::alice: run_alice(ios[std::size_t(r)]); break;
                case Role::bob: run_recipient(ios[std::size_t(r)], Role::bob); break;
                case Role::charlie: run_recipient(ios[std::size_t(r)], Role::charlie); break;
                case Role::eve: run_eve(ios[std::size_t(r)]); break;
            }
        } catch (const AbortError& e) {
            ios[std::size_t(r)].out.aborted = true;
            ios[std::size_t(r)].out.abort_stage = e.stage;
            ios[std::size_t(r)].out.abort_detail = e.what();
        } catch (...) {
            errors[std::size_t(r)] = std::current_exception();
        }
    };

    std::vector<std::thread> threads;
    for (int r = 0; r < 4; ++r) threads.emplace_back(worker, r);
    for (auto& t : threads) t.join();
    if (net) net->shutdown();
    for (int r = 0; r < 4; ++r)
        ios[std::size_t(r)].out.audit = channels[std::size_t(r)]->audit();
    transcript.finish();

    for (int r = 0; r < 4; ++r)
        if (errors[std::size_t(r)]) std::rethrow_exception(errors[std::size_t(r)]);

    RunResult result;
    result.alice = std::move(ios[0].out);
    result.bob = std::move(ios[1].out);
    result.charlie = std::move(ios[2].out);
    result.transcript_dir = transcript_dir;
    result.success = !result.alice.aborted && !result.bob.aborted && !result.charlie.aborted;
    if (!result.success) {
        for (const auto* p : {&result.bob, &result.charlie, &result.alice})
            if (p->aborted) result.failure_stage = p->abort_stage;
    }
    return result;
}

}  // namespace mdiqds::harness
