#pragma once

#include <cctype>
#include <cmath>
#include <cstdint>
#include <cstdlib>
#include <fstream>
#include <map>
#include <optional>
#include <sstream>
#include <stdexcept>
#include <string>

#include "mdiqds/decoy_fk.hpp"
#include "mdiqds/quantum_sim.hpp"

namespace mdiqds::cfg {

struct ConfigError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Sectioned key = value text. '#' and ';' start comments; whitespace around
// tokens is ignored; later duplicates override earlier ones.
class Ini {
public:
    Ini() = default;

    static Ini parse(std::istream& in) {
        Ini ini;
        std::string line, section;
        std::size_t lineno = 0;
        while (std::getline(in, line)) {
            ++lineno;
            const auto cut = line.find_first_of("#;");
            if (cut != std::string::npos) line.erase(cut);
            const std::string t = trim(line);
            if (t.empty()) continue;
            if (t.front() == '[') {
                if (t.back() != ']')
                    throw ConfigError("config line " + std::to_string(lineno) + ": unterminated section");
                section = trim(t.substr(1, t.size() - 2));
                if (section.empty())
                    throw ConfigError("config line " + std::to_string(lineno) + ": empty section name");
                continue;
            }
            const auto eq = t.find('=');
            if (eq == std::string::npos)
                throw ConfigError("config line " + std::to_string(lineno) + ": expected key = value");
            const std::string key = trim(t.substr(0, eq));
            const std::string val = trim(t.substr(eq + 1));
            if (key.empty())
                throw ConfigError("config line " + std::to_string(lineno) + ": empty key");
            ini.values_[section][key] = val;
        }
        return ini;
    }

    static Ini parse_file(const std::string& path) {
        std::ifstream in(path);
        if (!in) throw ConfigError("cannot open config file: " + path);
        return parse(in);
    }

    static Ini parse_string(const std::string& text) {
        std::istringstream in(text);
        return parse(in);
    }

    bool has(const std::string& section, const std::string& key) const {
        auto s = values_.find(section);
        return s != values_.end() && s->second.count(key) > 0;
    }

    std::string get_string(const std::string& section, const std::string& key,
                           const std::string& fallback) const {
        auto s = values_.find(section);
        if (s == values_.end()) return fallback;
        auto k = s->second.find(key);
        return k == s->second.end() ? fallback : k->second;
    }

    double get_double(const std::string& section, const std::string& key, double fallback) const {
        if (!has(section, key)) return fallback;
        const std::string v = get_string(section, key, "");
        try {
            std::size_t pos = 0;
            const double d = std::stod(v, &pos);
            if (pos != v.size()) throw std::invalid_argument(v);
            return d;
        } catch (const std::exception&) {
            throw ConfigError("config [" + section + "] " + key + ": not a number: " + v);
        }
    }

    std::uint64_t get_u64(const std::string& section, const std::string& key,
                          std::uint64_t fallback) const {
        if (!has(section, key)) return fallback;
        const std::string v = get_string(section, key, "");
        try {
            std::size_t pos = 0;
            const double asd = std::stod(v, &pos);  // allow 1e9 style counts
            if (pos == v.size() && asd >= 0 && asd <= 1.8e19 && asd == std::floor(asd))
                return std::uint64_t(asd);
            throw std::invalid_argument(v);
        } catch (const std::exception&) {
            throw ConfigError("config [" + section + "] " + key + ": not a count: " + v);
        }
    }

    bool get_bool(const std::string& section, const std::string& key, bool fallback) const {
        if (!has(section, key)) return fallback;
        const std::string v = get_string(section, key, "");
        if (v == "true" || v == "1" || v == "yes" || v == "on") return true;
        if (v == "false" || v == "0" || v == "no" || v == "off") return false;
        throw ConfigError("config [" + section + "] " + key + ": not a boolean: " + v);
    }

    const std::map<std::string, std::map<std::string, std::string>>& sections() const {
        return values_;
    }

private:
    static std::string trim(const std::string& s) {
        std::size_t b = 0, e = s.size();
        while (b < e && std::isspace(static_cast<unsigned char>(s[b]))) ++b;
        while (e > b && std::isspace(static_cast<unsigned char>(s[e - 1]))) --e;
        return s.substr(b, e - b);
    }

    std::map<std::string, std::map<std::string, std::string>> values_;
};

// ---------------------------------------------------------------------------
// Experiment-level aggregation

struct SessionPlan {
    std::uint64_t pulses_ab = 0, pulses_ac = 0, pulses_bc = 0;
    std::uint64_t seed = 1;
};

struct ThresholdPolicy {
    double delta = 0.0002;
    // Direct integer budgets; when set they take precedence over the delta
    // policy (the reference tables pin the budgets, not the rates).
    std::optional<std::uint64_t> count_a, count_v;
    std::optional<double> e_bar_override, p_e_override;
};

struct SecurityOverrides {
    double f = 7.5e-8;
    double eps = 1.95e-16;
    double eps_pe = 1e-8;
    double eps_est = 1e-8;
};

struct ReconcilePlan {
    int passes = 4;
    double test_fraction = 0.01;
    std::uint64_t min_test_bits = 200;
    std::uint64_t max_test_bits = 1u << 20;
};

struct HarnessPlan {
    std::string transport = "inproc";
    std::string host = "127.0.0.1";
    int base_port = 46100;
    int timeout_s = 300;
    int message = 1;
    std::string adversary = "honest";
    std::uint64_t trials = 1;
    std::uint64_t max_L = 0;  // 0 = uncapped
    std::uint64_t auth_key_bits = 1u << 21;
    std::uint64_t min_kgp_test = 64;  // per half, after keeping L signature bits
};

// Replaces the quantum distribution stage with synthetic correlated material,
// for running the classical stages at scales the desk model cannot generate.
struct FixturePlan {
    bool enabled = false;
    std::uint64_t ell = 0;            // announced extractable key length
    std::uint64_t kgp_raw = 0;        // raw correlated bits per signing link
    double kgp_error_rate = 0.0;      // honest mismatch rate of that material
    double forge_error_rate = 0.0;    // 0 = use the run's p_E for the forging adversary
};

struct ExperimentConfig {
    sim::SourceConfig source_alice, source_bob, source_charlie;
    sim::LinkConfig link_ab, link_ac, link_bc;
    SessionPlan session;
    decoy::EpsilonBudget budget = decoy::EpsilonBudget::uniform(8e-8);
    decoy::Deviation deviation = decoy::Deviation::hoeffding;
    ThresholdPolicy thresholds;
    SecurityOverrides security;
    ReconcilePlan reconcile;
    HarnessPlan harness;
    FixturePlan fixture;
    std::string key_dir = "keys";
    std::string out_dir = "out";

    void validate() const {
        source_alice.validate();
        source_bob.validate();
        source_charlie.validate();
        link_ab.validate();
        link_ac.validate();
        link_bc.validate();
        budget.validate();
        if (!fixture.enabled &&
            (session.pulses_ab == 0 || session.pulses_ac == 0 || session.pulses_bc == 0))
            throw ConfigError("session pulse budgets must be positive");
        if (fixture.enabled && (fixture.ell < 12 || fixture.kgp_raw == 0))
            throw ConfigError("fixture mode needs ell >= 12 and kgp_raw > 0");
    }
};

namespace detail {

inline void load_source(const Ini& ini, const std::string& sec, sim::SourceConfig& s) {
    s.mu = ini.get_double(sec, "mu", s.mu);
    s.nu = ini.get_double(sec, "nu", s.nu);
    s.w = ini.get_double(sec, "w", s.w);
    s.p_mu = ini.get_double(sec, "p_mu", s.p_mu);
    s.p_nu = ini.get_double(sec, "p_nu", s.p_nu);
    s.p_w = ini.get_double(sec, "p_w", s.p_w);
    s.p_z_decoy = ini.get_double(sec, "p_z_decoy", s.p_z_decoy);
    s.rep_rate_hz = ini.get_double(sec, "rep_rate_hz", s.rep_rate_hz);
}

inline void load_link(const Ini& ini, const std::string& sec, sim::LinkConfig& l) {
    l.loss_a_db = ini.get_double(sec, "loss_a_db", l.loss_a_db);
    l.loss_b_db = ini.get_double(sec, "loss_b_db", l.loss_b_db);
    l.insertion_db = ini.get_double(sec, "insertion_db", l.insertion_db);
    l.det_eff_0 = ini.get_double(sec, "det_eff_0", l.det_eff_0);
    l.det_eff_1 = ini.get_double(sec, "det_eff_1", l.det_eff_1);
    l.window_eff = ini.get_double(sec, "window_eff", l.window_eff);
    l.dark_rate_hz = ini.get_double(sec, "dark_rate_hz", l.dark_rate_hz);
    l.visibility = ini.get_double(sec, "visibility", l.visibility);
}

}  // namespace detail

inline ExperimentConfig load_experiment(const Ini& ini) {
    ExperimentConfig c;
    detail::load_source(ini, "source", c.source_alice);  // shared baseline
    c.source_bob = c.source_charlie = c.source_alice;
    detail::load_source(ini, "source.alice", c.source_alice);
    detail::load_source(ini, "source.bob", c.source_bob);
    detail::load_source(ini, "source.charlie", c.source_charlie);

    detail::load_link(ini, "link", c.link_ab);  // shared baseline
    c.link_ac = c.link_bc = c.link_ab;
    detail::load_link(ini, "link.ab", c.link_ab);
    detail::load_link(ini, "link.ac", c.link_ac);
    detail::load_link(ini, "link.bc", c.link_bc);

    c.session.pulses_ab = ini.get_u64("session", "pulses_ab", ini.get_u64("session", "pulses", 0));
    c.session.pulses_ac = ini.get_u64("session", "pulses_ac", ini.get_u64("session", "pulses", 0));
    c.session.pulses_bc = ini.get_u64("session", "pulses_bc", ini.get_u64("session", "pulses", 0));
    c.session.seed = ini.get_u64("session", "seed", 1);

    const double eps_qkd = ini.get_double("epsilon", "eps_qkd", 8e-8);
    c.budget = decoy::EpsilonBudget::uniform(eps_qkd);
    if (ini.has("epsilon", "eps_cor")) c.budget.eps_cor = ini.get_double("epsilon", "eps_cor", 0);
    c.budget.validate();
    const std::string dev = ini.get_string("epsilon", "deviation", "hoeffding");
    if (dev == "kl")
        c.deviation = decoy::Deviation::kl;
    else if (dev != "hoeffding")
        throw ConfigError("epsilon.deviation must be hoeffding or kl, got '" + dev + "'");

    c.thresholds.delta = ini.get_double("qds", "delta", c.thresholds.delta);
    if (ini.has("qds", "count_a")) c.thresholds.count_a = ini.get_u64("qds", "count_a", 0);
    if (ini.has("qds", "count_v")) c.thresholds.count_v = ini.get_u64("qds", "count_v", 0);
    if (ini.has("qds", "e_bar")) c.thresholds.e_bar_override = ini.get_double("qds", "e_bar", 0);
    if (ini.has("qds", "p_e")) c.thresholds.p_e_override = ini.get_double("qds", "p_e", 0);
    c.security.f = ini.get_double("qds", "f", c.security.f);
    c.security.eps = ini.get_double("qds", "eps", c.security.eps);
    c.security.eps_pe = ini.get_double("qds", "eps_pe", c.security.eps_pe);
    c.security.eps_est = ini.get_double("qds", "eps_est", c.security.eps_est);

    c.reconcile.passes = int(ini.get_u64("reconcile", "passes", std::uint64_t(c.reconcile.passes)));
    c.reconcile.test_fraction =
        ini.get_double("reconcile", "test_fraction", c.reconcile.test_fraction);
    c.reconcile.min_test_bits =
        ini.get_u64("reconcile", "min_test_bits", c.reconcile.min_test_bits);
    c.reconcile.max_test_bits =
        ini.get_u64("reconcile", "max_test_bits", c.reconcile.max_test_bits);

    c.harness.transport = ini.get_string("harness", "transport", c.harness.transport);
    c.harness.host = ini.get_string("harness", "host", c.harness.host);
    c.harness.base_port = int(ini.get_u64("harness", "base_port", std::uint64_t(c.harness.base_port)));
    c.harness.timeout_s = int(ini.get_u64("harness", "timeout_s", std::uint64_t(c.harness.timeout_s)));
    c.harness.message = int(ini.get_u64("harness", "message", std::uint64_t(c.harness.message)));
    c.harness.adversary = ini.get_string("harness", "adversary", c.harness.adversary);
    c.harness.trials = ini.get_u64("harness", "trials", c.harness.trials);
    c.harness.max_L = ini.get_u64("harness", "max_L", c.harness.max_L);
    c.harness.auth_key_bits = ini.get_u64("harness", "auth_key_bits", c.harness.auth_key_bits);
    c.harness.min_kgp_test = ini.get_u64("harness", "min_kgp_test", c.harness.min_kgp_test);

    c.fixture.enabled = ini.get_bool("fixture", "enabled", c.fixture.enabled);
    c.fixture.ell = ini.get_u64("fixture", "ell", c.fixture.ell);
    c.fixture.kgp_raw = ini.get_u64("fixture", "kgp_raw", c.fixture.kgp_raw);
    c.fixture.kgp_error_rate = ini.get_double("fixture", "kgp_error_rate", c.fixture.kgp_error_rate);
    c.fixture.forge_error_rate =
        ini.get_double("fixture", "forge_error_rate", c.fixture.forge_error_rate);

    c.key_dir = ini.get_string("keys", "dir", c.key_dir);
    c.out_dir = ini.get_string("output", "dir", c.out_dir);

    if (const char* env = std::getenv("MDIQDS_KEY_DIR"); env && *env) c.key_dir = env;
    return c;
}

inline ExperimentConfig load_experiment_file(const std::string& path) {
    ExperimentConfig c = load_experiment(Ini::parse_file(path));
    c.validate();
    return c;
}

}  // namespace mdiqds::cfg
