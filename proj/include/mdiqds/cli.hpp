#pragma once

#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "mdiqds/config.hpp"
#include "mdiqds/decoy_fk.hpp"
#include "mdiqds/harness.hpp"
#include "mdiqds/keyfile.hpp"
#include "mdiqds/qds.hpp"
#include "mdiqds/quantum_sim.hpp"

namespace mdiqds::cli {

struct FileError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// One exit code per failure stage; printed by `mdiqds --help`.
enum ExitCode : int {
    exit_ok = 0,
    exit_usage = 2,       // bad flags or missing subcommand
    exit_config = 3,      // config file rejected
    exit_file = 4,        // input, output, or key file problem
    exit_sim = 5,         // quantum stage failure
    exit_analysis = 6,    // estimation, reconciliation, or bound arithmetic failure
    exit_abort = 7,       // protocol run ended in a typed abort
    exit_internal = 8,    // transport or framing failure
    exit_unexpected = 9,  // anything else
};

inline const char* kExitCodeTable =
    "exit codes:\n"
    "  0  success\n"
    "  2  usage error\n"
    "  3  configuration error\n"
    "  4  file error (input, output, or key material)\n"
    "  5  simulation failure\n"
    "  6  analysis failure\n"
    "  7  protocol abort (stage printed on stderr)\n"
    "  8  transport or framing failure\n"
    "  9  unexpected error\n";

// Maps a thrown failure to its exit code; commands themselves just throw.
template <class F>
int guarded(F&& body, std::ostream& err) {
    try {
        return body();
    } catch (const harness::AbortError& e) {
        err << "protocol abort at " << e.stage << ": " << e.what() << "\n";
        return exit_abort;
    } catch (const cfg::ConfigError& e) {
        err << "config error: " << e.what() << "\n";
        return exit_config;
    } catch (const FileError& e) {
        err << "file error: " << e.what() << "\n";
        return exit_file;
    } catch (const KeyFileError& e) {
        err << "file error: " << e.what() << "\n";
        return exit_file;
    } catch (const OtpReuseError& e) {
        err << "file error: " << e.what() << "\n";
        return exit_file;
    } catch (const OtpExhaustedError& e) {
        err << "file error: " << e.what() << "\n";
        return exit_file;
    } catch (const sim::SimError& e) {
        err << "simulation error: " << e.what() << "\n";
        return exit_sim;
    } catch (const decoy::EstimationError& e) {
        err << "analysis error: " << e.what() << "\n";
        return exit_analysis;
    } catch (const rec::ReconcileError& e) {
        err << "analysis error: " << e.what() << "\n";
        return exit_analysis;
    } catch (const qds::QdsError& e) {
        err << "analysis error: " << e.what() << "\n";
        return exit_analysis;
    } catch (const kgp::KgpError& e) {
        err << "analysis error: " << e.what() << "\n";
        return exit_analysis;
    } catch (const wire::WireError& e) {
        err << "transport error: " << e.what() << "\n";
        return exit_internal;
    } catch (const harness::HarnessError& e) {
        err << "transport error: " << e.what() << "\n";
        return exit_internal;
    } catch (const std::exception& e) {
        err << "error: " << e.what() << "\n";
        return exit_unexpected;
    }
}

namespace detail {

inline void write_text_file(const std::string& path, const std::string& text) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw FileError("cannot open for writing: " + path);
    out << text;
    if (!out) throw FileError("short write: " + path);
}

inline std::vector<double> parse_list(const std::string& csv, const char* what) {
    std::vector<double> out;
    std::stringstream ss(csv);
    std::string item;
    while (std::getline(ss, item, ',')) {
        if (item.empty()) continue;
        std::size_t pos = 0;
        double v;
        try {
            v = std::stod(item, &pos);
        } catch (const std::exception&) {
            throw cfg::ConfigError(std::string("bad ") + what + " list entry: " + item);
        }
        if (pos != item.size())
            throw cfg::ConfigError(std::string("bad ") + what + " list entry: " + item);
        out.push_back(v);
    }
    if (out.empty()) throw cfg::ConfigError(std::string("empty ") + what + " list");
    return out;
}

}  // namespace detail

// ---------------------------------------------------------------------------
// simulate: run the three quantum sessions and dump their tallies.

struct SimulateArgs {
    std::string config_path;
    std::optional<std::uint64_t> seed;
    std::string out_dir;  // empty = config's [output] dir
    bool oracle = false;
};

inline int run_simulate(const SimulateArgs& args, std::ostream& out) {
    auto config = cfg::load_experiment_file(args.config_path);
    if (args.seed) config.session.seed = *args.seed;
    if (config.session.pulses_ab == 0 || config.session.pulses_ac == 0 ||
        config.session.pulses_bc == 0)
        throw cfg::ConfigError("simulate requires positive pulse budgets on all three links");
    const std::string dir = args.out_dir.empty() ? config.out_dir : args.out_dir;
    std::filesystem::create_directories(dir);

    struct Plan {
        const char* name;
        const sim::SourceConfig *sx, *sy;
        const sim::LinkConfig* link;
        std::uint64_t pulses;
    };
    const Plan plans[3] = {
        {"ab", &config.source_alice, &config.source_bob, &config.link_ab,
         config.session.pulses_ab},
        {"ac", &config.source_alice, &config.source_charlie, &config.link_ac,
         config.session.pulses_ac},
        {"bc", &config.source_bob, &config.source_charlie, &config.link_bc,
         config.session.pulses_bc},
    };
    SplitRng root(config.session.seed);
    for (int i = 0; i < 3; ++i) {
        const auto& p = plans[i];
        const std::uint64_t seed =
            root.split(harness::detail::kSaltLinkBase + std::uint64_t(i)).seed_key();
        auto session =
            sim::sample_session(*p.sx, *p.sy, *p.link, p.pulses, seed, args.oracle, false);
        const std::string path = dir + "/tally_" + p.name + ".txt";
        std::ofstream f(path, std::ios::binary | std::ios::trunc);
        if (!f) throw FileError("cannot open for writing: " + path);
        session.tally.serialize(f);
        if (!f) throw FileError("short write: " + path);
        const auto& zmm = session.tally.at(sim::Intensity::sig, sim::Intensity::sig, sim::Basis::Z);
        char line[160];
        std::snprintf(line, sizeof line, "link %s pulses %llu zmumu_success %llu zmumu_qber %.6f\n",
                      p.name, static_cast<unsigned long long>(p.pulses),
                      static_cast<unsigned long long>(zmm.success),
                      zmm.success ? double(zmm.errors) / double(zmm.success) : 0.0);
        out << line << "wrote " << path << "\n";
    }
    return exit_ok;
}

// ---------------------------------------------------------------------------
// analyze: finite-key bounds and extractable key length from tallies or a
// pre-tabulated bounds file.

struct AnalyzeArgs {
    std::string config_path;              // optional, for the epsilon budget
    std::string table1_path;              // bounds file (mdiqds-table1)
    std::vector<std::string> tally_paths;  // alternative: raw tallies, merged
    std::string out_path;                 // optional copy of the report
    std::string deviation;                // "", "hoeffding" or "kl"
};

inline std::string write_analysis(const decoy::FiniteKeyBounds& bounds,
                                  const decoy::KeyLengthReport& rep) {
    std::ostringstream os;
    decoy::write_table1(os, bounds);
    char line[160];
    std::uint64_t ell_floor = 0;
    for (int i = 0; i < 4; ++i) {
        const auto [b, c] = decoy::kKeySettings[std::size_t(i)];
        std::snprintf(line, sizeof line, "contribution %-4s %.3f\n",
                      decoy::setting_label(b, c).c_str(), rep.contribution[std::size_t(i)]);
        os << line;
        if (rep.contribution[std::size_t(i)] > 0)
            ell_floor += std::uint64_t(std::floor(rep.contribution[std::size_t(i)]));
    }
    std::snprintf(line, sizeof line, "ell %.3f\n", rep.ell);
    os << line;
    std::snprintf(line, sizeof line, "ell_floor %llu\n",
                  static_cast<unsigned long long>(ell_floor));
    os << line;
    std::snprintf(line, sizeof line, "eps_cor_total %.6g\n", rep.eps_cor_total);
    os << line;
    std::snprintf(line, sizeof line, "eps_sec_total %.6g\n", rep.eps_sec_total);
    os << line;
    return os.str();
}

inline int run_analyze(const AnalyzeArgs& args, std::ostream& out) {
    decoy::EpsilonBudget budget = decoy::EpsilonBudget::uniform(8e-8);
    decoy::Deviation dev = decoy::Deviation::hoeffding;
    if (!args.config_path.empty()) {
        const auto c = cfg::load_experiment(cfg::Ini::parse_file(args.config_path));
        budget = c.budget;
        dev = c.deviation;
    }
    if (args.deviation == "kl")
        dev = decoy::Deviation::kl;
    else if (args.deviation == "hoeffding")
        dev = decoy::Deviation::hoeffding;
    else if (!args.deviation.empty())
        throw cfg::ConfigError("--deviation must be hoeffding or kl, got '" + args.deviation + "'");

    decoy::FiniteKeyBounds bounds;
    if (!args.table1_path.empty()) {
        std::ifstream in(args.table1_path, std::ios::binary);
        if (!in) throw FileError("cannot open bounds file: " + args.table1_path);
        bounds = decoy::parse_table1(in);
    } else if (!args.tally_paths.empty()) {
        sim::TallyMatrix total;
        bool first = true;
        for (const auto& path : args.tally_paths) {
            std::ifstream in(path, std::ios::binary);
            if (!in) throw FileError("cannot open tally file: " + path);
            auto t = sim::TallyMatrix::parse(in);
            if (first) {
                total = std::move(t);
                first = false;
            } else {
                total.merge(t);
            }
        }
        bounds = decoy::estimate_all(total, budget, dev);
    } else {
        throw cfg::ConfigError("analyze needs --table1 or at least one --tally");
    }

    const auto rep = decoy::key_length(bounds, budget);
    const std::string text = write_analysis(bounds, rep);
    out << text;
    if (!args.out_path.empty()) detail::write_text_file(args.out_path, text);
    return exit_ok;
}

// ---------------------------------------------------------------------------
// sign-demo: the full three-party protocol over a transport.

struct SignDemoArgs {
    std::string config_path;
    std::optional<std::uint64_t> seed;
    std::string out_dir;     // empty = config's [output] dir
    std::string transport;   // empty = config's choice
};

inline std::string write_run_report(const harness::RunResult& r,
                                    const cfg::ExperimentConfig& config) {
    std::ostringstream os;
    os << "mdiqds-run v1\n";
    os << "transport " << config.harness.transport << "\n";
    os << "seed " << config.session.seed << "\n";
    os << "adversary " << config.harness.adversary << "\n";
    os << "outcome " << (r.success ? "ok" : ("abort " + r.failure_stage)) << "\n";
    os << "ell " << r.bob.ell << "\n";
    os << "L " << r.alice.L << "\n";
    os << "otp bob " << r.bob.otp_consumed << " charlie " << r.charlie.otp_consumed << "\n";
    const harness::PartyOutcome* parties[3] = {&r.alice, &r.bob, &r.charlie};
    for (const auto* p : parties) {
        os << "party " << wire::role_name(p->role) << " aborted " << (p->aborted ? 1 : 0)
           << " stage " << (p->aborted ? p->abort_stage : "-") << "\n";
    }
    for (const auto* p : parties) {
        for (const auto& d : p->decisions)
            os << "decision " << wire::role_name(p->role) << " trial " << d.trial << " accept "
               << (d.accept ? 1 : 0) << " direct " << d.mismatch_direct << " forwarded "
               << d.mismatch_forwarded << "\n";
    }
    for (const auto* p : parties) {
        if (p->adversary_trials > 0)
            os << "adversary-stats " << wire::role_name(p->role) << " successes "
               << p->adversary_successes << " trials " << p->adversary_trials << "\n";
    }
    for (const auto* p : parties)
        os << "audit " << wire::role_name(p->role) << " " << p->audit.size() << "\n";
    if (!r.bob.table1_text.empty()) os << r.bob.table1_text;
    if (r.alice.have_report) os << qds::write_security_report(r.alice.report);
    os << "end\n";
    return os.str();
}

inline int run_sign_demo(const SignDemoArgs& args, std::ostream& out) {
    auto config = cfg::load_experiment_file(args.config_path);
    if (args.seed) config.session.seed = *args.seed;
    if (!args.transport.empty()) config.harness.transport = args.transport;
    if (!args.out_dir.empty()) config.out_dir = args.out_dir;

    auto result = harness::run_protocol(config, config.out_dir);
    const std::string report = write_run_report(result, config);
    detail::write_text_file(config.out_dir + "/report.txt", report);
    out << report;
    if (!result.success) return exit_abort;
    return exit_ok;
}

// ---------------------------------------------------------------------------
// bounds: security-bound sweep to CSV.

struct BoundsArgs {
    std::string L_list = "787468";
    std::string s_a_list, s_v_list, p_e_list;
    double eps_qkd = 8e-8;
    double f = 7.5e-8;
    double eps = 1.95e-16;
    double eps_pe = 1e-8;
    double eps_est = 1e-8;
    std::string out_path;
};

inline int run_bounds(const BoundsArgs& args, std::ostream& out) {
    const auto Ls = detail::parse_list(args.L_list, "L");
    const auto sas = detail::parse_list(args.s_a_list, "s_a");
    const auto svs = detail::parse_list(args.s_v_list, "s_v");
    const auto pes = detail::parse_list(args.p_e_list, "p_E");

    std::ostringstream os;
    os << "L,s_a,s_v,p_E,eps_rep,eps_for\n";
    char line[200];
    for (double Ld : Ls) {
        const auto L = std::size_t(Ld);
        for (double s_a : sas)
            for (double s_v : svs)
                for (double p_e : pes) {
                    const auto rep = qds::repudiation_bound(s_a, s_v, L, args.eps_qkd);
                    double forge = 1.0;
                    try {
                        forge = qds::forging_bound(p_e, s_v, L, args.f, args.eps, args.eps_pe,
                                                   args.eps_est)
                                    .value;
                    } catch (const qds::QdsError&) {
                        // no entropy gap at this point: bound is vacuous
                    }
                    std::snprintf(line, sizeof line, "%zu,%.9g,%.9g,%.9g,%.9g,%.9g\n", L, s_a,
                                  s_v, p_e, rep.value, forge);
                    os << line;
                }
    }
    out << os.str();
    if (!args.out_path.empty()) detail::write_text_file(args.out_path, os.str());
    return exit_ok;
}

// ---------------------------------------------------------------------------
// keygen: write the pre-shared pairwise authentication key files.

struct KeygenArgs {
    std::string config_path;  // optional source of dir, bits, seed
    std::string dir;
    std::optional<std::uint64_t> seed, bits;
};

inline int run_keygen(const KeygenArgs& args, std::ostream& out) {
    std::string dir = args.dir;
    std::uint64_t bits = args.bits.value_or(0), seed = args.seed.value_or(0);
    bool have_bits = args.bits.has_value(), have_seed = args.seed.has_value();
    if (!args.config_path.empty()) {
        auto config = cfg::load_experiment(cfg::Ini::parse_file(args.config_path));
        if (dir.empty()) dir = config.key_dir;
        if (!have_bits) {
            bits = config.harness.auth_key_bits;
            have_bits = true;
        }
        if (!have_seed) {
            seed = config.session.seed;
            have_seed = true;
        }
    }
    if (dir.empty()) dir = "keys";
    if (!have_bits) bits = 1u << 21;
    if (!have_seed) seed = 1;

    harness::ensure_auth_keys(dir, bits, seed);
    const wire::Role roles[4] = {wire::Role::alice, wire::Role::bob, wire::Role::charlie,
                                 wire::Role::eve};
    for (int i = 0; i < 4; ++i)
        for (int j = i + 1; j < 4; ++j)
            out << dir << "/" << harness::pair_key_name(roles[i], roles[j]) << "\n";
    return exit_ok;
}

}  // namespace mdiqds::cli
