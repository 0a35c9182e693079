#include <catch2/catch_amalgamated.hpp>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>

#include "mdiqds/cli.hpp"

using namespace mdiqds;
using namespace mdiqds::cli;
namespace fs = std::filesystem;

namespace {

std::string fresh_dir(const std::string& name) {
    fs::remove_all(name);
    fs::create_directories(name);
    return name;
}

void write_file(const std::string& path, const std::string& text) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    REQUIRE(out.good());
    out << text;
}

std::string slurp(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    REQUIRE(in.good());
    std::ostringstream buf;
    buf << in.rdbuf();
    return buf.str();
}

// Picks the first "<key> <value>" line and returns the value text.
std::string line_value(const std::string& text, const std::string& key) {
    std::istringstream in(text);
    std::string line;
    while (std::getline(in, line))
        if (line.rfind(key + " ", 0) == 0) return line.substr(key.size() + 1);
    FAIL("missing line: " + key);
    return {};
}

const char* kSimConfig =
    "[session]\n"
    "pulses = 1e6\n"
    "seed = 31\n"
    "[source]\n"
    "mu = 0.5\n"
    "nu = 0.1\n"
    "w = 0.0\n"
    "p_mu = 0.3\n"
    "p_nu = 0.5\n"
    "p_w = 0.2\n"
    "p_z_decoy = 0.5\n"
    "[link]\n"
    "loss_a_db = 0\n"
    "loss_b_db = 0\n"
    "insertion_db = 0\n"
    "det_eff_0 = 0.9\n"
    "det_eff_1 = 0.9\n"
    "window_eff = 1.0\n"
    "dark_rate_hz = 10\n"
    "visibility = 0.98\n";

// Reference numbers for the four key settings of the metropolitan run.
const char* kTable1Fixture =
    "mdiqds-table1 v1\n"
    "setting n_0 n_1 e_1 leak_EC\n"
    "mu,mu 0 13144467 0.2057 764378\n"
    "mu,nu 0 4208999 0.2061 446414\n"
    "nu,mu 0 4208978 0.2061 290251\n"
    "nu,nu 0 1346138 0.2072 133085\n"
    "end\n";

}  // namespace

TEST_CASE("simulate writes parseable tallies") {
    const std::string dir = fresh_dir("cli_sim_out");
    write_file(dir + "/run.cfg", kSimConfig);

    SimulateArgs args;
    args.config_path = dir + "/run.cfg";
    args.out_dir = dir;
    std::ostringstream out;
    REQUIRE(run_simulate(args, out) == exit_ok);

    for (const char* link : {"ab", "ac", "bc"}) {
        const std::string path = dir + "/tally_" + std::string(link) + ".txt";
        REQUIRE(fs::exists(path));
        std::ifstream in(path, std::ios::binary);
        const auto t = sim::TallyMatrix::parse(in);
        CHECK(t.n_pulses == 1000000);
        CHECK(t.total_sent() == 1000000);
        CHECK_FALSE(t.oracle);
        CHECK(out.str().find("wrote " + path) != std::string::npos);
        CHECK(out.str().find("link " + std::string(link)) != std::string::npos);
    }

    SECTION("the oracle flag carries through to the files") {
        args.oracle = true;
        std::ostringstream out2;
        REQUIRE(run_simulate(args, out2) == exit_ok);
        std::ifstream in(dir + "/tally_ab.txt", std::ios::binary);
        CHECK(sim::TallyMatrix::parse(in).oracle);
    }

    SECTION("a seed override changes the sampled counts") {
        args.seed = 32;
        std::ostringstream out2;
        REQUIRE(run_simulate(args, out2) == exit_ok);
        CHECK(out2.str() != out.str());
    }

    SECTION("zero pulse budgets are refused") {
        write_file(dir + "/bad.cfg", "[fixture]\nenabled = true\nell = 6000\nkgp_raw = 4000\n");
        SimulateArgs bad;
        bad.config_path = dir + "/bad.cfg";
        bad.out_dir = dir;
        std::ostringstream out2;
        CHECK_THROWS_AS(run_simulate(bad, out2), cfg::ConfigError);
    }
}

TEST_CASE("analyze reproduces the published key length from a bounds file") {
    const std::string dir = fresh_dir("cli_analyze");
    write_file(dir + "/table1.txt", kTable1Fixture);

    AnalyzeArgs args;
    args.table1_path = dir + "/table1.txt";
    args.out_path = dir + "/analysis.txt";
    std::ostringstream out;
    REQUIRE(run_analyze(args, out) == exit_ok);
    const std::string text = out.str();

    CHECK(text.find("mdiqds-table1 v1") != std::string::npos);
    CHECK(text.find("contribution mu,mu") != std::string::npos);

    const double ell = std::stod(line_value(text, "ell"));
    CHECK(ell == Catch::Approx(4466957.56).margin(2.0));
    CHECK(std::abs(ell - 4724819.0) / 4724819.0 < 0.06);
    CHECK(std::stoull(line_value(text, "ell_floor")) > 4000000);
    CHECK(line_value(text, "eps_cor_total") == "4e-08");

    // the file copy matches what was printed
    CHECK(slurp(dir + "/analysis.txt") == text);
}

TEST_CASE("analyze accepts merged raw tallies") {
    const std::string dir = fresh_dir("cli_analyze_tally");
    write_file(dir + "/run.cfg", kSimConfig);

    SimulateArgs sim_args;
    sim_args.config_path = dir + "/run.cfg";
    sim_args.out_dir = dir;
    std::ostringstream sim_out;
    REQUIRE(run_simulate(sim_args, sim_out) == exit_ok);

    AnalyzeArgs args;
    args.tally_paths = {dir + "/tally_ab.txt", dir + "/tally_ac.txt", dir + "/tally_bc.txt"};
    std::ostringstream out;
    REQUIRE(run_analyze(args, out) == exit_ok);
    CHECK(out.str().find("ell ") != std::string::npos);
    CHECK(std::stod(line_value(out.str(), "ell")) >= 0.0);

    SECTION("missing inputs are typed errors") {
        AnalyzeArgs none;
        std::ostringstream o;
        CHECK_THROWS_AS(run_analyze(none, o), cfg::ConfigError);

        AnalyzeArgs gone;
        gone.tally_paths = {dir + "/absent.txt"};
        CHECK_THROWS_AS(run_analyze(gone, o), FileError);

        AnalyzeArgs badt1;
        badt1.table1_path = dir + "/absent_table.txt";
        CHECK_THROWS_AS(run_analyze(badt1, o), FileError);
    }
}

TEST_CASE("sign-demo writes the run report for success and abort") {
    const std::string dir = fresh_dir("cli_sign");
    const std::string keys = fresh_dir("cli_sign_keys");
    const std::string base =
        "[fixture]\n"
        "enabled = true\n"
        "ell = 6000\n"
        "kgp_raw = 4000\n"
        "kgp_error_rate = 0.01\n"
        "[session]\n"
        "seed = 55\n"
        "[harness]\n"
        "auth_key_bits = 262144\n"
        "timeout_s = 20\n"
        "[keys]\n"
        "dir = " + keys + "\n";

    SECTION("honest run reports ok and exact pad use") {
        write_file(dir + "/ok.cfg", base + "[qds]\np_e = 0.25\n");
        SignDemoArgs args;
        args.config_path = dir + "/ok.cfg";
        args.out_dir = dir + "/out_ok";
        std::ostringstream out;
        REQUIRE(run_sign_demo(args, out) == exit_ok);

        const std::string report = slurp(dir + "/out_ok/report.txt");
        CHECK(report == out.str());
        CHECK(report.rfind("mdiqds-run v1\n", 0) == 0);
        CHECK(line_value(report, "outcome") == "ok");
        CHECK(line_value(report, "ell") == "6000");
        CHECK(line_value(report, "L") == "1000");
        CHECK(line_value(report, "otp") == "bob 6000 charlie 6000");
        CHECK(report.find("party alice aborted 0 stage -") != std::string::npos);
        CHECK(report.find("decision bob trial 0 accept 1") != std::string::npos);
        CHECK(report.find("decision charlie trial 0 accept 1") != std::string::npos);
        CHECK(report.find("mdiqds-table2 v1") != std::string::npos);
        CHECK(report.find("audit alice 0") != std::string::npos);
        CHECK(fs::exists(dir + "/out_ok/transcript/index.txt"));
    }

    SECTION("a typed abort still produces the report and exit 7") {
        write_file(dir + "/abort.cfg", base);  // no guessing-rate override
        SignDemoArgs args;
        args.config_path = dir + "/abort.cfg";
        args.out_dir = dir + "/out_abort";
        std::ostringstream out;
        REQUIRE(run_sign_demo(args, out) == exit_abort);

        const std::string report = slurp(dir + "/out_abort/report.txt");
        CHECK(line_value(report, "outcome") == "abort p_e");
        CHECK(report.find("party alice aborted 1 stage p_e") != std::string::npos);
        CHECK(report.find("party bob aborted 1 stage p_e") != std::string::npos);
    }
}

TEST_CASE("bounds sweep emits one row per grid point") {
    BoundsArgs args;
    args.L_list = "787468";
    args.s_a_list = "0.0027";
    args.s_v_list = "0.0121";
    args.p_e_list = "0.0123,0.005";
    std::ostringstream out;
    REQUIRE(run_bounds(args, out) == exit_ok);

    std::istringstream lines(out.str());
    std::string header, row1, row2, rest;
    REQUIRE(std::getline(lines, header));
    REQUIRE(std::getline(lines, row1));
    REQUIRE(std::getline(lines, row2));
    CHECK_FALSE(std::getline(lines, rest));
    CHECK(header == "L,s_a,s_v,p_E,eps_rep,eps_for");

    // expected rows, formatted the same way the command formats them
    const auto rep = qds::repudiation_bound(0.0027, 0.0121, 787468, args.eps_qkd);
    const auto forge =
        qds::forging_bound(0.0123, 0.0121, 787468, args.f, args.eps, args.eps_pe, args.eps_est);
    char expect[200];
    std::snprintf(expect, sizeof expect, "%zu,%.9g,%.9g,%.9g,%.9g,%.9g", std::size_t(787468),
                  0.0027, 0.0121, 0.0123, rep.value, forge.value);
    CHECK(row1 == expect);

    // p_E below s_v has no entropy gap: the forging column degrades to 1
    std::snprintf(expect, sizeof expect, "%zu,%.9g,%.9g,%.9g,%.9g,1", std::size_t(787468), 0.0027,
                  0.0121, 0.005, qds::repudiation_bound(0.0027, 0.0121, 787468, args.eps_qkd).value);
    CHECK(row2 == expect);

    SECTION("the CSV copy matches stdout") {
        const std::string dir = fresh_dir("cli_bounds");
        args.out_path = dir + "/sweep.csv";
        std::ostringstream out2;
        REQUIRE(run_bounds(args, out2) == exit_ok);
        CHECK(slurp(dir + "/sweep.csv") == out2.str());
    }

    SECTION("list parsing rejects junk") {
        BoundsArgs bad = args;
        bad.s_a_list = "0.1,zebra";
        std::ostringstream o;
        CHECK_THROWS_AS(run_bounds(bad, o), cfg::ConfigError);
        bad.s_a_list = ",";
        CHECK_THROWS_AS(run_bounds(bad, o), cfg::ConfigError);
    }
}

TEST_CASE("keygen writes the six pair key files") {
    const std::string dir = fresh_dir("cli_keygen");
    KeygenArgs args;
    args.dir = dir;
    args.bits = 2048;
    args.seed = 3;
    std::ostringstream out;
    REQUIRE(run_keygen(args, out) == exit_ok);

    std::istringstream lines(out.str());
    std::string line;
    int count = 0;
    while (std::getline(lines, line)) {
        ++count;
        REQUIRE(fs::exists(line));
        CHECK(read_key_file(line).size() == 2048);
    }
    CHECK(count == 6);

    SECTION("config supplies defaults, flags win") {
        const std::string dir2 = fresh_dir("cli_keygen2");
        write_file(dir2 + "/kg.cfg",
                   "[keys]\ndir = " + dir2 + "/from_cfg\n[harness]\nauth_key_bits = 4096\n"
                   "[session]\nseed = 9\n");
        KeygenArgs cfg_args;
        cfg_args.config_path = dir2 + "/kg.cfg";
        std::ostringstream out2;
        REQUIRE(run_keygen(cfg_args, out2) == exit_ok);
        CHECK(fs::exists(dir2 + "/from_cfg/alice-bob.key"));
        CHECK(read_key_file(dir2 + "/from_cfg/alice-bob.key").size() == 4096);

        KeygenArgs flag_args;
        flag_args.config_path = dir2 + "/kg.cfg";
        flag_args.dir = dir2 + "/from_flag";
        flag_args.bits = 1024;
        std::ostringstream out3;
        REQUIRE(run_keygen(flag_args, out3) == exit_ok);
        CHECK(read_key_file(dir2 + "/from_flag/alice-bob.key").size() == 1024);
    }
}

TEST_CASE("guarded maps failures onto stable exit codes") {
    std::ostringstream err;
    auto code = [&](auto thrower) {
        return guarded([&]() -> int { thrower(); return exit_ok; }, err);
    };

    CHECK(guarded([]() -> int { return exit_ok; }, err) == exit_ok);
    CHECK(code([] { throw cfg::ConfigError("x"); }) == exit_config);
    CHECK(code([] { throw FileError("x"); }) == exit_file);
    CHECK(code([] { throw KeyFileError("x"); }) == exit_file);
    CHECK(code([] { throw OtpReuseError("x"); }) == exit_file);
    CHECK(code([] { throw OtpExhaustedError("x"); }) == exit_file);
    CHECK(code([] { throw sim::SimError("x"); }) == exit_sim);
    CHECK(code([] { throw decoy::EstimationError("x"); }) == exit_analysis);
    CHECK(code([] { throw rec::ReconcileError("x"); }) == exit_analysis);
    CHECK(code([] { throw qds::QdsError("x"); }) == exit_analysis);
    CHECK(code([] { throw kgp::KgpError("x"); }) == exit_analysis);
    CHECK(code([] { throw wire::WireError("x"); }) == exit_internal);
    CHECK(code([] { throw harness::HarnessError("x"); }) == exit_internal);
    CHECK(code([] { throw std::runtime_error("x"); }) == exit_unexpected);

    err.str("");
    CHECK(code([] { throw harness::AbortError("stage_x", "detail_y"); }) == exit_abort);
    CHECK(err.str().find("protocol abort at stage_x") != std::string::npos);
}
