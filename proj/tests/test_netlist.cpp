#include "test_support.hpp"

#include "wavesim/netlist.hpp"

#include <functional>
#include <random>
#include <set>

using namespace wavesim;

namespace {

std::size_t count_kind(const Circuit& c, DeviceKind k) {
    return static_cast<std::size_t>(
        std::count_if(c.devices.begin(), c.devices.end(), [k](const Device& d) { return d.kind == k; }));
}

bool has_diag(const std::vector<Diagnostic>& ds, DiagnosticKind k) {
    return std::any_of(ds.begin(), ds.end(), [k](const Diagnostic& d) { return d.kind == k; });
}

// depth-first search for a cycle among V-source edges, multigraph aware
bool vsource_cycle_dfs(const Circuit& c) {
    std::map<std::string, std::vector<std::pair<std::string, int>>> adj;
    int id = 0;
    for (const auto& d : c.devices) {
        if (d.kind == DeviceKind::VoltageSource) {
            adj[d.terminals[0]].push_back({d.terminals[1], id});
            adj[d.terminals[1]].push_back({d.terminals[0], id});
            ++id;
        }
    }
    std::set<std::string> seen;
    std::function<bool(const std::string&, int)> dfs = [&](const std::string& n, int via) {
        seen.insert(n);
        for (const auto& [m, e] : adj[n]) {
            if (e == via) {
                continue;
            }
            if (seen.count(m) != 0 || dfs(m, e)) {
                return true;
            }
        }
        return false;
    };
    for (const auto& [n, _] : adj) {
        if (seen.count(n) == 0 && dfs(n, -1)) {
            return true;
        }
    }
    return false;
}

}  // namespace

TEST_CASE("suffixes and basic elements", "[netlist]") {
    const Circuit c = parse("V1 1 0 DC 5\nR1 1 0 1k\n.tran 1m");
    REQUIRE(c.devices.size() == 2);
    CHECK(c.find("R1")->value == 1000.0);
    CHECK(c.find("V1")->source->value(0.3) == 5.0);
    REQUIRE(c.analyses.size() == 1);
    CHECK(c.analyses[0].tstop == Catch::Approx(1e-3).epsilon(1e-15));
    CHECK(c.nodes == std::vector<std::string>{"0", "1"});

    const Circuit d = parse("V1 1 0 DC 1\nR1 1 2 1\nC1 2 0 10n\n.tran 1");
    CHECK(d.find("C1")->value == Catch::Approx(1e-8).epsilon(1e-15));

    const std::vector<std::pair<std::string, double>> table{{"2f", 2e-15}, {"3p", 3e-12}, {"4N", 4e-9},
                                                              {"5u", 5e-6}, {"6m", 6e-3},  {"7K", 7e3},
                                                              {"8Meg", 8e6}, {"9g", 9e9}, {"1.5e3", 1500.0},
                                                              {"-2", -2.0}, {"+.5", 0.5}};
    for (const auto& [text, expect] : table) {
        const Circuit r = parse("R1 a 0 " + text + "\n");
        CHECK(r.find("R1")->value == Catch::Approx(expect).epsilon(1e-15));
    }
}

TEST_CASE("comments, continuations and case", "[netlist]") {
    const Circuit c = parse(
        ".title  demo deck \n"
        "* full line comment\n"
        "v1 in 0 pulse(0 1 1n\n"
        "+ 1n 1n 5n 20n) ; trailing note\n"
        "r1 in out 1K\n"
        "c1 out 0 1P\n"
        ".TRAN 40n 1n\n"
        ".end\n"
        "this line is never read\n");
    CHECK(c.title == "demo deck");
    REQUIRE(c.devices.size() == 3);
    const auto& src = *c.find("v1")->source;
    CHECK(src.shape == SourceSpec::Shape::Pulse);
    CHECK(src.args.size() == 7);
    CHECK(c.analyses[0].tstep == Catch::Approx(1e-9).epsilon(1e-15));
}

TEST_CASE("source waveforms", "[netlist]") {
    const Circuit c = parse(
        "V1 a 0 SIN(1 2 50)\n"
        "V2 b 0 PULSE(0 1 1 1 2 3 10)\n"
        "I1 0 c PWL(0 0 1 2 3 -2)\n"
        "R1 a 0 1\nR2 b 0 1\nR3 c 0 1\n");
    const auto& sin = *c.find("V1")->source;
    CHECK(sin.value(0.005) == Catch::Approx(1.0 + 2.0 * std::sin(2 * std::numbers::pi * 50 * 0.005)));
    const auto& pulse = *c.find("V2")->source;
    CHECK(pulse.value(0.5) == 0.0);
    CHECK(pulse.value(1.5) == Catch::Approx(0.5));
    CHECK(pulse.value(3.0) == 1.0);
    CHECK(pulse.value(6.0) == Catch::Approx(0.5));
    CHECK(pulse.value(8.0) == 0.0);
    CHECK(pulse.value(11.5) == Catch::Approx(0.5));
    CHECK(pulse.corners(0.0, 12.0) == std::vector<double>{1, 2, 5, 7, 11});
    const auto& pwl = *c.find("I1")->source;
    CHECK(pwl.value(-1.0) == 0.0);
    CHECK(pwl.value(0.5) == Catch::Approx(1.0));
    CHECK(pwl.value(2.0) == Catch::Approx(0.0));
    CHECK(pwl.value(5.0) == -2.0);
    CHECK(pwl.corners(0.0, 3.0) == std::vector<double>{1});
}

TEST_CASE("parse errors", "[netlist]") {
    CHECK_ERRC(parse("Q1 1 2 3\n"), Errc::UnknownDevice);
    CHECK_ERRC(parse("X 1 2\n"), Errc::UnknownDevice);
    CHECK_ERRC(parse("R1 1 0 1kohm\n"), Errc::InvalidParam);
    CHECK_ERRC(parse("R1 1 0 0\n"), Errc::InvalidParam);
    CHECK_ERRC(parse("C1 1 0 -1p\n"), Errc::InvalidParam);
    CHECK_ERRC(parse("R1 1 0\n"), Errc::ParseError);
    CHECK_ERRC(parse("R1 1 0 1 2\n"), Errc::ParseError);
    CHECK_ERRC(parse("R1 1 0 1\nR1 1 0 2\n"), Errc::ParseError);
    CHECK_ERRC(parse("V1 1 0 5\n"), Errc::ParseError);
    CHECK_ERRC(parse("V1 1 0 SIN(0 1)\n"), Errc::InvalidParam);
    CHECK_ERRC(parse("V1 1 0 PULSE(0 1 0 0 1n 1 2)\n"), Errc::InvalidParam);
    CHECK_ERRC(parse("V1 1 0 PWL(0 0 0 1)\n"), Errc::InvalidParam);
    CHECK_ERRC(parse("V1 1 0 SIN(0 1 2\n"), Errc::ParseError);
    CHECK_ERRC(parse("D1 1 0 BV=3\n"), Errc::InvalidParam);
    CHECK_ERRC(parse("M1 1 2 0 KP=1\n"), Errc::InvalidParam);
    CHECK_ERRC(parse("M1 1 2 0 TYPE=JFET\n"), Errc::InvalidParam);
    CHECK_ERRC(parse(".subckt inv a b\n"), Errc::ParseError);
    CHECK_ERRC(parse("+ 1 2\n"), Errc::ParseError);
    CHECK_ERRC(parse("R1 a-b 0 1\n"), Errc::ParseError);
    CHECK_ERRC(parse(".tran -1\n"), Errc::InvalidParam);

    try {
        (void)parse("V1 1 0 DC 5\n\nR1 1 0 3x\n");
        FAIL("expected a throw");
    } catch (const ParseError& e) {
        CHECK(e.line() == 3);
        CHECK(e.column() == 8);
    }
}

TEST_CASE("validate diagnostics", "[netlist]") {
    CHECK(validate(parse("V1 1 0 DC 5\nR1 1 2 1k\nR2 2 0 1k\n.tran 1m\n")).empty());

    const auto floating = validate(parse("V1 1 0 DC 5\nR1 1 0 1k\nC1 1 2 1u\nC2 2 0 1u\n.tran 1m\n"));
    REQUIRE(floating.size() == 1);
    CHECK(floating[0].kind == DiagnosticKind::FloatingNode);
    CHECK(floating[0].subject == "2");

    const Circuit parallel = parse("V1 1 0 DC 5\nV2 1 0 DC 3\nR1 1 0 1k\n.tran 1m\n");
    const auto loop = validate(parallel);
    CHECK(vsource_cycle_dfs(parallel));
    CHECK(has_diag(loop, DiagnosticKind::VoltageLoop));

    CHECK(has_diag(validate(parse("V1 1 0 DC 5\nR1 1 0 1k\n")), DiagnosticKind::MissingAnalysis));
    CHECK(has_diag(validate(parse("R1 1 0 1k\n.tran 1\n")), DiagnosticKind::MissingSource));
}

TEST_CASE("voltage loop detection matches a cycle search", "[netlist]") {
    std::mt19937 rng(7);
    for (int trial = 0; trial < 200; ++trial) {
        const int nodes = 2 + static_cast<int>(rng() % 5);
        const int sources = 1 + static_cast<int>(rng() % 5);
        std::string text;
        for (int i = 0; i < sources; ++i) {
            int a = static_cast<int>(rng() % nodes);
            int b = static_cast<int>(rng() % nodes);
            if (a == b) {
                b = (a + 1) % nodes;
            }
            text += "V" + std::to_string(i) + " " + std::to_string(a) + " " + std::to_string(b) + " DC 1\n";
        }
        for (int n = 1; n < nodes; ++n) {
            text += "R" + std::to_string(n) + " " + std::to_string(n) + " 0 1k\n";
        }
        text += ".tran 1\n";
        const Circuit c = parse(text);
        INFO(text);
        CHECK(has_diag(validate(c), DiagnosticKind::VoltageLoop) == vsource_cycle_dfs(c));
    }
}

TEST_CASE("bundled decks parse, validate and round-trip", "[netlist]") {
    for (const char* name : {"rc.cir", "rc_pulse.cir", "diode_rectifier.cir", "schmitt.cir", "inverter_chain.cir"}) {
        INFO(name);
        const std::string text = test::read_deck(name);
        REQUIRE_FALSE(text.empty());
        const Circuit c = parse(text);
        CHECK(validate(c).empty());
        const Circuit again = parse(serialize(c));
        CHECK(again == c);
        CHECK(serialize(again) == serialize(c));
    }
    const Circuit schmitt = parse(test::read_deck("schmitt.cir"));
    CHECK(count_kind(schmitt, DeviceKind::Mosfet) == 6);
    CHECK(count_kind(schmitt, DeviceKind::VoltageSource) == 2);
    CHECK(schmitt.analyses.size() == 1);
    const Circuit chain = parse(test::read_deck("inverter_chain.cir"));
    CHECK(count_kind(chain, DeviceKind::Mosfet) == 18);
}

TEST_CASE("parser only ever throws its own errors", "[netlist][fuzz]") {
    std::mt19937 rng(12345);
    const std::string alphabet = "RCLVIDMrclvidm0123456789.+-=(),;* \t\nkmunpfgeEMEGSINPULSEPWLDCTYPE=NMOS";
    const std::string seed = test::read_deck("schmitt.cir") + test::read_deck("rc.cir");
    auto survives = [](const std::string& text) {
        try {
            const Circuit c = parse(text);
            (void)validate(c);
            (void)parse(serialize(c));
            return true;
        } catch (const Error&) {
            return true;
        } catch (...) {
            return false;
        }
    };
    for (int trial = 0; trial < 3000; ++trial) {
        std::string text;
        const int mode = trial % 3;
        if (mode == 0) {
            const std::size_t n = rng() % 200;
            for (std::size_t i = 0; i < n; ++i) {
                text.push_back(static_cast<char>(rng() % 256));
            }
        } else if (mode == 1) {
            const std::size_t n = rng() % 300;
            for (std::size_t i = 0; i < n; ++i) {
                text.push_back(alphabet[rng() % alphabet.size()]);
            }
        } else {
            text = seed;
            for (int m = 0; m < 8; ++m) {
                const std::size_t pos = rng() % text.size();
                switch (rng() % 3) {
                    case 0: text.erase(pos, 1 + rng() % 4); break;
                    case 1: text.insert(pos, 1, alphabet[rng() % alphabet.size()]); break;
                    default: text[pos] = static_cast<char>(rng() % 256); break;
                }
                if (text.empty()) {
                    text = "*";
                }
            }
        }
        REQUIRE(survives(text));
    }
}
