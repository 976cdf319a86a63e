#pragma once

// SPICE-subset netlist front-end.
//
//   R<id> n+ n- value | C<id> n+ n- value | L<id> n+ n- value
//   V<id> n+ n- (DC v | SIN(voff vamp freq) | PULSE(v1 v2 td tr tf pw per) | PWL(t1 v1 ...))
//   I<id> n+ n- <same source forms>
//   D<id> n+ n- [IS=val] [N=val]
//   M<id> nd ng ns TYPE=(NMOS|PMOS) [KP=] [VT0=] [LAMBDA=] [W=] [L=] [CGS=] [CGD=]
//   .title text | .tran tstop [tstep] | .end
//
// '*' starts a comment line, ';' an inline comment, '+' continues the previous
// line. Element letters, keywords and suffixes are case-insensitive. Anything
// outside this grammar is a hard error.

#include "wavesim/error.hpp"

#include <algorithm>
#include <cctype>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <map>
#include <numbers>
#include <numeric>
#include <optional>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

namespace wavesim {

enum class DeviceKind { Resistor, Capacitor, Inductor, VoltageSource, CurrentSource, Diode, Mosfet };
enum class MosPolarity { Nmos, Pmos };

/// Time-dependent value of an independent source.
struct SourceSpec {
    enum class Shape { Dc, Sin, Pulse, Pwl };
    Shape shape = Shape::Dc;
    std::vector<double> args;

    [[nodiscard]] double value(double t) const {
        switch (shape) {
            case Shape::Dc:
                return args[0];
            case Shape::Sin:
                return args[0] + args[1] * std::sin(2.0 * std::numbers::pi * args[2] * t);
            case Shape::Pulse: {
                const double v1 = args[0];
                const double v2 = args[1];
                const double td = args[2];
                const double tr = args[3];
                const double tf = args[4];
                const double pw = args[5];
                const double per = args[6];
                if (t < td) {
                    return v1;
                }
                double tt = t - td;
                if (per > 0.0) {
                    tt = std::fmod(tt, per);
                }
                if (tt < tr) {
                    return v1 + (v2 - v1) * tt / tr;
                }
                if (tt < tr + pw) {
                    return v2;
                }
                if (tt < tr + pw + tf) {
                    return v2 + (v1 - v2) * (tt - tr - pw) / tf;
                }
                return v1;
            }
            case Shape::Pwl: {
                const std::size_t n = args.size() / 2;
                if (t <= args[0]) {
                    return args[1];
                }
                for (std::size_t i = 1; i < n; ++i) {
                    const double t1 = args[2 * i];
                    if (t <= t1) {
                        const double t0 = args[2 * i - 2];
                        const double y0 = args[2 * i - 1];
                        const double y1 = args[2 * i + 1];
                        return y0 + (y1 - y0) * (t - t0) / (t1 - t0);
                    }
                }
                return args[2 * n - 1];
            }
        }
        return 0.0;
    }

    /// Slope discontinuities strictly inside (t0, t1).
    [[nodiscard]] std::vector<double> corners(double t0, double t1) const {
        std::vector<double> out;
        auto add = [&](double t) {
            if (t > t0 && t < t1) {
                out.push_back(t);
            }
        };
        if (shape == Shape::Pulse) {
            const double td = args[2];
            const double tr = args[3];
            const double tf = args[4];
            const double pw = args[5];
            const double per = args[6];
            for (int n = 0;; ++n) {
                const double base = td + n * per;
                if (base >= t1 || (per <= 0.0 && n > 0)) {
                    break;
                }
                add(base);
                add(base + tr);
                add(base + tr + pw);
                add(base + tr + pw + tf);
                if (n > 1000000) {
                    break;
                }
            }
        } else if (shape == Shape::Pwl) {
            for (std::size_t i = 0; i + 1 < args.size(); i += 2) {
                add(args[i]);
            }
        }
        std::sort(out.begin(), out.end());
        out.erase(std::unique(out.begin(), out.end()), out.end());
        return out;
    }

    bool operator==(const SourceSpec&) const = default;
};

struct Device {
    DeviceKind kind = DeviceKind::Resistor;
    std::string name;
    std::vector<std::string> terminals;
    double value = 0.0;                    // R, C, L
    std::map<std::string, double> params;  // D and M model parameters, upper-case keys
    std::optional<SourceSpec> source;      // V and I
    std::optional<MosPolarity> polarity;   // M

    [[nodiscard]] double param(const std::string& key, double fallback) const {
        auto it = params.find(key);
        return it == params.end() ? fallback : it->second;
    }

    bool operator==(const Device&) const = default;
};

struct TranDirective {
    double tstop = 0.0;
    std::optional<double> tstep;
    bool operator==(const TranDirective&) const = default;
};

struct Circuit {
    std::string title;
    std::vector<std::string> nodes;  // "0" first, then in order of first use
    std::vector<Device> devices;
    std::vector<TranDirective> analyses;

    [[nodiscard]] const Device* find(std::string_view name) const {
        for (const auto& d : devices) {
            if (d.name == name) {
                return &d;
            }
        }
        return nullptr;
    }

    bool operator==(const Circuit&) const = default;
};

namespace netlist_detail {

struct Token {
    std::string text;
    int line = 0;
    int column = 0;
};

struct LogicalLine {
    std::vector<Token> tokens;
    std::string raw;  // first physical line, for .title
    int line = 0;
};

inline std::string upper(std::string_view s) {
    std::string out(s);
    std::transform(out.begin(), out.end(), out.begin(), [](unsigned char c) { return static_cast<char>(std::toupper(c)); });
    return out;
}

inline bool is_name_char(char c) {
    return std::isalnum(static_cast<unsigned char>(c)) != 0 || c == '_';
}

inline void tokenize_into(std::string_view text, int line, std::vector<Token>& out) {
    std::size_t i = 0;
    while (i < text.size()) {
        const char c = text[i];
        if (c == ';') {
            break;
        }
        if (c == ' ' || c == '\t' || c == ',' || c == '\r' || c == '\f' || c == '\v') {
            ++i;
            continue;
        }
        if (c == '(' || c == ')' || c == '=') {
            out.push_back({std::string(1, c), line, static_cast<int>(i) + 1});
            ++i;
            continue;
        }
        const std::size_t start = i;
        while (i < text.size()) {
            const char d = text[i];
            if (d == ' ' || d == '\t' || d == ',' || d == '\r' || d == '\f' || d == '\v' || d == '(' ||
                d == ')' || d == '=' || d == ';') {
                break;
            }
            ++i;
        }
        out.push_back({std::string(text.substr(start, i - start)), line, static_cast<int>(start) + 1});
    }
}

inline std::vector<LogicalLine> split_lines(std::string_view text) {
    std::vector<LogicalLine> out;
    int line = 0;
    std::size_t pos = 0;
    while (pos <= text.size()) {
        std::size_t end = text.find('\n', pos);
        if (end == std::string_view::npos) {
            end = text.size();
        }
        std::string_view phys = text.substr(pos, end - pos);
        ++line;
        std::size_t first = phys.find_first_not_of(" \t\r");
        if (first != std::string_view::npos) {
            const char lead = phys[first];
            if (lead == '*') {
                // comment line
            } else if (lead == '+') {
                if (out.empty()) {
                    throw ParseError(Errc::ParseError, line, static_cast<int>(first) + 1,
                                     "continuation line without a preceding element");
                }
                std::vector<Token> more;
                tokenize_into(phys.substr(first + 1), line, more);
                for (auto& t : more) {
                    t.column += static_cast<int>(first) + 1;
                    out.back().tokens.push_back(std::move(t));
                }
            } else {
                LogicalLine ll;
                ll.line = line;
                ll.raw = std::string(phys);
                tokenize_into(phys, line, ll.tokens);
                if (!ll.tokens.empty()) {
                    out.push_back(std::move(ll));
                }
            }
        }
        if (end == text.size()) {
            break;
        }
        pos = end + 1;
    }
    return out;
}

inline double parse_value(const Token& tok) {
    std::string_view s = tok.text;
    if (!s.empty() && s.front() == '+') {
        s.remove_prefix(1);
    }
    if (s.empty() || s.front() == '+') {
        throw ParseError(Errc::InvalidParam, tok.line, tok.column, "expected a number, got '" + tok.text + "'");
    }
    double v = 0.0;
    const auto res = std::from_chars(s.data(), s.data() + s.size(), v, std::chars_format::general);
    if (res.ec != std::errc() || !std::isfinite(v)) {
        throw ParseError(Errc::InvalidParam, tok.line, tok.column, "expected a number, got '" + tok.text + "'");
    }
    const std::string suffix = upper(std::string_view(res.ptr, static_cast<std::size_t>(s.data() + s.size() - res.ptr)));
    static const std::map<std::string, double> scale{{"", 1.0},     {"F", 1e-15}, {"P", 1e-12}, {"N", 1e-9},
                                                     {"U", 1e-6},   {"M", 1e-3},  {"K", 1e3},   {"MEG", 1e6},
                                                     {"G", 1e9}};
    auto it = scale.find(suffix);
    if (it == scale.end()) {
        throw ParseError(Errc::InvalidParam, tok.line, tok.column, "unknown value suffix in '" + tok.text + "'");
    }
    return v * it->second;
}

class LineParser {
public:
    explicit LineParser(const LogicalLine& ll) : ll_(ll) {}

    [[nodiscard]] bool done() const { return pos_ >= ll_.tokens.size(); }

    const Token& next(const char* what) {
        if (done()) {
            const Token& last = ll_.tokens.back();
            throw ParseError(Errc::ParseError, last.line, last.column + static_cast<int>(last.text.size()),
                             std::string("expected ") + what);
        }
        return ll_.tokens[pos_++];
    }

    const Token& peek() const { return ll_.tokens[pos_]; }

    void expect(std::string_view symbol) {
        const Token& t = next(std::string(symbol).c_str());
        if (t.text != symbol) {
            throw ParseError(Errc::ParseError, t.line, t.column,
                             "expected '" + std::string(symbol) + "', got '" + t.text + "'");
        }
    }

    double value(const char* what) { return parse_value(next(what)); }

    std::string node() {
        const Token& t = next("node name");
        if (!std::all_of(t.text.begin(), t.text.end(), is_name_char)) {
            throw ParseError(Errc::ParseError, t.line, t.column, "invalid node name '" + t.text + "'");
        }
        return t.text;
    }

    void finish() {
        if (!done()) {
            const Token& t = peek();
            throw ParseError(Errc::ParseError, t.line, t.column, "unexpected token '" + t.text + "'");
        }
    }

    std::vector<double> paren_values() {
        expect("(");
        std::vector<double> vals;
        while (true) {
            const Token& t = next("')'");
            if (t.text == ")") {
                break;
            }
            vals.push_back(parse_value(t));
        }
        return vals;
    }

private:
    const LogicalLine& ll_;
    std::size_t pos_ = 0;
};

inline SourceSpec parse_source(LineParser& p) {
    const Token& kw = p.next("source specification");
    const std::string k = upper(kw.text);
    SourceSpec spec;
    auto bad = [&](const std::string& msg) { return ParseError(Errc::InvalidParam, kw.line, kw.column, msg); };
    if (k == "DC") {
        spec.shape = SourceSpec::Shape::Dc;
        spec.args = {p.value("DC value")};
    } else if (k == "SIN") {
        spec.shape = SourceSpec::Shape::Sin;
        spec.args = p.paren_values();
        if (spec.args.size() != 3) {
            throw bad("SIN takes (voff vamp freq)");
        }
        if (spec.args[2] < 0.0) {
            throw bad("SIN frequency must be non-negative");
        }
    } else if (k == "PULSE") {
        spec.shape = SourceSpec::Shape::Pulse;
        spec.args = p.paren_values();
        if (spec.args.size() != 7) {
            throw bad("PULSE takes (v1 v2 tdelay trise tfall twidth tperiod)");
        }
        const double td = spec.args[2];
        const double tr = spec.args[3];
        const double tf = spec.args[4];
        const double pw = spec.args[5];
        const double per = spec.args[6];
        if (td < 0.0 || !(tr > 0.0) || !(tf > 0.0) || pw < 0.0 || per < 0.0) {
            throw bad("PULSE needs td >= 0, tr > 0, tf > 0, twidth >= 0, tperiod >= 0");
        }
        if (per > 0.0 && per < tr + pw + tf) {
            throw bad("PULSE period shorter than trise + twidth + tfall");
        }
    } else if (k == "PWL") {
        spec.shape = SourceSpec::Shape::Pwl;
        spec.args = p.paren_values();
        if (spec.args.empty() || spec.args.size() % 2 != 0) {
            throw bad("PWL takes time/value pairs");
        }
        for (std::size_t i = 2; i < spec.args.size(); i += 2) {
            if (!(spec.args[i] > spec.args[i - 2])) {
                throw bad("PWL times must be strictly increasing");
            }
        }
    } else {
        throw ParseError(Errc::ParseError, kw.line, kw.column, "unknown source form '" + kw.text + "'");
    }
    return spec;
}

/// KEY = value pairs; KEY must be one of `allowed`. TYPE is returned separately.
inline std::map<std::string, double> parse_params(LineParser& p, const std::vector<std::string>& allowed,
                                                  std::optional<MosPolarity>* polarity) {
    std::map<std::string, double> params;
    while (!p.done()) {
        const Token& key = p.next("parameter");
        const std::string k = upper(key.text);
        p.expect("=");
        if (polarity != nullptr && k == "TYPE") {
            const Token& v = p.next("NMOS or PMOS");
            const std::string t = upper(v.text);
            if (t == "NMOS") {
                *polarity = MosPolarity::Nmos;
            } else if (t == "PMOS") {
                *polarity = MosPolarity::Pmos;
            } else {
                throw ParseError(Errc::InvalidParam, v.line, v.column, "TYPE must be NMOS or PMOS");
            }
            continue;
        }
        if (std::find(allowed.begin(), allowed.end(), k) == allowed.end()) {
            throw ParseError(Errc::InvalidParam, key.line, key.column, "unknown parameter '" + key.text + "'");
        }
        if (params.count(k) != 0) {
            throw ParseError(Errc::InvalidParam, key.line, key.column, "duplicate parameter '" + key.text + "'");
        }
        params[k] = p.value("parameter value");
    }
    return params;
}

}  // namespace netlist_detail

[[nodiscard]] inline Circuit parse(std::string_view text) {
    using namespace netlist_detail;
    Circuit c;
    c.nodes.push_back("0");
    auto note_node = [&](const std::string& n) {
        if (std::find(c.nodes.begin(), c.nodes.end(), n) == c.nodes.end()) {
            c.nodes.push_back(n);
        }
    };

    for (const auto& ll : split_lines(text)) {
        const Token& head = ll.tokens.front();
        LineParser p(ll);
        p.next("element");
        if (head.text.front() == '.') {
            const std::string dir = upper(head.text);
            if (dir == ".END") {
                p.finish();
                break;
            }
            if (dir == ".TITLE") {
                const auto pos = upper(ll.raw).find(".TITLE");
                std::string rest = ll.raw.substr(pos + 6);
                const auto a = rest.find_first_not_of(" \t");
                const auto b = rest.find_last_not_of(" \t\r");
                c.title = a == std::string::npos ? "" : rest.substr(a, b - a + 1);
                continue;
            }
            if (dir == ".TRAN") {
                TranDirective tran;
                const Token& stop = p.next("tstop");
                tran.tstop = parse_value(stop);
                if (!(tran.tstop > 0.0)) {
                    throw ParseError(Errc::InvalidParam, stop.line, stop.column, "tstop must be positive");
                }
                if (!p.done()) {
                    const Token& step = p.next("tstep");
                    tran.tstep = parse_value(step);
                    if (!(*tran.tstep > 0.0)) {
                        throw ParseError(Errc::InvalidParam, step.line, step.column, "tstep must be positive");
                    }
                }
                p.finish();
                c.analyses.push_back(tran);
                continue;
            }
            throw ParseError(Errc::ParseError, head.line, head.column, "unknown directive '" + head.text + "'");
        }

        if (head.text.size() < 2 || !std::all_of(head.text.begin(), head.text.end(), is_name_char)) {
            if (head.text.size() >= 1 && std::string("RCLVIDM").find(static_cast<char>(std::toupper(
                                             static_cast<unsigned char>(head.text.front())))) == std::string::npos) {
                throw ParseError(Errc::UnknownDevice, head.line, head.column,
                                 "unknown element '" + head.text + "'");
            }
            throw ParseError(Errc::ParseError, head.line, head.column, "invalid element name '" + head.text + "'");
        }
        Device d;
        d.name = head.text;
        if (c.find(d.name) != nullptr) {
            throw ParseError(Errc::ParseError, head.line, head.column, "duplicate element name '" + d.name + "'");
        }
        const char letter = static_cast<char>(std::toupper(static_cast<unsigned char>(head.text.front())));
        switch (letter) {
            case 'R':
            case 'C':
            case 'L': {
                d.kind = letter == 'R' ? DeviceKind::Resistor
                                       : (letter == 'C' ? DeviceKind::Capacitor : DeviceKind::Inductor);
                d.terminals = {p.node(), p.node()};
                const Token& vt = p.next("value");
                d.value = parse_value(vt);
                if (letter == 'R' ? d.value == 0.0 : !(d.value > 0.0)) {
                    throw ParseError(Errc::InvalidParam, vt.line, vt.column,
                                     letter == 'R' ? "resistance must be nonzero" : "value must be positive");
                }
                p.finish();
                break;
            }
            case 'V':
            case 'I':
                d.kind = letter == 'V' ? DeviceKind::VoltageSource : DeviceKind::CurrentSource;
                d.terminals = {p.node(), p.node()};
                d.source = parse_source(p);
                p.finish();
                break;
            case 'D':
                d.kind = DeviceKind::Diode;
                d.terminals = {p.node(), p.node()};
                d.params = parse_params(p, {"IS", "N"}, nullptr);
                for (const auto& [k, v] : d.params) {
                    if (!(v > 0.0)) {
                        throw ParseError(Errc::InvalidParam, head.line, head.column, k + " must be positive");
                    }
                }
                break;
            case 'M': {
                d.kind = DeviceKind::Mosfet;
                d.terminals = {p.node(), p.node(), p.node()};
                d.params = parse_params(p, {"KP", "VT0", "LAMBDA", "W", "L", "CGS", "CGD"}, &d.polarity);
                if (!d.polarity) {
                    throw ParseError(Errc::InvalidParam, head.line, head.column, "MOSFET needs TYPE=NMOS|PMOS");
                }
                for (const char* key : {"KP", "W", "L"}) {
                    if (d.params.count(key) != 0 && !(d.params.at(key) > 0.0)) {
                        throw ParseError(Errc::InvalidParam, head.line, head.column, std::string(key) + " must be positive");
                    }
                }
                for (const char* key : {"LAMBDA", "CGS", "CGD"}) {
                    if (d.params.count(key) != 0 && d.params.at(key) < 0.0) {
                        throw ParseError(Errc::InvalidParam, head.line, head.column,
                                         std::string(key) + " must be non-negative");
                    }
                }
                break;
            }
            default:
                throw ParseError(Errc::UnknownDevice, head.line, head.column, "unknown element '" + head.text + "'");
        }
        for (const auto& n : d.terminals) {
            note_node(n);
        }
        c.devices.push_back(std::move(d));
    }
    return c;
}

namespace netlist_detail {

inline std::string fmt(double v) {
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

}  // namespace netlist_detail

/// Canonical text form; parse(serialize(c)) == c.
[[nodiscard]] inline std::string serialize(const Circuit& c) {
    using netlist_detail::fmt;
    std::ostringstream out;
    if (!c.title.empty()) {
        out << ".title " << c.title << '\n';
    }
    for (const auto& d : c.devices) {
        out << d.name;
        for (const auto& t : d.terminals) {
            out << ' ' << t;
        }
        switch (d.kind) {
            case DeviceKind::Resistor:
            case DeviceKind::Capacitor:
            case DeviceKind::Inductor:
                out << ' ' << fmt(d.value);
                break;
            case DeviceKind::VoltageSource:
            case DeviceKind::CurrentSource: {
                const auto& s = *d.source;
                static const char* names[] = {"DC", "SIN", "PULSE", "PWL"};
                out << ' ' << names[static_cast<int>(s.shape)];
                if (s.shape == SourceSpec::Shape::Dc) {
                    out << ' ' << fmt(s.args[0]);
                } else {
                    out << '(';
                    for (std::size_t i = 0; i < s.args.size(); ++i) {
                        out << (i ? " " : "") << fmt(s.args[i]);
                    }
                    out << ')';
                }
                break;
            }
            case DeviceKind::Mosfet:
                out << " TYPE=" << (*d.polarity == MosPolarity::Nmos ? "NMOS" : "PMOS");
                [[fallthrough]];
            case DeviceKind::Diode:
                for (const auto& [k, v] : d.params) {
                    out << ' ' << k << '=' << fmt(v);
                }
                break;
        }
        out << '\n';
    }
    for (const auto& a : c.analyses) {
        out << ".tran " << fmt(a.tstop);
        if (a.tstep) {
            out << ' ' << fmt(*a.tstep);
        }
        out << '\n';
    }
    out << ".end\n";
    return out.str();
}

enum class DiagnosticKind { FloatingNode, VoltageLoop, MissingAnalysis, MissingSource, EmptyCircuit };

[[nodiscard]] inline std::string_view to_string(DiagnosticKind k) noexcept {
    switch (k) {
        case DiagnosticKind::FloatingNode: return "FloatingNode";
        case DiagnosticKind::VoltageLoop: return "VoltageLoop";
        case DiagnosticKind::MissingAnalysis: return "MissingAnalysis";
        case DiagnosticKind::MissingSource: return "MissingSource";
        case DiagnosticKind::EmptyCircuit: return "EmptyCircuit";
    }
    return "Unknown";
}

struct Diagnostic {
    DiagnosticKind kind;
    std::string subject;
    std::string message;
};

namespace netlist_detail {

class DisjointSets {
public:
    explicit DisjointSets(std::size_t n) : parent_(n) { std::iota(parent_.begin(), parent_.end(), std::size_t{0}); }
    std::size_t find(std::size_t i) {
        while (parent_[i] != i) {
            parent_[i] = parent_[parent_[i]];
            i = parent_[i];
        }
        return i;
    }
    /// false when a and b were already joined
    bool unite(std::size_t a, std::size_t b) {
        a = find(a);
        b = find(b);
        if (a == b) {
            return false;
        }
        parent_[a] = b;
        return true;
    }

private:
    std::vector<std::size_t> parent_;
};

inline std::size_t node_index(const Circuit& c, const std::string& n) {
    return static_cast<std::size_t>(std::find(c.nodes.begin(), c.nodes.end(), n) - c.nodes.begin());
}

}  // namespace netlist_detail

/// Structural problems that make a deck unrunnable; empty when the deck is fine.
[[nodiscard]] inline std::vector<Diagnostic> validate(const Circuit& c) {
    using namespace netlist_detail;
    std::vector<Diagnostic> out;
    if (c.devices.empty()) {
        out.push_back({DiagnosticKind::EmptyCircuit, "", "circuit has no elements"});
    }
    DisjointSets dc(c.nodes.size());
    DisjointSets vsrc(c.nodes.size());
    bool has_source = false;
    for (const auto& d : c.devices) {
        const std::size_t a = node_index(c, d.terminals[0]);
        const std::size_t b = node_index(c, d.terminals[d.kind == DeviceKind::Mosfet ? 2 : 1]);
        switch (d.kind) {
            case DeviceKind::Resistor:
            case DeviceKind::Inductor:
            case DeviceKind::Diode:
            case DeviceKind::Mosfet:
                dc.unite(a, b);
                break;
            case DeviceKind::VoltageSource:
                has_source = true;
                dc.unite(a, b);
                if (!vsrc.unite(a, b)) {
                    out.push_back({DiagnosticKind::VoltageLoop, d.name,
                                   "voltage source " + d.name + " closes a loop of voltage sources"});
                }
                break;
            case DeviceKind::CurrentSource:
                has_source = true;
                break;
            case DeviceKind::Capacitor:
                break;
        }
    }
    for (std::size_t i = 1; i < c.nodes.size(); ++i) {
        if (dc.find(i) != dc.find(0)) {
            out.push_back({DiagnosticKind::FloatingNode, c.nodes[i],
                           "node " + c.nodes[i] + " has no DC path to ground"});
        }
    }
    if (!has_source && !c.devices.empty()) {
        out.push_back({DiagnosticKind::MissingSource, "", "circuit has no independent source"});
    }
    if (c.analyses.empty()) {
        out.push_back({DiagnosticKind::MissingAnalysis, "", "no .tran directive"});
    }
    return out;
}

}  // namespace wavesim
