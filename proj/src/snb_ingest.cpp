#include "snbviz/snb_ingest.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <map>
#include <set>
#include <sstream>
#include <tuple>
#include <unordered_map>

#include "snbviz/hash.hpp"

namespace snbviz {

std::string_view to_string(ParseErrorCode code) {
    switch (code) {
    case ParseErrorCode::SyntaxError: return "syntax_error";
    case ParseErrorCode::UnknownAtomInBond: return "unknown_atom_in_bond";
    case ParseErrorCode::DuplicateAtomId: return "duplicate_atom_id";
    case ParseErrorCode::CountMismatch: return "count_mismatch";
    }
    return "unknown";
}

namespace {

std::string describe(ParseErrorCode code, std::size_t line, const std::string& detail) {
    std::string out(to_string(code));
    if (line > 0) out += "(line " + std::to_string(line) + ")";
    if (!detail.empty()) out += ": " + detail;
    return out;
}

} // namespace

ParseError::ParseError(ParseErrorCode code, std::size_t line, const std::string& detail)
    : std::runtime_error(describe(code, line, detail)), code_(code), line_(line) {}

namespace {

struct Line {
    std::size_t number;
    std::vector<std::string_view> tokens;
};

std::vector<std::string_view> split_ws(std::string_view s) {
    std::vector<std::string_view> out;
    std::size_t i = 0;
    while (i < s.size()) {
        while (i < s.size() && (s[i] == ' ' || s[i] == '\t' || s[i] == '\r')) ++i;
        std::size_t j = i;
        while (j < s.size() && s[j] != ' ' && s[j] != '\t' && s[j] != '\r') ++j;
        if (j > i) out.push_back(s.substr(i, j - i));
        i = j;
    }
    return out;
}

/// Splits into lines, numbering from 1. Keeps blank lines so callers decide.
std::vector<std::string_view> split_lines(std::string_view text) {
    std::vector<std::string_view> lines;
    std::size_t start = 0;
    while (start < text.size()) {
        auto end = text.find('\n', start);
        if (end == std::string_view::npos) end = text.size();
        lines.push_back(text.substr(start, end - start));
        start = end + 1;
    }
    return lines;
}

/// Non-blank, non-comment lines of an .snbg file.
std::vector<Line> content_lines(std::string_view text) {
    std::vector<Line> out;
    auto raw = split_lines(text);
    for (std::size_t i = 0; i < raw.size(); ++i) {
        auto tokens = split_ws(raw[i]);
        if (tokens.empty() || tokens.front().starts_with('#')) continue;
        out.push_back({i + 1, std::move(tokens)});
    }
    return out;
}

std::optional<std::uint64_t> parse_uint(std::string_view s) {
    std::uint64_t v = 0;
    auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
    if (ec != std::errc{} || ptr != s.data() + s.size()) return std::nullopt;
    return v;
}

std::optional<double> parse_real(std::string_view s) {
    if (!s.empty() && s.front() == '+') s.remove_prefix(1);
    double v = 0.0;
    auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
    if (ec != std::errc{} || ptr != s.data() + s.size() || !std::isfinite(v)) return std::nullopt;
    return v;
}

[[noreturn]] void fail(ParseErrorCode code, std::size_t line, const std::string& detail) {
    throw ParseError(code, line, detail);
}

std::size_t parse_header(const Line& line, std::string_view keyword) {
    if (line.tokens.size() != 2 || line.tokens[0] != keyword)
        fail(ParseErrorCode::SyntaxError, line.number, "expected '" + std::string(keyword) + " <count>'");
    auto n = parse_uint(line.tokens[1]);
    if (!n) fail(ParseErrorCode::SyntaxError, line.number, "bad count");
    return static_cast<std::size_t>(*n);
}

bool is_header(const Line& line, std::string_view keyword) {
    return !line.tokens.empty() && line.tokens[0] == keyword;
}

Vec3 parse_position(const Line& line, std::size_t first) {
    auto x = parse_real(line.tokens[first]);
    auto y = parse_real(line.tokens[first + 1]);
    auto z = parse_real(line.tokens[first + 2]);
    if (!x || !y || !z) fail(ParseErrorCode::SyntaxError, line.number, "bad coordinate");
    return {*x, *y, *z};
}

} // namespace

Snapshot parse_snbg(std::string_view text) {
    auto lines = content_lines(text);
    std::size_t last_line = split_lines(text).size();
    std::size_t cursor = 0;

    if (lines.empty()) fail(ParseErrorCode::SyntaxError, last_line + 1, "missing ATOMS header");
    const std::size_t atom_count = parse_header(lines[cursor++], "ATOMS");

    Snapshot s;
    std::set<AtomId> ids;
    for (std::size_t i = 0; i < atom_count; ++i) {
        if (cursor >= lines.size() || is_header(lines[cursor], "BONDS"))
            fail(ParseErrorCode::CountMismatch, cursor < lines.size() ? lines[cursor].number : last_line,
                 "declared " + std::to_string(atom_count) + " atoms, found " + std::to_string(i));
        const Line& line = lines[cursor++];
        if (line.tokens.size() != 4 && line.tokens.size() != 5)
            fail(ParseErrorCode::SyntaxError, line.number, "atom row needs 'id x y z [element]'");
        auto id = parse_uint(line.tokens[0]);
        if (!id) fail(ParseErrorCode::SyntaxError, line.number, "bad atom id");
        Atom atom{*id, parse_position(line, 1), std::string(kUnassignedElement)};
        if (line.tokens.size() == 5) {
            if (!is_valid_element(line.tokens[4]))
                fail(ParseErrorCode::SyntaxError, line.number, "bad element symbol");
            atom.element = std::string(line.tokens[4]);
        }
        if (!ids.insert(atom.id).second)
            fail(ParseErrorCode::DuplicateAtomId, line.number, "atom id " + std::to_string(atom.id));
        s.atoms.push_back(std::move(atom));
    }

    if (cursor >= lines.size()) fail(ParseErrorCode::SyntaxError, last_line + 1, "missing BONDS header");
    if (!is_header(lines[cursor], "BONDS")) {
        // A row where the header belongs means more atoms than declared.
        if (lines[cursor].tokens.size() >= 4 && parse_uint(lines[cursor].tokens[0]))
            fail(ParseErrorCode::CountMismatch, lines[cursor].number,
                 "more than " + std::to_string(atom_count) + " atom rows");
        fail(ParseErrorCode::SyntaxError, lines[cursor].number, "expected 'BONDS <count>'");
    }
    const std::size_t bond_count = parse_header(lines[cursor++], "BONDS");

    std::set<Bond> bonds;
    for (std::size_t i = 0; i < bond_count; ++i) {
        if (cursor >= lines.size())
            fail(ParseErrorCode::CountMismatch, last_line,
                 "declared " + std::to_string(bond_count) + " bonds, found " + std::to_string(i));
        const Line& line = lines[cursor++];
        if (line.tokens.size() != 2) fail(ParseErrorCode::SyntaxError, line.number, "bond row needs 'id1 id2'");
        auto a = parse_uint(line.tokens[0]);
        auto b = parse_uint(line.tokens[1]);
        if (!a || !b) fail(ParseErrorCode::SyntaxError, line.number, "bad bond endpoint");
        if (!ids.contains(*a) || !ids.contains(*b))
            fail(ParseErrorCode::UnknownAtomInBond, line.number,
                 "bond " + std::to_string(*a) + "-" + std::to_string(*b));
        if (*a == *b) fail(ParseErrorCode::SyntaxError, line.number, "self bond");
        if (!bonds.insert(Bond::between(*a, *b)).second)
            fail(ParseErrorCode::SyntaxError, line.number, "duplicate bond");
    }
    if (cursor < lines.size())
        fail(ParseErrorCode::CountMismatch, lines[cursor].number,
             "more than " + std::to_string(bond_count) + " bond rows");

    s.bonds.assign(bonds.begin(), bonds.end());
    canonicalize(s);
    return s;
}

namespace {

/// Fixed 4-decimal rendering of the shortest round-trip decimal form, ties to even, so a
/// written value like 1.00005 rounds as a decimal rather than as its binary neighbour.
void append_fixed4(std::string& out, double v) {
    char buf[512];
    auto [end, ec] = std::to_chars(buf, buf + sizeof buf, v, std::chars_format::fixed);
    std::string digits(buf, end);
    bool negative = false;
    if (!digits.empty() && digits.front() == '-') {
        negative = true;
        digits.erase(0, 1);
    }
    const auto dot = digits.find('.');
    std::string int_part = dot == std::string::npos ? digits : digits.substr(0, dot);
    std::string frac = dot == std::string::npos ? "" : digits.substr(dot + 1);
    std::string kept = frac.substr(0, std::min<std::size_t>(4, frac.size()));
    kept.resize(4, '0');
    const std::string rest = frac.size() > 4 ? frac.substr(4) : "";

    bool round_up = false;
    if (!rest.empty() && rest[0] > '5') round_up = true;
    else if (!rest.empty() && rest[0] == '5') {
        const bool beyond = rest.find_first_not_of('0', 1) != std::string::npos;
        round_up = beyond || (kept.back() - '0') % 2 == 1;
    }
    std::string number = int_part + kept;
    if (round_up) {
        int i = static_cast<int>(number.size()) - 1;
        while (i >= 0 && number[i] == '9') number[i--] = '0';
        if (i >= 0) ++number[i];
        else number.insert(number.begin(), '1');
    }
    std::string text = number.substr(0, number.size() - 4) + "." + number.substr(number.size() - 4);
    if (negative && text.find_first_not_of("0.") != std::string::npos) text.insert(text.begin(), '-');
    out += text;
}

} // namespace

std::string serialize_snbg(const Snapshot& input) {
    Snapshot s = input;
    canonicalize(s);
    std::string out;
    out.reserve(32 + s.atoms.size() * 40 + s.bonds.size() * 12);
    out += "ATOMS " + std::to_string(s.atoms.size()) + "\n";
    for (const auto& atom : s.atoms) {
        out += std::to_string(atom.id);
        out += ' ';
        append_fixed4(out, atom.position.x);
        out += ' ';
        append_fixed4(out, atom.position.y);
        out += ' ';
        append_fixed4(out, atom.position.z);
        out += ' ';
        out += atom.element;
        out += '\n';
    }
    out += "BONDS " + std::to_string(s.bonds.size()) + "\n";
    for (const auto& bond : s.bonds) out += std::to_string(bond.a) + " " + std::to_string(bond.b) + "\n";
    return out;
}

namespace {

/// "CL" / "cl" -> "Cl".
std::string normalize_element(std::string_view raw) {
    std::string e(raw);
    for (std::size_t i = 0; i < e.size(); ++i)
        e[i] = static_cast<char>(i == 0 ? std::toupper(static_cast<unsigned char>(e[i]))
                                        : std::tolower(static_cast<unsigned char>(e[i])));
    return e;
}

} // namespace

Snapshot parse_xyz(std::string_view text) {
    auto raw = split_lines(text);
    if (raw.empty()) fail(ParseErrorCode::SyntaxError, 1, "missing atom count");
    auto count_tokens = split_ws(raw[0]);
    if (count_tokens.size() != 1) fail(ParseErrorCode::SyntaxError, 1, "expected atom count");
    auto count = parse_uint(count_tokens[0]);
    if (!count) fail(ParseErrorCode::SyntaxError, 1, "bad atom count");

    Snapshot s;
    std::size_t row = 2; // index of first atom row (line 3)
    for (std::uint64_t i = 0; i < *count; ++i, ++row) {
        if (row >= raw.size() || split_ws(raw[row]).empty())
            fail(ParseErrorCode::CountMismatch, std::min(row + 1, raw.size()),
                 "declared " + std::to_string(*count) + " atoms, found " + std::to_string(i));
        Line line{row + 1, split_ws(raw[row])};
        if (line.tokens.size() < 4) fail(ParseErrorCode::SyntaxError, line.number, "row needs 'element x y z'");
        auto element = normalize_element(line.tokens[0]);
        if (!is_valid_element(element)) fail(ParseErrorCode::SyntaxError, line.number, "bad element symbol");
        s.atoms.push_back({i + 1, parse_position(line, 1), element});
    }
    for (; row < raw.size(); ++row)
        if (!split_ws(raw[row]).empty())
            fail(ParseErrorCode::CountMismatch, row + 1, "rows beyond declared count");
    return s;
}

std::vector<Bond> infer_bonds(std::span<const Atom> atoms, double threshold) {
    if (!(threshold > 0.0) || !std::isfinite(threshold))
        throw std::invalid_argument("infer_bonds: threshold must be positive and finite");

    using Cell = std::tuple<long long, long long, long long>;
    auto cell_of = [threshold](const Vec3& p) {
        return Cell{static_cast<long long>(std::floor(p.x / threshold)),
                    static_cast<long long>(std::floor(p.y / threshold)),
                    static_cast<long long>(std::floor(p.z / threshold))};
    };
    std::map<Cell, std::vector<std::size_t>> grid;
    for (std::size_t i = 0; i < atoms.size(); ++i) grid[cell_of(atoms[i].position)].push_back(i);

    std::set<Bond> found;
    for (std::size_t i = 0; i < atoms.size(); ++i) {
        auto [cx, cy, cz] = cell_of(atoms[i].position);
        for (long long dx = -1; dx <= 1; ++dx)
            for (long long dy = -1; dy <= 1; ++dy)
                for (long long dz = -1; dz <= 1; ++dz) {
                    auto it = grid.find({cx + dx, cy + dy, cz + dz});
                    if (it == grid.end()) continue;
                    for (std::size_t j : it->second) {
                        if (j <= i || atoms[i].id == atoms[j].id) continue;
                        if (distance(atoms[i].position, atoms[j].position) <= threshold)
                            found.insert(Bond::between(atoms[i].id, atoms[j].id));
                    }
                }
    }
    return {found.begin(), found.end()};
}

Snapshot load_structure_text(const std::filesystem::path& path, std::string_view text, double bond_threshold) {
    if (path.extension() == ".xyz") {
        Snapshot s = parse_xyz(text);
        s.bonds = infer_bonds(s.atoms, bond_threshold);
        return s;
    }
    return parse_snbg(text);
}

PollResult poll(WatchState& state, double bond_threshold) {
    namespace fs = std::filesystem;
    std::error_code ec;
    auto mtime = fs::last_write_time(state.path, ec);
    std::uintmax_t size = ec ? 0 : fs::file_size(state.path, ec);
    if (ec) {
        state.missing = true;
        state.last_mtime.reset();
        return poll_result::FileMissing{};
    }
    state.missing = false;
    if (state.last_mtime && *state.last_mtime == mtime && state.last_size == size && state.last_hash)
        return poll_result::NoChange{};

    std::ifstream in(state.path, std::ios::binary);
    if (!in) {
        state.missing = true;
        return poll_result::FileMissing{};
    }
    std::ostringstream buf;
    buf << in.rdbuf();
    const std::string text = buf.str();
    const std::uint64_t hash = fnv1a(text);

    if (state.last_hash && *state.last_hash == hash) {
        state.last_mtime = mtime;
        state.last_size = size;
        return poll_result::NoChange{};
    }
    try {
        Snapshot s = load_structure_text(state.path, text, bond_threshold);
        state.last_mtime = mtime;
        state.last_size = size;
        state.last_hash = hash;
        return poll_result::Reloaded{std::move(s)};
    } catch (const ParseError& e) {
        return poll_result::ParseFailed{e.what()};
    }
}

std::pair<Snapshot, RebaseReport> rebase(const Snapshot& new_base, std::span<const EditOp> overlay) {
    MoleculeDoc doc = restore(new_base, {});
    RebaseReport report;
    for (const auto& edit : overlay) {
        auto result = apply_op(doc, edit);
        if (result.applied())
            report.kept.push_back(edit);
        else
            report.dropped.push_back({edit, *result.rejection});
    }
    return {snapshot(doc), std::move(report)};
}

} // namespace snbviz
