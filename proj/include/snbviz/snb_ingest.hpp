#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <utility>
#include <variant>
#include <vector>

#include "snbviz/molecular_graph.hpp"

namespace snbviz {

inline constexpr double kDefaultBondThreshold = 1.8;

enum class ParseErrorCode { SyntaxError, UnknownAtomInBond, DuplicateAtomId, CountMismatch };

std::string_view to_string(ParseErrorCode code);

/// Structured parse failure. `line` is 1-based, 0 when the error is not tied to a line.
class ParseError : public std::runtime_error {
public:
    ParseError(ParseErrorCode code, std::size_t line, const std::string& detail);

    ParseErrorCode code() const { return code_; }
    std::size_t line() const { return line_; }

private:
    ParseErrorCode code_;
    std::size_t line_;
};

// .snbg text format:
//   # comment
//   ATOMS <n>
//   <id> <x> <y> <z> [element]      (n rows, element defaults to X)
//   BONDS <m>
//   <id1> <id2>                     (m rows)
Snapshot parse_snbg(std::string_view text);

/// Canonical text: atoms by id, bonds sorted, 4-decimal fixed positions, LF endings.
std::string serialize_snbg(const Snapshot& s);

/// Standard XYZ (count, comment, `element x y z` rows). Ids are 1..n in row order; no bonds.
Snapshot parse_xyz(std::string_view text);

/// All unordered pairs within `threshold` Å (inclusive), canonical order. Grid-bucketed.
std::vector<Bond> infer_bonds(std::span<const Atom> atoms, double threshold);

/// Parses by extension: `.xyz` imports with inferred bonds, anything else as `.snbg`.
Snapshot load_structure_text(const std::filesystem::path& path, std::string_view text,
                             double bond_threshold = kDefaultBondThreshold);

struct WatchState {
    std::filesystem::path path;
    std::optional<std::filesystem::file_time_type> last_mtime;
    std::uintmax_t last_size = 0;
    std::optional<std::uint64_t> last_hash;
    bool missing = false;

    static WatchState start(std::filesystem::path p) {
        WatchState w;
        w.path = std::move(p);
        return w;
    }
};

namespace poll_result {
struct NoChange {};
struct Reloaded {
    Snapshot snapshot;
};
struct FileMissing {};
struct ParseFailed {
    std::string detail;
};
} // namespace poll_result

using PollResult =
    std::variant<poll_result::NoChange, poll_result::Reloaded, poll_result::FileMissing, poll_result::ParseFailed>;

/// Stats the file; rehashes only when mtime or size moved; reparses only when the hash moved.
/// A parse failure leaves the state untouched so the next poll retries.
PollResult poll(WatchState& state, double bond_threshold = kDefaultBondThreshold);

struct DroppedOp {
    EditOp op;
    RejectReason reason;
};

struct RebaseReport {
    std::vector<EditOp> kept;
    std::vector<DroppedOp> dropped;
};

/// Replays `overlay` onto `new_base`, dropping every op apply_op would reject.
std::pair<Snapshot, RebaseReport> rebase(const Snapshot& new_base, std::span<const EditOp> overlay);

} // namespace snbviz
