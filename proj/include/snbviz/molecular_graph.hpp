#pragma once

#include <compare>
#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <set>
#include <stdexcept>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

#include "snbviz/vec3.hpp"

namespace snbviz {

using AtomId = std::uint64_t;
using ClientId = std::uint64_t;
using Version = std::uint64_t;

inline constexpr std::string_view kUnassignedElement = "X";

/// True when `symbol` is one uppercase letter optionally followed by one lowercase letter.
bool is_valid_element(std::string_view symbol);

struct Atom {
    AtomId id = 0;
    Vec3 position;
    std::string element{kUnassignedElement};

    friend bool operator==(const Atom&, const Atom&) = default;
};

/// Undirected bond stored with a < b.
struct Bond {
    AtomId a = 0;
    AtomId b = 0;

    static Bond between(AtomId x, AtomId y) { return x < y ? Bond{x, y} : Bond{y, x}; }

    friend auto operator<=>(const Bond&, const Bond&) = default;
};

struct OpId {
    ClientId client = 0;
    std::uint64_t seq = 0;

    friend auto operator<=>(const OpId&, const OpId&) = default;
};

namespace op {
struct AddAtom {
    AtomId id = 0;
    Vec3 position;
    std::string element{kUnassignedElement};
    friend bool operator==(const AddAtom&, const AddAtom&) = default;
};
struct RemoveAtom {
    AtomId id = 0;
    friend bool operator==(const RemoveAtom&, const RemoveAtom&) = default;
};
struct AddBond {
    AtomId a = 0;
    AtomId b = 0;
    friend bool operator==(const AddBond&, const AddBond&) = default;
};
struct RemoveBond {
    AtomId a = 0;
    AtomId b = 0;
    friend bool operator==(const RemoveBond&, const RemoveBond&) = default;
};
struct SetElement {
    AtomId id = 0;
    std::string element;
    friend bool operator==(const SetElement&, const SetElement&) = default;
};
struct MoveAtom {
    AtomId id = 0;
    Vec3 position;
    friend bool operator==(const MoveAtom&, const MoveAtom&) = default;
};
} // namespace op

enum class OpKind { AddAtom, RemoveAtom, AddBond, RemoveBond, SetElement, MoveAtom };

using OpPayload =
    std::variant<op::AddAtom, op::RemoveAtom, op::AddBond, op::RemoveBond, op::SetElement, op::MoveAtom>;

/// One atomic mutation of a document; the unit of replication.
struct EditOp {
    OpId op_id;
    OpPayload payload;

    OpKind kind() const { return static_cast<OpKind>(payload.index()); }

    friend bool operator==(const EditOp&, const EditOp&) = default;
};

std::string_view to_string(OpKind kind);

enum class RejectReason {
    MissingAtom,
    SelfBond,
    DuplicateBond,
    MissingBond,
    DuplicateAtom,
    BadElement,
    NonfinitePosition,
};

std::string_view to_string(RejectReason reason);
std::optional<RejectReason> reject_reason_from_string(std::string_view name);

/// Canonical, self-contained document state: atoms sorted by id, bonds sorted.
struct Snapshot {
    Version version = 0;
    std::vector<Atom> atoms;
    std::vector<Bond> bonds;

    friend bool operator==(const Snapshot&, const Snapshot&) = default;
};

/// Every bond endpoint exists, bonds are canonical (a < b) and unique, atom ids unique.
bool is_self_consistent(const Snapshot& s);

/// Sorts atoms and bonds into canonical order.
void canonicalize(Snapshot& s);

/// FNV-1a over the exact bit patterns of a canonical snapshot, version included.
std::uint64_t structural_hash(const Snapshot& s);

class InconsistentSnapshot : public std::runtime_error {
public:
    explicit InconsistentSnapshot(const std::string& what) : std::runtime_error(what) {}
};

struct DocSource {
    std::optional<std::filesystem::path> watched_path;

    bool watched() const { return watched_path.has_value(); }
    friend bool operator==(const DocSource&, const DocSource&) = default;
};

/// Result of apply_op: the new version, or the reason nothing changed.
struct ApplyResult {
    Version version = 0;
    std::optional<RejectReason> rejection;

    bool applied() const { return !rejection.has_value(); }
};

/// Named, versioned molecular graph. Mutated only through apply_op and reload.
class MoleculeDoc {
public:
    MoleculeDoc() = default;
    explicit MoleculeDoc(std::string name) : name_(std::move(name)) {}

    const std::string& name() const { return name_; }
    Version version() const { return version_; }
    const std::map<AtomId, Atom>& atoms() const { return atoms_; }
    const std::set<Bond>& bonds() const { return bonds_; }
    const DocSource& source() const { return source_; }
    const std::vector<EditOp>& overlay() const { return overlay_; }
    /// Ids that existed once and may not be added again.
    const std::set<AtomId>& retired() const { return retired_; }
    /// Marks an absent id as used. Ignored for live atoms.
    void retire(AtomId id);

    const Atom* find_atom(AtomId id) const;
    bool has_bond(AtomId x, AtomId y) const { return bonds_.contains(Bond::between(x, y)); }

    /// Switching to Edited clears the overlay; `overlay` seeds it for a Watched source.
    void set_source(DocSource source, std::vector<EditOp> overlay = {});

    /// Replaces content with `base` (already rebased), keeps `kept` as the new overlay and
    /// bumps the version by one. Ids that disappear are retired unless the base reintroduces them.
    void reload(const Snapshot& base, std::vector<EditOp> kept);

    friend bool operator==(const MoleculeDoc&, const MoleculeDoc&) = default;

private:
    friend ApplyResult apply_op(MoleculeDoc& doc, const EditOp& op);
    friend MoleculeDoc restore(const Snapshot& snapshot, std::string name);
    friend std::optional<RejectReason> check_op(const MoleculeDoc& doc, const EditOp& op);

    std::string name_;
    Version version_ = 0;
    std::map<AtomId, Atom> atoms_;
    std::set<Bond> bonds_;
    DocSource source_;
    std::vector<EditOp> overlay_;
    std::set<AtomId> retired_;
};

/// The rejection apply_op would produce, without mutating anything.
std::optional<RejectReason> check_op(const MoleculeDoc& doc, const EditOp& op);

/// Applies `op` atomically. RemoveAtom cascades to incident bonds.
ApplyResult apply_op(MoleculeDoc& doc, const EditOp& op);

Snapshot snapshot(const MoleculeDoc& doc);

/// Rebuilds an Edited document; throws InconsistentSnapshot on a dangling bond or duplicate id.
MoleculeDoc restore(const Snapshot& snapshot, std::string name);

} // namespace snbviz
