#include "snbviz/molecular_graph.hpp"

#include <algorithm>

#include "snbviz/hash.hpp"

namespace snbviz {

bool is_valid_element(std::string_view symbol) {
    auto upper = [](char c) { return c >= 'A' && c <= 'Z'; };
    auto lower = [](char c) { return c >= 'a' && c <= 'z'; };
    if (symbol.size() == 1) return upper(symbol[0]);
    if (symbol.size() == 2) return upper(symbol[0]) && lower(symbol[1]);
    return false;
}

std::string_view to_string(OpKind kind) {
    switch (kind) {
    case OpKind::AddAtom: return "add_atom";
    case OpKind::RemoveAtom: return "remove_atom";
    case OpKind::AddBond: return "add_bond";
    case OpKind::RemoveBond: return "remove_bond";
    case OpKind::SetElement: return "set_element";
    case OpKind::MoveAtom: return "move_atom";
    }
    return "unknown";
}

namespace {
constexpr std::pair<RejectReason, std::string_view> kReasonNames[] = {
    {RejectReason::MissingAtom, "missing_atom"},
    {RejectReason::SelfBond, "self_bond"},
    {RejectReason::DuplicateBond, "duplicate_bond"},
    {RejectReason::MissingBond, "missing_bond"},
    {RejectReason::DuplicateAtom, "duplicate_atom"},
    {RejectReason::BadElement, "bad_element"},
    {RejectReason::NonfinitePosition, "nonfinite_position"},
};
} // namespace

std::string_view to_string(RejectReason reason) {
    for (const auto& [r, name] : kReasonNames)
        if (r == reason) return name;
    return "unknown";
}

std::optional<RejectReason> reject_reason_from_string(std::string_view name) {
    for (const auto& [r, n] : kReasonNames)
        if (n == name) return r;
    return std::nullopt;
}

bool is_self_consistent(const Snapshot& s) {
    std::set<AtomId> ids;
    for (const auto& atom : s.atoms)
        if (!ids.insert(atom.id).second) return false;
    std::set<Bond> seen;
    for (const auto& bond : s.bonds) {
        if (bond.a >= bond.b) return false;
        if (!ids.contains(bond.a) || !ids.contains(bond.b)) return false;
        if (!seen.insert(bond).second) return false;
    }
    return true;
}

void canonicalize(Snapshot& s) {
    std::sort(s.atoms.begin(), s.atoms.end(),
              [](const Atom& l, const Atom& r) { return l.id < r.id; });
    for (auto& bond : s.bonds) bond = Bond::between(bond.a, bond.b);
    std::sort(s.bonds.begin(), s.bonds.end());
}

std::uint64_t structural_hash(const Snapshot& s) {
    Fnv1a h;
    h.u64(s.version);
    h.u64(s.atoms.size());
    for (const auto& atom : s.atoms) {
        h.u64(atom.id);
        h.f64(atom.position.x);
        h.f64(atom.position.y);
        h.f64(atom.position.z);
        h.u64(atom.element.size());
        h.bytes(atom.element.data(), atom.element.size());
    }
    h.u64(s.bonds.size());
    for (const auto& bond : s.bonds) {
        h.u64(bond.a);
        h.u64(bond.b);
    }
    return h.value();
}

void MoleculeDoc::retire(AtomId id) {
    if (!atoms_.contains(id)) retired_.insert(id);
}

const Atom* MoleculeDoc::find_atom(AtomId id) const {
    auto it = atoms_.find(id);
    return it == atoms_.end() ? nullptr : &it->second;
}

void MoleculeDoc::set_source(DocSource source, std::vector<EditOp> overlay) {
    source_ = std::move(source);
    overlay_ = source_.watched() ? std::move(overlay) : std::vector<EditOp>{};
}

void MoleculeDoc::reload(const Snapshot& base, std::vector<EditOp> kept) {
    for (const auto& [id, atom] : atoms_) retired_.insert(id);
    atoms_.clear();
    bonds_.clear();
    for (const auto& atom : base.atoms) {
        retired_.erase(atom.id);
        atoms_.emplace(atom.id, atom);
    }
    for (const auto& bond : base.bonds) bonds_.insert(Bond::between(bond.a, bond.b));
    overlay_ = source_.watched() ? std::move(kept) : std::vector<EditOp>{};
    ++version_;
}

std::optional<RejectReason> check_op(const MoleculeDoc& doc, const EditOp& edit) {
    auto has_atom = [&](AtomId id) { return doc.atoms_.contains(id); };
    return std::visit(
        [&](const auto& p) -> std::optional<RejectReason> {
            using T = std::decay_t<decltype(p)>;
            if constexpr (std::is_same_v<T, op::AddAtom>) {
                if (!is_finite(p.position)) return RejectReason::NonfinitePosition;
                if (!is_valid_element(p.element)) return RejectReason::BadElement;
                if (has_atom(p.id) || doc.retired_.contains(p.id)) return RejectReason::DuplicateAtom;
            } else if constexpr (std::is_same_v<T, op::RemoveAtom>) {
                if (!has_atom(p.id)) return RejectReason::MissingAtom;
            } else if constexpr (std::is_same_v<T, op::AddBond>) {
                if (p.a == p.b) return RejectReason::SelfBond;
                if (!has_atom(p.a) || !has_atom(p.b)) return RejectReason::MissingAtom;
                if (doc.has_bond(p.a, p.b)) return RejectReason::DuplicateBond;
            } else if constexpr (std::is_same_v<T, op::RemoveBond>) {
                if (!has_atom(p.a) || !has_atom(p.b)) return RejectReason::MissingAtom;
                if (!doc.has_bond(p.a, p.b)) return RejectReason::MissingBond;
            } else if constexpr (std::is_same_v<T, op::SetElement>) {
                if (!is_valid_element(p.element)) return RejectReason::BadElement;
                if (!has_atom(p.id)) return RejectReason::MissingAtom;
            } else if constexpr (std::is_same_v<T, op::MoveAtom>) {
                if (!is_finite(p.position)) return RejectReason::NonfinitePosition;
                if (!has_atom(p.id)) return RejectReason::MissingAtom;
            }
            return std::nullopt;
        },
        edit.payload);
}

ApplyResult apply_op(MoleculeDoc& doc, const EditOp& edit) {
    if (auto reason = check_op(doc, edit)) return {doc.version_, reason};

    std::visit(
        [&](const auto& p) {
            using T = std::decay_t<decltype(p)>;
            if constexpr (std::is_same_v<T, op::AddAtom>) {
                doc.atoms_.emplace(p.id, Atom{p.id, p.position, p.element});
            } else if constexpr (std::is_same_v<T, op::RemoveAtom>) {
                doc.atoms_.erase(p.id);
                doc.retired_.insert(p.id);
                std::erase_if(doc.bonds_, [&](const Bond& b) { return b.a == p.id || b.b == p.id; });
            } else if constexpr (std::is_same_v<T, op::AddBond>) {
                doc.bonds_.insert(Bond::between(p.a, p.b));
            } else if constexpr (std::is_same_v<T, op::RemoveBond>) {
                doc.bonds_.erase(Bond::between(p.a, p.b));
            } else if constexpr (std::is_same_v<T, op::SetElement>) {
                doc.atoms_.at(p.id).element = p.element;
            } else if constexpr (std::is_same_v<T, op::MoveAtom>) {
                doc.atoms_.at(p.id).position = p.position;
            }
        },
        edit.payload);

    if (doc.source_.watched()) doc.overlay_.push_back(edit);
    return {++doc.version_, std::nullopt};
}

Snapshot snapshot(const MoleculeDoc& doc) {
    Snapshot s;
    s.version = doc.version();
    s.atoms.reserve(doc.atoms().size());
    for (const auto& [id, atom] : doc.atoms()) s.atoms.push_back(atom);
    s.bonds.assign(doc.bonds().begin(), doc.bonds().end());
    return s;
}

MoleculeDoc restore(const Snapshot& s, std::string name) {
    MoleculeDoc doc(std::move(name));
    doc.version_ = s.version;
    for (const auto& atom : s.atoms) {
        if (!doc.atoms_.emplace(atom.id, atom).second)
            throw InconsistentSnapshot("inconsistent_snapshot: duplicate atom id " + std::to_string(atom.id));
    }
    for (const auto& bond : s.bonds) {
        if (bond.a == bond.b || !doc.atoms_.contains(bond.a) || !doc.atoms_.contains(bond.b))
            throw InconsistentSnapshot("inconsistent_snapshot: bond (" + std::to_string(bond.a) + "," +
                                       std::to_string(bond.b) + ") has a missing endpoint");
        doc.bonds_.insert(Bond::between(bond.a, bond.b));
    }
    return doc;
}

} // namespace snbviz
