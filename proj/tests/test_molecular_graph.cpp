#include "doctest.h"

#include <cmath>
#include <limits>
#include <random>

#include "oracles/graph_model.hpp"
#include "snbviz/molecular_graph.hpp"
#include "snbviz/simulation.hpp"

using namespace snbviz;

namespace {

EditOp make(OpPayload p) { return {{1, 1}, std::move(p)}; }

MoleculeDoc water() {
    Snapshot s;
    s.atoms = {{1, {0, 0, 0}, "O"}, {2, {0.96, 0, 0}, "H"}, {3, {-0.24, 0.93, 0}, "H"}};
    s.bonds = {{1, 2}, {1, 3}};
    return restore(s, "water");
}

std::string reason_of(const MoleculeDoc& d, OpPayload p) {
    auto r = check_op(d, make(std::move(p)));
    return r ? std::string(to_string(*r)) : "";
}

} // namespace

TEST_CASE("element symbols") {
    CHECK(is_valid_element("C"));
    CHECK(is_valid_element("Cl"));
    CHECK(is_valid_element("X"));
    CHECK_FALSE(is_valid_element(""));
    CHECK_FALSE(is_valid_element("c"));
    CHECK_FALSE(is_valid_element("CL"));
    CHECK_FALSE(is_valid_element("Cla"));
    CHECK_FALSE(is_valid_element("1"));
}

TEST_CASE("bonds are stored canonically") {
    CHECK(Bond::between(5, 2) == Bond{2, 5});
    MoleculeDoc d = water();
    CHECK(d.has_bond(2, 1));
    CHECK(apply_op(d, make(op::AddBond{3, 2})).applied());
    CHECK(d.bonds().contains(Bond{2, 3}));
}

TEST_CASE("rejections name the first failing precondition") {
    const MoleculeDoc d = water();
    const double nan = std::numeric_limits<double>::quiet_NaN();
    CHECK(reason_of(d, op::AddAtom{1, {0, 0, 0}, "C"}) == "duplicate_atom");
    CHECK(reason_of(d, op::AddAtom{1, {0, 0, 0}, "cc"}) == "bad_element");
    CHECK(reason_of(d, op::AddAtom{1, {nan, 0, 0}, "cc"}) == "nonfinite_position");
    CHECK(reason_of(d, op::AddAtom{9, {0, 0, 0}, "C"}).empty());
    CHECK(reason_of(d, op::RemoveAtom{9}) == "missing_atom");
    CHECK(reason_of(d, op::AddBond{9, 9}) == "self_bond");
    CHECK(reason_of(d, op::AddBond{1, 9}) == "missing_atom");
    CHECK(reason_of(d, op::AddBond{2, 1}) == "duplicate_bond");
    CHECK(reason_of(d, op::RemoveBond{2, 3}) == "missing_bond");
    CHECK(reason_of(d, op::RemoveBond{2, 9}) == "missing_atom");
    CHECK(reason_of(d, op::SetElement{9, "Zz"}) == "missing_atom");
    CHECK(reason_of(d, op::SetElement{9, "zz"}) == "bad_element");
    CHECK(reason_of(d, op::MoveAtom{9, {0, 0, 0}}) == "missing_atom");
    CHECK(reason_of(d, op::MoveAtom{9, {0, INFINITY, 0}}) == "nonfinite_position");
}

TEST_CASE("reject reasons round-trip through their names") {
    for (auto r : {RejectReason::MissingAtom, RejectReason::SelfBond, RejectReason::DuplicateBond,
                   RejectReason::MissingBond, RejectReason::DuplicateAtom, RejectReason::BadElement,
                   RejectReason::NonfinitePosition})
        CHECK(reject_reason_from_string(to_string(r)) == r);
    CHECK_FALSE(reject_reason_from_string("nope"));
}

TEST_CASE("remove atom cascades and bumps the version once") {
    MoleculeDoc d = water();
    const auto before = d.version();
    auto r = apply_op(d, make(op::RemoveAtom{1}));
    CHECK(r.applied());
    CHECK(r.version == before + 1);
    CHECK(d.version() == before + 1);
    CHECK(d.bonds().empty());
    CHECK(d.atoms().size() == 2);
}

TEST_CASE("a rejected op leaves the document untouched") {
    MoleculeDoc d = water();
    const MoleculeDoc copy = d;
    auto r = apply_op(d, make(op::AddBond{1, 2}));
    CHECK_FALSE(r.applied());
    CHECK(*r.rejection == RejectReason::DuplicateBond);
    CHECK(d == copy);
}

TEST_CASE("restore refuses inconsistent snapshots") {
    Snapshot dangling;
    dangling.atoms = {{1, {0, 0, 0}, "C"}};
    dangling.bonds = {{1, 2}};
    CHECK_THROWS_AS(restore(dangling, "x"), InconsistentSnapshot);
    CHECK_FALSE(is_self_consistent(dangling));

    Snapshot dup;
    dup.atoms = {{1, {0, 0, 0}, "C"}, {1, {1, 0, 0}, "C"}};
    CHECK_THROWS_AS(restore(dup, "x"), InconsistentSnapshot);

    Snapshot self_bond;
    self_bond.atoms = {{1, {0, 0, 0}, "C"}};
    self_bond.bonds = {{1, 1}};
    CHECK_THROWS_AS(restore(self_bond, "x"), InconsistentSnapshot);
}

TEST_CASE("snapshot and restore are inverse") {
    const MoleculeDoc d = water();
    const Snapshot s = snapshot(d);
    CHECK(is_self_consistent(s));
    CHECK(snapshot(restore(s, "water")) == s);
    CHECK(structural_hash(s) == structural_hash(snapshot(restore(s, "water"))));
}

TEST_CASE("structural hash sees every field") {
    const Snapshot s = snapshot(water());
    Snapshot v = s;
    v.version += 1;
    CHECK(structural_hash(v) != structural_hash(s));
    Snapshot m = s;
    m.atoms[0].position.x = std::nextafter(m.atoms[0].position.x, 1.0);
    CHECK(structural_hash(m) != structural_hash(s));
    Snapshot e = s;
    e.atoms[1].element = "D";
    CHECK(structural_hash(e) != structural_hash(s));
    Snapshot b = s;
    b.bonds.pop_back();
    CHECK(structural_hash(b) != structural_hash(s));
}

TEST_CASE("removed ids are not reused after a reload") {
    MoleculeDoc d = water();
    d.set_source(DocSource{"w.snbg"});
    Snapshot base = snapshot(d);
    base.atoms.pop_back();
    base.bonds.pop_back();
    d.reload(base, {});
    CHECK(d.find_atom(3) == nullptr);
    CHECK(*check_op(d, make(op::AddAtom{3, {0, 0, 0}, "H"})) == RejectReason::DuplicateAtom);
}

TEST_CASE("watched documents collect an overlay, edited ones do not") {
    MoleculeDoc d = water();
    CHECK(apply_op(d, make(op::SetElement{1, "S"})).applied());
    CHECK(d.overlay().empty());
    d.set_source(DocSource{"w.snbg"});
    CHECK(apply_op(d, make(op::SetElement{1, "O"})).applied());
    CHECK_FALSE(apply_op(d, make(op::SetElement{9, "O"})).applied());
    CHECK(d.overlay().size() == 1);
    d.set_source(DocSource{});
    CHECK(d.overlay().empty());
}

TEST_CASE("apply_op agrees with the container model on random op streams") {
    std::mt19937_64 rng(7);
    for (int round = 0; round < 50; ++round) {
        const Snapshot start = random_initial_snapshot(rng());
        MoleculeDoc d = restore(start, "m");
        oracle::Model model = oracle::Model::from(start);
        ClientDoc view("m", 1);
        view.on_message(msg::SnapshotMsg{"m", start});
        for (int k = 0; k < 200; ++k) {
            auto payload = random_op(view, rng);
            REQUIRE(payload);
            // Perturb some ops so every rejection path gets exercised.
            if (uniform_int(rng, 0, 9) == 0) {
                if (auto* a = std::get_if<op::AddAtom>(&*payload)) a->element = "bad";
                if (auto* b = std::get_if<op::AddBond>(&*payload)) b->b = b->a;
            }
            const EditOp e{{1, static_cast<std::uint64_t>(k + 1)}, *payload};
            const auto result = apply_op(d, e);
            const std::string want = model.apply(e);
            CHECK((result.applied() ? std::string() : std::string(to_string(*result.rejection))) == want);
            if (result.applied()) view.on_message(msg::Applied{"m", result.version, e, 1});
        }
        CHECK(snapshot(d) == model.snapshot());
        CHECK(is_self_consistent(snapshot(d)));
    }
}
