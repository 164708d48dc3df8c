#include "snbviz/client_doc.hpp"

namespace snbviz {

msg::OpSubmit ClientDoc::prepare(OpPayload payload) {
    EditOp edit{{self_, next_seq_++}, std::move(payload)};
    pending_.emplace(edit.op_id.seq, edit);
    return {doc_, std::move(edit)};
}

void ClientDoc::on_message(const Message& m) {
    if (const auto* s = std::get_if<msg::SnapshotMsg>(&m)) {
        if (s->doc != doc_) return;
        local_ = restore(s->snapshot, doc_);
        primed_ = true;
    } else if (const auto* a = std::get_if<msg::Applied>(&m)) {
        if (a->doc != doc_) return;
        if (a->origin_client == self_ && pending_.erase(a->op.op_id.seq) > 0) ++acknowledged_;
        if (!primed_) return;
        if (a->version != local_.version() + 1) {
            diverged_ = true;
            return;
        }
        if (!apply_op(local_, a->op).applied()) diverged_ = true;
    } else if (const auto* r = std::get_if<msg::Reject>(&m)) {
        if (r->doc != doc_) return;
        if (r->op_id.client == self_ && pending_.erase(r->op_id.seq) > 0) ++rejected_;
    } else if (const auto* d = std::get_if<msg::DocReloaded>(&m)) {
        if (d->doc != doc_) return;
        local_ = restore(d->snapshot, doc_);
        primed_ = true;
    }
}

void ClientDoc::reset_for_reconnect(ClientId new_self) {
    self_ = new_self;
    pending_.clear();
    primed_ = false;
    local_ = MoleculeDoc(doc_);
}

} // namespace snbviz
