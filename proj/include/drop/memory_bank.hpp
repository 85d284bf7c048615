#pragma once

#include <deque>
#include <vector>

#include "drop/autograd.hpp"

namespace drop {

// ---------------------------------------------------------------------------
// Ring buffer of recent part embeddings used to widen the candidate pool for
// the part-based triplet loss. Holds up to `capacity_batches` batches in
// FIFO order. Older batches are stored as detached value snapshots; only the
// most recent batch keeps its autograd connection, so gradients reach the
// current step's embeddings but never stale ones.
// ---------------------------------------------------------------------------
class PartsMemoryBank {
public:
    PartsMemoryBank() = default;
    PartsMemoryBank(int capacity_batches, int batch_size, int k_parts, int emb_dim)
        : capacity_(capacity_batches), batch_(batch_size), k_(k_parts), c_(emb_dim) {
        check_config(capacity_ >= 1, "memory bank: capacity must be >= 1");
        check_config(batch_ >= 1 && k_ >= 1 && c_ >= 1, "memory bank: bad dimensions");
    }

    int capacity_batches() const { return capacity_; }
    int capacity_entries() const { return capacity_ * batch_; }
    int batch_size() const { return batch_; }
    int k_parts() const { return k_; }
    int emb_dim() const { return c_; }
    int size_batches() const { return (int)stored_.size(); }
    int size() const { return (int)stored_.size() * batch_; }
    bool empty() const { return stored_.empty(); }
    int64_t total_pushes() const { return pushes_; }

    // Push a batch. `parts` holds K vars of shape [B,C] from the live graph;
    // their values are snapshotted immediately, and the vars themselves are
    // kept only until the next push (or reset) so the newest batch stays
    // gradient-connected.
    void push(const std::vector<Var>& parts, const std::vector<std::vector<bool>>& visibility,
              const std::vector<int>& identities) {
        check_config((int)parts.size() == k_, "memory bank: part count mismatch");
        check_config((int)identities.size() == batch_, "memory bank: batch size mismatch");
        check_config((int)visibility.size() == batch_, "memory bank: visibility rows mismatch");
        for (const auto& row : visibility)
            check_config((int)row.size() == k_, "memory bank: visibility cols mismatch");
        for (const auto& p : parts) {
            check_numeric(p.value().ndim() == 2 && p.value().dim(0) == batch_ &&
                              p.value().dim(1) == c_,
                          "memory bank: embedding shape mismatch");
            check_numeric(p.value().all_finite(), "memory bank: non-finite embedding");
        }
        StoredBatch sb;
        sb.embs = Tensor({batch_, k_, c_});
        for (int k = 0; k < k_; ++k) {
            const Tensor& v = parts[(size_t)k].value();
            for (int b = 0; b < batch_; ++b)
                for (int c = 0; c < c_; ++c) sb.embs.at(b, k, c) = v.at(b, c);
        }
        sb.visibility = visibility;
        sb.identities = identities;
        sb.age = pushes_++;
        stored_.push_back(std::move(sb));
        if ((int)stored_.size() > capacity_) stored_.pop_front();
        live_parts_ = parts;
    }

    // Convenience for value-only callers (tests, offline tools).
    void push_values(const Tensor& embs, const std::vector<std::vector<bool>>& visibility,
                     const std::vector<int>& identities) {
        check_config(embs.ndim() == 3 && embs.dim(0) == batch_ && embs.dim(1) == k_ &&
                         embs.dim(2) == c_,
                     "memory bank: embedding shape mismatch");
        std::vector<Var> parts;
        parts.reserve(k_);
        for (int k = 0; k < k_; ++k) {
            Tensor t({batch_, c_});
            for (int b = 0; b < batch_; ++b)
                for (int c = 0; c < c_; ++c) t.at(b, c) = embs.at(b, k, c);
            parts.push_back(Var(std::move(t), false));
        }
        push(parts, visibility, identities);
    }

    // Flat view of the bank contents in insertion order (oldest first). The
    // last `batch_size()` rows correspond to `live_parts`, which carry the
    // autograd connection; everything before them is detached history.
    struct Snapshot {
        Tensor embeddings;                            // [N,K,C], N = batches*B
        std::vector<std::vector<bool>> visibility;    // [N][K]
        std::vector<int> identities;                  // [N]
        std::vector<int64_t> ages;                    // [N], push counter per batch
        std::vector<Var> live_parts;                  // K vars [B,C]; newest batch
        int n_total = 0;
        int n_detached = 0;  // rows before the gradient-connected tail
    };

    Snapshot snapshot() const {
        check_config(!stored_.empty(), "memory bank: snapshot of empty bank");
        Snapshot s;
        s.n_total = size();
        s.n_detached = s.n_total - batch_;
        s.embeddings = Tensor({s.n_total, k_, c_});
        s.visibility.reserve(s.n_total);
        s.identities.reserve(s.n_total);
        s.ages.reserve(s.n_total);
        int row = 0;
        for (const auto& sb : stored_) {
            for (int b = 0; b < batch_; ++b, ++row) {
                for (int k = 0; k < k_; ++k)
                    for (int c = 0; c < c_; ++c)
                        s.embeddings.at(row, k, c) = sb.embs.at(b, k, c);
                s.visibility.push_back(sb.visibility[(size_t)b]);
                s.identities.push_back(sb.identities[(size_t)b]);
                s.ages.push_back(sb.age);
            }
        }
        s.live_parts = live_parts_;
        return s;
    }

    void reset() {
        stored_.clear();
        live_parts_.clear();
    }

private:
    struct StoredBatch {
        Tensor embs;  // [B,K,C]
        std::vector<std::vector<bool>> visibility;
        std::vector<int> identities;
        int64_t age = 0;
    };

    int capacity_ = 1, batch_ = 1, k_ = 1, c_ = 1;
    std::deque<StoredBatch> stored_;
    std::vector<Var> live_parts_;
    int64_t pushes_ = 0;
};

}  // namespace drop
