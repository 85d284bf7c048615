#pragma once

#include <chrono>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <memory>
#include <string>
#include <vector>

#include "drop/checkpoint.hpp"
#include "drop/image_io.hpp"
#include "drop/memory_bank.hpp"
#include "drop/model.hpp"

namespace drop {

// --- optimizer ---------------------------------------------------------------

struct AdamConfig {
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
};

inline AdamState make_adam_state(const ParamRegistry& reg) {
    AdamState s;
    s.m.reserve(reg.params.size());
    s.v.reserve(reg.params.size());
    for (const auto& p : reg.params) {
        s.m.emplace_back(p.var.value().shape());
        s.v.emplace_back(p.var.value().shape());
    }
    return s;
}

// One Adam update with bias correction. Parameters whose grad was never
// touched this step are treated as having zero gradient.
inline void adam_step(ParamRegistry& reg, AdamState& s, double lr,
                      const AdamConfig& ac = AdamConfig{}) {
    check_config(s.m.size() == reg.params.size(), "adam: state/registry size mismatch");
    ++s.t;
    const double bc1 = 1.0 - std::pow(ac.beta1, (double)s.t);
    const double bc2 = 1.0 - std::pow(ac.beta2, (double)s.t);
    for (size_t i = 0; i < reg.params.size(); ++i) {
        Tensor& p = reg.params[i].var.value();
        const Tensor* g = reg.params[i].var.has_grad() ? &reg.params[i].var.grad() : nullptr;
        Tensor& m = s.m[i];
        Tensor& v = s.v[i];
        for (int64_t j = 0; j < p.numel(); ++j) {
            const double gj = g ? (*g)[j] : 0.0;
            check_numeric(std::isfinite(gj), "adam: non-finite gradient at " + reg.params[i].name);
            m[j] = ac.beta1 * m[j] + (1.0 - ac.beta1) * gj;
            v[j] = ac.beta2 * v[j] + (1.0 - ac.beta2) * gj * gj;
            p[j] -= lr * (m[j] / bc1) / (std::sqrt(v[j] / bc2) + ac.eps);
        }
    }
}

// Stepwise decay: the base rate is multiplied by `decay` once per boundary
// already reached. `epoch` is 0-based, boundaries count completed epochs.
inline double lr_at_epoch(const TrainerConfig& tc, int epoch) {
    double lr = tc.lr;
    for (int d : tc.lr_decay_epochs)
        if (epoch >= d) lr *= tc.lr_decay;
    return lr;
}

// --- batch sampling ------------------------------------------------------------

inline void shuffle_ints(std::vector<int>& v, Rng& g) {
    for (int i = (int)v.size() - 1; i > 0; --i) std::swap(v[(size_t)i], v[(size_t)uniform_int(g, 0, i)]);
}

// Identity-balanced batches: P distinct identities x I instances each.
// Identities cycle through a shuffled order so an epoch covers all of them;
// instances are drawn without replacement when an identity has enough
// training images, with replacement otherwise.
class PKSampler {
public:
    PKSampler() = default;
    PKSampler(const Dataset& ds, int p_identities, int k_instances)
        : p_(p_identities), i_(k_instances) {
        for (int idx : ds.train_indices) {
            const int id = ds.samples[(size_t)idx].identity;
            if ((int)pools_.size() <= id) pools_.resize((size_t)id + 1);
            pools_[(size_t)id].push_back(idx);
        }
        for (size_t id = 0; id < pools_.size(); ++id)
            if (!pools_[id].empty()) ids_.push_back((int)id);
        check_config((int)ids_.size() >= p_,
                     "sampler: fewer train identities than p_identities");
        n_train_ = (int)ds.train_indices.size();
    }

    int steps_per_epoch() const { return std::max(1, n_train_ / (p_ * i_)); }

    std::vector<int> next_batch(Rng& g) {
        std::vector<int> batch;
        batch.reserve((size_t)(p_ * i_));
        std::vector<int> chosen;
        while ((int)chosen.size() < p_) {
            if (cursor_ >= order_.size()) {
                order_ = ids_;
                shuffle_ints(order_, g);
                cursor_ = 0;
            }
            const int id = order_[cursor_++];
            if (std::find(chosen.begin(), chosen.end(), id) != chosen.end()) continue;
            chosen.push_back(id);
            const auto& pool = pools_[(size_t)id];
            if ((int)pool.size() >= i_) {
                std::vector<int> copy = pool;
                for (int j = 0; j < i_; ++j) {
                    std::swap(copy[(size_t)j],
                              copy[(size_t)uniform_int(g, j, (int)copy.size() - 1)]);
                    batch.push_back(copy[(size_t)j]);
                }
            } else {
                for (int j = 0; j < i_; ++j)
                    batch.push_back(pool[(size_t)uniform_int(g, 0, (int)pool.size() - 1)]);
            }
        }
        return batch;
    }

private:
    int p_ = 0, i_ = 0, n_train_ = 0;
    std::vector<std::vector<int>> pools_;  // train indices per identity
    std::vector<int> ids_;
    std::vector<int> order_;
    size_t cursor_ = 0;
};

// --- training loop -------------------------------------------------------------

struct StepStats {
    double total = 0.0, id = 0.0, triplet = 0.0, parsing = 0.0;
    TripletDiagnostics diag;
    bool triplet_skipped = false;  // banked triplet with no memory yet
};

struct EpochStats {
    int steps = 0;
    double total = 0.0, id = 0.0, triplet = 0.0, parsing = 0.0;  // means
    int triplet_counted = 0, triplet_degenerate = 0, triplet_active = 0;
    int triplet_skipped_steps = 0;
    double lr = 0.0;
    double seconds = 0.0;
};

struct ModeMetrics {
    std::string mode;
    double rank1 = 0.0, rank5 = 0.0, mean_ap = 0.0;
    int evaluated = 0, skipped = 0;
};

struct EvalSummary {
    std::vector<ModeMetrics> modes;
    double parsing_accuracy = 0.0;

    const ModeMetrics& mode(const std::string& name) const {
        for (const auto& m : modes)
            if (m.mode == name) return m;
        throw ConfigError("eval summary: mode not evaluated: " + name);
    }
};

struct TrainOutcome {
    double best_metric = -1.0;
    int best_epoch = -1;
    EvalSummary final_eval;
};

class Trainer {
public:
    Trainer(const RunConfig& cfg, Dataset ds, std::string out_dir = "")
        : cfg_(cfg), data_(std::move(ds)), out_dir_(std::move(out_dir)) {
        cfg_.validate();
        check_config(!data_.train_indices.empty(), "trainer: dataset has no train split");
        Rng init_rng(split_seed(cfg_.trainer.seed, 0xA11CE));
        model_ = std::make_unique<DropModel>(cfg_, cfg_.data.n_identities, init_rng);
        adam_ = make_adam_state(model_->registry);
        bank_ = PartsMemoryBank(cfg_.trainer.bank_batches, cfg_.trainer.batch_size(),
                                cfg_.parsing.k_parts, cfg_.reid.embedding_dim);
        sampler_ = PKSampler(data_, cfg_.trainer.p_identities, cfg_.trainer.k_instances);
        sample_rng_.seed(split_seed(cfg_.trainer.seed, 0x5A313));
        if (!out_dir_.empty()) std::filesystem::create_directories(out_dir_);
    }

    DropModel& model() { return *model_; }
    const RunConfig& config() const { return cfg_; }
    const Dataset& dataset() const { return data_; }
    int completed_epochs() const { return completed_epochs_; }
    PartsMemoryBank& bank() { return bank_; }
    AdamState& adam() { return adam_; }
    std::string rng_state() const { return rng_to_string(sample_rng_); }

    double current_lr() const { return lr_at_epoch(cfg_.trainer, completed_epochs_); }

    // One optimization step over explicit dataset indices (exposed for tests).
    StepStats train_step(const std::vector<int>& indices) {
        check_config((int)indices.size() == cfg_.trainer.batch_size(),
                     "trainer: batch size mismatch");
        std::vector<Sample> batch;
        batch.reserve(indices.size());
        for (int idx : indices)
            batch.push_back(augment_sample(data_.samples[(size_t)idx], cfg_.augment,
                                           cfg_.parsing.k_parts, sample_rng_));
        Var images(stack_images(batch), false);
        const std::vector<int> labels = stack_labels(batch);
        const Tensor masks = stack_masks(batch, model_->mask_factor());

        auto f = model_->forward(images, true);

        StepStats st;
        Var l_id = identity_ce_loss(f.heads.logits, labels, cfg_.loss.epsilon_ls,
                                    cfg_.loss.sum_heads);
        Var l_trip = triplet_term(f, labels, st);
        Var l_parse =
            parsing_loss_op(f.parsing.probs, masks, cfg_.loss.epsilon_ls, cfg_.loss.gamma_smooth);
        Var total = total_objective(l_id, l_trip, l_parse, cfg_.loss.lambda_parsing);

        model_->registry.zero_grads();
        backward(total);
        adam_step(model_->registry, adam_, current_lr());

        st.total = total.value()[0];
        st.id = l_id.value()[0];
        st.triplet = l_trip.value()[0];
        st.parsing = l_parse.value()[0];
        return st;
    }

    EpochStats run_epoch() {
        const auto t0 = std::chrono::steady_clock::now();
        if (cfg_.trainer.bank_reset_each_epoch) bank_.reset();
        EpochStats es;
        es.lr = current_lr();
        const int steps = sampler_.steps_per_epoch();
        for (int s = 0; s < steps; ++s) {
            StepStats st = train_step(sampler_.next_batch(sample_rng_));
            es.total += st.total;
            es.id += st.id;
            es.triplet += st.triplet;
            es.parsing += st.parsing;
            es.triplet_counted += st.diag.counted;
            es.triplet_degenerate += st.diag.degenerate;
            es.triplet_active += st.diag.active;
            if (st.triplet_skipped) ++es.triplet_skipped_steps;
        }
        es.steps = steps;
        es.total /= steps;
        es.id /= steps;
        es.triplet /= steps;
        es.parsing /= steps;
        ++completed_epochs_;
        es.seconds =
            std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
        return es;
    }

    EvalSummary evaluate(const std::vector<std::string>& mode_names) {
        check_config(!data_.query_indices.empty() && !data_.gallery_indices.empty(),
                     "trainer: dataset has no query/gallery splits");
        const int B = cfg_.trainer.batch_size();
        auto queries = extract_records(*model_, data_.samples, data_.query_indices, B);
        auto gallery = extract_records(*model_, data_.samples, data_.gallery_indices, B);
        EvalSummary out;
        for (const auto& name : mode_names) {
            EvalResult r = evaluate_retrieval(queries, gallery, parse_retrieval_mode(name));
            ModeMetrics m;
            m.mode = name;
            m.rank1 = r.cmc.empty() ? 0.0 : r.cmc[0];
            m.rank5 = r.cmc.size() > 4 ? r.cmc[4] : r.cmc.back();
            m.mean_ap = r.mean_ap;
            m.evaluated = r.evaluated_queries;
            m.skipped = r.skipped_queries;
            out.modes.push_back(std::move(m));
        }
        std::vector<int> eval_indices = data_.query_indices;
        eval_indices.insert(eval_indices.end(), data_.gallery_indices.begin(),
                            data_.gallery_indices.end());
        out.parsing_accuracy =
            dataset_parsing_accuracy(*model_, data_.samples, eval_indices, B);
        return out;
    }

    void save(const std::string& path) const {
        save_checkpoint(path, to_json(cfg_).dump(), completed_epochs_,
                        rng_to_string(sample_rng_), model_->registry, &adam_);
    }

    // Resume from a checkpoint written by an identically configured trainer.
    // Only the total epoch budget may differ, so a finished run can be
    // extended; everything else must match for the replay to be exact.
    void restore(const std::string& path) {
        Checkpoint c = load_checkpoint(path);
        auto normalized = [](const std::string& js) {
            nlohmann::json j = nlohmann::json::parse(js);
            if (j.contains("trainer")) j["trainer"].erase("epochs");
            return j.dump();
        };
        check_config(normalized(c.config_json) == normalized(to_json(cfg_).dump()),
                     "trainer: checkpoint config does not match this run");
        restore_registry(c, model_->registry);
        restore_adam(c, adam_);
        completed_epochs_ = c.epoch;
        sample_rng_ = rng_from_string(c.rng_state);
        bank_.reset();
    }

    // Full training run: per-epoch JSONL metrics, periodic evaluation, best/last
    // checkpoints, and loss/accuracy charts when an output directory is set.
    TrainOutcome run() {
        TrainOutcome out;
        std::vector<double> ep_x, loss_y, eval_x, map_y, acc_y;
        while (completed_epochs_ < cfg_.trainer.epochs) {
            EpochStats es = run_epoch();
            const int e = completed_epochs_;
            ep_x.push_back(e);
            loss_y.push_back(es.total);
            nlohmann::ordered_json line = {
                {"epoch", e},
                {"lr", es.lr},
                {"steps", es.steps},
                {"loss", es.total},
                {"loss_id", es.id},
                {"loss_triplet", es.triplet},
                {"loss_parsing", es.parsing},
                {"triplet_counted", es.triplet_counted},
                {"triplet_degenerate", es.triplet_degenerate},
                {"triplet_active", es.triplet_active},
                {"triplet_skipped_steps", es.triplet_skipped_steps},
                {"seconds", es.seconds}};
            const bool last = e == cfg_.trainer.epochs;
            if (e % cfg_.trainer.eval_every == 0 || last) {
                EvalSummary ev = evaluate({cfg_.trainer.eval_mode});
                const ModeMetrics& m = ev.mode(cfg_.trainer.eval_mode);
                line["eval"] = {{"mode", m.mode},
                                {"rank1", m.rank1},
                                {"rank5", m.rank5},
                                {"mAP", m.mean_ap},
                                {"parsing_accuracy", ev.parsing_accuracy}};
                eval_x.push_back(e);
                map_y.push_back(m.mean_ap);
                acc_y.push_back(ev.parsing_accuracy);
                if (m.mean_ap > out.best_metric) {
                    out.best_metric = m.mean_ap;
                    out.best_epoch = e;
                    if (!out_dir_.empty()) save(out_dir_ + "/best.ckpt");
                }
                if (last) out.final_eval = ev;
            }
            if (!out_dir_.empty()) {
                append_metrics(line);
                save(out_dir_ + "/last.ckpt");
            }
        }
        if (!out_dir_.empty()) {
            write_line_chart(out_dir_ + "/loss_curve.svg", "training loss", "epoch", "loss",
                             {{"total", ep_x, loss_y}});
            if (!eval_x.empty())
                write_line_chart(out_dir_ + "/eval_curve.svg",
                                 "retrieval mAP (" + cfg_.trainer.eval_mode +
                                     ") and parsing accuracy",
                                 "epoch", "metric",
                                 {{"mAP", eval_x, map_y}, {"parsing_acc", eval_x, acc_y}});
        }
        return out;
    }

private:
    Var triplet_term(const DropModel::Forward& f, const std::vector<int>& labels,
                     StepStats& st) {
        const std::string& kind = cfg_.trainer.triplet;
        if (kind == "part_average")
            return part_average_triplet_op(f.embeddings.parts, f.parsing.visibility, labels,
                                           cfg_.loss.margin, &st.diag);
        if (kind == "part_center")
            return part_center_triplet_op(f.embeddings.parts, f.parsing.visibility, labels,
                                          cfg_.loss.margin, &st.diag);
        // banked: widen the candidate pool with remembered batches. The very
        // first push after a reset has no memory to compare against yet.
        const bool had_memory = !bank_.empty();
        bank_.push(f.embeddings.parts, f.parsing.visibility, labels);
        if (!had_memory) {
            st.triplet_skipped = true;
            return Var(Tensor({1}), false);
        }
        return banked_triplet_op(bank_.snapshot(), cfg_.loss.margin, &st.diag);
    }

    void append_metrics(const nlohmann::ordered_json& line) {
        std::ofstream out(out_dir_ + "/metrics.jsonl", std::ios::app);
        check_io(out.good(), "trainer: cannot append metrics log");
        out << line.dump() << "\n";
    }

    RunConfig cfg_;
    Dataset data_;
    std::string out_dir_;
    std::unique_ptr<DropModel> model_;
    AdamState adam_;
    PartsMemoryBank bank_;
    PKSampler sampler_;
    Rng sample_rng_;
    int completed_epochs_ = 0;
};

}  // namespace drop
