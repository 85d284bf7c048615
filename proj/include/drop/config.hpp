#pragma once

#include <fstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "drop/backbone.hpp"
#include "drop/losses.hpp"
#include "drop/parsing.hpp"
#include "drop/reid.hpp"
#include "drop/retrieval.hpp"
#include "drop/synthetic.hpp"

namespace drop {

// ---------------------------------------------------------------------------
// One config object for the whole pipeline, serialized as JSON with stable
// key order. CLI overrides address individual fields with dotted paths.
// ---------------------------------------------------------------------------

inline std::string fusion_name(FusionMode m) {
    return m == FusionMode::Cascade ? "cascade" : "direct";
}
inline FusionMode fusion_from_name(const std::string& s) {
    if (s == "cascade") return FusionMode::Cascade;
    if (s == "direct") return FusionMode::Direct;
    throw ConfigError("unknown fusion mode: " + s);
}
inline std::string position_name(PositionMode m) {
    switch (m) {
        case PositionMode::None: return "none";
        case PositionMode::OneDHeight: return "1d_height";
        default: return "2d";
    }
}
inline PositionMode position_from_name(const std::string& s) {
    if (s == "none") return PositionMode::None;
    if (s == "1d_height") return PositionMode::OneDHeight;
    if (s == "2d") return PositionMode::TwoD;
    throw ConfigError("unknown position mode: " + s);
}

struct TrainerConfig {
    int epochs = 30;
    double lr = 3e-3;
    double lr_decay = 0.1;
    std::vector<int> lr_decay_epochs = {10, 20};
    int p_identities = 4;  // identities per batch
    int k_instances = 4;   // images per identity per batch
    int bank_batches = 4;  // part-embedding memory capacity, in batches
    bool bank_reset_each_epoch = true;
    std::string triplet = "banked";  // banked | part_average | part_center
    int eval_every = 5;
    std::string eval_mode = "F+P";  // model-selection retrieval mode
    uint64_t seed = 1;

    int batch_size() const { return p_identities * k_instances; }
    void validate() const {
        check_config(epochs >= 1, "trainer: epochs must be >= 1");
        check_config(lr > 0.0, "trainer: lr must be positive");
        check_config(lr_decay > 0.0 && lr_decay <= 1.0, "trainer: lr_decay must be in (0,1]");
        for (size_t i = 1; i < lr_decay_epochs.size(); ++i)
            check_config(lr_decay_epochs[i] > lr_decay_epochs[i - 1],
                         "trainer: lr_decay_epochs must be strictly increasing");
        check_config(p_identities >= 2, "trainer: need at least 2 identities per batch");
        check_config(k_instances >= 2, "trainer: need at least 2 instances per identity");
        check_config(bank_batches >= 1, "trainer: bank_batches must be >= 1");
        check_config(triplet == "banked" || triplet == "part_average" || triplet == "part_center",
                     "trainer: triplet must be banked, part_average, or part_center");
        check_config(eval_every >= 1, "trainer: eval_every must be >= 1");
        parse_retrieval_mode(eval_mode);  // throws on nonsense
    }
};

struct RunConfig {
    SyntheticConfig data;
    BackboneConfig backbone;
    ParsingBranchConfig parsing;
    ReidBranchConfig reid;
    LossConfig loss;
    TrainerConfig trainer;
    AugmentConfig augment;
    bool decouple = true;  // dedicated parsing branch vs shared-feature head

    RunConfig() {
        // desk-scale defaults: 64x32 inputs, compact channels
        backbone.input_height = 64;
        backbone.input_width = 32;
        backbone.stage_channels = {16, 32, 64, 128};
        backbone.stem_stride = 4;
        parsing.reduced_channels = 16;
    }

    void validate() const {
        data.validate();
        backbone.validate();
        parsing.validate(backbone);
        reid.validate();
        loss.validate();
        trainer.validate();
        check_config(backbone.input_height == data.height && backbone.input_width == data.width,
                     "config: backbone input dims must match data dims");
        check_config(parsing.k_parts == data.k_parts,
                     "config: parsing.k_parts must match data.k_parts");
    }
};

inline nlohmann::ordered_json to_json(const RunConfig& c) {
    nlohmann::ordered_json j;
    j["data"] = {{"n_identities", c.data.n_identities},
                 {"images_per_identity", c.data.images_per_identity},
                 {"height", c.data.height},
                 {"width", c.data.width},
                 {"k_parts", c.data.k_parts},
                 {"occlusion_prob", c.data.occlusion_prob},
                 {"occluder", occluder_name(c.data.occluder)},
                 {"occlude_queries", c.data.occlude_queries},
                 {"train_fraction", c.data.train_fraction},
                 {"query_fraction", c.data.query_fraction},
                 {"color_separation", c.data.color_separation},
                 {"seed", c.data.seed}};
    j["backbone"] = {{"input_height", c.backbone.input_height},
                     {"input_width", c.backbone.input_width},
                     {"stage_channels", c.backbone.stage_channels},
                     {"stem_stride", c.backbone.stem_stride},
                     {"blocks_per_stage", c.backbone.blocks_per_stage}};
    j["parsing"] = {{"k_parts", c.parsing.k_parts},
                    {"reduced_channels", c.parsing.reduced_channels},
                    {"fusion", fusion_name(c.parsing.fusion)},
                    {"position", position_name(c.parsing.position)},
                    {"visibility_threshold", c.parsing.visibility_threshold}};
    j["reid"] = {{"embedding_dim", c.reid.embedding_dim},
                 {"share_part_projection", c.reid.share_part_projection}};
    j["loss"] = {{"lambda_parsing", c.loss.lambda_parsing},
                 {"gamma_smooth", c.loss.gamma_smooth},
                 {"epsilon_ls", c.loss.epsilon_ls},
                 {"margin", c.loss.margin},
                 {"sum_heads", c.loss.sum_heads}};
    j["trainer"] = {{"epochs", c.trainer.epochs},
                    {"lr", c.trainer.lr},
                    {"lr_decay", c.trainer.lr_decay},
                    {"lr_decay_epochs", c.trainer.lr_decay_epochs},
                    {"p_identities", c.trainer.p_identities},
                    {"k_instances", c.trainer.k_instances},
                    {"bank_batches", c.trainer.bank_batches},
                    {"bank_reset_each_epoch", c.trainer.bank_reset_each_epoch},
                    {"triplet", c.trainer.triplet},
                    {"eval_every", c.trainer.eval_every},
                    {"eval_mode", c.trainer.eval_mode},
                    {"seed", c.trainer.seed}};
    j["augment"] = {{"flip_prob", c.augment.flip_prob},
                    {"pad", c.augment.pad},
                    {"erase_prob", c.augment.erase_prob}};
    j["decouple"] = c.decouple;
    return j;
}

inline RunConfig config_from_json(const nlohmann::json& j) {
    RunConfig c;
    try {
        if (j.contains("data")) {
            const auto& d = j.at("data");
            c.data.n_identities = d.value("n_identities", c.data.n_identities);
            c.data.images_per_identity =
                d.value("images_per_identity", c.data.images_per_identity);
            c.data.height = d.value("height", c.data.height);
            c.data.width = d.value("width", c.data.width);
            c.data.k_parts = d.value("k_parts", c.data.k_parts);
            c.data.occlusion_prob = d.value("occlusion_prob", c.data.occlusion_prob);
            if (d.contains("occluder"))
                c.data.occluder = occluder_from_name(d.at("occluder").get<std::string>());
            c.data.occlude_queries = d.value("occlude_queries", c.data.occlude_queries);
            c.data.train_fraction = d.value("train_fraction", c.data.train_fraction);
            c.data.query_fraction = d.value("query_fraction", c.data.query_fraction);
            c.data.color_separation = d.value("color_separation", c.data.color_separation);
            c.data.seed = d.value("seed", c.data.seed);
        }
        if (j.contains("backbone")) {
            const auto& b = j.at("backbone");
            c.backbone.input_height = b.value("input_height", c.backbone.input_height);
            c.backbone.input_width = b.value("input_width", c.backbone.input_width);
            if (b.contains("stage_channels"))
                c.backbone.stage_channels = b.at("stage_channels").get<std::vector<int>>();
            c.backbone.stem_stride = b.value("stem_stride", c.backbone.stem_stride);
            c.backbone.blocks_per_stage = b.value("blocks_per_stage", c.backbone.blocks_per_stage);
        }
        if (j.contains("parsing")) {
            const auto& p = j.at("parsing");
            c.parsing.k_parts = p.value("k_parts", c.parsing.k_parts);
            c.parsing.reduced_channels = p.value("reduced_channels", c.parsing.reduced_channels);
            if (p.contains("fusion"))
                c.parsing.fusion = fusion_from_name(p.at("fusion").get<std::string>());
            if (p.contains("position"))
                c.parsing.position = position_from_name(p.at("position").get<std::string>());
            c.parsing.visibility_threshold =
                p.value("visibility_threshold", c.parsing.visibility_threshold);
        }
        if (j.contains("reid")) {
            const auto& r = j.at("reid");
            c.reid.embedding_dim = r.value("embedding_dim", c.reid.embedding_dim);
            c.reid.share_part_projection =
                r.value("share_part_projection", c.reid.share_part_projection);
        }
        if (j.contains("loss")) {
            const auto& l = j.at("loss");
            c.loss.lambda_parsing = l.value("lambda_parsing", c.loss.lambda_parsing);
            c.loss.gamma_smooth = l.value("gamma_smooth", c.loss.gamma_smooth);
            c.loss.epsilon_ls = l.value("epsilon_ls", c.loss.epsilon_ls);
            c.loss.margin = l.value("margin", c.loss.margin);
            c.loss.sum_heads = l.value("sum_heads", c.loss.sum_heads);
        }
        if (j.contains("trainer")) {
            const auto& t = j.at("trainer");
            c.trainer.epochs = t.value("epochs", c.trainer.epochs);
            c.trainer.lr = t.value("lr", c.trainer.lr);
            c.trainer.lr_decay = t.value("lr_decay", c.trainer.lr_decay);
            if (t.contains("lr_decay_epochs"))
                c.trainer.lr_decay_epochs = t.at("lr_decay_epochs").get<std::vector<int>>();
            c.trainer.p_identities = t.value("p_identities", c.trainer.p_identities);
            c.trainer.k_instances = t.value("k_instances", c.trainer.k_instances);
            c.trainer.bank_batches = t.value("bank_batches", c.trainer.bank_batches);
            c.trainer.bank_reset_each_epoch =
                t.value("bank_reset_each_epoch", c.trainer.bank_reset_each_epoch);
            c.trainer.triplet = t.value("triplet", c.trainer.triplet);
            c.trainer.eval_every = t.value("eval_every", c.trainer.eval_every);
            c.trainer.eval_mode = t.value("eval_mode", c.trainer.eval_mode);
            c.trainer.seed = t.value("seed", c.trainer.seed);
        }
        if (j.contains("augment")) {
            const auto& a = j.at("augment");
            c.augment.flip_prob = a.value("flip_prob", c.augment.flip_prob);
            c.augment.pad = a.value("pad", c.augment.pad);
            c.augment.erase_prob = a.value("erase_prob", c.augment.erase_prob);
        }
        c.decouple = j.value("decouple", c.decouple);
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError(std::string("config: malformed field: ") + e.what());
    }
    return c;
}

inline RunConfig load_config(const std::string& path) {
    std::ifstream in(path);
    check_io(in.good(), "config: cannot open " + path);
    nlohmann::json j;
    try {
        in >> j;
    } catch (const nlohmann::json::parse_error& e) {
        throw ConfigError("config: parse error in " + path + ": " + e.what());
    }
    return config_from_json(j);
}

inline void save_config(const RunConfig& c, const std::string& path) {
    std::ofstream out(path);
    check_io(out.good(), "config: cannot write " + path);
    out << to_json(c).dump(2) << "\n";
    check_io(out.good(), "config: write failed " + path);
}

// Apply one `path.to.field=value` override; the value is parsed as JSON when
// possible and treated as a bare string otherwise.
inline void apply_override(nlohmann::ordered_json& j, const std::string& assignment) {
    const size_t eq = assignment.find('=');
    check_config(eq != std::string::npos && eq > 0,
                 "override must look like path.to.field=value: " + assignment);
    const std::string path = assignment.substr(0, eq);
    const std::string value = assignment.substr(eq + 1);

    std::vector<std::string> keys;
    std::string cur;
    for (char ch : path) {
        if (ch == '.') {
            check_config(!cur.empty(), "override has an empty path segment: " + assignment);
            keys.push_back(cur);
            cur.clear();
        } else {
            cur.push_back(ch);
        }
    }
    check_config(!cur.empty(), "override has an empty path segment: " + assignment);
    keys.push_back(cur);

    nlohmann::ordered_json* node = &j;
    for (size_t i = 0; i + 1 < keys.size(); ++i) node = &((*node)[keys[i]]);
    nlohmann::ordered_json parsed = nlohmann::ordered_json::parse(value, nullptr, false);
    if (parsed.is_discarded())
        (*node)[keys.back()] = value;  // bare string like cascade or F+P
    else
        (*node)[keys.back()] = parsed;
}

inline RunConfig config_with_overrides(const RunConfig& base,
                                       const std::vector<std::string>& overrides) {
    nlohmann::ordered_json j = to_json(base);
    for (const auto& o : overrides) apply_override(j, o);
    return config_from_json(j);
}

}  // namespace drop
