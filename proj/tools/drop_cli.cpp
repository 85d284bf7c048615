// Command-line driver: synthetic data generation, training, retrieval
// evaluation, embedding export, and the three-row ablation sweep.

#include <CLI11.hpp>
#include <filesystem>
#include <iostream>
#include <memory>

#include "drop/drop.hpp"

namespace fs = std::filesystem;
using nlohmann::ordered_json;

namespace {

drop::RunConfig assemble_config(const std::string& config_path,
                                const std::vector<std::string>& overrides) {
    drop::RunConfig base;
    if (!config_path.empty()) base = drop::load_config(config_path);
    return drop::config_with_overrides(base, overrides);
}

// Make the run config agree with a dataset loaded from disk.
void adopt_dataset_config(drop::RunConfig& rc, const drop::Dataset& ds) {
    rc.data = ds.cfg;
    rc.backbone.input_height = ds.cfg.height;
    rc.backbone.input_width = ds.cfg.width;
    rc.parsing.k_parts = ds.cfg.k_parts;
}

int cmd_gen_data(const std::string& config_path, const std::vector<std::string>& overrides,
                 const std::string& out_dir) {
    drop::RunConfig rc = assemble_config(config_path, overrides);
    rc.data.validate();
    drop::Dataset ds = drop::generate_dataset(rc.data);
    drop::write_dataset(ds, out_dir);
    std::cout << "wrote " << ds.samples.size() << " samples (" << ds.train_indices.size()
              << " train, " << ds.query_indices.size() << " query, "
              << ds.gallery_indices.size() << " gallery) to " << out_dir << "\n";
    return 0;
}

int cmd_train(const std::string& config_path, const std::vector<std::string>& overrides,
              const std::string& data_dir, const std::string& out_dir,
              const std::string& resume_path) {
    drop::RunConfig rc = assemble_config(config_path, overrides);
    drop::Dataset ds = drop::load_dataset(data_dir);
    adopt_dataset_config(rc, ds);
    rc.validate();
    drop::Trainer trainer(rc, std::move(ds), out_dir);
    if (!resume_path.empty()) {
        trainer.restore(resume_path);
        std::cout << "resumed at epoch " << trainer.completed_epochs() << "\n";
    }
    drop::save_config(rc, out_dir + "/config.json");
    drop::TrainOutcome out = trainer.run();
    std::cout << "done: best " << rc.trainer.eval_mode << " mAP " << out.best_metric
              << " at epoch " << out.best_epoch << "\n";
    for (const auto& m : out.final_eval.modes)
        std::cout << "final " << m.mode << ": rank1 " << m.rank1 << " rank5 " << m.rank5
                  << " mAP " << m.mean_ap << "\n";
    std::cout << "final parsing accuracy " << out.final_eval.parsing_accuracy << "\n";
    return 0;
}

// Rebuild a model from the config stored in a checkpoint and load its weights.
std::unique_ptr<drop::DropModel> model_from_checkpoint(const drop::Checkpoint& ckpt,
                                                       drop::RunConfig& rc_out) {
    rc_out = drop::config_from_json(nlohmann::json::parse(ckpt.config_json));
    rc_out.validate();
    drop::Rng g(drop::split_seed(rc_out.trainer.seed, 0xA11CE));
    auto model = std::make_unique<drop::DropModel>(rc_out, rc_out.data.n_identities, g);
    drop::restore_registry(ckpt, model->registry);
    return model;
}

int cmd_eval(const std::string& data_dir, const std::string& ckpt_path,
             const std::string& out_dir, std::string modes_csv, int n_strips) {
    drop::Checkpoint ckpt = drop::load_checkpoint(ckpt_path);
    drop::RunConfig rc;
    auto model = model_from_checkpoint(ckpt, rc);
    drop::Dataset ds = drop::load_dataset(data_dir);
    drop::check_config(ds.cfg.height == rc.data.height && ds.cfg.width == rc.data.width &&
                           ds.cfg.k_parts == rc.data.k_parts,
                       "eval: dataset geometry does not match the checkpoint");

    std::vector<std::string> modes;
    for (size_t pos = 0; pos < modes_csv.size();) {
        size_t comma = modes_csv.find(',', pos);
        if (comma == std::string::npos) comma = modes_csv.size();
        if (comma > pos) modes.push_back(modes_csv.substr(pos, comma - pos));
        pos = comma + 1;
    }
    drop::check_config(!modes.empty(), "eval: no retrieval modes given");

    const int B = rc.trainer.batch_size();
    auto queries = drop::extract_records(*model, ds.samples, ds.query_indices, B);
    auto gallery = drop::extract_records(*model, ds.samples, ds.gallery_indices, B);

    fs::create_directories(out_dir);
    ordered_json report;
    report["checkpoint"] = ckpt_path;
    report["dataset"] = data_dir;
    report["epoch"] = ckpt.epoch;
    report["modes"] = ordered_json::array();
    std::vector<drop::ChartSeries> cmc_series;
    drop::EvalResult first_result;
    for (size_t i = 0; i < modes.size(); ++i) {
        drop::EvalResult r =
            drop::evaluate_retrieval(queries, gallery, drop::parse_retrieval_mode(modes[i]));
        if (i == 0) first_result = r;
        ordered_json m = {{"mode", modes[i]},
                          {"rank1", r.cmc.empty() ? 0.0 : r.cmc[0]},
                          {"rank5", r.cmc.size() > 4 ? r.cmc[4] : r.cmc.back()},
                          {"mAP", r.mean_ap},
                          {"evaluated_queries", r.evaluated_queries},
                          {"skipped_queries", r.skipped_queries},
                          {"cmc", r.cmc}};
        report["modes"].push_back(m);
        drop::ChartSeries s;
        s.name = modes[i];
        for (size_t rk = 0; rk < r.cmc.size(); ++rk) {
            s.x.push_back((double)(rk + 1));
            s.y.push_back(r.cmc[rk]);
        }
        cmc_series.push_back(std::move(s));
        std::cout << modes[i] << ": rank1 " << (r.cmc.empty() ? 0.0 : r.cmc[0]) << " mAP "
                  << r.mean_ap << " (" << r.evaluated_queries << " queries)\n";
    }
    std::vector<int> all_eval = ds.query_indices;
    all_eval.insert(all_eval.end(), ds.gallery_indices.begin(), ds.gallery_indices.end());
    report["parsing_accuracy"] =
        drop::dataset_parsing_accuracy(*model, ds.samples, all_eval, B);
    std::cout << "parsing accuracy " << report["parsing_accuracy"] << "\n";

    std::ofstream rep(out_dir + "/eval.json");
    drop::check_io(rep.good(), "eval: cannot write report");
    rep << report.dump(2) << "\n";
    drop::write_line_chart(out_dir + "/cmc.svg", "CMC", "rank", "match rate", cmc_series);

    // Visual sanity strips: query plus its top-10 ranked gallery images for
    // the first requested mode, green border = same identity.
    const int strips = std::min<int>(n_strips, (int)first_result.rankings.size());
    for (int qi = 0; qi < strips; ++qi) {
        const auto& q = queries[(size_t)qi];
        const auto& ranking = first_result.rankings[(size_t)qi];
        std::vector<drop::Tensor> ranked;
        std::vector<bool> correct;
        for (int r = 0; r < std::min<int>(10, (int)ranking.size()); ++r) {
            const int gi = ranking[(size_t)r];
            ranked.push_back(ds.samples[(size_t)ds.gallery_indices[(size_t)gi]].image);
            correct.push_back(gallery[(size_t)gi].identity == q.identity);
        }
        drop::Tensor strip = drop::compose_ranking_strip(
            ds.samples[(size_t)ds.query_indices[(size_t)qi]].image, ranked, correct);
        char name[64];
        std::snprintf(name, sizeof(name), "/ranking_%03d.ppm", qi);
        drop::write_ppm(out_dir + name, strip);
    }
    return 0;
}

int cmd_export(const std::string& data_dir, const std::string& ckpt_path,
               const std::string& out_file, const std::string& split, bool append) {
    drop::Checkpoint ckpt = drop::load_checkpoint(ckpt_path);
    drop::RunConfig rc;
    auto model = model_from_checkpoint(ckpt, rc);
    drop::Dataset ds = drop::load_dataset(data_dir);
    std::vector<int> indices;
    if (split == "all") {
        indices.resize(ds.samples.size());
        for (size_t i = 0; i < indices.size(); ++i) indices[i] = (int)i;
    } else {
        indices = ds.split_indices(split);
    }
    drop::check_config(!indices.empty(), "export: split is empty: " + split);
    auto recs = drop::extract_records(*model, ds.samples, indices, rc.trainer.batch_size());
    drop::write_embeddings(out_file, recs, append);
    std::cout << "wrote " << recs.size() << " embeddings (" << split << ") to " << out_file
              << "\n";
    return 0;
}

int cmd_ablate(const std::string& config_path, const std::vector<std::string>& overrides,
               const std::string& data_dir, const std::string& out_dir) {
    drop::RunConfig base = assemble_config(config_path, overrides);
    drop::Dataset ds = drop::load_dataset(data_dir);
    adopt_dataset_config(base, ds);
    base.validate();

    struct Row {
        std::string name;
        bool decouple;
        std::string triplet;
    };
    const std::vector<Row> rows = {{"full", true, "banked"},
                                   {"decoupled_no_memory", true, "part_average"},
                                   {"shared_head", false, "part_average"}};
    fs::create_directories(out_dir);
    ordered_json report = ordered_json::array();
    for (const auto& row : rows) {
        drop::RunConfig rc = base;
        rc.decouple = row.decouple;
        rc.trainer.triplet = row.triplet;
        rc.validate();
        const std::string row_dir = out_dir + "/" + row.name;
        std::cout << "== " << row.name << " (decouple=" << (rc.decouple ? "on" : "off")
                  << ", triplet=" << rc.trainer.triplet << ") ==\n";
        drop::Trainer trainer(rc, ds, row_dir);
        drop::save_config(rc, row_dir + "/config.json");
        drop::TrainOutcome out = trainer.run();
        const drop::ModeMetrics& m = out.final_eval.mode(rc.trainer.eval_mode);
        ordered_json jr = {{"name", row.name},
                           {"decouple", rc.decouple},
                           {"triplet", rc.trainer.triplet},
                           {"mode", m.mode},
                           {"rank1", m.rank1},
                           {"rank5", m.rank5},
                           {"mAP", m.mean_ap},
                           {"parsing_accuracy", out.final_eval.parsing_accuracy},
                           {"best_mAP", out.best_metric},
                           {"best_epoch", out.best_epoch}};
        report.push_back(jr);
        std::cout << row.name << ": rank1 " << m.rank1 << " mAP " << m.mean_ap
                  << " parsing_acc " << out.final_eval.parsing_accuracy << "\n";
    }
    std::ofstream rep(out_dir + "/ablation.json");
    drop::check_io(rep.good(), "ablate: cannot write report");
    rep << report.dump(2) << "\n";
    std::cout << "wrote " << out_dir << "/ablation.json\n";
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"occluded person re-identification on synthetic pedestrians"};
    app.require_subcommand(1);

    std::string config_path, data_dir, out_dir, out_file, ckpt_path, resume_path;
    std::string modes_csv = "G,F+P,G+F+P", split = "query";
    std::vector<std::string> overrides;
    int n_strips = 4;
    bool append = false;

    auto add_config_opts = [&](CLI::App* cmd) {
        cmd->add_option("--config", config_path, "JSON config file (defaults when omitted)");
        cmd->add_option("--set", overrides,
                        "config override, e.g. --set trainer.lr=0.001 (repeatable)");
    };

    auto* gen = app.add_subcommand("gen-data", "generate a synthetic dataset");
    add_config_opts(gen);
    gen->add_option("--out", out_dir, "output dataset directory")->required();

    auto* train = app.add_subcommand("train", "train a model");
    add_config_opts(train);
    train->add_option("--data", data_dir, "dataset directory")->required();
    train->add_option("--out", out_dir, "run output directory")->required();
    train->add_option("--resume", resume_path, "checkpoint to resume from");

    auto* eval = app.add_subcommand("eval", "evaluate retrieval from a checkpoint");
    eval->add_option("--data", data_dir, "dataset directory")->required();
    eval->add_option("--checkpoint", ckpt_path, "model checkpoint")->required();
    eval->add_option("--out", out_dir, "evaluation output directory")->required();
    eval->add_option("--modes", modes_csv, "comma-separated retrieval modes");
    eval->add_option("--strips", n_strips, "number of ranking strips to render");

    auto* exp = app.add_subcommand("export", "export embeddings to a binary file");
    exp->add_option("--data", data_dir, "dataset directory")->required();
    exp->add_option("--checkpoint", ckpt_path, "model checkpoint")->required();
    exp->add_option("--out", out_file, "output embedding file")->required();
    exp->add_option("--split", split, "train | query | gallery | all");
    exp->add_flag("--append", append, "append a section instead of truncating");

    auto* abl = app.add_subcommand("ablate", "train the three-row ablation sweep");
    add_config_opts(abl);
    abl->add_option("--data", data_dir, "dataset directory")->required();
    abl->add_option("--out", out_dir, "sweep output directory")->required();

    CLI11_PARSE(app, argc, argv);

    try {
        if (gen->parsed()) return cmd_gen_data(config_path, overrides, out_dir);
        if (train->parsed()) return cmd_train(config_path, overrides, data_dir, out_dir, resume_path);
        if (eval->parsed()) return cmd_eval(data_dir, ckpt_path, out_dir, modes_csv, n_strips);
        if (exp->parsed()) return cmd_export(data_dir, ckpt_path, out_file, split, append);
        if (abl->parsed()) return cmd_ablate(config_path, overrides, data_dir, out_dir);
    } catch (const drop::NumericalError& e) {
        std::cerr << "numerical error: " << e.what() << "\n";
        return 2;
    } catch (const drop::ConfigError& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return 1;
    } catch (const drop::IoError& e) {
        std::cerr << "io error: " << e.what() << "\n";
        return 1;
    }
    return 0;
}
