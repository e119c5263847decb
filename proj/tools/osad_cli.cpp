#include <filesystem>
#include <fstream>
#include <iostream>

#include "CLI11.hpp"
#include "json.hpp"
#include "osad/image_io.hpp"
#include "osad/pad_dataset.hpp"
#include "osad/trainer.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace osad;

namespace {

enum Exit { kOk = 0, kUsage = 1, kData = 2, kDiverged = 3 };

FoldSplit split_for(const PadDataset& data, std::uint64_t seed) {
    if (data.split()) return *data.split();
    return kfold_split(data.categories(), 3, seed);
}

void require_fold(const FoldSplit& split, int fold) {
    if (fold < 1 || static_cast<std::size_t>(fold) > split.k())
        throw CLI::ValidationError("--fold", "fold " + std::to_string(fold) + " not in 1.." + std::to_string(split.k()));
}

BBox box_from(const json& j, const std::string& key, const std::string& path) {
    if (!j.contains(key) || !j[key].is_array() || j[key].size() != 4)
        throw DataValidationError({path + ": '" + key + "' must be [x0,y0,x1,y1]"});
    return {j[key][0].get<int>(), j[key][1].get<int>(), j[key][2].get<int>(), j[key][3].get<int>()};
}

int gen_data(const std::string& out, std::size_t episodes, std::size_t queries, std::uint64_t seed) {
    write_synthetic_dataset(out, episodes, queries, seed);
    std::cout << "wrote " << episodes * queries << " query images to " << out << "\n";
    return kOk;
}

int train(const std::string& config_path, const std::string& data_dir, int fold, const std::string& out,
          std::string trace_path) {
    auto cfg = TrainConfig::load(config_path);
    cfg.fold_id = fold;
    const auto data = PadDataset::load(data_dir, cfg.input_size);
    const auto split = split_for(data, cfg.seed);
    require_fold(split, fold);
    if (trace_path.empty()) trace_path = out + ".trace.jsonl";
    std::ofstream trace(trace_path);
    if (!trace) throw std::runtime_error("cannot write " + trace_path);

    Trainer trainer(cfg, data, split);
    try {
        const auto records = trainer.run(cfg.steps, &trace);
        std::cout << "step " << records.back().step << " loss " << records.back().loss << "\n";
    } catch (const DivergenceError& e) {
        trainer.checkpoint().save(out + ".diverged");
        throw;
    }
    trainer.checkpoint().save(out);
    return kOk;
}

int eval(const std::string& ckpt_path, const std::string& data_dir, int fold, const std::string& report,
         std::size_t episodes, std::size_t n_queries, std::uint64_t seed) {
    const auto ckpt = Checkpoint::load(ckpt_path);
    if (ckpt.config.fold_id != fold)
        std::cerr << "warning: checkpoint was trained on fold " << ckpt.config.fold_id << ", evaluating fold " << fold
                  << "\n";
    const auto data = PadDataset::load(data_dir, ckpt.config.input_size);
    const auto split = split_for(data, ckpt.config.seed);
    require_fold(split, fold);
    const auto model = ckpt.restore_model();
    const auto r = evaluate(model, data, split, fold, episodes, n_queries ? n_queries : ckpt.config.n_queries, seed);
    metrics::write_report(report, r.records, r.aggregate);
    std::cout << "images " << r.aggregate.count << " iou " << r.aggregate.iou << " mae " << r.aggregate.mae
              << " e_phi " << r.aggregate.e_phi << " cc " << r.aggregate.cc << "\n";
    return kOk;
}

int predict(const std::string& ckpt_path, const std::string& support_path, const std::string& ann_path,
            const std::vector<std::string>& query_paths, const std::string& out_dir) {
    const auto ckpt = Checkpoint::load(ckpt_path);
    const auto model = ckpt.restore_model();

    std::ifstream ann_in(ann_path);
    if (!ann_in) throw DataValidationError({ann_path + ": cannot read support annotation"});
    json ann;
    try {
        ann = json::parse(ann_in);
    } catch (const json::exception& e) {
        throw DataValidationError({ann_path + ": " + e.what()});
    }

    SupportSample<float> support;
    support.image = image_to_tensor(read_png(support_path));
    support.human_box = box_from(ann, "human_box", ann_path);
    support.object_box = box_from(ann, "object_box", ann_path);
    const int w = static_cast<int>(support.image.dim(2)), h = static_cast<int>(support.image.dim(1));
    for (const auto* b : {&support.human_box, &support.object_box})
        if (!b->valid_in(w, h)) throw DataValidationError({ann_path + ": box " + b->str() + " outside the image"});

    std::vector<Tensor<float>> queries;
    for (const auto& q : query_paths) queries.push_back(image_to_tensor(read_png(q)));
    const auto maps = predict_any_size(model, ckpt.config.input_size, support, queries);

    fs::create_directories(out_dir);
    json manifest = {{"checkpoint", ckpt_path}, {"support", support_path}, {"outputs", json::array()}};
    for (std::size_t i = 0; i < maps.size(); ++i) {
        const auto name = std::to_string(i) + "_" + fs::path(query_paths[i]).stem().string() + ".png";
        write_png((fs::path(out_dir) / name).string(), probability_to_gray(maps[i]));
        manifest["outputs"].push_back({{"query", query_paths[i]}, {"mask", name}});
    }
    std::ofstream(fs::path(out_dir) / "manifest.json") << manifest.dump(2) << "\n";
    return kOk;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"One-shot affordance detection"};
    app.require_subcommand(1);

    std::string out, data, config, ckpt, report, support, support_ann, trace;
    std::vector<std::string> queries;
    std::size_t episodes = 30, queries_per_episode = 5, eval_episodes = 100, eval_n = 0;
    std::uint64_t seed = 1;
    int fold = 1;

    auto* gen = app.add_subcommand("gen-data", "Write a synthetic dataset in PAD layout");
    gen->add_option("--out", out)->required();
    gen->add_option("--episodes", episodes)->check(CLI::PositiveNumber);
    gen->add_option("--queries", queries_per_episode)->check(CLI::PositiveNumber);
    gen->add_option("--seed", seed);

    auto* tr = app.add_subcommand("train", "Episodic training");
    tr->add_option("--config", config)->required()->check(CLI::ExistingFile);
    tr->add_option("--data", data)->required()->check(CLI::ExistingDirectory);
    tr->add_option("--fold", fold)->required();
    tr->add_option("--out", out)->required();
    tr->add_option("--trace", trace, "Loss trace (default <out>.trace.jsonl)");

    auto* ev = app.add_subcommand("eval", "Metrics on test-fold episodes");
    ev->add_option("--ckpt", ckpt)->required()->check(CLI::ExistingFile);
    ev->add_option("--data", data)->required()->check(CLI::ExistingDirectory);
    ev->add_option("--fold", fold)->required();
    ev->add_option("--report", report)->required();
    ev->add_option("--episodes", eval_episodes)->check(CLI::PositiveNumber);
    ev->add_option("--n", eval_n, "Queries per episode (default: training n)");
    ev->add_option("--seed", seed);

    auto* pr = app.add_subcommand("predict", "Masks for query images given one support image");
    pr->add_option("--ckpt", ckpt)->required()->check(CLI::ExistingFile);
    pr->add_option("--support", support)->required();
    pr->add_option("--support-ann", support_ann)->required();
    pr->add_option("--queries", queries)->required();
    pr->add_option("--out", out)->required();

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? kOk : kUsage;
    }

    try {
        if (*gen) return gen_data(out, episodes, queries_per_episode, seed);
        if (*tr) return train(config, data, fold, out, trace);
        if (*ev) return eval(ckpt, data, fold, report, eval_episodes, eval_n, seed);
        if (*pr) return predict(ckpt, support, support_ann, queries, out);
    } catch (const CLI::ValidationError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kUsage;
    } catch (const ConfigError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kUsage;
    } catch (const DataValidationError& e) {
        std::cerr << "data validation failed:\n";
        for (const auto& issue : e.issues()) std::cerr << "  " << issue << "\n";
        return kData;
    } catch (const ImageIoError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kData;
    } catch (const CheckpointError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kData;
    } catch (const DivergenceError& e) {
        std::cerr << "diverged: " << e.what() << "\n";
        return kDiverged;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kData;
    }
    return kUsage;
}
