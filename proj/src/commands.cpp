#include "vmsvae/commands.hpp"

#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <set>

#include "json.hpp"

#include "vmsvae/analysis.hpp"
#include "vmsvae/dataset.hpp"
#include "vmsvae/metrics.hpp"
#include "vmsvae/training.hpp"

namespace vmsvae {

namespace fs = std::filesystem;
using nlohmann::json;

std::string resolve_backbone_weights(const std::string& value) {
    if (value.empty() || fs::exists(value)) return value;
    const char* cache = std::getenv("VMSVAE_BACKBONE_CACHE");
    if (cache && *cache) {
        fs::path candidate = fs::path(cache) / value;
        if (fs::exists(candidate)) return candidate.string();
    }
    throw ValidationError("backbone weights not found: " + value);
}

RunConfig load_run_config(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw ValidationError("cannot open config: " + path);
    json j;
    try {
        j = json::parse(f);
    } catch (const json::exception& e) {
        throw ValidationError(std::string("config is not valid JSON: ") + e.what());
    }
    if (!j.is_object()) throw ValidationError("config root must be a JSON object");

    static const std::set<std::string> kKeys = {
        "n",           "m",          "recon_mode",      "l2_coefficient",  "learning_rate",
        "batch_size",  "epochs",     "steps_per_epoch", "seed",            "backbone_weights",
        "shift_fraction", "zoom_range", "horizontal_flip", "data_root",    "output_dir",
        "variant_name"};
    for (const auto& [key, value] : j.items()) {
        if (!kKeys.count(key)) throw ValidationError("unknown config key: " + key);
    }

    RunConfig cfg;
    try {
        if (j.contains("n")) cfg.model.n = j.at("n").get<size_t>();
        if (j.contains("m")) cfg.model.m = j.at("m").get<size_t>();
        if (j.contains("recon_mode")) {
            cfg.model.recon_mode = recon_mode_from_name(j.at("recon_mode").get<std::string>());
        }
        if (j.contains("l2_coefficient")) {
            cfg.model.l2_coefficient = j.at("l2_coefficient").get<double>();
        }
        if (j.contains("learning_rate")) {
            cfg.model.learning_rate = j.at("learning_rate").get<double>();
        }
        if (j.contains("batch_size")) cfg.model.batch_size = j.at("batch_size").get<size_t>();
        if (j.contains("epochs")) cfg.model.epochs = j.at("epochs").get<size_t>();
        if (j.contains("steps_per_epoch")) {
            cfg.model.steps_per_epoch = j.at("steps_per_epoch").get<size_t>();
        }
        if (j.contains("seed")) cfg.model.seed = j.at("seed").get<uint64_t>();
        if (j.contains("backbone_weights")) {
            cfg.model.backbone_weights =
                resolve_backbone_weights(j.at("backbone_weights").get<std::string>());
        }
        if (j.contains("shift_fraction")) {
            cfg.augment.shift_fraction = j.at("shift_fraction").get<double>();
        }
        if (j.contains("zoom_range")) {
            const auto& z = j.at("zoom_range");
            if (!z.is_array() || z.size() != 2) {
                throw ValidationError("zoom_range must be a [lo, hi] pair");
            }
            cfg.augment.zoom_lo = z.at(0).get<double>();
            cfg.augment.zoom_hi = z.at(1).get<double>();
        }
        if (j.contains("horizontal_flip")) {
            cfg.augment.horizontal_flip = j.at("horizontal_flip").get<bool>();
        }
        if (j.contains("data_root")) cfg.data_root = j.at("data_root").get<std::string>();
        if (j.contains("output_dir")) cfg.output_dir = j.at("output_dir").get<std::string>();
        if (j.contains("variant_name")) {
            cfg.variant_name = j.at("variant_name").get<std::string>();
        }
    } catch (const json::exception& e) {
        throw ValidationError(std::string("config value has the wrong type: ") + e.what());
    }
    cfg.augment.seed = cfg.model.seed;
    cfg.model.validate();
    cfg.augment.validate();
    return cfg;
}

void cmd_train(const std::string& config_path) {
    RunConfig cfg = load_run_config(config_path);
    if (cfg.data_root.empty()) throw ValidationError("config must set data_root for training");
    Dataset ds = load_dataset(cfg.data_root, /*with_vms=*/true);
    fs::create_directories(cfg.output_dir);

    ModelState state(cfg.model);
    TrainHistory history;
    std::string hist_path = (fs::path(cfg.output_dir) / "history.jsonl").string();
    auto on_epoch = [&](const EpochRecord& rec) {
        std::printf("epoch %zu/%zu  recon %.3f  kl %.3f  l2 %.3f  total %.3f  (%.1fs)\n",
                    rec.epoch, cfg.model.epochs, rec.recon, rec.kl, rec.l2, rec.total,
                    rec.seconds);
        std::fflush(stdout);
    };
    try {
        train(state, ds, cfg.augment, history, nullptr, on_epoch);
    } catch (...) {
        write_history_jsonl(history, hist_path);
        throw;
    }
    write_history_jsonl(history, hist_path);
    std::string ckpt = (fs::path(cfg.output_dir) / "model.vmsc").string();
    save_model(state, ckpt);
    std::printf("trained %s on %zu samples; checkpoint %s\n", cfg.variant_name.c_str(), ds.size(),
                ckpt.c_str());
}

namespace {

std::string fmt(double v) {
    char buf[40];
    std::snprintf(buf, sizeof(buf), "%.9g", v);
    return buf;
}

}  // namespace

void cmd_predict(const std::string& model_path, const std::string& images_dir,
                 const std::string& out_dir) {
    ModelState state = load_model(model_path);
    auto files = list_images(images_dir);
    fs::create_directories(out_dir);

    std::vector<MemorabilityPair> mems;
    size_t skipped = 0;
    for (const auto& [id, path] : files) {
        std::vector<uint8_t> rgb;
        try {
            rgb = load_image_rgb(path);
        } catch (const RuntimeFault& e) {
            std::fprintf(stderr, "warning: skipping %s: %s\n", path.c_str(), e.what());
            ++skipped;
            continue;
        }
        VmsMap pred = predict_vms(state, rgb);
        save_vms_png(pred, (fs::path(out_dir) / (id + ".png")).string());
        MemorabilityPair mem = memorability_from_map(pred);
        mem.image_id = id;
        mems.push_back(mem);
    }
    std::string csv_path = (fs::path(out_dir) / "memorability.csv").string();
    std::ofstream csv(csv_path);
    if (!csv) throw RuntimeFault("cannot write " + csv_path);
    csv << "image_id,true_mem,false_mem\n";
    for (const auto& mem : mems) {
        csv << mem.image_id << "," << fmt(mem.true_mem) << "," << fmt(mem.false_mem) << "\n";
    }
    if (!csv) throw RuntimeFault("failed writing " + csv_path);
    std::printf("predicted %zu maps, skipped %zu\n", mems.size(), skipped);
}

void cmd_evaluate(const std::string& pred_dir, const std::string& gt_root,
                  const std::string& out_path) {
    Dataset gt = load_dataset(gt_root, /*with_vms=*/true);
    std::map<std::string, const ImageSample*> gt_by_id;
    for (const auto& s : gt.samples) gt_by_id[s.image_id] = &s;

    if (!fs::is_directory(pred_dir)) {
        throw ValidationError("prediction directory does not exist: " + pred_dir);
    }
    std::vector<std::pair<std::string, std::string>> preds;
    for (const auto& f : fs::directory_iterator(pred_dir)) {
        if (!f.is_regular_file() || f.path().extension() != ".png") continue;
        preds.emplace_back(f.path().stem().string(), f.path().string());
    }
    std::sort(preds.begin(), preds.end());
    if (preds.empty()) throw ValidationError("no prediction PNGs under " + pred_dir);

    std::string unknown;
    size_t unknown_count = 0;
    for (const auto& [id, path] : preds) {
        if (!gt_by_id.count(id)) {
            if (unknown_count < 5) unknown += (unknown.empty() ? "" : ", ") + id;
            ++unknown_count;
        }
    }
    if (unknown_count > 0) {
        throw ValidationError("predictions without ground truth (" +
                              std::to_string(unknown_count) + "): " + unknown);
    }

    std::vector<MapScore> scores;
    std::vector<MemorabilityPair> mems;
    std::map<std::string, CategoryPath> cats;
    for (const auto& [id, path] : preds) {
        const ImageSample& ref = *gt_by_id.at(id);
        VmsMap pred = load_vms_png(path);
        MapScore score = score_map(pred, *ref.vms);
        score.image_id = id;
        scores.push_back(score);
        MemorabilityPair mem = memorability_from_map(pred);
        mem.image_id = id;
        mems.push_back(mem);
        if (!ref.category) throw ValidationError("ground-truth sample " + id + " lacks category");
        cats[id] = *ref.category;
    }
    CategoryReport report = category_report(scores, mems, cats);

    json out;
    json score_rows = json::array();
    for (const auto& s : scores) {
        score_rows.push_back({{"image_id", s.image_id},
                              {"rho_true", s.rho_true},
                              {"rho_false", s.rho_false},
                              {"rho_all", s.rho_all},
                              {"mse_true", s.mse_true},
                              {"mse_false", s.mse_false},
                              {"mse_all", s.mse_all}});
    }
    out["scores"] = score_rows;
    out["category_report"] = category_report_json(report);
    out["overall"] = {{"rho_true", report.overall.rho_true.mean},
                      {"rho_false", report.overall.rho_false.mean},
                      {"rho_all", report.overall.rho_all.mean},
                      {"mse_true", report.overall.mse_true.mean},
                      {"mse_false", report.overall.mse_false.mean},
                      {"mse_all", report.overall.mse_all.mean},
                      {"count", report.overall.count}};

    std::ofstream f(out_path);
    if (!f) throw RuntimeFault("cannot write report: " + out_path);
    f << out.dump(2) << "\n";
    if (!f) throw RuntimeFault("failed writing report: " + out_path);
    std::ofstream fig(out_path + ".categories.csv");
    if (!fig) throw RuntimeFault("cannot write category figure CSV");
    fig << build_category_figure(report);
    std::printf("evaluated %zu predictions: rho_all %.4f, mse_all %.3f\n", scores.size(),
                report.overall.rho_all.mean, report.overall.mse_all.mean);
}

void cmd_embed(const std::string& model_path, const std::string& data_root,
               const std::string& out_csv) {
    ModelState state = load_model(model_path);
    Dataset ds = load_dataset(data_root, /*with_vms=*/false);
    auto records = embed_dataset(state, ds);
    Projection2D proj = project_2d(records);
    write_embedding_csv(records, proj, out_csv);
    std::printf("embedded %zu images%s\n", records.size(),
                proj.fallback ? " (rank-deficient projection fallback)" : "");
}

namespace {

// Two-column `image_id,score`, or any CSV with image_id plus a true_mem
// column (the memorability.csv shape). A non-numeric second field in the
// first line is treated as a header.
std::map<std::string, double> load_score_csv(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw ValidationError("cannot open score CSV: " + path);
    std::map<std::string, double> out;
    std::string line;
    size_t lineno = 0;
    int score_col = 1;
    while (std::getline(f, line)) {
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty()) continue;
        ++lineno;
        std::vector<std::string> fields;
        size_t start = 0;
        while (true) {
            size_t comma = line.find(',', start);
            fields.push_back(line.substr(start, comma - start));
            if (comma == std::string::npos) break;
            start = comma + 1;
        }
        if (fields.size() < 2) {
            throw ValidationError("score CSV needs at least two columns: " + path);
        }
        if (lineno == 1) {
            char* end = nullptr;
            std::strtod(fields[1].c_str(), &end);
            bool numeric = end && *end == '\0' && !fields[1].empty();
            if (!numeric) {
                for (size_t i = 1; i < fields.size(); ++i) {
                    if (fields[i] == "true_mem") score_col = static_cast<int>(i);
                }
                continue;  // header
            }
        }
        if (static_cast<size_t>(score_col) >= fields.size()) {
            throw ValidationError("score CSV row lacks the score column: " + path);
        }
        char* end = nullptr;
        double v = std::strtod(fields[score_col].c_str(), &end);
        if (!end || *end != '\0') {
            throw ValidationError("non-numeric score for id " + fields[0] + " in " + path);
        }
        out[fields[0]] = v;
    }
    if (out.empty()) throw ValidationError("score CSV has no data rows: " + path);
    return out;
}

}  // namespace

void cmd_correlate(const std::string& a_csv, const std::string& b_csv) {
    auto a = load_score_csv(a_csv);
    auto b = load_score_csv(b_csv);
    std::vector<MemorabilityPair> mems;
    for (const auto& [id, score] : a) {
        MemorabilityPair mem;
        mem.image_id = id;
        mem.true_mem = score;
        mems.push_back(mem);
    }
    SpearmanResult r = correlate_with_scores(mems, b);
    nlohmann::ordered_json out = {{"rho", r.rho}, {"p", r.p}, {"n", r.n}};
    std::printf("%s\n", out.dump().c_str());
}

void cmd_synth(size_t n, uint64_t seed, const std::string& out_dir) {
    Dataset ds = make_synthetic_dataset(n, seed);
    write_dataset_layout(ds, out_dir);
    std::printf("wrote %zu synthetic pairs under %s\n", ds.size(), out_dir.c_str());
}

}  // namespace vmsvae
