#include <cstdio>
#include <exception>
#include <string>

#include "CLI11.hpp"

#include "vmsvae/commands.hpp"

namespace {

int run(int argc, char** argv) {
    CLI::App app{"Visual-memory-schema map prediction toolkit"};
    app.require_subcommand(1);

    std::string config_path;
    auto* train = app.add_subcommand("train", "Train a model from a JSON config");
    train->add_option("--config", config_path, "Run configuration JSON")->required();

    std::string model_path, data_dir, out_path;
    auto* predict = app.add_subcommand("predict", "Predict maps for a directory of images");
    predict->add_option("--model", model_path, "Checkpoint path")->required();
    predict->add_option("--data", data_dir, "Image directory")->required();
    predict->add_option("--out", out_path, "Output directory")->required();

    std::string pred_dir;
    auto* evaluate = app.add_subcommand("evaluate", "Score predictions against ground truth");
    evaluate->add_option("--pred", pred_dir, "Directory of predicted PNGs")->required();
    evaluate->add_option("--data", data_dir, "Ground-truth dataset root")->required();
    evaluate->add_option("--out", out_path, "Report JSON path")->required();

    auto* embed = app.add_subcommand("embed", "Project posterior means to 2-D");
    embed->add_option("--model", model_path, "Checkpoint path")->required();
    embed->add_option("--data", data_dir, "Dataset root")->required();
    embed->add_option("--out", out_path, "Embedding CSV path")->required();

    std::string a_csv, b_csv;
    auto* correlate = app.add_subcommand("correlate", "Rank-correlate two score tables");
    correlate->add_option("--a", a_csv, "First id,score CSV")->required();
    correlate->add_option("--b", b_csv, "Second id,score CSV")->required();

    size_t synth_n = 64;
    uint64_t synth_seed = 0;
    auto* synth = app.add_subcommand("synth", "Generate a synthetic labeled dataset");
    synth->add_option("--n", synth_n, "Number of image/map pairs");
    synth->add_option("--seed", synth_seed, "Generator seed");
    synth->add_option("--out", out_path, "Dataset root to create")->required();

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        int code = app.exit(e);
        return code == 0 ? 0 : 1;
    }

    try {
        if (train->parsed()) {
            vmsvae::cmd_train(config_path);
        } else if (predict->parsed()) {
            vmsvae::cmd_predict(model_path, data_dir, out_path);
        } else if (evaluate->parsed()) {
            vmsvae::cmd_evaluate(pred_dir, data_dir, out_path);
        } else if (embed->parsed()) {
            vmsvae::cmd_embed(model_path, data_dir, out_path);
        } else if (correlate->parsed()) {
            vmsvae::cmd_correlate(a_csv, b_csv);
        } else if (synth->parsed()) {
            vmsvae::cmd_synth(synth_n, synth_seed, out_path);
        }
    } catch (const vmsvae::ValidationError& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 1;
    } catch (const std::exception& e) {
        std::fprintf(stderr, "fault: %s\n", e.what());
        return 2;
    }
    return 0;
}

}  // namespace

int main(int argc, char** argv) { return run(argc, argv); }
