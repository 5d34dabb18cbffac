#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <sys/wait.h>
#include <unistd.h>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <sstream>
#include <string>

#include "json.hpp"

namespace fs = std::filesystem;

namespace {

struct RunResult {
    int code = -1;
    std::string out;
};

RunResult run_cli(const std::string& args) {
    std::string cmd = std::string(VMSVAE_BIN) + " " + args + " 2>&1";
    FILE* pipe = ::popen(cmd.c_str(), "r");
    REQUIRE(pipe != nullptr);
    RunResult r;
    char buf[4096];
    while (size_t got = ::fread(buf, 1, sizeof(buf), pipe)) r.out.append(buf, got);
    int status = ::pclose(pipe);
    r.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
    return r;
}

struct TempDir {
    fs::path path;
    TempDir() {
        static int counter = 0;
        path = fs::temp_directory_path() /
               ("vmsvae_cli_" + std::to_string(::getpid()) + "_" + std::to_string(counter++));
        fs::create_directories(path);
    }
    ~TempDir() { fs::remove_all(path); }
    std::string str() const { return path.string(); }
};

std::string read_file(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    std::ostringstream ss;
    ss << f.rdbuf();
    return ss.str();
}

void write_file(const std::string& path, const std::string& content) {
    std::ofstream f(path);
    f << content;
}

// One shared pipeline fixture: synth data, a briefly trained model, and
// predictions, built on first use.
struct Pipeline {
    TempDir dir;
    std::string data, run, pred;

    Pipeline() {
        data = (dir.path / "data").string();
        run = (dir.path / "run").string();
        pred = (dir.path / "pred").string();
        REQUIRE(run_cli("synth --n 6 --seed 5 --out " + data).code == 0);
        std::string cfg = (dir.path / "cfg.json").string();
        write_file(cfg, R"({"n": 16, "m": 8, "batch_size": 2, "epochs": 1,
            "steps_per_epoch": 2, "seed": 11, "shift_fraction": 0.0,
            "zoom_range": [1.0, 1.0], "horizontal_flip": false,
            "data_root": ")" + data + R"(", "output_dir": ")" + run + R"("})");
        REQUIRE(run_cli("train --config " + cfg).code == 0);
        REQUIRE(run_cli("predict --model " + run + "/model.vmsc --data " + data + " --out " +
                        pred).code == 0);
    }

    static Pipeline& instance() {
        static Pipeline p;
        return p;
    }
};

}  // namespace

TEST_CASE("help exits cleanly") {
    CHECK(run_cli("--help").code == 0);
    CHECK(run_cli("train --help").code == 0);
}

TEST_CASE("missing subcommand or bad flags exit with a validation code") {
    CHECK(run_cli("").code == 1);
    CHECK(run_cli("train").code == 1);
    CHECK(run_cli("launch --config x.json").code == 1);
}

TEST_CASE("unknown config keys are rejected") {
    TempDir tmp;
    std::string cfg = (tmp.path / "bad.json").string();
    write_file(cfg, R"({"n": 16, "m": 8, "learning_rte": 0.1})");
    RunResult r = run_cli("train --config " + cfg);
    CHECK(r.code == 1);
    CHECK(r.out.find("learning_rte") != std::string::npos);

    write_file(cfg, R"({"n": 4, "m": 8})");
    CHECK(run_cli("train --config " + cfg).code == 1);

    write_file(cfg, "{not json");
    CHECK(run_cli("train --config " + cfg).code == 1);

    CHECK(run_cli("train --config " + (tmp.path / "absent.json").string()).code == 1);
}

TEST_CASE("synth then train writes checkpoint, sidecar, and history") {
    Pipeline& p = Pipeline::instance();
    CHECK(fs::exists(p.run + "/model.vmsc"));
    CHECK(fs::exists(p.run + "/model.vmsc.json"));
    std::ifstream hist(p.run + "/history.jsonl");
    std::string line;
    size_t rows = 0;
    while (std::getline(hist, line)) {
        nlohmann::json j = nlohmann::json::parse(line);
        CHECK(j.contains("epoch"));
        ++rows;
    }
    CHECK(rows == 1);
}

TEST_CASE("predict emits one map per image plus memorability") {
    Pipeline& p = Pipeline::instance();
    size_t pngs = 0;
    for (const auto& f : fs::directory_iterator(p.pred)) {
        if (f.path().extension() == ".png") ++pngs;
    }
    CHECK(pngs == 6);
    std::ifstream mem(p.pred + "/memorability.csv");
    std::string header;
    std::getline(mem, header);
    CHECK(header == "image_id,true_mem,false_mem");
}

TEST_CASE("predict reruns are byte-identical") {
    Pipeline& p = Pipeline::instance();
    TempDir tmp;
    std::string again = (tmp.path / "again").string();
    REQUIRE(run_cli("predict --model " + p.run + "/model.vmsc --data " + p.data + " --out " +
                    again).code == 0);
    for (const auto& f : fs::directory_iterator(p.pred)) {
        std::string name = f.path().filename().string();
        CHECK(read_file(f.path().string()) == read_file(again + "/" + name));
    }
}

TEST_CASE("evaluate scores the predictions and reruns identically") {
    Pipeline& p = Pipeline::instance();
    TempDir tmp;
    std::string report = (tmp.path / "report.json").string();
    REQUIRE(run_cli("evaluate --pred " + p.pred + " --data " + p.data + " --out " +
                    report).code == 0);
    nlohmann::json j = nlohmann::json::parse(read_file(report));
    CHECK(j.at("scores").size() == 6);
    CHECK(j.at("overall").contains("rho_all"));
    CHECK(fs::exists(report + ".categories.csv"));

    std::string report2 = (tmp.path / "report2.json").string();
    REQUIRE(run_cli("evaluate --pred " + p.pred + " --data " + p.data + " --out " +
                    report2).code == 0);
    CHECK(read_file(report) == read_file(report2));
}

TEST_CASE("evaluate rejects predictions without ground truth") {
    Pipeline& p = Pipeline::instance();
    TempDir tmp;
    std::string rogue = (tmp.path / "rogue").string();
    fs::create_directories(rogue);
    fs::copy_file(fs::directory_iterator(p.pred)->path(), fs::path(rogue) / "stranger.png");
    RunResult r = run_cli("evaluate --pred " + rogue + " --data " + p.data + " --out " +
                          (tmp.path / "r.json").string());
    CHECK(r.code == 1);
    CHECK(r.out.find("stranger") != std::string::npos);
}

TEST_CASE("train reruns reproduce the final loss exactly") {
    Pipeline& p = Pipeline::instance();
    TempDir tmp;
    std::string run2 = (tmp.path / "run2").string();
    std::string cfg = (tmp.path / "cfg.json").string();
    write_file(cfg, R"({"n": 16, "m": 8, "batch_size": 2, "epochs": 1,
        "steps_per_epoch": 2, "seed": 11, "shift_fraction": 0.0,
        "zoom_range": [1.0, 1.0], "horizontal_flip": false,
        "data_root": ")" + p.data + R"(", "output_dir": ")" + run2 + R"("})");
    REQUIRE(run_cli("train --config " + cfg).code == 0);
    CHECK(read_file(p.run + "/history.jsonl") == read_file(run2 + "/history.jsonl"));
    CHECK(read_file(p.run + "/model.vmsc") == read_file(run2 + "/model.vmsc"));
}

TEST_CASE("embed writes a row per image") {
    Pipeline& p = Pipeline::instance();
    TempDir tmp;
    std::string csv = (tmp.path / "embed.csv").string();
    REQUIRE(run_cli("embed --model " + p.run + "/model.vmsc --data " + p.data + " --out " +
                    csv).code == 0);
    std::ifstream f(csv);
    std::string line;
    size_t lines = 0;
    while (std::getline(f, line)) {
        if (!line.empty()) ++lines;
    }
    CHECK(lines == 7);  // header + 6 rows
}

TEST_CASE("correlate matches a table against itself and transforms") {
    Pipeline& p = Pipeline::instance();
    RunResult self = run_cli("correlate --a " + p.pred + "/memorability.csv --b " + p.pred +
                             "/memorability.csv");
    REQUIRE(self.code == 0);
    nlohmann::json j = nlohmann::json::parse(self.out);
    CHECK(j.at("rho").get<double>() == doctest::Approx(1.0));
    CHECK(j.at("n").get<int>() == 6);

    // monotone transform preserves ranks
    TempDir tmp;
    std::string warped = (tmp.path / "warped.csv").string();
    std::ifstream in(p.pred + "/memorability.csv");
    std::ofstream out(warped);
    // near-init predictions differ only in the trailing decimals, so the
    // warped copy must not round them into ties
    out << std::setprecision(17);
    std::string line;
    std::getline(in, line);
    out << "image_id,score\n";
    while (std::getline(in, line)) {
        auto c1 = line.find(',');
        auto c2 = line.find(',', c1 + 1);
        std::string id = line.substr(0, c1);
        double v = std::stod(line.substr(c1 + 1, c2 - c1 - 1));
        out << id << "," << (v * v * 10 + 3) << "\n";
    }
    out.close();
    RunResult mono = run_cli("correlate --a " + p.pred + "/memorability.csv --b " + warped);
    REQUIRE(mono.code == 0);
    CHECK(nlohmann::json::parse(mono.out).at("rho").get<double>() == doctest::Approx(1.0));
}

TEST_CASE("a corrupt checkpoint is a runtime fault") {
    Pipeline& p = Pipeline::instance();
    TempDir tmp;
    std::string broken = (tmp.path / "broken.vmsc").string();
    std::string bytes = read_file(p.run + "/model.vmsc");
    bytes.resize(bytes.size() / 3);
    write_file(broken, bytes);
    fs::copy_file(p.run + "/model.vmsc.json", broken + ".json");
    RunResult r = run_cli("predict --model " + broken + " --data " + p.data + " --out " +
                          (tmp.path / "out").string());
    CHECK(r.code == 2);
}

TEST_CASE("predict on a directory with no images is a validation error") {
    Pipeline& p = Pipeline::instance();
    TempDir tmp;
    RunResult r = run_cli("predict --model " + p.run + "/model.vmsc --data " + tmp.str() +
                          " --out " + (tmp.path / "out").string());
    CHECK(r.code == 1);
}
