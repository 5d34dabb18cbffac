#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <unistd.h>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>

#include "vmsvae/analysis.hpp"
#include "vmsvae/common.hpp"
#include "vmsvae/dataset.hpp"

using namespace vmsvae;
namespace fs = std::filesystem;

namespace {

struct TempDir {
    fs::path path;
    TempDir() {
        static int counter = 0;
        path = fs::temp_directory_path() /
               ("vmsvae_analysis_" + std::to_string(::getpid()) + "_" +
                std::to_string(counter++));
        fs::create_directories(path);
    }
    ~TempDir() { fs::remove_all(path); }
};

std::vector<EmbeddingRecord> toy_records(size_t k, size_t m, uint64_t seed) {
    Rng rng(seed);
    std::vector<EmbeddingRecord> out;
    for (size_t i = 0; i < k; ++i) {
        EmbeddingRecord r;
        r.image_id = "img" + std::to_string(i);
        r.mu.resize(m);
        for (auto& v : r.mu) v = static_cast<float>(rng.normal());
        r.true_mem = rng.uniform();
        r.false_mem = rng.uniform();
        r.category = category_for_leaf("kitchen");
        out.push_back(r);
    }
    return out;
}

double projected_variance(const std::vector<EmbeddingRecord>& records,
                          const std::vector<double>& u, const std::vector<double>& v,
                          const std::vector<double>& center) {
    double var = 0.0;
    for (const auto& r : records) {
        double cu = 0.0, cv = 0.0;
        for (size_t i = 0; i < r.mu.size(); ++i) {
            cu += (r.mu[i] - center[i]) * u[i];
            cv += (r.mu[i] - center[i]) * v[i];
        }
        var += cu * cu + cv * cv;
    }
    return var / records.size();
}

CategoryReport synthetic_report(double bias) {
    std::vector<MapScore> scores;
    std::vector<MemorabilityPair> mems;
    std::map<std::string, CategoryPath> cats;
    const auto& leaves = taxonomy_leaves();
    Rng rng(17);
    for (size_t leaf = 0; leaf < leaves.size(); ++leaf) {
        for (int i = 0; i < 3; ++i) {
            MapScore s;
            s.image_id = leaves[leaf] + "_" + std::to_string(i);
            s.rho_true = 0.4 + 0.05 * leaf + bias;
            s.rho_false = 0.2 + 0.05 * leaf + bias;
            s.rho_all = 0.3 + 0.05 * leaf + bias;
            s.mse_true = 90 - leaf;
            s.mse_false = 70 - leaf;
            s.mse_all = 80 - leaf;
            scores.push_back(s);
            MemorabilityPair m;
            m.image_id = s.image_id;
            m.true_mem = rng.uniform();
            m.false_mem = rng.uniform();
            mems.push_back(m);
            cats[s.image_id] = category_for_leaf(leaves[leaf]);
        }
    }
    return category_report(scores, mems, cats);
}

}  // namespace

TEST_CASE("projection centers, projects, and reproduces stored coordinates") {
    auto records = toy_records(40, 6, 31);
    Projection2D proj = project_2d(records);
    REQUIRE(proj.basis_u.size() == 6);
    REQUIRE(proj.basis_v.size() == 6);
    CHECK_FALSE(proj.fallback);

    // orthonormal basis
    double uu = 0, vv = 0, uv = 0;
    for (size_t i = 0; i < 6; ++i) {
        uu += proj.basis_u[i] * proj.basis_u[i];
        vv += proj.basis_v[i] * proj.basis_v[i];
        uv += proj.basis_u[i] * proj.basis_v[i];
    }
    CHECK(uu == doctest::Approx(1.0).epsilon(1e-9));
    CHECK(vv == doctest::Approx(1.0).epsilon(1e-9));
    CHECK(uv == doctest::Approx(0.0).epsilon(1e-9));

    // sign convention: largest-magnitude coordinate positive
    auto max_coord = [](const std::vector<double>& b) {
        size_t best = 0;
        for (size_t i = 1; i < b.size(); ++i) {
            if (std::abs(b[i]) > std::abs(b[best])) best = i;
        }
        return b[best];
    };
    CHECK(max_coord(proj.basis_u) > 0.0);
    CHECK(max_coord(proj.basis_v) > 0.0);

    // coords match re-projection through the stored basis
    for (const auto& r : records) {
        double cu = 0.0, cv = 0.0;
        for (size_t i = 0; i < r.mu.size(); ++i) {
            cu += (r.mu[i] - proj.center[i]) * proj.basis_u[i];
            cv += (r.mu[i] - proj.center[i]) * proj.basis_v[i];
        }
        auto [u, v] = proj.coords.at(r.image_id);
        CHECK(cu == doctest::Approx(u).epsilon(1e-9));
        CHECK(cv == doctest::Approx(v).epsilon(1e-9));
    }
}

TEST_CASE("projection beats random 2d projections on captured variance") {
    auto records = toy_records(60, 5, 37);
    Projection2D proj = project_2d(records);
    double best = projected_variance(records, proj.basis_u, proj.basis_v, proj.center);

    Rng rng(41);
    for (int it = 0; it < 200; ++it) {
        // random orthonormal pair via Gram-Schmidt
        std::vector<double> u(5), v(5);
        for (auto& x : u) x = rng.normal();
        for (auto& x : v) x = rng.normal();
        double nu = 0.0;
        for (double x : u) nu += x * x;
        nu = std::sqrt(nu);
        for (auto& x : u) x /= nu;
        double dot = 0.0;
        for (size_t i = 0; i < 5; ++i) dot += u[i] * v[i];
        for (size_t i = 0; i < 5; ++i) v[i] -= dot * u[i];
        double nv = 0.0;
        for (double x : v) nv += x * x;
        nv = std::sqrt(nv);
        for (auto& x : v) x /= nv;
        CHECK(projected_variance(records, u, v, proj.center) <= best + 1e-9);
    }
}

TEST_CASE("projection of 2d input is a rotation up to sign") {
    auto records = toy_records(30, 2, 43);
    Projection2D proj = project_2d(records);
    double total_in = 0.0, total_out = 0.0;
    std::vector<double> mean = {0.0, 0.0};
    for (const auto& r : records) {
        mean[0] += r.mu[0];
        mean[1] += r.mu[1];
    }
    mean[0] /= records.size();
    mean[1] /= records.size();
    for (const auto& r : records) {
        total_in += (r.mu[0] - mean[0]) * (r.mu[0] - mean[0]) +
                    (r.mu[1] - mean[1]) * (r.mu[1] - mean[1]);
        auto [u, v] = proj.coords.at(r.image_id);
        total_out += u * u + v * v;
    }
    CHECK(total_out == doctest::Approx(total_in).epsilon(1e-9));
}

TEST_CASE("duplicated records project to identical coordinates") {
    auto records = toy_records(10, 4, 47);
    records[5].mu = records[2].mu;
    Projection2D proj = project_2d(records);
    auto a = proj.coords.at(records[2].image_id);
    auto b = proj.coords.at(records[5].image_id);
    CHECK(a.first == doctest::Approx(b.first).epsilon(1e-12));
    CHECK(a.second == doctest::Approx(b.second).epsilon(1e-12));
}

TEST_CASE("rank-deficient input falls back to leading coordinates") {
    std::vector<EmbeddingRecord> records;
    for (int i = 0; i < 6; ++i) {
        EmbeddingRecord r;
        r.image_id = "c" + std::to_string(i);
        r.mu = {float(i), 0.0f, 0.0f};  // all variance on one axis
        r.category = category_for_leaf("big");
        records.push_back(r);
    }
    Projection2D proj = project_2d(records);
    CHECK(proj.fallback);
    CHECK(proj.basis_u == std::vector<double>{1, 0, 0});
    CHECK(proj.basis_v == std::vector<double>{0, 1, 0});
}

TEST_CASE("embedding csv has the fixed header and one row per record") {
    TempDir tmp;
    auto records = toy_records(5, 3, 53);
    Projection2D proj = project_2d(records);
    std::string path = (tmp.path / "embed.csv").string();
    write_embedding_csv(records, proj, path);

    std::ifstream f(path);
    std::string line;
    std::getline(f, line);
    CHECK(line == "image_id,u,v,true_mem,false_mem,leaf");
    size_t rows = 0;
    while (std::getline(f, line)) {
        if (!line.empty()) ++rows;
    }
    CHECK(rows == 5);
}

TEST_CASE("embed_dataset normalizes memorability to the unit interval") {
    ModelConfig cfg;
    cfg.n = 16;
    cfg.m = 8;
    cfg.seed = 3;
    ModelState state(cfg);
    Dataset ds = make_synthetic_dataset(4, 61);
    auto records = embed_dataset(state, ds);
    REQUIRE(records.size() == 4);
    double max_true = 0.0, min_true = 1.0;
    for (const auto& r : records) {
        CHECK(r.mu.size() == 8);
        CHECK(r.true_mem >= 0.0);
        CHECK(r.true_mem <= 1.0);
        max_true = std::max(max_true, r.true_mem);
        min_true = std::min(min_true, r.true_mem);
        CHECK(r.category.leaf == ds.samples[&r - records.data()].category->leaf);
    }
    // min-max normalization pins the extremes unless the spread is degenerate
    CHECK(max_true == doctest::Approx(1.0).epsilon(1e-12));
    CHECK(min_true == doctest::Approx(0.0).epsilon(1e-12));
}

TEST_CASE("table1 requires all three variants") {
    std::map<std::string, CategoryReport> one;
    one["n128_m32"] = synthetic_report(0.0);
    CHECK_THROWS_WITH_AS(build_table1(one),
                         doctest::Contains("missing variant results"), ValidationError);
}

TEST_CASE("table1 carries every variant cell and renders references") {
    std::map<std::string, CategoryReport> all;
    all["n64_m8"] = synthetic_report(0.0);
    all["n64_m8_l1"] = synthetic_report(0.05);
    all["n128_m32"] = synthetic_report(0.1);
    VariantTable table = build_table1(all);

    for (const auto& name : kVariantNames) {
        REQUIRE(table.json.contains(name));
        for (const char* row : {"true", "false", "all"}) {
            REQUIRE(table.json.at(name).contains(row));
            CHECK(table.json.at(name).at(row).contains("rho"));
            CHECK(table.json.at(name).at(row).contains("mse"));
        }
    }
    CHECK(table.json.at("n128_m32").at("true").at("rho").get<double>() ==
          doctest::Approx(all.at("n128_m32").overall.rho_true.mean));
    // aligned text mentions each variant and the reference magnitudes
    for (const auto& name : kVariantNames) {
        CHECK(table.text.find(name) != std::string::npos);
    }
    CHECK(table.text.find("0.545") != std::string::npos);

    // byte-identical on identical input
    VariantTable again = build_table1(all);
    CHECK(again.text == table.text);
    CHECK(again.json.dump() == table.json.dump());
}

TEST_CASE("category figure walks the taxonomy in order") {
    CategoryReport rep = synthetic_report(0.0);
    std::string csv = build_category_figure(rep);
    std::istringstream in(csv);
    std::string line;
    std::getline(in, line);
    CHECK(line == "leaf,rho_all_mean,rho_all_stddev,count");
    const auto& leaves = taxonomy_leaves();
    for (const auto& leaf : leaves) {
        REQUIRE(std::getline(in, line));
        CHECK(line.rfind(leaf + ",", 0) == 0);
    }
    CHECK_FALSE(std::getline(in, line));
}

TEST_CASE("category figure emits zero rows for unseen leaves") {
    std::vector<MapScore> scores;
    std::vector<MemorabilityPair> mems;
    std::map<std::string, CategoryPath> cats;
    MapScore s;
    s.image_id = "only";
    s.rho_all = 0.5;
    scores.push_back(s);
    MemorabilityPair m;
    m.image_id = "only";
    mems.push_back(m);
    cats["only"] = category_for_leaf("isolated");
    CategoryReport rep = category_report(scores, mems, cats);
    std::string csv = build_category_figure(rep);
    CHECK(csv.find("kitchen,0,0,0") != std::string::npos);
    CHECK(csv.find("isolated,0.5") != std::string::npos);
}

TEST_CASE("category report json uses the fixed key names") {
    CategoryReport rep = synthetic_report(0.0);
    nlohmann::json j = category_report_json(rep);
    REQUIRE(j.contains("leaves"));
    REQUIRE(j.contains("overall"));
    CHECK(j.at("leaves").size() == kLeafCount);
    REQUIRE(j.at("leaves").contains("kitchen"));
    const auto& first = j.at("leaves").at("kitchen");
    for (const char* key : {"rho_true", "rho_false", "rho_all", "mse_true", "mse_false",
                            "mse_all", "true_mem", "false_mem", "count"}) {
        CHECK(first.contains(key));
    }
    CHECK(first.at("rho_all").contains("mean"));
    CHECK(first.at("rho_all").contains("stddev"));
}
