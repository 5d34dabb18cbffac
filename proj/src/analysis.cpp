#include "vmsvae/analysis.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>

#include <Eigen/Dense>

namespace vmsvae {

using nlohmann::json;

std::vector<EmbeddingRecord> embed_dataset(ModelState& state, const Dataset& ds) {
    if (ds.size() == 0) throw ValidationError("cannot embed an empty dataset");
    std::vector<EmbeddingRecord> records;
    records.reserve(ds.size());
    for (const auto& s : ds.samples) {
        if (!s.category) {
            throw ValidationError("sample " + s.image_id + " has no category");
        }
        EmbeddingRecord rec;
        rec.image_id = s.image_id;
        auto [mu, logvar] = encode(state, s.rgb);
        rec.mu = std::move(mu);
        MemorabilityPair mem = memorability_from_map(predict_vms(state, s.rgb));
        rec.true_mem = mem.true_mem;
        rec.false_mem = mem.false_mem;
        rec.category = *s.category;
        records.push_back(std::move(rec));
    }
    auto normalize = [&](auto field) {
        double lo = records[0].*field, hi = records[0].*field;
        for (const auto& r : records) {
            lo = std::min(lo, r.*field);
            hi = std::max(hi, r.*field);
        }
        for (auto& r : records) {
            r.*field = hi > lo ? (r.*field - lo) / (hi - lo) : 0.0;
        }
    };
    normalize(&EmbeddingRecord::true_mem);
    normalize(&EmbeddingRecord::false_mem);
    return records;
}

Projection2D project_2d(const std::vector<EmbeddingRecord>& records) {
    if (records.size() < 2) throw ValidationError("projection needs at least 2 records");
    size_t m = records[0].mu.size();
    if (m < 2) throw ValidationError("projection needs latent dimension >= 2");

    Eigen::VectorXd center = Eigen::VectorXd::Zero(static_cast<long>(m));
    for (const auto& r : records) {
        for (size_t j = 0; j < m; ++j) center[static_cast<long>(j)] += r.mu[j];
    }
    center /= static_cast<double>(records.size());

    Eigen::MatrixXd cov = Eigen::MatrixXd::Zero(static_cast<long>(m), static_cast<long>(m));
    Eigen::VectorXd d(static_cast<long>(m));
    for (const auto& r : records) {
        for (size_t j = 0; j < m; ++j) d[static_cast<long>(j)] = r.mu[j] - center[static_cast<long>(j)];
        cov += d * d.transpose();
    }
    cov /= static_cast<double>(records.size());

    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(cov);
    Eigen::VectorXd evals = es.eigenvalues();  // ascending
    Projection2D out;
    out.center.assign(center.data(), center.data() + m);
    long last = static_cast<long>(m) - 1;
    if (evals[last - 1] <= 1e-12) {
        // Covariance has rank < 2: project onto the first two coordinates.
        out.fallback = true;
        out.basis_u.assign(m, 0.0);
        out.basis_v.assign(m, 0.0);
        out.basis_u[0] = 1.0;
        out.basis_v[1] = 1.0;
        out.center.assign(m, 0.0);
    } else {
        Eigen::VectorXd u = es.eigenvectors().col(last);
        Eigen::VectorXd v = es.eigenvectors().col(last - 1);
        auto fix_sign = [](Eigen::VectorXd& vec) {
            long arg = 0;
            vec.cwiseAbs().maxCoeff(&arg);
            if (vec[arg] < 0.0) vec = -vec;
        };
        fix_sign(u);
        fix_sign(v);
        out.basis_u.assign(u.data(), u.data() + m);
        out.basis_v.assign(v.data(), v.data() + m);
    }
    for (const auto& r : records) {
        double pu = 0.0, pv = 0.0;
        for (size_t j = 0; j < m; ++j) {
            double x = r.mu[j] - out.center[j];
            pu += x * out.basis_u[j];
            pv += x * out.basis_v[j];
        }
        out.coords[r.image_id] = {pu, pv};
    }
    return out;
}

namespace {

std::string fmt(double v) {
    char buf[40];
    std::snprintf(buf, sizeof(buf), "%.9g", v);
    return buf;
}

}  // namespace

void write_embedding_csv(const std::vector<EmbeddingRecord>& records, const Projection2D& proj,
                         const std::string& path) {
    std::ofstream f(path);
    if (!f) throw RuntimeFault("cannot write embedding CSV: " + path);
    f << "image_id,u,v,true_mem,false_mem,leaf\n";
    for (const auto& r : records) {
        auto [u, v] = proj.coords.at(r.image_id);
        f << r.image_id << "," << fmt(u) << "," << fmt(v) << "," << fmt(r.true_mem) << ","
          << fmt(r.false_mem) << "," << r.category.leaf << "\n";
    }
    if (!f) throw RuntimeFault("failed writing embedding CSV: " + path);
}

const std::vector<std::string> kVariantNames = {"n64_m8", "n64_m8_l1", "n128_m32"};

namespace {

struct RefRow {
    double rho_true, mse_true, rho_false, mse_false, rho_all, mse_all;
};

// Published reference magnitudes for the three variants on the original
// human-annotated data; displayed alongside measured values for context.
const std::map<std::string, RefRow> kReference = {
    {"n64_m8", {0.513, 90.812, 0.333, 64.228, 0.53, 83.472}},
    {"n64_m8_l1", {0.543, 72.348, 0.168, 25.131, 0.559, 72.052}},
    {"n128_m32", {0.545, 92.54, 0.369, 70.526, 0.57, 85.379}},
};

}  // namespace

VariantTable build_table1(const std::map<std::string, CategoryReport>& variants) {
    std::string missing;
    for (const auto& name : kVariantNames) {
        if (!variants.count(name)) missing += (missing.empty() ? "" : ", ") + name;
    }
    if (!missing.empty()) {
        throw ValidationError("missing variant results: " + missing);
    }

    VariantTable out;
    for (const auto& name : kVariantNames) {
        const AggRow& o = variants.at(name).overall;
        out.json[name] = {
            {"true", {{"rho", o.rho_true.mean}, {"mse", o.mse_true.mean}}},
            {"false", {{"rho", o.rho_false.mean}, {"mse", o.mse_false.mean}}},
            {"all", {{"rho", o.rho_all.mean}, {"mse", o.mse_all.mean}}},
        };
    }

    char line[160];
    std::string text;
    text += "variant      channel    rho      mse        ref rho  ref mse\n";
    for (const auto& name : kVariantNames) {
        const AggRow& o = variants.at(name).overall;
        const RefRow& ref = kReference.at(name);
        struct Row {
            const char* ch;
            double rho, mse, rr, rm;
        } rows[3] = {
            {"true", o.rho_true.mean, o.mse_true.mean, ref.rho_true, ref.mse_true},
            {"false", o.rho_false.mean, o.mse_false.mean, ref.rho_false, ref.mse_false},
            {"all", o.rho_all.mean, o.mse_all.mean, ref.rho_all, ref.mse_all},
        };
        for (const Row& r : rows) {
            std::snprintf(line, sizeof(line), "%-12s %-8s %8.3f %10.3f %8.3f %9.3f\n",
                          name.c_str(), r.ch, r.rho, r.mse, r.rr, r.rm);
            text += line;
        }
    }
    out.text = text;
    return out;
}

std::string build_category_figure(const CategoryReport& report) {
    std::string csv = "leaf,rho_all_mean,rho_all_stddev,count\n";
    for (const auto& leaf : taxonomy_leaves()) {
        const AggRow* row = nullptr;
        for (const auto& r : report.leaves) {
            if (r.label == leaf) {
                row = &r;
                break;
            }
        }
        if (row && row->count > 0) {
            csv += leaf + "," + fmt(row->rho_all.mean) + "," + fmt(row->rho_all.stddev) + "," +
                   std::to_string(row->count) + "\n";
        } else {
            csv += leaf + ",0,0,0\n";
        }
    }
    return csv;
}

namespace {

json agg_row_json(const AggRow& row) {
    return {
        {"count", row.count},
        {"rho_true", {{"mean", row.rho_true.mean}, {"stddev", row.rho_true.stddev}}},
        {"rho_false", {{"mean", row.rho_false.mean}, {"stddev", row.rho_false.stddev}}},
        {"rho_all", {{"mean", row.rho_all.mean}, {"stddev", row.rho_all.stddev}}},
        {"mse_true", {{"mean", row.mse_true.mean}, {"stddev", row.mse_true.stddev}}},
        {"mse_false", {{"mean", row.mse_false.mean}, {"stddev", row.mse_false.stddev}}},
        {"mse_all", {{"mean", row.mse_all.mean}, {"stddev", row.mse_all.stddev}}},
        {"true_mem", {{"mean", row.true_mem.mean}, {"stddev", row.true_mem.stddev}}},
        {"false_mem", {{"mean", row.false_mem.mean}, {"stddev", row.false_mem.stddev}}},
    };
}

}  // namespace

json category_report_json(const CategoryReport& report) {
    json leaves = json::object();
    for (const auto& row : report.leaves) leaves[row.label] = agg_row_json(row);
    return {{"leaves", leaves}, {"overall", agg_row_json(report.overall)}};
}

}  // namespace vmsvae
