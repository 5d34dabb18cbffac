#include "vmsvae/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include <boost/math/distributions/students_t.hpp>

#include "vmsvae/common.hpp"

namespace vmsvae {

namespace {

bool is_constant(const std::vector<float>& v) {
    auto [mn, mx] = std::minmax_element(v.begin(), v.end());
    return *mn == *mx;
}

double pearson_flat(const std::vector<float>& a, const std::vector<float>& b) {
    size_t n = a.size();
    double ma = 0.0, mb = 0.0;
    for (size_t i = 0; i < n; ++i) {
        ma += a[i];
        mb += b[i];
    }
    ma /= static_cast<double>(n);
    mb /= static_cast<double>(n);
    double sab = 0.0, saa = 0.0, sbb = 0.0;
    for (size_t i = 0; i < n; ++i) {
        double da = a[i] - ma, db = b[i] - mb;
        sab += da * db;
        saa += da * da;
        sbb += db * db;
    }
    return std::clamp(sab / std::sqrt(saa * sbb), -1.0, 1.0);
}

}  // namespace

Pearson2dResult pearson2d(const std::vector<float>& a, const std::vector<float>& b) {
    if (a.empty() || a.size() != b.size()) {
        throw ValidationError("pearson2d requires two non-empty grids of identical shape");
    }
    if (is_constant(a) || is_constant(b)) {
        return {0.0, true};
    }
    return {pearson_flat(a, b), false};
}

namespace {

double mse_8bit(const std::vector<float>& p, const std::vector<float>& g) {
    double s = 0.0;
    for (size_t i = 0; i < p.size(); ++i) {
        double d = (static_cast<double>(p[i]) - g[i]) * 255.0;
        s += d * d;
    }
    return s / static_cast<double>(p.size());
}

std::vector<float> concat(const std::vector<float>& a, const std::vector<float>& b) {
    std::vector<float> out;
    out.reserve(a.size() + b.size());
    out.insert(out.end(), a.begin(), a.end());
    out.insert(out.end(), b.begin(), b.end());
    return out;
}

}  // namespace

MapScore score_map(const VmsMap& pred, const VmsMap& gt) {
    MapScore s;
    auto rt = pearson2d(pred.true_channel, gt.true_channel);
    auto rf = pearson2d(pred.false_channel, gt.false_channel);
    auto ra = pearson2d(concat(pred.true_channel, pred.false_channel),
                        concat(gt.true_channel, gt.false_channel));
    s.rho_true = rt.rho;
    s.rho_false = rf.rho;
    s.rho_all = ra.rho;
    s.degenerate_true = rt.degenerate;
    s.degenerate_false = rf.degenerate;
    s.degenerate_all = ra.degenerate;
    s.mse_true = mse_8bit(pred.true_channel, gt.true_channel);
    s.mse_false = mse_8bit(pred.false_channel, gt.false_channel);
    s.mse_all = 0.5 * (s.mse_true + s.mse_false);
    return s;
}

MemorabilityPair memorability_from_map(const VmsMap& v) {
    MemorabilityPair m;
    m.true_mem = std::accumulate(v.true_channel.begin(), v.true_channel.end(), 0.0) /
                 static_cast<double>(kMapCells);
    m.false_mem = std::accumulate(v.false_channel.begin(), v.false_channel.end(), 0.0) /
                  static_cast<double>(kMapCells);
    return m;
}

namespace {

// 1-based ranks with ties replaced by their mean rank.
std::vector<double> average_ranks(const std::vector<double>& xs) {
    size_t n = xs.size();
    std::vector<size_t> order(n);
    std::iota(order.begin(), order.end(), size_t{0});
    std::stable_sort(order.begin(), order.end(),
                     [&](size_t i, size_t j) { return xs[i] < xs[j]; });
    std::vector<double> ranks(n);
    size_t i = 0;
    while (i < n) {
        size_t j = i;
        while (j + 1 < n && xs[order[j + 1]] == xs[order[i]]) ++j;
        double mean_rank = (static_cast<double>(i) + static_cast<double>(j)) / 2.0 + 1.0;
        for (size_t k = i; k <= j; ++k) ranks[order[k]] = mean_rank;
        i = j + 1;
    }
    return ranks;
}

}  // namespace

SpearmanResult spearman(const std::vector<double>& xs, const std::vector<double>& ys) {
    if (xs.size() != ys.size()) {
        throw ValidationError("spearman inputs differ in length");
    }
    if (xs.size() < 3) {
        throw ValidationError("spearman needs at least 3 observations");
    }
    SpearmanResult r;
    r.n = xs.size();
    auto rx = average_ranks(xs);
    auto ry = average_ranks(ys);
    auto variance = [](const std::vector<double>& v) {
        double m = std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
        double s = 0.0;
        for (double x : v) s += (x - m) * (x - m);
        return s;
    };
    if (variance(rx) == 0.0 || variance(ry) == 0.0) {
        r.degenerate = true;
        return r;
    }
    double mx = std::accumulate(rx.begin(), rx.end(), 0.0) / static_cast<double>(r.n);
    double my = std::accumulate(ry.begin(), ry.end(), 0.0) / static_cast<double>(r.n);
    double sxy = 0.0, sxx = 0.0, syy = 0.0;
    for (size_t i = 0; i < r.n; ++i) {
        double dx = rx[i] - mx, dy = ry[i] - my;
        sxy += dx * dy;
        sxx += dx * dx;
        syy += dy * dy;
    }
    r.rho = std::clamp(sxy / std::sqrt(sxx * syy), -1.0, 1.0);
    if (std::abs(r.rho) >= 1.0) {
        r.p = 0.0;
        return r;
    }
    double df = static_cast<double>(r.n) - 2.0;
    double t = r.rho * std::sqrt(df / (1.0 - r.rho * r.rho));
    boost::math::students_t dist(df);
    r.p = 2.0 * boost::math::cdf(boost::math::complement(dist, std::abs(t)));
    return r;
}

namespace {

Stat make_stat(const std::vector<double>& v) {
    Stat s;
    if (v.empty()) return s;
    s.mean = std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
    double acc = 0.0;
    for (double x : v) acc += (x - s.mean) * (x - s.mean);
    s.stddev = std::sqrt(acc / static_cast<double>(v.size()));
    return s;
}

struct Bucket {
    std::vector<double> rho_true, rho_false, rho_all;
    std::vector<double> mse_true, mse_false, mse_all;
    std::vector<double> true_mem, false_mem;

    AggRow fold(const std::string& label) const {
        AggRow row;
        row.label = label;
        row.count = rho_true.size();
        row.rho_true = make_stat(rho_true);
        row.rho_false = make_stat(rho_false);
        row.rho_all = make_stat(rho_all);
        row.mse_true = make_stat(mse_true);
        row.mse_false = make_stat(mse_false);
        row.mse_all = make_stat(mse_all);
        row.true_mem = make_stat(true_mem);
        row.false_mem = make_stat(false_mem);
        return row;
    }
};

}  // namespace

CategoryReport category_report(const std::vector<MapScore>& scores,
                               const std::vector<MemorabilityPair>& mems,
                               const std::map<std::string, CategoryPath>& cats) {
    std::map<std::string, const MemorabilityPair*> mem_by_id;
    for (const auto& m : mems) mem_by_id[m.image_id] = &m;

    std::vector<Bucket> buckets(kLeafCount + 1);  // last = overall
    for (const auto& s : scores) {
        auto ci = cats.find(s.image_id);
        if (ci == cats.end()) {
            throw ValidationError("image " + s.image_id + " has no category");
        }
        auto mi = mem_by_id.find(s.image_id);
        if (mi == mem_by_id.end()) {
            throw ValidationError("image " + s.image_id + " has no memorability entry");
        }
        int li = leaf_index(ci->second.leaf);
        for (Bucket* b : {&buckets[static_cast<size_t>(li)], &buckets[kLeafCount]}) {
            b->rho_true.push_back(s.rho_true);
            b->rho_false.push_back(s.rho_false);
            b->rho_all.push_back(s.rho_all);
            b->mse_true.push_back(s.mse_true);
            b->mse_false.push_back(s.mse_false);
            b->mse_all.push_back(s.mse_all);
            b->true_mem.push_back(mi->second->true_mem);
            b->false_mem.push_back(mi->second->false_mem);
        }
    }
    CategoryReport rep;
    const auto& leaves = taxonomy_leaves();
    for (size_t i = 0; i < kLeafCount; ++i) {
        rep.leaves.push_back(buckets[i].fold(leaves[i]));
    }
    rep.overall = buckets[kLeafCount].fold("overall");
    return rep;
}

SpearmanResult compare_category_distributions(const CategoryReport& a, const CategoryReport& b,
                                              MemField field) {
    if (a.leaves.size() != b.leaves.size()) {
        throw ValidationError("category reports cover different taxonomies");
    }
    std::vector<double> xs, ys;
    for (size_t i = 0; i < a.leaves.size(); ++i) {
        if (a.leaves[i].label != b.leaves[i].label) {
            throw ValidationError("category reports cover different taxonomies");
        }
        const Stat& sa = field == MemField::kTrueMem ? a.leaves[i].true_mem : a.leaves[i].false_mem;
        const Stat& sb = field == MemField::kTrueMem ? b.leaves[i].true_mem : b.leaves[i].false_mem;
        xs.push_back(sa.mean);
        ys.push_back(sb.mean);
    }
    return spearman(xs, ys);
}

SpearmanResult correlate_with_scores(const std::vector<MemorabilityPair>& mems,
                                     const std::map<std::string, double>& scores) {
    std::vector<std::pair<std::string, double>> common;  // (id, true_mem), sorted by id
    for (const auto& m : mems) {
        if (scores.count(m.image_id)) common.emplace_back(m.image_id, m.true_mem);
    }
    std::sort(common.begin(), common.end());
    if (common.size() < 3) {
        throw ValidationError("fewer than 3 ids in common with the score table");
    }
    std::vector<double> xs, ys;
    for (const auto& [id, mem] : common) {
        xs.push_back(mem);
        ys.push_back(scores.at(id));
    }
    return spearman(xs, ys);
}

SaliencyCorrelation correlate_with_saliency(
    const std::vector<std::pair<std::string, VmsMap>>& preds,
    const std::map<std::string, std::vector<float>>& saliency) {
    SaliencyCorrelation out;
    double st = 0.0, sf = 0.0, sa = 0.0;
    size_t nt = 0, nf = 0, na = 0;
    for (const auto& [id, vms] : preds) {
        auto it = saliency.find(id);
        if (it == saliency.end()) {
            ++out.skipped;
            continue;
        }
        ++out.used;
        const auto& sal = it->second;
        auto rt = pearson2d(vms.true_channel, sal);
        auto rf = pearson2d(vms.false_channel, sal);
        auto ra = pearson2d(concat(vms.true_channel, vms.false_channel), concat(sal, sal));
        if (rt.degenerate) ++out.degenerate_true; else { st += rt.rho; ++nt; }
        if (rf.degenerate) ++out.degenerate_false; else { sf += rf.rho; ++nf; }
        if (ra.degenerate) ++out.degenerate_all; else { sa += ra.rho; ++na; }
    }
    if (nt) out.mean_true = st / static_cast<double>(nt);
    if (nf) out.mean_false = sf / static_cast<double>(nf);
    if (na) out.mean_all = sa / static_cast<double>(na);
    return out;
}

}  // namespace vmsvae
