#include "kfcn/similarity.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>

#include "kfcn/tensor.hpp"

namespace kfcn::sim {

void KernelSet::validate() const {
    if (kernels.empty()) throw ArgumentError("KernelSet: empty set");
    const std::size_t len = kernels.front().size();
    for (const auto& k : kernels) {
        if (k.size() != len) throw DimensionError("KernelSet: kernels of mixed length");
        if (norm(k) == 0.0) throw DegenerateVectorError("KernelSet: zero kernel rejected");
    }
}

double sim_pair(std::span<const double> a, std::span<const double> b) {
    const double na = norm(a), nb = norm(b);
    if (na == 0.0 || nb == 0.0) throw DegenerateVectorError("sim_pair: zero kernel");
    return dot(a, b) / (na * nb);
}

std::vector<std::size_t> rearrange_match(const KernelSet& A, const KernelSet& B, MatchMode mode) {
    A.validate();
    B.validate();
    const std::size_t K = A.kernels.size();
    if (B.kernels.size() != K) {
        throw ArgumentError("rearrange_match: set sizes " + std::to_string(K) + " vs " +
                            std::to_string(B.kernels.size()));
    }
    std::vector<std::size_t> match(K);
    std::vector<bool> used(K, false);
    for (std::size_t i = 0; i < K; ++i) {
        double best = -2.0;
        std::size_t bestJ = K;
        for (std::size_t j = 0; j < K; ++j) {
            if (mode == MatchMode::Permutation && used[j]) continue;
            const double s = sim_pair(A.kernels[i], B.kernels[j]);
            if (s > best) {  // strict: ties keep the lowest j
                best = s;
                bestJ = j;
            }
        }
        match[i] = bestJ;
        used[bestJ] = true;
    }
    return match;
}

double sim_l(const KernelSet& A, const KernelSet& B, MatchMode mode) {
    const std::vector<std::size_t> match = rearrange_match(A, B, mode);
    double acc = 0.0;
    for (std::size_t i = 0; i < match.size(); ++i) {
        acc += sim_pair(A.kernels[i], B.kernels[match[i]]);
    }
    return acc / static_cast<double>(match.size());
}

double sim_r(const KernelSet& A, const KernelSet& B, MatchMode mode) { return sim_l(B, A, mode); }

double sim_sym(const KernelSet& A, const KernelSet& B, MatchMode mode) {
    return 0.5 * (sim_l(A, B, mode) + sim_r(A, B, mode));
}

KernelSet kernel_set_from_layer(const net::Parameters& params, const net::NetworkSpec& spec,
                                std::size_t layer_index, const std::string& tag) {
    const Tensor k = net::get_kernels(params, spec, layer_index);
    KernelSet set;
    set.tag = tag;
    const std::size_t O = k.dim(0);
    const std::size_t len = k.size() / O;
    for (std::size_t o = 0; o < O; ++o) {
        set.kernels.emplace_back(k.data() + o * len, k.data() + (o + 1) * len);
    }
    set.validate();
    return set;
}

std::vector<ReportRow> layer_report(const net::NetworkSpec& region_spec,
                                    const net::Parameters& left, const net::Parameters& right,
                                    const net::NetworkSpec& baseline_spec,
                                    const net::Parameters& whole, MatchMode mode) {
    if (!region_spec.sameConvStructure(baseline_spec)) {
        throw ArgumentError("layer_report: networks do not share conv structure");
    }
    std::vector<ReportRow> rows;
    std::size_t convIndex = 0;
    for (std::size_t li = 0; li < region_spec.layers.size(); ++li) {
        if (region_spec.layers[li].kind != net::LayerKind::Conv) continue;
        ++convIndex;
        const std::string layerName = "C" + std::to_string(convIndex);
        const KernelSet WL = kernel_set_from_layer(left, region_spec, li, "WL");
        const KernelSet WR = kernel_set_from_layer(right, region_spec, li, "WR");
        const KernelSet WT = kernel_set_from_layer(whole, baseline_spec, li, "WT");
        const std::array<std::pair<std::string, std::pair<const KernelSet*, const KernelSet*>>, 3>
            pairs{{{"WL,WR", {&WL, &WR}}, {"WL,WT", {&WL, &WT}}, {"WR,WT", {&WR, &WT}}}};
        for (const auto& [name, ab] : pairs) {
            ReportRow row;
            row.layer = layerName;
            row.pair = name;
            row.sim_l = sim_l(*ab.first, *ab.second, mode);
            row.sim_r = sim_r(*ab.first, *ab.second, mode);
            row.sim = 0.5 * (row.sim_l + row.sim_r);
            rows.push_back(row);
        }
    }
    return rows;
}

void write_report_csv(const std::string& path, const std::vector<ReportRow>& rows) {
    std::ofstream f(path, std::ios::binary);
    if (!f) throw ArgumentError("write_report_csv: cannot open " + path);
    f << "layer,pair,sim_l,sim_r,sim\n";
    char buf[160];
    for (const auto& r : rows) {
        std::snprintf(buf, sizeof(buf), "%s,\"%s\",%.4f,%.4f,%.4f\n", r.layer.c_str(),
                      r.pair.c_str(), r.sim_l, r.sim_r, r.sim);
        f << buf;
    }
}

}  // namespace kfcn::sim
