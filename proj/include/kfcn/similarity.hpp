#pragma once

#include <string>
#include <vector>

#include "kfcn/micro_net.hpp"

namespace kfcn::sim {

/// Set of flattened kernels of common length; zero kernels are rejected.
struct KernelSet {
    std::vector<std::vector<double>> kernels;
    std::string tag;
    void validate() const;
};

/// Cosine similarity of the flattened kernels, in [-1, 1].
double sim_pair(std::span<const double> a, std::span<const double> b);

enum class MatchMode {
    Permutation,      // greedy without replacement (default)
    WithReplacement,  // each kernel independently takes its best match
};

/// Greedy sequential matching of A's kernels onto B's: for i = 1..K, pick
/// the best remaining candidate (lowest index on ties). In permutation mode
/// the result is a permutation of 0..K-1.
std::vector<std::size_t> rearrange_match(const KernelSet& A, const KernelSet& B,
                                         MatchMode mode = MatchMode::Permutation);

/// Mean matched-pair similarity of A with respect to B. Not symmetric.
double sim_l(const KernelSet& A, const KernelSet& B, MatchMode mode = MatchMode::Permutation);
/// Same with roles swapped.
double sim_r(const KernelSet& A, const KernelSet& B, MatchMode mode = MatchMode::Permutation);
/// (sim_l + sim_r) / 2; exactly symmetric in (A, B).
double sim_sym(const KernelSet& A, const KernelSet& B, MatchMode mode = MatchMode::Permutation);

/// One kernel vector per out-channel of the given conv layer.
KernelSet kernel_set_from_layer(const net::Parameters& params, const net::NetworkSpec& spec,
                                std::size_t layer_index, const std::string& tag);

struct ReportRow {
    std::string layer;  // C1, C2, ...
    std::string pair;   // e.g. "WL,WR"
    double sim_l;
    double sim_r;
    double sim;
};

/// Per-conv-layer sim_l/sim_r/sim for the pairs (left, right), (left, whole),
/// (right, whole). All three nets must share conv structure.
std::vector<ReportRow> layer_report(const net::NetworkSpec& region_spec,
                                    const net::Parameters& left, const net::Parameters& right,
                                    const net::NetworkSpec& baseline_spec,
                                    const net::Parameters& whole,
                                    MatchMode mode = MatchMode::Permutation);

/// CSV with header layer,pair,sim_l,sim_r,sim; values with four decimals.
void write_report_csv(const std::string& path, const std::vector<ReportRow>& rows);

}  // namespace kfcn::sim
