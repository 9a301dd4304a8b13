#ifndef MECCH_BENCH_HPP
#define MECCH_BENCH_HPP

#include <string>
#include <vector>

#include "mecch/graph.hpp"
#include "mecch/train.hpp"

namespace mecch {

struct ComplexityRow {
    int n = 0;
    int K = 0;
    int64_t count_mn = 0, count_mc = 0, count_mi = 0;
    int64_t formula_mn = 0, formula_mc = 0, formula_mi = 0;
    bool pass = false;
};

struct ComplexityReport {
    std::vector<ComplexityRow> rows;
    bool all_pass = true;
};

/// For each (n, K): builds the typed tree, counts root aggregations under the
/// three strategies, and checks them against the closed forms n^K,
/// (n^{K+1}-1)/(n-1) and (K+1) n^K, plus the strict MN < MC < MI ordering for
/// n >= 2, K >= 2.
ComplexityReport verify_complexity(const std::vector<int>& n_values,
                                   const std::vector<int>& k_values);

void write_complexity_csv(const ComplexityReport& report, const std::string& path);

/// Three-type citation-shaped fixture (A-P, P-V plus reverses) with the class
/// of each A node planted through class-correlated paper features
/// (Gaussian, sigma 0.5, unit per-coordinate mean separation) and
/// class-biased wiring; 10/10/80 stratified splits.
struct PlantedNcDataset {
    HeteroGraph graph;
    SplitSpec splits;
};

PlantedNcDataset make_planted_nc_dataset(uint64_t seed, int nodes_per_type, int num_classes,
                                         double signal = 1.0);

/// Bipartite user-item target relation with planted blocks plus a tag type
/// shared within blocks; featureless nodes, 70/10/20 edge splits, uniform 1:1
/// fixed evaluation negatives. Only training positives enter the graph.
struct PlantedLpDataset {
    HeteroGraph graph;
    SplitSpec splits;
};

PlantedLpDataset make_planted_lp_dataset(uint64_t seed, int block_count, int nodes_per_block,
                                         double intra_prob = 0.3, double inter_prob = 0.01);

/// Writes a dataset in the TSV formats the CLI loads (schema.txt, nodes.tsv,
/// edges.tsv plus labels/splits or target-edge/negative files).
void write_nc_dataset_files(const PlantedNcDataset& dataset, const std::string& dir);
void write_lp_dataset_files(const PlantedLpDataset& dataset, const std::string& dir);

} // namespace mecch

#endif // MECCH_BENCH_HPP
