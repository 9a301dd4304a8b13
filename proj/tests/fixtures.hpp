#ifndef MECCH_TESTS_FIXTURES_HPP
#define MECCH_TESTS_FIXTURES_HPP

#include <filesystem>
#include <fstream>
#include <string>
#include <tuple>
#include <unistd.h>

#include "mecch/graph.hpp"
#include "mecch/rand.hpp"

namespace mecch::testing {

inline std::string temp_dir(const std::string& name) {
    auto dir = std::filesystem::temp_directory_path() /
               ("mecch_" + name + "_" + std::to_string(::getpid()));
    std::filesystem::remove_all(dir);
    std::filesystem::create_directories(dir);
    return dir.string();
}

inline void write_file(const std::string& path, const std::string& content) {
    std::ofstream out(path);
    out << content;
}

// Small academic-network fixture: authors a1,a2 write papers p1..p3, all
// papers published at venue v1. 6 nodes, 14 directed edges. Authors carry
// 3-d features, papers 2-d, venues are featureless.
inline std::string write_g1(const std::string& dir) {
    write_file(dir + "/schema.txt",
               "nodetype A\n"
               "nodetype P\n"
               "nodetype V\n"
               "edgetype writes A P rev=writes_rev\n"
               "edgetype writes_rev P A rev=writes\n"
               "edgetype publishes P V rev=publishes_rev\n"
               "edgetype publishes_rev V P rev=publishes\n");
    write_file(dir + "/nodes.tsv",
               "a1\tA\t1,0,0.5\n"
               "a2\tA\t0,1,-0.5\n"
               "p1\tP\t0.5,-0.5\n"
               "p2\tP\t1,1\n"
               "p3\tP\t-1,2\n"
               "v1\tV\t-\n");
    write_file(dir + "/edges.tsv",
               "a1\tp1\twrites\n"
               "a1\tp2\twrites\n"
               "a2\tp2\twrites\n"
               "a2\tp3\twrites\n"
               "p1\ta1\twrites_rev\n"
               "p2\ta1\twrites_rev\n"
               "p2\ta2\twrites_rev\n"
               "p3\ta2\twrites_rev\n"
               "p1\tv1\tpublishes\n"
               "p2\tv1\tpublishes\n"
               "p3\tv1\tpublishes\n"
               "v1\tp1\tpublishes_rev\n"
               "v1\tp2\tpublishes_rev\n"
               "v1\tp3\tpublishes_rev\n");
    return dir;
}

inline HeteroGraph load_g1(const std::string& dir) {
    write_g1(dir);
    Schema schema = load_schema(dir + "/schema.txt");
    return load_graph(schema, dir + "/nodes.tsv", dir + "/edges.tsv");
}

// Seeded random heterogeneous graph: 2-4 node types, 2-6 edge types with
// random endpoints, <= max_nodes nodes total, random edge counts.
inline HeteroGraph random_hetero_graph(Rng& rng, int max_nodes = 50) {
    const int T = 2 + static_cast<int>(uniform_index(rng, 3));
    const int R = 2 + static_cast<int>(uniform_index(rng, 5));
    Schema schema;
    for (int t = 0; t < T; ++t) schema.node_type_names.push_back("N" + std::to_string(t));
    for (int r = 0; r < R; ++r)
        schema.edge_types.push_back({"E" + std::to_string(r),
                                     static_cast<NodeTypeId>(uniform_index(rng, T)),
                                     static_cast<NodeTypeId>(uniform_index(rng, T)), -1});

    std::vector<int32_t> counts(T);
    int budget = max_nodes;
    for (int t = 0; t < T; ++t) {
        const int cap = std::max(1, budget / (T - t));
        counts[t] = 1 + static_cast<int>(uniform_index(rng, cap));
        budget -= counts[t];
    }

    std::vector<std::tuple<NodeId, NodeId, EdgeTypeId>> edges;
    std::vector<NodeId> offsets(T + 1, 0);
    for (int t = 0; t < T; ++t) offsets[t + 1] = offsets[t] + counts[t];
    for (int r = 0; r < R; ++r) {
        const auto& et = schema.edge_types[r];
        const int n_edges = static_cast<int>(uniform_index(rng, 40));
        for (int e = 0; e < n_edges; ++e)
            edges.emplace_back(
                offsets[et.src] + static_cast<NodeId>(uniform_index(rng, counts[et.src])),
                offsets[et.dst] + static_cast<NodeId>(uniform_index(rng, counts[et.dst])), r);
    }
    return HeteroGraph::build(std::move(schema), std::move(counts), edges);
}

// Brute-force path enumeration over the schema multigraph; the independent
// oracle for enumerate_metapaths.
inline int64_t count_schema_chains(const Schema& schema, NodeTypeId start, int K) {
    if (K == 0) return 1;
    int64_t total = 0;
    for (int r = 0; r < schema.num_edge_types(); ++r)
        if (schema.edge_types[r].src == start)
            total += count_schema_chains(schema, schema.edge_types[r].dst, K - 1);
    return total;
}

} // namespace mecch::testing

#endif // MECCH_TESTS_FIXTURES_HPP
