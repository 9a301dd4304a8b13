#ifndef MECCH_CONTEXT_HPP
#define MECCH_CONTEXT_HPP

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "mecch/graph.hpp"

namespace mecch {

/// Local subgraph of all edges lying on complete length-K metapath instances
/// starting at `center`. Nodes on dead-end partial walks are pruned; a node
/// reached at several positions appears in several layers but only once in
/// node_set.
struct MetapathContext {
    struct LayerEdge {
        int layer; // edge runs from layers[layer] to layers[layer + 1]
        NodeId from;
        NodeId to;
        bool operator==(const LayerEdge&) const = default;
    };

    NodeId center = -1;
    Metapath metapath;
    std::vector<std::vector<NodeId>> layers; // sorted; layers[0] == {center}
    std::vector<LayerEdge> edges;
    std::vector<NodeId> node_set; // sorted union of layers, center always included
    bool empty_context = false;   // no complete instance exists; node_set == {center}
};

MetapathContext build_context(const HeteroGraph& g, const Metapath& p, NodeId v);

/// Exhaustive DFS over complete instances v_1..v_{K+1} with v_1 = v.
/// Independent of build_context by construction; intended for tests and the
/// aggregation-count bench. Throws ResourceError past max_instances.
std::vector<std::vector<NodeId>> oracle_enumerate_instances(const HeteroGraph& g, const Metapath& p,
                                                            NodeId v,
                                                            int64_t max_instances = 1000000);

/// Untyped K-hop ball around v over the union of all relations, layered by
/// BFS distance. Radius semantics: no dead-end pruning.
MetapathContext khop_context(const HeteroGraph& g, NodeId v, int K);

enum class CountStrategy {
    MetapathNeighbors, // distinct endpoints of complete instances
    MetapathInstances, // (K+1) x number of complete instances
    MetapathContexts,  // |node_set| of the metapath context
};

int64_t count_aggregations(const HeteroGraph& g, const Metapath& p, NodeId v, CountStrategy strategy,
                           int64_t max_instances = 1000000);

/// Flat segment layout of precomputed contexts: per metapath, one
/// concatenated node-index array plus per-center offsets. Segment j holds the
/// sorted node_set of center j's context, so a single segment-mean realizes
/// the pooling encoder.
struct ContextStore {
    struct Entry {
        NodeTypeId start_type = -1;
        Metapath metapath;           // empty edge list for self/khop pseudo-metapaths
        std::string display;
        std::vector<int64_t> offsets; // size count(start_type) + 1
        std::vector<NodeId> indices;  // global node ids
    };

    std::vector<Entry> entries;
    std::vector<std::vector<int>> by_type; // type -> entry indices, in build order
    uint64_t graph_hash = 0;
    int K = 0;
    bool khop = false;

    size_t total_bytes() const;
};

struct ContextBuildOptions {
    int threads = 1;
    // Guard on total stored indices, in bytes.
    size_t memory_budget_bytes = size_t(2) << 30;
};

/// Contexts for every node of every type, one entry per (type, metapath).
/// Types with no incoming metapath list get a degenerate "self" entry whose
/// segments are singletons. Output layout is independent of thread count.
ContextStore build_all_contexts(const HeteroGraph& g,
                                const std::vector<std::vector<Metapath>>& metapaths_by_type,
                                const ContextBuildOptions& options = {});

/// One K-hop pseudo-metapath per node type; same layout as build_all_contexts.
ContextStore build_khop_store(const HeteroGraph& g, int K,
                              const ContextBuildOptions& options = {});

void save_context_cache(const ContextStore& store, const std::string& path);

/// Loads a cache written by save_context_cache. Returns nullopt when the file
/// is absent, malformed, or keyed to a different graph/K/variant.
std::optional<ContextStore> load_context_cache(const std::string& path, uint64_t graph_hash, int K,
                                               bool khop);

} // namespace mecch

#endif // MECCH_CONTEXT_HPP
