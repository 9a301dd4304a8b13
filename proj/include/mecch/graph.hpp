#ifndef MECCH_GRAPH_HPP
#define MECCH_GRAPH_HPP

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

namespace mecch {

using NodeId = int32_t;
using NodeTypeId = int32_t;
using EdgeTypeId = int32_t;

struct EdgeType {
    std::string name;
    NodeTypeId src = -1;
    NodeTypeId dst = -1;
    EdgeTypeId reverse = -1; // paired reverse relation, -1 if undeclared
};

/// Type tables of a heterogeneous graph: node type names plus typed,
/// directed relations. Heterogeneity requires |node types| + |edge types| > 2.
struct Schema {
    std::vector<std::string> node_type_names;
    std::vector<EdgeType> edge_types;

    int num_node_types() const { return static_cast<int>(node_type_names.size()); }
    int num_edge_types() const { return static_cast<int>(edge_types.size()); }

    std::optional<NodeTypeId> find_node_type(const std::string& name) const;
    std::optional<EdgeTypeId> find_edge_type(const std::string& name) const;

    /// Throws SchemaError on dangling endpoints or if the heterogeneity
    /// condition fails.
    void validate() const;
};

/// Schema-level chain of edge types; consecutive relations must share an
/// endpoint type (dst of one = src of the next).
struct Metapath {
    std::vector<EdgeTypeId> edge_types;

    int length() const { return static_cast<int>(edge_types.size()); }
    bool operator==(const Metapath&) const = default;
};

/// Per node type: either a dense row-major feature matrix or featureless
/// (realized downstream as an embedding lookup, never as a one-hot matrix).
struct FeatureTable {
    struct TypeFeatures {
        bool featureless = true;
        int dim = 0;
        std::vector<double> data; // row-major, count(type) x dim
    };
    std::vector<TypeFeatures> per_type;
};

struct CsrAdjacency {
    std::vector<int64_t> offsets; // indexed by type-local source id, size count(src)+1
    std::vector<NodeId> columns;  // global destination ids, sorted within a row
};

/// Immutable typed graph. Internal node ids are global and per-type
/// contiguous: all nodes of type 0 first, then type 1, and so on, which is
/// what makes per-type dense feature matrices and segment ops line up.
class HeteroGraph {
public:
    Schema schema;
    std::vector<NodeTypeId> node_type_of;  // global id -> type
    std::vector<int32_t> type_counts;      // per type
    std::vector<NodeId> type_offsets;      // per type, first global id; size T+1
    std::vector<CsrAdjacency> adjacency;   // per edge type, forward direction
    FeatureTable features;
    std::vector<std::string> ext_ids;      // global id -> external id
    int64_t duplicate_edges_dropped = 0;

    int64_t num_nodes() const { return static_cast<int64_t>(node_type_of.size()); }
    int64_t num_edges() const;

    NodeId global_id(NodeTypeId t, int32_t local) const { return type_offsets[t] + local; }
    int32_t local_id(NodeId v) const { return v - type_offsets[node_type_of[v]]; }
    NodeTypeId type_of(NodeId v) const { return node_type_of[v]; }

    /// Neighbors of v along relation r. Requires type_of(v) == src(r).
    std::span<const NodeId> neighbors(NodeId v, EdgeTypeId r) const;

    std::optional<NodeId> find_external(const std::string& ext_id) const;

    /// FNV-1a over schema, adjacency and type layout; used to key context caches.
    uint64_t content_hash() const;

    /// Builds a canonical graph from parts: validates endpoint types, drops
    /// exact duplicate (src,dst,type) triples, sorts adjacency rows.
    static HeteroGraph build(Schema schema, std::vector<int32_t> type_counts,
                             const std::vector<std::tuple<NodeId, NodeId, EdgeTypeId>>& edges,
                             FeatureTable features = {}, std::vector<std::string> ext_ids = {});

private:
    std::unordered_map<std::string, NodeId> ext_index_;
};

Schema load_schema(const std::string& path);

/// Parses nodes.tsv / edges.tsv into a canonical HeteroGraph. External ids
/// are remapped to dense per-type-contiguous internal ids; the mapping is
/// kept on the graph for re-serialization and embedding export.
HeteroGraph load_graph(const Schema& schema, const std::string& nodes_path,
                       const std::string& edges_path);

/// Inverse of load_graph: writes schema.txt, nodes.tsv and edges.tsv such
/// that reloading yields a byte-identical canonical graph.
void save_graph(const HeteroGraph& g, const std::string& schema_path,
                const std::string& nodes_path, const std::string& edges_path);

/// All chainable edge-type sequences of length K starting at start_type, in
/// lexicographic EdgeTypeId order. Throws ResourceError("metapath_cap_exceeded")
/// when more than max_metapaths exist.
std::vector<Metapath> enumerate_metapaths(const Schema& schema, NodeTypeId start_type, int K,
                                          int max_metapaths = 64);

std::string metapath_display(const Schema& schema, NodeTypeId start_type, const Metapath& p);

/// Regular rooted tree fixture: every node above the leaves has exactly
/// `branching` children, node types follow type_cycle by depth, one relation
/// per depth (endpoints = parent/child types) plus its reverse. The
/// aggregation-count formulas are exact on this family.
HeteroGraph make_typed_tree(int branching, int depth, const std::vector<NodeTypeId>& type_cycle);

/// The root-to-leaf relation chain of a make_typed_tree graph.
Metapath typed_tree_root_metapath(const HeteroGraph& g, int depth);

} // namespace mecch

#endif // MECCH_GRAPH_HPP
