#include "mecch/graph.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>
#include <tuple>

#include "mecch/errors.hpp"

namespace mecch {

std::optional<NodeTypeId> Schema::find_node_type(const std::string& name) const {
    for (size_t i = 0; i < node_type_names.size(); ++i)
        if (node_type_names[i] == name) return static_cast<NodeTypeId>(i);
    return std::nullopt;
}

std::optional<EdgeTypeId> Schema::find_edge_type(const std::string& name) const {
    for (size_t i = 0; i < edge_types.size(); ++i)
        if (edge_types[i].name == name) return static_cast<EdgeTypeId>(i);
    return std::nullopt;
}

void Schema::validate() const {
    if (num_node_types() + num_edge_types() <= 2)
        throw SchemaError("schema is not heterogeneous: need |node types| + |edge types| > 2, got " +
                          std::to_string(num_node_types()) + " + " + std::to_string(num_edge_types()));
    for (const auto& et : edge_types) {
        if (et.src < 0 || et.src >= num_node_types() || et.dst < 0 || et.dst >= num_node_types())
            throw SchemaError("edge type '" + et.name + "' references an unknown node type");
        if (et.reverse >= num_edge_types())
            throw SchemaError("edge type '" + et.name + "' references an unknown reverse relation");
    }
}

int64_t HeteroGraph::num_edges() const {
    int64_t n = 0;
    for (const auto& adj : adjacency) n += static_cast<int64_t>(adj.columns.size());
    return n;
}

std::span<const NodeId> HeteroGraph::neighbors(NodeId v, EdgeTypeId r) const {
    if (r < 0 || r >= schema.num_edge_types())
        throw ContractError("neighbors: edge type " + std::to_string(r) + " out of range");
    const EdgeType& et = schema.edge_types[r];
    if (node_type_of[v] != et.src)
        throw ContractError("neighbors: node " + std::to_string(v) + " has type '" +
                            schema.node_type_names[node_type_of[v]] + "', relation '" + et.name +
                            "' expects source type '" + schema.node_type_names[et.src] + "'");
    const CsrAdjacency& adj = adjacency[r];
    int32_t local = local_id(v);
    return {adj.columns.data() + adj.offsets[local],
            adj.columns.data() + adj.offsets[local + 1]};
}

std::optional<NodeId> HeteroGraph::find_external(const std::string& ext_id) const {
    auto it = ext_index_.find(ext_id);
    if (it == ext_index_.end()) return std::nullopt;
    return it->second;
}

namespace {

uint64_t fnv1a(uint64_t h, const void* data, size_t n) {
    const auto* p = static_cast<const unsigned char*>(data);
    for (size_t i = 0; i < n; ++i) {
        h ^= p[i];
        h *= 1099511628211ULL;
    }
    return h;
}

uint64_t fnv1a_str(uint64_t h, const std::string& s) { return fnv1a(h, s.data(), s.size()); }

} // namespace

uint64_t HeteroGraph::content_hash() const {
    uint64_t h = 1469598103934665603ULL;
    for (const auto& name : schema.node_type_names) h = fnv1a_str(h, name);
    for (const auto& et : schema.edge_types) {
        h = fnv1a_str(h, et.name);
        int32_t ends[3] = {et.src, et.dst, et.reverse};
        h = fnv1a(h, ends, sizeof(ends));
    }
    h = fnv1a(h, type_counts.data(), type_counts.size() * sizeof(int32_t));
    for (const auto& adj : adjacency) {
        h = fnv1a(h, adj.offsets.data(), adj.offsets.size() * sizeof(int64_t));
        h = fnv1a(h, adj.columns.data(), adj.columns.size() * sizeof(NodeId));
    }
    return h;
}

HeteroGraph HeteroGraph::build(Schema schema, std::vector<int32_t> type_counts,
                               const std::vector<std::tuple<NodeId, NodeId, EdgeTypeId>>& edges,
                               FeatureTable features, std::vector<std::string> ext_ids) {
    schema.validate();
    const int T = schema.num_node_types();
    if (static_cast<int>(type_counts.size()) != T)
        throw ContractError("build: type_counts size does not match schema");

    HeteroGraph g;
    g.schema = std::move(schema);
    g.type_counts = std::move(type_counts);
    g.type_offsets.resize(T + 1, 0);
    for (int t = 0; t < T; ++t) g.type_offsets[t + 1] = g.type_offsets[t] + g.type_counts[t];
    const int64_t n_nodes = g.type_offsets[T];
    g.node_type_of.resize(n_nodes);
    for (int t = 0; t < T; ++t)
        for (NodeId v = g.type_offsets[t]; v < g.type_offsets[t + 1]; ++v) g.node_type_of[v] = t;

    if (features.per_type.empty()) features.per_type.resize(T);
    for (int t = 0; t < T; ++t) {
        const auto& f = features.per_type[t];
        if (!f.featureless &&
            static_cast<int64_t>(f.data.size()) != static_cast<int64_t>(g.type_counts[t]) * f.dim)
            throw IntegrityError("feature matrix of type '" + g.schema.node_type_names[t] +
                                 "' has wrong extent");
        for (double x : f.data)
            if (!std::isfinite(x))
                throw IntegrityError("non-finite feature value in type '" +
                                     g.schema.node_type_names[t] + "'");
    }
    g.features = std::move(features);

    if (ext_ids.empty()) {
        ext_ids.resize(n_nodes);
        for (int64_t v = 0; v < n_nodes; ++v) ext_ids[v] = std::to_string(v);
    }
    if (static_cast<int64_t>(ext_ids.size()) != n_nodes)
        throw ContractError("build: ext_ids size does not match node count");
    g.ext_ids = std::move(ext_ids);
    for (int64_t v = 0; v < n_nodes; ++v) g.ext_index_.emplace(g.ext_ids[v], static_cast<NodeId>(v));

    // Bucket edges per relation, validate endpoint types, sort, dedup.
    const int R = g.schema.num_edge_types();
    std::vector<std::vector<std::pair<NodeId, NodeId>>> buckets(R);
    for (const auto& [u, v, r] : edges) {
        if (r < 0 || r >= R) throw IntegrityError("edge references unknown edge type id");
        if (u < 0 || u >= n_nodes || v < 0 || v >= n_nodes)
            throw IntegrityError("edge endpoint out of range");
        const EdgeType& et = g.schema.edge_types[r];
        if (g.node_type_of[u] != et.src || g.node_type_of[v] != et.dst)
            throw SchemaError("edge (" + g.ext_ids[u] + " -> " + g.ext_ids[v] +
                              ") does not match endpoint types of relation '" + et.name + "'");
        buckets[r].emplace_back(u, v);
    }

    g.adjacency.resize(R);
    for (int r = 0; r < R; ++r) {
        auto& bucket = buckets[r];
        std::sort(bucket.begin(), bucket.end());
        auto last = std::unique(bucket.begin(), bucket.end());
        g.duplicate_edges_dropped += bucket.end() - last;
        bucket.erase(last, bucket.end());

        const int32_t n_src = g.type_counts[g.schema.edge_types[r].src];
        CsrAdjacency& adj = g.adjacency[r];
        adj.offsets.assign(n_src + 1, 0);
        for (const auto& [u, v] : bucket) adj.offsets[g.local_id(u) + 1]++;
        for (int32_t i = 0; i < n_src; ++i) adj.offsets[i + 1] += adj.offsets[i];
        adj.columns.resize(bucket.size());
        // bucket is sorted by (u, v), so columns land sorted within each row
        size_t k = 0;
        for (const auto& [u, v] : bucket) adj.columns[k++] = v;
    }

    // A declared reverse pairing promises (u,v) in r iff (v,u) in rev(r).
    for (int r = 0; r < R; ++r) {
        const EdgeType& et = g.schema.edge_types[r];
        if (et.reverse < 0) continue;
        const CsrAdjacency& adj = g.adjacency[r];
        for (int32_t i = 0; i < g.type_counts[et.src]; ++i) {
            NodeId u = g.global_id(et.src, i);
            for (int64_t k = adj.offsets[i]; k < adj.offsets[i + 1]; ++k) {
                auto back = g.neighbors(adj.columns[k], et.reverse);
                if (!std::binary_search(back.begin(), back.end(), u))
                    throw IntegrityError("edge (" + g.ext_ids[u] + " -> " +
                                         g.ext_ids[adj.columns[k]] + ") of relation '" + et.name +
                                         "' has no counterpart in its declared reverse '" +
                                         g.schema.edge_types[et.reverse].name + "'");
            }
        }
    }
    return g;
}

namespace {

std::vector<std::string> split_tabs(const std::string& line) {
    std::vector<std::string> out;
    size_t start = 0;
    while (true) {
        size_t pos = line.find('\t', start);
        if (pos == std::string::npos) {
            out.push_back(line.substr(start));
            break;
        }
        out.push_back(line.substr(start, pos - start));
        start = pos + 1;
    }
    return out;
}

bool skip_line(const std::string& line) { return line.empty() || line[0] == '#'; }

std::string strip_cr(std::string line) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    return line;
}

double parse_double(const std::string& s, const std::string& where, int line_no) {
    try {
        size_t used = 0;
        double x = std::stod(s, &used);
        if (used != s.size()) throw std::invalid_argument(s);
        return x;
    } catch (const std::exception&) {
        throw ParseError(where + ":" + std::to_string(line_no) + ": bad number '" + s + "'");
    }
}

} // namespace

Schema load_schema(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ParseError("cannot open schema file '" + path + "'");

    Schema schema;
    std::vector<std::pair<EdgeTypeId, std::string>> rev_decls;
    std::string line;
    int line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        line = strip_cr(line);
        if (skip_line(line)) continue;
        std::istringstream ss(line);
        std::string kind;
        ss >> kind;
        if (kind == "nodetype") {
            std::string name;
            if (!(ss >> name))
                throw ParseError(path + ":" + std::to_string(line_no) + ": nodetype needs a name");
            if (schema.find_node_type(name))
                throw ParseError(path + ":" + std::to_string(line_no) + ": duplicate node type '" + name + "'");
            schema.node_type_names.push_back(name);
        } else if (kind == "edgetype") {
            std::string name, src, dst, extra;
            if (!(ss >> name >> src >> dst))
                throw ParseError(path + ":" + std::to_string(line_no) +
                                 ": edgetype needs <name> <src> <dst>");
            auto s = schema.find_node_type(src);
            auto d = schema.find_node_type(dst);
            if (!s || !d)
                throw SchemaError(path + ":" + std::to_string(line_no) +
                                  ": edge type '" + name + "' references an unknown node type");
            EdgeType et{name, *s, *d, -1};
            if (ss >> extra) {
                if (extra.rfind("rev=", 0) != 0)
                    throw ParseError(path + ":" + std::to_string(line_no) + ": expected rev=<name>");
                rev_decls.emplace_back(static_cast<EdgeTypeId>(schema.edge_types.size()),
                                       extra.substr(4));
            }
            if (schema.find_edge_type(name))
                throw ParseError(path + ":" + std::to_string(line_no) + ": duplicate edge type '" + name + "'");
            schema.edge_types.push_back(et);
        } else {
            throw ParseError(path + ":" + std::to_string(line_no) + ": unknown directive '" + kind + "'");
        }
    }
    for (const auto& [id, rev_name] : rev_decls) {
        auto rev = schema.find_edge_type(rev_name);
        if (!rev)
            throw SchemaError("reverse relation '" + rev_name + "' of '" +
                              schema.edge_types[id].name + "' is not declared");
        schema.edge_types[id].reverse = *rev;
    }
    schema.validate();
    for (const auto& et : schema.edge_types) {
        if (et.reverse >= 0) {
            const EdgeType& r = schema.edge_types[et.reverse];
            if (r.src != et.dst || r.dst != et.src)
                throw SchemaError("relation '" + et.name + "' and its reverse '" + r.name +
                                  "' have incompatible endpoint types");
        }
    }
    return schema;
}

HeteroGraph load_graph(const Schema& schema, const std::string& nodes_path,
                       const std::string& edges_path) {
    schema.validate();
    const int T = schema.num_node_types();

    std::ifstream nodes_in(nodes_path);
    if (!nodes_in) throw ParseError("cannot open nodes file '" + nodes_path + "'");

    // First pass over nodes: assign per-type-contiguous internal ids in file
    // order within each type.
    struct RawNode {
        std::string ext;
        NodeTypeId type;
        std::vector<double> feats;
        bool featureless;
    };
    std::vector<std::vector<RawNode>> by_type(T);
    std::unordered_map<std::string, int> seen;
    std::string line;
    int line_no = 0;
    while (std::getline(nodes_in, line)) {
        ++line_no;
        line = strip_cr(line);
        if (skip_line(line)) continue;
        auto cols = split_tabs(line);
        if (cols.size() != 3)
            throw ParseError(nodes_path + ":" + std::to_string(line_no) +
                             ": expected <ext_id>\\t<type>\\t<features>");
        auto t = schema.find_node_type(cols[1]);
        if (!t)
            throw SchemaError(nodes_path + ":" + std::to_string(line_no) + ": unknown node type '" +
                              cols[1] + "'");
        if (!seen.emplace(cols[0], line_no).second)
            throw IntegrityError(nodes_path + ":" + std::to_string(line_no) + ": duplicate node id '" +
                                 cols[0] + "'");
        RawNode rn{cols[0], *t, {}, cols[2] == "-"};
        if (!rn.featureless) {
            std::stringstream fs(cols[2]);
            std::string item;
            while (std::getline(fs, item, ','))
                rn.feats.push_back(parse_double(item, nodes_path, line_no));
            if (rn.feats.empty())
                throw ParseError(nodes_path + ":" + std::to_string(line_no) + ": empty feature list");
            for (double x : rn.feats)
                if (!std::isfinite(x))
                    throw IntegrityError(nodes_path + ":" + std::to_string(line_no) +
                                         ": non-finite feature value");
        }
        by_type[*t].push_back(std::move(rn));
    }

    std::vector<int32_t> counts(T);
    FeatureTable features;
    features.per_type.resize(T);
    std::vector<std::string> ext_ids;
    std::unordered_map<std::string, NodeId> ext_to_id;
    for (int t = 0; t < T; ++t) {
        counts[t] = static_cast<int32_t>(by_type[t].size());
        auto& tf = features.per_type[t];
        if (!by_type[t].empty()) {
            tf.featureless = by_type[t][0].featureless;
            tf.dim = tf.featureless ? 0 : static_cast<int>(by_type[t][0].feats.size());
        }
        for (const auto& rn : by_type[t]) {
            if (rn.featureless != tf.featureless ||
                (!tf.featureless && static_cast<int>(rn.feats.size()) != tf.dim))
                throw IntegrityError(nodes_path + ": node '" + rn.ext + "' of type '" +
                                     schema.node_type_names[t] +
                                     "' disagrees with its type's feature dimensionality");
            ext_to_id.emplace(rn.ext, static_cast<NodeId>(ext_ids.size()));
            ext_ids.push_back(rn.ext);
            if (!tf.featureless) tf.data.insert(tf.data.end(), rn.feats.begin(), rn.feats.end());
        }
    }

    std::ifstream edges_in(edges_path);
    if (!edges_in) throw ParseError("cannot open edges file '" + edges_path + "'");
    std::vector<std::tuple<NodeId, NodeId, EdgeTypeId>> edges;
    line_no = 0;
    while (std::getline(edges_in, line)) {
        ++line_no;
        line = strip_cr(line);
        if (skip_line(line)) continue;
        auto cols = split_tabs(line);
        if (cols.size() != 3)
            throw ParseError(edges_path + ":" + std::to_string(line_no) +
                             ": expected <src>\\t<dst>\\t<edge_type>");
        auto r = schema.find_edge_type(cols[2]);
        if (!r)
            throw SchemaError(edges_path + ":" + std::to_string(line_no) + ": unknown edge type '" +
                              cols[2] + "'");
        auto u = ext_to_id.find(cols[0]);
        auto v = ext_to_id.find(cols[1]);
        if (u == ext_to_id.end() || v == ext_to_id.end())
            throw IntegrityError(edges_path + ":" + std::to_string(line_no) +
                                 ": edge references unknown node id '" +
                                 (u == ext_to_id.end() ? cols[0] : cols[1]) + "'");
        edges.emplace_back(u->second, v->second, *r);
    }

    return HeteroGraph::build(schema, std::move(counts), edges, std::move(features),
                              std::move(ext_ids));
}

void save_graph(const HeteroGraph& g, const std::string& schema_path,
                const std::string& nodes_path, const std::string& edges_path) {
    {
        std::ofstream out(schema_path);
        if (!out) throw ParseError("cannot write '" + schema_path + "'");
        for (const auto& name : g.schema.node_type_names) out << "nodetype " << name << "\n";
        for (const auto& et : g.schema.edge_types) {
            out << "edgetype " << et.name << " " << g.schema.node_type_names[et.src] << " "
                << g.schema.node_type_names[et.dst];
            if (et.reverse >= 0) out << " rev=" << g.schema.edge_types[et.reverse].name;
            out << "\n";
        }
    }
    {
        std::ofstream out(nodes_path);
        if (!out) throw ParseError("cannot write '" + nodes_path + "'");
        char buf[64];
        for (NodeId v = 0; v < g.num_nodes(); ++v) {
            NodeTypeId t = g.type_of(v);
            out << g.ext_ids[v] << "\t" << g.schema.node_type_names[t] << "\t";
            const auto& tf = g.features.per_type[t];
            if (tf.featureless) {
                out << "-";
            } else {
                int32_t local = g.local_id(v);
                for (int k = 0; k < tf.dim; ++k) {
                    std::snprintf(buf, sizeof buf, "%.17g", tf.data[static_cast<size_t>(local) * tf.dim + k]);
                    out << (k ? "," : "") << buf;
                }
            }
            out << "\n";
        }
    }
    {
        std::ofstream out(edges_path);
        if (!out) throw ParseError("cannot write '" + edges_path + "'");
        for (int r = 0; r < g.schema.num_edge_types(); ++r) {
            const auto& adj = g.adjacency[r];
            NodeTypeId src_t = g.schema.edge_types[r].src;
            for (int32_t i = 0; i < g.type_counts[src_t]; ++i) {
                NodeId u = g.global_id(src_t, i);
                for (int64_t k = adj.offsets[i]; k < adj.offsets[i + 1]; ++k)
                    out << g.ext_ids[u] << "\t" << g.ext_ids[adj.columns[k]] << "\t"
                        << g.schema.edge_types[r].name << "\n";
            }
        }
    }
}

std::vector<Metapath> enumerate_metapaths(const Schema& schema, NodeTypeId start_type, int K,
                                          int max_metapaths) {
    if (K < 1) throw ConfigError("metapath length must be >= 1", "usage");
    if (start_type < 0 || start_type >= schema.num_node_types())
        throw ContractError("enumerate_metapaths: start type out of range");

    std::vector<Metapath> out;
    std::vector<EdgeTypeId> chain;
    // Edge types are scanned in ascending id order at every position, so the
    // result comes out in lexicographic order without a final sort.
    auto extend = [&](auto&& self, NodeTypeId at, int remaining) -> void {
        if (remaining == 0) {
            if (static_cast<int>(out.size()) >= max_metapaths)
                throw ResourceError("more than " + std::to_string(max_metapaths) +
                                        " metapaths of length " + std::to_string(K) +
                                        " start at type '" + schema.node_type_names[start_type] +
                                        "'; lower the metapath length or raise the cap",
                                    "metapath_cap_exceeded");
            out.push_back(Metapath{chain});
            return;
        }
        for (EdgeTypeId r = 0; r < schema.num_edge_types(); ++r) {
            if (schema.edge_types[r].src != at) continue;
            chain.push_back(r);
            self(self, schema.edge_types[r].dst, remaining - 1);
            chain.pop_back();
        }
    };
    extend(extend, start_type, K);
    return out;
}

std::string metapath_display(const Schema& schema, NodeTypeId start_type, const Metapath& p) {
    std::string s = schema.node_type_names[start_type];
    for (EdgeTypeId r : p.edge_types) {
        const EdgeType& et = schema.edge_types[r];
        s += "-" + et.name + "-" + schema.node_type_names[et.dst];
    }
    return s;
}

HeteroGraph make_typed_tree(int branching, int depth, const std::vector<NodeTypeId>& type_cycle) {
    if (branching < 1 || depth < 1) throw ContractError("make_typed_tree: branching and depth must be >= 1");
    if (type_cycle.size() < 2) throw ContractError("make_typed_tree: type_cycle needs >= 2 types");
    const int cycle = static_cast<int>(type_cycle.size());
    NodeTypeId max_type = *std::max_element(type_cycle.begin(), type_cycle.end());

    Schema schema;
    for (NodeTypeId t = 0; t <= max_type; ++t)
        schema.node_type_names.push_back("T" + std::to_string(t));
    // One relation per depth keeps downward and upward walks in disjoint
    // relations even when the type cycle makes (parent,child) pairs repeat.
    for (int d = 0; d < depth; ++d) {
        NodeTypeId a = type_cycle[d % cycle];
        NodeTypeId b = type_cycle[(d + 1) % cycle];
        EdgeTypeId down = static_cast<EdgeTypeId>(schema.edge_types.size());
        schema.edge_types.push_back({"d" + std::to_string(d), a, b, down + 1});
        schema.edge_types.push_back({"u" + std::to_string(d), b, a, down});
    }

    // Nodes per depth level, then recounted per type.
    std::vector<int64_t> level_count(depth + 1);
    level_count[0] = 1;
    for (int d = 1; d <= depth; ++d) level_count[d] = level_count[d - 1] * branching;

    std::vector<int32_t> counts(max_type + 1, 0);
    std::vector<std::vector<int32_t>> level_local(depth + 1); // node index within level -> type-local id
    for (int d = 0; d <= depth; ++d) {
        NodeTypeId t = type_cycle[d % cycle];
        level_local[d].resize(level_count[d]);
        for (int64_t i = 0; i < level_count[d]; ++i) level_local[d][i] = counts[t]++;
    }

    std::vector<NodeId> type_offsets(max_type + 2, 0);
    for (NodeTypeId t = 0; t <= max_type; ++t) type_offsets[t + 1] = type_offsets[t] + counts[t];
    auto node_at = [&](int d, int64_t i) {
        return type_offsets[type_cycle[d % cycle]] + level_local[d][i];
    };

    std::vector<std::tuple<NodeId, NodeId, EdgeTypeId>> edges;
    for (int d = 0; d < depth; ++d) {
        EdgeTypeId down = static_cast<EdgeTypeId>(2 * d);
        for (int64_t i = 0; i < level_count[d]; ++i) {
            NodeId parent = node_at(d, i);
            for (int c = 0; c < branching; ++c) {
                NodeId child = node_at(d + 1, i * branching + c);
                edges.emplace_back(parent, child, down);
                edges.emplace_back(child, parent, down + 1);
            }
        }
    }
    return HeteroGraph::build(std::move(schema), std::move(counts), edges);
}

Metapath typed_tree_root_metapath(const HeteroGraph& g, int depth) {
    Metapath p;
    for (int d = 0; d < depth; ++d) {
        auto r = g.schema.find_edge_type("d" + std::to_string(d));
        if (!r) throw ContractError("typed_tree_root_metapath: graph is not a typed tree of that depth");
        p.edge_types.push_back(*r);
    }
    return p;
}

} // namespace mecch
