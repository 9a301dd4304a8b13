#include "mecch/context.hpp"

#include <algorithm>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <thread>
#include <unordered_set>

#include "mecch/errors.hpp"

namespace mecch {

namespace {

std::vector<NodeId> sorted_unique(std::vector<NodeId> v) {
    std::sort(v.begin(), v.end());
    v.erase(std::unique(v.begin(), v.end()), v.end());
    return v;
}

} // namespace

MetapathContext build_context(const HeteroGraph& g, const Metapath& p, NodeId v) {
    const int K = p.length();
    if (K < 1) throw ContractError("build_context: metapath must have length >= 1");
    if (g.type_of(v) != g.schema.edge_types[p.edge_types[0]].src)
        throw ContractError("build_context: center type does not match the metapath start type");

    MetapathContext ctx;
    ctx.center = v;
    ctx.metapath = p;

    // Forward expansion with per-layer dedup.
    std::vector<std::vector<NodeId>> layers(K + 1);
    std::vector<std::vector<std::pair<NodeId, NodeId>>> layer_edges(K);
    layers[0] = {v};
    for (int i = 0; i < K; ++i) {
        EdgeTypeId r = p.edge_types[i];
        std::vector<NodeId> next;
        for (NodeId u : layers[i])
            for (NodeId w : g.neighbors(u, r)) {
                layer_edges[i].emplace_back(u, w);
                next.push_back(w);
            }
        layers[i + 1] = sorted_unique(std::move(next));
        if (layers[i + 1].empty()) break;
    }

    if (layers[K].empty()) {
        ctx.empty_context = true;
        ctx.layers.assign(1, {v});
        ctx.node_set = {v};
        return ctx;
    }

    // Backward prune: keep only nodes and edges on complete instances.
    std::vector<std::vector<NodeId>> alive(K + 1);
    alive[K] = layers[K];
    std::vector<std::vector<std::pair<NodeId, NodeId>>> kept_edges(K);
    for (int i = K - 1; i >= 0; --i) {
        std::vector<NodeId> keep;
        for (const auto& [u, w] : layer_edges[i])
            if (std::binary_search(alive[i + 1].begin(), alive[i + 1].end(), w)) {
                kept_edges[i].emplace_back(u, w);
                keep.push_back(u);
            }
        alive[i] = sorted_unique(std::move(keep));
    }

    ctx.layers = std::move(alive);
    std::vector<NodeId> all;
    for (const auto& layer : ctx.layers) all.insert(all.end(), layer.begin(), layer.end());
    ctx.node_set = sorted_unique(std::move(all));
    for (int i = 0; i < K; ++i) {
        std::sort(kept_edges[i].begin(), kept_edges[i].end());
        kept_edges[i].erase(std::unique(kept_edges[i].begin(), kept_edges[i].end()),
                            kept_edges[i].end());
        for (const auto& [u, w] : kept_edges[i]) ctx.edges.push_back({i, u, w});
    }
    return ctx;
}

std::vector<std::vector<NodeId>> oracle_enumerate_instances(const HeteroGraph& g, const Metapath& p,
                                                            NodeId v, int64_t max_instances) {
    const int K = p.length();
    if (g.type_of(v) != g.schema.edge_types[p.edge_types[0]].src)
        throw ContractError("oracle_enumerate_instances: center type does not match the metapath");

    std::vector<std::vector<NodeId>> out;
    std::vector<NodeId> walk{v};
    auto dfs = [&](auto&& self, int step) -> void {
        if (step == K) {
            if (static_cast<int64_t>(out.size()) >= max_instances)
                throw ResourceError("instance enumeration exceeded the guard of " +
                                        std::to_string(max_instances),
                                    "instance_guard");
            out.push_back(walk);
            return;
        }
        for (NodeId w : g.neighbors(walk.back(), p.edge_types[step])) {
            walk.push_back(w);
            self(self, step + 1);
            walk.pop_back();
        }
    };
    dfs(dfs, 0);
    return out;
}

MetapathContext khop_context(const HeteroGraph& g, NodeId v, int K) {
    if (K < 0) throw ContractError("khop_context: K must be >= 0");
    MetapathContext ctx;
    ctx.center = v;
    ctx.layers.assign(1, {v});

    std::unordered_set<NodeId> visited{v};
    std::vector<NodeId> frontier{v};
    for (int hop = 0; hop < K && !frontier.empty(); ++hop) {
        std::vector<NodeId> next;
        std::vector<std::pair<NodeId, NodeId>> candidates;
        for (NodeId u : frontier) {
            for (EdgeTypeId r = 0; r < g.schema.num_edge_types(); ++r) {
                if (g.schema.edge_types[r].src != g.type_of(u)) continue;
                for (NodeId w : g.neighbors(u, r)) {
                    candidates.emplace_back(u, w);
                    if (visited.insert(w).second) next.push_back(w);
                }
            }
        }
        next = sorted_unique(std::move(next));
        if (next.empty()) break;
        std::sort(candidates.begin(), candidates.end());
        candidates.erase(std::unique(candidates.begin(), candidates.end()), candidates.end());
        for (const auto& [u, w] : candidates)
            if (std::binary_search(next.begin(), next.end(), w)) ctx.edges.push_back({hop, u, w});
        ctx.layers.push_back(next);
        frontier = std::move(next);
    }

    std::vector<NodeId> all(visited.begin(), visited.end());
    ctx.node_set = sorted_unique(std::move(all));
    ctx.empty_context = ctx.node_set.size() == 1;
    return ctx;
}

int64_t count_aggregations(const HeteroGraph& g, const Metapath& p, NodeId v,
                           CountStrategy strategy, int64_t max_instances) {
    const int K = p.length();
    switch (strategy) {
    case CountStrategy::MetapathContexts:
        return static_cast<int64_t>(build_context(g, p, v).node_set.size());
    case CountStrategy::MetapathNeighbors: {
        MetapathContext ctx = build_context(g, p, v);
        return ctx.empty_context ? 0 : static_cast<int64_t>(ctx.layers[K].size());
    }
    case CountStrategy::MetapathInstances: {
        // Walk-count DP over layers; dead ends contribute zero on their own.
        std::vector<std::pair<NodeId, int64_t>> counts{{v, 1}};
        if (g.type_of(v) != g.schema.edge_types[p.edge_types[0]].src)
            throw ContractError("count_aggregations: center type does not match the metapath");
        for (int i = 0; i < K; ++i) {
            std::vector<std::pair<NodeId, int64_t>> next;
            for (const auto& [u, c] : counts)
                for (NodeId w : g.neighbors(u, p.edge_types[i])) next.emplace_back(w, c);
            std::sort(next.begin(), next.end());
            std::vector<std::pair<NodeId, int64_t>> merged;
            for (const auto& [w, c] : next) {
                if (!merged.empty() && merged.back().first == w)
                    merged.back().second += c;
                else
                    merged.emplace_back(w, c);
            }
            counts = std::move(merged);
        }
        int64_t instances = 0;
        for (const auto& [w, c] : counts) instances += c;
        if (instances > max_instances)
            throw ResourceError("instance count " + std::to_string(instances) +
                                    " exceeded the guard of " + std::to_string(max_instances),
                                "instance_guard");
        return (K + 1) * instances;
    }
    }
    throw ContractError("count_aggregations: unknown strategy");
}

size_t ContextStore::total_bytes() const {
    size_t n = 0;
    for (const auto& e : entries)
        n += e.offsets.size() * sizeof(int64_t) + e.indices.size() * sizeof(NodeId);
    return n;
}

namespace {

// Contexts of all centers of one entry, computed independently per center and
// concatenated in center order; identical output for any thread count.
void fill_entry(const HeteroGraph& g, ContextStore::Entry& entry, bool khop, int K, int threads,
                size_t memory_budget_bytes) {
    const int32_t n_centers = g.type_counts[entry.start_type];
    std::vector<std::vector<NodeId>> per_center(n_centers);

    auto work = [&](int32_t begin, int32_t end) {
        for (int32_t i = begin; i < end; ++i) {
            NodeId v = g.global_id(entry.start_type, i);
            if (entry.metapath.length() == 0)
                per_center[i] = khop ? khop_context(g, v, K).node_set : std::vector<NodeId>{v};
            else
                per_center[i] = build_context(g, entry.metapath, v).node_set;
        }
    };
    if (threads <= 1 || n_centers < 256) {
        work(0, n_centers);
    } else {
        int n_workers = std::min<int>(threads, std::max<int32_t>(1, n_centers / 64));
        std::vector<std::thread> pool;
        std::vector<std::exception_ptr> errors(n_workers);
        int32_t chunk = (n_centers + n_workers - 1) / n_workers;
        for (int w = 0; w < n_workers; ++w)
            pool.emplace_back([&, w] {
                try {
                    work(std::min<int32_t>(w * chunk, n_centers),
                         std::min<int32_t>((w + 1) * chunk, n_centers));
                } catch (...) {
                    errors[w] = std::current_exception();
                }
            });
        for (auto& t : pool) t.join();
        for (const auto& error : errors)
            if (error) std::rethrow_exception(error);
    }

    entry.offsets.assign(n_centers + 1, 0);
    size_t total = 0;
    for (int32_t i = 0; i < n_centers; ++i) {
        total += per_center[i].size();
        entry.offsets[i + 1] = static_cast<int64_t>(total);
    }
    if (total * sizeof(NodeId) > memory_budget_bytes)
        throw ResourceError("context store exceeds the configured memory budget",
                            "context_memory_budget");
    entry.indices.reserve(total);
    for (auto& ids : per_center) entry.indices.insert(entry.indices.end(), ids.begin(), ids.end());
}

} // namespace

ContextStore build_all_contexts(const HeteroGraph& g,
                                const std::vector<std::vector<Metapath>>& metapaths_by_type,
                                const ContextBuildOptions& options) {
    if (static_cast<int>(metapaths_by_type.size()) != g.schema.num_node_types())
        throw ContractError("build_all_contexts: per-type metapath list size mismatch");

    ContextStore store;
    store.graph_hash = g.content_hash();
    store.khop = false;
    store.by_type.resize(g.schema.num_node_types());
    size_t budget = options.memory_budget_bytes;

    for (NodeTypeId t = 0; t < g.schema.num_node_types(); ++t) {
        std::vector<Metapath> paths = metapaths_by_type[t];
        if (paths.empty()) {
            // Degenerate self metapath: every type must emit representations
            // for multi-layer composition.
            ContextStore::Entry entry;
            entry.start_type = t;
            entry.display = "self(" + g.schema.node_type_names[t] + ")";
            fill_entry(g, entry, false, 0, options.threads, budget);
            budget -= std::min(budget, entry.indices.size() * sizeof(NodeId));
            store.by_type[t].push_back(static_cast<int>(store.entries.size()));
            store.entries.push_back(std::move(entry));
            continue;
        }
        for (const Metapath& p : paths) {
            if (g.schema.edge_types[p.edge_types[0]].src != t)
                throw ContractError("build_all_contexts: metapath does not start at its listed type");
            store.K = std::max(store.K, p.length());
            ContextStore::Entry entry;
            entry.start_type = t;
            entry.metapath = p;
            entry.display = metapath_display(g.schema, t, p);
            fill_entry(g, entry, false, 0, options.threads, budget);
            budget -= std::min(budget, entry.indices.size() * sizeof(NodeId));
            store.by_type[t].push_back(static_cast<int>(store.entries.size()));
            store.entries.push_back(std::move(entry));
        }
    }
    return store;
}

ContextStore build_khop_store(const HeteroGraph& g, int K, const ContextBuildOptions& options) {
    ContextStore store;
    store.graph_hash = g.content_hash();
    store.khop = true;
    store.K = K;
    store.by_type.resize(g.schema.num_node_types());
    size_t budget = options.memory_budget_bytes;
    for (NodeTypeId t = 0; t < g.schema.num_node_types(); ++t) {
        ContextStore::Entry entry;
        entry.start_type = t;
        entry.display = "khop" + std::to_string(K) + "(" + g.schema.node_type_names[t] + ")";
        fill_entry(g, entry, true, K, options.threads, budget);
        budget -= std::min(budget, entry.indices.size() * sizeof(NodeId));
        store.by_type[t].push_back(static_cast<int>(store.entries.size()));
        store.entries.push_back(std::move(entry));
    }
    return store;
}

namespace {

constexpr char kCacheMagic[8] = {'M', 'E', 'C', 'C', 'H', 'C', 'T', 'X'};
constexpr uint32_t kCacheVersion = 1;

template <typename T>
void write_pod(std::ofstream& out, const T& v) {
    out.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
bool read_pod(std::ifstream& in, T& v) {
    in.read(reinterpret_cast<char*>(&v), sizeof(T));
    return bool(in);
}

template <typename T>
void write_vec(std::ofstream& out, const std::vector<T>& v) {
    write_pod(out, static_cast<uint64_t>(v.size()));
    out.write(reinterpret_cast<const char*>(v.data()), v.size() * sizeof(T));
}

template <typename T>
bool read_vec(std::ifstream& in, std::vector<T>& v) {
    uint64_t n = 0;
    if (!read_pod(in, n) || n > (size_t(1) << 33)) return false;
    v.resize(n);
    in.read(reinterpret_cast<char*>(v.data()), n * sizeof(T));
    return bool(in);
}

} // namespace

void save_context_cache(const ContextStore& store, const std::string& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw ParseError("cannot write context cache '" + path + "'");
    out.write(kCacheMagic, sizeof kCacheMagic);
    write_pod(out, kCacheVersion);
    write_pod(out, store.graph_hash);
    write_pod(out, static_cast<int32_t>(store.K));
    write_pod(out, static_cast<uint8_t>(store.khop));
    write_pod(out, static_cast<uint32_t>(store.by_type.size()));
    write_pod(out, static_cast<uint32_t>(store.entries.size()));
    for (const auto& e : store.entries) {
        write_pod(out, e.start_type);
        write_vec(out, e.metapath.edge_types);
        write_pod(out, static_cast<uint32_t>(e.display.size()));
        out.write(e.display.data(), e.display.size());
        write_vec(out, e.offsets);
        write_vec(out, e.indices);
    }
}

std::optional<ContextStore> load_context_cache(const std::string& path, uint64_t graph_hash, int K,
                                               bool khop) {
    std::ifstream in(path, std::ios::binary);
    if (!in) return std::nullopt;
    char magic[8];
    in.read(magic, sizeof magic);
    if (!in || std::memcmp(magic, kCacheMagic, sizeof magic) != 0) return std::nullopt;
    uint32_t version = 0;
    if (!read_pod(in, version) || version != kCacheVersion) return std::nullopt;

    ContextStore store;
    int32_t k32 = 0;
    uint8_t kh = 0;
    uint32_t n_types = 0, n_entries = 0;
    if (!read_pod(in, store.graph_hash) || !read_pod(in, k32) || !read_pod(in, kh) ||
        !read_pod(in, n_types) || !read_pod(in, n_entries))
        return std::nullopt;
    store.K = k32;
    store.khop = kh != 0;
    if (store.graph_hash != graph_hash || store.K != K || store.khop != khop) return std::nullopt;

    store.by_type.resize(n_types);
    for (uint32_t i = 0; i < n_entries; ++i) {
        ContextStore::Entry e;
        uint32_t disp_len = 0;
        if (!read_pod(in, e.start_type) || !read_vec(in, e.metapath.edge_types) ||
            !read_pod(in, disp_len) || disp_len > 4096)
            return std::nullopt;
        e.display.resize(disp_len);
        in.read(e.display.data(), disp_len);
        if (!in || !read_vec(in, e.offsets) || !read_vec(in, e.indices)) return std::nullopt;
        if (e.start_type < 0 || e.start_type >= static_cast<int32_t>(n_types)) return std::nullopt;
        store.by_type[e.start_type].push_back(static_cast<int>(store.entries.size()));
        store.entries.push_back(std::move(e));
    }
    return store;
}

} // namespace mecch
