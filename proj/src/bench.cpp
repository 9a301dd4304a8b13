#include "mecch/bench.hpp"

#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <fstream>

#include "mecch/context.hpp"
#include "mecch/errors.hpp"

namespace mecch {

namespace {

int64_t ipow(int64_t base, int exp) {
    int64_t r = 1;
    while (exp-- > 0) r *= base;
    return r;
}

} // namespace

ComplexityReport verify_complexity(const std::vector<int>& n_values,
                                   const std::vector<int>& k_values) {
    ComplexityReport report;
    for (int n : n_values) {
        if (n < 2) throw ConfigError("branching factor must be >= 2", "usage");
        for (int K : k_values) {
            if (K < 1) throw ConfigError("metapath length must be >= 1", "usage");
            if (ipow(n, K + 1) > (int64_t(1) << 24))
                throw ResourceError("typed tree for n=" + std::to_string(n) +
                                    ", K=" + std::to_string(K) + " exceeds the size guard");
            HeteroGraph tree = make_typed_tree(n, K, {0, 1, 2});
            Metapath path = typed_tree_root_metapath(tree, K);
            const NodeId root = tree.global_id(0, 0);

            ComplexityRow row;
            row.n = n;
            row.K = K;
            row.count_mn = count_aggregations(tree, path, root, CountStrategy::MetapathNeighbors);
            row.count_mc = count_aggregations(tree, path, root, CountStrategy::MetapathContexts);
            row.count_mi = count_aggregations(tree, path, root, CountStrategy::MetapathInstances,
                                              int64_t(1) << 40);
            row.formula_mn = ipow(n, K);
            row.formula_mc = (ipow(n, K + 1) - 1) / (n - 1);
            row.formula_mi = (K + 1) * ipow(n, K);
            row.pass = row.count_mn == row.formula_mn && row.count_mc == row.formula_mc &&
                       row.count_mi == row.formula_mi;
            if (K >= 2)
                row.pass = row.pass && row.count_mn < row.count_mc && row.count_mc < row.count_mi;
            report.all_pass = report.all_pass && row.pass;
            report.rows.push_back(row);
        }
    }
    return report;
}

void write_complexity_csv(const ComplexityReport& report, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw ParseError("cannot write '" + path + "'");
    out << "n,K,count_MN,count_MC,count_MI,formula_MN,formula_MC,formula_MI,pass\n";
    for (const auto& r : report.rows)
        out << r.n << "," << r.K << "," << r.count_mn << "," << r.count_mc << "," << r.count_mi
            << "," << r.formula_mn << "," << r.formula_mc << "," << r.formula_mi << ","
            << (r.pass ? "true" : "false") << "\n";
}

PlantedNcDataset make_planted_nc_dataset(uint64_t seed, int nodes_per_type, int num_classes,
                                         double signal) {
    if (nodes_per_type < num_classes || num_classes < 2)
        throw ContractError("make_planted_nc_dataset: sizes must be positive with >= 2 classes");
    Rng rng(seed);

    const int n_authors = nodes_per_type;
    const int n_papers = 2 * nodes_per_type;
    const int n_venues = 3 * num_classes;
    const int feat_dim = num_classes;

    Schema schema;
    schema.node_type_names = {"A", "P", "V"};
    schema.edge_types = {
        {"writes", 0, 1, 1}, {"writes_rev", 1, 0, 0}, {"publishes", 1, 2, 3}, {"publishes_rev", 2, 1, 2}};

    // Paper features: Gaussian around the class's one-hot mean.
    FeatureTable features;
    features.per_type.resize(3);
    auto& pf = features.per_type[1];
    pf.featureless = false;
    pf.dim = feat_dim;
    pf.data.resize(static_cast<size_t>(n_papers) * feat_dim);
    std::vector<int> paper_class(n_papers);
    for (int p = 0; p < n_papers; ++p) {
        paper_class[p] = p % num_classes;
        for (int k = 0; k < feat_dim; ++k)
            pf.data[static_cast<size_t>(p) * feat_dim + k] =
                (k == paper_class[p] ? signal : 0.0) + 0.5 * normal_real(rng);
    }

    std::vector<std::tuple<NodeId, NodeId, EdgeTypeId>> edges;
    auto author_gid = [&](int a) { return static_cast<NodeId>(a); };
    auto paper_gid = [&](int p) { return static_cast<NodeId>(n_authors + p); };
    auto venue_gid = [&](int v) { return static_cast<NodeId>(n_authors + n_papers + v); };

    const int papers_per_author = 6;
    std::vector<int> author_class(n_authors);
    for (int a = 0; a < n_authors; ++a) {
        author_class[a] = a % num_classes;
        for (int j = 0; j < papers_per_author; ++j) {
            int p;
            if (uniform_real(rng) < 0.85) {
                // papers of the author's class sit at indices c, c+C, c+2C, ...
                const int in_class = n_papers / num_classes + (author_class[a] < n_papers % num_classes ? 1 : 0);
                p = author_class[a] + num_classes * static_cast<int>(uniform_index(rng, in_class));
            } else {
                p = static_cast<int>(uniform_index(rng, n_papers));
            }
            edges.emplace_back(author_gid(a), paper_gid(p), 0);
            edges.emplace_back(paper_gid(p), author_gid(a), 1);
        }
    }
    for (int p = 0; p < n_papers; ++p) {
        int v;
        if (uniform_real(rng) < 0.9)
            v = paper_class[p] + num_classes * static_cast<int>(uniform_index(rng, 3));
        else
            v = static_cast<int>(uniform_index(rng, n_venues));
        edges.emplace_back(paper_gid(p), venue_gid(v), 2);
        edges.emplace_back(venue_gid(v), paper_gid(p), 3);
    }

    PlantedNcDataset dataset;
    dataset.graph = HeteroGraph::build(schema, {n_authors, n_papers, n_venues}, edges,
                                       std::move(features));

    // Stratified 10/10/80 split over authors, shuffled within each class.
    dataset.splits.task = Task::NodeClassification;
    dataset.splits.nc.target_type = 0;
    dataset.splits.nc.num_classes = num_classes;
    std::vector<std::vector<int32_t>> per_class(num_classes);
    for (int a = 0; a < n_authors; ++a) per_class[author_class[a]].push_back(a);
    for (auto& members : per_class) {
        for (size_t i = members.size(); i > 1; --i)
            std::swap(members[i - 1], members[uniform_index(rng, i)]);
        const size_t n_train = std::max<size_t>(1, members.size() / 10);
        const size_t n_valid = std::max<size_t>(1, members.size() / 10);
        for (size_t i = 0; i < members.size(); ++i) {
            auto& dst = i < n_train                ? dataset.splits.nc.train
                        : i < n_train + n_valid    ? dataset.splits.nc.valid
                                                   : dataset.splits.nc.test;
            dst.emplace_back(members[i], author_class[members[i]]);
        }
    }
    return dataset;
}

PlantedLpDataset make_planted_lp_dataset(uint64_t seed, int block_count, int nodes_per_block,
                                         double intra_prob, double inter_prob) {
    if (block_count < 2 || nodes_per_block < 2)
        throw ContractError("make_planted_lp_dataset: need >= 2 blocks of >= 2 nodes");
    Rng rng(seed);

    const int n_users = block_count * nodes_per_block;
    const int n_items = block_count * nodes_per_block;
    const int tags_per_block = 4;
    const int n_tags = tags_per_block * block_count;

    Schema schema;
    schema.node_type_names = {"U", "I", "T"};
    schema.edge_types = {{"likes", 0, 1, 1},    {"likes_rev", 1, 0, 0}, {"has_tag", 0, 2, 3},
                         {"has_tag_rev", 2, 0, 2}, {"tagged", 1, 2, 5},    {"tagged_rev", 2, 1, 4}};

    auto user_gid = [&](int u) { return static_cast<NodeId>(u); };
    auto item_gid = [&](int i) { return static_cast<NodeId>(n_users + i); };
    auto tag_gid = [&](int t) { return static_cast<NodeId>(n_users + n_items + t); };
    auto block_of = [&](int local) { return local / nodes_per_block; };

    // Target edges from the planted block model.
    std::vector<std::pair<int32_t, int32_t>> positives;
    for (int u = 0; u < n_users; ++u)
        for (int i = 0; i < n_items; ++i) {
            const double p = block_of(u) == block_of(i) ? intra_prob : inter_prob;
            if (uniform_real(rng) < p) positives.emplace_back(u, i);
        }

    std::vector<std::tuple<NodeId, NodeId, EdgeTypeId>> edges;
    for (int u = 0; u < n_users; ++u)
        for (int j = 0; j < 2; ++j) {
            const int t = block_of(u) * tags_per_block +
                          static_cast<int>(uniform_index(rng, tags_per_block));
            edges.emplace_back(user_gid(u), tag_gid(t), 2);
            edges.emplace_back(tag_gid(t), user_gid(u), 3);
        }
    for (int i = 0; i < n_items; ++i)
        for (int j = 0; j < 2; ++j) {
            const int t = block_of(i) * tags_per_block +
                          static_cast<int>(uniform_index(rng, tags_per_block));
            edges.emplace_back(item_gid(i), tag_gid(t), 4);
            edges.emplace_back(tag_gid(t), item_gid(i), 5);
        }

    // 70/10/20 positive split; only training positives enter the
    // message-passing graph, evaluation edges stay held out.
    for (size_t i = positives.size(); i > 1; --i)
        std::swap(positives[i - 1], positives[uniform_index(rng, i)]);
    const size_t n_train = positives.size() * 7 / 10;
    const size_t n_valid = positives.size() / 10;

    PlantedLpDataset dataset;
    dataset.splits.task = Task::LinkPrediction;
    dataset.splits.lp.target_relation = 0;
    for (size_t i = 0; i < positives.size(); ++i) {
        auto& dst = i < n_train             ? dataset.splits.lp.train
                    : i < n_train + n_valid ? dataset.splits.lp.valid
                                            : dataset.splits.lp.test;
        dst.push_back(positives[i]);
    }
    for (const auto& [u, i] : dataset.splits.lp.train) {
        edges.emplace_back(user_gid(u), item_gid(i), 0);
        edges.emplace_back(item_gid(i), user_gid(u), 1);
    }
    for (const auto& [u, i] : dataset.splits.lp.valid) {
        (void)i;
        dataset.splits.lp.neg_valid.emplace_back(u, static_cast<int32_t>(uniform_index(rng, n_items)));
    }
    for (const auto& [u, i] : dataset.splits.lp.test) {
        (void)i;
        dataset.splits.lp.neg_test.emplace_back(u, static_cast<int32_t>(uniform_index(rng, n_items)));
    }

    dataset.graph = HeteroGraph::build(schema, {n_users, n_items, n_tags}, edges);
    return dataset;
}

namespace {

void write_graph_files(const HeteroGraph& g, const std::string& dir) {
    std::filesystem::create_directories(dir);
    save_graph(g, dir + "/schema.txt", dir + "/nodes.tsv", dir + "/edges.tsv");
}

void write_edge_list(const HeteroGraph& g, const std::vector<std::pair<int32_t, int32_t>>& edges,
                     NodeTypeId src_type, NodeTypeId dst_type, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw ParseError("cannot write '" + path + "'");
    for (const auto& [u, v] : edges)
        out << g.ext_ids[g.global_id(src_type, u)] << "\t" << g.ext_ids[g.global_id(dst_type, v)]
            << "\n";
}

} // namespace

void write_nc_dataset_files(const PlantedNcDataset& dataset, const std::string& dir) {
    write_graph_files(dataset.graph, dir);
    const auto& g = dataset.graph;
    const NodeTypeId t = dataset.splits.nc.target_type;
    std::ofstream labels(dir + "/labels.tsv");
    std::ofstream splits(dir + "/splits.tsv");
    if (!labels || !splits) throw ParseError("cannot write label/split files under '" + dir + "'");
    const char* names[3] = {"train", "valid", "test"};
    const std::vector<std::pair<int32_t, int32_t>>* lists[3] = {
        &dataset.splits.nc.train, &dataset.splits.nc.valid, &dataset.splits.nc.test};
    for (int s = 0; s < 3; ++s)
        for (const auto& [node, label] : *lists[s]) {
            labels << g.ext_ids[g.global_id(t, node)] << "\t" << label << "\n";
            splits << g.ext_ids[g.global_id(t, node)] << "\t" << names[s] << "\n";
        }
}

void write_lp_dataset_files(const PlantedLpDataset& dataset, const std::string& dir) {
    write_graph_files(dataset.graph, dir);
    const auto& g = dataset.graph;
    const EdgeType& et = g.schema.edge_types[dataset.splits.lp.target_relation];
    write_edge_list(g, dataset.splits.lp.train, et.src, et.dst, dir + "/target_train.tsv");
    write_edge_list(g, dataset.splits.lp.valid, et.src, et.dst, dir + "/target_valid.tsv");
    write_edge_list(g, dataset.splits.lp.test, et.src, et.dst, dir + "/target_test.tsv");
    write_edge_list(g, dataset.splits.lp.neg_valid, et.src, et.dst, dir + "/negatives_valid.tsv");
    write_edge_list(g, dataset.splits.lp.neg_test, et.src, et.dst, dir + "/negatives_test.tsv");
}

} // namespace mecch
