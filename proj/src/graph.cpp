#include "flexcast/graph.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <numeric>
#include <queue>
#include <unordered_set>

#include "flexcast/csv.hpp"
#include "flexcast/error.hpp"
#include "flexcast/random.hpp"

namespace flexcast {

namespace {

constexpr double kEarthRadiusKm = 6371.0088;

bool parse_integer(std::string_view s, long long& out) {
    auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), out);
    return ec == std::errc() && ptr == s.data() + s.size();
}

}  // namespace

void StationMap::validate() const {
    if (ids.size() != positions.size()) throw InputError("station map: ids and positions differ in length");
    std::unordered_set<std::string> seen;
    for (std::size_t i = 0; i < ids.size(); ++i) {
        if (!seen.insert(ids[i]).second) throw InputError("duplicate station id '" + ids[i] + "'");
        if (!std::isfinite(positions[i][0]) || !std::isfinite(positions[i][1]))
            throw InputError("station '" + ids[i] + "' has a non-finite position");
    }
}

double distance_km(CoordinateFrame frame, const std::array<double, 2>& a, const std::array<double, 2>& b) {
    if (frame == CoordinateFrame::planar_m) return std::hypot(a[0] - b[0], a[1] - b[1]) / 1000.0;
    constexpr double rad = 3.14159265358979323846 / 180.0;
    const double dlat = (b[0] - a[0]) * rad;
    const double dlon = (b[1] - a[1]) * rad;
    const double s = std::sin(dlat / 2) * std::sin(dlat / 2) +
                     std::cos(a[0] * rad) * std::cos(b[0] * rad) * std::sin(dlon / 2) * std::sin(dlon / 2);
    return 2.0 * kEarthRadiusKm * std::asin(std::min(1.0, std::sqrt(s)));
}

bool station_id_less(std::string_view a, std::string_view b) {
    long long x = 0, y = 0;
    if (parse_integer(a, x) && parse_integer(b, y)) return x < y;
    return a < b;
}

StationMap read_station_csv(const std::string& path) {
    const auto table = csv::read(path);
    StationMap map;
    if (table.header == std::vector<std::string>{"station_id", "lat", "lon"})
        map.frame = CoordinateFrame::latlon;
    else if (table.header == std::vector<std::string>{"station_id", "x_m", "y_m"})
        map.frame = CoordinateFrame::planar_m;
    else
        throw InputError(path + ": header must be station_id,lat,lon or station_id,x_m,y_m");
    for (const auto& row : table.rows) {
        map.ids.push_back(row[0]);
        map.positions.push_back({csv::to_double(row[1], path), csv::to_double(row[2], path)});
    }
    map.validate();
    return map;
}

void write_station_csv(const StationMap& stations, const std::string& path, const std::string& id_column) {
    std::ofstream out(path);
    if (!out) throw InputError("cannot write " + path);
    out << id_column << (stations.frame == CoordinateFrame::latlon ? ",lat,lon\n" : ",x_m,y_m\n");
    for (std::size_t i = 0; i < stations.size(); ++i)
        out << stations.ids[i] << ',' << csv::format_double(stations.positions[i][0]) << ','
            << csv::format_double(stations.positions[i][1]) << '\n';
    if (!out) throw InputError("failed writing " + path);
}

// ---------------------------------------------------------------------------

std::size_t ProximityGraph::index_of(std::string_view id) const {
    auto it = index_.find(std::string(id));
    if (it == index_.end()) throw KeyError("unknown station '" + std::string(id) + "'");
    return it->second;
}

std::size_t ProximityGraph::observed_max_degree() const {
    std::size_t m = 0;
    for (const auto& nb : adjacency) m = std::max(m, nb.size());
    return m;
}

std::size_t ProximityGraph::component_count() const {
    std::vector<std::size_t> parent(size());
    std::iota(parent.begin(), parent.end(), std::size_t{0});
    auto find = [&](std::size_t x) {
        while (parent[x] != x) x = parent[x] = parent[parent[x]];
        return x;
    };
    std::size_t components = size();
    for (const auto& e : edges) {
        auto ra = find(e.a), rb = find(e.b);
        if (ra != rb) {
            parent[std::max(ra, rb)] = std::min(ra, rb);
            --components;
        }
    }
    return components;
}

void ProximityGraph::finalize() {
    index_.clear();
    for (std::size_t i = 0; i < ids.size(); ++i)
        if (!index_.emplace(ids[i], i).second) throw InputError("duplicate station id '" + ids[i] + "'");
    std::sort(edges.begin(), edges.end(), [](const Edge& x, const Edge& y) {
        return std::tie(x.a, x.b) < std::tie(y.a, y.b);
    });
    adjacency.assign(ids.size(), {});
    for (const auto& e : edges) {
        if (e.a >= e.b || e.b >= ids.size()) throw IntegrityError("malformed edge in proximity graph");
        adjacency[e.a].push_back({e.b, e.weight});
        adjacency[e.b].push_back({e.a, e.weight});
    }
    for (auto& nb : adjacency)
        std::sort(nb.begin(), nb.end(), [](const Neighbor& x, const Neighbor& y) { return x.index < y.index; });
}

ProximityGraph build_proximity_graph(const StationMap& stations, double kappa_km, std::size_t max_degree) {
    if (stations.size() == 0) throw InputError("proximity graph needs at least one station");
    if (!(kappa_km > 0.0)) throw ConfigError("kappa must be positive");
    if (max_degree < 1) throw ConfigError("max degree must be >= 1");
    stations.validate();

    const std::size_t n = stations.size();
    std::vector<std::vector<std::pair<double, std::uint32_t>>> candidates(n);
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = i + 1; j < n; ++j) {
            const double d = distance_km(stations.frame, stations.positions[i], stations.positions[j]);
            if (d < kappa_km) {
                candidates[i].emplace_back(d, static_cast<std::uint32_t>(j));
                candidates[j].emplace_back(d, static_cast<std::uint32_t>(i));
            }
        }

    // Keep-if-either: an edge survives when at least one endpoint ranks it among its nearest.
    std::vector<std::vector<std::pair<std::uint32_t, double>>> kept(n);
    for (std::size_t i = 0; i < n; ++i) {
        auto& c = candidates[i];
        std::sort(c.begin(), c.end());
        if (c.size() > max_degree) c.resize(max_degree);
        for (const auto& [d, j] : c) {
            const auto lo = static_cast<std::uint32_t>(std::min<std::size_t>(i, j));
            const auto hi = static_cast<std::uint32_t>(std::max<std::size_t>(i, j));
            kept[lo].emplace_back(hi, d);
        }
    }

    ProximityGraph g;
    g.ids = stations.ids;
    g.kappa_km = kappa_km;
    g.max_degree = max_degree;
    for (std::uint32_t a = 0; a < n; ++a) {
        auto& ks = kept[a];
        std::sort(ks.begin(), ks.end());
        ks.erase(std::unique(ks.begin(), ks.end(), [](auto& x, auto& y) { return x.first == y.first; }), ks.end());
        for (const auto& [b, d] : ks) g.edges.push_back({a, b, std::exp(-d)});
    }
    g.finalize();
    return g;
}

// ---------------------------------------------------------------------------

SubgraphRecord khop_subgraph(const ProximityGraph& graph, std::string_view center, std::size_t k) {
    return khop_subgraph(graph, graph.index_of(center), k);
}

SubgraphRecord khop_subgraph(const ProximityGraph& graph, std::size_t center, std::size_t k) {
    if (center >= graph.size()) throw KeyError("center index " + std::to_string(center) + " out of range");
    std::unordered_map<std::uint32_t, std::uint32_t> local;
    std::vector<std::uint32_t> order{static_cast<std::uint32_t>(center)};
    std::vector<std::size_t> depth{0};
    local.emplace(static_cast<std::uint32_t>(center), 0);
    for (std::size_t head = 0; head < order.size(); ++head) {
        if (depth[head] == k) continue;
        for (const auto& nb : graph.adjacency[order[head]]) {
            if (local.count(nb.index)) continue;
            local.emplace(nb.index, static_cast<std::uint32_t>(order.size()));
            order.push_back(nb.index);
            depth.push_back(depth[head] + 1);
        }
    }

    SubgraphRecord rec;
    rec.center_id = graph.ids[center];
    rec.k = static_cast<std::uint32_t>(k);
    rec.node_index = order;
    for (auto g : order) rec.node_ids.push_back(graph.ids[g]);
    for (std::uint32_t li = 0; li < order.size(); ++li)
        for (const auto& nb : graph.adjacency[order[li]]) {
            auto it = local.find(nb.index);
            if (it != local.end() && it->second > li) rec.edges.push_back({li, it->second, nb.weight});
        }
    std::sort(rec.edges.begin(), rec.edges.end(),
              [](const LocalEdge& x, const LocalEdge& y) { return std::tie(x.a, x.b) < std::tie(y.a, y.b); });
    return rec;
}

SubgraphRecord edge_dropout(const SubgraphRecord& sub, double p, std::uint64_t seed) {
    if (!(p >= 0.0 && p < 1.0)) throw ConfigError("edge dropout probability must be in [0, 1)");
    SubgraphRecord out = sub;
    if (p == 0.0) return out;
    Rng rng(seed);
    out.edges.clear();
    for (const auto& e : sub.edges)
        if (rng.uniform() >= p) out.edges.push_back(e);
    return out;
}

}  // namespace flexcast
