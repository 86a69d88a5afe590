#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

namespace flexcast {

enum class CoordinateFrame { planar_m, latlon };

// Station positions. planar_m holds (x, y) in meters; latlon holds (lat, lon) in degrees.
struct StationMap {
    CoordinateFrame frame = CoordinateFrame::planar_m;
    std::vector<std::string> ids;
    std::vector<std::array<double, 2>> positions;

    std::size_t size() const { return ids.size(); }
    void validate() const;
};

// Great-circle (haversine) or Euclidean distance in kilometers.
double distance_km(CoordinateFrame frame, const std::array<double, 2>& a, const std::array<double, 2>& b);

// Ids compare numerically when both are integers, lexicographically otherwise.
bool station_id_less(std::string_view a, std::string_view b);

StationMap read_station_csv(const std::string& path);
void write_station_csv(const StationMap& stations, const std::string& path,
                       const std::string& id_column = "station_id");

struct Edge {
    std::uint32_t a = 0;  // a < b
    std::uint32_t b = 0;
    double weight = 0.0;

    friend bool operator==(const Edge&, const Edge&) = default;
};

struct Neighbor {
    std::uint32_t index = 0;
    double weight = 0.0;
};

struct ProximityGraph {
    std::vector<std::string> ids;
    double kappa_km = 3.5;
    std::size_t max_degree = 10;
    std::vector<Edge> edges;                         // sorted by (a, b)
    std::vector<std::vector<Neighbor>> adjacency;    // sorted by neighbor index

    std::size_t size() const { return ids.size(); }
    std::size_t index_of(std::string_view id) const;  // throws KeyError
    std::size_t observed_max_degree() const;
    std::size_t component_count() const;

    // Rebuilds adjacency and the id index from ids + edges.
    void finalize();

private:
    std::unordered_map<std::string, std::size_t> index_;
};

// Edges with weight exp(-dist_km) for dist < kappa, then each node keeps its
// max_degree nearest candidates and the final edge set is the union of kept edges.
ProximityGraph build_proximity_graph(const StationMap& stations, double kappa_km, std::size_t max_degree);

struct LocalEdge {
    std::uint32_t a = 0;  // local indices, a < b
    std::uint32_t b = 0;
    double weight = 0.0;

    friend bool operator==(const LocalEdge&, const LocalEdge&) = default;
};

// Induced k-hop subgraph. Local index 0 is the center; nodes follow BFS order.
struct SubgraphRecord {
    std::string center_id;
    std::uint32_t k = 0;
    std::vector<std::string> node_ids;
    std::vector<std::uint32_t> node_index;  // rows in the owning graph / series
    std::vector<LocalEdge> edges;           // sorted by (a, b)

    std::size_t size() const { return node_ids.size(); }
    friend bool operator==(const SubgraphRecord&, const SubgraphRecord&) = default;
};

SubgraphRecord khop_subgraph(const ProximityGraph& graph, std::string_view center, std::size_t k);
SubgraphRecord khop_subgraph(const ProximityGraph& graph, std::size_t center, std::size_t k);

// Drops each undirected edge independently with probability p; nodes and surviving weights untouched.
SubgraphRecord edge_dropout(const SubgraphRecord& sub, double p, std::uint64_t seed);

}  // namespace flexcast
