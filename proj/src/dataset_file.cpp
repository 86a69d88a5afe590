#include "flexcast/binary_io.hpp"
#include "flexcast/data.hpp"
#include "flexcast/error.hpp"

namespace flexcast {

namespace {

constexpr std::string_view kMagic = "FXDS";

void put_indices(io::BinaryWriter& w, const std::vector<std::uint32_t>& v) {
    w.u64(v.size());
    for (auto i : v) w.u32(i);
}

std::vector<std::uint32_t> get_indices(io::BinaryReader& r) {
    std::vector<std::uint32_t> v(r.u64());
    for (auto& i : v) i = r.u32();
    return v;
}

}  // namespace

void PreparedDataset::save(const std::string& path) const {
    io::BinaryWriter w;
    w.raw(kMagic);
    w.u8(kVersion);

    w.u8(stations.frame == CoordinateFrame::latlon ? 1 : 0);
    w.u64(stations.size());
    for (std::size_t i = 0; i < stations.size(); ++i) {
        w.str(stations.ids[i]);
        w.f64(stations.positions[i][0]);
        w.f64(stations.positions[i][1]);
    }

    w.u64(series.steps);
    w.u64(static_cast<std::uint64_t>(series.start_timestamp));
    w.f64(series.resolution_minutes);
    w.f64s(series.values);

    w.f64(graph.kappa_km);
    w.u64(graph.max_degree);
    w.u64(k);
    w.u64(graph.edges.size());
    for (const auto& e : graph.edges) {
        w.u32(e.a);
        w.u32(e.b);
        w.f64(e.weight);
    }

    w.f64(scaler.mean);
    w.f64(scaler.std);

    w.f64(split_spec.train_fraction);
    w.f64(split_spec.val_fraction);
    w.f64(split_spec.test_fraction);
    w.u8(split_spec.mode == SplitMode::inductive ? 1 : 0);
    w.f64(split_spec.scarcity);
    w.u64(split_spec.seed);
    put_indices(w, nodes.train);
    put_indices(w, nodes.val);
    put_indices(w, nodes.test);

    io::BinaryWriter file;
    file.raw(w.bytes());
    file.u32(io::crc32(w.bytes()));
    io::write_file(path, file.bytes());
}

PreparedDataset PreparedDataset::load(const std::string& path) {
    const auto bytes = io::read_file(path);
    if (bytes.size() < 9 || std::string_view(bytes).substr(0, 4) != kMagic)
        throw FormatError(path + ": not a prepared dataset");
    if (static_cast<std::uint8_t>(bytes[4]) != kVersion)
        throw FormatError(path + ": unsupported dataset version " + std::to_string(static_cast<int>(bytes[4])));
    const std::string_view body(bytes.data(), bytes.size() - 4);
    if (io::crc32(body) != io::BinaryReader(std::string_view(bytes).substr(bytes.size() - 4)).u32())
        throw IntegrityError(path + ": checksum mismatch");

    io::BinaryReader r(body);
    r.raw(5);
    PreparedDataset d;
    d.stations.frame = r.u8() ? CoordinateFrame::latlon : CoordinateFrame::planar_m;
    const auto n = r.u64();
    for (std::uint64_t i = 0; i < n; ++i) {
        d.stations.ids.push_back(r.str());
        const double a = r.f64();
        d.stations.positions.push_back({a, r.f64()});
    }

    d.series.station_ids = d.stations.ids;
    d.series.steps = r.u64();
    d.series.start_timestamp = static_cast<std::int64_t>(r.u64());
    d.series.resolution_minutes = r.f64();
    d.series.values = r.f64s();
    if (d.series.values.size() != n * d.series.steps) throw IntegrityError(path + ": series size mismatch");

    d.graph.ids = d.stations.ids;
    d.graph.kappa_km = r.f64();
    d.graph.max_degree = r.u64();
    d.k = r.u64();
    const auto m = r.u64();
    for (std::uint64_t i = 0; i < m; ++i) {
        Edge e;
        e.a = r.u32();
        e.b = r.u32();
        e.weight = r.f64();
        d.graph.edges.push_back(e);
    }
    d.graph.finalize();

    d.scaler.mean = r.f64();
    d.scaler.std = r.f64();

    d.split_spec.train_fraction = r.f64();
    d.split_spec.val_fraction = r.f64();
    d.split_spec.test_fraction = r.f64();
    d.split_spec.mode = r.u8() ? SplitMode::inductive : SplitMode::transductive;
    d.split_spec.scarcity = r.f64();
    d.split_spec.seed = r.u64();
    d.nodes.train = get_indices(r);
    d.nodes.val = get_indices(r);
    d.nodes.test = get_indices(r);
    if (!r.at_end()) throw IntegrityError(path + ": trailing bytes");
    return d;
}

}  // namespace flexcast
