#include "flexcast/subgraph_store.hpp"

#include <fstream>

#include "flexcast/binary_io.hpp"
#include "flexcast/error.hpp"

namespace flexcast {

namespace {

constexpr std::string_view kMagic = "FXSG";
constexpr std::string_view kTrailerMagic = "FXIX";
constexpr std::size_t kTrailerSize = 8 + 4 + 4;

}  // namespace

std::string encode_record(const SubgraphRecord& rec) {
    io::BinaryWriter w;
    w.str(rec.center_id);
    w.u32(rec.k);
    w.u32(static_cast<std::uint32_t>(rec.node_ids.size()));
    for (std::size_t i = 0; i < rec.node_ids.size(); ++i) {
        w.str(rec.node_ids[i]);
        w.u32(rec.node_index[i]);
    }
    w.u32(static_cast<std::uint32_t>(rec.edges.size()));
    for (const auto& e : rec.edges) {
        w.u32(e.a);
        w.u32(e.b);
        w.f64(e.weight);
    }
    return w.bytes();
}

SubgraphRecord decode_record(std::string_view payload) {
    io::BinaryReader r(payload);
    SubgraphRecord rec;
    rec.center_id = r.str();
    rec.k = r.u32();
    const auto n = r.u32();
    for (std::uint32_t i = 0; i < n; ++i) {
        rec.node_ids.push_back(r.str());
        rec.node_index.push_back(r.u32());
    }
    const auto m = r.u32();
    for (std::uint32_t i = 0; i < m; ++i) {
        LocalEdge e;
        e.a = r.u32();
        e.b = r.u32();
        e.weight = r.f64();
        if (e.a >= e.b || e.b >= n) throw IntegrityError("subgraph record has an invalid edge");
        rec.edges.push_back(e);
    }
    if (!r.at_end()) throw IntegrityError("subgraph record has trailing bytes");
    if (n == 0 || rec.node_ids[0] != rec.center_id) throw IntegrityError("subgraph record center is not node 0");
    return rec;
}

SubgraphStore SubgraphStore::build(const ProximityGraph& graph, std::size_t k, const std::string& path) {
    io::BinaryWriter file;
    file.raw(kMagic);
    file.u8(kVersion);
    file.raw(std::string_view("\0\0\0", 3));

    io::BinaryWriter index;
    index.u64(graph.size());
    for (std::size_t i = 0; i < graph.size(); ++i) {
        const auto payload = encode_record(khop_subgraph(graph, i, k));
        index.str(graph.ids[i]);
        index.u64(file.size());
        file.u32(static_cast<std::uint32_t>(payload.size()));
        file.raw(payload);
        file.u32(io::crc32(payload));
    }
    const auto index_offset = file.size();
    file.raw(index.bytes());
    file.u64(index_offset);
    file.u32(io::crc32(index.bytes()));
    file.raw(kTrailerMagic);
    io::write_file(path, file.bytes());
    return open(path);
}

SubgraphStore SubgraphStore::open(const std::string& path) {
    std::ifstream in(path, std::ios::binary | std::ios::ate);
    if (!in) throw InputError("cannot open subgraph store " + path);
    const auto file_size = static_cast<std::uint64_t>(in.tellg());
    if (file_size < 8 + kTrailerSize) throw FormatError(path + ": too small to be a subgraph store");

    std::string header(8, '\0');
    in.seekg(0);
    in.read(header.data(), 8);
    if (std::string_view(header).substr(0, 4) != kMagic) throw FormatError(path + ": not a subgraph store");
    if (static_cast<std::uint8_t>(header[4]) != kVersion)
        throw FormatError(path + ": unsupported store version " + std::to_string(static_cast<int>(header[4])));

    std::string trailer(kTrailerSize, '\0');
    in.seekg(static_cast<std::streamoff>(file_size - kTrailerSize));
    in.read(trailer.data(), static_cast<std::streamsize>(kTrailerSize));
    io::BinaryReader tr(trailer);
    const auto index_offset = tr.u64();
    const auto index_crc = tr.u32();
    if (tr.raw(4) != kTrailerMagic) throw IntegrityError(path + ": missing index trailer");
    if (index_offset < 8 || index_offset > file_size - kTrailerSize) throw IntegrityError(path + ": bad index offset");

    std::string index_bytes(file_size - kTrailerSize - index_offset, '\0');
    in.seekg(static_cast<std::streamoff>(index_offset));
    in.read(index_bytes.data(), static_cast<std::streamsize>(index_bytes.size()));
    if (io::crc32(index_bytes) != index_crc) throw IntegrityError(path + ": index checksum mismatch");

    SubgraphStore store;
    store.path_ = path;
    io::BinaryReader r(index_bytes);
    const auto count = r.u64();
    for (std::uint64_t i = 0; i < count; ++i) {
        auto id = r.str();
        const auto offset = r.u64();
        if (offset < 8 || offset >= index_offset) throw IntegrityError(path + ": record offset out of range");
        store.keys_.push_back(id);
        store.index_.emplace(std::move(id), offset);
    }
    return store;
}

SubgraphRecord SubgraphStore::get(std::string_view id) const {
    auto it = index_.find(std::string(id));
    if (it == index_.end()) throw KeyError("no subgraph stored for station '" + std::string(id) + "'");
    std::ifstream in(path_, std::ios::binary);
    if (!in) throw InputError("cannot open subgraph store " + path_);
    in.seekg(static_cast<std::streamoff>(it->second));
    char len_bytes[4];
    if (!in.read(len_bytes, 4)) throw IntegrityError(path_ + ": truncated record");
    const auto len = io::BinaryReader(std::string_view(len_bytes, 4)).u32();
    std::string payload(len, '\0');
    char crc_bytes[4];
    if (!in.read(payload.data(), len) || !in.read(crc_bytes, 4)) throw IntegrityError(path_ + ": truncated record");
    if (io::crc32(payload) != io::BinaryReader(std::string_view(crc_bytes, 4)).u32())
        throw IntegrityError(path_ + ": checksum mismatch for station '" + std::string(id) + "'");
    try {
        auto rec = decode_record(payload);
        if (rec.center_id != id) throw IntegrityError("record key mismatch");
        return rec;
    } catch (const FormatError& e) {
        throw IntegrityError(path_ + ": corrupt record for '" + std::string(id) + "': " + e.what());
    }
}

}  // namespace flexcast
