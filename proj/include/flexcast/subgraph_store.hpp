#pragma once

#include <cstdint>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "flexcast/graph.hpp"

namespace flexcast {

// Single-file key-value store of per-station k-hop subgraphs.
//
// Layout (little-endian):
//   header   "FXSG" | u8 version | 3 zero bytes
//   records  u32 payload length | payload | u32 crc32(payload)     (one per station)
//   index    u64 count | count x (str id | u64 record offset)
//   trailer  u64 index offset | u32 crc32(index) | "FXIX"
//
// The index is read once on open; get() seeks straight to one record.
class SubgraphStore {
public:
    static constexpr std::uint8_t kVersion = 1;

    static SubgraphStore build(const ProximityGraph& graph, std::size_t k, const std::string& path);
    static SubgraphStore open(const std::string& path);

    SubgraphRecord get(std::string_view id) const;
    bool contains(std::string_view id) const { return index_.count(std::string(id)) > 0; }
    const std::vector<std::string>& keys() const { return keys_; }
    std::size_t size() const { return keys_.size(); }
    const std::string& path() const { return path_; }

private:
    std::string path_;
    std::vector<std::string> keys_;
    std::unordered_map<std::string, std::uint64_t> index_;
};

std::string encode_record(const SubgraphRecord& rec);
SubgraphRecord decode_record(std::string_view payload);

}  // namespace flexcast
