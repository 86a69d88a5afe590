#include <algorithm>

#include "flexcast/data.hpp"
#include "flexcast/error.hpp"
#include "flexcast/random.hpp"

namespace flexcast {

SubgraphCache SubgraphCache::load(const SubgraphStore& store, std::span<const std::string> station_ids) {
    std::vector<SubgraphRecord> records;
    records.reserve(station_ids.size());
    for (const auto& id : station_ids) records.push_back(store.get(id));
    return SubgraphCache(std::move(records));
}

const SubgraphRecord& SubgraphCache::at(std::size_t station) const {
    if (station >= records_.size()) throw KeyError("no subgraph for station row " + std::to_string(station));
    return records_[station];
}

namespace {

SampleBatch stack(std::span<const Sample> samples, std::span<const SubgraphRecord* const> records,
                  const TrafficSeries& series, std::size_t history, std::size_t horizon, bool require_targets) {
    if (samples.empty()) throw ContractError("cannot assemble an empty batch");
    SampleBatch batch;
    batch.samples.assign(samples.begin(), samples.end());
    batch.node_offsets.push_back(0);
    for (const auto* rec : records) batch.node_offsets.push_back(batch.node_offsets.back() + rec->size());
    const std::size_t total = batch.node_offsets.back();

    batch.histories = Tensor({total, history, 1});
    batch.targets = Tensor({samples.size(), horizon});
    std::vector<std::vector<std::size_t>> nbrs(total);
    for (std::size_t b = 0; b < samples.size(); ++b) {
        const auto& s = samples[b];
        const auto& rec = *records[b];
        const std::size_t base = batch.node_offsets[b];
        if (rec.node_index.empty() || rec.node_index[0] != s.station)
            throw IntegrityError("subgraph center does not match sample station");
        const std::size_t last = require_targets ? s.t + horizon : s.t;
        if (s.t < history || last > series.steps)
            throw IndexError("sample t=" + std::to_string(s.t) + " has no full window");
        batch.centers.push_back(base);
        for (std::size_t j = 0; j < rec.size(); ++j) {
            const auto row = series.row(rec.node_index[j]);
            std::copy_n(row.begin() + static_cast<std::ptrdiff_t>(s.t - history), history,
                        batch.histories.data.begin() + static_cast<std::ptrdiff_t>((base + j) * history));
        }
        const auto row = series.row(s.station);
        const std::size_t known = std::min(horizon, series.steps - s.t);
        std::copy_n(row.begin() + s.t, known, batch.targets.data.begin() + static_cast<std::ptrdiff_t>(b * horizon));
        for (const auto& e : rec.edges) {
            nbrs[base + e.a].push_back(base + e.b);
            nbrs[base + e.b].push_back(base + e.a);
        }
    }
    auto adj = std::make_shared<ad::Adjacency>();
    adj->offsets.reserve(total + 1);
    for (auto& n : nbrs) {
        std::sort(n.begin(), n.end());
        adj->neighbors.insert(adj->neighbors.end(), n.begin(), n.end());
        adj->offsets.push_back(adj->neighbors.size());
    }
    batch.adjacency = std::move(adj);
    return batch;
}

}  // namespace

SampleBatch assemble_batch(std::span<const Sample> samples, const SubgraphCache& subgraphs,
                           const TrafficSeries& series, const BatchOptions& options) {
    const bool dropout = options.train && options.edge_dropout > 0.0;
    std::vector<SubgraphRecord> dropped;
    if (dropout) dropped.reserve(samples.size());
    std::vector<const SubgraphRecord*> records;
    records.reserve(samples.size());
    for (std::size_t b = 0; b < samples.size(); ++b) {
        const auto& rec = subgraphs.at(samples[b].station);
        if (dropout) {
            dropped.push_back(edge_dropout(rec, options.edge_dropout, derive_seed(options.seed, {b})));
            records.push_back(&dropped.back());
        } else {
            records.push_back(&rec);
        }
    }
    return stack(samples, records, series, options.history, options.horizon, options.require_targets);
}

SampleBatch assemble_batch(std::span<const Sample> samples, std::span<const SubgraphRecord> records,
                           const TrafficSeries& series, std::size_t history, std::size_t horizon) {
    if (records.size() != samples.size()) throw DimensionError("one subgraph record per sample required");
    std::vector<const SubgraphRecord*> ptrs;
    for (const auto& r : records) ptrs.push_back(&r);
    return stack(samples, ptrs, series, history, horizon, true);
}

}  // namespace flexcast
