#include "flexcast/binary_io.hpp"
#include "flexcast/error.hpp"
#include "flexcast/model.hpp"

namespace flexcast {

namespace {

constexpr std::string_view kMagic = "FXCK";

}  // namespace

void Checkpoint::save(const std::string& path) const {
    io::BinaryWriter w;
    w.raw(kMagic);
    w.u8(kVersion);

    w.u64(model.history);
    w.u64(model.horizon);
    w.u64(model.channels);
    w.u64(model.layers);
    w.u64(model.kernels.size());
    for (auto k : model.kernels) w.u64(k);
    w.u64(model.dilation_factor);
    w.str(to_string(model.pooling));
    w.u8(model.graph_free ? 1 : 0);

    w.f64(scaler.mean);
    w.f64(scaler.std);
    w.u64(seed);
    w.str(run_config);

    w.u64(params.entries().size());
    for (const auto& e : params.entries()) {
        w.str(e.name);
        w.u8(e.trainable ? 1 : 0);
        w.u32(static_cast<std::uint32_t>(e.value.rank()));
        for (auto d : e.value.shape) w.u64(d);
        w.f64s(e.value.data);
    }
    io::BinaryWriter file;
    file.raw(w.bytes());
    file.u32(io::crc32(w.bytes()));
    io::write_file(path, file.bytes());
}

Checkpoint Checkpoint::load(const std::string& path) {
    const auto bytes = io::read_file(path);
    if (bytes.size() < 9 || std::string_view(bytes).substr(0, 4) != kMagic)
        throw FormatError(path + ": not a checkpoint");
    if (static_cast<std::uint8_t>(bytes[4]) != kVersion)
        throw FormatError(path + ": checkpoint version " + std::to_string(static_cast<int>(bytes[4])) +
                          " is not supported (expected " + std::to_string(kVersion) + ")");
    const std::string_view body(bytes.data(), bytes.size() - 4);
    if (io::crc32(body) != io::BinaryReader(std::string_view(bytes).substr(bytes.size() - 4)).u32())
        throw IntegrityError(path + ": checksum mismatch");

    io::BinaryReader r(body);
    r.raw(5);
    Checkpoint c;
    c.model.history = r.u64();
    c.model.horizon = r.u64();
    c.model.channels = r.u64();
    c.model.layers = r.u64();
    c.model.kernels.resize(r.u64());
    for (auto& k : c.model.kernels) k = r.u64();
    c.model.dilation_factor = r.u64();
    c.model.pooling = parse_pooling(r.str());
    c.model.graph_free = r.u8() != 0;

    c.scaler.mean = r.f64();
    c.scaler.std = r.f64();
    c.seed = r.u64();
    c.run_config = r.str();

    const auto count = r.u64();
    for (std::uint64_t i = 0; i < count; ++i) {
        auto name = r.str();
        const bool trainable = r.u8() != 0;
        Shape shape(r.u32());
        for (auto& d : shape) d = r.u64();
        auto data = r.f64s();
        c.params.add(std::move(name), Tensor(std::move(shape), std::move(data)), trainable);
    }
    if (!r.at_end()) throw FormatError(path + ": trailing bytes");
    // Validates names and shapes against the embedded config.
    Model check(c.model, c.params);
    return c;
}

}  // namespace flexcast
