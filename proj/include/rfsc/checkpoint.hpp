#pragma once

// Checkpoint codec. Little-endian binary layout, bit-exact round trip:
//   magic "RFSC" | version u32 | spec block | param records | ema block
// spec block:  input_dim u32, hidden_count u32, hidden_dims u32...,
//              feature_dim u32, num_base_classes u32
// one record:  name_len u32, name bytes (UTF-8), rank u32, dims u32...,
//              payload f32 LE
// records:     count u32, then that many records (live weights incl. head)
// ema block:   present u8; if 1, count u32 + records for the averaged
//              extractor weights (the head is never averaged).

#include <cstdint>
#include <string>
#include <vector>

#include "rfsc/io.hpp"
#include "rfsc/network.hpp"

namespace rfsc {

inline constexpr std::uint32_t kCheckpointVersion = 1;

namespace detail {

inline void put_record(std::vector<std::uint8_t>& out, const std::string& name, const Tensor& t) {
    put_u32_le(out, static_cast<std::uint32_t>(name.size()));
    out.insert(out.end(), name.begin(), name.end());
    put_u32_le(out, static_cast<std::uint32_t>(t.rank()));
    for (auto d : t.shape()) put_u32_le(out, static_cast<std::uint32_t>(d));
    for (std::int64_t i = 0; i < t.size(); ++i) put_f32_le(out, t.raw()[i]);
}

struct Record {
    std::string name;
    Shape shape;
    std::vector<float> values;
};

inline Record get_record(ByteReader& r) {
    Record rec;
    const std::uint32_t name_len = r.u32_le("record name length");
    r.need(name_len, "record name");
    rec.name.assign(reinterpret_cast<const char*>(r.bytes.data() + r.pos), name_len);
    r.pos += name_len;
    const std::uint32_t rank = r.u32_le("record rank");
    // Every payload value occupies four bytes, so a record can never hold
    // more values than the file has bytes; checking inside the loop keeps the
    // running product from overflowing and bounds the allocation below.
    const std::uint64_t max_elems = r.bytes.size();
    std::uint64_t numel = 1;
    for (std::uint32_t i = 0; i < rank; ++i) {
        const std::uint32_t d = r.u32_le("record dim");
        rec.shape.push_back(static_cast<std::int64_t>(d));
        numel *= d;
        if (numel > max_elems)
            fail_data(r.source + ": record '" + rec.name + "' claims more payload than the file holds");
    }
    r.need(numel * 4, "record payload");
    rec.values.reserve(static_cast<std::size_t>(numel));
    for (std::uint64_t i = 0; i < numel; ++i) rec.values.push_back(get_f32_le(r, rec.name.c_str()));
    return rec;
}

} // namespace detail

[[nodiscard]] inline std::vector<std::uint8_t> serialize_network(const Network& net) {
    std::vector<std::uint8_t> out{'R', 'F', 'S', 'C'};
    put_u32_le(out, kCheckpointVersion);
    const auto& spec = net.spec();
    put_u32_le(out, static_cast<std::uint32_t>(spec.input_dim));
    put_u32_le(out, static_cast<std::uint32_t>(spec.hidden_dims.size()));
    for (auto d : spec.hidden_dims) put_u32_le(out, static_cast<std::uint32_t>(d));
    put_u32_le(out, static_cast<std::uint32_t>(spec.feature_dim));
    put_u32_le(out, static_cast<std::uint32_t>(spec.num_base_classes));

    const auto params = net.named_params();
    put_u32_le(out, static_cast<std::uint32_t>(params.size()));
    for (const auto& [name, t] : params) detail::put_record(out, name, *t);

    const auto ema = net.named_ema_params();
    out.push_back(1); // the averaged extractor is always materialized
    put_u32_le(out, static_cast<std::uint32_t>(ema.size()));
    for (const auto& [name, t] : ema) detail::put_record(out, name, *t);
    return out;
}

inline void save_checkpoint(const std::string& path, const Network& net) {
    write_bytes(path, serialize_network(net));
}

[[nodiscard]] inline Network deserialize_network(const std::vector<std::uint8_t>& bytes, const std::string& source) {
    ByteReader r{bytes, 0, source};
    r.need(4, "magic");
    if (!(bytes[0] == 'R' && bytes[1] == 'F' && bytes[2] == 'S' && bytes[3] == 'C'))
        fail_data(source + ": bad checkpoint magic, expected \"RFSC\"");
    r.pos = 4;
    const std::uint32_t version = r.u32_le("version");
    if (version != kCheckpointVersion)
        fail_data(source + ": checkpoint version " + std::to_string(version) + " unsupported, expected " +
                  std::to_string(kCheckpointVersion));

    MlpSpec spec;
    spec.input_dim = r.u32_le("input_dim");
    const std::uint32_t hidden_count = r.u32_le("hidden count");
    spec.hidden_dims.clear();
    for (std::uint32_t i = 0; i < hidden_count; ++i) spec.hidden_dims.push_back(r.u32_le("hidden dim"));
    spec.feature_dim = r.u32_le("feature_dim");
    spec.num_base_classes = r.u32_le("num_base_classes");

    // A corrupted spec block could imply absurd shapes. Every parameter's
    // payload must be present in the file, so bound the implied element count
    // by the byte count before allocating the network.
    const std::uint64_t max_elems = bytes.size() / 4 + 1;
    auto check_dim = [&](std::int64_t d, const char* what) {
        if (d <= 0 || static_cast<std::uint64_t>(d) > max_elems)
            fail_data(source + ": spec block " + std::string(what) + " " + std::to_string(d) +
                      " cannot fit in a " + std::to_string(bytes.size()) + "-byte checkpoint");
    };
    check_dim(spec.input_dim, "input_dim");
    for (auto d : spec.hidden_dims) check_dim(d, "hidden dim");
    check_dim(spec.feature_dim, "feature_dim");
    check_dim(spec.num_base_classes, "num_base_classes");
    std::uint64_t budget = max_elems;
    auto spend = [&](std::uint64_t rows, std::uint64_t cols) {
        if (cols > budget / rows) // rows ≥ 1 after check_dim
            fail_data(source + ": spec block implies more parameter values than the " +
                      std::to_string(bytes.size()) + "-byte checkpoint can hold");
        budget -= rows * cols;
    };
    const auto widths = spec.extractor_widths();
    for (std::size_t l = 0; l + 1 < widths.size(); ++l) {
        spend(static_cast<std::uint64_t>(widths[l]), static_cast<std::uint64_t>(widths[l + 1]));
        spend(1, static_cast<std::uint64_t>(widths[l + 1]));
    }
    spend(static_cast<std::uint64_t>(spec.feature_dim), static_cast<std::uint64_t>(spec.num_base_classes));
    spend(1, static_cast<std::uint64_t>(spec.num_base_classes));

    Network net(spec, /*seed=*/0);
    std::size_t filled = 0;
    const std::uint32_t pcount = r.u32_le("parameter count");
    for (std::uint32_t i = 0; i < pcount; ++i) {
        auto rec = detail::get_record(r);
        Tensor* dst = net.find_param(rec.name);
        if (!dst) fail_data(source + ": unknown parameter record '" + rec.name + "'");
        if (dst->shape() != rec.shape)
            fail_data(source + ": parameter '" + rec.name + "' has shape " + shape_str(rec.shape) +
                      ", spec block implies " + shape_str(dst->shape()));
        std::copy(rec.values.begin(), rec.values.end(), dst->raw());
        ++filled;
    }
    if (filled != net.named_params().size())
        fail_data(source + ": checkpoint holds " + std::to_string(filled) + " parameters, network needs " +
                  std::to_string(net.named_params().size()));

    const std::uint8_t ema_present = r.u8("ema flag");
    if (ema_present) {
        const std::uint32_t ecount = r.u32_le("ema record count");
        for (std::uint32_t i = 0; i < ecount; ++i) {
            auto rec = detail::get_record(r);
            Tensor* dst = net.find_ema_param(rec.name);
            if (!dst) fail_data(source + ": unknown averaged-parameter record '" + rec.name + "'");
            if (dst->shape() != rec.shape)
                fail_data(source + ": averaged parameter '" + rec.name + "' has shape " + shape_str(rec.shape) +
                          ", spec block implies " + shape_str(dst->shape()));
            std::copy(rec.values.begin(), rec.values.end(), dst->raw());
        }
    } else {
        net.reset_ema_to_current();
    }
    if (r.pos != bytes.size())
        fail_data(source + ": " + std::to_string(bytes.size() - r.pos) + " trailing bytes after checkpoint payload");
    return net;
}

[[nodiscard]] inline Network load_checkpoint(const std::string& path) {
    return deserialize_network(read_bytes(path), path);
}

[[nodiscard]] inline std::string checkpoint_hash(const std::string& path) {
    return hex64(fnv1a64(read_bytes(path)));
}

} // namespace rfsc
