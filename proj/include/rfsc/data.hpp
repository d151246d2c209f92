#pragma once

// Datasets and their codecs: labeled image sets with a per-class index,
// a deterministic synthetic generator, IDX and CSV loaders, and class-level
// split manifests. Pixels are always floats in [0,1], images row-major and
// flattened.

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <map>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include "rfsc/error.hpp"
#include "rfsc/io.hpp"
#include "rfsc/rng.hpp"
#include "rfsc/tensor.hpp"

namespace rfsc {

struct LabeledSet {
    std::int64_t input_dim = 0;
    std::vector<float> images; // count * input_dim
    std::vector<int> labels;
    // label -> ascending sample indices; rebuilt whenever samples change.
    std::map<int, std::vector<int>> class_index;
    // dense label -> original class id, recorded by apply_split; empty when
    // labels are original.
    std::vector<int> class_to_original;

    [[nodiscard]] std::int64_t count() const { return static_cast<std::int64_t>(labels.size()); }
    [[nodiscard]] int num_classes() const { return static_cast<int>(class_index.size()); }

    void rebuild_index() {
        class_index.clear();
        for (std::size_t i = 0; i < labels.size(); ++i) class_index[labels[i]].push_back(static_cast<int>(i));
    }

    void validate() const {
        if (static_cast<std::int64_t>(images.size()) != count() * input_dim)
            fail_data("labeled set: " + std::to_string(images.size()) + " pixels do not match " +
                      std::to_string(count()) + " samples of dim " + std::to_string(input_dim));
        for (std::size_t i = 0; i < labels.size(); ++i)
            if (labels[i] < 0) fail_data("labeled set: negative label at sample " + std::to_string(i));
    }
};

[[nodiscard]] inline Tensor gather_images(const LabeledSet& set, std::span<const int> idx) {
    Tensor out({static_cast<std::int64_t>(idx.size()), set.input_dim});
    for (std::size_t i = 0; i < idx.size(); ++i) {
        const float* src = set.images.data() + static_cast<std::size_t>(idx[i]) * static_cast<std::size_t>(set.input_dim);
        std::copy(src, src + set.input_dim, out.raw() + static_cast<std::int64_t>(i) * set.input_dim);
    }
    return out;
}

[[nodiscard]] inline std::vector<int> gather_labels(const LabeledSet& set, std::span<const int> idx) {
    std::vector<int> out(idx.size());
    for (std::size_t i = 0; i < idx.size(); ++i) out[i] = set.labels[static_cast<std::size_t>(idx[i])];
    return out;
}

// ===== Synthetic data =====

// Each class is a fixed random template; samples are the template plus
// Gaussian pixel noise, clamped back to [0,1]. template_scale compresses the
// template's contrast about mid-gray (1.0 = uniform in [0,1]).
struct SyntheticSpec {
    int num_classes = 35;
    int samples_per_class = 200;
    int side = 8;
    float template_scale = 1.0f;
    float noise_sigma = 0.15f;
    std::uint64_t seed = 7;
};

[[nodiscard]] inline LabeledSet gen_synthetic(const SyntheticSpec& spec) {
    if (spec.num_classes <= 0 || spec.samples_per_class <= 0 || spec.side <= 0)
        fail_data("gen_synthetic: num_classes, samples_per_class and side must be positive");
    if (spec.noise_sigma < 0) fail_data("gen_synthetic: noise_sigma must be nonnegative");
    const std::int64_t dim = static_cast<std::int64_t>(spec.side) * spec.side;
    LabeledSet set;
    set.input_dim = dim;
    Rng rng(mix_seed(spec.seed, 0x73796e7468ull)); // stream tag: "synth"
    std::vector<float> tmpl(static_cast<std::size_t>(dim));
    for (int c = 0; c < spec.num_classes; ++c) {
        for (auto& px : tmpl) {
            const double u = rng.uniform();
            double v = 0.5 + (u - 0.5) * static_cast<double>(spec.template_scale);
            px = static_cast<float>(std::min(1.0, std::max(0.0, v)));
        }
        for (int s = 0; s < spec.samples_per_class; ++s) {
            for (std::int64_t j = 0; j < dim; ++j) {
                float v = tmpl[static_cast<std::size_t>(j)];
                if (spec.noise_sigma > 0)
                    v += spec.noise_sigma * static_cast<float>(rng.normal());
                set.images.push_back(std::min(1.0f, std::max(0.0f, v)));
            }
            set.labels.push_back(c);
        }
    }
    set.rebuild_index();
    return set;
}

// ===== IDX codec =====

// Big-endian IDX: images file magic 0x00000803 with dims [count, rows, cols]
// and one byte per pixel (scaled by 1/255); labels file magic 0x00000801.

[[nodiscard]] inline LabeledSet load_idx(const std::string& images_path, const std::string& labels_path) {
    const auto ibytes = read_bytes(images_path);
    ByteReader ir{ibytes, 0, images_path};
    const std::uint32_t imagic = ir.u32_be("magic");
    if (imagic != 0x00000803u) {
        std::ostringstream os;
        os << images_path << ": bad image magic 0x" << std::hex << imagic << ", expected 0x803";
        fail_data(os.str());
    }
    const std::uint32_t count = ir.u32_be("count");
    const std::uint32_t rows = ir.u32_be("rows");
    const std::uint32_t cols = ir.u32_be("cols");
    const std::uint64_t npix = static_cast<std::uint64_t>(count) * rows * cols;
    ir.need(npix, "pixel data");

    const auto lbytes = read_bytes(labels_path);
    ByteReader lr{lbytes, 0, labels_path};
    const std::uint32_t lmagic = lr.u32_be("magic");
    if (lmagic != 0x00000801u) {
        std::ostringstream os;
        os << labels_path << ": bad label magic 0x" << std::hex << lmagic << ", expected 0x801";
        fail_data(os.str());
    }
    const std::uint32_t lcount = lr.u32_be("count");
    if (lcount != count)
        fail_data(labels_path + ": label count " + std::to_string(lcount) + " does not match image count " +
                  std::to_string(count));
    lr.need(lcount, "label data");

    LabeledSet set;
    set.input_dim = static_cast<std::int64_t>(rows) * cols;
    set.images.resize(npix);
    for (std::uint64_t i = 0; i < npix; ++i)
        set.images[i] = static_cast<float>(ibytes[ir.pos + i]) / 255.0f;
    set.labels.resize(count);
    for (std::uint32_t i = 0; i < count; ++i) set.labels[i] = static_cast<int>(lbytes[lr.pos + i]);
    set.rebuild_index();
    set.validate();
    return set;
}

// ===== CSV codec =====

// One sample per row: integer label, then input_dim floats in [0,1].

[[nodiscard]] inline LabeledSet load_csv(const std::string& path) {
    const std::string text = read_text(path);
    LabeledSet set;
    std::istringstream lines(text);
    std::string line;
    std::size_t row = 0;
    while (std::getline(lines, line)) {
        ++row;
        if (line.empty()) continue;
        std::istringstream fields(line);
        std::string field;
        std::vector<std::string> parts;
        while (std::getline(fields, field, ',')) parts.push_back(field);
        if (parts.size() < 2) fail_data(path + ": row " + std::to_string(row) + " has no pixel values");

        std::size_t used = 0;
        int label;
        try {
            label = std::stoi(parts[0], &used);
        } catch (const std::exception&) {
            fail_data(path + ": row " + std::to_string(row) + " has malformed label '" + parts[0] + "'");
        }
        while (used < parts[0].size() && std::isspace(static_cast<unsigned char>(parts[0][used]))) ++used;
        if (used != parts[0].size())
            fail_data(path + ": row " + std::to_string(row) + " has malformed label '" + parts[0] + "'");
        if (label < 0) fail_data(path + ": row " + std::to_string(row) + " has negative label");

        const std::int64_t dim = static_cast<std::int64_t>(parts.size()) - 1;
        if (set.input_dim == 0)
            set.input_dim = dim;
        else if (dim != set.input_dim)
            fail_data(path + ": row " + std::to_string(row) + " has " + std::to_string(dim) + " values, expected " +
                      std::to_string(set.input_dim));
        for (std::size_t i = 1; i < parts.size(); ++i) {
            float v;
            try {
                v = std::stof(parts[i], &used);
            } catch (const std::exception&) {
                fail_data(path + ": row " + std::to_string(row) + " has malformed value '" + parts[i] + "'");
            }
            while (used < parts[i].size() && std::isspace(static_cast<unsigned char>(parts[i][used]))) ++used;
            if (used != parts[i].size())
                fail_data(path + ": row " + std::to_string(row) + " has malformed value '" + parts[i] + "'");
            if (!(v >= 0.0f && v <= 1.0f))
                fail_data(path + ": row " + std::to_string(row) + " value " + parts[i] + " outside [0,1]");
            set.images.push_back(v);
        }
        set.labels.push_back(label);
    }
    if (set.labels.empty()) fail_data(path + ": no samples");
    set.rebuild_index();
    set.validate();
    return set;
}

inline void save_csv(const std::string& path, const LabeledSet& set) {
    std::ostringstream out;
    char buf[48];
    for (std::int64_t i = 0; i < set.count(); ++i) {
        out << set.labels[static_cast<std::size_t>(i)];
        const float* px = set.images.data() + i * set.input_dim;
        for (std::int64_t j = 0; j < set.input_dim; ++j) {
            // 9 significant digits round-trip a float32 exactly.
            std::snprintf(buf, sizeof buf, ",%.9g", static_cast<double>(px[j]));
            out << buf;
        }
        out << '\n';
    }
    write_text(path, out.str());
}

// ===== Split manifests =====

// Text format, one line per split:
//   base: 0,1,2
//   val: 3
//   novel: 4,5

struct SplitManifest {
    std::vector<int> base, val, novel;
};

[[nodiscard]] inline std::string manifest_to_text(const SplitManifest& m) {
    auto line = [](const char* name, const std::vector<int>& ids) {
        std::ostringstream os;
        os << name << ':';
        for (std::size_t i = 0; i < ids.size(); ++i) os << (i ? "," : " ") << ids[i];
        os << '\n';
        return os.str();
    };
    return line("base", m.base) + line("val", m.val) + line("novel", m.novel);
}

[[nodiscard]] inline SplitManifest parse_manifest(const std::string& text, const std::string& source) {
    SplitManifest m;
    bool seen_base = false, seen_val = false, seen_novel = false;
    std::istringstream lines(text);
    std::string line;
    std::size_t row = 0;
    while (std::getline(lines, line)) {
        ++row;
        if (line.empty() || line[0] == '#') continue;
        const auto colon = line.find(':');
        if (colon == std::string::npos)
            fail_data(source + ": line " + std::to_string(row) + " is not 'name: ids'");
        std::string name = line.substr(0, colon);
        name.erase(std::remove_if(name.begin(), name.end(), [](unsigned char c) { return std::isspace(c); }), name.end());
        std::vector<int>* dst = nullptr;
        if (name == "base") {
            dst = &m.base;
            seen_base = true;
        } else if (name == "val") {
            dst = &m.val;
            seen_val = true;
        } else if (name == "novel") {
            dst = &m.novel;
            seen_novel = true;
        } else {
            fail_data(source + ": line " + std::to_string(row) + " has unknown split '" + name + "'");
        }
        std::istringstream ids(line.substr(colon + 1));
        std::string tok;
        while (std::getline(ids, tok, ',')) {
            tok.erase(std::remove_if(tok.begin(), tok.end(), [](unsigned char c) { return std::isspace(c); }), tok.end());
            if (tok.empty()) continue;
            std::size_t used = 0;
            int id;
            try {
                id = std::stoi(tok, &used);
            } catch (const std::exception&) {
                fail_data(source + ": line " + std::to_string(row) + " has malformed class id '" + tok + "'");
            }
            if (used != tok.size() || id < 0)
                fail_data(source + ": line " + std::to_string(row) + " has malformed class id '" + tok + "'");
            dst->push_back(id);
        }
    }
    if (!seen_base || !seen_val || !seen_novel)
        fail_data(source + ": manifest must name all of base, val and novel");

    // Reject duplicates within and across splits.
    std::map<int, const char*> owner;
    auto claim = [&](const std::vector<int>& ids, const char* name) {
        for (int id : ids) {
            auto [it, fresh] = owner.emplace(id, name);
            if (!fresh)
                fail_data(source + ": class " + std::to_string(id) + " appears in both " + it->second + " and " + name);
        }
    };
    claim(m.base, "base");
    claim(m.val, "val");
    claim(m.novel, "novel");
    return m;
}

[[nodiscard]] inline SplitManifest load_manifest(const std::string& path) {
    return parse_manifest(read_text(path), path);
}

struct Splits {
    LabeledSet base, val, novel;
};

// Partition by class. Every split's labels are remapped to a dense [0, n)
// range by ascending original id, with the mapping recorded, so downstream
// preconditions (labels < num_classes) hold for any valid manifest. Classes
// absent from the manifest are dropped.
[[nodiscard]] inline Splits apply_split(const LabeledSet& set, const SplitManifest& manifest) {
    auto build = [&](std::vector<int> ids, const char* name) {
        std::sort(ids.begin(), ids.end());
        LabeledSet out;
        out.input_dim = set.input_dim;
        for (std::size_t dense = 0; dense < ids.size(); ++dense) {
            const int orig = ids[dense];
            auto it = set.class_index.find(orig);
            if (it == set.class_index.end())
                fail_data(std::string("apply_split: ") + name + " class " + std::to_string(orig) +
                          " does not exist in the dataset");
            for (int sample : it->second) {
                const float* px = set.images.data() + static_cast<std::size_t>(sample) * static_cast<std::size_t>(set.input_dim);
                out.images.insert(out.images.end(), px, px + set.input_dim);
                out.labels.push_back(static_cast<int>(dense));
            }
            out.class_to_original.push_back(orig);
        }
        out.rebuild_index();
        return out;
    };
    Splits s;
    s.base = build(manifest.base, "base");
    s.val = build(manifest.val, "val");
    s.novel = build(manifest.novel, "novel");
    return s;
}

} // namespace rfsc
