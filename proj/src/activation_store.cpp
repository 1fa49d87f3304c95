// SPDX-License-Identifier: Apache-2.0

#include "harmprobe/activation_store.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <iterator>
#include <numeric>
#include <random>
#include <set>
#include <sstream>

#include "harmprobe/error.hpp"

namespace harmprobe {

namespace fs = std::filesystem;
using nlohmann::json;

std::string_view to_string(ErrorCode code) noexcept {
    switch (code) {
        case ErrorCode::io: return "io";
        case ErrorCode::bad_magic: return "bad_magic";
        case ErrorCode::unsupported_version: return "unsupported_version";
        case ErrorCode::malformed_header: return "malformed_header";
        case ErrorCode::invalid_dimension: return "invalid_dimension";
        case ErrorCode::unknown_dtype: return "unknown_dtype";
        case ErrorCode::length_mismatch: return "length_mismatch";
        case ErrorCode::non_finite: return "non_finite";
        case ErrorCode::shape_mismatch: return "shape_mismatch";
        case ErrorCode::degenerate: return "degenerate";
        case ErrorCode::invalid_argument: return "invalid_argument";
        case ErrorCode::config: return "config";
        case ErrorCode::missing_cache: return "missing_cache";
    }
    return "unknown";
}

// --- enums -----------------------------------------------------------------

std::string ProtocolId::str() const {
    std::string out = pooling == Pooling::max_pool ? "mp" : "lt";
    out += formatting == Formatting::raw ? "/raw" : "/chat";
    return out;
}

ProtocolId ProtocolId::parse(std::string_view text) {
    if (text == "mp/raw") return {Pooling::max_pool, Formatting::raw};
    if (text == "mp/chat") return {Pooling::max_pool, Formatting::chat};
    if (text == "lt/raw") return {Pooling::last_token, Formatting::raw};
    if (text == "lt/chat") return {Pooling::last_token, Formatting::chat};
    throw Error(ErrorCode::invalid_argument, "unknown protocol '" + std::string(text) + "'");
}

std::string_view to_string(Label label) noexcept {
    return label == Label::harmful ? "harmful" : "benign";
}

std::string_view to_string(Variant variant) noexcept {
    switch (variant) {
        case Variant::base: return "base";
        case Variant::instruct: return "instruct";
        case Variant::abliterated: return "abliterated";
        case Variant::synthetic: return "synthetic";
    }
    return "synthetic";
}

std::string_view to_string(Split split) noexcept {
    switch (split) {
        case Split::fit: return "fit";
        case Split::val: return "val";
        case Split::eval: return "eval";
    }
    return "eval";
}

Label parse_label(std::string_view text) {
    if (text == "harmful") return Label::harmful;
    if (text == "benign") return Label::benign;
    throw Error(ErrorCode::invalid_argument, "unknown label '" + std::string(text) + "'");
}

Variant parse_variant(std::string_view text) {
    if (text == "base") return Variant::base;
    if (text == "instruct") return Variant::instruct;
    if (text == "abliterated") return Variant::abliterated;
    if (text == "synthetic") return Variant::synthetic;
    throw Error(ErrorCode::invalid_argument, "unknown variant '" + std::string(text) + "'");
}

Split parse_split(std::string_view text) {
    if (text == "fit") return Split::fit;
    if (text == "val") return Split::val;
    if (text == "eval") return Split::eval;
    throw Error(ErrorCode::invalid_argument, "unknown split '" + std::string(text) + "'");
}

// --- ActivationSet ---------------------------------------------------------

ActivationSet::ActivationSet(CacheMeta meta, std::size_t dim) : meta_(std::move(meta)), dim_(dim) {
    if (dim_ == 0) throw Error(ErrorCode::invalid_dimension, "invalid dimension: dim must be >= 1");
}

ActivationSet::ActivationSet(CacheMeta meta, std::size_t dim, std::vector<float> data,
                             std::vector<Label> labels, std::vector<std::string> sources)
    : meta_(std::move(meta)),
      dim_(dim),
      data_(std::move(data)),
      labels_(std::move(labels)),
      sources_(std::move(sources)) {
    if (dim_ == 0) throw Error(ErrorCode::invalid_dimension, "invalid dimension: dim must be >= 1");
    if (labels_.size() != sources_.size() || data_.size() != labels_.size() * dim_) {
        throw Error(ErrorCode::length_mismatch,
                    "length mismatch: data/labels/sources disagree on row count");
    }
}

void ActivationSet::append(std::span<const float> values, Label label, std::string source) {
    if (values.size() != dim_) {
        throw Error(ErrorCode::shape_mismatch, "row has " + std::to_string(values.size()) +
                                                   " entries, expected " + std::to_string(dim_));
    }
    data_.insert(data_.end(), values.begin(), values.end());
    labels_.push_back(label);
    sources_.push_back(std::move(source));
}

ActivationSet ActivationSet::select(std::span<const std::size_t> indices) const {
    ActivationSet out(meta_, dim_);
    out.data_.reserve(indices.size() * dim_);
    out.labels_.reserve(indices.size());
    out.sources_.reserve(indices.size());
    for (std::size_t i : indices) {
        if (i >= rows()) throw Error(ErrorCode::invalid_argument, "row index out of range");
        out.append(row(i), labels_[i], sources_[i]);
    }
    return out;
}

ActivationSet ActivationSet::with_label(Label label) const {
    std::vector<std::size_t> idx;
    for (std::size_t i = 0; i < rows(); ++i) {
        if (labels_[i] == label) idx.push_back(i);
    }
    return select(idx);
}

std::size_t ActivationSet::count(Label label) const noexcept {
    return static_cast<std::size_t>(std::count(labels_.begin(), labels_.end(), label));
}

bool ActivationSet::all_finite() const noexcept {
    return std::all_of(data_.begin(), data_.end(), [](float v) { return std::isfinite(v); });
}

bool operator==(const ActivationSet& a, const ActivationSet& b) {
    return a.dim_ == b.dim_ && a.meta_ == b.meta_ && a.labels_ == b.labels_ &&
           a.sources_ == b.sources_ && a.data_.size() == b.data_.size() &&
           (a.data_.empty() ||
            std::memcmp(a.data_.data(), b.data_.data(), a.data_.size() * sizeof(float)) == 0);
}

// --- ACTV1 encoding --------------------------------------------------------

namespace {

constexpr std::size_t kPreambleBytes = 10;

void put_u32_le(std::vector<std::uint8_t>& out, std::uint32_t v) {
    for (int i = 0; i < 4; ++i) out.push_back(static_cast<std::uint8_t>((v >> (8 * i)) & 0xffu));
}

std::uint32_t get_u32_le(const std::uint8_t* p) {
    return static_cast<std::uint32_t>(p[0]) | (static_cast<std::uint32_t>(p[1]) << 8) |
           (static_cast<std::uint32_t>(p[2]) << 16) | (static_cast<std::uint32_t>(p[3]) << 24);
}

json header_for(const ActivationSet& set) {
    const auto& m = set.meta();
    json labels = json::array();
    for (Label l : set.labels()) labels.push_back(to_string(l));
    json header = {
        {"model_id", m.model_id},
        {"variant", to_string(m.variant)},
        {"protocol",
         {{"pooling", m.protocol.pooling == Pooling::max_pool ? "max_pool" : "last_token"},
          {"formatting", m.protocol.formatting == Formatting::raw ? "raw" : "chat"}}},
        {"layer", m.layer},
        {"split", to_string(m.split)},
        {"rows", set.rows()},
        {"dim", set.dim()},
        {"dtype", "f32le"},
        {"labels", std::move(labels)},
        {"sources", set.sources()},
    };
    if (!m.extra.empty()) header["extra"] = m.extra;
    return header;
}

template <typename T>
T header_field(const json& header, const char* key) {
    auto it = header.find(key);
    if (it == header.end()) {
        throw Error(ErrorCode::malformed_header, std::string("header missing key '") + key + "'");
    }
    try {
        return it->get<T>();
    } catch (const json::exception&) {
        throw Error(ErrorCode::malformed_header, std::string("header key '") + key + "' has wrong type");
    }
}

ProtocolId parse_header_protocol(const json& header) {
    auto proto = header_field<json>(header, "protocol");
    if (!proto.is_object()) throw Error(ErrorCode::malformed_header, "header 'protocol' is not an object");
    auto pooling = header_field<std::string>(proto, "pooling");
    auto formatting = header_field<std::string>(proto, "formatting");
    ProtocolId id;
    if (pooling == "max_pool" || pooling == "mp") {
        id.pooling = Pooling::max_pool;
    } else if (pooling == "last_token" || pooling == "lt") {
        id.pooling = Pooling::last_token;
    } else {
        throw Error(ErrorCode::malformed_header, "unknown pooling '" + pooling + "'");
    }
    if (formatting == "raw") {
        id.formatting = Formatting::raw;
    } else if (formatting == "chat") {
        id.formatting = Formatting::chat;
    } else {
        throw Error(ErrorCode::malformed_header, "unknown formatting '" + formatting + "'");
    }
    return id;
}

}  // namespace

std::vector<std::uint8_t> encode_cache(const ActivationSet& set) {
    if (set.dim() == 0) throw Error(ErrorCode::invalid_dimension, "invalid dimension: dim must be >= 1");
    if (!set.all_finite()) throw Error(ErrorCode::non_finite, "non-finite value in activation matrix");

    const std::string header = header_for(set).dump();
    std::vector<std::uint8_t> out;
    out.reserve(kPreambleBytes + header.size() + set.data().size() * 4);
    out.insert(out.end(), kCacheMagic.begin(), kCacheMagic.end());
    out.push_back(kCacheVersion);
    put_u32_le(out, static_cast<std::uint32_t>(header.size()));
    out.insert(out.end(), header.begin(), header.end());
    for (float v : set.data()) put_u32_le(out, std::bit_cast<std::uint32_t>(v));
    return out;
}

ActivationSet decode_cache(std::span<const std::uint8_t> bytes) {
    if (bytes.size() < kCacheMagic.size() ||
        std::memcmp(bytes.data(), kCacheMagic.data(), kCacheMagic.size()) != 0) {
        throw Error(ErrorCode::bad_magic, "bad magic: not an ACTV1 file");
    }
    if (bytes.size() < kPreambleBytes) {
        throw Error(ErrorCode::length_mismatch, "length mismatch: truncated preamble");
    }
    if (bytes[5] != kCacheVersion) {
        throw Error(ErrorCode::unsupported_version,
                    "unsupported format version " + std::to_string(bytes[5]));
    }
    const std::uint64_t header_len = get_u32_le(bytes.data() + 6);
    if (kPreambleBytes + header_len > bytes.size()) {
        throw Error(ErrorCode::length_mismatch, "length mismatch: header extends past end of file");
    }

    json header;
    try {
        header = json::parse(bytes.begin() + kPreambleBytes,
                             bytes.begin() + static_cast<std::ptrdiff_t>(kPreambleBytes + header_len));
    } catch (const json::exception& e) {
        throw Error(ErrorCode::malformed_header, std::string("header is not valid JSON: ") + e.what());
    }
    if (!header.is_object()) throw Error(ErrorCode::malformed_header, "header is not a JSON object");

    const auto dtype = header_field<std::string>(header, "dtype");
    if (dtype != "f32le") throw Error(ErrorCode::unknown_dtype, "unknown dtype '" + dtype + "'");
    const auto dim = header_field<std::uint64_t>(header, "dim");
    if (dim == 0) throw Error(ErrorCode::invalid_dimension, "invalid dimension: header declares dim=0");
    const auto rows = header_field<std::uint64_t>(header, "rows");

    CacheMeta meta;
    meta.model_id = header_field<std::string>(header, "model_id");
    try {
        meta.variant = parse_variant(header_field<std::string>(header, "variant"));
        meta.split = parse_split(header_field<std::string>(header, "split"));
    } catch (const Error& e) {
        if (e.code() == ErrorCode::malformed_header) throw;
        throw Error(ErrorCode::malformed_header, e.what());
    }
    meta.protocol = parse_header_protocol(header);
    meta.layer = header_field<std::uint32_t>(header, "layer");
    if (auto it = header.find("extra"); it != header.end()) meta.extra = *it;

    const auto label_text = header_field<std::vector<std::string>>(header, "labels");
    auto sources = header_field<std::vector<std::string>>(header, "sources");
    if (label_text.size() != rows || sources.size() != rows) {
        throw Error(ErrorCode::length_mismatch,
                    "length mismatch: labels/sources count differs from rows");
    }
    std::vector<Label> labels;
    labels.reserve(rows);
    for (const auto& t : label_text) {
        if (t != "harmful" && t != "benign") {
            throw Error(ErrorCode::malformed_header, "unknown label '" + t + "'");
        }
        labels.push_back(parse_label(t));
    }

    const std::uint64_t payload = bytes.size() - kPreambleBytes - header_len;
    if (rows > payload / 4 / dim + 1 || payload != rows * dim * 4) {
        throw Error(ErrorCode::length_mismatch,
                    "length mismatch: payload has " + std::to_string(payload) + " bytes, header implies " +
                        std::to_string(rows * dim * 4));
    }
    std::vector<float> data(rows * dim);
    const std::uint8_t* p = bytes.data() + kPreambleBytes + header_len;
    for (std::size_t i = 0; i < data.size(); ++i, p += 4) {
        data[i] = std::bit_cast<float>(get_u32_le(p));
    }
    ActivationSet set(std::move(meta), dim, std::move(data), std::move(labels), std::move(sources));
    if (!set.all_finite()) throw Error(ErrorCode::non_finite, "non-finite value in cache payload");
    return set;
}

void write_cache(const ActivationSet& set, const fs::path& path) {
    const auto bytes = encode_cache(set);
    if (path.has_parent_path()) {
        std::error_code ec;
        fs::create_directories(path.parent_path(), ec);
    }
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw Error(ErrorCode::io, "cannot open '" + path.string() + "' for writing");
    out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw Error(ErrorCode::io, "write failed for '" + path.string() + "'");
}

ActivationSet read_cache(const fs::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw Error(ErrorCode::missing_cache, "cannot open cache '" + path.string() + "'");
    std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    try {
        return decode_cache(bytes);
    } catch (const Error& e) {
        throw Error(e.code(), path.string() + ": " + e.what());
    }
}

fs::path cache_path(const fs::path& root, const ProtocolId& protocol, std::uint32_t layer, Split split) {
    std::string proto = protocol.str();
    std::replace(proto.begin(), proto.end(), '/', '-');
    char layer_dir[32];
    std::snprintf(layer_dir, sizeof layer_dir, "layer_%03u", layer);
    return root / proto / layer_dir / (std::string(to_string(split)) + ".actv");
}

std::vector<std::uint32_t> list_layers(const fs::path& root, const ProtocolId& protocol) {
    std::string proto = protocol.str();
    std::replace(proto.begin(), proto.end(), '/', '-');
    std::vector<std::uint32_t> layers;
    std::error_code ec;
    for (const auto& entry : fs::directory_iterator(root / proto, ec)) {
        const auto name = entry.path().filename().string();
        if (!entry.is_directory() || name.rfind("layer_", 0) != 0) continue;
        try {
            layers.push_back(static_cast<std::uint32_t>(std::stoul(name.substr(6))));
        } catch (const std::exception&) {
        }
    }
    std::sort(layers.begin(), layers.end());
    return layers;
}

// --- manifests & partition -------------------------------------------------

SplitManifest SplitManifest::from_json(const json& doc) {
    SplitManifest m;
    try {
        m.seed = doc.value("seed", std::uint64_t{42});
        const auto& splits = doc.at("splits");
        auto load = [&](const char* key, std::map<std::string, std::size_t>& dst) {
            if (auto it = splits.find(key); it != splits.end()) {
                dst = it->get<std::map<std::string, std::size_t>>();
            }
        };
        load("fit", m.fit);
        load("val", m.val);
        load("eval", m.eval);
    } catch (const json::exception& e) {
        throw Error(ErrorCode::config, std::string("malformed split manifest: ") + e.what());
    }
    return m;
}

json SplitManifest::to_json() const {
    return {{"seed", seed}, {"splits", {{"fit", fit}, {"val", val}, {"eval", eval}}}};
}

SplitManifest read_manifest(const fs::path& path) {
    std::ifstream in(path);
    if (!in) throw Error(ErrorCode::io, "cannot open manifest '" + path.string() + "'");
    try {
        return SplitManifest::from_json(json::parse(in));
    } catch (const json::parse_error& e) {
        throw Error(ErrorCode::config, std::string("manifest is not valid JSON: ") + e.what());
    }
}

Partition partition(const ActivationSet& set, const SplitManifest& manifest) {
    std::map<std::string, std::vector<std::size_t>> by_source;
    for (std::size_t i = 0; i < set.rows(); ++i) by_source[set.sources()[i]].push_back(i);

    for (const auto* split : {&manifest.fit, &manifest.val, &manifest.eval}) {
        for (const auto& [source, n] : *split) {
            if (!by_source.contains(source)) {
                throw Error(ErrorCode::config, "manifest references unknown source '" + source + "'");
            }
        }
    }

    auto lookup = [](const std::map<std::string, std::size_t>& m, const std::string& key) -> std::size_t {
        auto it = m.find(key);
        return it == m.end() ? 0 : it->second;
    };

    // Sources are visited in sorted order and drawn from one generator, so the
    // result depends only on (set, manifest).
    std::mt19937_64 rng(manifest.seed);
    Partition out;
    for (auto& [source, rows] : by_source) {
        const std::size_t n_fit = lookup(manifest.fit, source);
        const std::size_t n_val = lookup(manifest.val, source);
        const bool eval_listed = manifest.eval.contains(source);
        const std::size_t n_eval = eval_listed ? manifest.eval.at(source) : rows.size() - std::min(rows.size(), n_fit + n_val);
        if (n_fit + n_val + n_eval > rows.size()) {
            throw Error(ErrorCode::config, "insufficient rows in source '" + source + "': requested " +
                                               std::to_string(n_fit + n_val + n_eval) + ", available " +
                                               std::to_string(rows.size()));
        }
        std::shuffle(rows.begin(), rows.end(), rng);
        auto take = [&](std::size_t begin, std::size_t n, std::vector<std::size_t>& dst) {
            dst.insert(dst.end(), rows.begin() + static_cast<std::ptrdiff_t>(begin),
                       rows.begin() + static_cast<std::ptrdiff_t>(begin + n));
        };
        take(0, n_fit, out.fit_rows);
        take(n_fit, n_val, out.val_rows);
        take(n_fit + n_val, n_eval, out.eval_rows);
    }

    std::sort(out.fit_rows.begin(), out.fit_rows.end());
    std::sort(out.val_rows.begin(), out.val_rows.end());
    std::sort(out.eval_rows.begin(), out.eval_rows.end());
    out.fit = set.select(out.fit_rows);
    out.val = set.select(out.val_rows);
    out.eval = set.select(out.eval_rows);
    out.fit.meta().split = Split::fit;
    out.val.meta().split = Split::val;
    out.eval.meta().split = Split::eval;
    return out;
}

}  // namespace harmprobe
