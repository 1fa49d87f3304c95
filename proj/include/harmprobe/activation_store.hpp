// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <compare>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <map>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

namespace harmprobe {

enum class Pooling { max_pool, last_token };
enum class Formatting { raw, chat };

/// Extraction protocol: how a prompt becomes one feature vector.
/// Canonical text forms are "mp/raw", "mp/chat", "lt/raw" and "lt/chat".
struct ProtocolId {
    Pooling pooling = Pooling::max_pool;
    Formatting formatting = Formatting::raw;

    [[nodiscard]] std::string str() const;
    static ProtocolId parse(std::string_view text);

    auto operator<=>(const ProtocolId&) const = default;
};

enum class Label : std::uint8_t { harmful, benign };
enum class Variant { base, instruct, abliterated, synthetic };
enum class Split { fit, val, eval };

std::string_view to_string(Label label) noexcept;
std::string_view to_string(Variant variant) noexcept;
std::string_view to_string(Split split) noexcept;
Label parse_label(std::string_view text);
Variant parse_variant(std::string_view text);
Split parse_split(std::string_view text);

struct CacheMeta {
    std::string model_id;
    Variant variant = Variant::synthetic;
    ProtocolId protocol;
    std::uint32_t layer = 0;
    Split split = Split::eval;
    // Optional free-form header entries (generator id, position-mask file, ...).
    nlohmann::json extra = nlohmann::json::object();

    bool operator==(const CacheMeta&) const = default;
};

/// n x D matrix of f32 residual-stream vectors with per-row label and source
/// tag. Row-major storage.
class ActivationSet {
public:
    ActivationSet() = default;
    ActivationSet(CacheMeta meta, std::size_t dim);
    ActivationSet(CacheMeta meta, std::size_t dim, std::vector<float> data,
                  std::vector<Label> labels, std::vector<std::string> sources);

    [[nodiscard]] std::size_t rows() const noexcept { return labels_.size(); }
    [[nodiscard]] std::size_t dim() const noexcept { return dim_; }
    [[nodiscard]] bool empty() const noexcept { return labels_.empty(); }

    [[nodiscard]] std::span<const float> row(std::size_t i) const {
        return {data_.data() + i * dim_, dim_};
    }
    [[nodiscard]] std::span<float> row(std::size_t i) { return {data_.data() + i * dim_, dim_}; }
    [[nodiscard]] std::span<const float> data() const noexcept { return data_; }
    [[nodiscard]] const std::vector<Label>& labels() const noexcept { return labels_; }
    [[nodiscard]] const std::vector<std::string>& sources() const noexcept { return sources_; }
    [[nodiscard]] const CacheMeta& meta() const noexcept { return meta_; }
    [[nodiscard]] CacheMeta& meta() noexcept { return meta_; }

    void append(std::span<const float> values, Label label, std::string source);

    /// Rows at the given indices, in the given order.
    [[nodiscard]] ActivationSet select(std::span<const std::size_t> indices) const;
    /// Rows carrying the given label, original order preserved.
    [[nodiscard]] ActivationSet with_label(Label label) const;
    [[nodiscard]] std::size_t count(Label label) const noexcept;

    /// True when every entry is finite.
    [[nodiscard]] bool all_finite() const noexcept;

    /// Bitwise equality of the payload plus equality of labels, sources and meta.
    friend bool operator==(const ActivationSet& a, const ActivationSet& b);

private:
    CacheMeta meta_;
    std::size_t dim_ = 0;
    std::vector<float> data_;
    std::vector<Label> labels_;
    std::vector<std::string> sources_;
};

// ---------------------------------------------------------------------------
// ACTV1 cache files
//
//   [0,5)    "ACTV1"
//   [5]      format version 0x01
//   [6,10)   header length H, u32 little-endian
//   [10,10+H) UTF-8 JSON header
//   rest     rows * dim * 4 bytes, row-major f32 little-endian
// ---------------------------------------------------------------------------

inline constexpr std::string_view kCacheMagic = "ACTV1";
inline constexpr std::uint8_t kCacheVersion = 0x01;

std::vector<std::uint8_t> encode_cache(const ActivationSet& set);
ActivationSet decode_cache(std::span<const std::uint8_t> bytes);

void write_cache(const ActivationSet& set, const std::filesystem::path& path);
ActivationSet read_cache(const std::filesystem::path& path);

/// Directory convention shared with the extractor:
///   <root>/<pooling>-<formatting>/layer_<NNN>/<split>.actv
std::filesystem::path cache_path(const std::filesystem::path& root, const ProtocolId& protocol,
                                 std::uint32_t layer, Split split);
/// Layers present under <root>/<protocol>, ascending.
std::vector<std::uint32_t> list_layers(const std::filesystem::path& root,
                                       const ProtocolId& protocol);

// ---------------------------------------------------------------------------
// Split manifests
// ---------------------------------------------------------------------------

struct SplitManifest {
    std::uint64_t seed = 42;
    // Per-source row counts. Sources absent from every split are held out and
    // go to eval in full. A source listed under fit or val but not under eval
    // sends its remainder to eval.
    std::map<std::string, std::size_t> fit;
    std::map<std::string, std::size_t> val;
    std::map<std::string, std::size_t> eval;

    static SplitManifest from_json(const nlohmann::json& doc);
    [[nodiscard]] nlohmann::json to_json() const;
};

SplitManifest read_manifest(const std::filesystem::path& path);

struct Partition {
    ActivationSet fit;
    ActivationSet val;
    ActivationSet eval;
    // Row indices into the partitioned set, ascending.
    std::vector<std::size_t> fit_rows;
    std::vector<std::size_t> val_rows;
    std::vector<std::size_t> eval_rows;
};

Partition partition(const ActivationSet& set, const SplitManifest& manifest);

}  // namespace harmprobe
