#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <set>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

namespace urbansense {

struct ImageRecord {
    std::string id;
    std::string path;  // filesystem path or URL
    std::string city;
    std::string period;
    std::optional<std::string> caption;
    std::optional<int> width;
    std::optional<int> height;

    friend bool operator==(const ImageRecord&, const ImageRecord&) = default;
};

using Label = std::pair<std::string, std::string>;  // (city, period)

/// Ordered, validated list of image records. Ids are unique; city and period non-empty.
class Corpus {
public:
    Corpus() = default;
    explicit Corpus(std::vector<ImageRecord> records);

    const std::vector<ImageRecord>& records() const noexcept { return records_; }
    std::size_t size() const noexcept { return records_.size(); }
    bool empty() const noexcept { return records_.empty(); }

    /// (city, period) pairs present, recomputed on each call.
    std::set<Label> label_space() const;

    const ImageRecord* find(std::string_view id) const;

private:
    std::vector<ImageRecord> records_;
};

enum class ManifestFormat { Csv, Jsonl };

/// Picks the format from the extension: .jsonl/.ndjson -> Jsonl, anything else -> Csv.
ManifestFormat manifest_format_for(const std::filesystem::path& path);

Corpus load_manifest(const std::filesystem::path& path, ManifestFormat format);
Corpus load_manifest(const std::filesystem::path& path);

/// Rewrites relative local paths as base / path. URLs and absolute paths are kept.
Corpus resolve_paths(const Corpus& corpus, const std::filesystem::path& base);
Corpus parse_manifest(std::string_view text, ManifestFormat format);

/// CSV columns are always id,path,city,period,caption[,width,height].
std::string format_manifest(const Corpus& corpus, ManifestFormat format);
void save_manifest(const Corpus& corpus, const std::filesystem::path& path, ManifestFormat format);

nlohmann::json to_json(const ImageRecord& r);
ImageRecord image_record_from_json(const nlohmann::json& j);
nlohmann::json to_json(const Corpus& c);
Corpus corpus_from_json(const nlohmann::json& j);

/// (city, period) predicate. An empty field or "*" matches anything.
struct Selector {
    std::string city;
    std::string period;

    bool matches(const ImageRecord& r) const;
    std::string label() const;  // "city:period"
    friend bool operator==(const Selector&, const Selector&) = default;
};

/// Parses "city:period"; either side may be "*".
Selector parse_selector(std::string_view text);

struct ComparisonPair {
    Selector a;
    Selector b;
    std::string label() const;  // "cityA:periodA vs cityB:periodB"
};

/// Parses "Beijing:old vs Beijing:new".
ComparisonPair parse_pair(std::string_view text);

enum class GroupTag { A, B };
const char* to_string(GroupTag tag) noexcept;

struct GroupPartition {
    std::vector<ImageRecord> group_a;
    std::vector<ImageRecord> group_b;
    Selector selector_a;
    Selector selector_b;
};

/// Disjoint groups for the two selectors. Throws UnknownPair when a selector matches
/// nothing or a record matches both.
GroupPartition partition(const Corpus& corpus, const Selector& a, const Selector& b);

struct SampledSubset {
    GroupTag parent_group = GroupTag::A;
    std::vector<std::string> member_ids;
    std::uint64_t seed = 0;
    std::uint32_t round_index = 0;
    std::size_t size = 0;

    /// Stable identifier: "A:s<seed>:r<round>:n<size>".
    std::string id() const;
};

/// Uniform sample without replacement (partial Fisher-Yates over PCG32 seeded with
/// (seed, round)). Returns the whole group, in order, when size >= |group|.
SampledSubset sample_subset(const std::vector<ImageRecord>& group, GroupTag tag, std::size_t size,
                            std::uint64_t seed, std::uint32_t round);

/// Records of `group` named by the subset, in subset order.
std::vector<ImageRecord> subset_records(const std::vector<ImageRecord>& group, const SampledSubset& subset);

}  // namespace urbansense
