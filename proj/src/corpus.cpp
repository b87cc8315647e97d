#include "urbansense/corpus.hpp"

#include <algorithm>
#include <map>
#include <numeric>
#include <unordered_map>
#include <unordered_set>

#include "urbansense/error.hpp"
#include "urbansense/io.hpp"
#include "urbansense/rng.hpp"

namespace urbansense {

using nlohmann::json;

namespace {

std::string trim(std::string_view s) {
    const auto b = s.find_first_not_of(" \t\r\n");
    if (b == std::string_view::npos) return {};
    const auto e = s.find_last_not_of(" \t\r\n");
    return std::string(s.substr(b, e - b + 1));
}

std::optional<int> parse_dimension(const std::string& text, const std::string& column, std::size_t row) {
    if (text.empty()) return std::nullopt;
    std::size_t used = 0;
    int v = 0;
    try {
        v = std::stoi(text, &used);
    } catch (const std::exception&) {
        used = 0;
    }
    if (used != text.size() || v <= 0)
        throw Error(ErrorKind::Validation, "manifest row " + std::to_string(row) + ": " + column +
                                               " must be a positive integer, got '" + text + "'");
    return v;
}

constexpr const char* kRequired[] = {"id", "path", "city", "period"};

Corpus parse_csv_manifest(std::string_view text) {
    const auto rows = io::parse_csv(text);
    if (rows.empty()) throw Error(ErrorKind::EmptyInput, "manifest is empty");
    std::map<std::string, std::size_t> col;
    for (std::size_t i = 0; i < rows[0].size(); ++i) col[trim(rows[0][i])] = i;
    for (const char* name : kRequired)
        if (!col.contains(name)) throw Error(ErrorKind::Schema, std::string("manifest is missing required column '") + name + "'");
    if (rows.size() == 1) throw Error(ErrorKind::EmptyInput, "manifest has a header but no rows");

    auto cell = [&](const std::vector<std::string>& row, const char* name) -> std::optional<std::string> {
        auto it = col.find(name);
        if (it == col.end() || it->second >= row.size()) return std::nullopt;
        return row[it->second];
    };
    std::vector<ImageRecord> records;
    for (std::size_t r = 1; r < rows.size(); ++r) {
        const auto& row = rows[r];
        ImageRecord rec;
        rec.id = trim(cell(row, "id").value_or(""));
        rec.path = trim(cell(row, "path").value_or(""));
        rec.city = trim(cell(row, "city").value_or(""));
        rec.period = trim(cell(row, "period").value_or(""));
        if (auto c = cell(row, "caption"); c && !c->empty()) rec.caption = *c;
        rec.width = parse_dimension(trim(cell(row, "width").value_or("")), "width", r);
        rec.height = parse_dimension(trim(cell(row, "height").value_or("")), "height", r);
        records.push_back(std::move(rec));
    }
    return Corpus(std::move(records));
}

Corpus parse_jsonl_manifest(std::string_view text) {
    std::vector<ImageRecord> records;
    std::size_t line_no = 0;
    std::size_t start = 0;
    while (start <= text.size()) {
        auto end = text.find('\n', start);
        if (end == std::string_view::npos) end = text.size();
        const std::string line = trim(text.substr(start, end - start));
        ++line_no;
        start = end + 1;
        if (line.empty()) continue;
        json j;
        try {
            j = json::parse(line);
        } catch (const json::exception& e) {
            throw Error(ErrorKind::Validation, "manifest line " + std::to_string(line_no) + ": " + e.what());
        }
        if (!j.is_object()) throw Error(ErrorKind::Validation, "manifest line " + std::to_string(line_no) + " is not an object");
        for (const char* name : kRequired)
            if (!j.contains(name)) throw Error(ErrorKind::Schema, std::string("manifest is missing required column '") + name + "'");
        records.push_back(image_record_from_json(j));
    }
    if (records.empty()) throw Error(ErrorKind::EmptyInput, "manifest is empty");
    return Corpus(std::move(records));
}

}  // namespace

Corpus::Corpus(std::vector<ImageRecord> records) : records_(std::move(records)) {
    std::unordered_set<std::string> seen;
    std::vector<std::string> duplicates;
    for (std::size_t i = 0; i < records_.size(); ++i) {
        const auto& r = records_[i];
        if (r.id.empty()) throw Error(ErrorKind::Validation, "record " + std::to_string(i) + " has an empty id");
        if (r.city.empty() || r.period.empty())
            throw Error(ErrorKind::Validation, "record '" + r.id + "' has an empty city or period");
        if (!seen.insert(r.id).second && std::find(duplicates.begin(), duplicates.end(), r.id) == duplicates.end())
            duplicates.push_back(r.id);
    }
    if (!duplicates.empty()) {
        std::string msg = "duplicate image ids:";
        for (const auto& d : duplicates) msg += " " + d;
        throw Error(ErrorKind::Validation, msg);
    }
}

std::set<Label> Corpus::label_space() const {
    std::set<Label> out;
    for (const auto& r : records_) out.emplace(r.city, r.period);
    return out;
}

const ImageRecord* Corpus::find(std::string_view id) const {
    for (const auto& r : records_)
        if (r.id == id) return &r;
    return nullptr;
}

ManifestFormat manifest_format_for(const std::filesystem::path& path) {
    const auto ext = path.extension().string();
    return (ext == ".jsonl" || ext == ".ndjson") ? ManifestFormat::Jsonl : ManifestFormat::Csv;
}

Corpus parse_manifest(std::string_view text, ManifestFormat format) {
    return format == ManifestFormat::Csv ? parse_csv_manifest(text) : parse_jsonl_manifest(text);
}

Corpus load_manifest(const std::filesystem::path& path, ManifestFormat format) {
    if (!std::filesystem::exists(path)) throw Error(ErrorKind::Io, "manifest not found: " + path.string());
    return parse_manifest(io::read_file(path), format);
}

Corpus load_manifest(const std::filesystem::path& path) { return load_manifest(path, manifest_format_for(path)); }

Corpus resolve_paths(const Corpus& corpus, const std::filesystem::path& base) {
    std::vector<ImageRecord> out = corpus.records();
    for (auto& r : out) {
        if (r.path.find("://") != std::string::npos) continue;
        const std::filesystem::path p(r.path);
        if (p.is_relative()) r.path = (base / p).lexically_normal().string();
    }
    return Corpus(std::move(out));
}

std::string format_manifest(const Corpus& corpus, ManifestFormat format) {
    std::string out;
    if (format == ManifestFormat::Jsonl) {
        for (const auto& r : corpus.records()) out += to_json(r).dump() + "\n";
        return out;
    }
    const bool dims = std::any_of(corpus.records().begin(), corpus.records().end(),
                                  [](const ImageRecord& r) { return r.width || r.height; });
    std::vector<std::string> header{"id", "path", "city", "period", "caption"};
    if (dims) {
        header.emplace_back("width");
        header.emplace_back("height");
    }
    out += io::csv_row(header);
    for (const auto& r : corpus.records()) {
        std::vector<std::string> row{r.id, r.path, r.city, r.period, r.caption.value_or("")};
        if (dims) {
            row.push_back(r.width ? std::to_string(*r.width) : "");
            row.push_back(r.height ? std::to_string(*r.height) : "");
        }
        out += io::csv_row(row);
    }
    return out;
}

void save_manifest(const Corpus& corpus, const std::filesystem::path& path, ManifestFormat format) {
    io::write_file_atomic(path, format_manifest(corpus, format));
}

json to_json(const ImageRecord& r) {
    json j = {{"id", r.id}, {"path", r.path}, {"city", r.city}, {"period", r.period}};
    if (r.caption) j["caption"] = *r.caption;
    if (r.width) j["width"] = *r.width;
    if (r.height) j["height"] = *r.height;
    return j;
}

ImageRecord image_record_from_json(const json& j) {
    auto str = [&](const char* key) -> std::string {
        if (!j.contains(key) || j[key].is_null()) return {};
        if (!j[key].is_string()) throw Error(ErrorKind::Validation, std::string("field '") + key + "' must be a string");
        return j[key].get<std::string>();
    };
    auto dim = [&](const char* key) -> std::optional<int> {
        if (!j.contains(key) || j[key].is_null()) return std::nullopt;
        if (!j[key].is_number_integer() || j[key].get<long long>() <= 0)
            throw Error(ErrorKind::Validation, std::string("field '") + key + "' must be a positive integer");
        return j[key].get<int>();
    };
    ImageRecord r{str("id"), str("path"), str("city"), str("period"), std::nullopt, dim("width"), dim("height")};
    if (auto c = str("caption"); !c.empty()) r.caption = c;
    return r;
}

json to_json(const Corpus& c) {
    json records = json::array();
    for (const auto& r : c.records()) records.push_back(to_json(r));
    return {{"records", records}};
}

Corpus corpus_from_json(const json& j) {
    if (!j.contains("records") || !j["records"].is_array())
        throw Error(ErrorKind::Schema, "corpus file is missing the 'records' array");
    std::vector<ImageRecord> records;
    for (const auto& r : j["records"]) records.push_back(image_record_from_json(r));
    return Corpus(std::move(records));
}

bool Selector::matches(const ImageRecord& r) const {
    const bool city_ok = city.empty() || city == "*" || city == r.city;
    const bool period_ok = period.empty() || period == "*" || period == r.period;
    return city_ok && period_ok;
}

std::string Selector::label() const {
    return (city.empty() ? "*" : city) + ":" + (period.empty() ? "*" : period);
}

Selector parse_selector(std::string_view text) {
    const std::string t = trim(text);
    const auto colon = t.find(':');
    if (colon == std::string::npos || t.find(':', colon + 1) != std::string::npos)
        throw Error(ErrorKind::UnknownPair, "selector '" + t + "' must look like city:period");
    Selector s{trim(t.substr(0, colon)), trim(t.substr(colon + 1))};
    if (s.city.empty() || s.period.empty())
        throw Error(ErrorKind::UnknownPair, "selector '" + t + "' has an empty city or period (use *)");
    return s;
}

std::string ComparisonPair::label() const { return a.label() + " vs " + b.label(); }

ComparisonPair parse_pair(std::string_view text) {
    const std::string t(text);
    const auto pos = t.find(" vs ");
    if (pos == std::string::npos) throw Error(ErrorKind::UnknownPair, "pair '" + t + "' must look like 'cityA:periodA vs cityB:periodB'");
    return {parse_selector(t.substr(0, pos)), parse_selector(t.substr(pos + 4))};
}

const char* to_string(GroupTag tag) noexcept { return tag == GroupTag::A ? "A" : "B"; }

GroupPartition partition(const Corpus& corpus, const Selector& a, const Selector& b) {
    GroupPartition p{{}, {}, a, b};
    std::vector<std::string> overlap;
    for (const auto& r : corpus.records()) {
        const bool in_a = a.matches(r);
        const bool in_b = b.matches(r);
        if (in_a && in_b) overlap.push_back(r.id);
        else if (in_a) p.group_a.push_back(r);
        else if (in_b) p.group_b.push_back(r);
    }
    if (!overlap.empty())
        throw Error(ErrorKind::UnknownPair, "selectors " + a.label() + " and " + b.label() + " overlap on " +
                                                std::to_string(overlap.size()) + " record(s), first '" + overlap.front() + "'");
    if (p.group_a.empty()) throw Error(ErrorKind::UnknownPair, "selector " + a.label() + " matches no records");
    if (p.group_b.empty()) throw Error(ErrorKind::UnknownPair, "selector " + b.label() + " matches no records");
    return p;
}

std::string SampledSubset::id() const {
    return std::string(to_string(parent_group)) + ":s" + std::to_string(seed) + ":r" + std::to_string(round_index) +
           ":n" + std::to_string(size);
}

SampledSubset sample_subset(const std::vector<ImageRecord>& group, GroupTag tag, std::size_t size, std::uint64_t seed,
                            std::uint32_t round) {
    if (group.empty()) throw Error(ErrorKind::EmptyInput, "sample_subset: group is empty");
    if (size == 0) throw Error(ErrorKind::Validation, "sample_subset: size must be positive");
    SampledSubset s{tag, {}, seed, round, size};
    if (size >= group.size()) {
        for (const auto& r : group) s.member_ids.push_back(r.id);
        return s;
    }
    std::vector<std::size_t> idx(group.size());
    std::iota(idx.begin(), idx.end(), 0);
    Pcg32 rng(seed, round);
    for (std::size_t i = 0; i < size; ++i) {
        const auto j = i + rng.bounded(static_cast<std::uint32_t>(idx.size() - i));
        std::swap(idx[i], idx[j]);
        s.member_ids.push_back(group[idx[i]].id);
    }
    return s;
}

std::vector<ImageRecord> subset_records(const std::vector<ImageRecord>& group, const SampledSubset& subset) {
    std::unordered_map<std::string, const ImageRecord*> by_id;
    for (const auto& r : group) by_id.emplace(r.id, &r);
    std::vector<ImageRecord> out;
    out.reserve(subset.member_ids.size());
    for (const auto& id : subset.member_ids) {
        auto it = by_id.find(id);
        if (it == by_id.end()) throw Error(ErrorKind::Validation, "subset member '" + id + "' is not in the group");
        out.push_back(*it->second);
    }
    return out;
}

}  // namespace urbansense
