#include "urbansense/config.hpp"

#include <set>

#include <toml.hpp>

#include "urbansense/digest.hpp"
#include "urbansense/error.hpp"
#include "urbansense/io.hpp"

namespace urbansense::app {

using nlohmann::json;
namespace fs = std::filesystem;

namespace {

[[noreturn]] void bad(const std::string& key, const std::string& why) {
    throw Error(ErrorKind::Validation, "config: " + key + " " + why);
}

void only_keys(const toml::table& t, const std::string& where, std::set<std::string> allowed) {
    for (const auto& [k, v] : t)
        if (!allowed.count(std::string(k.str())))
            bad(where.empty() ? std::string(k.str()) : where + "." + std::string(k.str()), "is not a known key");
}

template <class T>
std::optional<T> get(const toml::table& t, const std::string& key, const std::string& where) {
    const auto* node = t.get(key);
    if (!node) return std::nullopt;
    const std::string full = where.empty() ? key : where + "." + key;
    if constexpr (std::is_same_v<T, std::string>) {
        if (auto v = node->value<std::string>(); v && node->is_string()) return *v;
        bad(full, "must be a string");
    } else if constexpr (std::is_same_v<T, bool>) {
        if (node->is_boolean()) return node->value<bool>();
        bad(full, "must be a boolean");
    } else if constexpr (std::is_same_v<T, double>) {
        if (node->is_number()) return node->value<double>();
        bad(full, "must be a number");
    } else {
        if (!node->is_integer()) bad(full, "must be an integer");
        const auto v = *node->value<std::int64_t>();
        if (v < 0) bad(full, "must not be negative");
        return static_cast<T>(v);
    }
}

std::vector<std::string> get_strings(const toml::table& t, const std::string& key, const std::string& where) {
    std::vector<std::string> out;
    const auto* node = t.get(key);
    if (!node) return out;
    const std::string full = where.empty() ? key : where + "." + key;
    if (node->is_string()) return {*node->value<std::string>()};
    const auto* arr = node->as_array();
    if (!arr) bad(full, "must be a string or an array of strings");
    for (const auto& x : *arr) {
        if (!x.is_string()) bad(full, "must contain only strings");
        out.push_back(*x.value<std::string>());
    }
    return out;
}

const toml::table* section(const toml::table& root, const std::string& name) {
    const auto* node = root.get(name);
    if (!node) return nullptr;
    if (!node->is_table()) bad(name, "must be a table");
    return node->as_table();
}

fs::path resolve(const fs::path& base, const std::string& p) {
    const fs::path path(p);
    return (path.is_absolute() ? path : base / path).lexically_normal();
}

providers::ProviderConfig provider(const toml::table& t, providers::ProviderKind kind, const std::string& where) {
    only_keys(t, where, {"endpoint", "model", "api_key_env", "timeout_s", "max_parallel", "max_attempts",
                         "backoff_s", "dim", "temperature"});
    providers::ProviderConfig c;
    c.kind = kind;
    c.endpoint = get<std::string>(t, "endpoint", where).value_or("");
    c.model = get<std::string>(t, "model", where).value_or("");
    c.api_key_env = get<std::string>(t, "api_key_env", where).value_or("");
    c.timeout_s = get<double>(t, "timeout_s", where).value_or(c.timeout_s);
    c.max_parallel = static_cast<int>(get<std::size_t>(t, "max_parallel", where).value_or(c.max_parallel));
    c.retry.max_attempts = static_cast<int>(get<std::size_t>(t, "max_attempts", where).value_or(c.retry.max_attempts));
    c.retry.base_backoff_s = get<double>(t, "backoff_s", where).value_or(c.retry.base_backoff_s);
    c.dim = get<std::size_t>(t, "dim", where);
    c.temperature = get<double>(t, "temperature", where).value_or(0.0);
    try {
        c.validate();
    } catch (const Error& e) {
        bad(where, std::string("is invalid: ") + e.what());
    }
    return c;
}

json provider_json(const std::optional<providers::ProviderConfig>& p) {
    if (!p) return nullptr;
    return {{"endpoint", p->endpoint}, {"model", p->model}, {"api_key_env", p->api_key_env},
            {"dim", p->dim ? json(*p->dim) : json(nullptr)}, {"temperature", p->temperature}};
}

}  // namespace

void RunConfig::validate() const {
    if (pairs.empty()) bad("pairs", "must list at least one comparison pair");
    for (const auto& p : pairs) {
        try {
            parse_pair(p);
        } catch (const Error& e) {
            throw Error(ErrorKind::UnknownPair, std::string("config: pairs: ") + e.what());
        }
    }
    if (manifest.empty()) bad("corpus.manifest", "is required");
    if (discover.proposers.empty()) bad("discover.proposer", "must name at least one proposer");
    if (discover.rounds == 0) bad("discover.rounds", "must be >= 1");
    if (discover.subset_size == 0) bad("discover.subset_size", "must be >= 1");
    if (discover.k == 0) bad("discover.k", "must be >= 1");
    if (!(assess.alpha > 0.0 && assess.alpha <= 1.0)) bad("assess.alpha", "must lie in (0, 1]");
    if (analyze.k == 0) bad("analyze.k", "must be >= 1");
    if (analyze.bins == 0) bad("analyze.bins", "must be >= 1");
    if (analyze.kde_points < 2) bad("analyze.kde_points", "must be >= 2");
    if (analyze.contrast_fraction < 0.0 || analyze.contrast_fraction > 1.0)
        bad("analyze.contrast_fraction", "must lie in [0, 1]");
    if (study.build && (study.sets == 0 || study.per_side == 0 || study.category_tasks == 0))
        bad("study", "sets, per_side and category_tasks must be >= 1");
}

RunConfig parse_config(std::string_view text, const fs::path& base_dir) {
    toml::table root;
    try {
        root = toml::parse(text);
    } catch (const toml::parse_error& e) {
        std::ostringstream msg;
        msg << "config: TOML parse error at line " << e.source().begin.line << ": " << e.description();
        throw Error(ErrorKind::Validation, msg.str());
    }
    only_keys(root, "", {"run_id", "seed", "out_dir", "cache_dir", "prompts_dir", "pairs", "corpus", "providers", "mock",
                         "discover", "assess", "analyze", "study"});

    RunConfig c;
    c.run_id = get<std::string>(root, "run_id", "").value_or(c.run_id);
    c.seed = get<std::uint64_t>(root, "seed", "").value_or(0);
    c.out_dir = resolve(base_dir, get<std::string>(root, "out_dir", "").value_or("out"));
    if (auto p = get<std::string>(root, "cache_dir", "")) c.cache_dir = resolve(base_dir, *p);
    if (auto p = get<std::string>(root, "prompts_dir", "")) c.prompts_dir = resolve(base_dir, *p);
    c.pairs = get_strings(root, "pairs", "");

    if (const auto* t = section(root, "corpus")) {
        only_keys(*t, "corpus", {"manifest"});
        if (auto m = get<std::string>(*t, "manifest", "corpus")) c.manifest = resolve(base_dir, *m);
    }
    if (const auto* t = section(root, "providers")) {
        only_keys(*t, "providers", {"captioner", "embedder", "judge"});
        if (const auto* p = section(*t, "captioner"))
            c.captioner = provider(*p, providers::ProviderKind::Captioner, "providers.captioner");
        if (const auto* p = section(*t, "embedder"))
            c.embedder = provider(*p, providers::ProviderKind::Embedder, "providers.embedder");
        if (const auto* p = section(*t, "judge")) c.judge = provider(*p, providers::ProviderKind::Judge, "providers.judge");
    }
    if (const auto* t = section(root, "mock")) {
        only_keys(*t, "mock", {"seed", "dim", "planted", "planted_weight"});
        c.mock.seed = get<std::uint64_t>(*t, "seed", "mock").value_or(0);
        c.mock.dim = get<std::size_t>(*t, "dim", "mock").value_or(c.mock.dim);
        c.mock.planted_weight = get<double>(*t, "planted_weight", "mock").value_or(c.mock.planted_weight);
        const auto planted = get_strings(*t, "planted", "mock");
        for (std::size_t i = 0; i < planted.size(); ++i) c.mock.planted[planted[i]] = i;
        if (planted.size() > c.mock.dim) bad("mock.planted", "has more tokens than mock.dim");
    }
    if (const auto* t = section(root, "discover")) {
        only_keys(*t, "discover", {"proposer", "rounds", "subset_size", "k", "resample", "dedup", "neighbors", "phrase_bank"});
        if (t->get("proposer")) {
            c.discover.proposers.clear();
            for (const auto& p : get_strings(*t, "proposer", "discover")) {
                try {
                    c.discover.proposers.push_back(discover::proposer_from_string(p));
                } catch (const Error& e) {
                    bad("discover.proposer", e.what());
                }
            }
        }
        c.discover.rounds = get<std::uint32_t>(*t, "rounds", "discover").value_or(c.discover.rounds);
        c.discover.subset_size = get<std::size_t>(*t, "subset_size", "discover").value_or(c.discover.subset_size);
        c.discover.k = get<std::size_t>(*t, "k", "discover").value_or(c.discover.k);
        c.discover.resample = get<bool>(*t, "resample", "discover").value_or(true);
        c.discover.dedup = get<bool>(*t, "dedup", "discover").value_or(true);
        c.discover.neighbors = get<std::size_t>(*t, "neighbors", "discover").value_or(c.discover.neighbors);
        if (auto p = get<std::string>(*t, "phrase_bank", "discover")) c.discover.phrase_bank = resolve(base_dir, *p);
    }
    if (const auto* t = section(root, "assess")) {
        only_keys(*t, "assess", {"scorer", "alpha", "top_k"});
        if (auto s = get<std::string>(*t, "scorer", "assess")) {
            try {
                c.assess.scorer = assess::scorer_from_string(*s);
            } catch (const Error& e) {
                bad("assess.scorer", e.what());
            }
        }
        c.assess.alpha = get<double>(*t, "alpha", "assess").value_or(c.assess.alpha);
        c.assess.top_k = get<std::size_t>(*t, "top_k", "assess");
    }
    if (const auto* t = section(root, "analyze")) {
        only_keys(*t, "analyze", {"k", "kmeans_restarts", "bins", "kde_points", "top_terms", "contrast_fraction"});
        auto& a = c.analyze;
        a.k = get<std::size_t>(*t, "k", "analyze").value_or(a.k);
        a.kmeans_restarts = get<std::size_t>(*t, "kmeans_restarts", "analyze").value_or(a.kmeans_restarts);
        a.bins = get<std::size_t>(*t, "bins", "analyze").value_or(a.bins);
        a.kde_points = get<std::size_t>(*t, "kde_points", "analyze").value_or(a.kde_points);
        a.top_terms = get<std::size_t>(*t, "top_terms", "analyze").value_or(a.top_terms);
        a.contrast_fraction = get<double>(*t, "contrast_fraction", "analyze").value_or(a.contrast_fraction);
    }
    if (const auto* t = section(root, "study")) {
        only_keys(*t, "study", {"build", "study_id", "category_tasks", "sets", "per_side"});
        auto& s = c.study;
        s.build = get<bool>(*t, "build", "study").value_or(true);
        s.study_id = get<std::string>(*t, "study_id", "study").value_or(s.study_id);
        s.category_tasks = get<std::size_t>(*t, "category_tasks", "study").value_or(s.category_tasks);
        s.sets = get<std::size_t>(*t, "sets", "study").value_or(s.sets);
        s.per_side = get<std::size_t>(*t, "per_side", "study").value_or(s.per_side);
    }
    c.analyze.alpha = c.assess.alpha;
    c.analyze.seed = c.seed;
    return c;
}

RunConfig load_config(const fs::path& path) {
    const auto text = io::read_file(path);
    auto base = path.parent_path();
    if (base.empty()) base = ".";
    return parse_config(text, fs::absolute(base));
}

json to_json(const RunConfig& c) {
    json proposers = json::array();
    for (auto p : c.discover.proposers) proposers.push_back(discover::to_string(p));
    json planted = json::object();
    for (const auto& [tok, idx] : c.mock.planted) planted[tok] = idx;
    return {
        {"run_id", c.run_id},
        {"seed", c.seed},
        {"pairs", c.pairs},
        {"prompts_dir", c.prompts_dir ? json(c.prompts_dir->string()) : json(nullptr)},
        {"corpus", {{"manifest", c.manifest.string()}}},
        {"providers",
         {{"captioner", provider_json(c.captioner)}, {"embedder", provider_json(c.embedder)}, {"judge", provider_json(c.judge)}}},
        {"mock", {{"seed", c.mock.seed}, {"dim", c.mock.dim}, {"planted", planted}, {"planted_weight", c.mock.planted_weight}}},
        {"discover",
         {{"proposers", proposers},
          {"rounds", c.discover.rounds},
          {"subset_size", c.discover.subset_size},
          {"k", c.discover.k},
          {"resample", c.discover.resample},
          {"dedup", c.discover.dedup},
          {"neighbors", c.discover.neighbors},
          {"phrase_bank", c.discover.phrase_bank ? json(c.discover.phrase_bank->string()) : json(nullptr)}}},
        {"assess",
         {{"scorer", assess::to_string(c.assess.scorer)},
          {"alpha", c.assess.alpha},
          {"top_k", c.assess.top_k ? json(*c.assess.top_k) : json(nullptr)}}},
        {"analyze",
         {{"k", c.analyze.k},
          {"kmeans_restarts", c.analyze.kmeans_restarts},
          {"bins", c.analyze.bins},
          {"kde_points", c.analyze.kde_points},
          {"top_terms", c.analyze.top_terms},
          {"contrast_fraction", c.analyze.contrast_fraction}}},
        {"study",
         {{"build", c.study.build},
          {"study_id", c.study.study_id},
          {"category_tasks", c.study.category_tasks},
          {"sets", c.study.sets},
          {"per_side", c.study.per_side}}},
    };
}

std::string config_digest(const RunConfig& c) { return sha256_hex(to_json(c).dump()); }

}  // namespace urbansense::app
