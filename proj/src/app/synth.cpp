#include "urbansense/synth.hpp"

#include <map>

#include "urbansense/corpus.hpp"
#include "urbansense/io.hpp"
#include "urbansense/rng.hpp"

namespace urbansense::app {

namespace fs = std::filesystem;

namespace {

struct Category {
    std::string city, period;
    std::vector<std::string> tokens;
};

const std::map<std::string, std::vector<std::string>> kCityTokens = {{"Beijing", {"hutong", "siheyuan"}},
                                                                    {"Shenzhen", {"banyan", "arcade"}}};
const std::map<std::string, std::vector<std::string>> kPeriodTokens = {{"old", {"weathered", "tiled"}},
                                                                      {"new", {"glass", "tower"}}};
const std::vector<Category> kCategories = {{"Beijing", "old", {"courtyard", "lantern", "gateway"}},
                                           {"Beijing", "new", {"ringroad", "overpass", "olympic"}},
                                           {"Shenzhen", "old", {"village", "handshake", "clan"}},
                                           {"Shenzhen", "new", {"skyline", "bayfront", "startup"}}};

std::string ppm(int size, Pcg32& rng) {
    std::string out = "P6\n" + std::to_string(size) + " " + std::to_string(size) + "\n255\n";
    for (int i = 0; i < size * size * 3; ++i) out += static_cast<char>(rng.bounded(256));
    return out;
}

}  // namespace

SynthFixture write_synthetic_fixture(const fs::path& dir, const SynthOptions& o) {
    SynthFixture f;
    f.dir = dir;
    f.manifest = dir / "manifest.csv";
    f.config = dir / "config.toml";
    f.phrase_bank = dir / "phrases.txt";
    f.pairs = {"Beijing:old vs Beijing:new", "Shenzhen:old vs Shenzhen:new", "Beijing:old vs Shenzhen:old",
               "Beijing:new vs Shenzhen:new"};

    Pcg32 rng(o.seed, 0x73796e7468ULL);
    std::vector<ImageRecord> records;
    for (const auto& c : kCategories) {
        for (std::size_t i = 0; i < o.per_category; ++i) {
            const auto id = c.city + "_" + c.period + "_" + std::to_string(i);
            const auto rel = "images/" + id + ".ppm";
            io::write_file_atomic(dir / rel, ppm(o.image_size, rng));
            // City and period tokens are always all present, so a pair sharing a city or a
            // period sees them at exactly equal rates; category tokens carry the variation.
            std::string caption = "street view photo showing";
            for (const auto& t : kCityTokens.at(c.city)) caption += " " + t;
            for (const auto& t : kPeriodTokens.at(c.period)) caption += " " + t;
            bool any = false;
            for (const auto& t : c.tokens)
                if (rng.uniform() < 0.7) {
                    caption += " " + t;
                    any = true;
                }
            if (!any) caption += " " + c.tokens[rng.bounded(3)];
            records.push_back({id, rel, c.city, c.period, caption, o.image_size, o.image_size});
        }
    }
    save_manifest(Corpus(records), f.manifest, ManifestFormat::Csv);

    for (const auto& [_, toks] : kCityTokens) f.planted.insert(f.planted.end(), toks.begin(), toks.end());
    for (const auto& [_, toks] : kPeriodTokens) f.planted.insert(f.planted.end(), toks.begin(), toks.end());
    for (const auto& c : kCategories) f.planted.insert(f.planted.end(), c.tokens.begin(), c.tokens.end());

    std::string phrases;
    for (const auto& t : f.planted) phrases += "streets lined with " + t + "\n";
    phrases += "people walking\ncars parked along the road\nclear sky\n";
    io::write_file_atomic(f.phrase_bank, phrases);

    std::string toml = "run_id = \"synthetic\"\nseed = " + std::to_string(o.seed) +
                       "\nout_dir = \"out\"\npairs = [\n";
    for (const auto& p : f.pairs) toml += "  \"" + p + "\",\n";
    toml += "]\n\n[corpus]\nmanifest = \"manifest.csv\"\n";
    for (const char* role : {"captioner", "embedder", "judge"})
        toml += std::string("\n[providers.") + role + "]\nendpoint = \"mock://\"\nmodel = \"mock-" + role + "\"\n";
    toml += "\n[mock]\ndim = 64\nplanted_weight = 0.8\nplanted = [";
    for (std::size_t i = 0; i < f.planted.size(); ++i) toml += (i ? ", \"" : "\"") + f.planted[i] + "\"";
    toml +=
        "]\n\n[discover]\nproposer = \"caption\"\nrounds = 3\nsubset_size = 20\nk = 5\nphrase_bank = \"phrases.txt\"\n"
        "\n[assess]\nscorer = \"feature\"\nalpha = 0.05\n"
        "\n[analyze]\nk = 4\n";
    if (o.per_category >= 25) toml += "\n[study]\nbuild = true\nsets = 8\nper_side = 25\ncategory_tasks = 8\n";
    io::write_file_atomic(f.config, toml);
    return f;
}

}  // namespace urbansense::app
