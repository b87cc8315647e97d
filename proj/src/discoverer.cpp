#include "urbansense/discoverer.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <map>
#include <set>

#include <opencv2/imgcodecs.hpp>
#include <opencv2/imgproc.hpp>

#include "urbansense/digest.hpp"
#include "urbansense/io.hpp"
#include "urbansense/log.hpp"
#include "urbansense/numstat.hpp"
#include "urbansense/parallel.hpp"
#include "urbansense/rng.hpp"

namespace urbansense::discover {

using nlohmann::json;
using providers::ChatRequest;
using providers::ImageRef;
using providers::ProviderClient;

const char* to_string(Proposer p) noexcept {
    switch (p) {
        case Proposer::Caption: return "caption";
        case Proposer::Grid: return "grid";
        case Proposer::Embedding: return "embedding";
    }
    return "?";
}

const char* to_string(Direction d) noexcept { return d == Direction::DescribesA ? "describes-A" : "describes-B"; }

Proposer proposer_from_string(std::string_view s) {
    if (s == "caption") return Proposer::Caption;
    if (s == "grid") return Proposer::Grid;
    if (s == "embedding") return Proposer::Embedding;
    throw Error(ErrorKind::Validation, "unknown proposer '" + std::string(s) + "' (expected caption, grid or embedding)");
}

Direction direction_from_string(std::string_view s) {
    if (s == "describes-A") return Direction::DescribesA;
    if (s == "describes-B") return Direction::DescribesB;
    throw Error(ErrorKind::Validation, "unknown direction '" + std::string(s) + "'");
}

json to_json(const CandidateDescription& c) {
    return {{"text", c.text},
            {"proposer", to_string(c.proposer)},
            {"round_index", c.round_index},
            {"source_subsets", {c.subset_a, c.subset_b}},
            {"direction", to_string(c.direction)},
            {"pair", c.pair},
            {"template_digest", c.template_digest}};
}

CandidateDescription candidate_from_json(const json& j) {
    try {
        CandidateDescription c;
        c.text = normalize_whitespace(j.at("text").get<std::string>());
        if (c.text.empty()) throw Error(ErrorKind::Validation, "candidate text is empty");
        c.proposer = proposer_from_string(j.at("proposer").get<std::string>());
        c.round_index = j.at("round_index").get<std::uint32_t>();
        const auto& subsets = j.at("source_subsets");
        c.subset_a = subsets.at(0).get<std::string>();
        c.subset_b = subsets.at(1).get<std::string>();
        c.direction = direction_from_string(j.at("direction").get<std::string>());
        c.pair = j.value("pair", std::string());
        c.template_digest = j.value("template_digest", std::string());
        return c;
    } catch (const json::exception& e) {
        throw Error(ErrorKind::Schema, std::string("candidate record: ") + e.what());
    }
}

std::string format_candidates_jsonl(const std::vector<CandidateDescription>& cs) {
    std::string out;
    for (const auto& c : cs) out += to_json(c).dump() + "\n";
    return out;
}

std::vector<CandidateDescription> parse_candidates_jsonl(std::string_view text) {
    std::vector<CandidateDescription> out;
    std::size_t line_no = 0;
    for (const auto& line : io::split_lines(text)) {
        ++line_no;
        json j;
        try {
            j = json::parse(line);
        } catch (const json::exception&) {
            throw Error(ErrorKind::Validation, "candidates line " + std::to_string(line_no) + " is not JSON");
        }
        out.push_back(candidate_from_json(j));
    }
    return out;
}

std::string normalize_whitespace(std::string_view text) {
    std::string out;
    bool space = false;
    for (unsigned char c : text) {
        if (std::isspace(c)) {
            space = !out.empty();
            continue;
        }
        if (space) out += ' ';
        space = false;
        out += static_cast<char>(c);
    }
    return out;
}

std::vector<SubsetPair> make_rounds(const GroupPartition& groups, std::size_t subset_size, std::uint32_t rounds,
                                    std::uint64_t seed, bool resample) {
    if (rounds < 1) throw Error(ErrorKind::Validation, "rounds must be >= 1");
    if (subset_size < 1) throw Error(ErrorKind::Validation, "subset size must be >= 1");
    if (groups.group_a.empty() || groups.group_b.empty()) throw Error(ErrorKind::EmptyInput, "empty comparison group");
    std::vector<SubsetPair> out;
    for (std::uint32_t r = 0; r < rounds; ++r) {
        const std::uint32_t draw = resample ? r : 0;
        SubsetPair p;
        p.round_index = r;
        p.subset_a = sample_subset(groups.group_a, GroupTag::A, subset_size, derive_seed(seed, "subset-A"), draw);
        p.subset_b = sample_subset(groups.group_b, GroupTag::B, subset_size, derive_seed(seed, "subset-B"), draw);
        p.images_a = subset_records(groups.group_a, p.subset_a);
        p.images_b = subset_records(groups.group_b, p.subset_b);
        out.push_back(std::move(p));
    }
    return out;
}

namespace {

std::vector<std::string> string_array(const json& j, const char* key, std::size_t k) {
    std::vector<std::string> out;
    if (!j.contains(key)) return out;
    if (!j[key].is_array()) throw Error(ErrorKind::ProviderProtocol, std::string("proposal field ") + key + " is not a list");
    for (const auto& x : j[key]) {
        if (!x.is_string()) continue;
        auto t = normalize_whitespace(x.get<std::string>());
        if (!t.empty() && out.size() < k) out.push_back(std::move(t));
    }
    return out;
}

void append(Proposals& out, const std::vector<std::string>& texts, Direction d, Proposer p, const SubsetPair& round,
            const ProposeOptions& opt, const std::string& digest) {
    for (const auto& t : texts)
        out.candidates.push_back({t, p, round.round_index, round.subset_a.id(), round.subset_b.id(), d, opt.pair_label, digest});
}

void require_nonempty(const SubsetPair& r) {
    if (r.images_a.empty() || r.images_b.empty())
        throw Error(ErrorKind::EmptyInput, "round " + std::to_string(r.round_index) + ": empty subset");
}

std::string bullet_list(const std::vector<std::string>& items) {
    std::string out;
    for (const auto& s : items) out += "- " + s + "\n";
    return out;
}

std::vector<std::string> caption_all(const std::vector<ImageRecord>& images, ProviderClient& captioner,
                                     const std::string& prompt) {
    std::vector<std::string> out(images.size());
    parallel_for(images.size(), static_cast<std::size_t>(captioner.config().max_parallel), [&](std::size_t i) {
        out[i] = providers::caption(captioner, ImageRef{images[i].id, images[i].path}, prompt);
    });
    return out;
}

template <class Fn>
auto with_context(const std::string& what, Fn&& fn) -> decltype(fn()) {
    try {
        return fn();
    } catch (const JudgeParseError&) {
        throw;
    } catch (const Error& e) {
        throw Error(e.kind(), what + ": " + e.what());
    }
}

std::pair<std::vector<std::string>, std::vector<std::string>> ask(ProviderClient& model, ChatRequest req,
                                                                  std::size_t k) {
    return parse_proposal_reply(model.chat(req), k);
}

}  // namespace

std::pair<std::vector<std::string>, std::vector<std::string>> parse_proposal_reply(std::string_view reply,
                                                                                   std::size_t k) {
    const auto open = reply.find('{');
    const auto close = reply.rfind('}');
    if (open == std::string_view::npos || close == std::string_view::npos || close < open)
        throw Error(ErrorKind::ProviderProtocol, "proposal reply contains no JSON object");
    json j;
    try {
        j = json::parse(reply.substr(open, close - open + 1));
    } catch (const json::exception&) {
        throw Error(ErrorKind::ProviderProtocol, "proposal reply is not valid JSON");
    }
    if (!j.is_object()) throw Error(ErrorKind::ProviderProtocol, "proposal reply is not a JSON object");
    return {string_array(j, "A", k), string_array(j, "B", k)};
}

Proposals propose_via_captions(const std::vector<SubsetPair>& rounds, ProviderClient& captioner,
                               ProviderClient& text_model, const ProposeOptions& opt) {
    if (rounds.empty()) throw Error(ErrorKind::Validation, "rounds must be >= 1");
    const auto digest = template_digest(opt.prompts.propose_captions);
    Proposals out;
    for (const auto& round : rounds) {
        require_nonempty(round);
        const std::string ctx = "caption proposer, round " + std::to_string(round.round_index) + " (" +
                                round.subset_a.id() + " / " + round.subset_b.id() + ")";
        const auto [ca, cb] = with_context(ctx, [&] {
            return std::pair{caption_all(round.images_a, captioner, opt.prompts.caption),
                             caption_all(round.images_b, captioner, opt.prompts.caption)};
        });
        ChatRequest req;
        req.task = "propose-captions";
        req.seed = round.round_index;
        req.args = {{"captions_a", ca}, {"captions_b", cb}, {"k", opt.k}};
        const auto text = render_template(opt.prompts.propose_captions, {{"captions_a", bullet_list(ca)},
                                                                         {"captions_b", bullet_list(cb)},
                                                                         {"k", std::to_string(opt.k)}});
        req.messages.push_back({"user", {{text, std::nullopt}}});
        const auto [a, b] = with_context(ctx, [&] { return ask(text_model, req, opt.k); });
        if (a.size() < opt.k || b.size() < opt.k) out.notes.push_back(ctx + ": model returned fewer than k candidates");
        append(out, a, Direction::DescribesA, Proposer::Caption, round, opt, digest);
        append(out, b, Direction::DescribesB, Proposer::Caption, round, opt, digest);
    }
    return out;
}

GridLayout grid_layout(std::size_t tiles) {
    if (tiles == 0) throw Error(ErrorKind::EmptyInput, "grid needs at least one tile");
    GridLayout g;
    g.columns = static_cast<int>(std::min<std::size_t>(kGridColumns, tiles));
    g.rows = static_cast<int>((tiles + kGridColumns - 1) / kGridColumns);
    g.width = g.columns * kTileSize;
    g.height = g.rows * kTileSize;
    return g;
}

GridImage compose_grid(const std::vector<ImageRecord>& images) {
    std::vector<cv::Mat> tiles;
    GridImage out;
    for (const auto& r : images) {
        cv::Mat img = cv::imread(r.path, cv::IMREAD_COLOR);
        if (img.empty()) {
            log::warn("grid: cannot decode image '" + r.id + "' (" + r.path + "), skipping");
            out.skipped.push_back(r.id);
            continue;
        }
        const double scale = std::min(static_cast<double>(kTileSize) / img.cols, static_cast<double>(kTileSize) / img.rows);
        const int w = std::max(1, static_cast<int>(std::lround(img.cols * scale)));
        const int h = std::max(1, static_cast<int>(std::lround(img.rows * scale)));
        cv::Mat resized;
        cv::resize(img, resized, cv::Size(w, h), 0, 0, scale < 1.0 ? cv::INTER_AREA : cv::INTER_LINEAR);
        cv::Mat tile(kTileSize, kTileSize, CV_8UC3, cv::Scalar(255, 255, 255));
        resized.copyTo(tile(cv::Rect((kTileSize - w) / 2, (kTileSize - h) / 2, w, h)));
        tiles.push_back(std::move(tile));
    }
    if (tiles.empty()) throw Error(ErrorKind::Validation, "grid: none of the " + std::to_string(images.size()) + " images could be decoded");
    out.layout = grid_layout(tiles.size());
    out.tiles = tiles.size();
    cv::Mat canvas(out.layout.height, out.layout.width, CV_8UC3, cv::Scalar(255, 255, 255));
    for (std::size_t i = 0; i < tiles.size(); ++i) {
        const int col = static_cast<int>(i % kGridColumns);
        const int row = static_cast<int>(i / kGridColumns);
        tiles[i].copyTo(canvas(cv::Rect(col * kTileSize, row * kTileSize, kTileSize, kTileSize)));
    }
    std::vector<unsigned char> buf;
    if (!cv::imencode(".png", canvas, buf)) throw Error(ErrorKind::Internal, "grid: PNG encoding failed");
    out.png.assign(buf.begin(), buf.end());
    return out;
}

Proposals propose_via_grid(const std::vector<SubsetPair>& rounds, ProviderClient& captioner, const ProposeOptions& opt) {
    if (rounds.empty()) throw Error(ErrorKind::Validation, "rounds must be >= 1");
    const auto digest = template_digest(opt.prompts.propose_grid);
    Proposals out;
    for (const auto& round : rounds) {
        require_nonempty(round);
        const std::string ctx = "grid proposer, round " + std::to_string(round.round_index);
        const auto ga = compose_grid(round.images_a);
        const auto gb = compose_grid(round.images_b);
        for (const auto* g : {&ga, &gb})
            for (const auto& id : g->skipped) out.notes.push_back(ctx + ": skipped undecodable image " + id);
        auto payload = [](const GridImage& g) {
            return providers::ImagePayload{"data:image/png;base64," + base64_encode(g.png), sha256_hex(g.png)};
        };
        ChatRequest req;
        req.task = "propose-grid";
        req.seed = round.round_index;
        req.args = {{"k", opt.k}};
        const auto text = render_template(opt.prompts.propose_grid, {{"k", std::to_string(opt.k)}});
        req.messages.push_back({"user", {{text, std::nullopt}, {"", payload(ga)}, {"", payload(gb)}}});
        const auto [a, b] = with_context(ctx, [&] { return ask(captioner, req, opt.k); });
        append(out, a, Direction::DescribesA, Proposer::Grid, round, opt, digest);
        append(out, b, Direction::DescribesB, Proposer::Grid, round, opt, digest);
    }
    return out;
}

std::vector<std::size_t> nearest_phrases(std::span<const double> direction, const std::vector<EmbeddingVector>& phrases,
                                         std::size_t m) {
    std::vector<std::pair<double, std::size_t>> scored;
    scored.reserve(phrases.size());
    for (std::size_t i = 0; i < phrases.size(); ++i)
        scored.emplace_back(numstat::cosine_similarity(direction, phrases[i].values()), i);
    std::stable_sort(scored.begin(), scored.end(), [](const auto& x, const auto& y) { return x.first > y.first; });
    std::vector<std::size_t> out;
    for (std::size_t i = 0; i < std::min(m, scored.size()); ++i) out.push_back(scored[i].second);
    return out;
}

Proposals propose_via_embeddings(const std::vector<SubsetPair>& rounds, ProviderClient& embedder,
                                 ProviderClient& text_model, const ProposeOptions& opt,
                                 const EmbeddingProposeOptions& eopt) {
    if (rounds.empty()) throw Error(ErrorKind::Validation, "rounds must be >= 1");
    std::vector<std::string> bank = eopt.phrase_bank;
    if (bank.empty()) {
        std::set<std::string> seen;
        for (const auto& r : rounds)
            for (const auto* imgs : {&r.images_a, &r.images_b})
                for (const auto& rec : *imgs)
                    if (rec.caption && !rec.caption->empty() && seen.insert(*rec.caption).second) bank.push_back(*rec.caption);
    }
    if (bank.empty())
        throw Error(ErrorKind::Validation,
                    "embedding proposer: empty phrase bank and no manifest captions to ground the difference vector");

    const auto workers = static_cast<std::size_t>(embedder.config().max_parallel);
    std::vector<std::optional<EmbeddingVector>> bank_vecs(bank.size());
    with_context("embedding proposer, phrase bank", [&] {
        parallel_for(bank.size(), workers, [&](std::size_t i) { bank_vecs[i] = providers::embed_text(embedder, bank[i]); });
        return 0;
    });
    std::vector<EmbeddingVector> phrases;
    for (auto& v : bank_vecs) phrases.push_back(std::move(*v));

    const auto digest = template_digest(opt.prompts.propose_embedding);
    Proposals out;
    for (const auto& round : rounds) {
        require_nonempty(round);
        const std::string ctx = "embedding proposer, round " + std::to_string(round.round_index);
        auto mean_of = [&](const std::vector<ImageRecord>& imgs) {
            std::vector<std::optional<EmbeddingVector>> vs(imgs.size());
            parallel_for(imgs.size(), workers, [&](std::size_t i) {
                vs[i] = providers::embed_image(embedder, ImageRef{imgs[i].id, imgs[i].path});
            });
            std::vector<double> m(vs.front()->dim(), 0.0);
            for (const auto& v : vs)
                for (std::size_t d = 0; d < m.size(); ++d) m[d] += v->values()[d];
            for (double& x : m) x /= static_cast<double>(vs.size());
            return m;
        };
        const auto [ma, mb] = with_context(ctx, [&] { return std::pair{mean_of(round.images_a), mean_of(round.images_b)}; });
        std::vector<double> diff(ma.size()), neg(ma.size());
        double norm = 0.0;
        for (std::size_t d = 0; d < diff.size(); ++d) {
            diff[d] = ma[d] - mb[d];
            neg[d] = -diff[d];
            norm += diff[d] * diff[d];
        }
        if (norm == 0.0) {
            out.notes.push_back(ctx + ": no separation (difference vector is zero)");
            continue;
        }
        std::vector<std::string> pa, pb;
        for (auto i : nearest_phrases(diff, phrases, eopt.neighbors)) pa.push_back(bank[i]);
        for (auto i : nearest_phrases(neg, phrases, eopt.neighbors)) pb.push_back(bank[i]);

        ChatRequest req;
        req.task = "propose-embedding";
        req.seed = round.round_index;
        req.args = {{"phrases_a", pa}, {"phrases_b", pb}, {"k", opt.k}};
        const auto text = render_template(opt.prompts.propose_embedding, {{"phrases_a", bullet_list(pa)},
                                                                          {"phrases_b", bullet_list(pb)},
                                                                          {"k", std::to_string(opt.k)}});
        req.messages.push_back({"user", {{text, std::nullopt}}});
        const auto [a, b] = with_context(ctx, [&] { return ask(text_model, req, opt.k); });
        append(out, a, Direction::DescribesA, Proposer::Embedding, round, opt, digest);
        append(out, b, Direction::DescribesB, Proposer::Embedding, round, opt, digest);
    }
    return out;
}

std::vector<CandidateDescription> dedup(const std::vector<CandidateDescription>& candidates, const TextEmbedFn& embed) {
    auto folded = [](const std::string& t) {
        auto s = normalize_whitespace(t);
        std::transform(s.begin(), s.end(), s.begin(), [](unsigned char c) { return std::tolower(c); });
        return s;
    };
    std::map<std::pair<std::string, Direction>, std::vector<std::size_t>> groups;
    for (std::size_t i = 0; i < candidates.size(); ++i)
        groups[{candidates[i].pair, candidates[i].direction}].push_back(i);

    std::vector<bool> keep(candidates.size(), false);
    std::map<std::string, EmbeddingVector> cache;
    auto vec = [&](const std::string& key) -> const EmbeddingVector& {
        auto it = cache.find(key);
        if (it == cache.end()) it = cache.emplace(key, embed(key)).first;
        return it->second;
    };
    for (auto& [_, idx] : groups) {
        std::stable_sort(idx.begin(), idx.end(), [&](std::size_t x, std::size_t y) {
            const auto& a = candidates[x];
            const auto& b = candidates[y];
            if (a.round_index != b.round_index) return a.round_index < b.round_index;
            return normalize_whitespace(a.text) < normalize_whitespace(b.text);
        });
        std::set<std::string> seen;
        std::vector<std::string> kept;
        for (auto i : idx) {
            const auto key = folded(candidates[i].text);
            if (key.empty() || !seen.insert(key).second) continue;
            bool near = false;
            if (embed) {
                const auto& v = vec(normalize_whitespace(candidates[i].text));
                for (const auto& k : kept)
                    if (numstat::cosine_similarity(v, vec(k)) >= kNearDuplicateCosine) {
                        near = true;
                        break;
                    }
            }
            if (near) continue;
            kept.push_back(normalize_whitespace(candidates[i].text));
            keep[i] = true;
        }
    }
    std::vector<CandidateDescription> out;
    for (std::size_t i = 0; i < candidates.size(); ++i)
        if (keep[i]) out.push_back(candidates[i]);
    return out;
}

}  // namespace urbansense::discover
