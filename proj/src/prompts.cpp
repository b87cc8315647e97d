#include "urbansense/prompts.hpp"

#include <cctype>

#include "urbansense/digest.hpp"
#include "urbansense/error.hpp"
#include "urbansense/io.hpp"

namespace urbansense {

PromptSet PromptSet::load(const std::filesystem::path& dir) {
    PromptSet p = defaults();
    auto over = [&](const char* name, std::string& field) {
        const auto path = dir / (std::string(name) + ".txt");
        if (std::filesystem::exists(path)) field = io::read_file(path);
    };
    over("caption", p.caption);
    over("propose_captions", p.propose_captions);
    over("propose_grid", p.propose_grid);
    over("propose_embedding", p.propose_embedding);
    over("judge_image", p.judge_image);
    over("judge_caption", p.judge_caption);
    over("judge_clarify", p.judge_clarify);
    return p;
}

std::string render_template(std::string_view text, const std::map<std::string, std::string>& values) {
    std::string out;
    out.reserve(text.size());
    std::size_t i = 0;
    while (i < text.size()) {
        if (text[i] == '{') {
            std::size_t j = i + 1;
            while (j < text.size() && (std::isalnum(static_cast<unsigned char>(text[j])) || text[j] == '_')) ++j;
            if (j < text.size() && text[j] == '}' && j > i + 1 && !std::isdigit(static_cast<unsigned char>(text[i + 1]))) {
                const std::string name(text.substr(i + 1, j - i - 1));
                const auto it = values.find(name);
                if (it == values.end()) throw Error(ErrorKind::Validation, "prompt placeholder {" + name + "} has no value");
                out += it->second;
                i = j + 1;
                continue;
            }
        }
        out += text[i++];
    }
    return out;
}

std::string template_digest(std::string_view text) { return sha256_hex(text); }

}  // namespace urbansense
