#include "voxa/vocab.hpp"

#include <cctype>
#include <istream>
#include <ostream>
#include <stdexcept>

namespace voxa {

namespace {

bool word_start(char c) { return std::isalpha(static_cast<unsigned char>(c)); }
bool word_char(char c) {
    return std::isalnum(static_cast<unsigned char>(c)) || c == '_';
}

// Splits text into word / single-character pieces. Scanning never produces a
// special token text.
std::vector<std::string> scan(const std::string& text) {
    std::vector<std::string> out;
    std::size_t i = 0;
    while (i < text.size()) {
        const char c = text[i];
        if (word_start(c)) {
            std::size_t j = i + 1;
            while (j < text.size() && word_char(text[j])) ++j;
            out.push_back(text.substr(i, j - i));
            i = j;
        } else {
            out.push_back(std::string(1, c));
            ++i;
        }
    }
    return out;
}

std::string escape(const std::string& t) {
    std::string out;
    for (char c : t) {
        if (c == '\\')
            out += "\\\\";
        else if (c == '\n')
            out += "\\n";
        else if (c == ' ')
            out += "\\s";
        else
            out += c;
    }
    return out;
}

std::string unescape(const std::string& t) {
    std::string out;
    for (std::size_t i = 0; i < t.size(); ++i) {
        if (t[i] == '\\' && i + 1 < t.size()) {
            const char n = t[++i];
            out += n == 'n' ? '\n' : (n == 's' ? ' ' : n);
        } else {
            out += t[i];
        }
    }
    return out;
}

}  // namespace

void Vocabulary::push(const std::string& t) {
    if (ids_.count(t)) return;
    ids_[t] = int(tokens_.size());
    tokens_.push_back(t);
}

Vocabulary Vocabulary::build(const std::vector<std::string>& corpus) {
    if (corpus.empty()) throw std::invalid_argument("build_vocab: empty corpus");
    Vocabulary v;
    v.push("<PAD>");
    v.push("<BOS>");
    v.push("<EOS>");
    v.push(kModText);
    v.push("\n");
    for (char c = 32; c < 127; ++c) v.push(std::string(1, c));
    for (const auto& line : corpus)
        for (const auto& piece : scan(line))
            v.push(piece);
    return v;
}

int Vocabulary::id_of(const std::string& text) const {
    auto it = ids_.find(text);
    return it == ids_.end() ? -1 : it->second;
}

std::vector<int> Vocabulary::tokenize(const std::string& text, bool recognize_mod) const {
    std::vector<int> out;
    std::size_t i = 0;
    while (i < text.size()) {
        if (recognize_mod && text.compare(i, 5, kModText) == 0) {
            out.push_back(kMod);
            i += 5;
            continue;
        }
        const char c = text[i];
        if (word_start(c)) {
            std::size_t j = i + 1;
            while (j < text.size() && word_char(text[j])) ++j;
            const std::string word = text.substr(i, j - i);
            const int id = id_of(word);
            if (id >= 0) {
                out.push_back(id);
            } else {
                // unseen word: decompose into characters, never an error
                for (char wc : word) {
                    const int cid = id_of(std::string(1, wc));
                    if (cid >= 0) out.push_back(cid);
                }
            }
            i = j;
        } else {
            const int cid = id_of(std::string(1, c));
            if (cid >= 0) out.push_back(cid);
            ++i;
        }
    }
    return out;
}

std::string Vocabulary::render(int id) const {
    if (id == kPad || id == kBos || id == kEosStep) return "";
    return tokens_[std::size_t(id)];
}

std::string Vocabulary::detokenize(const std::vector<int>& ids) const {
    std::string out;
    for (int id : ids) out += render(id);
    return out;
}

void Vocabulary::save(std::ostream& os) const {
    for (const auto& t : tokens_) os << escape(t) << "\n";
}

Vocabulary Vocabulary::load(std::istream& is) {
    Vocabulary v;
    std::string line;
    while (std::getline(is, line)) v.push(unescape(line));
    if (v.size() < 4) throw std::runtime_error("vocabulary file too short");
    return v;
}

}  // namespace voxa
