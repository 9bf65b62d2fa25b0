#pragma once

#include <iosfwd>
#include <string>
#include <unordered_map>
#include <vector>

namespace voxa {

// Deterministic word + single-character tokenizer. Specials occupy fixed low
// ids and are never produced by plain text scanning; every printable ASCII
// character is always present, so unseen words fall back to characters
// instead of failing.
class Vocabulary {
public:
    static constexpr int kPad = 0;
    static constexpr int kBos = 1;
    static constexpr int kEosStep = 2;
    static constexpr int kMod = 3;
    static constexpr const char* kModText = "<MOD>";

    Vocabulary() = default;

    int size() const { return int(tokens_.size()); }
    const std::string& token(int id) const { return tokens_[std::size_t(id)]; }
    int id_of(const std::string& text) const;  // -1 when absent
    bool is_special(int id) const { return id < 4; }

    // recognize_mod turns the literal "<MOD>" into the MOD special, as used
    // when tokenizing instruction programs.
    std::vector<int> tokenize(const std::string& text, bool recognize_mod = false) const;
    std::string detokenize(const std::vector<int>& ids) const;
    // rendering of one token inside program text; PAD/BOS/EOS render empty
    std::string render(int id) const;

    void save(std::ostream& os) const;
    static Vocabulary load(std::istream& is);

    static Vocabulary build(const std::vector<std::string>& corpus);

private:
    void push(const std::string& t);
    std::vector<std::string> tokens_;
    std::unordered_map<std::string, int> ids_;
};

inline Vocabulary build_vocab(const std::vector<std::string>& corpus) {
    return Vocabulary::build(corpus);
}

}  // namespace voxa
