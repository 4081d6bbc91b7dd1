#pragma once

#include <array>
#include <cstddef>
#include <fstream>
#include <sstream>
#include <string>
#include <unordered_map>
#include <vector>

#include "matrix.hpp"

namespace dualenc {

// Closed whitespace vocabulary with a fixed reserved block.
class Vocabulary {
  public:
    static constexpr int pad_id = 0;
    static constexpr int bos_id = 1;
    static constexpr int eot_id = 2;
    static constexpr int unk_id = 3;
    static constexpr int reserved_count = 4;

    void add(const std::string& token) {
        require(!token.empty(), "Vocabulary: empty token");
        require(token_to_id_.find(token) == token_to_id_.end(),
                "Vocabulary: duplicate token '" + token + "'");
        const int id = reserved_count + static_cast<int>(tokens_.size());
        token_to_id_[token] = id;
        tokens_.push_back(token);
    }

    int id(const std::string& token) const {
        auto it = token_to_id_.find(token);
        return it == token_to_id_.end() ? unk_id : it->second;
    }

    bool contains(const std::string& token) const {
        return token_to_id_.find(token) != token_to_id_.end();
    }

    const std::string& token(int id) const {
        require(id >= reserved_count && id < size(), "Vocabulary: id out of range");
        return tokens_[static_cast<std::size_t>(id - reserved_count)];
    }

    int size() const { return reserved_count + static_cast<int>(tokens_.size()); }

    const std::vector<std::string>& tokens() const { return tokens_; }

    void save(const std::string& path) const {
        std::ofstream out(path, std::ios::binary);
        require(out.good(), "Vocabulary: cannot open " + path + " for writing");
        for (const auto& t : tokens_) out << t << '\n';
    }

    static Vocabulary load(const std::string& path) {
        std::ifstream in(path, std::ios::binary);
        require(in.good(), "Vocabulary: cannot open " + path);
        Vocabulary v;
        std::string line;
        while (std::getline(in, line)) {
            if (!line.empty() && line.back() == '\r') line.pop_back();
            if (!line.empty()) v.add(line);
        }
        return v;
    }

  private:
    std::vector<std::string> tokens_;
    std::unordered_map<std::string, int> token_to_id_;
};

struct TokenSequence {
    std::vector<int> ids;  // BOS + body + EOT
    std::size_t length() const { return ids.size(); }
    std::size_t eot_position() const { return ids.size() - 1; }
};

// Whitespace split; unknown words map to UNK (counted, never an error).
// Body longer than max_len - 2 is truncated so EOT is always present.
inline TokenSequence tokenize(const std::string& text, const Vocabulary& vocab,
                              std::size_t max_len, std::size_t* unk_count = nullptr) {
    require(max_len >= 3, "tokenize: max_len must be at least 3");
    TokenSequence seq;
    seq.ids.push_back(Vocabulary::bos_id);
    std::istringstream words(text);
    std::string w;
    while (words >> w) {
        if (seq.ids.size() >= max_len - 1) break;
        const int id = vocab.id(w);
        if (id == Vocabulary::unk_id && unk_count) ++*unk_count;
        seq.ids.push_back(id);
    }
    seq.ids.push_back(Vocabulary::eot_id);
    return seq;
}

inline std::size_t word_count(const std::string& text) {
    std::istringstream words(text);
    std::string w;
    std::size_t n = 0;
    while (words >> w) ++n;
    return n;
}

namespace wordlists {

inline const std::array<const char*, 15>& grammar() {
    static const std::array<const char*, 15> words = {
        "a", "photo", "of", "and", "in", "the",
        "an", "picture", "image", "scene", "with", "there", "is", "small", "large",
    };
    return words;
}

inline const std::array<const char*, 24>& colors() {
    static const std::array<const char*, 24> words = {
        "red",    "blue",   "green",  "yellow",  "orange", "purple",
        "pink",   "brown",  "black",  "white",   "gray",   "silver",
        "golden", "beige",  "teal",   "maroon",  "navy",   "olive",
        "coral",  "violet", "crimson", "turquoise", "indigo", "amber",
    };
    return words;
}

// 4 x 4 grid cells, row-major; token index r * 4 + c.
inline const std::array<const char*, 16>& positions() {
    static const std::array<const char*, 16> words = {
        "top-left",    "top-center-left",    "top-center-right",    "top-right",
        "upper-left",  "upper-center-left",  "upper-center-right",  "upper-right",
        "lower-left",  "lower-center-left",  "lower-center-right",  "lower-right",
        "bottom-left", "bottom-center-left", "bottom-center-right", "bottom-right",
    };
    return words;
}

inline const std::array<const char*, 120>& objects() {
    static const std::array<const char*, 120> words = {
        "cat",     "dog",     "bird",    "fish",    "horse",   "sheep",
        "goat",    "cow",     "pig",     "duck",    "hen",     "owl",
        "fox",     "wolf",    "bear",    "deer",    "moose",   "otter",
        "seal",    "whale",   "shark",   "crab",    "snail",   "frog",
        "toad",    "newt",    "bee",     "ant",     "moth",    "wasp",
        "beetle",  "spider",  "mouse",   "rat",     "bat",     "mole",
        "hare",    "skunk",   "badger",  "lemur",   "panda",   "koala",
        "zebra",   "llama",   "camel",   "bison",   "donkey",  "pony",
        "chair",   "table",   "lamp",    "sofa",    "desk",    "shelf",
        "stool",   "bench",   "mirror",  "clock",   "vase",    "plate",
        "bowl",    "cup",     "mug",     "fork",    "spoon",   "knife",
        "pot",     "pan",     "kettle",  "toaster", "radio",   "phone",
        "laptop",  "camera",  "book",    "pen",     "pencil",  "brush",
        "comb",    "towel",   "pillow",  "blanket", "rug",     "curtain",
        "candle",  "basket",  "bucket",  "ladder",  "hammer",  "wrench",
        "shovel",  "rake",    "broom",   "mop",     "car",     "truck",
        "bus",     "van",     "train",   "tram",    "boat",    "ship",
        "canoe",   "kayak",   "scooter", "sled",    "wagon",   "rocket",
        "glider",  "kite",    "drum",    "flute",   "violin",  "guitar",
        "piano",   "trumpet", "apple",   "banana",  "mango",   "lemon",
    };
    return words;
}

}  // namespace wordlists

// The generator's vocabulary is fixed given the word lists; it does not
// depend on the dataset seed.
inline Vocabulary build_vocabulary() {
    Vocabulary v;
    for (const char* w : wordlists::grammar()) v.add(w);
    for (const char* w : wordlists::colors()) v.add(w);
    for (const char* w : wordlists::positions()) v.add(w);
    for (const char* w : wordlists::objects()) v.add(w);
    return v;
}

}  // namespace dualenc
