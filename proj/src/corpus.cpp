#include "maskdiff/corpus.hpp"

#include <algorithm>
#include <array>
#include <fstream>
#include <stdexcept>

#include "maskdiff/rng.hpp"

namespace maskdiff {

Dataset ingest_corpus_text(const std::string& text, int seq_len, int vocab_cap,
                           double valid_fraction) {
    if (text.empty()) throw std::invalid_argument("ingest_corpus: empty input");
    if (seq_len < 1) throw std::invalid_argument("ingest_corpus: seq_len must be positive");
    if (vocab_cap < 4) throw std::invalid_argument("ingest_corpus: vocab cap too small");

    std::array<std::uint64_t, 256> freq{};
    for (unsigned char c : text) ++freq[c];

    // keep the most frequent bytes up to cap-3 (UNK/SEP/MASK are reserved),
    // then order kept bytes by value so indices are deterministic
    std::vector<int> bytes;
    for (int b = 0; b < 256; ++b)
        if (freq[b] > 0) bytes.push_back(b);
    const std::size_t keep = static_cast<std::size_t>(vocab_cap - 3);
    if (bytes.size() > keep) {
        std::sort(bytes.begin(), bytes.end(), [&](int a, int b) {
            if (freq[a] != freq[b]) return freq[a] > freq[b];
            return a < b;
        });
        bytes.resize(keep);
    }
    std::sort(bytes.begin(), bytes.end());

    Dataset ds;
    ds.seq_len = seq_len;
    for (int b : bytes) ds.vocab.chars.push_back(static_cast<char>(b));

    std::vector<int> stream;
    stream.reserve(text.size() + 1);
    for (unsigned char c : text) {
        const int tok = ds.vocab.token_for_byte(c);
        if (tok == ds.vocab.unk_index()) ++ds.unk_replacements;
        stream.push_back(tok);
    }
    stream.push_back(ds.vocab.sep_index());  // document terminator

    std::uint64_t h = 0xCBF29CE484222325ULL;
    for (int tok : stream) {
        h ^= static_cast<std::uint64_t>(tok);
        h *= 0x100000001B3ULL;
    }
    ds.content_hash = h;

    const std::size_t n_seq = stream.size() / static_cast<std::size_t>(seq_len);
    if (n_seq == 0)
        throw std::invalid_argument("ingest_corpus: input shorter than one sequence");
    std::vector<TokenSequence> packed(n_seq);
    for (std::size_t i = 0; i < n_seq; ++i)
        packed[i].assign(stream.begin() + static_cast<std::ptrdiff_t>(i * seq_len),
                         stream.begin() + static_cast<std::ptrdiff_t>((i + 1) * seq_len));

    std::size_t n_valid = static_cast<std::size_t>(static_cast<double>(n_seq) * valid_fraction);
    if (valid_fraction > 0.0 && n_valid == 0 && n_seq > 1) n_valid = 1;
    const std::size_t n_train = n_seq - n_valid;
    ds.train.assign(packed.begin(), packed.begin() + static_cast<std::ptrdiff_t>(n_train));
    ds.valid.assign(packed.begin() + static_cast<std::ptrdiff_t>(n_train), packed.end());
    return ds;
}

Dataset ingest_corpus(const std::string& path, int seq_len, int vocab_cap,
                      double valid_fraction) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("ingest_corpus: cannot open " + path);
    std::string text((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    return ingest_corpus_text(text, seq_len, vocab_cap, valid_fraction);
}

namespace {

const char* const kNouns[] = {
    "time",  "year",   "people", "way",    "day",    "man",    "world",  "life",
    "hand",  "part",   "child",  "eye",    "woman",  "place",  "work",   "week",
    "case",  "point",  "group",  "number", "room",   "fact",   "idea",   "water",
    "money", "story",  "month",  "book",   "house",  "friend", "father", "power",
    "hour",  "game",   "line",   "city",   "name",   "team",   "minute", "word",
    "night", "heart",  "home",   "side",   "door",   "road",   "garden", "river",
    "light", "mother", "paper",  "music",  "bird",   "tree",   "stone",  "wind"};
const char* const kVerbs[] = {
    "made",   "found", "took",   "saw",    "knew",  "wanted", "looked", "used",
    "called", "asked", "needed", "became", "left",  "put",    "meant",  "kept",
    "began",  "held",  "heard",  "ran",    "moved", "lived",  "built",  "opened",
    "walked", "wrote", "stood",  "lost",   "paid",  "met",    "sent",   "played"};
const char* const kAdjectives[] = {
    "good",  "new",   "first", "last",  "long",  "great", "little", "own",
    "other", "old",   "right", "big",   "high",  "small", "large",  "young",
    "early", "quiet", "bright", "dark", "warm",  "cold",  "deep",   "simple"};
const char* const kConnectives[] = {"and", "but", "so", "because", "while", "when", "as"};
const char* const kDeterminers[] = {"the", "a", "this", "that", "every", "one"};
const char* const kPrepositions[] = {"in", "on", "near", "under", "over", "through", "beside"};

template <std::size_t N>
const char* pick(RngStream& rng, const char* const (&bank)[N]) {
    return bank[static_cast<std::size_t>(rng.uniform() * N)];
}

void append_clause(std::string& out, RngStream& rng) {
    out += pick(rng, kDeterminers);
    out += ' ';
    if (rng.bernoulli(0.6)) {
        out += pick(rng, kAdjectives);
        out += ' ';
    }
    out += pick(rng, kNouns);
    out += ' ';
    out += pick(rng, kVerbs);
    out += ' ';
    out += pick(rng, kDeterminers);
    out += ' ';
    if (rng.bernoulli(0.3)) {
        out += pick(rng, kAdjectives);
        out += ' ';
    }
    out += pick(rng, kNouns);
    if (rng.bernoulli(0.45)) {
        out += ' ';
        out += pick(rng, kPrepositions);
        out += ' ';
        out += pick(rng, kDeterminers);
        out += ' ';
        out += pick(rng, kNouns);
    }
}

}  // namespace

std::string make_synthetic_corpus(std::size_t approx_bytes, std::uint64_t seed) {
    RngStream rng(seed, 0x5EED);
    std::string out;
    out.reserve(approx_bytes + 256);
    int sentences_in_paragraph = 0;
    int paragraph_target = 3 + static_cast<int>(rng.uniform() * 5);
    while (out.size() < approx_bytes) {
        std::string sentence;
        append_clause(sentence, rng);
        if (rng.bernoulli(0.35)) {
            sentence += ", ";
            sentence += pick(rng, kConnectives);
            sentence += ' ';
            append_clause(sentence, rng);
        }
        sentence[0] = static_cast<char>(std::toupper(sentence[0]));
        sentence += rng.bernoulli(0.92) ? "." : (rng.bernoulli(0.5) ? "?" : "!");
        out += sentence;
        if (++sentences_in_paragraph >= paragraph_target) {
            out += '\n';
            sentences_in_paragraph = 0;
            paragraph_target = 3 + static_cast<int>(rng.uniform() * 5);
        } else {
            out += ' ';
        }
    }
    return out;
}

}  // namespace maskdiff
