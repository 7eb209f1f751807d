// Plain-text ingestion at character level: build the vocabulary, pack the
// byte stream into fixed-length sequences, split train/validation.

#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "maskdiff/diffusion.hpp"

namespace maskdiff {

struct Dataset {
    Vocabulary vocab;
    int seq_len = 0;
    std::vector<TokenSequence> train;
    std::vector<TokenSequence> valid;
    std::uint64_t content_hash = 0;     // FNV-1a over the packed token stream
    std::size_t unk_replacements = 0;   // bytes outside the kept charset
};

// The file's bytes plus one trailing SEP form the token stream; full seq_len
// chunks are kept, the tail is dropped, and the last valid_fraction of the
// packed sequences becomes the validation split. Deterministic in the input
// bytes. Characters beyond the vocab cap map to UNK (counted).
Dataset ingest_corpus_text(const std::string& text, int seq_len, int vocab_cap = 128,
                           double valid_fraction = 0.05);
Dataset ingest_corpus(const std::string& path, int seq_len, int vocab_cap = 128,
                      double valid_fraction = 0.05);

// Seeded pseudo-English generator for desk-scale runs: word-bank sentences
// with punctuation, capitalization and paragraph breaks, so a character model
// has real structure to learn.
std::string make_synthetic_corpus(std::size_t approx_bytes, std::uint64_t seed);

}  // namespace maskdiff
