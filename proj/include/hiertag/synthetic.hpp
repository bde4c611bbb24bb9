// SPDX-License-Identifier: Apache-2.0
//
// Stochastic template grammar producing POS- and chunk-tagged sentences.
// POS comes from the lexical class filling each slot; chunk tags come from
// the phrase template, so POS is predictive of chunking. Noun and verb
// classes share stems (and plural/3rd-person forms), so tags are ambiguous
// without context. Lexical classes are Zipf-distributed so that small
// labeled samples leave many words seen only in unlabeled text.

#pragma once

#include <cstddef>
#include <cstdint>

#include "hiertag/data.hpp"

namespace hiertag {

struct SyntheticCorpus {
  Corpus labeled;
  Corpus unlabeled;
};

// The lexicon is fixed; `seed` drives sentence sampling only. Labeled and
// unlabeled sentences are drawn from independent streams.
SyntheticCorpus gen_synthetic(std::uint64_t seed, std::size_t n_labeled,
                              std::size_t n_unlabeled);

struct SyntheticSplits {
  Corpus train;
  Corpus dev;
  Corpus test;
  Corpus unlabeled;
};

// 80/10/10 split of the labeled sentences, in generation order.
SyntheticSplits split_synthetic(SyntheticCorpus corpus);

}  // namespace hiertag
