// SPDX-License-Identifier: Apache-2.0

#include "hiertag/synthetic.hpp"

#include <algorithm>
#include <cmath>
#include <set>
#include <string>
#include <vector>

#include "hiertag/random.hpp"

namespace hiertag {

namespace {

constexpr std::uint64_t kLexiconSeed = 0x5eed1e71c0ULL;

// Zipf-weighted word list.
struct WordClass {
  std::vector<std::string> words;
  std::vector<double> cdf;

  void finalize(double exponent = 1.0) {
    cdf.resize(words.size());
    double acc = 0.0;
    for (std::size_t i = 0; i < words.size(); ++i) {
      acc += 1.0 / std::pow(static_cast<double>(i + 1), exponent);
      cdf[i] = acc;
    }
    for (double& c : cdf) c /= acc;
  }

  std::size_t sample_index(Rng& rng) const {
    const double u = uniform01(rng);
    const auto it = std::lower_bound(cdf.begin(), cdf.end(), u);
    return std::min<std::size_t>(static_cast<std::size_t>(it - cdf.begin()), words.size() - 1);
  }
  const std::string& sample(Rng& rng) const { return words[sample_index(rng)]; }
};

struct Lexicon {
  WordClass det_sg, det_pl, pron, adj, adv, intens, prep, conj, modal;
  WordClass number, sbar, particle;
  // Noun and verb stems; the first `shared` verb stems are also nouns.
  std::vector<std::string> noun_stems;
  std::vector<std::string> verb_stems;
  WordClass noun_pick, verb_pick;  // index distributions over stems
};

std::vector<std::string> make_stems(Rng& rng, std::size_t n, std::set<std::string>& used) {
  static const char* onsets[] = {"b", "d", "f", "g", "k", "l", "m", "n", "p", "r",
                                 "s", "t", "v", "z", "br", "dr", "gl", "pl", "st", "tr"};
  static const char* vowels[] = {"a", "e", "i", "o", "u", "ai", "ou"};
  static const char* codas[] = {"", "", "n", "m", "r", "l", "k", "sh"};
  std::vector<std::string> out;
  while (out.size() < n) {
    const std::size_t syll = 2 + uniform_index(rng, 2);
    std::string w;
    for (std::size_t s = 0; s < syll; ++s) {
      w += onsets[uniform_index(rng, std::size(onsets))];
      w += vowels[uniform_index(rng, std::size(vowels))];
      if (s + 1 == syll) w += codas[uniform_index(rng, std::size(codas))];
    }
    if (used.insert(w).second) out.push_back(w);
  }
  return out;
}

WordClass fixed(std::vector<std::string> words, double exponent = 1.0) {
  WordClass c;
  c.words = std::move(words);
  c.finalize(exponent);
  return c;
}

Lexicon build_lexicon() {
  Rng rng(kLexiconSeed);
  std::set<std::string> used = {"the", "a", "this", "that", "every", "each", "these", "those",
                                "some", "many", "he", "she", "it", "they", "we", "you",
                                "very", "quite", "too", "of", "in", "on", "at", "with",
                                "for", "from", "by", "about", "under", "over", "into",
                                "and", "or", "but", "will", "can", "would", "should", "may",
                                "must", "to", "is", "was", "has", "had", "up", "out", "off",
                                "down", "back", "oh", "well", "as", "because", "while",
                                "although", "if", "so", "rather", "than", "even", "though"};
  Lexicon lx;
  lx.det_sg = fixed({"the", "a", "this", "that", "every", "each"});
  lx.det_pl = fixed({"the", "these", "those", "some", "many"});
  lx.pron = fixed({"he", "they", "she", "it", "we", "you"});
  lx.intens = fixed({"very", "quite", "too"});
  lx.prep = fixed({"of", "in", "on", "with", "for", "at", "from", "by", "about", "under",
                   "over", "into"});
  lx.conj = fixed({"and", "but", "or"});
  lx.modal = fixed({"will", "can", "would", "should", "may", "must"});
  lx.particle = fixed({"up", "out", "off", "down", "back"});
  lx.sbar = fixed({"because", "while", "that", "if", "although"});

  const auto adj_stems = make_stems(rng, 120, used);
  lx.adj = fixed(adj_stems);
  std::vector<std::string> adverbs;
  for (std::size_t i = 0; i < 40; ++i) adverbs.push_back(adj_stems[(i * 7) % adj_stems.size()] + "ly");
  lx.adv = fixed(adverbs);

  std::vector<std::string> numbers = {"two", "three", "ten"};
  for (int n : {12, 45, 100, 1990, 7, 250, 38, 2001, 64}) numbers.push_back(std::to_string(n));
  lx.number = fixed(numbers);

  constexpr std::size_t kNouns = 260;
  constexpr std::size_t kVerbs = 140;
  constexpr std::size_t kShared = 40;
  lx.verb_stems = make_stems(rng, kVerbs, used);
  lx.noun_stems.assign(lx.verb_stems.begin(), lx.verb_stems.begin() + kShared);
  const auto own_nouns = make_stems(rng, kNouns - kShared, used);
  // Interleave so shared stems spread across the frequency ranks.
  std::vector<std::string> nouns;
  for (std::size_t j = 0, k = 0; nouns.size() < kNouns;) {
    if ((nouns.size() % 6 == 0 && j < kShared) || k == own_nouns.size()) {
      nouns.push_back(lx.noun_stems[j++]);
    } else {
      nouns.push_back(own_nouns[k++]);
    }
  }
  lx.noun_stems = std::move(nouns);
  lx.noun_pick = fixed(lx.noun_stems);
  std::vector<std::string> verbs = lx.verb_stems;
  {
    Rng vr(kLexiconSeed + 1);
    shuffle(verbs, vr);
  }
  lx.verb_stems = std::move(verbs);
  lx.verb_pick = fixed(lx.verb_stems);
  return lx;
}

const Lexicon& lexicon() {
  static const Lexicon lx = build_lexicon();
  return lx;
}

class Emitter {
 public:
  explicit Emitter(Rng& rng) : rng_(rng), lx_(lexicon()) {}

  Sentence finish() {
    Sentence s;
    s.tokens = std::move(words_);
    s.pos = std::move(pos_);
    s.chunk = std::move(chunk_);
    return s;
  }

  void sentence() {
    if (chance(0.08)) {
      phrase("ADVP", {adverb()});
      outside(",", ",");
    } else if (chance(0.04)) {
      if (chance(0.5)) phrase("INTJ", {{"oh", "UH"}, {"well", "UH"}});
      else phrase("INTJ", {{"oh", "UH"}});
      outside(",", ",");
    }
    clause(0);
    if (chance(0.15)) {
      if (chance(0.5)) outside(",", ",");
      outside(lx_.conj.sample(rng_), "CC");
      clause(1);
    } else if (chance(0.2)) {
      if (chance(0.3)) {
        phrase("SBAR", {{"so", "IN"}, {"that", "IN"}});
      } else if (chance(0.15)) {
        phrase("SBAR", {{"even", "RB"}, {"though", "IN"}});
      } else {
        phrase("SBAR", {{lx_.sbar.sample(rng_), "IN"}});
      }
      clause(1);
    }
    outside(".", ".");
  }

 private:
  using Item = std::pair<std::string, std::string>;

  bool chance(double p) { return bernoulli(rng_, p); }

  void outside(const std::string& w, const std::string& p) {
    words_.push_back(w);
    pos_.push_back(p);
    chunk_.push_back("O");
  }

  void phrase(const std::string& type, const std::vector<Item>& items) {
    for (std::size_t i = 0; i < items.size(); ++i) {
      words_.push_back(items[i].first);
      pos_.push_back(items[i].second);
      chunk_.push_back((i == 0 ? "B-" : "I-") + type);
    }
  }

  Item aux() { return chance(0.5) ? Item{"is", "VBZ"} : Item{"was", "VBD"}; }
  Item adverb() { return {lx_.adv.sample(rng_), "RB"}; }
  std::string noun_stem() { return lx_.noun_pick.sample(rng_); }
  std::string verb_stem() { return lx_.verb_pick.sample(rng_); }

  std::vector<Item> noun_phrase(bool subject) {
    std::vector<Item> np;
    if (subject && chance(0.25)) return {{lx_.pron.sample(rng_), "PRP"}};
    if (!subject && chance(0.08)) return {{lx_.pron.sample(rng_), "PRP"}};
    const bool plural = chance(0.35);
    if (plural && chance(0.15)) {
      np.push_back({lx_.number.sample(rng_), "CD"});
    } else if (chance(plural ? 0.6 : 0.9)) {
      np.push_back({(plural ? lx_.det_pl : lx_.det_sg).sample(rng_), "DT"});
    }
    if (chance(0.35)) {
      if (chance(0.2)) np.push_back({lx_.intens.sample(rng_), "RB"});
      np.push_back({lx_.adj.sample(rng_), "JJ"});
      if (chance(0.2)) np.push_back({lx_.adj.sample(rng_), "JJ"});
    }
    if (chance(0.15)) np.push_back({noun_stem(), "NN"});
    if (plural) {
      np.push_back({noun_stem() + "s", "NNS"});
    } else {
      np.push_back({noun_stem(), "NN"});
    }
    return np;
  }

  void np_chunk(bool subject) {
    phrase("NP", noun_phrase(subject));
    if (chance(0.04)) {
      if (chance(0.5)) {
        phrase("CONJP", {{"as", "RB"}, {"well", "RB"}, {"as", "IN"}});
      } else {
        phrase("CONJP", {{"rather", "RB"}, {"than", "IN"}});
      }
      phrase("NP", noun_phrase(false));
    } else if (chance(0.06)) {
      outside(lx_.conj.sample(rng_), "CC");
      phrase("NP", noun_phrase(false));
    }
  }

  void pp_chunk() {
    if (chance(0.1)) {
      if (chance(0.5)) phrase("PP", {{"because", "IN"}, {"of", "IN"}});
      else phrase("PP", {{"out", "IN"}, {"of", "IN"}});
    } else {
      phrase("PP", {{lx_.prep.sample(rng_), "IN"}});
    }
    np_chunk(false);
  }

  void clause(int depth) {
    np_chunk(true);
    const double r = uniform01(rng_);
    bool copula = false;
    if (r < 0.28) {
      phrase("VP", {{verb_stem() + "ed", "VBD"}});
    } else if (r < 0.48) {
      phrase("VP", {{verb_stem() + "s", "VBZ"}});
    } else if (r < 0.62) {
      phrase("VP", {{lx_.modal.sample(rng_), "MD"}, {verb_stem(), "VB"}});
    } else if (r < 0.67) {
      phrase("VP", {{lx_.modal.sample(rng_), "MD"}, adverb(), {verb_stem(), "VB"}});
    } else if (r < 0.77) {
      phrase("VP", {{verb_stem() + "ed", "VBD"}, {"to", "TO"}, {verb_stem(), "VB"}});
    } else if (r < 0.88) {
      phrase("VP", {aux(), {verb_stem() + "ing", "VBG"}});
    } else {
      phrase("VP", {aux()});
      copula = true;
    }
    if (copula) {
      if (chance(0.5)) {
        phrase("ADJP", {{lx_.intens.sample(rng_), "RB"}, {lx_.adj.sample(rng_), "JJ"}});
      } else {
        phrase("ADJP", {{lx_.adj.sample(rng_), "JJ"}});
      }
    } else {
      if (chance(0.1)) phrase("PRT", {{lx_.particle.sample(rng_), "RP"}});
      if (chance(0.65)) {
        np_chunk(false);
        if (chance(0.12)) np_chunk(false);
      }
    }
    const int pps = chance(0.45) ? (chance(0.25) ? 2 : 1) : 0;
    for (int i = 0; i < pps && depth < 2; ++i) pp_chunk();
    if (chance(0.15)) {
      if (chance(0.3)) phrase("ADVP", {{lx_.intens.sample(rng_), "RB"}, adverb()});
      else phrase("ADVP", {adverb()});
    }
  }

  Rng& rng_;
  const Lexicon& lx_;
  std::vector<std::string> words_, pos_, chunk_;
};

Sentence draw(Rng& rng) {
  Emitter e(rng);
  e.sentence();
  return e.finish();
}

}  // namespace

SyntheticCorpus gen_synthetic(std::uint64_t seed, std::size_t n_labeled,
                              std::size_t n_unlabeled) {
  if (n_labeled == 0) throw ContractError("gen_synthetic: need at least one sentence");
  SyntheticCorpus out;
  Rng labeled_rng(mix_seed(seed, 1));
  Rng unlabeled_rng(mix_seed(seed, 2));
  out.labeled.reserve(n_labeled);
  for (std::size_t i = 0; i < n_labeled; ++i) out.labeled.push_back(draw(labeled_rng));
  out.unlabeled.reserve(n_unlabeled);
  for (std::size_t i = 0; i < n_unlabeled; ++i) {
    Sentence s = draw(unlabeled_rng);
    s.pos.reset();
    s.chunk.reset();
    out.unlabeled.push_back(std::move(s));
  }
  return out;
}

SyntheticSplits split_synthetic(SyntheticCorpus corpus) {
  SyntheticSplits s;
  const std::size_t n = corpus.labeled.size();
  const std::size_t n_train = n * 8 / 10;
  const std::size_t n_dev = (n - n_train) / 2;
  auto& l = corpus.labeled;
  s.train.assign(std::make_move_iterator(l.begin()), std::make_move_iterator(l.begin() + n_train));
  s.dev.assign(std::make_move_iterator(l.begin() + n_train),
               std::make_move_iterator(l.begin() + n_train + n_dev));
  s.test.assign(std::make_move_iterator(l.begin() + n_train + n_dev),
                std::make_move_iterator(l.end()));
  s.unlabeled = std::move(corpus.unlabeled);
  return s;
}

}  // namespace hiertag
