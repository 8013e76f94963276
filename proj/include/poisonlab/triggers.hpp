#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <variant>
#include <vector>

#include "poisonlab/corpus.hpp"

namespace poisonlab {

// Visible surface trigger: one out-of-corpus token inserted into the text.
struct RareWordInsertion {
  std::string trigger_token;
  enum class Position { Front, SeededRandom };
  Position position = Position::Front;
};

// Distributed proxy trigger: a filler token is inserted after every `stride`
// original tokens, shifting the density of a handful of common words rather
// than adding any single telltale token.
struct CommonWordInjection {
  std::vector<std::string> filler_tokens;
  int stride = 2;  // >= 2
};

// Distributed proxy trigger: every occurrence of a lexicon key is replaced by
// its (rarer) value. Signal strength varies with how many keys a sample hits.
struct SynonymSubstitution {
  std::map<std::string, std::string> lexicon;  // keys and values disjoint
};

struct TriggerSpec {
  std::variant<RareWordInsertion, CommonWordInjection, SynonymSubstitution> variant;
  std::uint64_t seed = 0;

  std::string name() const;  // "rare_word_insertion" etc.
  // Locally checkable invariants (stride bound, disjoint lexicon, non-empty
  // fields). Corpus-relative invariants are checked where a corpus is at hand.
  void validate() const;
};

// Returns a new Sample with provenance poison(sample.id), transformed tokens,
// and the label copied unchanged; relabeling is the poison plan's job.
// Deterministic in (sample.id, trigger.seed). Input must have clean
// provenance.
Sample apply_trigger(const Sample& sample, const TriggerSpec& trigger);

// Best-effort detector used by tests and diagnostics. Reliable for
// RareWordInsertion; for CommonWordInjection assumes filler tokens are rare
// in clean text; heuristic for SynonymSubstitution.
bool is_triggered(const Sample& sample, const TriggerSpec& trigger);

}  // namespace poisonlab
