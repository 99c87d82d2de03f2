#pragma once

#include <string>
#include <string_view>
#include <vector>

namespace pcfg {

// N-ary labelled tree as read from Penn-style s-expressions. Terminals are
// nodes with `terminal == true` and the word stored in `label`.
struct LabeledTree {
  std::string label;
  std::vector<LabeledTree> children;
  bool terminal = false;

  bool is_preterminal() const { return children.size() == 1 && children[0].terminal; }
  void collect_words(std::vector<std::string> &out) const;
};

// Parses every top-level tree in `text`. A tree with an empty root label and
// a single child, as in `( (S ...) )`, is unwrapped. Throws DataError with
// the byte offset on unbalanced input.
std::vector<LabeledTree> parse_sexpressions(std::string_view text);

std::string to_sexpression(const LabeledTree &tree);

}  // namespace pcfg
