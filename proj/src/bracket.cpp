#include "pcfg/bracket.hpp"

#include <cctype>

#include "pcfg/errors.hpp"

namespace pcfg {

void LabeledTree::collect_words(std::vector<std::string> &out) const {
  if (terminal) {
    out.push_back(label);
    return;
  }
  for (const auto &c : children) c.collect_words(out);
}

namespace {

class SexprReader {
 public:
  explicit SexprReader(std::string_view text) : text_(text) {}

  bool at_end() {
    skip_space();
    return pos_ >= text_.size();
  }

  LabeledTree read_tree() {
    skip_space();
    const std::size_t open_at = pos_;
    expect('(');
    LabeledTree node;
    skip_space();
    if (peek() != '(' && peek() != ')') node.label = read_atom();
    for (;;) {
      skip_space();
      if (pos_ >= text_.size())
        throw DataError("unbalanced parentheses: '(' at offset " + std::to_string(open_at) +
                        " is never closed");
      const char c = text_[pos_];
      if (c == ')') {
        ++pos_;
        break;
      }
      if (c == '(') {
        node.children.push_back(read_tree());
      } else {
        LabeledTree leaf;
        leaf.terminal = true;
        leaf.label = read_atom();
        node.children.push_back(std::move(leaf));
      }
    }
    return node;
  }

  std::size_t pos() const { return pos_; }

 private:
  char peek() const { return pos_ < text_.size() ? text_[pos_] : '\0'; }

  void skip_space() {
    while (pos_ < text_.size() && std::isspace(static_cast<unsigned char>(text_[pos_]))) ++pos_;
  }

  void expect(char c) {
    if (peek() != c) {
      throw DataError(std::string("expected '") + c + "' at offset " + std::to_string(pos_) +
                      (c == '(' && peek() == ')' ? " (unbalanced parentheses)" : ""));
    }
    ++pos_;
  }

  std::string read_atom() {
    const std::size_t begin = pos_;
    while (pos_ < text_.size()) {
      const char c = text_[pos_];
      if (c == '(' || c == ')' || std::isspace(static_cast<unsigned char>(c))) break;
      ++pos_;
    }
    if (pos_ == begin) throw DataError("empty atom at offset " + std::to_string(pos_));
    return std::string(text_.substr(begin, pos_ - begin));
  }

  std::string_view text_;
  std::size_t pos_ = 0;
};

}  // namespace

std::vector<LabeledTree> parse_sexpressions(std::string_view text) {
  SexprReader reader(text);
  std::vector<LabeledTree> trees;
  while (!reader.at_end()) {
    LabeledTree t = reader.read_tree();
    while (t.label.empty() && t.children.size() == 1 && !t.children[0].terminal) {
      LabeledTree inner = std::move(t.children[0]);
      t = std::move(inner);
    }
    trees.push_back(std::move(t));
  }
  return trees;
}

std::string to_sexpression(const LabeledTree &tree) {
  if (tree.terminal) return tree.label;
  std::string out = "(" + tree.label;
  for (const auto &c : tree.children) {
    out += ' ';
    out += to_sexpression(c);
  }
  out += ')';
  return out;
}

}  // namespace pcfg
