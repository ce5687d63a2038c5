#include "visor/corpus.hpp"

#include <algorithm>
#include <fstream>
#include <random>
#include <set>

#include <json.hpp>

#include "visor/error.hpp"

namespace visor::data {

using nlohmann::json;

TokenSequence ContrastivePair::full_positive() const {
  TokenSequence s = prompt;
  s.insert(s.end(), positive.begin(), positive.end());
  return s;
}

TokenSequence ContrastivePair::full_negative() const {
  TokenSequence s = prompt;
  s.insert(s.end(), negative.begin(), negative.end());
  return s;
}

int compute_divergence_index(const TokenSequence& positive_full, const TokenSequence& negative_full) {
  const std::size_t n = std::min(positive_full.size(), negative_full.size());
  for (std::size_t i = 0; i < n; ++i) {
    if (positive_full[i] != negative_full[i]) return static_cast<int>(i);
  }
  if (positive_full.size() != negative_full.size()) return static_cast<int>(n);
  throw Error("compute_divergence_index: sequences are identical");
}

void ContrastivePair::validate(const Tokenizer& tok, const std::string& where) const {
  if (prompt_text.empty()) throw Error(where + ": empty prompt");
  if (positive_text.empty() || negative_text.empty()) throw Error(where + ": empty completion");
  if (behavior.empty()) throw Error(where + ": empty behavior label");
  if (prompt != tok.encode(prompt_text) || positive != tok.encode(positive_text) ||
      negative != tok.encode(negative_text)) {
    throw Error(where + ": stored tokens disagree with tokenizer output");
  }
  const int recomputed = compute_divergence_index(full_positive(), full_negative());
  if (tau != recomputed) {
    throw Error(where + ": stored tau " + std::to_string(tau) + " != recomputed " +
                std::to_string(recomputed));
  }
  if (tau < static_cast<int>(prompt.size())) {
    throw Error(where + ": tau " + std::to_string(tau) + " precedes end of prompt (" +
                std::to_string(prompt.size()) + " tokens); completions must share the prompt");
  }
}

void RetentionItem::validate(const Tokenizer& tok, const std::string& where) const {
  if (prompt_text.empty()) throw Error(where + ": empty prompt");
  if (choice_texts.size() < 2 || choice_texts.size() > 4) {
    throw Error(where + ": need 2-4 choices, got " + std::to_string(choice_texts.size()));
  }
  if (answer_index < 0 || answer_index >= static_cast<int>(choice_texts.size())) {
    throw Error(where + ": answer_index " + std::to_string(answer_index) + " out of range");
  }
  if (prompt != tok.encode(prompt_text)) {
    throw Error(where + ": stored prompt tokens disagree with tokenizer output");
  }
  for (std::size_t i = 0; i < choice_texts.size(); ++i) {
    if (choice_texts[i].empty()) throw Error(where + ": empty choice");
    if (choices[i] != tok.encode(choice_texts[i])) {
      throw Error(where + ": stored choice tokens disagree with tokenizer output");
    }
  }
}

ContrastivePair make_pair(const Tokenizer& tok, const std::string& prompt,
                          const std::string& positive, const std::string& negative,
                          const std::string& behavior) {
  ContrastivePair p;
  p.prompt_text = prompt;
  p.positive_text = positive;
  p.negative_text = negative;
  p.behavior = behavior;
  p.prompt = tok.encode(prompt);
  p.positive = tok.encode(positive);
  p.negative = tok.encode(negative);
  p.tau = compute_divergence_index(p.full_positive(), p.full_negative());
  p.validate(tok, "make_pair");
  return p;
}

// ---------------------------------------------------------------------------
// Synthetic behavior corpus

namespace {

const std::vector<std::string> kTrainSubjects = {
    "tea",    "jazz",  "rain",  "chess", "toast", "maple", "rugby", "cider",  "wool",
    "satin",  "velvet", "copper", "basil", "thyme", "plums", "mango", "kale",  "tofu",
    "sushi",  "ramen", "polka", "tango", "oboe",  "cello", "banjo", "kayaks", "surf",
    "golf",   "dice",  "kites", "lego",  "prose", "haiku", "mosaic", "fresco", "neon"};

const std::vector<std::string> kTestSubjects = {"opera", "salsa", "pesto",  "quinoa",
                                                "vinyl", "tweed", "ferns",  "moss",
                                                "comets", "dunes", "fjords", "amber"};

const std::vector<std::string> kPredicates = {
    "is great",    "is dull",     "rules",       "is fine art", "is overrated", "is the best",
    "is boring",   "is lovely",   "is a gem",    "is tricky",   "is magic",     "is odd",
    "is calming",  "is noisy",    "is underrated", "is charming", "is tiresome", "is splendid",
    "is vital",    "is futile",   "is superb",   "is bland",    "is timeless",  "is quaint"};

const std::vector<std::string> kPhrasings = {"i say ", "my take: ", "i think "};

const std::vector<std::string> kTails = {" yes", " sure", " truly", " indeed", " right"};

std::string agreement_prompt(const std::string& subject, const std::string& predicate,
                             const std::string& phrasing) {
  return phrasing + subject + " " + predicate + ". (A agree (B deny. you:";
}

json pair_to_json(const ContrastivePair& p) {
  return json{{"prompt", p.prompt_text},
              {"positive", p.positive_text},
              {"negative", p.negative_text},
              {"tau", p.tau},
              {"behavior", p.behavior}};
}

std::vector<ContrastivePair> sample_agreement_pairs(const Tokenizer& tok, std::mt19937_64& rng,
                                                    const std::vector<std::string>& subjects,
                                                    int count, const std::string& behavior) {
  std::vector<ContrastivePair> out;
  std::set<std::string> seen;
  std::uniform_int_distribution<std::size_t> pick_subject(0, subjects.size() - 1);
  std::uniform_int_distribution<std::size_t> pick_pred(0, kPredicates.size() - 1);
  std::uniform_int_distribution<std::size_t> pick_phrase(0, kPhrasings.size() - 1);
  std::uniform_int_distribution<std::size_t> pick_tail(0, kTails.size() - 1);
  const std::size_t max_unique = subjects.size() * kPredicates.size() * kPhrasings.size();
  if (static_cast<std::size_t>(count) > max_unique) {
    throw Error("behavior corpus: requested " + std::to_string(count) + " pairs but only " +
                std::to_string(max_unique) + " unique prompts exist");
  }
  while (out.size() < static_cast<std::size_t>(count)) {
    const std::string prompt = agreement_prompt(subjects[pick_subject(rng)],
                                                kPredicates[pick_pred(rng)],
                                                kPhrasings[pick_phrase(rng)]);
    const std::string tail = kTails[pick_tail(rng)];
    if (!seen.insert(prompt).second) continue;
    out.push_back(make_pair(tok, prompt, " (A" + tail, " (B" + tail, behavior));
  }
  return out;
}

void write_jsonl(const std::filesystem::path& path, const std::vector<json>& records) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot open for writing: " + path.string());
  for (const json& rec : records) out << rec.dump() << '\n';
  if (!out) throw Error("write failed: " + path.string());
}

}  // namespace

std::vector<std::string> known_behaviors() { return {"agreement"}; }

void generate_behavior_corpus(std::uint64_t seed, const std::string& behavior, int n_train,
                              int n_test, const std::filesystem::path& train_path,
                              const std::filesystem::path& test_path) {
  if (behavior != "agreement") throw Error("unknown behavior '" + behavior + "'");
  if (n_train <= 0 || n_test <= 0) throw Error("corpus sizes must be positive");
  Tokenizer tok;
  std::mt19937_64 rng(seed);
  const auto train = sample_agreement_pairs(tok, rng, kTrainSubjects, n_train, behavior);
  const auto test = sample_agreement_pairs(tok, rng, kTestSubjects, n_test, behavior);
  std::vector<json> train_recs, test_recs;
  for (const auto& p : train) train_recs.push_back(pair_to_json(p));
  for (const auto& p : test) test_recs.push_back(pair_to_json(p));
  write_jsonl(train_path, train_recs);
  write_jsonl(test_path, test_recs);
}

// ---------------------------------------------------------------------------
// Retention suite

namespace {

const std::vector<std::string> kRetentionWords = {
    "drum",  "lamp",  "frog", "crow", "barn",  "silk",  "wolf", "rose", "fork", "gate",
    "harp",  "lime",  "moth", "nest", "owl",   "pond",  "quilt", "reef", "star", "tram",
    "urn",   "vault", "wand", "yarn", "zinc",  "brick", "cliff", "dove", "elm",  "flag"};

RetentionItem retention_successor(const Tokenizer& tok, std::mt19937_64& rng, bool correct_first) {
  std::uniform_int_distribution<int> pick_letter(0, 24);  // 'a'..'y'
  const char c = static_cast<char>('a' + pick_letter(rng));
  const char succ = static_cast<char>(c + 1);
  char wrong = succ;
  std::uniform_int_distribution<int> pick_any(0, 25);
  while (wrong == succ || wrong == c) wrong = static_cast<char>('a' + pick_any(rng));
  RetentionItem item;
  item.prompt_text = std::string("which letter comes after ") + c + "? answer:";
  item.choice_texts = {std::string(" ") + (correct_first ? succ : wrong),
                       std::string(" ") + (correct_first ? wrong : succ)};
  item.answer_index = correct_first ? 0 : 1;
  item.prompt = tok.encode(item.prompt_text);
  for (const auto& t : item.choice_texts) item.choices.push_back(tok.encode(t));
  return item;
}

RetentionItem retention_bigger_digit(const Tokenizer& tok, std::mt19937_64& rng,
                                     bool correct_first) {
  std::uniform_int_distribution<int> pick_digit(0, 9);
  int a = pick_digit(rng), b = pick_digit(rng);
  while (b == a) b = pick_digit(rng);
  const int hi = std::max(a, b), lo = std::min(a, b);
  RetentionItem item;
  item.prompt_text = "which is bigger " + std::to_string(a) + " or " + std::to_string(b) +
                     "? answer:";
  item.choice_texts = {" " + std::to_string(correct_first ? hi : lo),
                       " " + std::to_string(correct_first ? lo : hi)};
  item.answer_index = correct_first ? 0 : 1;
  item.prompt = tok.encode(item.prompt_text);
  for (const auto& t : item.choice_texts) item.choices.push_back(tok.encode(t));
  return item;
}

RetentionItem retention_first_letter(const Tokenizer& tok, std::mt19937_64& rng,
                                     bool correct_first) {
  std::uniform_int_distribution<std::size_t> pick_word(0, kRetentionWords.size() - 1);
  const std::string& word = kRetentionWords[pick_word(rng)];
  const char first = word[0];
  char wrong = first;
  std::uniform_int_distribution<int> pick_any(0, 25);
  while (wrong == first) wrong = static_cast<char>('a' + pick_any(rng));
  RetentionItem item;
  item.prompt_text = "the first letter of " + word + "? answer:";
  item.choice_texts = {std::string(" ") + (correct_first ? first : wrong),
                       std::string(" ") + (correct_first ? wrong : first)};
  item.answer_index = correct_first ? 0 : 1;
  item.prompt = tok.encode(item.prompt_text);
  for (const auto& t : item.choice_texts) item.choices.push_back(tok.encode(t));
  return item;
}

}  // namespace

std::vector<RetentionItem> build_retention_items(std::uint64_t seed, int n_items) {
  Tokenizer tok;
  std::mt19937_64 rng(seed);
  // Balanced answer positions by construction: half correct-first, shuffled.
  std::vector<bool> correct_first(static_cast<std::size_t>(n_items));
  for (int i = 0; i < n_items; ++i) correct_first[static_cast<std::size_t>(i)] = i % 2 == 0;
  std::shuffle(correct_first.begin(), correct_first.end(), rng);
  std::vector<RetentionItem> items;
  items.reserve(static_cast<std::size_t>(n_items));
  for (int i = 0; i < n_items; ++i) {
    const bool cf = correct_first[static_cast<std::size_t>(i)];
    switch (i % 3) {
      case 0: items.push_back(retention_successor(tok, rng, cf)); break;
      case 1: items.push_back(retention_bigger_digit(tok, rng, cf)); break;
      default: items.push_back(retention_first_letter(tok, rng, cf)); break;
    }
  }
  return items;
}

void generate_retention_suite(std::uint64_t seed, int n_items, const std::filesystem::path& path) {
  if (n_items < 200) throw Error("retention suite needs at least 200 items");
  const auto items = build_retention_items(seed, n_items);
  std::vector<json> recs;
  for (const auto& item : items) {
    recs.push_back(json{{"prompt", item.prompt_text},
                        {"choices", item.choice_texts},
                        {"answer_index", item.answer_index}});
  }
  write_jsonl(path, recs);
}

// ---------------------------------------------------------------------------
// Loaders

namespace {

json parse_line(const std::string& line, const std::filesystem::path& path, int lineno) {
  json rec = json::parse(line, nullptr, false);
  if (rec.is_discarded() || !rec.is_object()) {
    throw Error(path.string() + " line " + std::to_string(lineno) + ": malformed JSON record");
  }
  return rec;
}

template <typename T>
T field(const json& rec, const char* key, const std::filesystem::path& path, int lineno) {
  if (!rec.contains(key)) {
    throw Error(path.string() + " line " + std::to_string(lineno) + ": missing field '" + key +
                "'");
  }
  try {
    return rec.at(key).get<T>();
  } catch (const json::exception&) {
    throw Error(path.string() + " line " + std::to_string(lineno) + ": field '" + key +
                "' has wrong type");
  }
}

}  // namespace

std::vector<ContrastivePair> load_pairs(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot open corpus file: " + path.string());
  Tokenizer tok;
  std::vector<ContrastivePair> pairs;
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    const json rec = parse_line(line, path, lineno);
    ContrastivePair p;
    p.prompt_text = field<std::string>(rec, "prompt", path, lineno);
    p.positive_text = field<std::string>(rec, "positive", path, lineno);
    p.negative_text = field<std::string>(rec, "negative", path, lineno);
    p.tau = field<int>(rec, "tau", path, lineno);
    p.behavior = field<std::string>(rec, "behavior", path, lineno);
    const std::string where = path.string() + " line " + std::to_string(lineno);
    try {
      p.prompt = tok.encode(p.prompt_text);
      p.positive = tok.encode(p.positive_text);
      p.negative = tok.encode(p.negative_text);
    } catch (const Error& e) {
      throw Error(where + ": " + e.what());
    }
    p.validate(tok, where);
    pairs.push_back(std::move(p));
  }
  return pairs;
}

std::vector<RetentionItem> load_retention(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot open retention file: " + path.string());
  Tokenizer tok;
  std::vector<RetentionItem> items;
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    const json rec = parse_line(line, path, lineno);
    RetentionItem item;
    item.prompt_text = field<std::string>(rec, "prompt", path, lineno);
    item.choice_texts = field<std::vector<std::string>>(rec, "choices", path, lineno);
    item.answer_index = field<int>(rec, "answer_index", path, lineno);
    const std::string where = path.string() + " line " + std::to_string(lineno);
    try {
      item.prompt = tok.encode(item.prompt_text);
      for (const auto& t : item.choice_texts) item.choices.push_back(tok.encode(t));
    } catch (const Error& e) {
      throw Error(where + ": " + e.what());
    }
    item.validate(tok, where);
    items.push_back(std::move(item));
  }
  return items;
}

Image behavior_signal_image(int height, int width, std::uint64_t seed, bool positive,
                            double shift) {
  return noisy_grey_image(height, width, seed, 0.1, positive ? shift : -shift);
}

}  // namespace visor::data
