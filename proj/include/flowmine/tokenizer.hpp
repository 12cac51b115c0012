#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <optional>
#include <span>
#include <sstream>
#include <string>
#include <unordered_map>
#include <vector>

#include "flowmine/error.hpp"
#include "flowmine/message.hpp"
#include "flowmine/random.hpp"
#include "flowmine/trace.hpp"

namespace flowmine {

using TokenId = int;

inline constexpr TokenId kPad = 0;
inline constexpr TokenId kMask = 1;
inline constexpr TokenId kUnk = 2;
inline constexpr TokenId kFirstMessageToken = 3;
/// Label value for positions that carry no training signal.
inline constexpr TokenId kIgnore = -100;

/// Dense bijection between unique messages and token ids 3..V-1.
class MessageVocab {
 public:
  MessageVocab() = default;

  explicit MessageVocab(std::vector<Message> messages) : messages_(std::move(messages)) {
    for (std::size_t i = 0; i < messages_.size(); ++i) {
      if (!ids_.emplace(messages_[i], kFirstMessageToken + static_cast<TokenId>(i)).second)
        throw data_error("duplicate vocabulary entry " + messages_[i].str());
    }
  }

  /// V, including the three special tokens.
  std::size_t size() const { return messages_.size() + kFirstMessageToken; }
  std::size_t message_count() const { return messages_.size(); }
  const std::vector<Message>& messages() const { return messages_; }

  std::optional<TokenId> id_of(const Message& m) const {
    auto it = ids_.find(m);
    if (it == ids_.end()) return std::nullopt;
    return it->second;
  }

  TokenId id_or_unk(const Message& m) const { return id_of(m).value_or(kUnk); }

  bool is_message_token(TokenId id) const {
    return id >= kFirstMessageToken && static_cast<std::size_t>(id) < size();
  }

  const Message& message_of(TokenId id) const {
    if (!is_message_token(id)) throw data_error("token " + std::to_string(id) + " is not a message");
    return messages_[static_cast<std::size_t>(id - kFirstMessageToken)];
  }

  bool operator==(const MessageVocab& o) const { return messages_ == o.messages_; }

 private:
  std::vector<Message> messages_;
  std::unordered_map<Message, TokenId> ids_;
};

/// Message tokens in order of first appearance; messages sharing a step are
/// visited in canonical order.
inline MessageVocab build_vocab(const TraceSet& ts) {
  std::vector<Message> order;
  std::unordered_map<Message, bool> seen;
  for (const auto& t : ts) {
    for (const auto& step : t.steps) {
      Step sorted = step;
      std::sort(sorted.begin(), sorted.end());
      for (auto& m : sorted)
        if (seen.emplace(m, true).second) order.push_back(m);
    }
  }
  if (order.empty()) throw data_error("cannot build a vocabulary from an empty trace set");
  return MessageVocab(std::move(order));
}

inline std::string render_vocab(const MessageVocab& v) {
  std::string out = "0\t<PAD>\n1\t<MASK>\n2\t<UNK>\n";
  for (std::size_t i = 0; i < v.message_count(); ++i)
    out += std::to_string(i + kFirstMessageToken) + '\t' + v.messages()[i].str() + '\n';
  return out;
}

inline MessageVocab parse_vocab(const std::string& text) {
  std::istringstream in(text);
  std::string line;
  std::vector<Message> messages;
  TokenId expect = 0;
  static const std::array<const char*, 3> specials{"<PAD>", "<MASK>", "<UNK>"};
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    const auto tab = line.find('\t');
    if (tab == std::string::npos) throw data_error("vocab line without tab: " + line);
    const auto id = std::stoi(line.substr(0, tab));
    const auto body = line.substr(tab + 1);
    if (id != expect) throw data_error("vocab ids not dense at " + std::to_string(id));
    if (id < kFirstMessageToken) {
      if (body != specials[static_cast<std::size_t>(id)])
        throw data_error("vocab special token " + std::to_string(id) + " is '" + body + "'");
    } else {
      messages.push_back(parse_message(body));
    }
    ++expect;
  }
  if (expect < kFirstMessageToken) throw data_error("vocab file missing special tokens");
  return MessageVocab(std::move(messages));
}

inline std::uint64_t vocab_hash(const MessageVocab& v) { return fnv1a64(render_vocab(v)); }

/// Flattens a trace to token ids; a multi-message step is emitted in ascending id order.
inline std::vector<TokenId> linearize(const Trace& t, const MessageVocab& v) {
  std::vector<TokenId> out;
  out.reserve(t.message_count());
  for (const auto& step : t.steps) {
    const auto first = out.size();
    for (const auto& m : step) out.push_back(v.id_or_unk(m));
    std::sort(out.begin() + static_cast<long>(first), out.end());
  }
  return out;
}

/// Number of windows a sequence of length `len` yields.
inline std::size_t window_count(std::size_t len, std::size_t max_len, std::size_t stride) {
  if (len <= max_len) return 1;
  return (len - max_len + stride - 1) / stride + 1;
}

/// Cuts each linearized trace into overlapping windows of at most max_len tokens.
/// With `prefixes` set, every window is preceded by its own leading prefixes
/// (lengths 2 .. n-1), so sequences that stop mid-flow are part of the corpus.
inline std::vector<std::vector<TokenId>> window_traces(const TraceSet& ts, const MessageVocab& v,
                                                       std::size_t max_len, std::size_t stride,
                                                       bool prefixes = false) {
  if (max_len < 2) throw usage_error("window max_len must be >= 2");
  if (stride < 1 || stride > max_len) throw usage_error("window stride must be in [1, max_len]");
  std::vector<std::vector<TokenId>> out;
  for (const auto& t : ts) {
    const auto seq = linearize(t, v);
    const auto n = window_count(seq.size(), max_len, stride);
    for (std::size_t w = 0; w < n; ++w) {
      const auto begin = w * stride;
      const auto end = std::min(seq.size(), begin + max_len);
      if (prefixes)
        for (auto cut = begin + 2; cut < end; ++cut)
          out.emplace_back(seq.begin() + static_cast<long>(begin), seq.begin() + static_cast<long>(cut));
      out.emplace_back(seq.begin() + static_cast<long>(begin), seq.begin() + static_cast<long>(end));
    }
  }
  return out;
}

struct MaskConfig {
  double rate = 0.30;
  // replace with MASK / replace with a random message / keep
  std::array<double, 3> split{0.8, 0.1, 0.1};
  // Always replace the final real token with MASK; `rate` covers the rest.
  bool mask_last = false;
  std::uint64_t seed = 0;
};

inline void check(const MaskConfig& mc) {
  if (!(mc.rate >= 0.0 && mc.rate <= 1.0)) throw usage_error("mask.rate must be in [0, 1]");
  double sum = 0.0;
  for (double p : mc.split) {
    if (!(p >= 0.0 && p <= 1.0)) throw usage_error("mask.split entries must be in [0, 1]");
    sum += p;
  }
  if (std::abs(sum - 1.0) > 1e-9) throw usage_error("mask.split must sum to 1");
}

struct TrainSequence {
  std::vector<TokenId> input_ids;
  std::vector<std::uint8_t> attention;  // 1 = real token
  std::vector<TokenId> labels;          // original id where selected, kIgnore elsewhere

  /// Index one past the last real token.
  std::size_t length() const {
    std::size_t n = attention.size();
    while (n > 0 && attention[n - 1] == 0) --n;
    return n;
  }
};

/// Selects each real position with probability mc.rate and corrupts it per
/// mc.split. With mc.mask_last the final real position is always selected and
/// masked. Output is right-padded to max_len.
inline std::vector<TrainSequence> mask_batch(std::span<const std::vector<TokenId>> seqs,
                                             const MessageVocab& vocab, const MaskConfig& mc,
                                             std::size_t max_len) {
  check(mc);
  Rng rng(mc.seed);
  const auto n_messages = vocab.message_count();
  std::vector<TrainSequence> out;
  out.reserve(seqs.size());
  for (const auto& seq : seqs) {
    if (seq.size() > max_len)
      throw usage_error("sequence of length " + std::to_string(seq.size()) +
                        " exceeds max_len " + std::to_string(max_len));
    TrainSequence ts;
    ts.input_ids.assign(max_len, kPad);
    ts.attention.assign(max_len, 0);
    ts.labels.assign(max_len, kIgnore);
    for (std::size_t i = 0; i < seq.size(); ++i) {
      const auto tok = seq[i];
      if (!vocab.is_message_token(tok))
        throw usage_error("mask_batch input holds non-message token " + std::to_string(tok));
      ts.input_ids[i] = tok;
      ts.attention[i] = 1;
      if (mc.mask_last && i + 1 == seq.size()) {
        ts.input_ids[i] = kMask;
        ts.labels[i] = tok;
        continue;
      }
      if (!rng.bernoulli(mc.rate)) continue;
      ts.labels[i] = tok;
      const double r = rng.uniform01();
      if (r < mc.split[0]) {
        ts.input_ids[i] = kMask;
      } else if (r < mc.split[0] + mc.split[1]) {
        ts.input_ids[i] = kFirstMessageToken + static_cast<TokenId>(rng.uniform_below(n_messages));
      }
    }
    out.push_back(std::move(ts));
  }
  return out;
}

}  // namespace flowmine
