#pragma once

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "ctcdrive/synthdata/corpus.hpp"

namespace ctcdrive::data {

static_assert(std::endian::native == std::endian::little, "corpus I/O assumes a little-endian host");

class CorpusError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

inline constexpr char kCorpusMagic[8] = {'C', 'T', 'C', 'D', 'C', 'O', 'R', 'P'};
inline constexpr std::uint32_t kCorpusVersion = 1;

/// Layout (little-endian):
///   8-byte magic, u32 version, u32 config byte count, config as key=value lines,
///   u32 sample count, then per sample:
///   u32 split, u32 bucket, u32 U, u32 L, u16 tokens[U], u16 durations[U],
///   f32 audio[L*F], f32 visual[L*F].
inline void save_corpus(const Corpus& corpus, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw CorpusError("cannot open " + path + " for writing");
  auto put32 = [&out](std::uint32_t v) { out.write(reinterpret_cast<const char*>(&v), sizeof v); };
  std::ostringstream echo;
  for (const auto& [k, v] : corpus.config.to_kv()) echo << k << '=' << v << '\n';
  const std::string text = echo.str();
  out.write(kCorpusMagic, sizeof kCorpusMagic);
  put32(kCorpusVersion);
  put32(static_cast<std::uint32_t>(text.size()));
  out.write(text.data(), static_cast<std::streamsize>(text.size()));
  put32(static_cast<std::uint32_t>(corpus.samples.size()));
  for (const auto& s : corpus.samples) {
    put32(static_cast<std::uint32_t>(s.split));
    put32(s.bucket);
    put32(static_cast<std::uint32_t>(s.tokens.size()));
    put32(static_cast<std::uint32_t>(s.frames()));
    std::vector<std::uint16_t> shorts;
    for (int t : s.tokens) shorts.push_back(static_cast<std::uint16_t>(t));
    for (int d : s.durations) shorts.push_back(static_cast<std::uint16_t>(d));
    out.write(reinterpret_cast<const char*>(shorts.data()), static_cast<std::streamsize>(shorts.size() * 2));
    out.write(reinterpret_cast<const char*>(s.audio.data()), static_cast<std::streamsize>(s.audio.size() * 4));
    out.write(reinterpret_cast<const char*>(s.visual.data()), static_cast<std::streamsize>(s.visual.size() * 4));
  }
  if (!out) throw CorpusError("write failed for " + path);
}

inline Corpus load_corpus(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw CorpusError("cannot open corpus " + path);
  auto read = [&](void* dst, std::size_t n) {
    in.read(static_cast<char*>(dst), static_cast<std::streamsize>(n));
    if (!in) throw CorpusError(path + ": truncated corpus file");
  };
  auto get32 = [&] {
    std::uint32_t v;
    read(&v, sizeof v);
    return v;
  };
  char magic[8];
  read(magic, sizeof magic);
  if (std::memcmp(magic, kCorpusMagic, sizeof magic) != 0) throw CorpusError(path + ": not a corpus file");
  if (get32() != kCorpusVersion) throw CorpusError(path + ": unsupported corpus version");
  std::string text(get32(), '\0');
  read(text.data(), text.size());
  Corpus corpus;
  std::istringstream lines(text);
  for (std::string line; std::getline(lines, line);) {
    const auto eq = line.find('=');
    if (eq == std::string::npos || !corpus.config.set(line.substr(0, eq), line.substr(eq + 1))) {
      throw CorpusError(path + ": bad config line '" + line + "'");
    }
  }
  corpus.config.validate();
  const auto F = static_cast<std::size_t>(corpus.config.frame_dim);
  const std::uint32_t n = get32();
  corpus.samples.reserve(n);
  for (std::uint32_t i = 0; i < n; ++i) {
    Sample s;
    const std::uint32_t split = get32();
    if (split > 3) throw CorpusError(path + ": bad split tag");
    s.split = static_cast<Split>(split);
    s.bucket = get32();
    const std::uint32_t U = get32(), L = get32();
    std::vector<std::uint16_t> shorts(2 * static_cast<std::size_t>(U));
    read(shorts.data(), shorts.size() * 2);
    s.tokens.assign(shorts.begin(), shorts.begin() + U);
    s.durations.assign(shorts.begin() + U, shorts.end());
    if (static_cast<std::uint32_t>(s.frames()) != L) throw CorpusError(path + ": durations disagree with frame count");
    for (int t : s.tokens) {
      if (t >= corpus.config.content_vocab) throw CorpusError(path + ": token id out of range");
    }
    s.audio.resize(L * F);
    s.visual.resize(L * F);
    read(s.audio.data(), s.audio.size() * 4);
    read(s.visual.data(), s.visual.size() * 4);
    corpus.samples.push_back(std::move(s));
  }
  if (in.peek() != std::char_traits<char>::eof()) throw CorpusError(path + ": trailing bytes after last sample");
  return corpus;
}

}  // namespace ctcdrive::data
