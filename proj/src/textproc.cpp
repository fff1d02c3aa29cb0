#include "biembed/textproc.hpp"

#include <algorithm>
#include <map>
#include <stdexcept>

#include "biembed/util.hpp"

namespace biembed {

namespace {

// --- minimal Unicode handling for the Latin repertoire --------------------

struct ComposePair {
  std::uint32_t base;
  std::uint32_t mark;
  std::uint32_t composed;
};

// Canonical composition (base letter + single combining mark) for A-Z/a-z,
// generated from the Unicode character database. Covers the Latin-1 and
// Latin Extended blocks used by Turkish and Western European text.
constexpr ComposePair kCompose[] = {
    {0x0041, 0x0300, 0x00C0}, {0x0041, 0x0301, 0x00C1}, {0x0041, 0x0302, 0x00C2}, {0x0041, 0x0303, 0x00C3}, {0x0041, 0x0304, 0x0100},
    {0x0041, 0x0306, 0x0102}, {0x0041, 0x0307, 0x0226}, {0x0041, 0x0308, 0x00C4}, {0x0041, 0x030A, 0x00C5}, {0x0041, 0x030C, 0x01CD},
    {0x0041, 0x0328, 0x0104}, {0x0042, 0x0307, 0x1E02}, {0x0043, 0x0301, 0x0106}, {0x0043, 0x0302, 0x0108}, {0x0043, 0x0307, 0x010A},
    {0x0043, 0x030C, 0x010C}, {0x0043, 0x0327, 0x00C7}, {0x0044, 0x0307, 0x1E0A}, {0x0044, 0x030C, 0x010E}, {0x0044, 0x0327, 0x1E10},
    {0x0045, 0x0300, 0x00C8}, {0x0045, 0x0301, 0x00C9}, {0x0045, 0x0302, 0x00CA}, {0x0045, 0x0303, 0x1EBC}, {0x0045, 0x0304, 0x0112},
    {0x0045, 0x0306, 0x0114}, {0x0045, 0x0307, 0x0116}, {0x0045, 0x0308, 0x00CB}, {0x0045, 0x030C, 0x011A}, {0x0045, 0x0327, 0x0228},
    {0x0045, 0x0328, 0x0118}, {0x0046, 0x0307, 0x1E1E}, {0x0047, 0x0301, 0x01F4}, {0x0047, 0x0302, 0x011C}, {0x0047, 0x0304, 0x1E20},
    {0x0047, 0x0306, 0x011E}, {0x0047, 0x0307, 0x0120}, {0x0047, 0x030C, 0x01E6}, {0x0047, 0x0327, 0x0122}, {0x0048, 0x0302, 0x0124},
    {0x0048, 0x0307, 0x1E22}, {0x0048, 0x0308, 0x1E26}, {0x0048, 0x030C, 0x021E}, {0x0048, 0x0327, 0x1E28}, {0x0049, 0x0300, 0x00CC},
    {0x0049, 0x0301, 0x00CD}, {0x0049, 0x0302, 0x00CE}, {0x0049, 0x0303, 0x0128}, {0x0049, 0x0304, 0x012A}, {0x0049, 0x0306, 0x012C},
    {0x0049, 0x0307, 0x0130}, {0x0049, 0x0308, 0x00CF}, {0x0049, 0x030C, 0x01CF}, {0x0049, 0x0328, 0x012E}, {0x004A, 0x0302, 0x0134},
    {0x004B, 0x0301, 0x1E30}, {0x004B, 0x030C, 0x01E8}, {0x004B, 0x0327, 0x0136}, {0x004C, 0x0301, 0x0139}, {0x004C, 0x030C, 0x013D},
    {0x004C, 0x0327, 0x013B}, {0x004D, 0x0301, 0x1E3E}, {0x004D, 0x0307, 0x1E40}, {0x004E, 0x0300, 0x01F8}, {0x004E, 0x0301, 0x0143},
    {0x004E, 0x0303, 0x00D1}, {0x004E, 0x0307, 0x1E44}, {0x004E, 0x030C, 0x0147}, {0x004E, 0x0327, 0x0145}, {0x004F, 0x0300, 0x00D2},
    {0x004F, 0x0301, 0x00D3}, {0x004F, 0x0302, 0x00D4}, {0x004F, 0x0303, 0x00D5}, {0x004F, 0x0304, 0x014C}, {0x004F, 0x0306, 0x014E},
    {0x004F, 0x0307, 0x022E}, {0x004F, 0x0308, 0x00D6}, {0x004F, 0x030B, 0x0150}, {0x004F, 0x030C, 0x01D1}, {0x004F, 0x0328, 0x01EA},
    {0x0050, 0x0301, 0x1E54}, {0x0050, 0x0307, 0x1E56}, {0x0052, 0x0301, 0x0154}, {0x0052, 0x0307, 0x1E58}, {0x0052, 0x030C, 0x0158},
    {0x0052, 0x0327, 0x0156}, {0x0053, 0x0301, 0x015A}, {0x0053, 0x0302, 0x015C}, {0x0053, 0x0307, 0x1E60}, {0x0053, 0x030C, 0x0160},
    {0x0053, 0x0327, 0x015E}, {0x0054, 0x0307, 0x1E6A}, {0x0054, 0x030C, 0x0164}, {0x0054, 0x0327, 0x0162}, {0x0055, 0x0300, 0x00D9},
    {0x0055, 0x0301, 0x00DA}, {0x0055, 0x0302, 0x00DB}, {0x0055, 0x0303, 0x0168}, {0x0055, 0x0304, 0x016A}, {0x0055, 0x0306, 0x016C},
    {0x0055, 0x0308, 0x00DC}, {0x0055, 0x030A, 0x016E}, {0x0055, 0x030B, 0x0170}, {0x0055, 0x030C, 0x01D3}, {0x0055, 0x0328, 0x0172},
    {0x0056, 0x0303, 0x1E7C}, {0x0057, 0x0300, 0x1E80}, {0x0057, 0x0301, 0x1E82}, {0x0057, 0x0302, 0x0174}, {0x0057, 0x0307, 0x1E86},
    {0x0057, 0x0308, 0x1E84}, {0x0058, 0x0307, 0x1E8A}, {0x0058, 0x0308, 0x1E8C}, {0x0059, 0x0300, 0x1EF2}, {0x0059, 0x0301, 0x00DD},
    {0x0059, 0x0302, 0x0176}, {0x0059, 0x0303, 0x1EF8}, {0x0059, 0x0304, 0x0232}, {0x0059, 0x0307, 0x1E8E}, {0x0059, 0x0308, 0x0178},
    {0x005A, 0x0301, 0x0179}, {0x005A, 0x0302, 0x1E90}, {0x005A, 0x0307, 0x017B}, {0x005A, 0x030C, 0x017D}, {0x0061, 0x0300, 0x00E0},
    {0x0061, 0x0301, 0x00E1}, {0x0061, 0x0302, 0x00E2}, {0x0061, 0x0303, 0x00E3}, {0x0061, 0x0304, 0x0101}, {0x0061, 0x0306, 0x0103},
    {0x0061, 0x0307, 0x0227}, {0x0061, 0x0308, 0x00E4}, {0x0061, 0x030A, 0x00E5}, {0x0061, 0x030C, 0x01CE}, {0x0061, 0x0328, 0x0105},
    {0x0062, 0x0307, 0x1E03}, {0x0063, 0x0301, 0x0107}, {0x0063, 0x0302, 0x0109}, {0x0063, 0x0307, 0x010B}, {0x0063, 0x030C, 0x010D},
    {0x0063, 0x0327, 0x00E7}, {0x0064, 0x0307, 0x1E0B}, {0x0064, 0x030C, 0x010F}, {0x0064, 0x0327, 0x1E11}, {0x0065, 0x0300, 0x00E8},
    {0x0065, 0x0301, 0x00E9}, {0x0065, 0x0302, 0x00EA}, {0x0065, 0x0303, 0x1EBD}, {0x0065, 0x0304, 0x0113}, {0x0065, 0x0306, 0x0115},
    {0x0065, 0x0307, 0x0117}, {0x0065, 0x0308, 0x00EB}, {0x0065, 0x030C, 0x011B}, {0x0065, 0x0327, 0x0229}, {0x0065, 0x0328, 0x0119},
    {0x0066, 0x0307, 0x1E1F}, {0x0067, 0x0301, 0x01F5}, {0x0067, 0x0302, 0x011D}, {0x0067, 0x0304, 0x1E21}, {0x0067, 0x0306, 0x011F},
    {0x0067, 0x0307, 0x0121}, {0x0067, 0x030C, 0x01E7}, {0x0067, 0x0327, 0x0123}, {0x0068, 0x0302, 0x0125}, {0x0068, 0x0307, 0x1E23},
    {0x0068, 0x0308, 0x1E27}, {0x0068, 0x030C, 0x021F}, {0x0068, 0x0327, 0x1E29}, {0x0069, 0x0300, 0x00EC}, {0x0069, 0x0301, 0x00ED},
    {0x0069, 0x0302, 0x00EE}, {0x0069, 0x0303, 0x0129}, {0x0069, 0x0304, 0x012B}, {0x0069, 0x0306, 0x012D}, {0x0069, 0x0308, 0x00EF},
    {0x0069, 0x030C, 0x01D0}, {0x0069, 0x0328, 0x012F}, {0x006A, 0x0302, 0x0135}, {0x006A, 0x030C, 0x01F0}, {0x006B, 0x0301, 0x1E31},
    {0x006B, 0x030C, 0x01E9}, {0x006B, 0x0327, 0x0137}, {0x006C, 0x0301, 0x013A}, {0x006C, 0x030C, 0x013E}, {0x006C, 0x0327, 0x013C},
    {0x006D, 0x0301, 0x1E3F}, {0x006D, 0x0307, 0x1E41}, {0x006E, 0x0300, 0x01F9}, {0x006E, 0x0301, 0x0144}, {0x006E, 0x0303, 0x00F1},
    {0x006E, 0x0307, 0x1E45}, {0x006E, 0x030C, 0x0148}, {0x006E, 0x0327, 0x0146}, {0x006F, 0x0300, 0x00F2}, {0x006F, 0x0301, 0x00F3},
    {0x006F, 0x0302, 0x00F4}, {0x006F, 0x0303, 0x00F5}, {0x006F, 0x0304, 0x014D}, {0x006F, 0x0306, 0x014F}, {0x006F, 0x0307, 0x022F},
    {0x006F, 0x0308, 0x00F6}, {0x006F, 0x030B, 0x0151}, {0x006F, 0x030C, 0x01D2}, {0x006F, 0x0328, 0x01EB}, {0x0070, 0x0301, 0x1E55},
    {0x0070, 0x0307, 0x1E57}, {0x0072, 0x0301, 0x0155}, {0x0072, 0x0307, 0x1E59}, {0x0072, 0x030C, 0x0159}, {0x0072, 0x0327, 0x0157},
    {0x0073, 0x0301, 0x015B}, {0x0073, 0x0302, 0x015D}, {0x0073, 0x0307, 0x1E61}, {0x0073, 0x030C, 0x0161}, {0x0073, 0x0327, 0x015F},
    {0x0074, 0x0307, 0x1E6B}, {0x0074, 0x0308, 0x1E97}, {0x0074, 0x030C, 0x0165}, {0x0074, 0x0327, 0x0163}, {0x0075, 0x0300, 0x00F9},
    {0x0075, 0x0301, 0x00FA}, {0x0075, 0x0302, 0x00FB}, {0x0075, 0x0303, 0x0169}, {0x0075, 0x0304, 0x016B}, {0x0075, 0x0306, 0x016D},
    {0x0075, 0x0308, 0x00FC}, {0x0075, 0x030A, 0x016F}, {0x0075, 0x030B, 0x0171}, {0x0075, 0x030C, 0x01D4}, {0x0075, 0x0328, 0x0173},
    {0x0076, 0x0303, 0x1E7D}, {0x0077, 0x0300, 0x1E81}, {0x0077, 0x0301, 0x1E83}, {0x0077, 0x0302, 0x0175}, {0x0077, 0x0307, 0x1E87},
    {0x0077, 0x0308, 0x1E85}, {0x0077, 0x030A, 0x1E98}, {0x0078, 0x0307, 0x1E8B}, {0x0078, 0x0308, 0x1E8D}, {0x0079, 0x0300, 0x1EF3},
    {0x0079, 0x0301, 0x00FD}, {0x0079, 0x0302, 0x0177}, {0x0079, 0x0303, 0x1EF9}, {0x0079, 0x0304, 0x0233}, {0x0079, 0x0307, 0x1E8F},
    {0x0079, 0x0308, 0x00FF}, {0x0079, 0x030A, 0x1E99}, {0x007A, 0x0301, 0x017A}, {0x007A, 0x0302, 0x1E91}, {0x007A, 0x0307, 0x017C},
    {0x007A, 0x030C, 0x017E},
};

struct CasePair {
  std::uint32_t upper;
  std::uint32_t lower;
};

// Simple (one-to-one) lowercase mapping for Latin-1 Supplement and Latin
// Extended-A. U+0130 is included with its simple mapping to 'i'.
constexpr CasePair kLower[] = {
    {0x00C0, 0x00E0}, {0x00C1, 0x00E1}, {0x00C2, 0x00E2}, {0x00C3, 0x00E3}, {0x00C4, 0x00E4}, {0x00C5, 0x00E5}, {0x00C6, 0x00E6},
    {0x00C7, 0x00E7}, {0x00C8, 0x00E8}, {0x00C9, 0x00E9}, {0x00CA, 0x00EA}, {0x00CB, 0x00EB}, {0x00CC, 0x00EC}, {0x00CD, 0x00ED},
    {0x00CE, 0x00EE}, {0x00CF, 0x00EF}, {0x00D0, 0x00F0}, {0x00D1, 0x00F1}, {0x00D2, 0x00F2}, {0x00D3, 0x00F3}, {0x00D4, 0x00F4},
    {0x00D5, 0x00F5}, {0x00D6, 0x00F6}, {0x00D8, 0x00F8}, {0x00D9, 0x00F9}, {0x00DA, 0x00FA}, {0x00DB, 0x00FB}, {0x00DC, 0x00FC},
    {0x00DD, 0x00FD}, {0x00DE, 0x00FE}, {0x0100, 0x0101}, {0x0102, 0x0103}, {0x0104, 0x0105}, {0x0106, 0x0107}, {0x0108, 0x0109},
    {0x010A, 0x010B}, {0x010C, 0x010D}, {0x010E, 0x010F}, {0x0110, 0x0111}, {0x0112, 0x0113}, {0x0114, 0x0115}, {0x0116, 0x0117},
    {0x0118, 0x0119}, {0x011A, 0x011B}, {0x011C, 0x011D}, {0x011E, 0x011F}, {0x0120, 0x0121}, {0x0122, 0x0123}, {0x0124, 0x0125},
    {0x0126, 0x0127}, {0x0128, 0x0129}, {0x012A, 0x012B}, {0x012C, 0x012D}, {0x012E, 0x012F}, {0x0130, 0x0069}, {0x0132, 0x0133},
    {0x0134, 0x0135}, {0x0136, 0x0137}, {0x0139, 0x013A}, {0x013B, 0x013C}, {0x013D, 0x013E}, {0x013F, 0x0140}, {0x0141, 0x0142},
    {0x0143, 0x0144}, {0x0145, 0x0146}, {0x0147, 0x0148}, {0x014A, 0x014B}, {0x014C, 0x014D}, {0x014E, 0x014F}, {0x0150, 0x0151},
    {0x0152, 0x0153}, {0x0154, 0x0155}, {0x0156, 0x0157}, {0x0158, 0x0159}, {0x015A, 0x015B}, {0x015C, 0x015D}, {0x015E, 0x015F},
    {0x0160, 0x0161}, {0x0162, 0x0163}, {0x0164, 0x0165}, {0x0166, 0x0167}, {0x0168, 0x0169}, {0x016A, 0x016B}, {0x016C, 0x016D},
    {0x016E, 0x016F}, {0x0170, 0x0171}, {0x0172, 0x0173}, {0x0174, 0x0175}, {0x0176, 0x0177}, {0x0178, 0x00FF}, {0x0179, 0x017A},
    {0x017B, 0x017C}, {0x017D, 0x017E},
};

std::uint32_t compose(std::uint32_t base, std::uint32_t mark) {
  for (const auto& p : kCompose) {
    if (p.base == base && p.mark == mark) return p.composed;
  }
  return 0;
}

std::uint32_t to_lower_cp(std::uint32_t cp) {
  if (cp >= 'A' && cp <= 'Z') return cp + 0x20;
  for (const auto& p : kLower) {
    if (p.upper == cp) return p.lower;
  }
  return cp;
}

bool is_combining_mark(std::uint32_t cp) { return cp >= 0x0300 && cp <= 0x036F; }

// UTF-8 decode; malformed sequences become U+FFFD.
std::vector<std::uint32_t> decode_utf8(const std::string& s) {
  std::vector<std::uint32_t> out;
  std::size_t i = 0;
  while (i < s.size()) {
    const auto b0 = static_cast<std::uint8_t>(s[i]);
    std::size_t len;
    std::uint32_t cp;
    if (b0 < 0x80) {
      len = 1;
      cp = b0;
    } else if ((b0 >> 5) == 0x6) {
      len = 2;
      cp = b0 & 0x1F;
    } else if ((b0 >> 4) == 0xE) {
      len = 3;
      cp = b0 & 0x0F;
    } else if ((b0 >> 3) == 0x1E) {
      len = 4;
      cp = b0 & 0x07;
    } else {
      out.push_back(0xFFFD);
      ++i;
      continue;
    }
    if (i + len > s.size()) {
      out.push_back(0xFFFD);
      break;
    }
    bool ok = true;
    for (std::size_t k = 1; k < len; ++k) {
      const auto b = static_cast<std::uint8_t>(s[i + k]);
      if ((b >> 6) != 0x2) {
        ok = false;
        break;
      }
      cp = (cp << 6) | (b & 0x3F);
    }
    if (!ok) {
      out.push_back(0xFFFD);
      ++i;
      continue;
    }
    out.push_back(cp);
    i += len;
  }
  return out;
}

void encode_utf8(std::uint32_t cp, std::string& out) {
  if (cp < 0x80) {
    out.push_back(static_cast<char>(cp));
  } else if (cp < 0x800) {
    out.push_back(static_cast<char>(0xC0 | (cp >> 6)));
    out.push_back(static_cast<char>(0x80 | (cp & 0x3F)));
  } else if (cp < 0x10000) {
    out.push_back(static_cast<char>(0xE0 | (cp >> 12)));
    out.push_back(static_cast<char>(0x80 | ((cp >> 6) & 0x3F)));
    out.push_back(static_cast<char>(0x80 | (cp & 0x3F)));
  } else {
    out.push_back(static_cast<char>(0xF0 | (cp >> 18)));
    out.push_back(static_cast<char>(0x80 | ((cp >> 12) & 0x3F)));
    out.push_back(static_cast<char>(0x80 | ((cp >> 6) & 0x3F)));
    out.push_back(static_cast<char>(0x80 | (cp & 0x3F)));
  }
}

bool is_ascii_space(std::uint32_t cp) {
  return cp == ' ' || cp == '\t' || cp == '\n' || cp == '\r' || cp == '\f' || cp == '\v';
}

}  // namespace

std::vector<std::string> tokenize_text(const std::string& sentence) {
  std::vector<std::uint32_t> cps = decode_utf8(sentence);
  // Compose base + combining mark, then lowercase.
  std::vector<std::uint32_t> norm;
  norm.reserve(cps.size());
  for (std::uint32_t cp : cps) {
    if (!norm.empty() && is_combining_mark(cp)) {
      if (std::uint32_t c = compose(norm.back(), cp); c != 0) {
        norm.back() = c;
        continue;
      }
    }
    norm.push_back(cp);
  }
  std::vector<std::string> tokens;
  std::string cur;
  for (std::uint32_t cp : norm) {
    if (is_ascii_space(cp)) {
      if (!cur.empty()) {
        tokens.push_back(std::move(cur));
        cur.clear();
      }
    } else {
      encode_utf8(to_lower_cp(cp), cur);
    }
  }
  if (!cur.empty()) tokens.push_back(std::move(cur));
  return tokens;
}

// --- Vocab -----------------------------------------------------------------

Vocab Vocab::build(const std::vector<std::string>& corpus, std::size_t min_freq) {
  if (corpus.empty()) throw std::invalid_argument("Vocab::build: empty corpus");
  if (min_freq == 0) throw std::invalid_argument("Vocab::build: min_freq must be positive");
  std::map<std::string, std::size_t> freq;  // ordered keys give the lexicographic tie-break
  for (const std::string& sentence : corpus) {
    for (std::string& tok : tokenize_text(sentence)) {
      ++freq[std::move(tok)];
    }
  }
  std::vector<std::pair<std::string, std::size_t>> kept;
  for (auto& [tok, n] : freq) {
    if (n >= min_freq) kept.emplace_back(tok, n);
  }
  std::stable_sort(kept.begin(), kept.end(),
                   [](const auto& a, const auto& b) { return a.second > b.second; });
  Vocab v;
  v.min_freq_ = min_freq;
  v.tokens_ = {"<pad>", "<unk>"};
  for (auto& [tok, n] : kept) {
    (void)n;
    v.index_.emplace(tok, v.tokens_.size());
    v.tokens_.push_back(tok);
  }
  return v;
}

std::size_t Vocab::id_of(const std::string& token) const {
  auto it = index_.find(token);
  return it == index_.end() ? kUnkId : it->second;
}

const std::string& Vocab::token_of(std::size_t id) const {
  if (id >= tokens_.size()) {
    throw std::out_of_range("Vocab::token_of: id " + std::to_string(id) + " out of range");
  }
  return tokens_[id];
}

void Vocab::save(const std::filesystem::path& path) const {
  std::string out;
  for (std::size_t id = 2; id < tokens_.size(); ++id) {
    out += tokens_[id];
    out += '\n';
  }
  atomic_write_file(path, out);
}

Vocab Vocab::load(const std::filesystem::path& path) {
  Vocab v;
  v.tokens_ = {"<pad>", "<unk>"};
  for (std::string& line : split_lines(read_text_file(path))) {
    if (line.empty()) continue;
    if (v.index_.count(line)) {
      throw std::runtime_error("Vocab::load: duplicate token '" + line + "' in " +
                               path.string());
    }
    v.index_.emplace(line, v.tokens_.size());
    v.tokens_.push_back(std::move(line));
  }
  return v;
}

// --- batching ----------------------------------------------------------------

TokenizedBatch tokenize_batch(const Vocab& vocab, const std::vector<std::string>& sentences,
                              std::size_t max_len) {
  if (sentences.empty()) throw std::invalid_argument("tokenize_batch: no sentences");
  if (max_len == 0) throw std::invalid_argument("tokenize_batch: max_len must be positive");
  std::vector<std::vector<std::size_t>> rows;
  rows.reserve(sentences.size());
  for (std::size_t i = 0; i < sentences.size(); ++i) {
    std::vector<std::string> toks = tokenize_text(sentences[i]);
    if (toks.empty()) {
      throw std::invalid_argument("tokenize_batch: sentence " + std::to_string(i) +
                                  " is empty after trimming");
    }
    if (toks.size() > max_len) toks.resize(max_len);
    std::vector<std::size_t> ids;
    ids.reserve(toks.size());
    for (const std::string& t : toks) ids.push_back(vocab.id_of(t));
    rows.push_back(std::move(ids));
  }
  return batch_from_ids(rows, max_len, vocab.size());
}

TokenizedBatch batch_from_ids(const std::vector<std::vector<std::size_t>>& sequences,
                              std::size_t max_len, std::size_t vocab_size) {
  if (sequences.empty()) throw std::invalid_argument("batch_from_ids: no sequences");
  if (max_len == 0) throw std::invalid_argument("batch_from_ids: max_len must be positive");
  std::size_t time = 1;
  for (std::size_t i = 0; i < sequences.size(); ++i) {
    if (sequences[i].empty()) {
      throw std::invalid_argument("batch_from_ids: sequence " + std::to_string(i) + " is empty");
    }
    for (std::size_t id : sequences[i]) {
      if (id >= vocab_size) {
        throw std::invalid_argument("batch_from_ids: id " + std::to_string(id) +
                                    " out of range for vocab of " + std::to_string(vocab_size));
      }
    }
    time = std::max(time, std::min(sequences[i].size(), max_len));
  }
  TokenizedBatch out;
  out.batch = sequences.size();
  out.time = time;
  out.ids.assign(out.batch * time, Vocab::kPadId);
  out.mask.assign(out.batch * time, 0.0);
  for (std::size_t b = 0; b < out.batch; ++b) {
    const std::size_t count = std::min(sequences[b].size(), max_len);
    for (std::size_t t = 0; t < count; ++t) {
      out.ids[b * time + t] = sequences[b][t];
      out.mask[b * time + t] = 1.0;
    }
  }
  return out;
}

std::vector<std::vector<std::size_t>> read_pretokenized_file(
    const std::filesystem::path& path) {
  std::vector<std::vector<std::size_t>> out;
  const std::vector<std::string> lines = split_lines(read_text_file(path));
  for (std::size_t ln = 0; ln < lines.size(); ++ln) {
    const std::string& line = lines[ln];
    if (line.empty()) continue;
    std::vector<std::size_t> ids;
    std::size_t pos = 0;
    while (pos < line.size()) {
      while (pos < line.size() && line[pos] == ' ') ++pos;
      if (pos >= line.size()) break;
      std::size_t end = pos;
      std::size_t value = 0;
      while (end < line.size() && line[end] != ' ') {
        const char c = line[end];
        if (c < '0' || c > '9') {
          throw std::runtime_error("read_pretokenized_file: non-numeric token at line " +
                                   std::to_string(ln + 1) + " of " + path.string());
        }
        value = value * 10 + static_cast<std::size_t>(c - '0');
        ++end;
      }
      ids.push_back(value);
      pos = end;
    }
    if (!ids.empty()) out.push_back(std::move(ids));
  }
  return out;
}

}  // namespace biembed
