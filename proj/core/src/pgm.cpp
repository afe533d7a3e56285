#include "pgm.hpp"

#include <cctype>
#include <fstream>
#include <iterator>
#include <string>

#include "slicefinder/error.hpp"

namespace slicefinder::detail {
namespace {

// Reads the next whitespace-delimited header token, skipping `#` comments.
std::string next_token(const std::vector<char> &buf, std::size_t &pos) {
  for (;;) {
    while (pos < buf.size() && std::isspace(static_cast<unsigned char>(buf[pos])))
      ++pos;
    if (pos < buf.size() && buf[pos] == '#') {
      while (pos < buf.size() && buf[pos] != '\n') ++pos;
      continue;
    }
    break;
  }
  std::string tok;
  while (pos < buf.size() && !std::isspace(static_cast<unsigned char>(buf[pos])))
    tok.push_back(buf[pos++]);
  return tok;
}

int parse_positive(const std::string &tok, const std::filesystem::path &path) {
  try {
    std::size_t used = 0;
    const int v = std::stoi(tok, &used);
    if (used != tok.size() || v <= 0) throw std::invalid_argument(tok);
    return v;
  } catch (const std::exception &) {
    throw Error(ErrorCode::MalformedImage,
                path.string() + ": bad PGM header field '" + tok + "'");
  }
}

}  // namespace

PgmData read_pgm(const std::filesystem::path &path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::MissingFile, path.string());
  std::vector<char> buf((std::istreambuf_iterator<char>(in)),
                        std::istreambuf_iterator<char>());

  std::size_t pos = 0;
  if (next_token(buf, pos) != "P5")
    throw Error(ErrorCode::MalformedImage, path.string() + ": not a binary PGM (P5)");
  PgmData pgm;
  pgm.width = parse_positive(next_token(buf, pos), path);
  pgm.height = parse_positive(next_token(buf, pos), path);
  pgm.maxval = parse_positive(next_token(buf, pos), path);
  if (pgm.maxval > 65535)
    throw Error(ErrorCode::MalformedImage, path.string() + ": maxval > 65535");
  ++pos;  // single whitespace after maxval

  const std::size_t n =
      static_cast<std::size_t>(pgm.width) * static_cast<std::size_t>(pgm.height);
  const std::size_t bpp = pgm.maxval < 256 ? 1 : 2;
  if (pos > buf.size() || buf.size() - pos < n * bpp)
    throw Error(ErrorCode::MalformedImage, path.string() + ": truncated pixel data");

  pgm.pixels.resize(n);
  const auto *bytes = reinterpret_cast<const unsigned char *>(buf.data() + pos);
  for (std::size_t i = 0; i < n; ++i) {
    pgm.pixels[i] = bpp == 1 ? bytes[i]
                             : static_cast<std::uint16_t>((bytes[2 * i] << 8) |
                                                          bytes[2 * i + 1]);
    if (pgm.pixels[i] > pgm.maxval)
      throw Error(ErrorCode::MalformedImage, path.string() + ": pixel above maxval");
  }
  return pgm;
}

void write_pgm(const std::filesystem::path &path, const PgmData &pgm) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error(ErrorCode::IoError, "cannot write " + path.string());
  out << "P5\n" << pgm.width << ' ' << pgm.height << '\n' << pgm.maxval << '\n';
  std::vector<unsigned char> bytes;
  const bool wide = pgm.maxval > 255;
  bytes.reserve(pgm.pixels.size() * (wide ? 2 : 1));
  for (std::uint16_t v : pgm.pixels) {
    if (wide) {
      bytes.push_back(static_cast<unsigned char>(v >> 8));
      bytes.push_back(static_cast<unsigned char>(v & 0xff));
    } else {
      bytes.push_back(static_cast<unsigned char>(v));
    }
  }
  out.write(reinterpret_cast<const char *>(bytes.data()),
            static_cast<std::streamsize>(bytes.size()));
  if (!out) throw Error(ErrorCode::IoError, "write failed: " + path.string());
}

}  // namespace slicefinder::detail
