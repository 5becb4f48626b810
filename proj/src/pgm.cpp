#include "dust/pgm.hpp"

#include <cctype>
#include <fstream>
#include <sstream>
#include <string>

namespace dust {
namespace {

void write_header(std::ofstream& out, std::size_t w, std::size_t h, unsigned maxval) {
  out << "P5\n" << w << ' ' << h << '\n' << maxval << '\n';
}

std::ofstream open_out(const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw PgmError("cannot write " + path.string());
  return out;
}

// Next header token, skipping whitespace and '#' comments.
std::string token(std::istream& in, const std::filesystem::path& path) {
  std::string t;
  while (in) {
    const int c = in.peek();
    if (c == '#') {
      std::string skip;
      std::getline(in, skip);
    } else if (std::isspace(c)) {
      in.get();
    } else {
      break;
    }
  }
  in >> t;
  if (t.empty()) throw PgmError(path.string() + ": truncated header");
  return t;
}

struct Header {
  std::size_t width, height;
  unsigned maxval;
};

Header read_header(std::ifstream& in, const std::filesystem::path& path) {
  if (token(in, path) != "P5") throw PgmError(path.string() + ": not a binary PGM (P5)");
  Header h{};
  try {
    h.width = std::stoul(token(in, path));
    h.height = std::stoul(token(in, path));
    h.maxval = static_cast<unsigned>(std::stoul(token(in, path)));
  } catch (const std::logic_error&) {
    throw PgmError(path.string() + ": malformed header");
  }
  if (h.maxval == 0 || h.maxval > 65535) throw PgmError(path.string() + ": bad maxval");
  in.get();  // single whitespace before the raster
  return h;
}

std::vector<unsigned char> read_raster(std::ifstream& in, std::size_t bytes,
                                       const std::filesystem::path& path) {
  std::vector<unsigned char> raw(bytes);
  in.read(reinterpret_cast<char*>(raw.data()), static_cast<std::streamsize>(bytes));
  if (static_cast<std::size_t>(in.gcount()) != bytes) {
    throw PgmError(path.string() + ": raster shorter than header says");
  }
  return raw;
}

}  // namespace

void write_pgm16(const std::filesystem::path& path, const Image16& image) {
  auto out = open_out(path);
  write_header(out, image.width, image.height, 65535);
  std::vector<unsigned char> raw(image.pixels.size() * 2);
  for (std::size_t i = 0; i < image.pixels.size(); ++i) {
    raw[2 * i] = static_cast<unsigned char>(image.pixels[i] >> 8);
    raw[2 * i + 1] = static_cast<unsigned char>(image.pixels[i] & 0xff);
  }
  out.write(reinterpret_cast<const char*>(raw.data()), static_cast<std::streamsize>(raw.size()));
  if (!out) throw PgmError("short write to " + path.string());
}

void write_pgm8(const std::filesystem::path& path, const Mask8& mask) {
  auto out = open_out(path);
  write_header(out, mask.width, mask.height, 255);
  out.write(reinterpret_cast<const char*>(mask.labels.data()),
            static_cast<std::streamsize>(mask.labels.size()));
  if (!out) throw PgmError("short write to " + path.string());
}

Image16 read_pgm16(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw PgmError("cannot open " + path.string());
  const Header h = read_header(in, path);
  Image16 img{h.height, h.width, std::vector<std::uint16_t>(h.width * h.height)};
  if (h.maxval < 256) {
    auto raw = read_raster(in, img.pixels.size(), path);
    for (std::size_t i = 0; i < raw.size(); ++i) img.pixels[i] = raw[i];
  } else {
    auto raw = read_raster(in, img.pixels.size() * 2, path);
    for (std::size_t i = 0; i < img.pixels.size(); ++i) {
      img.pixels[i] = static_cast<std::uint16_t>((raw[2 * i] << 8) | raw[2 * i + 1]);
    }
  }
  return img;
}

Mask8 read_pgm8(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw PgmError("cannot open " + path.string());
  const Header h = read_header(in, path);
  if (h.maxval > 255) throw PgmError(path.string() + ": expected an 8-bit mask");
  Mask8 m{h.height, h.width, {}};
  auto raw = read_raster(in, h.width * h.height, path);
  m.labels.assign(raw.begin(), raw.end());
  return m;
}

}  // namespace dust
