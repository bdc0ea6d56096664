#include "inceptseg/data.hpp"

#include <zlib.h>

#include <algorithm>
#include <cmath>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <map>
#include <numeric>

#include "inceptseg/errors.hpp"
#include "inceptseg/ops.hpp"

namespace fs = std::filesystem;

namespace iseg {

namespace {

// ---- Netpbm ----------------------------------------------------------------

std::string read_file(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("load_image: cannot open '" + path + "'");
  std::string bytes((std::istreambuf_iterator<char>(is)), std::istreambuf_iterator<char>());
  return bytes;
}

// whitespace-separated header tokens, with '#' comments to end of line
int next_pnm_int(const std::string& b, size_t& pos, const std::string& path) {
  while (pos < b.size()) {
    if (std::isspace(static_cast<unsigned char>(b[pos]))) {
      ++pos;
    } else if (b[pos] == '#') {
      while (pos < b.size() && b[pos] != '\n') ++pos;
    } else {
      break;
    }
  }
  if (pos >= b.size() || !std::isdigit(static_cast<unsigned char>(b[pos])))
    throw IoError("load_image: malformed Netpbm header in '" + path + "'");
  int v = 0;
  while (pos < b.size() && std::isdigit(static_cast<unsigned char>(b[pos])))
    v = v * 10 + (b[pos++] - '0');
  return v;
}

Tensor4 decode_pnm(const std::string& bytes, const std::string& path, bool allow16) {
  const int channels = bytes[1] == '5' ? 1 : 3;
  size_t pos = 2;
  const int w = next_pnm_int(bytes, pos, path);
  const int h = next_pnm_int(bytes, pos, path);
  const int maxval = next_pnm_int(bytes, pos, path);
  if (maxval <= 0 || maxval > 65535)
    throw IoError("load_image: invalid maxval " + std::to_string(maxval) + " in '" + path + "'");
  const bool wide = maxval > 255;
  if (wide && !allow16)
    throw IoError("load_image: bit depth > 8 unsupported for '" + path + "'");
  ++pos;  // the single whitespace byte after maxval
  const size_t need = static_cast<size_t>(w) * h * channels * (wide ? 2 : 1);
  if (bytes.size() - pos < need)
    throw IoError("load_image: truncated pixel data in '" + path + "'");
  Tensor4 out(1, h, w, channels);
  const unsigned char* p = reinterpret_cast<const unsigned char*>(bytes.data() + pos);
  for (size_t i = 0; i < static_cast<size_t>(w) * h * channels; ++i) {
    const int raw = wide ? (p[2 * i] << 8 | p[2 * i + 1]) : p[i];
    out.data[i] = static_cast<double>(raw) / maxval;
  }
  return out;
}

// ---- PNG (8-bit gray / RGB, non-interlaced) ---------------------------------

uint32_t be32(const unsigned char* p) {
  return (static_cast<uint32_t>(p[0]) << 24) | (p[1] << 16) | (p[2] << 8) | p[3];
}

std::vector<unsigned char> zlib_inflate(const std::vector<unsigned char>& in,
                                        const std::string& path) {
  z_stream zs{};
  if (inflateInit(&zs) != Z_OK) throw IoError("load_image: zlib init failed");
  zs.next_in = const_cast<unsigned char*>(in.data());
  zs.avail_in = static_cast<uInt>(in.size());
  std::vector<unsigned char> out;
  unsigned char buf[65536];
  int rc = Z_OK;
  while (rc != Z_STREAM_END) {
    zs.next_out = buf;
    zs.avail_out = sizeof buf;
    rc = inflate(&zs, Z_NO_FLUSH);
    if (rc != Z_OK && rc != Z_STREAM_END) {
      inflateEnd(&zs);
      throw IoError("load_image: corrupt PNG compressed stream in '" + path + "'");
    }
    out.insert(out.end(), buf, buf + (sizeof buf - zs.avail_out));
  }
  inflateEnd(&zs);
  return out;
}

int paeth(int a, int b, int c) {
  const int p = a + b - c;
  const int pa = std::abs(p - a), pb = std::abs(p - b), pc = std::abs(p - c);
  if (pa <= pb && pa <= pc) return a;
  if (pb <= pc) return b;
  return c;
}

Tensor4 decode_png(const std::string& bytes, const std::string& path) {
  static const unsigned char sig[8] = {137, 80, 78, 71, 13, 10, 26, 10};
  if (bytes.size() < 8 || std::memcmp(bytes.data(), sig, 8) != 0)
    throw IoError("load_image: bad PNG signature in '" + path + "'");
  size_t pos = 8;
  int w = 0, h = 0, bit_depth = 0, color_type = 0, interlace = 0;
  std::vector<unsigned char> idat;
  bool saw_ihdr = false, saw_iend = false;
  while (pos + 8 <= bytes.size()) {
    const unsigned char* p = reinterpret_cast<const unsigned char*>(bytes.data() + pos);
    const uint32_t len = be32(p);
    if (pos + 12 + len > bytes.size())
      throw IoError("load_image: truncated PNG chunk in '" + path + "'");
    const std::string type(bytes.data() + pos + 4, 4);
    const unsigned char* data = p + 8;
    if (type == "IHDR") {
      w = static_cast<int>(be32(data));
      h = static_cast<int>(be32(data + 4));
      bit_depth = data[8];
      color_type = data[9];
      interlace = data[12];
      saw_ihdr = true;
    } else if (type == "IDAT") {
      idat.insert(idat.end(), data, data + len);
    } else if (type == "IEND") {
      saw_iend = true;
      break;
    }
    pos += 12 + len;
  }
  if (!saw_ihdr || !saw_iend || idat.empty())
    throw IoError("load_image: truncated PNG in '" + path + "'");
  if (bit_depth != 8)
    throw IoError("load_image: bit depth " + std::to_string(bit_depth) +
                  " unsupported (8-bit only) in '" + path + "'");
  if (color_type != 0 && color_type != 2)
    throw IoError("load_image: PNG color type " + std::to_string(color_type) +
                  " unsupported (gray/RGB only) in '" + path + "'");
  if (interlace != 0)
    throw IoError("load_image: interlaced PNG unsupported in '" + path + "'");
  const int channels = color_type == 0 ? 1 : 3;

  const std::vector<unsigned char> raw = zlib_inflate(idat, path);
  const size_t stride = static_cast<size_t>(w) * channels;
  if (raw.size() < (stride + 1) * h)
    throw IoError("load_image: truncated PNG scanlines in '" + path + "'");

  std::vector<unsigned char> img(stride * h);
  for (int y = 0; y < h; ++y) {
    const unsigned char filter = raw[(stride + 1) * y];
    const unsigned char* src = raw.data() + (stride + 1) * y + 1;
    unsigned char* dst = img.data() + stride * y;
    const unsigned char* up = y > 0 ? img.data() + stride * (y - 1) : nullptr;
    for (size_t x = 0; x < stride; ++x) {
      const int a = x >= static_cast<size_t>(channels) ? dst[x - channels] : 0;
      const int b = up ? up[x] : 0;
      const int c = (up && x >= static_cast<size_t>(channels)) ? up[x - channels] : 0;
      int v = src[x];
      switch (filter) {
        case 0: break;
        case 1: v += a; break;
        case 2: v += b; break;
        case 3: v += (a + b) / 2; break;
        case 4: v += paeth(a, b, c); break;
        default:
          throw IoError("load_image: bad PNG filter byte in '" + path + "'");
      }
      dst[x] = static_cast<unsigned char>(v & 0xff);
    }
  }
  Tensor4 out(1, h, w, channels);
  for (size_t i = 0; i < img.size(); ++i) out.data[i] = img[i] / 255.0;
  return out;
}

void write_pnm(const std::string& path, const Tensor4& t, int maxval, int channels) {
  if (t.n != 1 || t.c != channels)
    throw ConfigError("save image: expected (1,h,w," + std::to_string(channels) +
                      "), got " + t.shape_str());
  std::ofstream os(path, std::ios::binary);
  if (!os) throw IoError("save image: cannot open '" + path + "' for writing");
  os << (channels == 1 ? "P5" : "P6") << "\n" << t.w << " " << t.h << "\n" << maxval << "\n";
  for (double v : t.data) {
    const double clamped = std::min(1.0, std::max(0.0, v));
    const long raw = std::lround(clamped * maxval);
    if (maxval > 255) {
      os.put(static_cast<char>((raw >> 8) & 0xff));
      os.put(static_cast<char>(raw & 0xff));
    } else {
      os.put(static_cast<char>(raw & 0xff));
    }
  }
  if (!os) throw IoError("save image: write failed for '" + path + "'");
}

Tensor4 binarize_mask(const Tensor4& m) {
  Tensor4 out = m;
  for (double& v : out.data) v = v >= 0.5 ? 1.0 : 0.0;
  return out;
}

}  // namespace

Tensor4 load_image(const std::string& path) {
  const std::string bytes = read_file(path);
  if (bytes.size() >= 2 && bytes[0] == 'P' && (bytes[1] == '5' || bytes[1] == '6'))
    return decode_pnm(bytes, path, false);
  if (bytes.size() >= 8 && static_cast<unsigned char>(bytes[0]) == 137 && bytes[1] == 'P')
    return decode_png(bytes, path);
  throw IoError("load_image: unsupported format in '" + path +
                "' (expected P5/P6 Netpbm or 8-bit PNG)");
}

Tensor4 load_pgm16(const std::string& path) {
  const std::string bytes = read_file(path);
  if (bytes.size() < 2 || bytes[0] != 'P' || bytes[1] != '5')
    throw IoError("load_pgm16: '" + path + "' is not a P5 PGM");
  return decode_pnm(bytes, path, true);
}

void save_pgm(const std::string& path, const Tensor4& gray) { write_pnm(path, gray, 255, 1); }
void save_pgm16(const std::string& path, const Tensor4& gray) { write_pnm(path, gray, 65535, 1); }
void save_ppm(const std::string& path, const Tensor4& rgb) { write_pnm(path, rgb, 255, 3); }

Tensor4 to_grayscale(const Tensor4& rgb) {
  if (rgb.c != 3)
    throw std::invalid_argument("to_grayscale: expected 3 channels, got " + rgb.shape_str());
  Tensor4 out(rgb.n, rgb.h, rgb.w, 1);
  for (size_t i = 0; i < out.data.size(); ++i) {
    const double* px = rgb.data.data() + 3 * i;
    out.data[i] = 0.299 * px[0] + 0.587 * px[1] + 0.114 * px[2];
  }
  return out;
}

std::vector<SamplePair> extract_random_patches(const std::vector<SamplePair>& pairs,
                                               int patch_size, int total_count,
                                               uint64_t seed) {
  if (pairs.empty()) throw ConfigError("extract_random_patches: empty source set");
  for (const auto& p : pairs)
    if (p.image.h < patch_size || p.image.w < patch_size)
      throw ConfigError("extract_random_patches: image '" + p.source_id + "' (" +
                        std::to_string(p.image.h) + "x" + std::to_string(p.image.w) +
                        ") smaller than patch size " + std::to_string(patch_size));
  Rng rng(seed, 0x9A7Cull);  // patching stream
  std::vector<SamplePair> out;
  out.reserve(total_count);
  for (int k = 0; k < total_count; ++k) {
    const auto& src = pairs[rng.uniform_int(pairs.size())];
    const int y0 = static_cast<int>(rng.uniform_int(src.image.h - patch_size + 1));
    const int x0 = static_cast<int>(rng.uniform_int(src.image.w - patch_size + 1));
    SamplePair p;
    p.image = Tensor4(1, patch_size, patch_size, src.image.c);
    p.mask = Tensor4(1, patch_size, patch_size, 1);
    for (int y = 0; y < patch_size; ++y)
      for (int x = 0; x < patch_size; ++x) {
        for (int ch = 0; ch < src.image.c; ++ch)
          p.image.at(0, y, x, ch) = src.image.at(0, y0 + y, x0 + x, ch);
        p.mask.at(0, y, x, 0) = src.mask.at(0, y0 + y, x0 + x, 0);
      }
    p.source_id = src.source_id + "#" + std::to_string(k);
    out.push_back(std::move(p));
  }
  return out;
}

std::pair<std::vector<SamplePair>, std::vector<SamplePair>> split_train_val(
    const std::vector<SamplePair>& items, double val_fraction, uint64_t seed) {
  if (items.size() < 2) throw ConfigError("split_train_val: need at least 2 items");
  if (!(val_fraction > 0.0 && val_fraction < 1.0))
    throw ConfigError("split_train_val: val_fraction must lie in (0,1)");
  std::vector<size_t> order(items.size());
  std::iota(order.begin(), order.end(), 0);
  Rng rng(seed, 0x5F1Eull);  // shuffling stream
  for (size_t i = order.size() - 1; i > 0; --i)
    std::swap(order[i], order[rng.uniform_int(i + 1)]);
  const size_t val_n = static_cast<size_t>(
      std::lround(val_fraction * static_cast<double>(items.size())));
  std::pair<std::vector<SamplePair>, std::vector<SamplePair>> out;
  for (size_t i = 0; i < order.size(); ++i)
    (i < order.size() - val_n ? out.first : out.second).push_back(items[order[i]]);
  return out;
}

std::vector<SamplePair> resize_dataset(const std::vector<SamplePair>& pairs, int h, int w) {
  std::vector<SamplePair> out;
  out.reserve(pairs.size());
  for (const auto& p : pairs) {
    SamplePair r;
    r.image = ops::bilinear_resize(p.image, h, w);
    r.mask = binarize_mask(ops::bilinear_resize(p.mask, h, w));
    r.source_id = p.source_id;
    out.push_back(std::move(r));
  }
  return out;
}

std::vector<SamplePair> generate_synthetic(int count, int size,
                                           const std::string& structure_scale,
                                           uint64_t seed) {
  if (size < 8 || size % 8 != 0)
    throw ConfigError("generate_synthetic: size must be a positive multiple of 8");
  const bool small = structure_scale == "small";
  if (!small && structure_scale != "large")
    throw ConfigError("generate_synthetic: structure_scale must be 'small' or 'large'");
  Rng rng(seed, 0x5E17ull);  // synthesis stream
  std::vector<SamplePair> out;
  out.reserve(count);
  for (int k = 0; k < count; ++k) {
    SamplePair p;
    p.image = Tensor4(1, size, size, 1);
    p.mask = Tensor4(1, size, size, 1);
    for (double& v : p.image.data) v = 0.25 * rng.uniform();  // dark noisy background

    struct Blob { double cy, cx, ry, rx; };
    std::vector<Blob> blobs;
    if (small) {
      const int n_blobs = 6 + static_cast<int>(rng.uniform_int(7));  // 6..12
      for (int b = 0; b < n_blobs; ++b) {
        const double r = 2.0 + 2.0 * rng.uniform();  // 2..4
        blobs.push_back({r + rng.uniform() * (size - 2 * r),
                         r + rng.uniform() * (size - 2 * r),
                         r, 2.0 + 2.0 * rng.uniform()});
      }
    } else {
      const double base = std::ceil(size / 4.0);
      const double ry = base * (0.85 + 0.3 * rng.uniform());
      const double rx = base * (0.85 + 0.3 * rng.uniform());
      blobs.push_back({ry + rng.uniform() * (size - 2 * ry),
                       rx + rng.uniform() * (size - 2 * rx), ry, rx});
    }
    for (int y = 0; y < size; ++y)
      for (int x = 0; x < size; ++x)
        for (const auto& b : blobs) {
          const double dy = (y - b.cy) / b.ry, dx = (x - b.cx) / b.rx;
          if (dy * dy + dx * dx <= 1.0) {
            p.image.at(0, y, x, 0) = 0.75 + 0.25 * rng.uniform();
            p.mask.at(0, y, x, 0) = 1.0;
            break;
          }
        }
    p.source_id = "synthetic_" + structure_scale + "_" + std::to_string(k);
    out.push_back(std::move(p));
  }
  return out;
}

std::vector<SamplePair> load_dataset_dir(const std::string& root, bool grayscale) {
  const fs::path images = fs::path(root) / "images";
  const fs::path masks = fs::path(root) / "masks";
  if (!fs::is_directory(images) || !fs::is_directory(masks))
    throw ConfigError("load_dataset_dir: '" + root + "' must contain images/ and masks/");
  std::map<std::string, fs::path> mask_by_stem;
  for (const auto& e : fs::directory_iterator(masks))
    if (e.is_regular_file()) mask_by_stem[e.path().stem().string()] = e.path();

  std::vector<fs::path> image_files;
  for (const auto& e : fs::directory_iterator(images)) {
    if (!e.is_regular_file()) continue;
    const std::string ext = e.path().extension().string();
    if (ext == ".pgm" || ext == ".ppm" || ext == ".png") image_files.push_back(e.path());
  }
  std::sort(image_files.begin(), image_files.end());
  if (image_files.empty())
    throw ConfigError("load_dataset_dir: no images found under '" + images.string() + "'");

  std::vector<SamplePair> out;
  std::vector<std::string> unmatched;
  for (const auto& f : image_files) {
    const auto it = mask_by_stem.find(f.stem().string());
    if (it == mask_by_stem.end()) {
      unmatched.push_back(f.stem().string());
      continue;
    }
    SamplePair p;
    p.image = load_image(f.string());
    if (grayscale && p.image.c == 3) p.image = to_grayscale(p.image);
    Tensor4 m = load_image(it->second.string());
    if (m.c == 3) m = to_grayscale(m);
    p.mask = binarize_mask(m);
    if (p.mask.h != p.image.h || p.mask.w != p.image.w)
      throw ConfigError("load_dataset_dir: image/mask size mismatch for stem '" +
                        f.stem().string() + "'");
    p.source_id = f.stem().string();
    out.push_back(std::move(p));
  }
  if (!unmatched.empty()) {
    std::string msg = "load_dataset_dir: missing masks for stems:";
    for (const auto& s : unmatched) msg += " " + s;
    throw ConfigError(msg);
  }
  return out;
}

}  // namespace iseg
