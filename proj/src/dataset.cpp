#include "intflow/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>

namespace intflow {

namespace {

constexpr std::uint32_t kImagesMagic = 0x00000803u;
constexpr std::uint32_t kLabelsMagic = 0x00000801u;

std::uint32_t read_be32(std::istream& in, const std::string& path) {
  unsigned char b[4];
  if (!in.read(reinterpret_cast<char*>(b), 4))
    throw IoError("unexpected end of IDX file " + path);
  return (std::uint32_t(b[0]) << 24) | (std::uint32_t(b[1]) << 16) | (std::uint32_t(b[2]) << 8) |
         std::uint32_t(b[3]);
}

void write_be32(std::ostream& out, std::uint32_t v) {
  const unsigned char b[4] = {static_cast<unsigned char>(v >> 24),
                              static_cast<unsigned char>(v >> 16),
                              static_cast<unsigned char>(v >> 8), static_cast<unsigned char>(v)};
  out.write(reinterpret_cast<const char*>(b), 4);
}

}  // namespace

int Dataset::num_classes() const {
  int mx = -1;
  for (int l : labels) mx = std::max(mx, l);
  return mx + 1;
}

Shape Dataset::sample_shape() const {
  if (images.shape.empty()) return {};
  return Shape(images.shape.begin() + 1, images.shape.end());
}

Dataset Dataset::subset(std::int64_t n) const {
  if (n <= 0 || n >= size()) return *this;
  Dataset out;
  out.images.shape = images.shape;
  out.images.shape[0] = n;
  const std::int64_t per = images.numel() / size();
  out.images.values.assign(images.values.begin(), images.values.begin() + n * per);
  out.labels.assign(labels.begin(), labels.begin() + n);
  return out;
}

RealTensor Dataset::gather(const std::vector<std::int64_t>& idx) const {
  RealTensor out;
  out.shape = images.shape;
  out.shape[0] = static_cast<std::int64_t>(idx.size());
  const std::int64_t per = images.numel() / std::max<std::int64_t>(size(), 1);
  out.values.resize(idx.size() * static_cast<std::size_t>(per));
  for (std::size_t i = 0; i < idx.size(); ++i) {
    if (idx[i] < 0 || idx[i] >= size()) throw Error("dataset index out of range");
    std::copy(images.values.begin() + idx[i] * per, images.values.begin() + (idx[i] + 1) * per,
              out.values.begin() + static_cast<std::int64_t>(i) * per);
  }
  return out;
}

std::vector<int> Dataset::gather_labels(const std::vector<std::int64_t>& idx) const {
  std::vector<int> out(idx.size());
  for (std::size_t i = 0; i < idx.size(); ++i) out[i] = labels[static_cast<std::size_t>(idx[i])];
  return out;
}

Dataset load_idx_dataset(const std::string& images_path, const std::string& labels_path) {
  std::ifstream img(images_path, std::ios::binary);
  if (!img) throw IoError("cannot open image file " + images_path);
  if (read_be32(img, images_path) != kImagesMagic)
    throw IoError("bad IDX image magic in " + images_path);
  const std::int64_t n = read_be32(img, images_path);
  const std::int64_t h = read_be32(img, images_path);
  const std::int64_t w = read_be32(img, images_path);
  std::vector<unsigned char> pixels(static_cast<std::size_t>(n * h * w));
  if (!img.read(reinterpret_cast<char*>(pixels.data()), static_cast<std::streamsize>(pixels.size())))
    throw IoError("truncated IDX image payload in " + images_path);

  std::ifstream lab(labels_path, std::ios::binary);
  if (!lab) throw IoError("cannot open label file " + labels_path);
  if (read_be32(lab, labels_path) != kLabelsMagic)
    throw IoError("bad IDX label magic in " + labels_path);
  const std::int64_t nl = read_be32(lab, labels_path);
  if (nl != n)
    throw IoError("IDX count mismatch: " + std::to_string(n) + " images vs " + std::to_string(nl) +
                  " labels");
  std::vector<unsigned char> raw_labels(static_cast<std::size_t>(nl));
  if (!lab.read(reinterpret_cast<char*>(raw_labels.data()), static_cast<std::streamsize>(raw_labels.size())))
    throw IoError("truncated IDX label payload in " + labels_path);

  Dataset d;
  d.images.shape = {n, 1, h, w};
  d.images.values.resize(pixels.size());
  for (std::size_t i = 0; i < pixels.size(); ++i)
    d.images.values[i] = std::ldexp(static_cast<double>(pixels[i]), -8);  // exact p/256
  d.labels.assign(raw_labels.begin(), raw_labels.end());
  return d;
}

void write_idx_dataset(const Dataset& data, const std::string& images_path,
                       const std::string& labels_path) {
  if (data.images.shape.size() != 4 || data.images.shape[1] != 1)
    throw IoError("IDX writer expects [N,1,H,W] images, got " + shape_str(data.images.shape));
  std::ofstream img(images_path, std::ios::binary);
  if (!img) throw IoError("cannot create " + images_path);
  write_be32(img, kImagesMagic);
  write_be32(img, static_cast<std::uint32_t>(data.images.shape[0]));
  write_be32(img, static_cast<std::uint32_t>(data.images.shape[2]));
  write_be32(img, static_cast<std::uint32_t>(data.images.shape[3]));
  for (double v : data.images.values) {
    const double p = std::ldexp(v, 8);
    if (p != std::trunc(p) || p < 0.0 || p > 255.0)
      throw IoError("pixel value off the 1/256 grid; cannot write IDX");
    const unsigned char b = static_cast<unsigned char>(p);
    img.write(reinterpret_cast<const char*>(&b), 1);
  }
  std::ofstream lab(labels_path, std::ios::binary);
  if (!lab) throw IoError("cannot create " + labels_path);
  write_be32(lab, kLabelsMagic);
  write_be32(lab, static_cast<std::uint32_t>(data.labels.size()));
  for (int l : data.labels) {
    const unsigned char b = static_cast<unsigned char>(l);
    lab.write(reinterpret_cast<const char*>(&b), 1);
  }
}

namespace {

// Seven-segment layout on a 28x28 canvas. Segments: 0 top, 1 top-right,
// 2 bottom-right, 3 bottom, 4 bottom-left, 5 top-left, 6 middle.
const int kSegmentsPerDigit[10] = {
    0b0111111,  // 0
    0b0000110,  // 1
    0b1011011,  // 2
    0b1001111,  // 3
    0b1100110,  // 4
    0b1101101,  // 5
    0b1111101,  // 6
    0b0000111,  // 7
    0b1111111,  // 8
    0b1101111,  // 9
};

struct Seg {
  int r0, c0, r1, c1;  // inclusive box
};

// Boxes for strokes of thickness 3 in a 4..23 x 8..19 glyph frame.
const Seg kSegBox[7] = {
    {4, 8, 6, 19},     // top
    {4, 17, 13, 19},   // top-right
    {14, 17, 23, 19},  // bottom-right
    {21, 8, 23, 19},   // bottom
    {14, 8, 23, 10},   // bottom-left
    {4, 8, 13, 10},    // top-left
    {12, 8, 14, 19},   // middle
};

}  // namespace

Dataset make_synthetic_digits(std::int64_t n, std::uint64_t seed) {
  constexpr int H = 28, W = 28;
  Rng rng(seed);
  Dataset d;
  d.images.shape = {n, 1, H, W};
  d.images.values.assign(static_cast<std::size_t>(n * H * W), 0.0);
  d.labels.resize(static_cast<std::size_t>(n));
  for (std::int64_t s = 0; s < n; ++s) {
    const int digit = static_cast<int>(rng.next_u64() % 10);
    d.labels[static_cast<std::size_t>(s)] = digit;
    const int dy = static_cast<int>(rng.next_u64() % 7) - 3;
    const int dx = static_cast<int>(rng.next_u64() % 7) - 3;
    const double intensity = 130.0 + 110.0 * rng.next_unit();
    double canvas[H * W] = {0.0};
    for (int seg = 0; seg < 7; ++seg) {
      if (!((kSegmentsPerDigit[digit] >> seg) & 1)) continue;
      // per-segment fading keeps the label decodable but blurs easy cues
      const double fade = 0.70 + 0.30 * rng.next_unit();
      const Seg& b = kSegBox[seg];
      for (int r = b.r0; r <= b.r1; ++r)
        for (int c = b.c0; c <= b.c1; ++c) {
          const int rr = r + dy, cc = c + dx;
          if (rr >= 0 && rr < H && cc >= 0 && cc < W) canvas[rr * W + cc] = intensity * fade;
        }
    }
    double* out = d.images.values.data() + s * H * W;
    for (int i = 0; i < H * W; ++i) {
      const double noisy = canvas[i] + rng.next_normal(0.0, 40.0);
      const double p = std::min(std::max(round_half_away(noisy), 0.0), 255.0);
      out[i] = std::ldexp(p, -8);
    }
  }
  return d;
}

}  // namespace intflow
