#include "protolog/glyphs.hpp"

#include <cstdio>
#include <fstream>
#include <sstream>
#include <stdexcept>

#include "protolog/nn.hpp"
#include "protolog/rng.hpp"

namespace protolog {

namespace {

// 5x7 bitmap font, one row string per scanline.
const char* const kFont[10][7] = {
    {"01110", "10001", "10011", "10101", "11001", "10001", "01110"},  // 0
    {"00100", "01100", "00100", "00100", "00100", "00100", "01110"},  // 1
    {"01110", "10001", "00001", "00010", "00100", "01000", "11111"},  // 2
    {"11111", "00010", "00100", "00010", "00001", "10001", "01110"},  // 3
    {"00010", "00110", "01010", "10010", "11111", "00010", "00010"},  // 4
    {"11111", "10000", "11110", "00001", "00001", "10001", "01110"},  // 5
    {"00110", "01000", "10000", "11110", "10001", "10001", "01110"},  // 6
    {"11111", "00001", "00010", "00100", "01000", "01000", "01000"},  // 7
    {"01110", "10001", "10001", "01110", "10001", "10001", "01110"},  // 8
    {"01110", "10001", "10001", "01111", "00001", "00010", "01100"},  // 9
};

constexpr int kBoxW = 10;  // glyph box inside the 16x16 frame
constexpr int kBoxH = 12;
constexpr int kOffX = 3;
constexpr int kOffY = 2;

void blit(Tensor& img, int digit, int dx, int dy, double intensity) {
  for (int r = 0; r < kBoxH; ++r) {
    const int src_r = r * 7 / kBoxH;
    const int y = kOffY + dy + r;
    for (int c = 0; c < kBoxW; ++c) {
      const int src_c = c * 5 / kBoxW;
      const int x = kOffX + dx + c;
      if (y < 0 || y >= kGlyphH || x < 0 || x >= kGlyphW) continue;
      if (kFont[digit][src_r][src_c] == '1')
        img.data[static_cast<size_t>(y) * kGlyphW + x] = intensity;
    }
  }
}

}  // namespace

Tensor render_canonical(int digit) {
  if (digit < 0 || digit > 9) throw std::runtime_error("digit out of range");
  Tensor img = Tensor::zeros({kGlyphH * kGlyphW});
  blit(img, digit, 0, 0, 1.0);
  return img;
}

Tensor render_glyph(int digit, uint64_t instance_seed) {
  if (digit < 0 || digit > 9) throw std::runtime_error("digit out of range");
  RngStream rng(instance_seed);
  const int dx = static_cast<int>(rng.next_int(-2, 2));
  const int dy = static_cast<int>(rng.next_int(-2, 2));
  const double jitter = rng.next_uniform(0.8, 1.2);
  Tensor img = Tensor::zeros({kGlyphH * kGlyphW});
  blit(img, digit, dx, dy, jitter);
  for (double& v : img.data) {
    v += 0.1 * rng.next_gaussian();
    v = v < 0.0 ? 0.0 : (v > 1.0 ? 1.0 : v);
  }
  return img;
}

GlyphDataset generate_dataset(size_t n, const std::string& split, uint64_t master_seed) {
  if (n == 0) throw std::runtime_error("dataset size must be positive");
  GlyphDataset ds;
  ds.split = split;
  ds.master_seed = master_seed;
  ds.glyphs.reserve(n);
  for (size_t i = 0; i < n; ++i) {
    const uint64_t label_seed = mix_seed(master_seed, split + ".label", i);
    const uint64_t glyph_seed = mix_seed(master_seed, split + ".glyph", i);
    Glyph g;
    g.label = static_cast<int>(RngStream(label_seed).next_int(0, 9));
    g.instance_seed = glyph_seed;
    g.pixels = render_glyph(g.label, glyph_seed);
    ds.glyphs.push_back(std::move(g));
  }
  return ds;
}

void save_dataset(const GlyphDataset& ds, const std::string& path) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("cannot write dataset: " + path);
  f << "glyphs v1 " << kGlyphH << " " << kGlyphW << " " << ds.size() << "\n";
  for (const auto& g : ds.glyphs) {
    f << g.label;
    for (double v : g.pixels.data) f << " " << format_double_17(v);
    f << "\n";
  }
}

GlyphDataset load_dataset(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("cannot read dataset: " + path);
  std::string magic, version;
  size_t h = 0, w = 0, n = 0;
  f >> magic >> version >> h >> w >> n;
  if (magic != "glyphs" || version != "v1")
    throw std::runtime_error("bad dataset header in " + path);
  if (h != kGlyphH || w != kGlyphW)
    throw std::runtime_error("unsupported glyph size in " + path);
  GlyphDataset ds;
  ds.glyphs.reserve(n);
  for (size_t i = 0; i < n; ++i) {
    Glyph g;
    if (!(f >> g.label)) throw std::runtime_error("truncated dataset: " + path);
    g.pixels = Tensor::zeros({h * w});
    for (double& v : g.pixels.data)
      if (!(f >> v)) throw std::runtime_error("truncated dataset: " + path);
    ds.glyphs.push_back(std::move(g));
  }
  return ds;
}

size_t nearest_index(const Tensor& image, const GlyphDataset& train) {
  if (train.glyphs.empty()) throw std::runtime_error("nearest_label: empty dataset");
  size_t best = 0;
  double best_sse = 1e300;
  const size_t n = image.size();
  for (size_t i = 0; i < train.glyphs.size(); ++i) {
    const Tensor& t = train.glyphs[i].pixels;
    double sse = 0.0;
    for (size_t j = 0; j < n; ++j) {
      const double d = image.data[j] - t.data[j];
      sse += d * d;
      if (sse >= best_sse) break;
    }
    if (sse < best_sse) {
      best_sse = sse;
      best = i;
    }
  }
  return best;
}

int nearest_label(const Tensor& image, const GlyphDataset& train) {
  return train.glyphs[nearest_index(image, train)].label;
}

int64_t digits_to_number(const std::vector<int>& digits) {
  int64_t acc = 0;
  for (int d : digits) acc = acc * 10 + d;
  return acc;
}

double generative_accuracy(const std::vector<GenerativeSample>& samples,
                           const GlyphDataset& train, GenTask task) {
  if (samples.empty()) return 0.0;
  size_t hits = 0;
  for (const auto& s : samples) {
    std::vector<int> recovered;
    recovered.reserve(s.images.size());
    for (const auto& im : s.images) recovered.push_back(nearest_label(im, train));
    bool ok = false;
    switch (task) {
      case GenTask::Digit:
        ok = recovered.size() == 1 && !s.intended_labels.empty() &&
             recovered[0] == s.intended_labels[0];
        break;
      case GenTask::Add: {
        int64_t sum = 0;
        for (int d : recovered) sum += d;
        ok = sum == s.target;
        break;
      }
      case GenTask::MultiAdd: {
        if (recovered.size() % 2 != 0) break;
        const size_t half = recovered.size() / 2;
        std::vector<int> a(recovered.begin(), recovered.begin() + half);
        std::vector<int> b(recovered.begin() + half, recovered.end());
        ok = digits_to_number(a) + digits_to_number(b) == s.target;
        break;
      }
    }
    if (ok) ++hits;
  }
  return static_cast<double>(hits) / static_cast<double>(samples.size());
}

std::vector<MaskedAdditionQuery> make_masked_queries(size_t n, uint64_t seed,
                                                     size_t mask_count) {
  if (mask_count > 8) throw std::runtime_error("mask count above 8");
  std::vector<MaskedAdditionQuery> out;
  out.reserve(n);
  for (size_t qi = 0; qi < n; ++qi) {
    RngStream rng(mix_seed(seed, "masked-query", qi));
    MaskedAdditionQuery q;
    std::vector<int> all(8);
    for (int& d : all) d = static_cast<int>(rng.next_int(0, 9));
    for (size_t i = 0; i < 4; ++i) q.digits_a[i] = all[i];
    for (size_t i = 0; i < 4; ++i) q.digits_b[i] = all[4 + i];
    q.target = digits_to_number({all.begin(), all.begin() + 4}) +
               digits_to_number({all.begin() + 4, all.end()});
    // Choose mask positions without replacement.
    std::vector<size_t> pos{0, 1, 2, 3, 4, 5, 6, 7};
    for (size_t i = 0; i < mask_count; ++i) {
      const size_t j = i + static_cast<size_t>(rng.next_int(0, static_cast<int64_t>(7 - i)));
      std::swap(pos[i], pos[j]);
    }
    q.masked_positions.assign(pos.begin(), pos.begin() + mask_count);
    std::sort(q.masked_positions.begin(), q.masked_positions.end());
    for (size_t p = 0; p < 8; ++p) {
      const bool masked = std::find(q.masked_positions.begin(), q.masked_positions.end(),
                                    p) != q.masked_positions.end();
      if (masked) continue;
      const uint64_t gseed = mix_seed(seed, "masked-glyph", qi * 8 + p);
      q.images[p] = render_glyph(all[p], gseed);
    }
    out.push_back(std::move(q));
  }
  return out;
}

double random_guess_baseline(const MaskedAdditionQuery& q) {
  const size_t m = q.masked_positions.size();
  size_t total = 1;
  for (size_t i = 0; i < m; ++i) total *= 10;
  size_t hits = 0;
  std::vector<int> digits(8);
  for (size_t i = 0; i < 4; ++i) digits[i] = q.digits_a[i];
  for (size_t i = 0; i < 4; ++i) digits[4 + i] = q.digits_b[i];
  for (size_t assign = 0; assign < total; ++assign) {
    size_t a = assign;
    for (size_t i = 0; i < m; ++i) {
      digits[q.masked_positions[i]] = static_cast<int>(a % 10);
      a /= 10;
    }
    const int64_t lhs = digits_to_number({digits.begin(), digits.begin() + 4});
    const int64_t rhs = digits_to_number({digits.begin() + 4, digits.end()});
    if (lhs + rhs == q.target) ++hits;
  }
  return static_cast<double>(hits) / static_cast<double>(total);
}

}  // namespace protolog
