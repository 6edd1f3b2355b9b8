#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "protolog/tensor.hpp"

namespace protolog {

constexpr int kGlyphH = 16;
constexpr int kGlyphW = 16;

struct Glyph {
  Tensor pixels;  // [256], values in [0,1]
  int label = 0;
  uint64_t instance_seed = 0;
};

struct GlyphDataset {
  std::vector<Glyph> glyphs;
  std::string split;  // "train" | "test"
  uint64_t master_seed = 0;
  size_t size() const { return glyphs.size(); }
};

// Noiseless rendering of a digit: the 5x7 font scaled into a 10x12 box
// centred in the 16x16 frame.
Tensor render_canonical(int digit);

// Deterministic instance: integer shift in {-2..2}^2, multiplicative
// intensity jitter in [0.8, 1.2], additive pixel noise sigma = 0.1, clamped.
Tensor render_glyph(int digit, uint64_t instance_seed);

// Labels uniform over 0..9; per-instance streams derived from (master seed,
// split, index), so regeneration is bit-identical and splits are disjoint.
GlyphDataset generate_dataset(size_t n, const std::string& split, uint64_t master_seed);

void save_dataset(const GlyphDataset& ds, const std::string& path);
GlyphDataset load_dataset(const std::string& path);

// Label of the training glyph with minimal MSE; ties broken by lowest index.
int nearest_label(const Tensor& image, const GlyphDataset& train);
size_t nearest_index(const Tensor& image, const GlyphDataset& train);

enum class GenTask { Digit, Add, MultiAdd };

// One generated answer: the images it produced, the symbolic assignment it
// was generated under, and the task target (sum) where applicable.
struct GenerativeSample {
  std::vector<Tensor> images;
  std::vector<int> intended_labels;
  int64_t target = 0;
};

// Fraction of samples whose nearest-neighbour labels satisfy the task
// relation. Digit: recovered == intended. Add/MultiAdd: recovered digits sum
// to the target (decimal digit-list reading for MultiAdd).
double generative_accuracy(const std::vector<GenerativeSample>& samples,
                           const GlyphDataset& train, GenTask task);

struct MaskedAdditionQuery {
  std::array<int, 4> digits_a{};
  std::array<int, 4> digits_b{};
  // Images for unmasked positions (0..3 first number, 4..7 second).
  std::array<std::optional<Tensor>, 8> images;
  std::vector<size_t> masked_positions;  // exactly mask_count entries
  int64_t target = 0;
};

// Two random 4-digit numbers with glyphs from the test stream; mask_count of
// the 8 positions replaced by variables. The unmasked ground truth always
// satisfies the addition.
std::vector<MaskedAdditionQuery> make_masked_queries(size_t n, uint64_t seed,
                                                     size_t mask_count = 4);

// Probability that uniformly random digits in the masked positions satisfy
// the query's addition, by exact enumeration.
double random_guess_baseline(const MaskedAdditionQuery& q);

int64_t digits_to_number(const std::vector<int>& digits);

}  // namespace protolog
