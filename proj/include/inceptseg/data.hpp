#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "inceptseg/tensor.hpp"

namespace iseg {

struct SamplePair {
  Tensor4 image;  // (1,h,w,c), values in [0,1]
  Tensor4 mask;   // (1,h,w,1), values in {0,1}
  std::string source_id;
};

// PGM (P5), PPM (P6) with maxval <= 255, or 8-bit gray/RGB PNG.
// Values are scaled to [0,1]; result shape (1,h,w,c) with c in {1,3}.
Tensor4 load_image(const std::string& path);

// P5 with maxval up to 65535 (big-endian payload per Netpbm), for
// reading back 16-bit probability maps.
Tensor4 load_pgm16(const std::string& path);

void save_pgm(const std::string& path, const Tensor4& gray);    // 8-bit, round(v*255)
void save_pgm16(const std::string& path, const Tensor4& gray);  // 16-bit, round(v*65535)
void save_ppm(const std::string& path, const Tensor4& rgb);     // 8-bit RGB

Tensor4 to_grayscale(const Tensor4& rgb);

std::vector<SamplePair> extract_random_patches(const std::vector<SamplePair>& pairs,
                                               int patch_size, int total_count,
                                               uint64_t seed);

std::pair<std::vector<SamplePair>, std::vector<SamplePair>> split_train_val(
    const std::vector<SamplePair>& items, double val_fraction, uint64_t seed);

std::vector<SamplePair> resize_dataset(const std::vector<SamplePair>& pairs, int h, int w);

// Noisy background plus bright elliptical blobs; mask is the exact blob
// support. "small": many radius-2..4 blobs; "large": one radius-ceil(size/4) blob.
std::vector<SamplePair> generate_synthetic(int count, int size,
                                           const std::string& structure_scale,
                                           uint64_t seed);

// <root>/images/*.{pgm,ppm,png} with <root>/masks/* matching stems.
std::vector<SamplePair> load_dataset_dir(const std::string& root, bool grayscale);

}  // namespace iseg
