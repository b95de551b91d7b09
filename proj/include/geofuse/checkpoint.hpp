#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "geofuse/tensor.hpp"

namespace geofuse {

// Checkpoint layout: one "GFT1" tensor file per named parameter plus a
// manifest listing name -> file along with the iteration counter and the
// current learning rate. The tensor format is bit-exact:
//   magic "GFT1" | u8 dtype (0 = fp32) | u8 ndim | u32le dims[ndim] | payload

void save_tensor(const std::filesystem::path& file, const Tensor& t);
Tensor load_tensor(const std::filesystem::path& file);

struct Checkpoint {
    std::map<std::string, Tensor> tensors;
    int64_t iteration = 0;
    double lr = 0.0;
};

void save_checkpoint(const std::filesystem::path& dir,
                     const std::vector<const Param*>& params, int64_t iteration, double lr);
Checkpoint load_checkpoint(const std::filesystem::path& dir);

}  // namespace geofuse
