#pragma once

#include <string>
#include <utility>
#include <vector>

#include "lowlight/tensor.hpp"

namespace lowlight {

// LLTC container: a small stable format for named double tensors plus a JSON
// metadata blob. Layout (little-endian):
//   magic "LLTC" | u32 version | u64 meta_len | meta (UTF-8 JSON)
//   u32 n_tensors | per tensor: u32 name_len | name | u32 ndim | u64 dims... | f64 data...
struct TensorFile {
    std::string meta_json;  // "{}" when absent
    std::vector<std::pair<std::string, Tensor>> tensors;

    const Tensor* find(const std::string& name) const;
};

void save_tensor_file(const std::string& path, const TensorFile& tf);
TensorFile load_tensor_file(const std::string& path);

}  // namespace lowlight
