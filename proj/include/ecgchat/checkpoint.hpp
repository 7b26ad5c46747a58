// Copyright 2026 The ecgchat Authors
// SPDX-License-Identifier: Apache-2.0

// Named-tensor archive:
//
//   offset 0   8 bytes  magic "ECGCKPT\0"
//   offset 8   u32 LE   format version (currently 1)
//   offset 12  u64 LE   header length H
//   offset 20  H bytes  UTF-8 JSON header {"config": ..., "tensors": [...]}
//   then       tensor payloads, float64 LE, row-major, at the offsets listed
//              in the header (relative to the end of the header)

#pragma once

#include "ecgchat/tensor.hpp"

#include <nlohmann/json.hpp>

#include <filesystem>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace ecgchat::checkpoint {

inline constexpr std::uint32_t kArchiveVersion = 1;

class CheckpointError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

struct Archive {
    nlohmann::json config;
    std::vector<std::pair<std::string, Matrix>> tensors;

    const Matrix* find(const std::string& name) const;
};

void save(const std::filesystem::path& path, const Archive& archive);
Archive load(const std::filesystem::path& path);

}  // namespace ecgchat::checkpoint
