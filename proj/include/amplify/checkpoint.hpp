#pragma once

#include <map>
#include <string>
#include <vector>

#include "amplify/tensor.hpp"

namespace amplify {

/// Checkpoints are a directory: one raw binary file per parameter
/// (header: u32 rank, u64 dims; payload: little-endian float64), plus a
/// plain-text metadata file of key=value lines.
namespace checkpoint {

using Metadata = std::map<std::string, std::string>;

void save(const std::string& dir, const std::vector<Parameter>& params,
          const Metadata& meta);

Metadata load_metadata(const std::string& dir);

/// Loads saved payloads into matching parameters. Every parameter must have
/// a file of identical shape; mismatches raise DataError.
void load(const std::string& dir, std::vector<Parameter>& params);

}  // namespace checkpoint

}  // namespace amplify
