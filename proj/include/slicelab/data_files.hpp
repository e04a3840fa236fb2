#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "slicelab/cache_model.hpp"
#include "slicelab/slice_function.hpp"

namespace slicelab {

/// Directory holding the bundled slice-function and cache-config files.
/// Defaults to the compiled-in location; SLICELAB_DATA overrides it.
std::filesystem::path default_data_dir();

/// Parses a slice-function file. Masks in the file follow the table print
/// convention; for non-linear records the loader adds the implicit cache-line
/// index term (bit 6+j on mask j) so the returned specs are self-contained.
std::vector<SliceFunctionSpec> load_slice_functions(const std::filesystem::path& file);

/// Parses cache presets and resolves each "function" reference.
std::vector<CacheConfig> load_cache_configs(const std::filesystem::path& file,
                                            const std::vector<SliceFunctionSpec>& functions);

const SliceFunctionSpec& find_function(const std::vector<SliceFunctionSpec>& functions,
                                       const std::string& name);
const CacheConfig& find_config(const std::vector<CacheConfig>& configs, const std::string& name);

/// Masks of a spec converted back to the table print convention (identity
/// term stripped from non-linear masks).
std::vector<std::uint64_t> table_masks(const SliceFunctionSpec& spec);

/// Base sequence rendered as the tables print it: groups of four hex digits,
/// eight groups per line.
std::string format_base_sequence(const SliceFunctionSpec& spec);

std::string format_mask_hex(std::uint64_t mask, std::uint32_t phys_bits);

struct BundledData {
    std::vector<SliceFunctionSpec> functions;
    std::vector<CacheConfig> configs;
};

/// Loads both bundled files from a data directory.
BundledData load_bundled_data(const std::filesystem::path& dir);

} // namespace slicelab
