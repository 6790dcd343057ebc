#pragma once

#include <filesystem>
#include <ostream>
#include <span>
#include <vector>

namespace uvq {

/// Entry point of the `uvq` tool. Returns 0 on success, 1 on a usage or
/// validation error and 2 on a runtime error.
int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

/// Raw little-endian f64 sample file plus its `<file>.dim` sidecar holding
/// the letter dimension.
void write_samples(const std::filesystem::path& path, std::span<const double> values, std::size_t dim);
std::vector<double> read_samples(const std::filesystem::path& path, std::size_t expected_dim);

}  // namespace uvq
