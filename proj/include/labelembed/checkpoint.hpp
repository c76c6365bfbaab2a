#pragma once

#include <filesystem>
#include <iosfwd>

#include "labelembed/net.hpp"

namespace labelembed {

inline constexpr int kCheckpointVersion = 1;

/// Text checkpoint: NetConfig followed by every tensor in zip_tensors order.
/// Layout is described in docs/checkpoint_format.md.
void write_checkpoint(std::ostream& out, const Parameters<double>& params);
void save_checkpoint(const std::filesystem::path& file, const Parameters<double>& params);

/// Throws ValidationError on any malformed, truncated, or mis-shaped record.
Parameters<double> read_checkpoint(std::istream& in);
Parameters<double> load_checkpoint(const std::filesystem::path& file);

}  // namespace labelembed
