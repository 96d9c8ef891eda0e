#pragma once

#include <filesystem>
#include <string>

#include "ctree/tree.hpp"

namespace ctree {

inline constexpr int kSchemaVersion = 2;

// On-disk layout under <dir>:
//   manifest.json              canonical JSON (sorted keys), schema_version
//   embeddings/<token>.bin     vector file, one per learned token
//   images/<node-id>/<n>.<ext> vector files (mock) or copied image files
//
// Version 1 archives (no checksums) are migrated on load.

/// Writes to a temporary sibling directory and renames it into place.
void save_tree(const ConceptTree& tree, const std::filesystem::path& dir);

/// Throws Error(io), Error(checksum) or Error(schema_version).
ConceptTree load_tree(const std::filesystem::path& dir);

/// The manifest document for a tree; identical trees give identical text.
std::string manifest_text(const ConceptTree& tree);

}  // namespace ctree
