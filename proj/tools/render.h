#pragma once

#include <filesystem>
#include <vector>

#include "tightcap/mesh.h"

namespace tightcap::cli {

// Orthographic front view (camera on -y looking along +y, z up) with a depth
// buffer and Lambert shading, written as binary PPM. Per-vertex labels pick
// the base color (body gray, upper blue, lower green); mesh colors are used
// otherwise.
void render_front_view(const TriMesh& mesh, const std::filesystem::path& path, int height = 512,
                       const std::vector<int>& labels = {});

}  // namespace tightcap::cli
