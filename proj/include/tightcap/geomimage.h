#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "tightcap/template.h"

namespace tightcap {

// Named float planes over the template atlas. Texel (x, y) is stored at
// y * width + x and samples atlas point ((x + 0.5) / width, (y + 0.5) / height).
struct GeometryImage {
  int width = 0, height = 0;
  std::uint32_t uv_version = 0;
  std::vector<std::string> names;
  std::vector<std::vector<float>> planes;

  bool has(const std::string& name) const;
  int index(const std::string& name) const;  // -1 if absent
  const std::vector<float>& channel(const std::string& name) const;
  std::vector<float>& channel(const std::string& name);
  std::vector<float>& add_channel(const std::string& name);  // zero-filled
  size_t texels() const { return static_cast<size_t>(width) * static_cast<size_t>(height); }
};

// Channel names the file format accepts.
const std::vector<std::string>& known_channels();

// Per-vertex values, one column per plane name.
struct AttributeSet {
  std::vector<std::string> names;
  Eigen::MatrixXd values;  // vertices x names

  void add(const std::vector<std::string>& plane_names, const Eigen::MatrixXd& columns);
  int index(const std::string& name) const;
  Eigen::MatrixXd columns(const std::vector<std::string>& plane_names) const;
};

// position.*, normal.* and color.* of a template-topology mesh (normals are
// computed when absent, colors default to mid-gray).
AttributeSet surface_attributes(const TriMesh& mesh);

// Barycentric rasterization of every charted face; texels outside all faces
// get valid = 0 and values extended from the charts (two rings of linear
// extrapolation, then nearest-texel dilation). Normal planes are
// renormalized on valid texels.
GeometryImage rasterize_gi(const SkinnedTemplate& tpl, const AttributeSet& attrs, int resolution = 224);

// Bilinear sample of each requested plane (all but "valid" when empty) at
// every vertex's atlas position.
AttributeSet inverse_gi(const GeometryImage& gi, const SkinnedTemplate& tpl,
                        const std::vector<std::string>& plane_names = {});

// Binary "CGI1" container, little endian, float32 planes.
void write_gi(const GeometryImage& gi, const std::filesystem::path& path);
GeometryImage read_gi(const std::filesystem::path& path);
std::vector<std::uint8_t> encode_gi(const GeometryImage& gi);
GeometryImage decode_gi(const std::vector<std::uint8_t>& bytes);

// Throws ValidationError on mismatched plane sizes, unknown names, or a
// non-binary valid plane.
void validate(const GeometryImage& gi);

}  // namespace tightcap
