#ifndef GEOINV_IO_HPP
#define GEOINV_IO_HPP

#include <cstring>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "geoinv/field_store.hpp"
#include "geoinv/inverse.hpp"

namespace geoinv {

/// Model / slice file, 64-byte header:
///   0  magic "GEOINVM1"
///   8  u32 format version (1)
///  12  u32 precision (1 = float64, 2 = float32)
///  16  u32 dimension (1..3)
///  20  u32 reserved
///  24  u64 n[0], n[1], n[2] (unused axes 1)
///  48  u64 value count
///  56  8 bytes reserved
/// followed by the little-endian payload, first axis fastest.
struct ModelFile {
  int dim = 2;
  std::array<Index, 3> n{1, 1, 1};
  Precision precision = Precision::full;
  Vector values;
};

inline constexpr std::array<char, 8> kModelMagic{'G', 'E', 'O', 'I', 'N', 'V', 'M', '1'};

inline void write_model_file(const std::filesystem::path& path, const ModelFile& m) {
  const auto count = static_cast<std::uint64_t>(m.n[0] * m.n[1] * m.n[2]);
  require(count == m.values.size(), Errc::dimension_mismatch, "model values do not match the dimensions");
  require(m.dim >= 1 && m.dim <= 3, Errc::format, "model dimension must be 1..3");
  std::array<char, 64> h{};
  std::memcpy(h.data(), kModelMagic.data(), 8);
  detail::put_u32(h.data() + 8, 1);
  detail::put_u32(h.data() + 12, static_cast<std::uint32_t>(m.precision));
  detail::put_u32(h.data() + 16, static_cast<std::uint32_t>(m.dim));
  for (int a = 0; a < 3; ++a) detail::put_u64(h.data() + 24 + 8 * a, static_cast<std::uint64_t>(m.n[a]));
  detail::put_u64(h.data() + 48, count);
  std::ofstream f(path, std::ios::binary);
  require(f.good(), Errc::io, "cannot open " + path.string() + " for writing");
  f.write(h.data(), 64);
  if (m.precision == Precision::full) {
    f.write(reinterpret_cast<const char*>(m.values.data()), static_cast<std::streamsize>(8 * count));
  } else {
    std::vector<float> s(m.values.begin(), m.values.end());
    f.write(reinterpret_cast<const char*>(s.data()), static_cast<std::streamsize>(4 * count));
  }
  require(f.good(), Errc::io, "write failed for " + path.string());
}

inline ModelFile read_model_file(const std::filesystem::path& path) {
  std::ifstream f(path, std::ios::binary);
  require(f.good(), Errc::io, "cannot open " + path.string());
  std::array<char, 64> h{};
  f.read(h.data(), 64);
  require(f.gcount() == 64 && std::memcmp(h.data(), kModelMagic.data(), 8) == 0, Errc::format,
          path.string() + ": not a model file");
  require(detail::get_u32(h.data() + 8) == 1, Errc::format, path.string() + ": unsupported version");
  ModelFile m;
  const auto prec = detail::get_u32(h.data() + 12);
  require(prec == 1 || prec == 2, Errc::format, path.string() + ": bad precision tag");
  m.precision = static_cast<Precision>(prec);
  m.dim = static_cast<int>(detail::get_u32(h.data() + 16));
  require(m.dim >= 1 && m.dim <= 3, Errc::format, path.string() + ": bad dimension");
  for (int a = 0; a < 3; ++a) m.n[a] = static_cast<Index>(detail::get_u64(h.data() + 24 + 8 * a));
  const auto count = detail::get_u64(h.data() + 48);
  require(count == static_cast<std::uint64_t>(m.n[0] * m.n[1] * m.n[2]), Errc::format,
          path.string() + ": header count disagrees with dimensions");
  m.values.resize(count);
  if (m.precision == Precision::full) {
    f.read(reinterpret_cast<char*>(m.values.data()), static_cast<std::streamsize>(8 * count));
    require(static_cast<std::uint64_t>(f.gcount()) == 8 * count, Errc::format, path.string() + ": truncated payload");
  } else {
    std::vector<float> s(count);
    f.read(reinterpret_cast<char*>(s.data()), static_cast<std::streamsize>(4 * count));
    require(static_cast<std::uint64_t>(f.gcount()) == 4 * count, Errc::format, path.string() + ": truncated payload");
    std::copy(s.begin(), s.end(), m.values.begin());
  }
  return m;
}

inline ModelFile model_file_for(const TensorMesh& mesh, Vector values) {
  return {mesh.dim(), {mesh.n(0), mesh.n(1), mesh.n(2)}, Precision::full, std::move(values)};
}

/// Orthogonal slice: the cells with subscript `index` along `axis`, laid out
/// over the remaining axes (first remaining axis fastest).
inline ModelFile model_slice(const TensorMesh& mesh, std::span<const double> m, int axis, Index index) {
  require(static_cast<Index>(m.size()) == mesh.num_cells(), Errc::dimension_mismatch, "model length");
  require(axis >= 0 && axis < mesh.dim(), Errc::invalid_argument, "slice axis outside the mesh dimension");
  require(index >= 0 && index < mesh.n(axis), Errc::invalid_argument, "slice index outside the axis");
  ModelFile s;
  s.dim = mesh.dim() - 1;
  int k = 0;
  for (int a = 0; a < mesh.dim(); ++a)
    if (a != axis) s.n[k++] = mesh.n(a);
  for (Index c = 0; c < mesh.num_cells(); ++c)
    if (mesh.cell_subscript(c)[axis] == index) s.values.push_back(m[c]);
  return s;
}

inline void write_slice_csv(const std::filesystem::path& path, const ModelFile& s) {
  std::ofstream f(path);
  require(f.good(), Errc::io, "cannot open " + path.string());
  f << "i,j,value\n";
  f.precision(17);
  for (Index j = 0; j < s.n[1]; ++j)
    for (Index i = 0; i < s.n[0]; ++i) f << i << ',' << j << ',' << s.values[i + s.n[0] * j] << '\n';
  require(f.good(), Errc::io, "write failed for " + path.string());
}

inline const char* convergence_header() {
  return "iteration,stage,objective,misfit,reg,proj_grad_norm,pcg_iters,ls_steps,active_count,wall_seconds";
}

inline std::string format_double(double x) {
  std::ostringstream s;
  s.precision(17);
  s << x;
  return s.str();
}

/// Convergence history; one row per accepted Gauss-Newton iteration.
/// With record_wall_time off the wall_seconds column is written as 0 so
/// repeated runs produce identical files.
inline void write_convergence_csv(const std::filesystem::path& path, const std::vector<GNIterationRecord>& records,
                                  bool record_wall_time = true) {
  std::ofstream f(path);
  require(f.good(), Errc::io, "cannot open " + path.string());
  f << convergence_header() << '\n';
  for (const auto& r : records)
    f << r.iteration << ',' << r.stage << ',' << format_double(r.objective) << ',' << format_double(r.misfit) << ','
      << format_double(r.reg) << ',' << format_double(r.proj_grad_norm) << ',' << r.pcg_iters << ',' << r.ls_steps
      << ',' << r.active_count << ',' << (record_wall_time ? format_double(r.wall_seconds) : "0") << '\n';
  require(f.good(), Errc::io, "write failed for " + path.string());
}

inline std::vector<GNIterationRecord> read_convergence_csv(const std::filesystem::path& path) {
  std::ifstream f(path);
  require(f.good(), Errc::io, "cannot open " + path.string());
  std::string line;
  std::getline(f, line);
  require(line == convergence_header(), Errc::format, path.string() + ": unexpected convergence header");
  std::vector<GNIterationRecord> out;
  while (std::getline(f, line)) {
    if (line.empty()) continue;
    std::istringstream s(line);
    std::string cell;
    std::vector<std::string> c;
    while (std::getline(s, cell, ',')) c.push_back(cell);
    require(c.size() == 10, Errc::format, path.string() + ": malformed row");
    GNIterationRecord r;
    r.iteration = std::stoi(c[0]);
    r.stage = std::stoi(c[1]);
    r.objective = std::stod(c[2]);
    r.misfit = std::stod(c[3]);
    r.reg = std::stod(c[4]);
    r.proj_grad_norm = std::stod(c[5]);
    r.pcg_iters = std::stoi(c[6]);
    r.ls_steps = std::stoi(c[7]);
    r.active_count = std::stoll(c[8]);
    r.wall_seconds = std::stod(c[9]);
    out.push_back(r);
  }
  return out;
}

}  // namespace geoinv

#endif  // GEOINV_IO_HPP
