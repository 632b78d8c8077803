#pragma once

#include <cstdint>
#include <fstream>
#include <istream>
#include <ostream>
#include <string>
#include <vector>

#include "odr/core.hpp"
#include "odr/optim.hpp"

namespace odr {

namespace ckpt {

inline void write_str(std::ostream& os, const std::string& s) {
  std::uint64_t n = s.size();
  os.write(reinterpret_cast<const char*>(&n), 8);
  os.write(s.data(), static_cast<std::streamsize>(n));
}

inline std::string read_str(std::istream& is) {
  std::uint64_t n = 0;
  is.read(reinterpret_cast<char*>(&n), 8);
  std::string s(n, '\0');
  is.read(s.data(), static_cast<std::streamsize>(n));
  if (!is) throw ContractViolation("checkpoint: truncated string");
  return s;
}

inline void write_tensor(std::ostream& os, const Tensor& t) {
  std::uint32_t rank = static_cast<std::uint32_t>(t.shape().size());
  os.write(reinterpret_cast<const char*>(&rank), 4);
  for (int d : t.shape()) {
    std::int32_t v = d;
    os.write(reinterpret_cast<const char*>(&v), 4);
  }
  os.write(reinterpret_cast<const char*>(t.data()),
           static_cast<std::streamsize>(t.size() * sizeof(double)));
}

inline Tensor read_tensor(std::istream& is) {
  std::uint32_t rank = 0;
  is.read(reinterpret_cast<char*>(&rank), 4);
  std::vector<int> shape(rank);
  for (std::uint32_t i = 0; i < rank; ++i) {
    std::int32_t v = 0;
    is.read(reinterpret_cast<char*>(&v), 4);
    shape[i] = v;
  }
  Tensor t(shape);
  is.read(reinterpret_cast<char*>(t.data()),
          static_cast<std::streamsize>(t.size() * sizeof(double)));
  if (!is) throw ContractViolation("checkpoint: truncated tensor");
  return t;
}

}  // namespace ckpt

inline void write_params(std::ostream& os, const std::vector<Param>& params) {
  std::uint64_t n = params.size();
  os.write(reinterpret_cast<const char*>(&n), 8);
  for (const Param& p : params) {
    ckpt::write_str(os, p.name);
    ckpt::write_str(os, p.group);
    ckpt::write_tensor(os, p.value);
  }
}

inline std::vector<Param> read_params(std::istream& is) {
  std::uint64_t n = 0;
  is.read(reinterpret_cast<char*>(&n), 8);
  if (!is) throw ContractViolation("checkpoint: truncated header");
  std::vector<Param> out;
  out.reserve(n);
  for (std::uint64_t i = 0; i < n; ++i) {
    Param p;
    p.name = ckpt::read_str(is);
    p.group = ckpt::read_str(is);
    p.value = ckpt::read_tensor(is);
    p.grad = Tensor::zeros_like(p.value);
    out.push_back(std::move(p));
  }
  return out;
}

inline void save_params_file(const std::string& path, const std::vector<Param>& params,
                             const std::string& provenance = "") {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw ContractViolation("cannot open for write: " + path);
  os.write("ODCKPT1\0", 8);
  ckpt::write_str(os, provenance);
  write_params(os, params);
}

inline std::vector<Param> load_params_file(const std::string& path,
                                           std::string* provenance = nullptr) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw ContractViolation("cannot open: " + path);
  char magic[8];
  is.read(magic, 8);
  if (!is || std::string(magic, 7) != "ODCKPT1")
    throw ContractViolation("bad checkpoint magic: " + path);
  std::string prov = ckpt::read_str(is);
  if (provenance) *provenance = prov;
  return read_params(is);
}

}  // namespace odr
