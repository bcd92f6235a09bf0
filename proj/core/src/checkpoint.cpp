#include "crcfp/checkpoint.hpp"

#include <array>
#include <bit>
#include <cstring>
#include <fstream>

namespace crcfp {
namespace {

static_assert(std::endian::native == std::endian::little,
              "checkpoint I/O assumes a little-endian host");

constexpr std::array<char, 8> kMagic{'C', 'R', 'C', 'F', 'P', 'C', 'K', 'P'};

class Writer {
 public:
  explicit Writer(std::ostream& out) : out_(out) {}

  template <typename T>
  void pod(const T& v) {
    out_.write(reinterpret_cast<const char*>(&v), sizeof(T));
  }
  void string(const std::string& s) {
    pod(static_cast<std::uint32_t>(s.size()));
    out_.write(s.data(), static_cast<std::streamsize>(s.size()));
  }
  void tensor(const std::string& name, const Tensor& t) {
    string(name);
    const Shape& s = t.shape();
    for (int d : {s.n, s.h, s.w, s.c}) pod(static_cast<std::int32_t>(d));
    out_.write(reinterpret_cast<const char*>(t.data()),
               static_cast<std::streamsize>(t.size() * sizeof(double)));
  }

 private:
  std::ostream& out_;
};

class Reader {
 public:
  Reader(std::istream& in, std::string file) : in_(in), file_(std::move(file)) {}

  template <typename T>
  T pod() {
    T v{};
    in_.read(reinterpret_cast<char*>(&v), sizeof(T));
    check();
    return v;
  }
  std::string string() {
    const auto n = pod<std::uint32_t>();
    std::string s(n, '\0');
    in_.read(s.data(), n);
    check();
    return s;
  }
  std::pair<std::string, Tensor> tensor() {
    std::string name = string();
    Shape s;
    s.n = pod<std::int32_t>();
    s.h = pod<std::int32_t>();
    s.w = pod<std::int32_t>();
    s.c = pod<std::int32_t>();
    Tensor t(s);
    in_.read(reinterpret_cast<char*>(t.data()), static_cast<std::streamsize>(t.size() * sizeof(double)));
    check();
    return {std::move(name), std::move(t)};
  }

 private:
  void check() {
    if (!in_) throw Error("truncated checkpoint " + file_);
  }
  std::istream& in_;
  std::string file_;
};

}  // namespace

void save_checkpoint(const std::filesystem::path& file, const Checkpoint& ckpt) {
  std::ofstream out(file, std::ios::binary);
  if (!out) throw Error("cannot write checkpoint " + file.string());
  Writer w(out);
  out.write(kMagic.data(), kMagic.size());
  w.pod(Checkpoint::kSchema);
  w.pod(ckpt.epoch);
  w.pod(ckpt.step);
  w.string(ckpt.config_yaml);
  for (const auto* group : {&ckpt.parameters, &ckpt.optimizer_state}) {
    w.pod(static_cast<std::uint32_t>(group->size()));
    for (const auto& [name, t] : *group) w.tensor(name, t);
  }
  w.pod(static_cast<std::uint8_t>(ckpt.bank_capacity.has_value()));
  if (ckpt.bank_capacity) {
    w.pod(static_cast<std::uint64_t>(*ckpt.bank_capacity));
    w.pod(static_cast<std::uint32_t>(ckpt.bank.size()));
    for (const BankEntry& e : ckpt.bank) {
      w.pod(static_cast<std::int32_t>(e.pseudo_label));
      w.pod(e.confidence);
      w.pod(static_cast<std::int64_t>(e.step));
      w.pod(static_cast<std::uint32_t>(e.vector.size()));
      out.write(reinterpret_cast<const char*>(e.vector.data()),
                static_cast<std::streamsize>(e.vector.size() * sizeof(double)));
    }
  }
  if (!out) throw Error("failed writing checkpoint " + file.string());
}

Checkpoint load_checkpoint(const std::filesystem::path& file) {
  std::ifstream in(file, std::ios::binary);
  if (!in) throw Error("cannot open checkpoint " + file.string());
  std::array<char, 8> magic{};
  in.read(magic.data(), magic.size());
  if (!in || magic != kMagic) throw Error(file.string() + " is not a checkpoint");
  Reader r(in, file.string());
  Checkpoint ckpt;
  ckpt.schema = r.pod<std::uint32_t>();
  if (ckpt.schema != Checkpoint::kSchema) {
    throw Error("checkpoint schema " + std::to_string(ckpt.schema) + " unsupported (expected " +
                std::to_string(Checkpoint::kSchema) + ")");
  }
  ckpt.epoch = r.pod<std::int64_t>();
  ckpt.step = r.pod<std::int64_t>();
  ckpt.config_yaml = r.string();
  for (auto* group : {&ckpt.parameters, &ckpt.optimizer_state}) {
    const auto n = r.pod<std::uint32_t>();
    for (std::uint32_t i = 0; i < n; ++i) group->push_back(r.tensor());
  }
  if (r.pod<std::uint8_t>() != 0) {
    ckpt.bank_capacity = static_cast<std::size_t>(r.pod<std::uint64_t>());
    const auto n = r.pod<std::uint32_t>();
    for (std::uint32_t i = 0; i < n; ++i) {
      BankEntry e;
      e.pseudo_label = r.pod<std::int32_t>();
      e.confidence = r.pod<double>();
      e.step = r.pod<std::int64_t>();
      const auto dim = r.pod<std::uint32_t>();
      e.vector.resize(dim);
      for (double& v : e.vector) v = r.pod<double>();
      ckpt.bank.push_back(std::move(e));
    }
  }
  return ckpt;
}

}  // namespace crcfp
