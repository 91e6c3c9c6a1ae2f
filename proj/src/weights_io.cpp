#include "avdnet/weights_io.hpp"

#include <cstdint>
#include <cstring>
#include <fstream>
#include <vector>

namespace avdnet {

namespace {

constexpr char kMagic[4] = {'A', 'V', 'D', 'N'};
constexpr std::uint32_t kVersion = 1;

void put_u32(std::ostream& out, std::uint32_t v) {
  unsigned char b[4] = {static_cast<unsigned char>(v), static_cast<unsigned char>(v >> 8),
                        static_cast<unsigned char>(v >> 16), static_cast<unsigned char>(v >> 24)};
  out.write(reinterpret_cast<const char*>(b), 4);
}

void put_f32(std::ostream& out, float f) {
  std::uint32_t v;
  std::memcpy(&v, &f, 4);
  put_u32(out, v);
}

std::uint32_t get_u32(std::istream& in) {
  unsigned char b[4];
  in.read(reinterpret_cast<char*>(b), 4);
  if (!in) throw std::runtime_error("truncated weights file");
  return static_cast<std::uint32_t>(b[0]) | (static_cast<std::uint32_t>(b[1]) << 8) |
         (static_cast<std::uint32_t>(b[2]) << 16) | (static_cast<std::uint32_t>(b[3]) << 24);
}

float get_f32(std::istream& in) {
  const std::uint32_t v = get_u32(in);
  float f;
  std::memcpy(&f, &v, 4);
  return f;
}

struct Record {
  std::string name;
  std::vector<std::size_t> dims;
  std::vector<float> data;
};

void write_record(std::ostream& out, const std::string& name,
                  const std::vector<std::size_t>& dims, const float* data, std::size_t n) {
  put_u32(out, static_cast<std::uint32_t>(name.size()));
  out.write(name.data(), static_cast<std::streamsize>(name.size()));
  put_u32(out, static_cast<std::uint32_t>(dims.size()));
  for (std::size_t d : dims) put_u32(out, static_cast<std::uint32_t>(d));
  for (std::size_t i = 0; i < n; ++i) put_f32(out, data[i]);
}

Record read_record(std::istream& in) {
  Record r;
  const std::uint32_t name_len = get_u32(in);
  if (name_len > 4096) throw std::runtime_error("corrupt weights file: implausible name length");
  r.name.resize(name_len);
  in.read(r.name.data(), name_len);
  if (!in) throw std::runtime_error("truncated weights file");
  const std::uint32_t rank = get_u32(in);
  if (rank > 8) throw std::runtime_error("corrupt weights file: implausible tensor rank");
  std::size_t n = 1;
  for (std::uint32_t i = 0; i < rank; ++i) {
    const std::uint32_t d = get_u32(in);
    r.dims.push_back(d);
    n *= d;
  }
  r.data.resize(n);
  for (std::size_t i = 0; i < n; ++i) r.data[i] = get_f32(in);
  return r;
}

std::vector<Record> read_all(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open weights file: " + path);
  char magic[4];
  in.read(magic, 4);
  if (!in || std::memcmp(magic, kMagic, 4) != 0)
    throw std::runtime_error("weights file magic mismatch: " + path);
  const std::uint32_t version = get_u32(in);
  if (version != kVersion)
    throw std::runtime_error("unsupported weights version " + std::to_string(version));
  const std::uint32_t count = get_u32(in);
  get_u32(in);  // reserved
  std::vector<Record> records;
  records.reserve(count);
  for (std::uint32_t i = 0; i < count; ++i) records.push_back(read_record(in));
  return records;
}

void fill_from_records(Network<float>& net, const std::vector<Record>& records) {
  std::size_t idx = 0;
  visit_params(net, true, [&](const ParamRef<float>& p) {
    if (idx >= records.size()) throw std::runtime_error("weights file misses tensor " + p.name);
    const Record& r = records[idx++];
    if (r.name != p.name)
      throw std::runtime_error("unexpected tensor '" + r.name + "', expected '" + p.name + "'");
    if (r.dims != p.dims)
      throw std::runtime_error("tensor dimension mismatch for " + p.name);
    std::copy(r.data.begin(), r.data.end(), p.data);
  });
  for (; idx < records.size(); ++idx) {
    if (records[idx].name.rfind("meta.", 0) != 0)
      throw std::runtime_error("unexpected tensor '" + records[idx].name + "' after layer tensors");
  }
}

const Record* find(const std::vector<Record>& records, const std::string& name) {
  for (const auto& r : records)
    if (r.name == name) return &r;
  return nullptr;
}

}  // namespace

void save_weights(const Network<float>& net, const std::string& path, const AnchorSet* anchors) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot open weights file for writing: " + path);

  std::uint32_t count = 0;
  visit_params(const_cast<Network<float>&>(net), true, [&](const ParamRef<float>&) { ++count; });
  count += 4;  // meta.input_size, meta.classes, meta.num_anchors, meta.widths
  if (anchors) ++count;

  out.write(kMagic, 4);
  put_u32(out, kVersion);
  put_u32(out, count);
  put_u32(out, 0);

  visit_params(const_cast<Network<float>&>(net), true, [&](const ParamRef<float>& p) {
    write_record(out, p.name, p.dims, p.data, p.size);
  });

  const auto& spec = net.spec;
  float v = static_cast<float>(spec.input_size);
  write_record(out, "meta.input_size", {1}, &v, 1);
  v = static_cast<float>(spec.num_classes);
  write_record(out, "meta.classes", {1}, &v, 1);
  v = static_cast<float>(spec.num_anchors);
  write_record(out, "meta.num_anchors", {1}, &v, 1);
  float widths[7];
  for (int i = 0; i < 7; ++i) widths[i] = static_cast<float>(spec.widths[i]);
  write_record(out, "meta.widths", {7}, widths, 7);
  if (anchors) {
    std::vector<float> a;
    for (const auto& bs : anchors->anchors) {
      a.push_back(static_cast<float>(bs.w));
      a.push_back(static_cast<float>(bs.h));
    }
    write_record(out, "meta.anchors", {anchors->k(), 2}, a.data(), a.size());
  }
  if (!out) throw std::runtime_error("failed writing weights file: " + path);
}

Network<float> load_weights(const NetworkSpec& spec, const std::string& path) {
  const auto records = read_all(path);
  Network<float> net = build_network<float>(spec);
  fill_from_records(net, records);
  return net;
}

LoadedModel load_model(const std::string& path) {
  const auto records = read_all(path);
  const Record* rin = find(records, "meta.input_size");
  const Record* rcl = find(records, "meta.classes");
  const Record* rna = find(records, "meta.num_anchors");
  const Record* rw = find(records, "meta.widths");
  if (!rin || !rcl || !rna || !rw || rw->data.size() != 7)
    throw std::runtime_error("weights file missing model metadata: " + path);

  NetworkSpec spec;
  spec.input_size = static_cast<int>(rin->data[0]);
  spec.num_classes = static_cast<int>(rcl->data[0]);
  spec.num_anchors = static_cast<int>(rna->data[0]);
  for (int i = 0; i < 7; ++i) spec.widths[i] = static_cast<int>(rw->data[i]);

  LoadedModel model{build_network<float>(spec), std::nullopt};
  fill_from_records(model.net, records);
  if (const Record* ra = find(records, "meta.anchors")) {
    AnchorSet set;
    for (std::size_t i = 0; i + 1 < ra->data.size(); i += 2)
      set.anchors.push_back(BoxShape{ra->data[i], ra->data[i + 1]});
    model.anchors = std::move(set);
  }
  return model;
}

}  // namespace avdnet
