#include "vmt/checkpoint.hpp"

#include <cstdio>
#include <cstring>
#include <fstream>
#include <sstream>

#include "vmt/errors.hpp"

namespace vmt {

namespace {

constexpr char kMagic[8] = {'V', 'M', 'T', 'C', 'K', 'P', 'T', '1'};

void write_u64(std::ostream& os, uint64_t v) {
  os.write(reinterpret_cast<const char*>(&v), sizeof(v));
}

uint64_t read_u64(std::istream& is, const std::string& path) {
  uint64_t v = 0;
  is.read(reinterpret_cast<char*>(&v), sizeof(v));
  if (!is) throw IoError("checkpoint: truncated file '" + path + "'");
  return v;
}

void write_str(std::ostream& os, const std::string& s) {
  write_u64(os, s.size());
  os.write(s.data(), static_cast<std::streamsize>(s.size()));
}

std::string read_str(std::istream& is, const std::string& path) {
  const uint64_t n = read_u64(is, path);
  if (n > (1ULL << 32)) throw IoError("checkpoint: corrupt length in '" + path + "'");
  std::string s(n, '\0');
  is.read(s.data(), static_cast<std::streamsize>(n));
  if (!is) throw IoError("checkpoint: truncated file '" + path + "'");
  return s;
}

}  // namespace

std::string serialize_model_spec(const ModelSpec& spec) {
  std::ostringstream os;
  os << "input_dim=" << spec.input_dim << " classes=" << spec.classes << " g=";
  for (size_t i = 0; i < spec.g_widths.size(); ++i) os << (i ? "," : "") << spec.g_widths[i];
  os << " d=";
  for (size_t i = 0; i < spec.d_widths.size(); ++i) os << (i ? "," : "") << spec.d_widths[i];
  os << " act=" << (spec.hidden_act == Activation::relu ? "relu" : "identity");
  return os.str();
}

ModelSpec parse_model_spec(const std::string& text) {
  ModelSpec spec;
  spec.g_widths.clear();
  spec.d_widths.clear();
  std::istringstream is(text);
  std::string field;
  while (is >> field) {
    const size_t eq = field.find('=');
    if (eq == std::string::npos) throw IoError("model spec: malformed field '" + field + "'");
    const std::string key = field.substr(0, eq);
    const std::string value = field.substr(eq + 1);
    if (key == "input_dim") {
      spec.input_dim = std::strtoll(value.c_str(), nullptr, 10);
    } else if (key == "classes") {
      spec.classes = std::strtoll(value.c_str(), nullptr, 10);
    } else if (key == "g" || key == "d") {
      std::vector<int64_t>& w = key == "g" ? spec.g_widths : spec.d_widths;
      std::stringstream ss(value);
      std::string tok;
      while (std::getline(ss, tok, ',')) w.push_back(std::strtoll(tok.c_str(), nullptr, 10));
    } else if (key == "act") {
      spec.hidden_act = value == "identity" ? Activation::identity : Activation::relu;
    } else {
      throw IoError("model spec: unknown field '" + key + "'");
    }
  }
  spec.validate();
  return spec;
}

void Checkpoint::put(const std::string& name, Tensor t) { tensors_[name] = std::move(t); }

void Checkpoint::put_text(const std::string& name, std::string text) {
  texts_[name] = std::move(text);
}

void Checkpoint::put_u64(const std::string& name, uint64_t v) {
  texts_[name] = std::to_string(v);
}

bool Checkpoint::has(const std::string& name) const { return tensors_.count(name) > 0; }
bool Checkpoint::has_text(const std::string& name) const { return texts_.count(name) > 0; }

const Tensor& Checkpoint::tensor(const std::string& name) const {
  const auto it = tensors_.find(name);
  if (it == tensors_.end()) throw IoError("checkpoint: missing array '" + name + "'");
  return it->second;
}

const std::string& Checkpoint::text(const std::string& name) const {
  const auto it = texts_.find(name);
  if (it == texts_.end()) throw IoError("checkpoint: missing entry '" + name + "'");
  return it->second;
}

uint64_t Checkpoint::u64(const std::string& name) const {
  return std::strtoull(text(name).c_str(), nullptr, 10);
}

void Checkpoint::put_model(const std::string& prefix, const ModelParams& params) {
  put_text(prefix + "/spec", serialize_model_spec(params.spec()));
  for (const Param& p : params.entries()) {
    put(prefix + "/" + p.name + "/value", p.value);
    put(prefix + "/" + p.name + "/m", p.adam_m);
    put(prefix + "/" + p.name + "/v", p.adam_v);
    put(prefix + "/" + p.name + "/ema", p.ema);
  }
}

ModelParams Checkpoint::model(const std::string& prefix) const {
  const ModelSpec spec = parse_model_spec(text(prefix + "/spec"));
  ModelParams params = ModelParams::init(spec, 0);
  for (Param& p : params.entries()) {
    for (const auto& [field, dst] : std::map<std::string, Tensor*>{{"value", &p.value},
                                                                   {"m", &p.adam_m},
                                                                   {"v", &p.adam_v},
                                                                   {"ema", &p.ema}}) {
      const Tensor& src = tensor(prefix + "/" + p.name + "/" + field);
      if (!src.same_shape(*dst)) {
        throw IoError("checkpoint: shape mismatch for '" + prefix + "/" + p.name + "/" + field +
                      "': expected " + dst->shape_str() + ", got " + src.shape_str());
      }
      *dst = src;
    }
  }
  return params;
}

void Checkpoint::save(const std::string& path) const {
  const std::string tmp = path + ".tmp";
  {
    std::ofstream os(tmp, std::ios::binary | std::ios::trunc);
    if (!os) throw IoError("checkpoint: cannot write '" + tmp + "'");
    os.write(kMagic, sizeof(kMagic));
    write_u64(os, tensors_.size());
    for (const auto& [name, t] : tensors_) {
      write_str(os, name);
      write_u64(os, static_cast<uint64_t>(t.rank()));
      for (int64_t d : t.shape()) write_u64(os, static_cast<uint64_t>(d));
      os.write(reinterpret_cast<const char*>(t.data()),
               static_cast<std::streamsize>(t.size() * static_cast<int64_t>(sizeof(double))));
    }
    write_u64(os, texts_.size());
    for (const auto& [name, s] : texts_) {
      write_str(os, name);
      write_str(os, s);
    }
    if (!os) throw IoError("checkpoint: write failed for '" + tmp + "'");
  }
  if (std::rename(tmp.c_str(), path.c_str()) != 0) {
    throw IoError("checkpoint: cannot move '" + tmp + "' to '" + path + "'");
  }
}

Checkpoint Checkpoint::load(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("checkpoint: cannot open '" + path + "'");
  char magic[8] = {};
  is.read(magic, sizeof(magic));
  if (!is || std::memcmp(magic, kMagic, sizeof(kMagic)) != 0) {
    throw IoError("checkpoint: '" + path + "' is not a checkpoint file");
  }
  Checkpoint ck;
  const uint64_t n_tensors = read_u64(is, path);
  for (uint64_t i = 0; i < n_tensors; ++i) {
    const std::string name = read_str(is, path);
    const uint64_t rank = read_u64(is, path);
    if (rank > 8) throw IoError("checkpoint: corrupt rank in '" + path + "'");
    std::vector<int64_t> shape(rank);
    for (uint64_t d = 0; d < rank; ++d) shape[d] = static_cast<int64_t>(read_u64(is, path));
    const int64_t count = shape_size(shape);
    std::vector<double> data(static_cast<size_t>(count));
    is.read(reinterpret_cast<char*>(data.data()),
            static_cast<std::streamsize>(count * static_cast<int64_t>(sizeof(double))));
    if (!is) throw IoError("checkpoint: truncated file '" + path + "'");
    ck.tensors_[name] = Tensor(std::move(shape), std::move(data));
  }
  const uint64_t n_texts = read_u64(is, path);
  for (uint64_t i = 0; i < n_texts; ++i) {
    const std::string name = read_str(is, path);
    ck.texts_[name] = read_str(is, path);
  }
  return ck;
}

}  // namespace vmt
