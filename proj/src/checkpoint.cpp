#include "casnet/checkpoint.hpp"

#include <ATen/CPUGeneratorImpl.h>

#include <mutex>
#include <sstream>

#include "casnet/errors.hpp"

namespace casnet {

namespace {

std::string join_keys(const std::map<std::string, std::string>& m) {
  std::string s;
  for (const auto& [k, _] : m) s += k + "\n";
  return s;
}

std::vector<std::string> split_keys(const std::string& s) {
  std::vector<std::string> out;
  std::istringstream is(s);
  for (std::string line; std::getline(is, line);)
    if (!line.empty()) out.push_back(line);
  return out;
}

torch::Tensor bytes_tensor(const std::string& bytes) {
  auto t = torch::empty({static_cast<int64_t>(bytes.size())}, torch::kUInt8);
  std::memcpy(t.data_ptr(), bytes.data(), bytes.size());
  return t;
}

std::string tensor_bytes(const torch::Tensor& t) {
  const auto c = t.contiguous();
  return std::string(static_cast<const char*>(c.data_ptr()), static_cast<std::size_t>(c.numel()));
}

std::string read_string(torch::serialize::InputArchive& a, const std::string& key, const std::string& file) {
  c10::IValue v;
  if (!a.try_read(key, v) || !v.isString()) throw IoError("checkpoint " + file + " lacks '" + key + "'");
  return v.toStringRef();
}

torch::serialize::InputArchive open_archive(const std::filesystem::path& file) {
  if (!std::filesystem::exists(file)) throw MissingArtifactError("checkpoint not found: " + file.string());
  torch::serialize::InputArchive a;
  try {
    a.load_from(file.string());
  } catch (const c10::Error& e) {
    throw IoError("cannot read checkpoint " + file.string() + ": " + e.what_without_backtrace());
  }
  return a;
}

CheckpointMeta read_meta(torch::serialize::InputArchive& a, const std::string& file) {
  if (read_string(a, "meta/format", file) != kCheckpointFormat)
    throw IoError("checkpoint " + file + " has an unsupported format");
  CheckpointMeta m;
  m.kind = read_string(a, "meta/kind", file);
  m.step = std::stol(read_string(a, "meta/step", file));
  m.config_hash = read_string(a, "meta/config_hash", file);
  for (const auto& k : split_keys(read_string(a, "meta/value_keys", file)))
    m.values[k] = read_string(a, "meta/values/" + k, file);
  return m;
}

}  // namespace

const std::string& CheckpointMeta::value(const std::string& key) const {
  const auto it = values.find(key);
  if (it == values.end()) throw MissingArtifactError("checkpoint metadata lacks '" + key + "'");
  return it->second;
}

void save_checkpoint(const std::filesystem::path& file, const CheckpointMeta& meta,
                     const std::vector<NamedModule>& nets, const std::vector<NamedOptimizer>& optimizers,
                     const std::map<std::string, std::string>& rng_state) {
  torch::serialize::OutputArchive root;
  root.write("meta/format", c10::IValue(std::string(kCheckpointFormat)));
  root.write("meta/kind", c10::IValue(meta.kind));
  root.write("meta/step", c10::IValue(std::to_string(meta.step)));
  root.write("meta/config_hash", c10::IValue(meta.config_hash));
  root.write("meta/value_keys", c10::IValue(join_keys(meta.values)));
  for (const auto& [k, v] : meta.values) root.write("meta/values/" + k, c10::IValue(v));
  root.write("rng/keys", c10::IValue(join_keys(rng_state)));
  for (const auto& [k, v] : rng_state) root.write("rng/" + k, bytes_tensor(v));
  for (const auto& n : nets) {
    torch::serialize::OutputArchive sub;
    n.module->save(sub);
    root.write("net/" + n.name, sub);
  }
  for (const auto& o : optimizers) {
    torch::serialize::OutputArchive sub;
    o.optimizer->save(sub);
    root.write("optim/" + o.name, sub);
  }
  std::error_code ec;
  if (!file.parent_path().empty()) std::filesystem::create_directories(file.parent_path(), ec);
  const auto tmp = file.string() + ".tmp";
  try {
    root.save_to(tmp);
  } catch (const c10::Error& e) {
    throw IoError("cannot write checkpoint " + file.string() + ": " + e.what_without_backtrace());
  }
  std::filesystem::rename(tmp, file, ec);
  if (ec) throw IoError("cannot move checkpoint into place: " + file.string());
}

CheckpointMeta read_checkpoint_meta(const std::filesystem::path& file) {
  auto a = open_archive(file);
  return read_meta(a, file.string());
}

LoadedCheckpoint load_checkpoint(const std::filesystem::path& file, const std::vector<NamedModule>& nets,
                                 const std::vector<NamedOptimizer>& optimizers) {
  auto a = open_archive(file);
  LoadedCheckpoint out;
  out.meta = read_meta(a, file.string());
  for (const auto& k : split_keys(read_string(a, "rng/keys", file.string()))) {
    torch::Tensor t;
    if (!a.try_read("rng/" + k, t)) throw IoError("checkpoint lacks rng/" + k);
    out.rng_state[k] = tensor_bytes(t);
  }
  for (const auto& n : nets) {
    torch::serialize::InputArchive sub;
    if (!a.try_read("net/" + n.name, sub)) throw IoError("checkpoint " + file.string() + " lacks net/" + n.name);
    n.module->load(sub);
  }
  for (const auto& o : optimizers) {
    torch::serialize::InputArchive sub;
    if (!a.try_read("optim/" + o.name, sub))
      throw IoError("checkpoint " + file.string() + " lacks optim/" + o.name);
    o.optimizer->load(sub);
  }
  return out;
}

std::string torch_rng_state() {
  auto gen = at::detail::getDefaultCPUGenerator();
  std::lock_guard<std::mutex> lock(gen.mutex());
  return tensor_bytes(gen.get_state());
}

void set_torch_rng_state(const std::string& bytes) {
  auto gen = at::detail::getDefaultCPUGenerator();
  std::lock_guard<std::mutex> lock(gen.mutex());
  gen.set_state(bytes_tensor(bytes));
}

}  // namespace casnet
