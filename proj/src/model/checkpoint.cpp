#include "ctx3d/model/checkpoint.hpp"

#include <map>

#include "ctx3d/binary_io.hpp"
#include "ctx3d/errors.hpp"
#include "ctx3d/nn/tensor_io.hpp"

namespace ctx3d::model {
namespace {

constexpr const char* kParamPrefix = "param/";

nn::Tensor<float> fingerprint_tensor(std::uint64_t fp) {
  nn::Tensor<float> t(nn::Shape{4});
  for (std::size_t i = 0; i < 4; ++i) t[i] = static_cast<float>((fp >> (16 * i)) & 0xffffu);
  return t;
}

std::uint64_t fingerprint_from(const nn::Tensor<float>& t) {
  if (t.numel() != 4) throw DataError("checkpoint: malformed meta/config_fingerprint");
  std::uint64_t fp = 0;
  for (std::size_t i = 0; i < 4; ++i) fp |= static_cast<std::uint64_t>(t[i]) << (16 * i);
  return fp;
}

}  // namespace

std::string config_text(const ModelConfig& cfg) {
  std::string out;
  for (const auto& [k, v] : config_entries(cfg)) out += k + " = " + v + "\n";
  return out;
}

ModelConfig parse_config_text(const std::string& text, const std::string& what) {
  ModelConfig cfg;
  for (const auto& [k, v] : parse_key_values(text, what)) set_config_value(cfg, k, v);
  return cfg;
}

void save_checkpoint(const std::filesystem::path& path, const Detector<float>& model, int epoch) {
  std::vector<nn::NamedTensor> tensors;
  const std::string text = config_text(model.config());
  nn::Tensor<float> text_t(nn::Shape{text.size()});
  for (std::size_t i = 0; i < text.size(); ++i) text_t[i] = static_cast<float>(static_cast<unsigned char>(text[i]));
  tensors.push_back({"meta/config", std::move(text_t)});
  tensors.push_back({"meta/config_fingerprint", fingerprint_tensor(model.config().fingerprint())});
  tensors.push_back({"meta/epoch", nn::Tensor<float>::scalar(static_cast<float>(epoch))});
  for (const auto& p : model.parameters()) tensors.push_back({kParamPrefix + p.name, p.value});
  nn::write_tensor_file(path, tensors);
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  const auto tensors = nn::read_tensor_file(path);
  std::map<std::string, const nn::Tensor<float>*> by_name;
  for (const auto& t : tensors) by_name[t.name] = &t.value;
  auto need = [&](const std::string& name) -> const nn::Tensor<float>& {
    auto it = by_name.find(name);
    if (it == by_name.end()) throw DataError("checkpoint " + path.string() + ": missing tensor '" + name + "'");
    return *it->second;
  };

  const auto& text_t = need("meta/config");
  std::string text;
  for (float c : text_t.data()) text.push_back(static_cast<char>(static_cast<unsigned char>(c)));
  ModelConfig cfg;
  try {
    cfg = parse_config_text(text, path.string());
    cfg.validate();
  } catch (const std::invalid_argument& e) {
    throw DataError("checkpoint " + path.string() + ": bad stored config: " + e.what());
  }
  if (fingerprint_from(need("meta/config_fingerprint")) != cfg.fingerprint()) {
    throw DataError("checkpoint " + path.string() + ": config fingerprint does not match the stored config");
  }
  const int epoch = static_cast<int>(need("meta/epoch").item());

  Checkpoint ck{cfg, epoch, Detector<float>(cfg)};
  for (auto& p : ck.model.parameters()) {
    const auto& t = need(kParamPrefix + p.name);
    if (t.shape() != p.value.shape()) {
      throw DataError("checkpoint " + path.string() + ": parameter '" + p.name + "' has shape " +
                      nn::shape_str(t.shape()) + ", model expects " + nn::shape_str(p.value.shape()));
    }
    p.value = t;
  }
  return ck;
}

Checkpoint load_checkpoint(const std::filesystem::path& path, const ModelConfig& expected) {
  Checkpoint ck = load_checkpoint(path);
  if (ck.config.fingerprint() != expected.fingerprint()) {
    throw DataError("checkpoint " + path.string() + ": config fingerprint mismatch (checkpoint " +
                    io::hex64(ck.config.fingerprint()) + ", requested " + io::hex64(expected.fingerprint()) + ")");
  }
  return ck;
}

}  // namespace ctx3d::model
