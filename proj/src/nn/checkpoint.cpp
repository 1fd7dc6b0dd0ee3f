#include "avf/nn/checkpoint.hpp"

#include <fstream>

#include "avf/dataio.hpp"
#include "avf/error.hpp"

namespace avf::nn {

namespace fs = std::filesystem;
using nlohmann::json;

template <typename T>
json save_tensors(const fs::path& dir, const ParamList<T>& tensors, const std::string& prefix) {
  json files = json::object();
  for (const auto& [name, m] : tensors) {
    const std::string file = prefix + name + ".aff1";
    data::write_feature_tensor(dir / file, data::FeatureSequence(m->template cast<double>(), 2));
    files[name] = file;
  }
  return files;
}

template <typename T>
void load_tensors(const fs::path& dir, const json& files, const ParamList<T>& targets) {
  for (const auto& [name, m] : targets) {
    if (!files.contains(name)) throw DataError("checkpoint is missing tensor '" + name + "'");
    const auto seq = data::read_feature_tensor(dir / files.at(name).template get<std::string>());
    if (seq.frames() != m->rows() || seq.dim() != m->cols()) {
      throw DataError("checkpoint tensor '" + name + "' has shape " + std::to_string(seq.frames()) +
                      "x" + std::to_string(seq.dim()) + ", expected " + std::to_string(m->rows()) +
                      "x" + std::to_string(m->cols()));
    }
    *m = seq.data.template cast<T>();
  }
}

json to_json(const OptimizerConfig& c) {
  return {{"kind", to_string(c.kind)},     {"lr0", c.lr0},     {"momentum", c.momentum},
          {"decay", c.decay},              {"schedule", to_string(c.schedule)},
          {"beta1", c.beta1},              {"beta2", c.beta2}, {"eps", c.eps}};
}

OptimizerConfig optimizer_config_from_json(const json& j, OptimizerConfig c) {
  if (j.contains("kind")) c.kind = optimizer_kind_from_string(j["kind"].get<std::string>());
  if (j.contains("lr0")) c.lr0 = j["lr0"].get<double>();
  if (j.contains("momentum")) c.momentum = j["momentum"].get<double>();
  if (j.contains("decay")) c.decay = j["decay"].get<double>();
  if (j.contains("schedule")) c.schedule = lr_schedule_from_string(j["schedule"].get<std::string>());
  if (j.contains("beta1")) c.beta1 = j["beta1"].get<double>();
  if (j.contains("beta2")) c.beta2 = j["beta2"].get<double>();
  if (j.contains("eps")) c.eps = j["eps"].get<double>();
  return c;
}

namespace {

template <typename T>
ParamList<T> slot_list(const ParamList<T>& params, std::vector<Mat<T>>& slots) {
  ParamList<T> out;
  for (std::size_t i = 0; i < slots.size(); ++i) out.emplace_back(params[i].first, &slots[i]);
  return out;
}

}  // namespace

template <typename T>
json save_optimizer(const fs::path& dir, const OptimizerState<T>& state, const ParamList<T>& params) {
  auto& st = const_cast<OptimizerState<T>&>(state);
  json j = to_json(state.config);
  j["t"] = state.t;
  j["slot1"] = save_tensors(dir, slot_list(params, st.slot1), "opt.slot1.");
  j["slot2"] = save_tensors(dir, slot_list(params, st.slot2), "opt.slot2.");
  return j;
}

template <typename T>
void load_optimizer(const fs::path& dir, const json& j, OptimizerState<T>& state,
                    const ParamList<T>& params) {
  state.config = optimizer_config_from_json(j);
  state.reset(params);
  state.t = j.at("t").get<std::uint64_t>();
  if (j.contains("slot1") && !j["slot1"].empty()) load_tensors(dir, j["slot1"], slot_list(params, state.slot1));
  if (j.contains("slot2") && !j["slot2"].empty()) load_tensors(dir, j["slot2"], slot_list(params, state.slot2));
}

void write_json(const fs::path& path, const json& j) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw DataError("cannot write " + path.string());
  out << j.dump(2) << '\n';
}

json read_json(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open " + path.string());
  try {
    return json::parse(in);
  } catch (const json::parse_error& e) {
    throw DataError(path.string() + ": " + e.what());
  }
}

#define AVF_INSTANTIATE_CKPT(T)                                                                    \
  template json save_tensors<T>(const fs::path&, const ParamList<T>&, const std::string&);         \
  template void load_tensors<T>(const fs::path&, const json&, const ParamList<T>&);                \
  template json save_optimizer<T>(const fs::path&, const OptimizerState<T>&, const ParamList<T>&); \
  template void load_optimizer<T>(const fs::path&, const json&, OptimizerState<T>&, const ParamList<T>&);

AVF_INSTANTIATE_CKPT(float)
AVF_INSTANTIATE_CKPT(double)

}  // namespace avf::nn
