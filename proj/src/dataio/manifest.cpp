#include <fstream>
#include <set>

#include <json.hpp>

#include "avf/dataio.hpp"
#include "avf/error.hpp"

namespace avf::data {

namespace fs = std::filesystem;
using nlohmann::json;

std::string to_string(Split s) {
  switch (s) {
    case Split::train: return "train";
    case Split::validation: return "validation";
    case Split::test: return "test";
  }
  return "train";
}

Split split_from_string(const std::string& s) {
  if (s == "train") return Split::train;
  if (s == "validation" || s == "val") return Split::validation;
  if (s == "test") return Split::test;
  throw DataError("unknown split '" + s + "'");
}

std::string to_string(Modality m) {
  switch (m) {
    case Modality::visual: return "visual";
    case Modality::audio_vec: return "audio_vec";
    case Modality::audio_wave: return "audio_wave";
    case Modality::text_emb: return "text_emb";
  }
  return "visual";
}

Modality modality_from_string(const std::string& s) {
  for (Modality m : kAllModalities) {
    if (to_string(m) == s) return m;
  }
  throw DataError("unknown modality '" + s + "'");
}

const std::optional<std::string>& UtteranceRecord::ref(Modality m) const {
  switch (m) {
    case Modality::visual: return visual;
    case Modality::audio_vec: return audio_vec;
    case Modality::audio_wave: return audio_wave;
    case Modality::text_emb: return text_emb;
  }
  return visual;
}

std::optional<std::string>& UtteranceRecord::ref(Modality m) {
  return const_cast<std::optional<std::string>&>(std::as_const(*this).ref(m));
}

fs::path DatasetManifest::resolve(const UtteranceRecord& r, Modality m) const {
  const auto& rel = r.ref(m);
  if (!rel) {
    throw DataError("utterance '" + r.utterance_id + "' has no " + to_string(m) + " modality");
  }
  return base_dir / *rel;
}

FeatureSequence DatasetManifest::load(const UtteranceRecord& r, Modality m) const {
  return read_feature_tensor(resolve(r, m));
}

std::vector<const UtteranceRecord*> DatasetManifest::in_split(Split s) const {
  std::vector<const UtteranceRecord*> out;
  for (const auto& r : records) {
    if (r.split == s) out.push_back(&r);
  }
  return out;
}

namespace {

LabelRanges parse_ranges(const json& j, std::size_t line) {
  const auto& a = j.at("label_ranges");
  if (!a.is_array() || a.size() != 4) {
    throw DataError("line " + std::to_string(line) + ": label_ranges must be [a0,a1,v0,v1]");
  }
  LabelRanges r{a[0].get<double>(), a[1].get<double>(), a[2].get<double>(), a[3].get<double>()};
  if (!(r.arousal_min < r.arousal_max) || !(r.valence_min < r.valence_max)) {
    throw DataError("line " + std::to_string(line) + ": label_ranges must be increasing pairs");
  }
  return r;
}

UtteranceRecord parse_record(const json& j) {
  UtteranceRecord r;
  r.utterance_id = j.at("utterance_id").get<std::string>();
  if (r.utterance_id.empty()) throw DataError("empty utterance_id");
  r.video_id = j.contains("video_id") ? j["video_id"].get<std::string>() : r.utterance_id;
  r.arousal = j.at("arousal").get<double>();
  r.valence = j.at("valence").get<double>();
  r.split = j.contains("split") ? split_from_string(j["split"].get<std::string>()) : Split::train;
  for (Modality m : kAllModalities) {
    const auto key = to_string(m);
    if (j.contains(key) && !j[key].is_null()) r.ref(m) = j[key].get<std::string>();
  }
  return r;
}

}  // namespace

DatasetManifest parse_manifest(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open manifest " + path.string());

  DatasetManifest m;
  m.base_dir = path.parent_path();
  std::set<std::string> seen;
  std::string text;
  std::size_t line = 0;
  bool first_content = true;
  while (std::getline(in, text)) {
    ++line;
    if (text.find_first_not_of(" \t\r") == std::string::npos) continue;
    const std::string at = path.string() + ":" + std::to_string(line) + ": ";
    json j;
    try {
      j = json::parse(text);
    } catch (const json::parse_error& e) {
      throw DataError(at + "malformed JSON: " + e.what());
    }
    if (!j.is_object()) throw DataError(at + "expected a JSON object");

    if (first_content && j.contains("label_ranges") && !j.contains("utterance_id")) {
      m.label_ranges = parse_ranges(j, line);
      m.has_header = true;
      first_content = false;
      continue;
    }
    first_content = false;

    UtteranceRecord r;
    try {
      r = parse_record(j);
    } catch (const json::exception& e) {
      throw DataError(at + "malformed record: " + e.what());
    } catch (const DataError& e) {
      throw DataError(at + e.what());
    }
    if (!seen.insert(r.utterance_id).second) {
      throw DataError(at + "duplicate utterance_id '" + r.utterance_id + "'");
    }
    const auto& lr = m.label_ranges;
    if (!(r.arousal >= lr.arousal_min && r.arousal <= lr.arousal_max)) {
      throw DataError(at + "utterance '" + r.utterance_id + "' arousal " + std::to_string(r.arousal) +
                      " outside [" + std::to_string(lr.arousal_min) + ", " +
                      std::to_string(lr.arousal_max) + "]");
    }
    if (!(r.valence >= lr.valence_min && r.valence <= lr.valence_max)) {
      throw DataError(at + "utterance '" + r.utterance_id + "' valence " + std::to_string(r.valence) +
                      " outside [" + std::to_string(lr.valence_min) + ", " +
                      std::to_string(lr.valence_max) + "]");
    }
    bool any = false;
    for (Modality mod : kAllModalities) {
      if (!r.has(mod)) continue;
      any = true;
      const fs::path p = m.base_dir / *r.ref(mod);
      if (!fs::exists(p)) {
        throw DataError(at + "utterance '" + r.utterance_id + "' references missing file " +
                        p.string());
      }
    }
    if (!any) throw DataError(at + "utterance '" + r.utterance_id + "' has no modality");
    m.records.push_back(std::move(r));
  }
  return m;
}

void write_manifest(const fs::path& path, const DatasetManifest& m) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw DataError("cannot write manifest " + path.string());
  if (m.has_header || m.label_ranges != LabelRanges{}) {
    const auto& r = m.label_ranges;
    out << json{{"label_ranges", {r.arousal_min, r.arousal_max, r.valence_min, r.valence_max}}}.dump()
        << '\n';
  }
  for (const auto& r : m.records) {
    json j{{"utterance_id", r.utterance_id},
           {"video_id", r.video_id},
           {"arousal", r.arousal},
           {"valence", r.valence},
           {"split", to_string(r.split)}};
    for (Modality mod : kAllModalities) {
      if (r.has(mod)) j[to_string(mod)] = *r.ref(mod);
    }
    out << j.dump() << '\n';
  }
}

}  // namespace avf::data
