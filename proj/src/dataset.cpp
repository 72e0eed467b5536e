#include "fewshot/dataset.hpp"

#include <json.hpp>

#include <fstream>
#include <unordered_map>

namespace fewshot {

namespace {

std::vector<std::string> names_of(const std::vector<int>& ids,
                                  const std::vector<std::string>& class_names) {
  std::vector<std::string> out;
  out.reserve(ids.size());
  for (int id : ids) {
    if (id < 0 || id >= static_cast<int>(class_names.size()))
      throw DataError("split references unknown class id " + std::to_string(id));
    out.push_back(class_names[static_cast<std::size_t>(id)]);
  }
  return out;
}

std::vector<int> ids_of(const nlohmann::json& names, const char* key,
                        const std::unordered_map<std::string, int>& lookup) {
  std::vector<int> out;
  for (const auto& name : names) {
    const auto it = lookup.find(name.get<std::string>());
    if (it == lookup.end())
      throw DataError(std::string("split file ") + key + " references unknown class '" +
                      name.get<std::string>() + "'");
    out.push_back(it->second);
  }
  std::sort(out.begin(), out.end());
  return out;
}

}  // namespace

void save_split(const std::string& path, const SplitSpec& split,
                const std::vector<std::string>& class_names) {
  nlohmann::json j;
  j["seed"] = split.seed;
  j["train_classes"] = names_of(split.train_classes, class_names);
  j["val_classes"] = names_of(split.val_classes, class_names);
  j["test_classes"] = names_of(split.test_classes, class_names);
  std::ofstream os(path, std::ios::trunc);
  if (!os) throw DataError("cannot open split file for writing: " + path);
  os << j.dump(2) << '\n';
  if (!os) throw DataError("failed writing split file: " + path);
}

SplitSpec load_split(const std::string& path, const std::vector<std::string>& class_names) {
  std::ifstream is(path);
  if (!is) throw DataError("cannot open split file: " + path);
  nlohmann::json j;
  try {
    is >> j;
  } catch (const nlohmann::json::exception& e) {
    throw DataError("malformed split file " + path + ": " + e.what());
  }
  std::unordered_map<std::string, int> lookup;
  for (std::size_t i = 0; i < class_names.size(); ++i)
    lookup.emplace(class_names[i], static_cast<int>(i));
  SplitSpec split;
  split.seed = j.value("seed", std::uint64_t{0});
  split.train_classes = ids_of(j.at("train_classes"), "train_classes", lookup);
  split.val_classes = ids_of(j.at("val_classes"), "val_classes", lookup);
  split.test_classes = ids_of(j.at("test_classes"), "test_classes", lookup);
  return split;
}

}  // namespace fewshot
