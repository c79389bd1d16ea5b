// SPDX-License-Identifier: Apache-2.0
#include "physkit/params.hpp"

#include <fstream>
#include <sstream>

#include <json.hpp>

#include "physkit/error.hpp"

namespace physkit {

using nlohmann::json;

Parameter& ParamStore::add(const std::string& name, Tensor value, bool trainable) {
  if (name.empty()) throw ContractError("parameter name must be non-empty");
  if (params_.contains(name)) throw ContractError("duplicate parameter name '" + name + "'");
  Parameter p;
  p.name = name;
  p.grad = Tensor(value.shape());
  p.adam_m = Tensor(value.shape());
  p.adam_v = Tensor(value.shape());
  p.value = std::move(value);
  p.trainable = trainable;
  return params_.emplace(name, std::move(p)).first->second;
}

Parameter& ParamStore::get(const std::string& name) {
  auto it = params_.find(name);
  if (it == params_.end()) throw ContractError("unknown parameter '" + name + "'");
  return it->second;
}

const Parameter& ParamStore::get(const std::string& name) const {
  auto it = params_.find(name);
  if (it == params_.end()) throw ContractError("unknown parameter '" + name + "'");
  return it->second;
}

std::vector<std::string> ParamStore::names() const {
  std::vector<std::string> out;
  out.reserve(params_.size());
  for (const auto& [name, _] : params_) out.push_back(name);
  return out;
}

std::size_t ParamStore::trainable_scalars() const noexcept {
  std::size_t n = 0;
  for (const auto& [_, p] : params_) {
    if (p.trainable) n += p.value.numel();
  }
  return n;
}

void ParamStore::zero_grad() {
  for (auto& [_, p] : params_) p.grad.fill(0.0);
}

std::string ParamStore::to_text() const {
  std::string out;
  for (const auto& [name, p] : params_) {
    json rec;
    rec["name"] = name;
    rec["shape"] = p.value.shape();
    rec["trainable"] = p.trainable;
    rec["values"] = p.value.vec();
    out += rec.dump();
    out += '\n';
  }
  return out;
}

ParamStore ParamStore::from_text(const std::string& text) {
  ParamStore store;
  std::istringstream in(text);
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    try {
      const json rec = json::parse(line);
      Shape shape = rec.at("shape").get<Shape>();
      std::vector<double> values = rec.at("values").get<std::vector<double>>();
      store.add(rec.at("name").get<std::string>(), Tensor(std::move(shape), std::move(values)),
                rec.value("trainable", true));
    } catch (const json::exception& e) {
      throw ParseError("parameter file line " + std::to_string(line_no) + ": " + e.what());
    } catch (const Error& e) {
      throw ParseError("parameter file line " + std::to_string(line_no) + ": " + e.what());
    }
  }
  return store;
}

void ParamStore::save(const std::filesystem::path& path) const {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot open '" + path.string() + "' for writing");
  out << to_text();
  if (!out) throw IoError("failed writing '" + path.string() + "'");
}

ParamStore ParamStore::load(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open parameter file '" + path.string() + "'");
  std::ostringstream buf;
  buf << in.rdbuf();
  return from_text(buf.str());
}

void ParamStore::assign_values(const ParamStore& other) {
  for (auto& [name, p] : params_) {
    if (!other.contains(name)) throw ContractError("checkpoint lacks parameter '" + name + "'");
    const Parameter& src = other.get(name);
    if (src.value.shape() != p.value.shape()) {
      throw ShapeError("checkpoint parameter '" + name + "' has shape " +
                       shape_str(src.value.shape()) + ", model expects " +
                       shape_str(p.value.shape()));
    }
    p.value = src.value;
  }
}

}  // namespace physkit
