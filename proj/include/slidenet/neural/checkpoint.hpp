#pragma once

#include <bit>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <istream>
#include <memory>
#include <ostream>
#include <sstream>
#include <string>

#include <json.hpp>

#include "slidenet/neural/model.hpp"

namespace slidenet::nn {

inline constexpr const char* kCheckpointMagic = "SLIDENET-CKPT";
inline constexpr int kCheckpointVersion = 1;

// Layout: "SLIDENET-CKPT <version>\n", one line of JSON metadata (model
// config, optimizer step, caller extras and a table of tensors), then the
// tensors as little-endian float64 in table order.

struct CheckpointMeta {
  std::size_t adam_step = 0;
  nlohmann::json extra = nlohmann::json::object();
};

namespace detail {

struct TensorRef {
  std::string name;
  std::string kind;
  Mat* data;
};

inline std::vector<TensorRef> tensor_table(ParamStore& store) {
  std::vector<TensorRef> out;
  for (Parameter* p : store.params()) {
    out.push_back({p->name, "param", &p->value});
    out.push_back({p->name, "adam_m", &p->adam_m});
    out.push_back({p->name, "adam_v", &p->adam_v});
  }
  for (Buffer* b : store.buffers()) out.push_back({b->name, "buffer", &b->value});
  return out;
}

inline void put_f64(std::ostream& out, double v) {
  auto bits = std::bit_cast<std::uint64_t>(v);
  char bytes[8];
  for (int i = 0; i < 8; ++i) bytes[i] = static_cast<char>((bits >> (8 * i)) & 0xffu);
  out.write(bytes, 8);
}

inline double get_f64(std::istream& in) {
  unsigned char bytes[8];
  if (!in.read(reinterpret_cast<char*>(bytes), 8)) throw DataError("checkpoint: truncated tensor data");
  std::uint64_t bits = 0;
  for (int i = 0; i < 8; ++i) bits |= static_cast<std::uint64_t>(bytes[i]) << (8 * i);
  return std::bit_cast<double>(bits);
}

} // namespace detail

inline void save_checkpoint(Model& model, const CheckpointMeta& meta, std::ostream& out) {
  const auto table = detail::tensor_table(model.store());
  nlohmann::json tensors = nlohmann::json::array();
  for (const auto& t : table) tensors.push_back({{"name", t.name}, {"kind", t.kind}, {"rows", t.data->rows()}, {"cols", t.data->cols()}});
  const nlohmann::json header = {{"model", to_json(model.config())},
                                 {"adam_step", meta.adam_step},
                                 {"extra", meta.extra},
                                 {"tensors", tensors}};
  out << kCheckpointMagic << ' ' << kCheckpointVersion << '\n' << header.dump() << '\n';
  for (const auto& t : table)
    for (Index i = 0; i < t.data->size(); ++i) detail::put_f64(out, t.data->data()[i]);
  if (!out) throw DataError("checkpoint: write failed");
}

inline std::string checkpoint_bytes(Model& model, const CheckpointMeta& meta) {
  std::ostringstream out(std::ios::binary);
  save_checkpoint(model, meta, out);
  return out.str();
}

inline void save_checkpoint(Model& model, const CheckpointMeta& meta, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write checkpoint " + path.string());
  save_checkpoint(model, meta, out);
}

namespace detail {

inline nlohmann::json read_header(std::istream& in) {
  std::string magic_line;
  if (!std::getline(in, magic_line)) throw DataError("checkpoint: empty file");
  std::istringstream ml(magic_line);
  std::string magic;
  int version = -1;
  ml >> magic >> version;
  if (magic != kCheckpointMagic) throw DataError("checkpoint: bad magic '" + magic + "'");
  if (version != kCheckpointVersion) {
    throw DataError("checkpoint: version " + std::to_string(version) + " is not supported (expected " +
                    std::to_string(kCheckpointVersion) + ")");
  }
  std::string line;
  if (!std::getline(in, line)) throw DataError("checkpoint: missing header");
  try {
    return nlohmann::json::parse(line);
  } catch (const nlohmann::json::exception& e) {
    throw DataError(std::string("checkpoint: malformed header: ") + e.what());
  }
}

inline CheckpointMeta read_tensors(Model& model, const nlohmann::json& header, std::istream& in) {
  const auto table = tensor_table(model.store());
  const auto& tensors = header.at("tensors");
  if (tensors.size() != table.size()) {
    throw DataError("checkpoint: holds " + std::to_string(tensors.size()) + " tensors, model expects " +
                    std::to_string(table.size()));
  }
  for (std::size_t i = 0; i < table.size(); ++i) {
    const auto& h = tensors[i];
    const auto name = h.at("name").get<std::string>();
    const auto kind = h.at("kind").get<std::string>();
    const auto rows = h.at("rows").get<Index>(), cols = h.at("cols").get<Index>();
    const auto& t = table[i];
    if (name != t.name || kind != t.kind) {
      throw DataError("checkpoint: tensor " + std::to_string(i) + " is " + name + "/" + kind + ", model expects " +
                      t.name + "/" + t.kind);
    }
    if (rows != t.data->rows() || cols != t.data->cols()) {
      throw DataError("checkpoint: shape mismatch for " + name + " (" + kind + "): file has " + std::to_string(rows) +
                      "x" + std::to_string(cols) + ", model has " + dims(*t.data));
    }
  }
  for (const auto& t : table)
    for (Index i = 0; i < t.data->size(); ++i) t.data->data()[i] = get_f64(in);
  CheckpointMeta meta;
  meta.adam_step = header.at("adam_step").get<std::size_t>();
  meta.extra = header.value("extra", nlohmann::json::object());
  return meta;
}

} // namespace detail

/// Restores weights into an existing model; any name or shape mismatch is rejected.
inline CheckpointMeta load_into(Model& model, std::istream& in) {
  try {
    return detail::read_tensors(model, detail::read_header(in), in);
  } catch (const nlohmann::json::exception& e) {
    throw DataError(std::string("checkpoint: ") + e.what());
  }
}

/// Rebuilds the model recorded in the checkpoint.
inline std::unique_ptr<Model> load_checkpoint(std::istream& in, CheckpointMeta* meta = nullptr) {
  try {
    const auto header = detail::read_header(in);
    auto model = std::make_unique<Model>(model_config_from_json(header.at("model")), 0);
    auto m = detail::read_tensors(*model, header, in);
    if (meta) *meta = std::move(m);
    return model;
  } catch (const nlohmann::json::exception& e) {
    throw DataError(std::string("checkpoint: ") + e.what());
  }
}

inline std::unique_ptr<Model> load_checkpoint(const std::filesystem::path& path, CheckpointMeta* meta = nullptr) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open checkpoint " + path.string());
  return load_checkpoint(in, meta);
}

} // namespace slidenet::nn
