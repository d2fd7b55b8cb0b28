#include "vtfusion/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>

#include "json.hpp"
#include "vtfusion/config.hpp"

namespace vtf {

namespace {

using nlohmann::json;

constexpr char kMagic[8] = {'V', 'T', 'F', 'C', 'K', 'P', 'T', '1'};

void write_u64le(std::ostream& os, std::uint64_t v) {
  unsigned char buf[8];
  for (int i = 0; i < 8; ++i) buf[i] = static_cast<unsigned char>(v >> (8 * i));
  os.write(reinterpret_cast<const char*>(buf), 8);
}

std::uint64_t read_u64le(std::istream& is) {
  unsigned char buf[8];
  is.read(reinterpret_cast<char*>(buf), 8);
  std::uint64_t v = 0;
  for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(buf[i]) << (8 * i);
  return v;
}

// Doubles travel as their IEEE-754 bit pattern so the round trip is exact.
void write_matrix(std::ostream& os, const Mat& m) {
  for (Eigen::Index r = 0; r < m.rows(); ++r)
    for (Eigen::Index c = 0; c < m.cols(); ++c)
      write_u64le(os, std::bit_cast<std::uint64_t>(m(r, c)));
}

Mat read_matrix(std::istream& is, Eigen::Index rows, Eigen::Index cols,
                const std::string& name, const std::string& path) {
  Mat m(rows, cols);
  for (Eigen::Index r = 0; r < rows; ++r)
    for (Eigen::Index c = 0; c < cols; ++c) {
      const std::uint64_t bits = read_u64le(is);
      if (!is)
        throw LoadError("checkpoint: truncated tensor '" + name + "' in '" +
                        path + "'");
      m(r, c) = std::bit_cast<double>(bits);
    }
  return m;
}

}  // namespace

void save_checkpoint(const std::string& path, const ModelCheckpoint& ckpt) {
  json j;
  j["schema"] = ckpt.schema;
  j["backbone"] = cfgio::to_json(ckpt.spec);
  j["fusion"] = cfgio::to_json(ckpt.fusion_cfg);
  j["train"] = cfgio::to_json(ckpt.train_cfg);
  j["prototypes"] = {{"rows", ckpt.prototypes.anchors.rows()},
                     {"cols", ckpt.prototypes.anchors.cols()},
                     {"category", ckpt.prototypes.source.category},
                     {"k", ckpt.prototypes.source.k},
                     {"seed", ckpt.prototypes.source.seed}};
  j["weights"] = json::array();
  for (const auto& [name, t] : ckpt.weights)
    j["weights"].push_back(
        {{"name", name}, {"rows", t.rows()}, {"cols", t.cols()}});
  const std::string header = j.dump();

  std::ofstream os(path, std::ios::binary);
  if (!os) throw DataError("checkpoint: cannot write '" + path + "'");
  os.write(kMagic, 8);
  write_u64le(os, header.size());
  os.write(header.data(), static_cast<std::streamsize>(header.size()));
  write_matrix(os, ckpt.prototypes.anchors);
  for (const auto& [name, t] : ckpt.weights) write_matrix(os, t);
  if (!os) throw DataError("checkpoint: write failed for '" + path + "'");
}

ModelCheckpoint load_checkpoint(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw LoadError("checkpoint: cannot open '" + path + "'");
  char magic[8];
  is.read(magic, 8);
  if (!is || !std::equal(magic, magic + 8, kMagic))
    throw LoadError("checkpoint: bad magic in '" + path + "'");
  const std::uint64_t header_len = read_u64le(is);
  if (!is || header_len == 0 || header_len > (1ull << 24))
    throw LoadError("checkpoint: bad header length in '" + path + "'");
  std::string header(header_len, '\0');
  is.read(header.data(), static_cast<std::streamsize>(header_len));
  if (!is) throw LoadError("checkpoint: truncated header in '" + path + "'");

  ModelCheckpoint ckpt;
  Eigen::Index proto_rows = 0, proto_cols = 0;
  std::vector<std::pair<std::string, std::pair<Eigen::Index, Eigen::Index>>>
      dir;
  try {
    const json j = json::parse(header);
    ckpt.schema = j.at("schema").get<int>();
    if (ckpt.schema != ModelCheckpoint::kSchemaVersion)
      throw LoadError("checkpoint: schema version " +
                      std::to_string(ckpt.schema) + " unsupported (expected " +
                      std::to_string(ModelCheckpoint::kSchemaVersion) + ")");
    cfgio::from_json(j.at("backbone"), ckpt.spec, "backbone");
    cfgio::from_json(j.at("fusion"), ckpt.fusion_cfg, "fusion");
    cfgio::from_json(j.at("train"), ckpt.train_cfg, "train");
    const json& p = j.at("prototypes");
    proto_rows = p.at("rows").get<Eigen::Index>();
    proto_cols = p.at("cols").get<Eigen::Index>();
    ckpt.prototypes.source.category = p.at("category").get<std::string>();
    ckpt.prototypes.source.k = p.at("k").get<int>();
    ckpt.prototypes.source.seed = p.at("seed").get<std::uint64_t>();
    for (const auto& w : j.at("weights"))
      dir.emplace_back(w.at("name").get<std::string>(),
                       std::make_pair(w.at("rows").get<Eigen::Index>(),
                                      w.at("cols").get<Eigen::Index>()));
  } catch (const json::exception& e) {
    throw LoadError("checkpoint: invalid header in '" + path +
                    "': " + e.what());
  }
  if (proto_rows <= 0 || proto_cols <= 0)
    throw LoadError("checkpoint: bad prototype shape in '" + path + "'");
  ckpt.prototypes.anchors =
      read_matrix(is, proto_rows, proto_cols, "prototypes", path);
  ckpt.prototypes.frozen = true;
  for (const auto& [name, shape] : dir) {
    if (shape.first <= 0 || shape.second <= 0)
      throw LoadError("checkpoint: bad shape for tensor '" + name + "'");
    ckpt.weights.emplace_back(
        name, read_matrix(is, shape.first, shape.second, name, path));
  }
  is.peek();
  if (!is.eof())
    throw LoadError("checkpoint: trailing bytes in '" + path + "'");
  return ckpt;
}

}  // namespace vtf
