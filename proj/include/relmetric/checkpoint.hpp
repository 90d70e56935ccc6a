#pragma once

#include <cstdint>
#include <cstring>
#include <fstream>
#include <iterator>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "relmetric/config.hpp"
#include "relmetric/error.hpp"
#include "relmetric/model.hpp"
#include "relmetric/optim.hpp"

namespace relmetric {

// Everything that determines the rest of a training run.
struct TrainingState {
  RelationMetricModel model;
  RmsProp optimizer;
  std::mt19937_64 rng;
  std::size_t epoch = 0;  // completed epochs
};

inline TrainingState make_training_state(ModelSchema schema) {
  const TrainConfig& c = schema.config;
  TrainingState s;
  s.rng.seed(c.seed);
  s.optimizer = RmsProp(static_cast<Real>(c.rmsprop_decay), static_cast<Real>(c.rmsprop_epsilon));
  s.optimizer.set_learning_rate(static_cast<Real>(c.learning_rate));
  s.model = RelationMetricModel(std::move(schema), s.rng);
  return s;
}

// Layout (little-endian host order):
//   "RMCKPT\0\0" | u32 version | u32 sizeof(Real) | u64 header bytes | JSON header
//   | parameter values in shape-table order | optimizer accumulators | "RMCKEND\0"
inline constexpr std::uint32_t kCheckpointVersion = 1;
inline constexpr char kCheckpointMagic[8] = {'R', 'M', 'C', 'K', 'P', 'T', '\0', '\0'};
inline constexpr char kCheckpointTrailer[8] = {'R', 'M', 'C', 'K', 'E', 'N', 'D', '\0'};

namespace detail {

inline nlohmann::json shape_table(const RelationMetricModel& model) {
  nlohmann::json t = nlohmann::json::array();
  for (const Parameter* p : model.parameters()) t.push_back({{"name", p->name}, {"shape", p->value.shape()}});
  return t;
}

template <typename T>
void put(std::string& out, const T& v) {
  out.append(reinterpret_cast<const char*>(&v), sizeof(T));
}

inline void put_tensor(std::string& out, const Tensor& t) {
  out.append(reinterpret_cast<const char*>(t.data()), t.size() * sizeof(Real));
}

class Reader {
 public:
  explicit Reader(std::string bytes) : bytes_(std::move(bytes)) {}

  void read(void* dst, std::size_t n, const char* field) {
    if (bytes_.size() - pos_ < n) throw CheckpointError(std::string("checkpoint: truncated while reading ") + field);
    std::memcpy(dst, bytes_.data() + pos_, n);
    pos_ += n;
  }

  template <typename T>
  T get(const char* field) {
    T v;
    read(&v, sizeof(T), field);
    return v;
  }

  void tensor(Tensor& t, const std::string& field) { read(t.data(), t.size() * sizeof(Real), field.c_str()); }

  bool at_end() const { return pos_ == bytes_.size(); }

 private:
  std::string bytes_;
  std::size_t pos_ = 0;
};

// Checks that the checkpoint's shape table describes `model` exactly.
inline void check_shape_table(const nlohmann::json& table, const RelationMetricModel& model) {
  const auto params = model.parameters();
  if (!table.is_array() || table.size() != params.size()) {
    throw CheckpointError("checkpoint: shape table lists " + std::to_string(table.size()) + " tensors, model has " +
                          std::to_string(params.size()));
  }
  for (std::size_t i = 0; i < params.size(); ++i) {
    const std::string name = table[i].at("name").get<std::string>();
    const Shape shape = table[i].at("shape").get<Shape>();
    if (name != params[i]->name) {
      throw CheckpointError("checkpoint: shape table entry " + std::to_string(i) + " is '" + name + "', expected '" +
                            params[i]->name + "'");
    }
    if (shape != params[i]->value.shape()) {
      throw CheckpointError("checkpoint: shape table mismatch for '" + name + "': checkpoint " + shape_string(shape) +
                            ", expected " + shape_string(params[i]->value.shape()));
    }
  }
}

}  // namespace detail

inline std::string serialize_checkpoint(const TrainingState& state) {
  const RelationMetricModel& m = state.model;
  const OptimizerState& opt = state.optimizer.state();
  std::ostringstream rng_text;
  rng_text << state.rng;
  nlohmann::json header{
      {"config", config_to_json(m.config())},
      {"entity_types", m.labels().entity_types()},
      {"relation_types", m.labels().relation_types()},
      {"words", m.schema.words.tokens()},
      {"chars", m.schema.chars.tokens()},
      {"dep_tags", m.schema.dep_tags.tokens()},
      {"max_length", m.schema.max_length},
      {"epoch", state.epoch},
      {"rng", rng_text.str()},
      {"shapes", detail::shape_table(m)},
      {"optimizer",
       {{"decay", opt.decay},
        {"epsilon", opt.epsilon},
        {"learning_rate", opt.learning_rate},
        {"step", opt.step},
        {"accumulators", opt.accumulators.size()}}},
  };
  const std::string text = header.dump();
  std::string out(kCheckpointMagic, sizeof kCheckpointMagic);
  detail::put(out, kCheckpointVersion);
  detail::put(out, static_cast<std::uint32_t>(sizeof(Real)));
  detail::put(out, static_cast<std::uint64_t>(text.size()));
  out += text;
  for (const Parameter* p : m.parameters()) detail::put_tensor(out, p->value);
  for (const Tensor& acc : opt.accumulators) detail::put_tensor(out, acc);
  out.append(kCheckpointTrailer, sizeof kCheckpointTrailer);
  return out;
}

// All-or-nothing: the returned state is built only after every field has been
// read and validated.
inline TrainingState deserialize_checkpoint(std::string bytes) {
  detail::Reader in(std::move(bytes));
  char magic[8];
  in.read(magic, sizeof magic, "magic");
  if (std::memcmp(magic, kCheckpointMagic, sizeof magic) != 0) throw CheckpointError("checkpoint: bad magic (not a checkpoint file)");
  const auto version = in.get<std::uint32_t>("version");
  if (version != kCheckpointVersion) {
    throw CheckpointError("checkpoint: format version " + std::to_string(version) + " is not supported (expected " +
                          std::to_string(kCheckpointVersion) + ")");
  }
  const auto real_size = in.get<std::uint32_t>("real_size");
  if (real_size != sizeof(Real)) {
    throw CheckpointError("checkpoint: real_size " + std::to_string(real_size) + " does not match this build (" +
                          std::to_string(sizeof(Real)) + ")");
  }
  const auto header_size = in.get<std::uint64_t>("header_size");
  std::string text(header_size < (std::uint64_t{1} << 34) ? header_size : 0, '\0');
  if (text.size() != header_size) throw CheckpointError("checkpoint: implausible header_size");
  in.read(text.data(), text.size(), "header");

  TrainingState s;
  try {
    const auto h = nlohmann::json::parse(text);
    ModelSchema schema;
    schema.config = config_from_json(h.at("config"));
    schema.labels = LabelSpace(h.at("entity_types").get<std::vector<std::string>>(),
                               h.at("relation_types").get<std::vector<std::string>>());
    schema.words = Vocabulary::from_tokens(h.at("words").get<std::vector<std::string>>());
    schema.chars = Vocabulary::from_tokens(h.at("chars").get<std::vector<std::string>>());
    schema.dep_tags = Vocabulary::from_tokens(h.at("dep_tags").get<std::vector<std::string>>());
    schema.max_length = h.at("max_length").get<std::size_t>();
    std::mt19937_64 scratch;
    s.model = RelationMetricModel(std::move(schema), scratch, false);
    detail::check_shape_table(h.at("shapes"), s.model);
    for (Parameter* p : s.model.parameters()) in.tensor(p->value, p->name);

    const auto& o = h.at("optimizer");
    OptimizerState& opt = s.optimizer.state();
    opt.decay = o.at("decay").get<Real>();
    opt.epsilon = o.at("epsilon").get<Real>();
    opt.learning_rate = o.at("learning_rate").get<Real>();
    opt.step = o.at("step").get<std::size_t>();
    const auto count = o.at("accumulators").get<std::size_t>();
    if (count != 0) {
      for (const Parameter* p : s.model.parameters())
        if (p->trainable) opt.accumulators.emplace_back(p->value.shape());
      if (opt.accumulators.size() != count) {
        throw CheckpointError("checkpoint: optimizer.accumulators count " + std::to_string(count) +
                              " does not match trainable parameters (" + std::to_string(opt.accumulators.size()) + ")");
      }
      for (Tensor& acc : opt.accumulators) in.tensor(acc, "optimizer accumulator");
    }
    std::istringstream rng_text(h.at("rng").get<std::string>());
    rng_text >> s.rng;
    if (!rng_text) throw CheckpointError("checkpoint: unreadable rng state");
    s.epoch = h.at("epoch").get<std::size_t>();
  } catch (const nlohmann::json::exception& e) {
    throw CheckpointError(std::string("checkpoint: malformed header: ") + e.what());
  } catch (const ConfigError& e) {
    throw CheckpointError(std::string("checkpoint: config: ") + e.what());
  }
  char trailer[8];
  in.read(trailer, sizeof trailer, "trailer");
  if (std::memcmp(trailer, kCheckpointTrailer, sizeof trailer) != 0 || !in.at_end()) {
    throw CheckpointError("checkpoint: corrupt trailer");
  }
  return s;
}

inline void save_checkpoint(const TrainingState& state, const std::string& path) {
  const std::string bytes = serialize_checkpoint(state);
  const std::string tmp = path + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw CheckpointError("cannot write checkpoint '" + tmp + "'");
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw CheckpointError("write failed for checkpoint '" + tmp + "'");
  }
  if (std::rename(tmp.c_str(), path.c_str()) != 0) throw CheckpointError("cannot move checkpoint into '" + path + "'");
}

inline TrainingState load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw CheckpointError("cannot open checkpoint '" + path + "'");
  std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  try {
    return deserialize_checkpoint(std::move(bytes));
  } catch (const CheckpointError& e) {
    throw CheckpointError(path + ": " + e.what());
  }
}

// Copies checkpoint parameters into an existing model after checking that the
// shape tables agree.
inline void restore_parameters(RelationMetricModel& target, const TrainingState& loaded) {
  detail::check_shape_table(detail::shape_table(loaded.model), target);
  auto dst = target.parameters();
  auto src = loaded.model.parameters();
  for (std::size_t i = 0; i < dst.size(); ++i) dst[i]->value = src[i]->value;
}

}  // namespace relmetric
