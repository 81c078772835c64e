#include "emosynth/checkpoint.hpp"

#include <bit>
#include <charconv>
#include <fstream>
#include <map>
#include <sstream>

namespace emosynth {

namespace {

constexpr char kMagic[8] = {'E', 'M', 'O', 'S', 'Y', 'N', 'C', 'K'};

template <typename T>
void put(std::string& out, T v) {
  static_assert(std::is_unsigned_v<T>);
  for (std::size_t i = 0; i < sizeof(T); ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xFF));
}

void put_double(std::string& out, double d) { put(out, std::bit_cast<std::uint64_t>(d)); }

void put_string(std::string& out, const std::string& s) {
  put(out, static_cast<std::uint32_t>(s.size()));
  out += s;
}

class Reader {
 public:
  explicit Reader(const std::string& bytes) : bytes_(bytes) {}

  template <typename T>
  T get(const char* what) {
    static_assert(std::is_unsigned_v<T>);
    need(sizeof(T), what);
    T v = 0;
    for (std::size_t i = 0; i < sizeof(T); ++i) {
      v |= static_cast<T>(static_cast<unsigned char>(bytes_[pos_ + i])) << (8 * i);
    }
    pos_ += sizeof(T);
    return v;
  }

  double get_double(const char* what) { return std::bit_cast<double>(get<std::uint64_t>(what)); }

  std::string get_bytes(std::size_t n, const char* what) {
    need(n, what);
    std::string s = bytes_.substr(pos_, n);
    pos_ += n;
    return s;
  }

  std::string get_string(const char* what) { return get_bytes(get<std::uint32_t>(what), what); }

  [[nodiscard]] bool done() const { return pos_ == bytes_.size(); }

 private:
  void need(std::size_t n, const char* what) const {
    if (bytes_.size() - pos_ < n) {
      throw CheckpointError(std::string("checkpoint truncated while reading ") + what + " at byte " +
                            std::to_string(pos_));
    }
  }

  const std::string& bytes_;
  std::size_t pos_ = 0;
};

std::string fmt(double v) {
  char buf[32];
  const auto r = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, r.ptr);
}

std::string metadata(const Checkpoint& c) {
  const auto& d = c.model.dims;
  const auto& s = c.model.schedule;
  const auto& t = c.config;
  std::ostringstream os;
  os << "model.seed=" << c.model.seed << '\n'
     << "model.dim=" << d.dim << '\n'
     << "model.vocab=" << d.vocab << '\n'
     << "model.emotions=" << d.emotions << '\n'
     << "model.style=" << d.style << '\n'
     << "model.emotion_embed=" << d.emotion_embed << '\n'
     << "model.token_embed=" << d.token_embed << '\n'
     << "model.hidden=" << d.hidden << '\n'
     << "model.hidden_layers=" << d.hidden_layers << '\n'
     << "model.linear_skip=" << (d.linear_skip ? 1 : 0) << '\n'
     << "schedule.beta0=" << fmt(s.beta0) << '\n'
     << "schedule.beta1=" << fmt(s.beta1) << '\n'
     << "schedule.terminal=" << fmt(s.terminal) << '\n'
     << "train.alpha=" << fmt(t.alpha) << '\n'
     << "train.p_null=" << fmt(t.p_null) << '\n'
     << "train.lr=" << fmt(t.lr) << '\n'
     << "train.clip_norm=" << fmt(t.clip_norm) << '\n'
     << "train.steps=" << t.steps << '\n'
     << "train.batch_size=" << t.batch_size << '\n'
     << "train.w_recon=" << fmt(t.w_recon) << '\n'
     << "train.w_dsm=" << fmt(t.w_dsm) << '\n'
     << "train.w_dat=" << fmt(t.w_dat) << '\n'
     << "train.probe_lr=" << fmt(t.probe_lr) << '\n'
     << "train.min_len=" << t.min_len << '\n'
     << "train.max_len=" << t.max_len << '\n'
     << "train.dsm_through_condition=" << (t.dsm_through_condition ? 1 : 0) << '\n'
     << "train.log_every=" << t.log_every << '\n'
     << "train.seed=" << t.seed << '\n'
     << "train.lr_final_scale=" << fmt(t.lr_final_scale) << '\n'
     << "train.clf_steps=" << t.clf_steps << '\n'
     << "train.clf_batch=" << t.clf_batch << '\n'
     << "train.clf_lr=" << fmt(t.clf_lr) << '\n'
     << "train.clf_examples=" << t.clf_examples << '\n'
     << "train.clf_reference_len=" << t.clf_reference_len << '\n'
     << "world_hash=" << c.world_hash << '\n'
     << "step=" << c.step << '\n'
     << "null_row_trained=" << (c.null_row_trained ? 1 : 0) << '\n'
     << "classifier_trained=" << (c.classifier_trained ? 1 : 0) << '\n';
  return os.str();
}

class Meta {
 public:
  explicit Meta(const std::string& text) {
    std::istringstream is(text);
    std::string line;
    while (std::getline(is, line)) {
      const auto eq = line.find('=');
      if (eq == std::string::npos) throw CheckpointError("malformed metadata line '" + line + "'");
      values_[line.substr(0, eq)] = line.substr(eq + 1);
    }
  }

  template <typename T>
  T get(const std::string& key) const {
    const auto it = values_.find(key);
    if (it == values_.end()) throw CheckpointError("checkpoint metadata lacks '" + key + "'");
    T v{};
    const char* b = it->second.data();
    const char* e = b + it->second.size();
    const auto r = std::from_chars(b, e, v);
    if (r.ec != std::errc() || r.ptr != e) throw CheckpointError("bad metadata value for '" + key + "'");
    return v;
  }

 private:
  std::map<std::string, std::string> values_;
};

}  // namespace

std::string serialize_checkpoint(const Checkpoint& c) {
  std::string out(kMagic, sizeof(kMagic));
  put(out, kCheckpointVersion);
  put_string(out, metadata(c));
  const auto stores = c.model.named_stores();
  put(out, static_cast<std::uint32_t>(stores.size()));
  for (const auto& [name, store] : stores) {
    put_string(out, name);
    put(out, store->seed());
    put(out, static_cast<std::uint32_t>(store->size()));
    for (const auto& e : store->entries()) {
      put_string(out, e.name);
      put(out, static_cast<std::uint64_t>(e.value.rows()));
      put(out, static_cast<std::uint64_t>(e.value.cols()));
      for (Index i = 0; i < e.value.size(); ++i) put_double(out, e.value.data()[i]);
    }
  }
  return out;
}

Checkpoint deserialize_checkpoint(const std::string& bytes) {
  Reader r(bytes);
  if (r.get_bytes(sizeof(kMagic), "magic") != std::string(kMagic, sizeof(kMagic))) {
    throw CheckpointError("not a checkpoint file (bad magic)");
  }
  const auto version = r.get<std::uint32_t>("version");
  if (version != kCheckpointVersion) {
    throw CheckpointError("unsupported checkpoint version " + std::to_string(version));
  }
  const Meta meta(r.get_string("metadata"));

  ModelDims d;
  d.dim = meta.get<Index>("model.dim");
  d.vocab = meta.get<Index>("model.vocab");
  d.emotions = meta.get<Index>("model.emotions");
  d.style = meta.get<Index>("model.style");
  d.emotion_embed = meta.get<Index>("model.emotion_embed");
  d.token_embed = meta.get<Index>("model.token_embed");
  d.hidden = meta.get<Index>("model.hidden");
  d.hidden_layers = meta.get<Index>("model.hidden_layers");
  d.linear_skip = meta.get<int>("model.linear_skip") != 0;
  NoiseSchedule s;
  s.beta0 = meta.get<double>("schedule.beta0");
  s.beta1 = meta.get<double>("schedule.beta1");
  s.terminal = meta.get<double>("schedule.terminal");
  TrainConfig t;
  t.alpha = meta.get<double>("train.alpha");
  t.p_null = meta.get<double>("train.p_null");
  t.lr = meta.get<double>("train.lr");
  t.clip_norm = meta.get<double>("train.clip_norm");
  t.steps = meta.get<Index>("train.steps");
  t.batch_size = meta.get<Index>("train.batch_size");
  t.w_recon = meta.get<double>("train.w_recon");
  t.w_dsm = meta.get<double>("train.w_dsm");
  t.w_dat = meta.get<double>("train.w_dat");
  t.probe_lr = meta.get<double>("train.probe_lr");
  t.min_len = meta.get<Index>("train.min_len");
  t.max_len = meta.get<Index>("train.max_len");
  t.dsm_through_condition = meta.get<int>("train.dsm_through_condition") != 0;
  t.log_every = meta.get<Index>("train.log_every");
  t.seed = meta.get<std::uint64_t>("train.seed");
  t.lr_final_scale = meta.get<double>("train.lr_final_scale");
  t.clf_steps = meta.get<Index>("train.clf_steps");
  t.clf_batch = meta.get<Index>("train.clf_batch");
  t.clf_lr = meta.get<double>("train.clf_lr");
  t.clf_examples = meta.get<Index>("train.clf_examples");
  t.clf_reference_len = meta.get<Index>("train.clf_reference_len");

  Checkpoint c{Model(d, s, meta.get<std::uint64_t>("model.seed")), t, meta.get<std::uint64_t>("world_hash")};
  c.step = meta.get<Index>("step");
  c.null_row_trained = meta.get<int>("null_row_trained") != 0;
  c.classifier_trained = meta.get<int>("classifier_trained") != 0;

  auto stores = c.model.named_stores();
  const auto n_stores = r.get<std::uint32_t>("store count");
  if (n_stores != stores.size()) throw CheckpointError("checkpoint store count mismatch");
  for (auto& [name, store] : stores) {
    const std::string got = r.get_string("store name");
    if (got != name) throw CheckpointError("expected store '" + name + "', found '" + got + "'");
    const auto seed = r.get<std::uint64_t>("store seed");
    if (seed != store->seed()) throw CheckpointError("store '" + name + "' seed does not match the model seed");
    const auto n = r.get<std::uint32_t>("entry count");
    if (n != store->size()) throw CheckpointError("store '" + name + "' entry count mismatch");
    for (std::uint32_t i = 0; i < n; ++i) {
      const std::string pname = r.get_string("parameter name");
      if (!store->contains(pname)) throw CheckpointError("unknown parameter '" + pname + "' in store '" + name + "'");
      Tensor& v = store->value(pname);
      const auto rows = r.get<std::uint64_t>("rows");
      const auto cols = r.get<std::uint64_t>("cols");
      if (rows != static_cast<std::uint64_t>(v.rows()) || cols != static_cast<std::uint64_t>(v.cols())) {
        throw CheckpointError("parameter '" + pname + "' has shape " + std::to_string(rows) + "x" +
                              std::to_string(cols) + ", expected " + shape_string(v));
      }
      for (Index k = 0; k < v.size(); ++k) v.data()[k] = r.get_double("parameter data");
    }
  }
  if (!r.done()) throw CheckpointError("trailing bytes after checkpoint data");
  return c;
}

void save_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& path) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw CheckpointError("cannot write checkpoint " + path.string());
  const std::string bytes = serialize_checkpoint(ckpt);
  os.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!os) throw CheckpointError("failed writing checkpoint " + path.string());
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw CheckpointError("cannot open checkpoint " + path.string());
  std::ostringstream ss;
  ss << is.rdbuf();
  return deserialize_checkpoint(ss.str());
}

std::uint64_t checkpoint_hash(const Checkpoint& ckpt) { return fnv1a(serialize_checkpoint(ckpt)); }

}  // namespace emosynth
