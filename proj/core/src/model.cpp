#include "biacl/model.hpp"

#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <stdexcept>

namespace biacl {

namespace {

// parameter-registry offsets inside one layer block
enum EncSlot {
  kWq, kWk, kWv, kWo, kBq, kBk, kBv, kBo,
  kLn1G, kLn1B, kW1, kB1, kW2, kB2, kLn2G, kLn2B,
  kEncSlots
};
enum DecSlot {
  kSWq, kSWk, kSWv, kSWo, kSBq, kSBk, kSBv, kSBo,
  kDLn1G, kDLn1B,
  kCWq, kCWk, kCWv, kCWo, kCBq, kCBk, kCBv, kCBo,
  kDLn2G, kDLn2B,
  kDW1, kDB1, kDW2, kDB2, kDLn3G, kDLn3B,
  kDecSlots
};

size_t enc_base(const ModelConfig& cfg, int64_t layer) {
  (void)cfg;
  return 1 + static_cast<size_t>(layer) * kEncSlots;
}
size_t dec_base(const ModelConfig& cfg, int64_t layer) {
  return 1 + static_cast<size_t>(cfg.layers) * kEncSlots + static_cast<size_t>(layer) * kDecSlots;
}

}  // namespace

void ModelConfig::validate() const {
  if (vocab_size <= 0) throw std::invalid_argument("model config: vocab_size must be positive");
  if (d_model <= 0 || heads <= 0 || d_model % heads != 0)
    throw std::invalid_argument("model config: d_model must be a positive multiple of heads");
  if (layers <= 0) throw std::invalid_argument("model config: layers must be positive");
  if (max_len < 2) throw std::invalid_argument("model config: max_len must be at least 2");
  if (language_tags.empty())
    throw std::invalid_argument("model config: at least one language tag id is required");
  for (int t : language_tags)
    if (t < 0 || t >= vocab_size)
      throw std::invalid_argument("model config: language tag id " + std::to_string(t) +
                                  " outside vocabulary of size " + std::to_string(vocab_size));
}

bool ModelConfig::is_language_tag(int id) const {
  for (int t : language_tags)
    if (t == id) return true;
  return false;
}

Model::Model(ModelConfig cfg, uint64_t seed) : cfg_(std::move(cfg)) {
  cfg_.validate();
  build_params(seed);
}

void Model::build_params(uint64_t seed) {
  params_.clear();
  Rng rng(seed);
  const int64_t d = cfg_.d_model;
  const int64_t h = 4 * d;  // feed-forward width

  auto mat = [&](const std::string& name, int64_t r, int64_t c) {
    params_.push_back({name, random_uniform(rng, {r, c}, -0.08, 0.08)});
  };
  auto vec = [&](const std::string& name, int64_t n) {
    params_.push_back({name, random_uniform(rng, {n}, -0.08, 0.08)});
  };
  auto ln = [&](const std::string& name) {
    params_.push_back({name + ".gain", Tensor::full({d}, 1.0)});
    params_.push_back({name + ".bias", Tensor::zeros({d})});
  };
  auto attn = [&](const std::string& name) {
    mat(name + ".wq", d, d);
    mat(name + ".wk", d, d);
    mat(name + ".wv", d, d);
    mat(name + ".wo", d, d);
    vec(name + ".bq", d);
    vec(name + ".bk", d);
    vec(name + ".bv", d);
    vec(name + ".bo", d);
  };
  auto ffn = [&](const std::string& name) {
    mat(name + ".w1", d, h);
    vec(name + ".b1", h);
    mat(name + ".w2", h, d);
    vec(name + ".b2", d);
  };

  mat("embed", cfg_.vocab_size, d);
  for (int64_t l = 0; l < cfg_.layers; ++l) {
    std::string p = "enc." + std::to_string(l);
    attn(p + ".self");
    ln(p + ".ln1");
    ffn(p + ".ffn");
    ln(p + ".ln2");
  }
  for (int64_t l = 0; l < cfg_.layers; ++l) {
    std::string p = "dec." + std::to_string(l);
    attn(p + ".self");
    ln(p + ".ln1");
    attn(p + ".cross");
    ln(p + ".ln2");
    ffn(p + ".ffn");
    ln(p + ".ln3");
  }

  // sinusoidal position table
  pos_ = Tensor::zeros({cfg_.max_len, d});
  for (int64_t p = 0; p < cfg_.max_len; ++p)
    for (int64_t i = 0; i < d; i += 2) {
      double freq = std::pow(10000.0, -static_cast<double>(i) / static_cast<double>(d));
      pos_.at(p, i) = std::sin(static_cast<double>(p) * freq);
      if (i + 1 < d) pos_.at(p, i + 1) = std::cos(static_cast<double>(p) * freq);
    }
}

Tensor Model::position_rows(int64_t len) const {
  Tensor out = Tensor::zeros({len, cfg_.d_model});
  std::memcpy(out.data.data(), pos_.data.data(),
              static_cast<size_t>(len * cfg_.d_model) * sizeof(double));
  return out;
}

BoundModel Model::bind(Graph& g) const {
  BoundModel b;
  b.model_ = this;
  b.g_ = &g;
  b.values_.reserve(params_.size());
  for (size_t i = 0; i < params_.size(); ++i)
    b.values_.push_back(g.parameter(params_[i].value, static_cast<int64_t>(i)));
  return b;
}

namespace {

// multi-head attention with per-head column slices of the projected q/k/v
Value mha(const BoundModel& bm, const ModelConfig& cfg, const Value& x_q, const Value& x_kv,
          size_t base, bool causal) {
  Value q = add(matmul(x_q, bm.param(base + 0)), bm.param(base + 4));
  Value k = add(matmul(x_kv, bm.param(base + 1)), bm.param(base + 5));
  Value v = add(matmul(x_kv, bm.param(base + 2)), bm.param(base + 6));
  int64_t hd = cfg.d_model / cfg.heads;
  Value heads_out;
  for (int64_t h = 0; h < cfg.heads; ++h) {
    Value qh = slice_cols(q, h * hd, (h + 1) * hd);
    Value kh = slice_cols(k, h * hd, (h + 1) * hd);
    Value vh = slice_cols(v, h * hd, (h + 1) * hd);
    Value oh = scaled_dot_attention(qh, kh, vh, causal);
    heads_out = h == 0 ? oh : concat_cols(heads_out, oh);
  }
  return add(matmul(heads_out, bm.param(base + 3)), bm.param(base + 7));
}

Value ffn_block(const BoundModel& bm, const Value& x, size_t w1, size_t b1, size_t w2, size_t b2) {
  Value hidden = silu(add(matmul(x, bm.param(w1)), bm.param(b1)));
  return add(matmul(hidden, bm.param(w2)), bm.param(b2));
}

}  // namespace

HiddenSeq BoundModel::encode_soft(const Value& vectors, int lang) const {
  const ModelConfig& cfg = model_->config();
  if (!cfg.is_language_tag(lang))
    throw std::invalid_argument("encode: id " + std::to_string(lang) +
                                " is not a configured language tag");
  if (vectors.graph() != g_)
    throw std::invalid_argument("encode_soft: input vectors live on a different graph");
  const Tensor& t = vectors.tensor();
  if (t.rank() != 2 || t.cols() != cfg.d_model)
    throw std::invalid_argument("encode_soft: expected [len x d_model], got " + shape_str(t.shape));
  int64_t len = t.rows();
  if (len + 1 > cfg.max_len)
    throw std::invalid_argument("encode: input length " + std::to_string(len) +
                                " plus the language tag exceeds max_len " +
                                std::to_string(cfg.max_len));

  Value tag = embedding(values_[0], {lang});
  Value x = concat_rows(tag, vectors);
  x = add(x, g_->constant(model_->position_rows(len + 1)));
  for (int64_t l = 0; l < cfg.layers; ++l) {
    size_t base = enc_base(cfg, l);
    Value h = mha(*this, cfg, x, x, base + kWq, /*causal=*/false);
    x = layer_norm(add(x, h), values_[base + kLn1G], values_[base + kLn1B]);
    Value f = ffn_block(*this, x, base + kW1, base + kB1, base + kW2, base + kB2);
    x = layer_norm(add(x, f), values_[base + kLn2G], values_[base + kLn2B]);
  }
  return {x, lang};
}

HiddenSeq BoundModel::encode(const std::vector<int>& tokens, int lang) const {
  if (tokens.empty()) throw std::invalid_argument("encode: empty token sequence");
  // identical pipeline to encode_soft over the embedded rows, by construction
  Value emb = embedding(values_[0], tokens);
  return encode_soft(emb, lang);
}

DecodeResult BoundModel::decode(const HiddenSeq& memory, int lang,
                                const std::vector<int>& teacher) const {
  const ModelConfig& cfg = model_->config();
  if (!cfg.is_language_tag(lang))
    throw std::invalid_argument("decode: id " + std::to_string(lang) +
                                " is not a configured language tag");
  if (teacher.empty()) throw std::invalid_argument("decode: empty teacher sequence");
  if (memory.states.graph() != g_)
    throw std::invalid_argument("decode: memory lives on a different graph");
  int64_t len = static_cast<int64_t>(teacher.size());
  if (len > cfg.max_len)
    throw std::invalid_argument("decode: teacher length " + std::to_string(len) +
                                " exceeds max_len " + std::to_string(cfg.max_len));

  // input row 0 is the language tag, row t is teacher[t-1]
  Value x = embedding(values_[0], {lang});
  if (len > 1) {
    std::vector<int> shifted(teacher.begin(), teacher.end() - 1);
    x = concat_rows(x, embedding(values_[0], shifted));
  }
  x = add(x, g_->constant(model_->position_rows(len)));

  for (int64_t l = 0; l < cfg.layers; ++l) {
    size_t base = dec_base(cfg, l);
    Value h = mha(*this, cfg, x, x, base + kSWq, /*causal=*/true);
    x = layer_norm(add(x, h), values_[base + kDLn1G], values_[base + kDLn1B]);
    Value c = mha(*this, cfg, x, memory.states, base + kCWq, /*causal=*/false);
    x = layer_norm(add(x, c), values_[base + kDLn2G], values_[base + kDLn2B]);
    Value f = ffn_block(*this, x, base + kDW1, base + kDB1, base + kDW2, base + kDB2);
    x = layer_norm(add(x, f), values_[base + kDLn3G], values_[base + kDLn3B]);
  }

  // tied output projection against the embedding table
  Value logits = matmul(x, transpose(values_[0]));
  return {x, logits};
}

Tensor BoundModel::step_logits(const HiddenSeq& memory, int lang,
                               const std::vector<int>& prefix) const {
  DecodeResult r = decode(memory, lang, prefix);
  const Tensor& lg = r.logits.tensor();
  int64_t last = lg.rows() - 1;
  Tensor out = Tensor::zeros({lg.cols()});
  for (int64_t j = 0; j < lg.cols(); ++j) out.at(j) = lg.at(last, j);
  return out;
}

// ---- checkpoint io ----------------------------------------------------------

namespace {

constexpr char kMagic[6] = {'B', 'I', 'A', 'C', 'L', '1'};

void put_u64(std::ostream& os, uint64_t v) {
  unsigned char b[8];
  for (int i = 0; i < 8; ++i) b[i] = static_cast<unsigned char>((v >> (8 * i)) & 0xff);
  os.write(reinterpret_cast<const char*>(b), 8);
}

uint64_t get_u64(std::istream& is, const std::string& path) {
  unsigned char b[8];
  is.read(reinterpret_cast<char*>(b), 8);
  if (is.gcount() != 8) throw std::runtime_error("checkpoint truncated: " + path);
  uint64_t v = 0;
  for (int i = 0; i < 8; ++i) v |= static_cast<uint64_t>(b[i]) << (8 * i);
  return v;
}

void put_f64(std::ostream& os, double d) { put_u64(os, std::bit_cast<uint64_t>(d)); }

double get_f64(std::istream& is, const std::string& path) {
  return std::bit_cast<double>(get_u64(is, path));
}

}  // namespace

void Model::save(const std::string& path) const {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw std::runtime_error("cannot write checkpoint: " + path);
  os.write(kMagic, sizeof(kMagic));
  put_u64(os, static_cast<uint64_t>(cfg_.vocab_size));
  put_u64(os, static_cast<uint64_t>(cfg_.d_model));
  put_u64(os, static_cast<uint64_t>(cfg_.layers));
  put_u64(os, static_cast<uint64_t>(cfg_.heads));
  put_u64(os, static_cast<uint64_t>(cfg_.max_len));
  put_u64(os, static_cast<uint64_t>(cfg_.language_tags.size()));
  for (int t : cfg_.language_tags) put_u64(os, static_cast<uint64_t>(t));
  put_u64(os, static_cast<uint64_t>(params_.size()));
  for (const Parameter& p : params_) {
    put_u64(os, static_cast<uint64_t>(p.value.rank()));
    for (int64_t d : p.value.shape) put_u64(os, static_cast<uint64_t>(d));
    for (double x : p.value.data) put_f64(os, x);
  }
  if (!os) throw std::runtime_error("error while writing checkpoint: " + path);
}

Model Model::load(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("cannot open checkpoint: " + path);
  char magic[6];
  is.read(magic, 6);
  if (is.gcount() != 6 || std::memcmp(magic, kMagic, 6) != 0)
    throw std::runtime_error("bad checkpoint magic in " + path);

  Model m;
  m.cfg_.vocab_size = static_cast<int64_t>(get_u64(is, path));
  m.cfg_.d_model = static_cast<int64_t>(get_u64(is, path));
  m.cfg_.layers = static_cast<int64_t>(get_u64(is, path));
  m.cfg_.heads = static_cast<int64_t>(get_u64(is, path));
  m.cfg_.max_len = static_cast<int64_t>(get_u64(is, path));
  uint64_t n_tags = get_u64(is, path);
  for (uint64_t i = 0; i < n_tags; ++i)
    m.cfg_.language_tags.push_back(static_cast<int>(get_u64(is, path)));
  m.cfg_.validate();
  m.build_params(1);  // layout only; values overwritten below

  uint64_t n_tensors = get_u64(is, path);
  if (n_tensors != m.params_.size())
    throw std::runtime_error("checkpoint tensor count " + std::to_string(n_tensors) +
                             " does not match model layout (" + std::to_string(m.params_.size()) +
                             ") in " + path);
  for (Parameter& p : m.params_) {
    uint64_t rank = get_u64(is, path);
    if (rank != static_cast<uint64_t>(p.value.rank()))
      throw std::runtime_error("checkpoint rank mismatch for " + p.name + " in " + path);
    for (int64_t d : p.value.shape) {
      uint64_t got = get_u64(is, path);
      if (got != static_cast<uint64_t>(d))
        throw std::runtime_error("checkpoint dim mismatch for " + p.name + " in " + path);
    }
    for (double& x : p.value.data) x = get_f64(is, path);
  }
  return m;
}

}  // namespace biacl
