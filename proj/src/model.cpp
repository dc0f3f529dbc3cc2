#include "lvq/model.hpp"

#include <cmath>
#include <cstring>
#include <fstream>
#include <sstream>

namespace lvq::model {

// ---------------------------------------------------------------------------
// BackboneSpec

BackboneSpec BackboneSpec::by_name(const std::string& name) {
  BackboneSpec s;
  s.id = name;
  if (name == "tiny") {
    s.stem_channels = 8;
    s.stage_channels = {16, 32};
    s.stage_blocks = {1, 1};
  } else if (name == "small") {
    s.stem_channels = 16;
    s.stage_channels = {16, 32, 64, 128};
    s.stage_blocks = {1, 1, 1, 1};
  } else if (name == "base") {
    s.stem_channels = 32;
    s.stage_channels = {32, 64, 128, 256};
    s.stage_blocks = {2, 2, 2, 2};
  } else {
    throw BadInput("unknown backbone '" + name + "'");
  }
  return s;
}

std::string BackboneSpec::serialize() const {
  std::ostringstream ss;
  ss << "id=" << id << ";stem=" << stem_channels << ";channels=";
  for (std::size_t i = 0; i < stage_channels.size(); ++i)
    ss << (i ? "," : "") << stage_channels[i];
  ss << ";blocks=";
  for (std::size_t i = 0; i < stage_blocks.size(); ++i) ss << (i ? "," : "") << stage_blocks[i];
  ss << ";input=" << input_size;
  return ss.str();
}

BackboneSpec BackboneSpec::deserialize(const std::string& text) {
  BackboneSpec s;
  s.stage_channels.clear();
  s.stage_blocks.clear();
  for (const auto& part : split(text, ';')) {
    auto kv = split(part, '=');
    if (kv.size() != 2) throw BadInput("bad backbone spec: " + text);
    if (kv[0] == "id") s.id = kv[1];
    else if (kv[0] == "stem") s.stem_channels = std::atoi(kv[1].c_str());
    else if (kv[0] == "input") s.input_size = std::atoi(kv[1].c_str());
    else if (kv[0] == "channels")
      for (const auto& c : split(kv[1], ',')) s.stage_channels.push_back(std::atoi(c.c_str()));
    else if (kv[0] == "blocks")
      for (const auto& c : split(kv[1], ',')) s.stage_blocks.push_back(std::atoi(c.c_str()));
  }
  return s;
}

bool BackboneSpec::operator==(const BackboneSpec& o) const {
  return stem_channels == o.stem_channels && stage_channels == o.stage_channels &&
         stage_blocks == o.stage_blocks;
}

const char* target_mode_name(TargetMode m) {
  switch (m) {
    case TargetMode::regression: return "regression";
    case TargetMode::classification: return "classification";
    default: return "joint";
  }
}

TargetMode target_mode_from_name(const std::string& s) {
  if (s == "regression") return TargetMode::regression;
  if (s == "classification") return TargetMode::classification;
  if (s == "joint") return TargetMode::joint;
  throw BadInput("unknown target mode '" + s + "'");
}

int head_outputs(TargetMode m) {
  switch (m) {
    case TargetMode::regression: return 11;
    case TargetMode::classification: return 2;
    default: return 13;
  }
}

// ---------------------------------------------------------------------------
// Model forward/backward

Tensor Model::features_train_(const Tensor& x) {
  Tensor h = pool.forward_train(stem_relu.forward_train(stem_bn.forward_train(stem.forward_train(x))));
  for (auto& stage : stages)
    for (auto& block : stage) h = block.forward_train(h);
  return h;
}

Tensor Model::features_eval(const Tensor& x) const {
  Tensor h = pool.forward_eval(stem_relu.forward_eval(stem_bn.forward_eval(stem.forward_eval(x))));
  for (const auto& stage : stages)
    for (const auto& block : stage) h = block.forward_eval(h);
  return h;
}

Tensor Model::decoder_forward_train_(const Tensor& f) {
  Tensor h = f;
  for (auto& st : decoder) {
    h = st.halve.forward_train(h);
    h = st.up.forward(h);
    h = st.block.forward_train(h);
  }
  return decoder_proj.forward_train(h);
}

Tensor Model::decoder_forward_eval_(const Tensor& f) const {
  Tensor h = f;
  for (const auto& st : decoder) {
    h = st.halve.forward_eval(h);
    h = st.up.forward_eval(h);
    h = st.block.forward_eval(h);
  }
  return decoder_proj.forward_eval(h);
}

Tensor Model::decoder_backward_(const Tensor& g_seg) {
  Tensor g = decoder_proj.backward(g_seg);
  for (auto it = decoder.rbegin(); it != decoder.rend(); ++it) {
    g = it->block.backward(g);
    g = it->up.backward(g);
    g = it->halve.backward(g);
  }
  return g;
}

ModelOutput Model::forward_train(const Tensor& x, bool want_seg) {
  if (want_seg && !has_decoder) throw BadInput("segmentation output requested without decoder");
  Tensor f = features_train_(x);
  ModelOutput out;
  out.feature_shape = f.shape;
  out.head = head.forward_train(gap.forward(f));
  if (want_seg) out.seg = decoder_forward_train_(f);
  return out;
}

ModelOutput Model::forward_eval(const Tensor& x, bool want_seg) const {
  if (want_seg && !has_decoder) throw BadInput("segmentation output requested without decoder");
  Tensor f = features_eval(x);
  ModelOutput out;
  out.feature_shape = f.shape;
  out.head = head.forward_eval(gap.forward_eval(f));
  if (want_seg) out.seg = decoder_forward_eval_(f);
  return out;
}

void Model::backward(const Tensor& g_head, const Tensor* g_seg) {
  Tensor gf = gap.backward(head.backward(g_head));
  if (g_seg != nullptr) {
    Tensor gf2 = decoder_backward_(*g_seg);
    nn::add_inplace(gf, gf2);
  }
  Tensor g = gf;
  for (auto sit = stages.rbegin(); sit != stages.rend(); ++sit)
    for (auto bit = sit->rbegin(); bit != sit->rend(); ++bit) g = bit->backward(g);
  stem.backward(stem_bn.backward(stem_relu.backward(pool.backward(g))));
}

std::vector<nn::ParamRef> Model::trainable() {
  std::vector<nn::ParamRef> all = all_tensors();
  std::vector<nn::ParamRef> out;
  for (auto& p : all)
    if (p.grad != nullptr) out.push_back(p);
  return out;
}

std::vector<nn::ParamRef> Model::all_tensors() {
  std::vector<nn::ParamRef> out;
  stem.collect(out, "stem");
  stem_bn.collect(out, "stem_bn");
  for (std::size_t s = 0; s < stages.size(); ++s)
    for (std::size_t b = 0; b < stages[s].size(); ++b)
      stages[s][b].collect(out, "stage" + std::to_string(s + 1) + ".block" + std::to_string(b));
  head.collect(out, "head");
  if (has_decoder) {
    for (std::size_t d = 0; d < decoder.size(); ++d) {
      decoder[d].halve.collect(out, "decoder." + std::to_string(d) + ".halve");
      decoder[d].block.collect(out, "decoder." + std::to_string(d) + ".block");
    }
    decoder_proj.collect(out, "decoder.proj");
  }
  return out;
}

void Model::zero_grad() {
  for (auto& p : trainable()) p.grad->zero();
}

// ---------------------------------------------------------------------------
// Construction

namespace {
void init_body(Model& m, Rng& rng) {
  m.stem.init_he(rng);
  for (auto& stage : m.stages)
    for (auto& block : stage) {
      block.conv1.init_he(rng);
      block.conv2.init_he(rng);
      if (block.has_proj) block.proj.init_he(rng);
    }
}

void build_structure(Model& m, const BackboneSpec& spec) {
  m.spec = spec;
  m.stem = nn::Conv(3, spec.stem_channels, 3, 1, 2, 1);
  m.stem_bn = nn::BatchNorm(spec.stem_channels);
  m.stages.clear();
  int in_ch = spec.stem_channels;
  for (int s = 0; s < spec.n_stages(); ++s) {
    std::vector<nn::ResBlock> stage;
    int out_ch = spec.stage_channels[static_cast<std::size_t>(s)];
    for (int b = 0; b < spec.stage_blocks[static_cast<std::size_t>(s)]; ++b) {
      int stride = (s > 0 && b == 0) ? 2 : 1;
      stage.emplace_back(in_ch, out_ch, stride, 1);
      in_ch = out_ch;
    }
    m.stages.push_back(std::move(stage));
  }
}
}  // namespace

Model build_2d(const BackboneSpec& spec, TargetMode targets, const std::string& init,
               const fs::path& pretext_checkpoint, std::uint64_t seed, int n_outputs_override) {
  Model m;
  build_structure(m, spec);
  m.targets = targets;
  m.n_outputs = n_outputs_override > 0 ? n_outputs_override : head_outputs(targets);
  m.head = nn::Conv(spec.feature_channels(), m.n_outputs, 1, 1, 1, 0);

  Rng rng(seed, 0x30DE1);
  if (init == "random") {
    init_body(m, rng);
    m.init_lineage = "random";
  } else if (init == "pretrained") {
    load_body_weights(m, pretext_checkpoint);
    m.init_lineage = "pretrained:" + pretext_checkpoint.string();
  } else {
    throw BadInput("init must be 'random' or 'pretrained', got '" + init + "'");
  }
  // The head is freshly initialized in every case.
  m.head.init_head(rng);
  return m;
}

namespace {
// d_c copies scaled by 1/d_c; the last slice absorbs the rounding remainder
// so an in-order depth sum reproduces the source weight exactly.
void inflate_conv(nn::Conv& dst, const nn::Conv& src, int depth) {
  dst = nn::Conv(src.in_ch, src.out_ch, src.k, depth, src.stride, src.pad);
  std::int64_t per_slice = static_cast<std::int64_t>(src.k) * src.k;
  for (std::int64_t oc = 0; oc < src.out_ch; ++oc)
    for (std::int64_t ic = 0; ic < src.in_ch; ++ic)
      for (std::int64_t i = 0; i < per_slice; ++i) {
        double wv = src.w[(oc * src.in_ch + ic) * per_slice + i];
        double q = wv / static_cast<double>(depth);
        double partial = 0.0;
        for (int d = 0; d < depth; ++d) {
          double slice_v = (d + 1 < depth) ? q : wv - partial;
          dst.w[((oc * src.in_ch + ic) * depth + d) * per_slice + i] = slice_v;
          partial += slice_v;
        }
      }
  dst.b = src.b;
}

void inflate_block(nn::ResBlock& dst, const nn::ResBlock& src, int depth) {
  inflate_conv(dst.conv1, src.conv1, depth);
  inflate_conv(dst.conv2, src.conv2, depth);
  dst.bn1 = src.bn1;
  dst.bn2 = src.bn2;
  dst.has_proj = src.has_proj;
  if (src.has_proj) {
    inflate_conv(dst.proj, src.proj, 1);  // kernel-1 convolutions stay depth 1
    dst.proj_bn = src.proj_bn;
  }
}
}  // namespace

Model inflate_to_3d(const Model& m2d, int d_c) {
  if (m2d.inflated) throw UnsupportedLayer("model is already 3D");
  if (d_c < 1 || d_c % 2 == 0) throw BadInput("d_c must be odd, got " + std::to_string(d_c));
  Model m;
  m.spec = m2d.spec;
  m.targets = m2d.targets;
  m.n_outputs = m2d.n_outputs;
  m.inflated = true;
  m.kernel_depth = d_c;
  m.init_lineage = m2d.init_lineage + "+inflated";
  m.metadata = m2d.metadata;

  inflate_conv(m.stem, m2d.stem, m2d.stem.k > 1 ? d_c : 1);
  m.stem_bn = m2d.stem_bn;
  m.stages.resize(m2d.stages.size());
  for (std::size_t s = 0; s < m2d.stages.size(); ++s) {
    m.stages[s].resize(m2d.stages[s].size());
    for (std::size_t b = 0; b < m2d.stages[s].size(); ++b)
      inflate_block(m.stages[s][b], m2d.stages[s][b],
                    m2d.stages[s][b].conv1.k > 1 ? d_c : 1);
  }
  inflate_conv(m.head, m2d.head, 1);
  m.has_decoder = m2d.has_decoder;
  if (m2d.has_decoder) {
    // The decoder operates per temporal position: depth 1 throughout.
    m.decoder.resize(m2d.decoder.size());
    for (std::size_t d = 0; d < m2d.decoder.size(); ++d) {
      inflate_conv(m.decoder[d].halve, m2d.decoder[d].halve, 1);
      inflate_block(m.decoder[d].block, m2d.decoder[d].block, 1);
    }
    inflate_conv(m.decoder_proj, m2d.decoder_proj, 1);
  }
  return m;
}

void attach_sr_decoder(Model& m, std::uint64_t seed) {
  if (m.has_decoder) throw BadInput("decoder already attached");
  int n_up = m.spec.downsamplings();
  int ch = m.spec.feature_channels();
  {
    int probe = ch;
    for (int i = 0; i < n_up; ++i) probe /= 2;
    if (probe < 3)
      throw ChannelUnderflow("halving " + std::to_string(ch) + " channels " +
                             std::to_string(n_up) + " times drops below 3");
  }
  Rng rng(seed, 0xDEC0DE);
  int kd = 1;  // per temporal position, for 2D and 3D alike
  for (int i = 0; i < n_up; ++i) {
    Model::DecoderStage st;
    st.halve = nn::Conv(ch, ch / 2, 1, kd, 1, 0);
    st.halve.init_he(rng);
    ch /= 2;
    st.block = nn::ResBlock(ch, ch, 1, kd);
    st.block.conv1.init_he(rng);
    st.block.conv2.init_he(rng);
    m.decoder.push_back(std::move(st));
  }
  m.decoder_proj = nn::Conv(ch, 3, 1, kd, 1, 0);
  m.decoder_proj.init_he(rng);
  m.has_decoder = true;
}

// ---------------------------------------------------------------------------
// Checkpoints

namespace {
constexpr char kParamsFile[] = "params.bin";
constexpr char kManifestFile[] = "model.txt";

void write_params(const fs::path& file, std::vector<nn::ParamRef> params) {
  std::ofstream out(file, std::ios::binary);
  if (!out) throw DatasetWriteError("cannot write " + file.string());
  for (const auto& p : params) {
    std::uint32_t name_len = static_cast<std::uint32_t>(p.name.size());
    out.write(reinterpret_cast<const char*>(&name_len), 4);
    out.write(p.name.data(), name_len);
    std::uint32_t ndim = static_cast<std::uint32_t>(p.value->shape.size());
    out.write(reinterpret_cast<const char*>(&ndim), 4);
    for (auto d : p.value->shape) {
      std::uint32_t dd = static_cast<std::uint32_t>(d);
      out.write(reinterpret_cast<const char*>(&dd), 4);
    }
    std::vector<float> buf(p.value->v.size());
    for (std::size_t i = 0; i < buf.size(); ++i) buf[i] = static_cast<float>(p.value->v[i]);
    out.write(reinterpret_cast<const char*>(buf.data()),
              static_cast<std::streamsize>(buf.size() * 4));
  }
  if (!out) throw DatasetWriteError("short write to " + file.string());
}

struct NamedArray {
  std::vector<std::int64_t> shape;
  std::vector<float> data;
};

std::map<std::string, NamedArray> read_params(const fs::path& file) {
  std::ifstream in(file, std::ios::binary);
  if (!in) throw MissingCheckpoint("cannot open " + file.string());
  std::map<std::string, NamedArray> out;
  while (true) {
    std::uint32_t name_len = 0;
    in.read(reinterpret_cast<char*>(&name_len), 4);
    if (!in) break;
    std::string name(name_len, '\0');
    in.read(name.data(), name_len);
    std::uint32_t ndim = 0;
    in.read(reinterpret_cast<char*>(&ndim), 4);
    NamedArray arr;
    std::int64_t numel = 1;
    for (std::uint32_t i = 0; i < ndim; ++i) {
      std::uint32_t d = 0;
      in.read(reinterpret_cast<char*>(&d), 4);
      arr.shape.push_back(d);
      numel *= d;
    }
    arr.data.resize(static_cast<std::size_t>(numel));
    in.read(reinterpret_cast<char*>(arr.data.data()), numel * 4);
    if (!in) throw BadInput("truncated checkpoint " + file.string());
    out[name] = std::move(arr);
  }
  return out;
}
}  // namespace

void save_checkpoint(const Model& m, const fs::path& dir, const std::string& scaler_reference) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw DatasetWriteError("cannot create " + dir.string());

  Model& mm = const_cast<Model&>(m);  // collect() needs non-const pointers
  write_params(dir / kParamsFile, mm.all_tensors());

  std::ostringstream ss;
  ss << "spec=" << m.spec.serialize() << "\n";
  ss << "arch=" << m.spec.id << "\n";
  ss << "targets=" << target_mode_name(m.targets) << "\n";
  ss << "outputs=" << m.n_outputs << "\n";
  ss << "inflated=" << (m.inflated ? 1 : 0) << "\n";
  ss << "kernel_depth=" << m.kernel_depth << "\n";
  ss << "decoder=" << (m.has_decoder ? 1 : 0) << "\n";
  ss << "init=" << m.init_lineage << "\n";
  ss << "scaler=" << scaler_reference << "\n";
  for (const auto& [k, v] : m.metadata) ss << "meta." << k << "=" << v << "\n";
  write_text_file(dir / kManifestFile, ss.str());
}

Model load_checkpoint(const fs::path& dir) {
  if (!fs::exists(dir / kManifestFile) || !fs::exists(dir / kParamsFile))
    throw MissingCheckpoint("no checkpoint at " + dir.string());
  std::map<std::string, std::string> kv;
  for (const auto& line : split(read_text_file(dir / kManifestFile), '\n')) {
    auto pos = line.find('=');
    if (pos == std::string::npos) continue;
    kv[line.substr(0, pos)] = line.substr(pos + 1);
  }
  BackboneSpec spec = BackboneSpec::deserialize(kv.at("spec"));
  Model m;
  build_structure(m, spec);
  m.targets = target_mode_from_name(kv.at("targets"));
  m.n_outputs = std::atoi(kv.at("outputs").c_str());
  m.init_lineage = kv.at("init");
  m.head = nn::Conv(spec.feature_channels(), m.n_outputs, 1, 1, 1, 0);
  if (kv.at("decoder") == "1") attach_sr_decoder(m, 0);
  if (kv.at("inflated") == "1") {
    m = inflate_to_3d(m, std::atoi(kv.at("kernel_depth").c_str()));
    m.init_lineage = kv.at("init");
  }
  for (const auto& [k, v] : kv)
    if (k.rfind("meta.", 0) == 0) m.metadata[k.substr(5)] = v;

  auto arrays = read_params(dir / kParamsFile);
  for (auto& p : m.all_tensors()) {
    auto it = arrays.find(p.name);
    if (it == arrays.end()) throw BadInput("checkpoint missing array " + p.name);
    if (it->second.shape != p.value->shape)
      throw ShapeMismatch("array " + p.name + " has unexpected shape");
    for (std::size_t i = 0; i < p.value->v.size(); ++i)
      p.value->v[i] = static_cast<double>(it->second.data[i]);
  }
  return m;
}

void load_body_weights(Model& dst, const fs::path& dir) {
  if (!fs::exists(dir / kManifestFile) || !fs::exists(dir / kParamsFile))
    throw MissingCheckpoint("no pretext checkpoint at " + dir.string());
  std::map<std::string, std::string> kv;
  for (const auto& line : split(read_text_file(dir / kManifestFile), '\n')) {
    auto pos = line.find('=');
    if (pos == std::string::npos) continue;
    kv[line.substr(0, pos)] = line.substr(pos + 1);
  }
  BackboneSpec ckpt_spec = BackboneSpec::deserialize(kv.at("spec"));
  if (!(ckpt_spec == dst.spec))
    throw ShapeMismatch("pretext checkpoint backbone (" + ckpt_spec.serialize() +
                        ") does not match requested spec (" + dst.spec.serialize() + ")");
  auto arrays = read_params(dir / kParamsFile);
  for (auto& p : dst.all_tensors()) {
    if (p.name.rfind("head", 0) == 0 || p.name.rfind("decoder", 0) == 0) continue;
    auto it = arrays.find(p.name);
    if (it == arrays.end()) throw BadInput("pretext checkpoint missing array " + p.name);
    if (it->second.shape != p.value->shape)
      throw ShapeMismatch("array " + p.name + " has unexpected shape");
    for (std::size_t i = 0; i < p.value->v.size(); ++i)
      p.value->v[i] = static_cast<double>(it->second.data[i]);
  }
  for (const auto& [k, v] : kv)
    if (k.rfind("meta.", 0) == 0) dst.metadata[k.substr(5)] = v;
}

}  // namespace lvq::model
