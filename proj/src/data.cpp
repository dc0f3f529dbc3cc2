#include "lvq/data.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <sstream>

#include <json.hpp>

#include "lvq/kernels.hpp"
#include "lvq/rng.hpp"

namespace lvq::data {

using nlohmann::json;

namespace {

void write_binary(const fs::path& p, const void* ptr, std::size_t bytes) {
  std::ofstream out(p, std::ios::binary);
  if (!out) throw DatasetWriteError("cannot write " + p.string());
  out.write(static_cast<const char*>(ptr), static_cast<std::streamsize>(bytes));
  if (!out) throw DatasetWriteError("short write to " + p.string());
}

std::vector<char> read_binary(const fs::path& p, std::size_t expected) {
  std::ifstream in(p, std::ios::binary);
  if (!in) throw BadInput("cannot open " + p.string());
  std::vector<char> buf(expected);
  in.read(buf.data(), static_cast<std::streamsize>(expected));
  if (static_cast<std::size_t>(in.gcount()) != expected)
    throw BadInput("unexpected size of " + p.string());
  return buf;
}

json index_vector_to_json(const indices::IndexVector& iv, indices::Phase ph) {
  json j;
  j["cavity_area"] = iv.cavity_area;
  j["myo_area"] = iv.myo_area;
  j["dims"] = iv.dims;
  j["rwt"] = iv.rwt;
  j["phase"] = indices::phase_name(ph);
  return j;
}

}  // namespace

void write_study(const Study& s, const fs::path& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw DatasetWriteError("cannot create " + dir.string() + ": " + ec.message());

  std::int64_t T = s.n_frames(), H = s.height(), W = s.width();
  json meta;
  meta["id"] = s.patient_id;
  meta["spacing"] = s.spacing;
  meta["shape"] = {T, H, W};
  meta["dtype"] = "float32";
  write_text_file(dir / "meta.json", meta.dump(2) + "\n");

  std::vector<float> fbuf(static_cast<std::size_t>(T * H * W));
  std::size_t k = 0;
  for (const auto& f : s.frames)
    for (double v : f.v) fbuf[k++] = static_cast<float>(v);
  write_binary(dir / "frames.bin", fbuf.data(), fbuf.size() * sizeof(float));

  std::vector<std::uint8_t> mbuf(static_cast<std::size_t>(T * H * W));
  k = 0;
  for (const auto& m : s.masks)
    for (std::uint8_t v : m.v) mbuf[k++] = v;
  write_binary(dir / "masks.bin", mbuf.data(), mbuf.size());

  json idx;
  idx["patient_id"] = s.patient_id;
  idx["frames"] = json::array();
  for (int t = 0; t < T; ++t)
    idx["frames"].push_back(index_vector_to_json(s.targets[static_cast<std::size_t>(t)],
                                                 s.phases[static_cast<std::size_t>(t)]));
  write_text_file(dir / "indices.json", idx.dump(2) + "\n");
}

Study read_study(const fs::path& dir) {
  json meta = json::parse(read_text_file(dir / "meta.json"));
  Study s;
  s.patient_id = meta["id"].get<std::string>();
  s.spacing = meta["spacing"].get<double>();
  auto shape = meta["shape"].get<std::vector<std::int64_t>>();
  if (shape.size() != 3) throw BadInput("bad shape in " + dir.string());
  std::int64_t T = shape[0], H = shape[1], W = shape[2];
  if (meta["dtype"].get<std::string>() != "float32")
    throw BadInput("unsupported dtype in " + dir.string());

  auto fbytes = read_binary(dir / "frames.bin", static_cast<std::size_t>(T * H * W) * 4);
  const float* fp = reinterpret_cast<const float*>(fbytes.data());
  auto mbytes = read_binary(dir / "masks.bin", static_cast<std::size_t>(T * H * W));
  const std::uint8_t* mp = reinterpret_cast<const std::uint8_t*>(mbytes.data());

  for (std::int64_t t = 0; t < T; ++t) {
    ImagePlane img(H, W);
    MaskPlane mask(H, W);
    for (std::int64_t i = 0; i < H * W; ++i) {
      img.v[static_cast<std::size_t>(i)] = static_cast<double>(fp[t * H * W + i]);
      mask.v[static_cast<std::size_t>(i)] = mp[t * H * W + i];
    }
    s.frames.push_back(std::move(img));
    s.masks.push_back(std::move(mask));
  }

  json idx = json::parse(read_text_file(dir / "indices.json"));
  for (const auto& jf : idx["frames"]) {
    indices::IndexVector iv;
    iv.cavity_area = jf["cavity_area"].get<double>();
    iv.myo_area = jf["myo_area"].get<double>();
    auto d = jf["dims"].get<std::vector<double>>();
    auto r = jf["rwt"].get<std::vector<double>>();
    if (d.size() != 3 || r.size() != 6) throw BadInput("bad index arrays in " + dir.string());
    std::copy(d.begin(), d.end(), iv.dims.begin());
    std::copy(r.begin(), r.end(), iv.rwt.begin());
    s.targets.push_back(iv);
    s.phases.push_back(indices::phase_from_name(jf["phase"].get<std::string>()));
  }
  if (static_cast<std::int64_t>(s.targets.size()) != T)
    throw BadInput("frame count mismatch in " + dir.string());
  return s;
}

double percentile_lower(std::vector<double> values, double q) {
  std::sort(values.begin(), values.end());
  std::size_t n = values.size();
  double h = q * static_cast<double>(n - 1);
  return values[static_cast<std::size_t>(std::floor(h))];
}

double percentile_upper(std::vector<double> values, double q) {
  std::sort(values.begin(), values.end());
  std::size_t n = values.size();
  double h = q * static_cast<double>(n - 1);
  return values[static_cast<std::size_t>(std::ceil(h))];
}

namespace {

ImagePlane center_crop_pad_image(const ImagePlane& src, std::int64_t size) {
  ImagePlane dst(size, size);
  std::int64_t r0 = (src.h - size) / 2;
  std::int64_t c0 = (src.w - size) / 2;
  for (std::int64_t r = 0; r < size; ++r)
    for (std::int64_t c = 0; c < size; ++c) {
      std::int64_t sr = r + r0, sc = c + c0;
      dst.at(r, c) =
          (sr >= 0 && sr < src.h && sc >= 0 && sc < src.w) ? src.at(sr, sc) : 0.0;
    }
  return dst;
}

MaskPlane center_crop_pad_mask(const MaskPlane& src, std::int64_t size) {
  MaskPlane dst(size, size);
  std::int64_t r0 = (src.h - size) / 2;
  std::int64_t c0 = (src.w - size) / 2;
  for (std::int64_t r = 0; r < size; ++r)
    for (std::int64_t c = 0; c < size; ++c) {
      std::int64_t sr = r + r0, sc = c + c0;
      dst.at(r, c) =
          (sr >= 0 && sr < src.h && sc >= 0 && sc < src.w) ? src.at(sr, sc) : std::uint8_t{0};
    }
  return dst;
}

void normalize_slice(ImagePlane& img, const std::string& what) {
  double p1 = percentile_lower(img.v, 0.01);
  double p99 = percentile_upper(img.v, 0.99);
  for (double& v : img.v) v = std::min(std::max(v, p1), p99);

  double mean = 0.0;
  for (double v : img.v) mean += v;
  mean /= static_cast<double>(img.v.size());
  double var = 0.0;
  for (double v : img.v) var += (v - mean) * (v - mean);
  double sd = std::sqrt(var / static_cast<double>(img.v.size()));
  if (sd == 0.0) {
    warn("constant slice in " + what + ", mapping to zeros");
    for (double& v : img.v) v = 0.0;
    return;
  }
  for (double& v : img.v) v = (v - mean) / sd;
  double lo = *std::min_element(img.v.begin(), img.v.end());
  double hi = *std::max_element(img.v.begin(), img.v.end());
  for (double& v : img.v) v = (v - lo) / (hi - lo);
}

}  // namespace

indices::IndexVector convert_targets_to_physical(const indices::IndexVector& iv) {
  return iv;  // phantom targets are generated in mm / mm^2
}

Study preprocess_study(const Study& raw) {
  Study out;
  out.patient_id = raw.patient_id;
  out.spacing = kCanonicalSpacing;
  std::int64_t H = raw.height(), W = raw.width();
  std::int64_t nh = std::llround(static_cast<double>(H) * raw.spacing / kCanonicalSpacing);
  std::int64_t nw = std::llround(static_cast<double>(W) * raw.spacing / kCanonicalSpacing);

  for (int t = 0; t < raw.n_frames(); ++t) {
    ImagePlane res(nh, nw);
    kernels::resample_bilinear(res, raw.frames[static_cast<std::size_t>(t)]);
    ImagePlane img = center_crop_pad_image(res, kCanonicalSize);
    normalize_slice(img, raw.patient_id + " frame " + std::to_string(t));
    out.frames.push_back(std::move(img));

    MaskPlane mres(nh, nw);
    kernels::resample_nearest(mres, raw.masks[static_cast<std::size_t>(t)]);
    out.masks.push_back(center_crop_pad_mask(mres, kCanonicalSize));

    out.targets.push_back(convert_targets_to_physical(raw.targets[static_cast<std::size_t>(t)]));
  }
  out.phases = raw.phases;
  return out;
}

Study downsample_view(const Study& canonical, int factor) {
  if (factor <= 1) return canonical;
  Study out;
  out.patient_id = canonical.patient_id;
  std::int64_t size = canonical.height() / factor;
  out.spacing = canonical.spacing * static_cast<double>(canonical.height()) /
                static_cast<double>(size);
  for (int t = 0; t < canonical.n_frames(); ++t) {
    ImagePlane img(size, size);
    kernels::resample_bilinear(img, canonical.frames[static_cast<std::size_t>(t)]);
    out.frames.push_back(std::move(img));
    MaskPlane m(size, size);
    kernels::resample_nearest(m, canonical.masks[static_cast<std::size_t>(t)]);
    out.masks.push_back(std::move(m));
  }
  out.targets = canonical.targets;
  out.phases = canonical.phases;
  return out;
}

std::array<double, 11> TargetScaler::apply(const std::array<double, 11>& x) const {
  std::array<double, 11> y{};
  for (std::size_t i = 0; i < 11; ++i) y[i] = (x[i] - min[i]) / (max[i] - min[i]);
  return y;
}

std::array<double, 11> TargetScaler::invert(const std::array<double, 11>& y) const {
  std::array<double, 11> x{};
  for (std::size_t i = 0; i < 11; ++i) x[i] = y[i] * (max[i] - min[i]) + min[i];
  return x;
}

std::string TargetScaler::serialize() const {
  std::ostringstream ss;
  ss << "index\tmin\tmax\n";
  const auto& names = indices::IndexVector::names();
  for (std::size_t i = 0; i < 11; ++i)
    ss << names[i] << "\t" << fmt_double(min[i]) << "\t" << fmt_double(max[i]) << "\n";
  return ss.str();
}

TargetScaler TargetScaler::deserialize(const std::string& text) {
  TargetScaler sc;
  auto lines = split(text, '\n');
  const auto& names = indices::IndexVector::names();
  std::size_t found = 0;
  for (const auto& line : lines) {
    auto f = split(line, '\t');
    if (f.size() != 3) continue;
    for (std::size_t i = 0; i < 11; ++i)
      if (f[0] == names[i]) {
        sc.min[i] = std::strtod(f[1].c_str(), nullptr);
        sc.max[i] = std::strtod(f[2].c_str(), nullptr);
        ++found;
      }
  }
  if (found != 11) throw BadInput("target scaler text is missing indices");
  return sc;
}

TargetScaler fit_target_scaler(const std::vector<const Study*>& training) {
  if (training.size() < 2) throw BadInput("fit_target_scaler needs at least 2 studies");
  TargetScaler sc;
  sc.min.fill(std::numeric_limits<double>::infinity());
  sc.max.fill(-std::numeric_limits<double>::infinity());
  for (const Study* s : training)
    for (const auto& iv : s->targets) {
      auto f = iv.flat();
      for (std::size_t i = 0; i < 11; ++i) {
        sc.min[i] = std::min(sc.min[i], f[i]);
        sc.max[i] = std::max(sc.max[i], f[i]);
      }
    }
  for (std::size_t i = 0; i < 11; ++i)
    if (!(sc.max[i] > sc.min[i]))
      throw DegenerateScaler("max equals min for index " + indices::IndexVector::names()[i]);
  return sc;
}

std::vector<std::string> FoldPlan::patients_in_fold(int fold) const {
  std::vector<std::string> out;
  for (const auto& [id, f] : fold_of)
    if (f == fold) out.push_back(id);
  return out;
}

std::vector<std::string> FoldPlan::patients_not_in_fold(int fold) const {
  std::vector<std::string> out;
  for (const auto& [id, f] : fold_of)
    if (f != fold) out.push_back(id);
  return out;
}

std::vector<std::string> FoldPlan::patients_in_half(int fold, int half) const {
  std::vector<std::string> out;
  for (const auto& [id, f] : fold_of)
    if (f == fold && half_of.at(id) == half) out.push_back(id);
  return out;
}

std::string FoldPlan::serialize() const {
  std::ostringstream ss;
  ss << "patient\tfold\thalf\n";
  for (const auto& [id, f] : fold_of) ss << id << "\t" << f << "\t" << half_of.at(id) << "\n";
  return ss.str();
}

FoldPlan FoldPlan::deserialize(const std::string& text) {
  FoldPlan plan;
  int max_fold = 0;
  bool header = true;
  for (const auto& line : split(text, '\n')) {
    if (header) {
      header = false;
      continue;
    }
    if (trim(line).empty()) continue;
    auto f = split(line, '\t');
    if (f.size() != 3) throw BadInput("malformed fold plan line: " + line);
    plan.fold_of[f[0]] = std::atoi(f[1].c_str());
    plan.half_of[f[0]] = std::atoi(f[2].c_str());
    max_fold = std::max(max_fold, std::atoi(f[1].c_str()));
  }
  plan.n_folds = max_fold + 1;
  return plan;
}

FoldPlan make_fold_plan(std::vector<std::string> ids, std::uint64_t seed, int n_folds) {
  if (static_cast<int>(ids.size()) < 2 * n_folds)
    throw InsufficientPatients("fold plan needs at least " + std::to_string(2 * n_folds) +
                               " patients, got " + std::to_string(ids.size()));
  std::sort(ids.begin(), ids.end());
  Rng rng(seed, 0xF01D);
  rng.shuffle(ids);

  FoldPlan plan;
  plan.n_folds = n_folds;
  // Round-robin keeps fold sizes within one of each other.
  std::vector<std::vector<std::string>> folds(static_cast<std::size_t>(n_folds));
  for (std::size_t i = 0; i < ids.size(); ++i)
    folds[i % static_cast<std::size_t>(n_folds)].push_back(ids[i]);
  for (int f = 0; f < n_folds; ++f) {
    const auto& members = folds[static_cast<std::size_t>(f)];
    for (std::size_t i = 0; i < members.size(); ++i) {
      plan.fold_of[members[i]] = f;
      plan.half_of[members[i]] = i < (members.size() + 1) / 2 ? 0 : 1;
    }
  }
  return plan;
}

}  // namespace lvq::data
