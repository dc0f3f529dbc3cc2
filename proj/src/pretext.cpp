#include "lvq/pretext.hpp"

#include <cmath>

#include "lvq/train.hpp"

namespace lvq::pretext {

namespace {

struct Shape {
  double cx, cy;      // fraction of the canvas
  double fg, bg;      // intensities
  double noise, bias_amp;
  double b1, b2, b3;  // bias coefficients
};

Shape base_shape(Rng& rng) {
  Shape s;
  s.cx = rng.uniform(0.38, 0.62);
  s.cy = rng.uniform(0.38, 0.62);
  s.bg = rng.uniform(0.08, 0.20);
  s.fg = rng.uniform(0.55, 0.92);
  s.noise = rng.uniform(0.02, 0.05);
  s.bias_amp = rng.uniform(0.03, 0.10);
  s.b1 = rng.uniform(-1.0, 1.0);
  s.b2 = rng.uniform(-1.0, 1.0);
  s.b3 = rng.uniform(-1.0, 1.0);
  return s;
}

}  // namespace

ImagePlane render_class_image(int class_id, int size, Rng& rng) {
  Shape sh = base_shape(rng);
  double S = static_cast<double>(size);
  double cx = sh.cx * S, cy = sh.cy * S;

  // class-family parameters
  double r = 0.0, w = 0.0, ratio = 1.0, r2 = 0.0;
  switch (class_id) {
    case 0: r = rng.uniform(0.10, 0.16) * S; break;                       // small disk
    case 1: r = rng.uniform(0.26, 0.34) * S; break;                       // large disk
    case 2: r = rng.uniform(0.12, 0.18) * S; w = rng.uniform(0.03, 0.05) * S; break;
    case 3: r = rng.uniform(0.26, 0.32) * S; w = rng.uniform(0.03, 0.05) * S; break;
    case 4: r = rng.uniform(0.12, 0.18) * S; w = rng.uniform(0.10, 0.15) * S; break;
    case 5: r = rng.uniform(0.24, 0.30) * S; w = rng.uniform(0.10, 0.15) * S; break;
    case 6: r = rng.uniform(0.18, 0.28) * S; ratio = rng.uniform(0.45, 0.65); break;
    case 7: r = rng.uniform(0.16, 0.24) * S; w = rng.uniform(0.05, 0.09) * S;
            ratio = rng.uniform(0.55, 0.75); break;
    case 8: r = rng.uniform(0.08, 0.13) * S; r2 = rng.uniform(0.08, 0.13) * S; break;
    case 9: r = rng.uniform(0.10, 0.16) * S; w = rng.uniform(0.05, 0.09) * S;
            r2 = rng.uniform(0.04, 0.07) * S; break;                      // ring with gap + core
    case 10: r = rng.uniform(0.14, 0.24) * S; break;                      // square
    case 11: r = rng.uniform(0.18, 0.30) * S; w = rng.uniform(0.05, 0.09) * S; break;  // cross
    default: throw BadInput("pretext class out of range");
  }
  double phi = rng.uniform(0.0, 3.14159265358979323846);
  double cph = std::cos(phi), sph = std::sin(phi);

  ImagePlane img(size, size);
  for (int rr = 0; rr < size; ++rr)
    for (int cc = 0; cc < size; ++cc) {
      double x = cc - cx, y = cy - rr;
      double xr = x * cph + y * sph, yr = -x * sph + y * cph;
      double d = std::sqrt(x * x + y * y);
      double de = std::sqrt(xr * xr + (yr / ratio) * (yr / ratio));
      bool in = false;
      switch (class_id) {
        case 0: case 1: in = d <= r; break;
        case 2: case 3: case 4: case 5: in = d >= r && d <= r + w; break;
        case 6: in = de <= r; break;
        case 7: in = de >= r && de <= r + w; break;
        case 8: {
          double dx2 = x - 2.2 * r, dy2 = y;
          in = d <= r || std::sqrt(dx2 * dx2 + dy2 * dy2) <= r2;
          break;
        }
        case 9: in = (d >= r && d <= r + w) || d <= r2; break;
        case 10: in = std::abs(xr) <= r && std::abs(yr) <= r; break;
        case 11: in = (std::abs(xr) <= w && std::abs(yr) <= r) ||
                      (std::abs(yr) <= w && std::abs(xr) <= r); break;
        default: break;
      }
      double xn = 2.0 * cc / (size - 1) - 1.0;
      double yn = 2.0 * rr / (size - 1) - 1.0;
      double bias = sh.bias_amp * (sh.b1 * xn + sh.b2 * yn + sh.b3 * xn * yn);
      img.at(rr, cc) = (in ? sh.fg : sh.bg) + bias + rng.normal(0.0, sh.noise);
    }
  return img;
}

namespace {

Tensor to_input(const std::vector<const ImagePlane*>& planes) {
  int n = static_cast<int>(planes.size());
  std::int64_t h = planes[0]->h, w = planes[0]->w;
  Tensor x({n, 3, 1, h, w});
  for (int i = 0; i < n; ++i)
    for (int c = 0; c < 3; ++c)
      std::copy(planes[static_cast<std::size_t>(i)]->v.begin(), planes[static_cast<std::size_t>(i)]->v.end(),
                x.data() + ((static_cast<std::int64_t>(i) * 3 + c)) * h * w);
  return x;
}

double ce_loss_and_grad(const Tensor& logits, const std::vector<int>& labels, Tensor* grad) {
  std::int64_t N = logits.dim(0), K = logits.dim(1);
  if (grad != nullptr) *grad = Tensor(logits.shape);
  double acc = 0.0;
  for (std::int64_t n = 0; n < N; ++n) {
    double m = -1e300;
    for (std::int64_t k = 0; k < K; ++k) m = std::max(m, logits[n * K + k]);
    double z = 0.0;
    for (std::int64_t k = 0; k < K; ++k) z += std::exp(logits[n * K + k] - m);
    int y = labels[static_cast<std::size_t>(n)];
    acc -= logits[n * K + y] - m - std::log(z);
    if (grad != nullptr)
      for (std::int64_t k = 0; k < K; ++k) {
        double p = std::exp(logits[n * K + k] - m) / z;
        (*grad)[n * K + k] = (p - (k == y ? 1.0 : 0.0)) / static_cast<double>(N);
      }
  }
  return acc / static_cast<double>(N);
}

}  // namespace

PretextResult pretext_pretrain(const model::BackboneSpec& spec, int n_train, int n_val,
                               int epochs, double lr, std::uint64_t seed,
                               const fs::path& out_dir) {
  Rng gen_rng(seed, 0x9E7E);
  std::vector<ImagePlane> images;
  std::vector<int> labels;
  for (int i = 0; i < n_train + n_val; ++i) {
    int cls = static_cast<int>(gen_rng.below(kClasses));
    images.push_back(render_class_image(cls, spec.input_size, gen_rng));
    labels.push_back(cls);
  }

  model::Model m = model::build_2d(spec, model::TargetMode::classification, "random", {},
                                   mix64(seed ^ 0xBEEF), kClasses);
  train::Adam opt(lr, 0.9, 0.999, 1e-8);
  auto trainable = m.trainable();

  Rng order_rng(seed, 0x02D32);
  const int batch = 8;
  std::vector<int> idx(static_cast<std::size_t>(n_train));
  for (int i = 0; i < n_train; ++i) idx[static_cast<std::size_t>(i)] = i;

  for (int epoch = 0; epoch < epochs; ++epoch) {
    order_rng.shuffle(idx);
    for (int s = 0; s + batch <= n_train; s += batch) {
      std::vector<const ImagePlane*> planes;
      std::vector<int> ys;
      for (int b = 0; b < batch; ++b) {
        planes.push_back(&images[static_cast<std::size_t>(idx[static_cast<std::size_t>(s + b)])]);
        ys.push_back(labels[static_cast<std::size_t>(idx[static_cast<std::size_t>(s + b)])]);
      }
      model::ModelOutput out = m.forward_train(to_input(planes), false);
      Tensor g;
      double loss = ce_loss_and_grad(out.head, ys, &g);
      if (!std::isfinite(loss)) throw NonFiniteLoss("pretext epoch " + std::to_string(epoch));
      m.zero_grad();
      m.backward(g, nullptr);
      opt.step(trainable);
    }
  }

  // held-out accuracy
  int correct = 0;
  for (int i = n_train; i < n_train + n_val; ++i) {
    std::vector<const ImagePlane*> planes{&images[static_cast<std::size_t>(i)]};
    Tensor y = m.forward_eval(to_input(planes)).head;
    int best = 0;
    for (int k = 1; k < kClasses; ++k)
      if (y[k] > y[best]) best = k;
    if (best == labels[static_cast<std::size_t>(i)]) ++correct;
  }
  PretextResult res;
  res.n_val = n_val;
  res.val_accuracy = static_cast<double>(correct) / static_cast<double>(n_val);

  m.metadata["pretext_val_accuracy"] = fmt_double(res.val_accuracy);
  m.metadata["pretext_n_val"] = std::to_string(n_val);
  m.metadata["pretext_classes"] = std::to_string(kClasses);
  model::save_checkpoint(m, out_dir);
  res.checkpoint_dir = out_dir;
  return res;
}

}  // namespace lvq::pretext
