// SPDX-License-Identifier: Apache-2.0
#include "tsanet/data.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>

#include "tsanet/image_io.hpp"

namespace fs = std::filesystem;

namespace tsanet {

namespace {

struct TexField {
  // Two-harmonic color field; smooth so subpixel warps interpolate cleanly.
  std::array<double, 3> base;
  std::array<double, 3> amp1, amp2;
  double fx1, fy1, ph1;
  double fx2, fy2, ph2;

  double eval(int c, double x, double y) const {
    double v = base[c] + amp1[c] * std::sin(fx1 * x + fy1 * y + ph1) +
               amp2[c] * std::sin(fx2 * x + fy2 * y + ph2);
    return std::clamp(v, 0.02, 0.98);
  }
};

TexField random_texture(Rng& rng, double wavelength, double amp_lo,
                        double amp_hi) {
  TexField t;
  for (int c = 0; c < 3; ++c) {
    t.base[c] = rng.uniform(0.2, 0.8);
    t.amp1[c] = rng.uniform(amp_lo, amp_hi);
    t.amp2[c] = rng.uniform(amp_lo * 0.5, amp_hi * 0.5);
  }
  double a1 = rng.uniform(0.0, 2.0 * M_PI);
  double a2 = rng.uniform(0.0, 2.0 * M_PI);
  double k1 = 2.0 * M_PI / wavelength;
  double k2 = 2.0 * M_PI / (wavelength * rng.uniform(0.4, 0.8));
  t.fx1 = k1 * std::cos(a1);
  t.fy1 = k1 * std::sin(a1);
  t.fx2 = k2 * std::cos(a2);
  t.fy2 = k2 * std::sin(a2);
  t.ph1 = rng.uniform(0.0, 2.0 * M_PI);
  t.ph2 = rng.uniform(0.0, 2.0 * M_PI);
  return t;
}

struct ShapeSpec {
  ShapeType type;
  double r0 = 0.0;        // disk/blob radius
  double rx = 0.0, ry = 0.0;  // rectangle half extents
  double ph1 = 0.0, ph2 = 0.0;  // blob harmonics

  // u, v are offsets from the shape center.
  bool inside(double u, double v) const {
    switch (type) {
      case ShapeType::disk:
        return u * u + v * v <= r0 * r0;
      case ShapeType::rectangle:
        return std::abs(u) <= rx && std::abs(v) <= ry;
      case ShapeType::blob: {
        double rad = std::hypot(u, v);
        if (rad > 1.4 * r0) return false;
        double th = std::atan2(v, u);
        double rr = r0 * (1.0 + 0.25 * std::sin(3.0 * th + ph1) +
                          0.15 * std::sin(5.0 * th + ph2));
        return rad <= rr;
      }
    }
    return false;
  }

  double max_extent() const {
    switch (type) {
      case ShapeType::disk: return r0;
      case ShapeType::rectangle: return std::max(rx, ry);
      case ShapeType::blob: return 1.4 * r0;
    }
    return r0;
  }
};

ShapeSpec random_shape(Rng& rng, ShapeType type, double res) {
  ShapeSpec s;
  s.type = type;
  // Blob radii run smaller because harmonics stretch them up to 1.4x.
  s.r0 = (type == ShapeType::blob ? rng.uniform(0.15, 0.20)
                                  : rng.uniform(0.19, 0.28)) *
         res;
  s.rx = rng.uniform(0.17, 0.27) * res;
  s.ry = rng.uniform(0.17, 0.27) * res;
  s.ph1 = rng.uniform(0.0, 2.0 * M_PI);
  s.ph2 = rng.uniform(0.0, 2.0 * M_PI);
  return s;
}

void validate_config(const SyntheticConfig& cfg) {
  if (cfg.resolution < 32 || cfg.resolution % 32 != 0)
    throw ValueError("synthetic config: resolution must be a positive "
                     "multiple of 32, got " +
                     std::to_string(cfg.resolution));
  if (cfg.n_frames < 3)
    throw ValueError("synthetic config: n_frames must be >= 3");
  if (cfg.min_speed < 0 || cfg.max_speed < cfg.min_speed)
    throw ValueError("synthetic config: need 0 <= min_speed <= max_speed");
  if (cfg.distractors < 0)
    throw ValueError("synthetic config: distractors must be >= 0");
}

std::string frame_name(int i) {
  char buf[16];
  std::snprintf(buf, sizeof(buf), "%05d.png", i);
  return buf;
}

}  // namespace

FrameSequence generate_synthetic_sequence(const SyntheticConfig& cfg,
                                          uint64_t seed) {
  validate_config(cfg);
  const int R = cfg.resolution;
  Rng rng(mix_seed(seed, 1));
  Rng bg_rng(cfg.bg_seed != 0 ? cfg.bg_seed : mix_seed(seed, 2));

  TexField bg = random_texture(bg_rng, R * 0.9, 0.06, 0.14);
  ShapeSpec obj = random_shape(rng, cfg.shape, static_cast<double>(R));
  TexField obj_tex = random_texture(rng, obj.max_extent() * 1.6, 0.12, 0.22);

  // Integer velocity inside the requested speed band, so translation is
  // pixel-exact and the analytic flow warps frames onto each other exactly.
  int vmax = static_cast<int>(std::floor(cfg.max_speed));
  int64_t vx = 0, vy = 0;
  if (cfg.max_speed > 0) {
    for (int attempt = 0; attempt < 256; ++attempt) {
      int64_t cx = rng.uniform_int(2 * vmax + 1) - vmax;
      int64_t cy = rng.uniform_int(2 * vmax + 1) - vmax;
      double sp = std::hypot(static_cast<double>(cx), static_cast<double>(cy));
      if (sp >= cfg.min_speed && sp <= cfg.max_speed) {
        vx = cx;
        vy = cy;
        break;
      }
    }
  }

  int64_t margin = static_cast<int64_t>(
      std::ceil(obj.max_extent() + 1.0 + std::abs(static_cast<double>(vmax))));
  if (2 * margin >= R - 1)
    throw ValueError("synthetic config: object plus speed margin does not fit "
                     "inside the frame");
  int64_t cx = margin + rng.uniform_int(R - 2 * margin);
  int64_t cy = margin + rng.uniform_int(R - 2 * margin);

  // Static distractors share the object's texture family.
  std::vector<ShapeSpec> dshapes;
  std::vector<TexField> dtex;
  std::vector<std::pair<int64_t, int64_t>> dpos;
  for (int d = 0; d < cfg.distractors; ++d) {
    ShapeSpec ds = random_shape(rng, cfg.shape, R * 0.8);
    int64_t dm = static_cast<int64_t>(std::ceil(ds.max_extent())) + 1;
    dshapes.push_back(ds);
    dtex.push_back(random_texture(rng, ds.max_extent() * 1.6, 0.12, 0.22));
    dpos.emplace_back(dm + rng.uniform_int(std::max<int64_t>(R - 2 * dm, 1)),
                      dm + rng.uniform_int(std::max<int64_t>(R - 2 * dm, 1)));
  }

  // Occluding bar: static, drawn in front of the object.
  int64_t bar_x0 = 0, bar_w = 0;
  TexField bar_tex = random_texture(rng, R * 0.12, 0.10, 0.20);
  if (cfg.occluder) {
    bar_w = std::max<int64_t>(R / 10, 4);
    bar_x0 = R / 2 - bar_w / 2 + rng.uniform_int(R / 4 + 1) - R / 8;
    bar_x0 = std::clamp<int64_t>(bar_x0, 0, R - bar_w);
  }

  // Trajectory with wall reflections; margins keep the object >= 1 px inside.
  std::vector<std::pair<int64_t, int64_t>> centers;
  std::vector<std::pair<int64_t, int64_t>> vels;
  int64_t px = cx, py = cy, vxx = vx, vyy = vy;
  for (int t = 0; t < cfg.n_frames; ++t) {
    centers.emplace_back(px, py);
    vels.emplace_back(vxx, vyy);
    int64_t nx = px + vxx, ny = py + vyy;
    if (nx < margin || nx > R - 1 - margin) {
      vxx = -vxx;
      nx = px + vxx;
    }
    if (ny < margin || ny > R - 1 - margin) {
      vyy = -vyy;
      ny = py + vyy;
    }
    px = nx;
    py = ny;
  }
  // Per-frame displacement t -> t+1; the last frame reuses the previous one.
  std::vector<std::pair<int64_t, int64_t>> disp(cfg.n_frames);
  for (int t = 0; t + 1 < cfg.n_frames; ++t)
    disp[t] = {centers[t + 1].first - centers[t].first,
               centers[t + 1].second - centers[t].second};
  disp[cfg.n_frames - 1] = disp[cfg.n_frames - 2];

  double max_mag = 1e-12;
  for (const auto& d : disp)
    max_mag = std::max(max_mag, std::hypot(static_cast<double>(d.first),
                                           static_cast<double>(d.second)));
  if (max_mag < 1e-9) max_mag = 1.0;

  FrameSequence seq;
  seq.name = "synthetic";
  seq.max_mag = max_mag;
  auto in_bar = [&](int64_t x) {
    return cfg.occluder && x >= bar_x0 && x < bar_x0 + bar_w;
  };

  for (int t = 0; t < cfg.n_frames; ++t) {
    auto [ocx, ocy] = centers[t];
    std::vector<double> frame(static_cast<size_t>(3 * R * R));
    std::vector<double> maskv(static_cast<size_t>(R * R), 0.0);
    std::vector<double> dxv(static_cast<size_t>(R * R), 0.0);
    std::vector<double> dyv(static_cast<size_t>(R * R), 0.0);
    for (int64_t y = 0; y < R; ++y) {
      for (int64_t x = 0; x < R; ++x) {
        double vcol[3];
        for (int c = 0; c < 3; ++c)
          vcol[c] = bg.eval(c, static_cast<double>(x), static_cast<double>(y));
        for (size_t d = 0; d < dshapes.size(); ++d) {
          double du = static_cast<double>(x - dpos[d].first);
          double dv = static_cast<double>(y - dpos[d].second);
          if (dshapes[d].inside(du, dv))
            for (int c = 0; c < 3; ++c) vcol[c] = dtex[d].eval(c, du, dv);
        }
        double ou = static_cast<double>(x - ocx);
        double ov = static_cast<double>(y - ocy);
        bool on_obj = obj.inside(ou, ov);
        if (on_obj)
          for (int c = 0; c < 3; ++c) vcol[c] = obj_tex.eval(c, ou, ov);
        bool occluded = in_bar(x);
        if (occluded)
          for (int c = 0; c < 3; ++c)
            vcol[c] = bar_tex.eval(c, static_cast<double>(x),
                                   static_cast<double>(y));
        for (int c = 0; c < 3; ++c)
          frame[static_cast<size_t>(c * R * R + y * R + x)] = vcol[c];
        if (on_obj && !occluded) {
          maskv[static_cast<size_t>(y * R + x)] = 1.0;
          dxv[static_cast<size_t>(y * R + x)] =
              static_cast<double>(disp[t].first);
          dyv[static_cast<size_t>(y * R + x)] =
              static_cast<double>(disp[t].second);
        }
      }
    }
    seq.frames.push_back(Tensor::from_data({3, R, R}, std::move(frame)));
    seq.masks.push_back(Tensor::from_data({R, R}, std::move(maskv)));
    Tensor dx = Tensor::from_data({R, R}, std::move(dxv));
    Tensor dy = Tensor::from_data({R, R}, std::move(dyv));
    seq.flows.push_back(flow_to_rgb(dx, dy, max_mag));
  }
  return seq;
}

Tensor flow_to_rgb(const Tensor& dx, const Tensor& dy, double max_mag) {
  if (max_mag <= 0.0) throw ValueError("flow_to_rgb: max_mag must be > 0");
  const auto& s = dx.shape();
  if (s.size() != 2 || dy.shape() != s)
    throw ShapeError("flow_to_rgb: dx/dy must be matching [H,W], got " +
                     shape_str(s) + " and " + shape_str(dy.shape()));
  int64_t hw = s[0] * s[1];
  std::vector<double> vals(static_cast<size_t>(3 * hw));
  for (int64_t i = 0; i < hw; ++i) {
    double fx = dx.data()[i] / max_mag;
    double fy = dy.data()[i] / max_mag;
    double mag = std::hypot(fx, fy);
    vals[static_cast<size_t>(i)] = std::clamp(fx, -1.0, 1.0) / 2.0 + 0.5;
    vals[static_cast<size_t>(hw + i)] = std::clamp(fy, -1.0, 1.0) / 2.0 + 0.5;
    vals[static_cast<size_t>(2 * hw + i)] = std::clamp(mag, 0.0, 1.0);
  }
  DType dt = dx.dtype() == DType::f64 || dy.dtype() == DType::f64 ? DType::f64
                                                                  : DType::f32;
  return Tensor::from_data({3, s[0], s[1]}, std::move(vals), dt);
}

std::pair<Tensor, Tensor> flow_rgb_to_xy(const Tensor& rgb, double max_mag) {
  const auto& s = rgb.shape();
  if (s.size() != 3 || s[0] != 3)
    throw ShapeError("flow_rgb_to_xy: expected [3,H,W], got " + shape_str(s));
  if (max_mag <= 0.0) throw ValueError("flow_rgb_to_xy: max_mag must be > 0");
  int64_t hw = s[1] * s[2];
  std::vector<double> dx(static_cast<size_t>(hw)), dy(static_cast<size_t>(hw));
  for (int64_t i = 0; i < hw; ++i) {
    dx[static_cast<size_t>(i)] = (rgb.data()[i] * 2.0 - 1.0) * max_mag;
    dy[static_cast<size_t>(i)] = (rgb.data()[hw + i] * 2.0 - 1.0) * max_mag;
  }
  return {Tensor::from_data({s[1], s[2]}, std::move(dx), rgb.dtype()),
          Tensor::from_data({s[1], s[2]}, std::move(dy), rgb.dtype())};
}

FrameSequence pseudo_video_from_jitters(const Tensor& image, const Tensor& mask,
                                        const std::array<AffineJitter, 3>& jit,
                                        const std::string& name) {
  const auto& si = image.shape();
  const auto& sm = mask.shape();
  if (si.size() != 3 || si[0] != 3)
    throw ShapeError("pseudo_video: image must be [3,H,W], got " +
                     shape_str(si));
  if (sm.size() != 2 || sm[0] != si[1] || sm[1] != si[2])
    throw ShapeError("pseudo_video: mask " + shape_str(sm) +
                     " does not match image " + shape_str(si));
  for (double v : mask.data())
    if (v != 0.0 && v != 1.0)
      throw ValueError("pseudo_video: mask must be binary");
  int64_t h = si[1], w = si[2];
  double cx = (static_cast<double>(w) - 1.0) / 2.0;
  double cy = (static_cast<double>(h) - 1.0) / 2.0;

  auto fwd = [&](const AffineJitter& a, double x, double y) {
    return std::pair<double, double>{a.scale * (x - cx) + cx + a.tx,
                                     a.scale * (y - cy) + cy + a.ty};
  };
  auto inv = [&](const AffineJitter& a, double x, double y) {
    return std::pair<double, double>{(x - cx - a.tx) / a.scale + cx,
                                     (y - cy - a.ty) / a.scale + cy};
  };
  auto sample_bilinear = [&](const Tensor& img, int64_t c, double x,
                             double y) {
    x = std::clamp(x, 0.0, static_cast<double>(w - 1));
    y = std::clamp(y, 0.0, static_cast<double>(h - 1));
    int64_t x0 = std::min(static_cast<int64_t>(std::floor(x)), w - 1);
    int64_t y0 = std::min(static_cast<int64_t>(std::floor(y)), h - 1);
    int64_t x1 = std::min(x0 + 1, w - 1), y1 = std::min(y0 + 1, h - 1);
    double fx = x - static_cast<double>(x0), fy = y - static_cast<double>(y0);
    auto at = [&](int64_t yy, int64_t xx) {
      return img.data()[(c * h + yy) * w + xx];
    };
    return (1 - fy) * ((1 - fx) * at(y0, x0) + fx * at(y0, x1)) +
           fy * ((1 - fx) * at(y1, x0) + fx * at(y1, x1));
  };

  FrameSequence seq;
  seq.name = name;
  std::vector<std::vector<double>> dxs, dys;
  double max_mag = 1e-12;
  for (int k = 0; k < 3; ++k) {
    std::vector<double> frame(static_cast<size_t>(3 * h * w));
    std::vector<double> maskv(static_cast<size_t>(h * w), 0.0);
    std::vector<double> dx(static_cast<size_t>(h * w), 0.0);
    std::vector<double> dy(static_cast<size_t>(h * w), 0.0);
    for (int64_t y = 0; y < h; ++y) {
      for (int64_t x = 0; x < w; ++x) {
        auto [sx, sy] = inv(jit[k], static_cast<double>(x),
                            static_cast<double>(y));
        for (int64_t c = 0; c < 3; ++c)
          frame[static_cast<size_t>((c * h + y) * w + x)] =
              sample_bilinear(image, c, sx, sy);
        int64_t nx = static_cast<int64_t>(std::lround(sx));
        int64_t ny = static_cast<int64_t>(std::lround(sy));
        if (nx >= 0 && nx < w && ny >= 0 && ny < h)
          maskv[static_cast<size_t>(y * w + x)] = mask.data()[ny * w + nx];
        // Displacement of the surface point currently at (x, y).
        double tx, ty;
        if (k < 2) {
          auto [qx, qy] = fwd(jit[k + 1], sx, sy);
          tx = qx - static_cast<double>(x);
          ty = qy - static_cast<double>(y);
        } else {
          auto [qx, qy] = fwd(jit[1], inv(jit[2], static_cast<double>(x),
                                          static_cast<double>(y))
                                          .first,
                              inv(jit[2], static_cast<double>(x),
                                  static_cast<double>(y))
                                  .second);
          tx = static_cast<double>(x) - qx;
          ty = static_cast<double>(y) - qy;
        }
        dx[static_cast<size_t>(y * w + x)] = tx;
        dy[static_cast<size_t>(y * w + x)] = ty;
        max_mag = std::max(max_mag, std::hypot(tx, ty));
      }
    }
    seq.frames.push_back(Tensor::from_data({3, h, w}, std::move(frame)));
    seq.masks.push_back(Tensor::from_data({h, w}, std::move(maskv)));
    dxs.push_back(std::move(dx));
    dys.push_back(std::move(dy));
  }
  if (max_mag < 1e-9) max_mag = 1.0;
  seq.max_mag = max_mag;
  for (int k = 0; k < 3; ++k)
    seq.flows.push_back(
        flow_to_rgb(Tensor::from_data({h, w}, std::move(dxs[k])),
                    Tensor::from_data({h, w}, std::move(dys[k])), max_mag));
  return seq;
}

FrameSequence image_to_pseudo_video(const Tensor& image, const Tensor& mask,
                                    uint64_t seed) {
  Rng rng(mix_seed(seed, 3));
  std::array<AffineJitter, 3> jit;
  jit[0] = AffineJitter{};
  int64_t h = image.shape()[1], w = image.shape()[2];
  for (int k = 1; k < 3; ++k) {
    jit[k].scale = rng.uniform(0.95, 1.05);
    jit[k].tx = rng.uniform(-0.05, 0.05) * static_cast<double>(w);
    jit[k].ty = rng.uniform(-0.05, 0.05) * static_cast<double>(h);
  }
  return pseudo_video_from_jitters(image, mask, jit,
                                   "pseudo_" + std::to_string(seed));
}

void save_sequence(const FrameSequence& seq, const fs::path& dir) {
  if (seq.frames.empty() || seq.frames.size() != seq.flows.size() ||
      seq.frames.size() != seq.masks.size())
    throw ValueError("save_sequence: inconsistent frame/flow/mask counts");
  fs::create_directories(dir / "frames");
  fs::create_directories(dir / "flows");
  fs::create_directories(dir / "masks");
  for (size_t i = 0; i < seq.frames.size(); ++i) {
    std::string f = frame_name(static_cast<int>(i));
    write_png(dir / "frames" / f, tensor_to_rgb8(seq.frames[i]));
    write_png(dir / "flows" / f, tensor_to_rgb8(seq.flows[i]));
    write_png(dir / "masks" / f, mask_to_gray8(seq.masks[i]));
  }
  std::ofstream meta(dir / "meta.txt");
  if (!meta) throw IoError("cannot write " + (dir / "meta.txt").string());
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.17g", seq.max_mag);
  meta << "max_mag=" << buf << "\n";
  meta << "n_frames=" << seq.frames.size() << "\n";
}

FrameSequence load_sequence(const fs::path& dir) {
  for (const char* sub : {"frames", "flows", "masks"})
    if (!fs::is_directory(dir / sub))
      throw IoError("sequence directory missing " + (dir / sub).string());
  std::ifstream meta(dir / "meta.txt");
  if (!meta) throw IoError("missing sequence metadata " +
                           (dir / "meta.txt").string());
  FrameSequence seq;
  seq.name = dir.filename().string();
  int n_frames = -1;
  std::string line;
  while (std::getline(meta, line)) {
    auto eq = line.find('=');
    if (eq == std::string::npos) continue;
    std::string key = line.substr(0, eq), value = line.substr(eq + 1);
    try {
      if (key == "max_mag") seq.max_mag = std::stod(value);
      if (key == "n_frames") n_frames = std::stoi(value);
    } catch (const std::exception&) {
      throw IoError("malformed " + (dir / "meta.txt").string() + ": " + line);
    }
  }
  if (n_frames < 1 || seq.max_mag <= 0.0)
    throw IoError("incomplete sequence metadata in " +
                  (dir / "meta.txt").string());

  auto count_pngs = [&](const char* sub) {
    int n = 0;
    for (const auto& e : fs::directory_iterator(dir / sub))
      if (e.path().extension() == ".png") ++n;
    return n;
  };
  for (const char* sub : {"frames", "flows", "masks"})
    if (count_pngs(sub) != n_frames)
      throw IoError("inconsistent file count under " + (dir / sub).string() +
                    ": expected " + std::to_string(n_frames));

  for (int i = 0; i < n_frames; ++i) {
    std::string f = frame_name(i);
    for (const char* sub : {"frames", "flows", "masks"})
      if (!fs::exists(dir / sub / f))
        throw IoError("missing file " + (dir / sub / f).string());
    ImageU8 frame = read_png(dir / "frames" / f);
    ImageU8 flow = read_png(dir / "flows" / f);
    ImageU8 mask = read_png(dir / "masks" / f);
    if (frame.channels != 3 || flow.channels != 3)
      throw IoError("frames/flows must be RGB under " + dir.string());
    seq.frames.push_back(rgb8_to_tensor(frame));
    seq.flows.push_back(rgb8_to_tensor(flow));
    seq.masks.push_back(gray8_to_mask(mask, dir / "masks" / f));
    if (seq.frames.back().shape() != seq.frames.front().shape())
      throw IoError("unequal frame resolutions under " + dir.string());
    if (seq.flows.back().shape() != seq.frames.front().shape() ||
        seq.masks.back().shape()[0] != seq.frames.front().shape()[1] ||
        seq.masks.back().shape()[1] != seq.frames.front().shape()[2])
      throw IoError("frame/flow/mask resolution mismatch under " +
                    dir.string());
  }
  return seq;
}

std::vector<FrameSequence> load_dataset(const fs::path& root,
                                        uint64_t pseudo_seed) {
  if (!fs::is_directory(root))
    throw IoError("dataset root is not a directory: " + root.string());
  std::vector<FrameSequence> out;
  if (fs::is_directory(root / "images") && fs::is_directory(root / "masks")) {
    // Static-saliency layout: every image becomes a 3-frame pseudo-video.
    std::vector<fs::path> images;
    for (const auto& e : fs::directory_iterator(root / "images"))
      if (e.path().extension() == ".png") images.push_back(e.path());
    std::sort(images.begin(), images.end());
    uint64_t k = 0;
    for (const auto& img_path : images) {
      fs::path mask_path = root / "masks" / img_path.filename();
      if (!fs::exists(mask_path))
        throw IoError("missing mask for " + img_path.string());
      Tensor img = rgb8_to_tensor(read_png(img_path));
      Tensor mask = gray8_to_mask(read_png(mask_path), mask_path);
      FrameSequence seq =
          image_to_pseudo_video(img, mask, mix_seed(pseudo_seed, k++));
      seq.name = img_path.stem().string();
      out.push_back(std::move(seq));
    }
  } else {
    std::vector<fs::path> dirs;
    for (const auto& e : fs::directory_iterator(root))
      if (e.is_directory() && fs::is_directory(e.path() / "frames"))
        dirs.push_back(e.path());
    std::sort(dirs.begin(), dirs.end());
    for (const auto& d : dirs) out.push_back(load_sequence(d));
  }
  if (out.empty())
    throw IoError("no sequences found under " + root.string());
  return out;
}

JointSampler::JointSampler(
    std::vector<const std::vector<FrameSequence>*> datasets, int switch_every,
    uint64_t seed)
    : datasets_(std::move(datasets)),
      switch_every_(switch_every),
      rng_(mix_seed(seed, 4)) {
  if (switch_every_ < 1)
    throw ValueError("joint_sampler: switch_every must be >= 1");
  if (datasets_.empty()) throw ValueError("joint_sampler: no datasets");
  for (const auto* ds : datasets_)
    if (!ds || ds->empty())
      throw ValueError("joint_sampler: empty dataset");
  for (const auto* ds : datasets_) {
    std::vector<int> order(ds->size());
    for (size_t i = 0; i < order.size(); ++i) order[i] = static_cast<int>(i);
    for (size_t i = 0; i + 1 < order.size(); ++i) {
      auto j = i + static_cast<size_t>(
                       rng_.uniform_int(static_cast<int64_t>(order.size() - i)));
      std::swap(order[i], order[j]);
    }
    order_.push_back(std::move(order));
    cursor_.push_back(0);
  }
}

JointSampler::Draw JointSampler::next() {
  if (draws_in_active_ == switch_every_) {
    active_ = (active_ + 1) % static_cast<int>(datasets_.size());
    draws_in_active_ = 0;
  }
  auto& order = order_[active_];
  auto& cursor = cursor_[active_];
  if (cursor == order.size()) {
    cursor = 0;
    for (size_t i = 0; i + 1 < order.size(); ++i) {
      auto j = i + static_cast<size_t>(
                       rng_.uniform_int(static_cast<int64_t>(order.size() - i)));
      std::swap(order[i], order[j]);
    }
  }
  const FrameSequence& seq = (*datasets_[active_])[order[cursor++]];
  ++draws_in_active_;
  int t = static_cast<int>(rng_.uniform_int(seq.size()));
  return Draw{&seq, t};
}

Tensor resize_bilinear_chw(const Tensor& t, int out_h, int out_w) {
  const auto& s = t.shape();
  if (s.size() != 3)
    throw ShapeError("resize_bilinear_chw: expected [C,H,W], got " +
                     shape_str(s));
  if (out_h < 1 || out_w < 1)
    throw ValueError("resize_bilinear_chw: output extents must be >= 1");
  int64_t c = s[0], h = s[1], w = s[2];
  std::vector<double> vals(static_cast<size_t>(c * out_h * out_w));
  for (int64_t oy = 0; oy < out_h; ++oy) {
    double sy = (oy + 0.5) * static_cast<double>(h) / out_h - 0.5;
    sy = std::clamp(sy, 0.0, static_cast<double>(h - 1));
    int64_t y0 = std::min(static_cast<int64_t>(std::floor(sy)), h - 1);
    int64_t y1 = std::min(y0 + 1, h - 1);
    double fy = sy - static_cast<double>(y0);
    for (int64_t ox = 0; ox < out_w; ++ox) {
      double sx = (ox + 0.5) * static_cast<double>(w) / out_w - 0.5;
      sx = std::clamp(sx, 0.0, static_cast<double>(w - 1));
      int64_t x0 = std::min(static_cast<int64_t>(std::floor(sx)), w - 1);
      int64_t x1 = std::min(x0 + 1, w - 1);
      double fx = sx - static_cast<double>(x0);
      for (int64_t cc = 0; cc < c; ++cc) {
        auto at = [&](int64_t yy, int64_t xx) {
          return t.data()[(cc * h + yy) * w + xx];
        };
        vals[static_cast<size_t>((cc * out_h + oy) * out_w + ox)] =
            (1 - fy) * ((1 - fx) * at(y0, x0) + fx * at(y0, x1)) +
            fy * ((1 - fx) * at(y1, x0) + fx * at(y1, x1));
      }
    }
  }
  return Tensor::from_data({c, out_h, out_w}, std::move(vals), t.dtype());
}

Tensor resize_nearest_hw(const Tensor& t, int out_h, int out_w) {
  const auto& s = t.shape();
  if (s.size() != 2)
    throw ShapeError("resize_nearest_hw: expected [H,W], got " + shape_str(s));
  if (out_h < 1 || out_w < 1)
    throw ValueError("resize_nearest_hw: output extents must be >= 1");
  int64_t h = s[0], w = s[1];
  std::vector<double> vals(static_cast<size_t>(out_h) * out_w);
  for (int64_t oy = 0; oy < out_h; ++oy) {
    auto sy = static_cast<int64_t>((oy + 0.5) * static_cast<double>(h) / out_h);
    sy = std::clamp<int64_t>(sy, 0, h - 1);
    for (int64_t ox = 0; ox < out_w; ++ox) {
      auto sx =
          static_cast<int64_t>((ox + 0.5) * static_cast<double>(w) / out_w);
      sx = std::clamp<int64_t>(sx, 0, w - 1);
      vals[static_cast<size_t>(oy * out_w + ox)] = t.data()[sy * w + sx];
    }
  }
  return Tensor::from_data({out_h, out_w}, std::move(vals), t.dtype());
}

}  // namespace tsanet
