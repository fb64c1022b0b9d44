#include "ucm/eval.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <numbers>
#include <ostream>
#include <stdexcept>

namespace ucm {

namespace {

void check_pair(const Trajectory& a, const Trajectory& b, const char* what) {
  if (a.size() != b.size())
    throw std::invalid_argument(std::string(what) + ": trajectory lengths differ (" + std::to_string(a.size()) +
                                " vs " + std::to_string(b.size()) + ")");
  if (a.empty()) throw std::invalid_argument(std::string(what) + ": empty trajectory");
}

void check_images(const Image& a, const Image& b, const char* what) {
  if (a.width() != b.width() || a.height() != b.height() || a.empty())
    throw std::invalid_argument(std::string(what) + ": image sizes differ or are empty");
}

double rad_to_deg(double r) { return r * 180.0 / std::numbers::pi; }

std::array<double, 11> gaussian_window() {
  std::array<double, 11> w{};
  double sum = 0.0;
  for (int i = 0; i < 11; ++i) {
    const double d = i - 5;
    w[i] = std::exp(-d * d / (2.0 * 1.5 * 1.5));
    sum += w[i];
  }
  for (double& v : w) v /= sum;
  return w;
}

// Separable Gaussian filter over the valid region of one channel.
std::vector<double> filter_valid(const std::vector<double>& x, int w, int h) {
  static const std::array<double, 11> g = gaussian_window();
  const int ow = w - 10, oh = h - 10;
  std::vector<double> rows(static_cast<size_t>(ow) * h);
  for (int y = 0; y < h; ++y)
    for (int x0 = 0; x0 < ow; ++x0) {
      double s = 0.0;
      for (int k = 0; k < 11; ++k) s += g[k] * x[static_cast<size_t>(y) * w + x0 + k];
      rows[static_cast<size_t>(y) * ow + x0] = s;
    }
  std::vector<double> out(static_cast<size_t>(ow) * oh);
  for (int y0 = 0; y0 < oh; ++y0)
    for (int x = 0; x < ow; ++x) {
      double s = 0.0;
      for (int k = 0; k < 11; ++k) s += g[k] * rows[static_cast<size_t>(y0 + k) * ow + x];
      out[static_cast<size_t>(y0) * ow + x] = s;
    }
  return out;
}

FrameMetric compare(int frame, int reference, const Image& a, const Image& b, const CameraPose& pa,
                    const CameraPose& pb) {
  FrameMetric m;
  m.frame = frame;
  m.reference = reference;
  m.psnr_db = psnr(a, b);
  m.ssim = ssim(a, b);
  m.rot_err_deg = rad_to_deg(rotation_angle(pa.rotation(), pb.rotation()));
  m.trans_err = (pa.translation() - pb.translation()).norm();
  return m;
}

}  // namespace

double rot_err(const Trajectory& a, const Trajectory& b) {
  check_pair(a, b, "rot_err");
  double sum = 0.0;
  for (size_t i = 0; i < a.size(); ++i) sum += rotation_angle(a[i].rotation(), b[i].rotation());
  return rad_to_deg(sum / static_cast<double>(a.size()));
}

double trans_err(const Trajectory& a, const Trajectory& b) {
  check_pair(a, b, "trans_err");
  double sum = 0.0;
  for (size_t i = 0; i < a.size(); ++i) sum += (a[i].translation() - b[i].translation()).norm();
  return sum / static_cast<double>(a.size());
}

CameraErrors camera_errors(const Trajectory& a, const Trajectory& b) {
  check_pair(a, b, "camera_errors");
  const Trajectory na = normalize_relative(a), nb = normalize_relative(b);
  return {rot_err(na, nb), trans_err(na, nb)};
}

double psnr(const Image& a, const Image& b) {
  check_images(a, b, "psnr");
  double sum = 0.0;
  for (size_t i = 0; i < a.data().size(); ++i) {
    const double d = static_cast<double>(a.data()[i]) - b.data()[i];
    sum += d * d;
  }
  const double mse = sum / static_cast<double>(a.data().size());
  if (mse <= 0.0) return kPsnrCap;
  return std::min(kPsnrCap, -10.0 * std::log10(mse));
}

double ssim(const Image& a, const Image& b) {
  check_images(a, b, "ssim");
  if (a.width() < 11 || a.height() < 11) throw std::invalid_argument("ssim: images must be at least 11x11");
  constexpr double c1 = 0.01 * 0.01, c2 = 0.03 * 0.03;
  const int w = a.width(), h = a.height();
  const size_t n = a.pixel_count();
  double total = 0.0;
  size_t windows = 0;
  for (int c = 0; c < 3; ++c) {
    std::vector<double> x(n), y(n), xx(n), yy(n), xy(n);
    for (size_t i = 0; i < n; ++i) {
      x[i] = a.data()[i * 3 + c];
      y[i] = b.data()[i * 3 + c];
      xx[i] = x[i] * x[i];
      yy[i] = y[i] * y[i];
      xy[i] = x[i] * y[i];
    }
    const auto mx = filter_valid(x, w, h), my = filter_valid(y, w, h);
    const auto sxx = filter_valid(xx, w, h), syy = filter_valid(yy, w, h), sxy = filter_valid(xy, w, h);
    for (size_t i = 0; i < mx.size(); ++i) {
      const double vx = sxx[i] - mx[i] * mx[i], vy = syy[i] - my[i] * my[i], cov = sxy[i] - mx[i] * my[i];
      total += ((2.0 * mx[i] * my[i] + c1) * (2.0 * cov + c2)) /
               ((mx[i] * mx[i] + my[i] * my[i] + c1) * (vx + vy + c2));
    }
    windows += mx.size();
  }
  return std::clamp(total / static_cast<double>(windows), -1.0, 1.0);
}

void MetricReport::summarize() {
  rot_err_deg = trans_err = psnr_db = ssim = 0.0;
  if (frames.empty()) return;
  for (const auto& f : frames) {
    rot_err_deg += f.rot_err_deg;
    trans_err += f.trans_err;
    psnr_db += f.psnr_db;
    ssim += f.ssim;
  }
  const double n = static_cast<double>(frames.size());
  rot_err_deg /= n;
  trans_err /= n;
  psnr_db /= n;
  ssim /= n;
}

nlohmann::json MetricReport::to_json() const {
  nlohmann::json series = nlohmann::json::array();
  for (const auto& f : frames)
    series.push_back({{"frame", f.frame},
                      {"reference", f.reference},
                      {"psnr_db", f.psnr_db},
                      {"ssim", f.ssim},
                      {"rot_err_deg", f.rot_err_deg},
                      {"trans_err", f.trans_err}});
  return {{"protocol", protocol}, {"rot_err_deg", rot_err_deg}, {"trans_err", trans_err}, {"psnr_db", psnr_db},
          {"ssim", ssim},         {"frames", series},           {"metadata", metadata}};
}

void MetricReport::write_table(std::ostream& os) const {
  os << "protocol: " << protocol << "\n";
  for (const auto& [k, v] : metadata.items()) os << k << ": " << v.dump() << "\n";
  os << std::fixed << std::setprecision(4);
  os << std::setw(7) << "frame" << std::setw(7) << "ref" << std::setw(11) << "psnr_db" << std::setw(9) << "ssim"
     << std::setw(13) << "rot_err_deg" << std::setw(11) << "trans_err" << "\n";
  for (const auto& f : frames)
    os << std::setw(7) << f.frame << std::setw(7) << f.reference << std::setw(11) << f.psnr_db << std::setw(9)
       << f.ssim << std::setw(13) << f.rot_err_deg << std::setw(11) << f.trans_err << "\n";
  os << std::setw(14) << "mean" << std::setw(11) << psnr_db << std::setw(9) << ssim << std::setw(13) << rot_err_deg
     << std::setw(11) << trans_err << "\n";
  os.unsetf(std::ios::floatfield);
}

void MetricReport::write_csv(std::ostream& os) const {
  os << "frame,reference,psnr_db,ssim,rot_err_deg,trans_err\n" << std::setprecision(10);
  for (const auto& f : frames)
    os << f.frame << ',' << f.reference << ',' << f.psnr_db << ',' << f.ssim << ',' << f.rot_err_deg << ','
       << f.trans_err << '\n';
}

void MetricReport::save(const std::filesystem::path& dir) const {
  std::filesystem::create_directories(dir);
  auto open = [&](const char* name) {
    std::ofstream os(dir / name);
    if (!os) throw std::runtime_error("cannot write " + (dir / name).string());
    return os;
  };
  open("report.json") << to_json().dump(2) << "\n";
  auto table = open("report.txt");
  write_table(table);
  auto csv = open("frames.csv");
  write_csv(csv);
}

Generator oracle_generator(const SceneSpec& scene, const Intrinsics& K) {
  return [scene, K](const ConditionFrame& reference, const Trajectory& poses, MemoryBank&) {
    std::vector<Image> out{reference.image};
    for (size_t i = 1; i < poses.size(); ++i) {
      Image im;
      render_view(scene, poses[i], K, &im, nullptr);
      out.push_back(im.quantized());
    }
    return out;
  };
}

Generator model_generator(Checkpoint& ckpt, const Codec& codec, const Intrinsics& K, const ModelGeneratorConfig& cfg,
                          DepthFn depth) {
  if (cfg.clip_frames < 3) throw std::invalid_argument("model_generator: clip_frames must be >= 3");
  return [&ckpt, &codec, K, cfg, depth](const ConditionFrame& reference, const Trajectory& poses, MemoryBank& bank) {
    if (poses.size() < 2) throw std::invalid_argument("model_generator: need at least two poses");
    const int step = cfg.clip_frames - 1;
    const int clips = (static_cast<int>(poses.size()) - 1 + step - 1) / step;
    Trajectory padded = poses;
    padded.resize(static_cast<size_t>(clips) * step + 1, poses.back());
    RolloutResult r =
        rollout(ckpt, codec, K, reference, padded, clips, cfg.memories, cfg.class_id, cfg.sampler, cfg.seed, bank, depth);
    r.frames.resize(poses.size());
    r.frames[0] = reference.image;
    return r.frames;
  };
}

int history_length(int frames) { return static_cast<int>(std::lround(0.6 * frames)); }

MetricReport memory_init_protocol(const Generator& generator, const VideoClip& clip) {
  clip.validate();
  const int total = static_cast<int>(clip.size());
  const int history = history_length(total);
  if (history < 1 || history >= total)
    throw std::invalid_argument("memory_init_protocol: clip of " + std::to_string(total) + " frames is too short");
  MemoryBank bank;
  for (int i = 0; i < history; ++i) bank.append({clip.frames[i], clip.depth[i], clip.poses[i], i});
  const int start = history - 1;
  const Trajectory poses(clip.poses.begin() + start, clip.poses.end());
  const ConditionFrame reference{clip.frames[start], clip.depth[start], clip.poses[start], {}};
  const std::vector<Image> generated = generator(reference, poses, bank);
  if (generated.size() != poses.size())
    throw std::runtime_error("memory_init_protocol: generator returned " + std::to_string(generated.size()) +
                             " frames for " + std::to_string(poses.size()) + " poses");

  // The requested trajectory stands in for the achieved one.
  const Trajectory achieved = normalize_relative(poses);
  const Trajectory truth = normalize_relative(poses);
  MetricReport report;
  report.protocol = "memory_init";
  for (int i = history; i < total; ++i) {
    const int g = i - start;
    report.frames.push_back(compare(i, i, generated[g], clip.frames[i], achieved[g], truth[g]));
  }
  report.summarize();
  report.metadata = {{"frames", total},
                     {"history", history},
                     {"generated", total - history},
                     {"camera_metrics", "requested trajectory used as achieved trajectory"}};
  return report;
}

bool is_palindromic(const Trajectory& traj, double tol) {
  const size_t n = traj.size();
  for (size_t i = 0; i < n / 2; ++i) {
    const CameraPose& a = traj[i];
    const CameraPose& b = traj[n - 1 - i];
    if ((a.rotation() - b.rotation()).cwiseAbs().maxCoeff() > tol ||
        (a.translation() - b.translation()).cwiseAbs().maxCoeff() > tol)
      return false;
  }
  return true;
}

Trajectory make_cycle(const Trajectory& path) {
  if (path.empty()) throw std::invalid_argument("make_cycle: empty path");
  Trajectory out = path;
  out.insert(out.end(), path.rbegin() + 1, path.rend());
  return out;
}

MetricReport cycle_protocol(const Generator& generator, const ConditionFrame& reference, const Trajectory& traj) {
  const int total = static_cast<int>(traj.size());
  if (total < 3) throw std::invalid_argument("cycle_protocol: trajectory needs at least 3 poses");
  if (!is_palindromic(traj)) throw std::invalid_argument("cycle_protocol: trajectory is not palindromic");
  if ((reference.pose.matrix() - traj[0].matrix()).cwiseAbs().maxCoeff() > 1e-9)
    throw std::invalid_argument("cycle_protocol: reference pose differs from the first trajectory pose");
  MemoryBank bank;
  const std::vector<Image> generated = generator(reference, traj, bank);
  if (generated.size() != traj.size())
    throw std::runtime_error("cycle_protocol: generator returned " + std::to_string(generated.size()) +
                             " frames for " + std::to_string(total) + " poses");
  const Trajectory norm = normalize_relative(traj);
  MetricReport report;
  report.protocol = "cycle";
  for (int i = 0; i < total / 2; ++i) {
    const int j = total - 1 - i;
    report.frames.push_back(compare(j, i, generated[j], generated[i], norm[j], norm[i]));
  }
  report.summarize();
  report.metadata = {{"frames", total},
                     {"pairs", total / 2},
                     {"camera_metrics", "requested trajectory used as achieved trajectory"}};
  return report;
}

}  // namespace ucm
