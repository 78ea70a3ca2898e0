// Desk-scale acceptance run. Prints one PASS/FAIL line per criterion and exits non-zero
// if any criterion fails without a known diagnosis. Training is single-threaded and takes
// about 30 minutes on one core.
#include <CLI11.hpp>

#include <chrono>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <map>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "graspml/graspml.hpp"

namespace fs = std::filesystem;
using namespace graspml;

namespace {

// Pinned tolerances.
constexpr double kGradRelTol = 1e-4;
constexpr double kGradStep = 1e-4;
constexpr int kGradTrials = 50;
constexpr double kUniformTol = 1e-6;
constexpr double kConcentratedMax = 1e-4;
constexpr double kIouMaxDeviation = 0.02;
constexpr double kRasterStep = 0.1;
constexpr int kIouPairs = 200;
constexpr double kAngleTol = 1e-9;
constexpr int kAnglePoints = 10000;
constexpr double kMinMlgslTop1 = 70.0;
constexpr double kMinGap = 10.0;
constexpr double kLabelBudgetBand = 8.0;
constexpr double kSamBand = 6.0;
constexpr int kSeedsNeeded = 2;
constexpr double kProbeShift = 8.0;
constexpr double kProbeTol = 1.0;

struct Outcome {
  std::string id;
  bool pass = false;
  bool known = false;
};

std::vector<Outcome> outcomes;
std::ostringstream transcript;

// Prints to stdout and keeps a copy for report.txt.
void say(const std::string& line) {
  std::cout << line << std::endl;
  transcript << line << '\n';
}

// A failure with a `known` diagnosis is still printed as FAIL but does not fail the run.
void report(const std::string& id, const std::string& name, bool pass, const std::string& detail,
            const std::string& known = "") {
  outcomes.push_back({id, pass, !pass && !known.empty()});
  say((pass ? "PASS " : "FAIL ") + id + " " + name + ": " + detail + (!pass && !known.empty() ? " [known: " + known + "]" : ""));
}

std::string fmt(double v, int digits = 3) {
  std::ostringstream o;
  o << std::setprecision(digits) << std::fixed << v;
  return o.str();
}

// ---------------------------------------------------------------------------------------
// 1-4: loss, geometry and encoding checks

double& slot(ConfigMaps& m, int k, std::size_t i) {
  switch (k) {
    case 0: return m.quality[i];
    case 1: return m.sin2[i];
    case 2: return m.cos2[i];
    default: return m.width[i];
  }
}

double slot(const MapGradients& g, int k, std::size_t i) {
  switch (k) {
    case 0: return g.quality[i];
    case 1: return g.sin2[i];
    case 2: return g.cos2[i];
    default: return g.width[i];
  }
}

using LossFn = std::function<LossValue(const ConfigMaps&, MapGradients*)>;

// ||analytic - central difference|| / max(||analytic||, ||numeric||) over all four maps.
double relative_gradient_error(ConfigMaps m, const LossFn& f, double h = kGradStep) {
  MapGradients g;
  f(m, &g);
  double diff = 0, na = 0, nn = 0;
  for (int k = 0; k < 4; ++k) {
    for (std::size_t i = 0; i < m.quality.size(); ++i) {
      const double keep = slot(m, k, i);
      slot(m, k, i) = keep + h;
      const double up = f(m, nullptr).total;
      slot(m, k, i) = keep - h;
      const double down = f(m, nullptr).total;
      slot(m, k, i) = keep;
      const double num = (up - down) / (2 * h);
      const double an = slot(g, k, i);
      diff += (an - num) * (an - num);
      na += an * an;
      nn += num * num;
    }
  }
  const double scale = std::sqrt(std::max(na, nn));
  return scale > 0 ? std::sqrt(diff) / scale : 0.0;
}

// Smallest per-label regression MSE (angle or width) in a trial.
double smallest_regression_mse(const ConfigMaps& m, const std::vector<Grasp>& labels) {
  double lo = 1e300;
  for (const auto& t : encode_labels_sparse(labels, m.shape(), m.width_scale)) {
    const double ds = m.sin2[t.index] - t.sin2, dc = m.cos2[t.index] - t.cos2, dw = m.width[t.index] - t.width;
    lo = std::min({lo, ds * ds + dc * dc, dw * dw});
  }
  return lo;
}

std::string sci(double v) {
  std::ostringstream o;
  o << std::scientific << std::setprecision(2) << v;
  return o.str();
}

void criterion_gradients() {
  std::mt19937_64 rng(2024);
  std::uniform_real_distribution<double> q(0.05, 0.95), u(-1, 1), w(0, 1), ang(-kPi / 2, kPi / 2), gw(0, 150);
  std::uniform_int_distribution<int> pix(0, 7);
  const Shape shape{8, 8};
  const char* names[] = {"mlgsl", "mlgsl_log", "pix_mse", "img_mse"};
  double worst[4] = {0, 0, 0, 0};
  // Failing trials are re-checked with smaller steps: truncation error of a central
  // difference falls as h^2, an analytic gradient error does not.
  int misses = 0;
  bool truncation_only = true;
  double worst_small_h = 0, smallest_mse = 1e300;
  for (int t = 0; t < kGradTrials; ++t) {
    ConfigMaps m(shape);
    for (std::size_t i = 0; i < shape.area(); ++i) {
      m.quality[i] = q(rng);
      m.sin2[i] = u(rng);
      m.cos2[i] = u(rng);
      m.width[i] = w(rng);
    }
    std::vector<Grasp> labels;
    while (labels.size() < 2) {
      const Grasp g = make_grasp(pix(rng), pix(rng), ang(rng), gw(rng));
      if (labels.empty() || label_index(labels[0], shape) != label_index(g, shape)) labels.push_back(g);
    }
    const ConfigMaps dense = encode_labels_dense(labels, shape);
    const LossFn fns[4] = {
        [&](const ConfigMaps& p, MapGradients* g) { return mlgsl(p, labels, g); },
        [&](const ConfigMaps& p, MapGradients* g) { return mlgsl_log(p, labels, g); },
        [&](const ConfigMaps& p, MapGradients* g) { return pix_mse(p, labels, g); },
        [&](const ConfigMaps& p, MapGradients* g) { return img_mse(p, dense, g); },
    };
    for (int k = 0; k < 4; ++k) {
      const double e = relative_gradient_error(m, fns[k]);
      worst[k] = std::max(worst[k], e);
      if (e < kGradRelTol) continue;
      ++misses;
      const double e5 = relative_gradient_error(m, fns[k], kGradStep / 10);
      const double e6 = relative_gradient_error(m, fns[k], kGradStep / 100);
      truncation_only = truncation_only && e5 <= e / 50 && e6 < kGradRelTol;
      worst_small_h = std::max(worst_small_h, e6);
      smallest_mse = std::min(smallest_mse, smallest_regression_mse(m, labels));
    }
  }
  bool pass = true;
  std::string detail = "worst relative error over " + std::to_string(kGradTrials) + " trials at h = 1e-4:";
  for (int k = 0; k < 4; ++k) {
    pass = pass && worst[k] < kGradRelTol;
    detail += std::string(" ") + names[k] + " " + sci(worst[k]);
  }
  detail += " (limit 1e-4)";
  std::string known;
  if (!pass && truncation_only) {
    known = std::to_string(misses) + " trial(s) miss with a regression MSE as small as " + sci(smallest_mse) +
            "; their error falls 100x per 10x smaller step (worst " + sci(worst_small_h) +
            " at h = 1e-6), so the miss is central-difference truncation of log(MSE), not the analytic gradient";
  }
  report("1", "gradient correctness", pass, detail, known);
}

void criterion_loss_identities() {
  ConfigMaps uniform(Shape{300, 300});
  uniform.quality.fill(0.5);
  const std::vector<Grasp> one{make_grasp(150, 150, 0.3, 60)};
  const double pixel = mlgsl(uniform, one).pixel_term;
  const bool a = std::abs(pixel - std::log(90000.0)) <= kUniformTol;

  // Concentrated: Q = 1 at the label, 0 (clamped to the quality floor) elsewhere, exact angle and width.
  ConfigMaps conc(Shape{8, 8});
  const Grasp g = make_grasp(3, 5, 0.7, 90);
  const auto t = sparse_target(g, conc.shape());
  conc.quality[t.index] = 1.0;
  conc.sin2[t.index] = t.sin2;
  conc.cos2[t.index] = t.cos2;
  conc.width[t.index] = t.width;
  const std::vector<Grasp> gl{g};
  const double total = mlgsl(conc, gl).total;
  const bool b = total <= kConcentratedMax;

  std::mt19937_64 rng(7);
  std::uniform_real_distribution<double> u(0, 1);
  ConfigMaps r(Shape{16, 16});
  for (std::size_t i = 0; i < r.quality.size(); ++i) r.quality[i] = r.sin2[i] = r.cos2[i] = r.width[i] = u(rng);
  const std::vector<Grasp> two{make_grasp(2, 3, 0.1, 40), make_grasp(11, 9, -1.2, 100)};
  MapGradients grad;
  pix_mse(r, two, &grad);
  bool zero_off = true;
  for (std::size_t i = 0; i < r.quality.size(); ++i) {
    if (i == label_index(two[0], r.shape()) || i == label_index(two[1], r.shape())) continue;
    zero_off = zero_off && grad.quality[i] == 0 && grad.sin2[i] == 0 && grad.cos2[i] == 0 && grad.width[i] == 0;
  }
  std::ostringstream d;
  d << std::setprecision(10) << "uniform pixel term " << pixel << " vs ln 90000 " << std::log(90000.0)
    << "; concentrated total " << std::scientific << std::setprecision(2) << total << " on 8x8; pix_mse off-label gradient "
    << (zero_off ? "zero" : "NONZERO");
  report("2", "loss identities", a && b && zero_off, d.str());
}

bool inside(const GraspRectangle& r, Point p) {
  // Convex, consistently wound: the point is inside when all edge cross products share a sign.
  int pos = 0, neg = 0;
  for (std::size_t i = 0; i < 4; ++i) {
    const Point a = r.corners[i], b = r.corners[(i + 1) % 4];
    const double c = (b.x - a.x) * (p.y - a.y) - (b.y - a.y) * (p.x - a.x);
    pos += c > 0;
    neg += c < 0;
  }
  return pos == 0 || neg == 0;
}

double raster_iou(const GraspRectangle& a, const GraspRectangle& b) {
  double x0 = 1e300, x1 = -1e300, y0 = 1e300, y1 = -1e300;
  for (const auto* r : {&a, &b}) {
    for (const auto& c : r->corners) x0 = std::min(x0, c.x), x1 = std::max(x1, c.x), y0 = std::min(y0, c.y), y1 = std::max(y1, c.y);
  }
  long both = 0, either = 0;
  for (double y = y0 + kRasterStep / 2; y < y1; y += kRasterStep) {
    for (double x = x0 + kRasterStep / 2; x < x1; x += kRasterStep) {
      const bool ia = inside(a, {x, y}), ib = inside(b, {x, y});
      both += ia && ib;
      either += ia || ib;
    }
  }
  return either ? static_cast<double>(both) / static_cast<double>(either) : 0.0;
}

void criterion_iou() {
  std::mt19937_64 rng(11);
  std::uniform_real_distribution<double> pos(30, 50), ang(-kPi / 2, kPi / 2), w(8, 60);
  double worst = 0;
  int overlapping = 0;
  for (int i = 0; i < kIouPairs; ++i) {
    const auto a = to_rectangle(make_grasp(pos(rng), pos(rng), ang(rng), w(rng)));
    const auto b = to_rectangle(make_grasp(pos(rng), pos(rng), ang(rng), w(rng)));
    const double exact = rect_iou(a, b);
    overlapping += exact > 0;
    worst = std::max(worst, std::abs(exact - raster_iou(a, b)));
  }
  report("3", "IoU oracle equivalence", worst <= kIouMaxDeviation,
         "max |clip - raster| " + fmt(worst, 4) + " over " + std::to_string(kIouPairs) + " pairs (" +
             std::to_string(overlapping) + " overlapping), limit " + fmt(kIouMaxDeviation, 2));
}

void criterion_angle_roundtrip() {
  Grid<double> s(1, kAnglePoints), c(1, kAnglePoints), truth(1, kAnglePoints);
  for (int i = 0; i < kAnglePoints; ++i) {
    const double a = -kPi / 2 + kPi * i / kAnglePoints;
    truth[i] = a;
    s[i] = std::sin(2 * a);
    c[i] = std::cos(2 * a);
  }
  const auto back = recover_angle_map(s, c);
  double worst = 0;
  for (int i = 0; i < kAnglePoints; ++i) worst = std::max(worst, angle_diff(back[i], truth[i]));
  std::ostringstream d;
  d << "max angular error " << std::scientific << std::setprecision(2) << worst << " over " << kAnglePoints << " points";
  report("4", "angle encode/decode roundtrip", worst <= kAngleTol, d.str());
}

// ---------------------------------------------------------------------------------------
// 5-10: training experiments

ExperimentConfig desk_config() {
  ExperimentConfig c;
  c.image_size = 64;
  c.n_train = 500;
  c.n_val = 100;
  c.epochs = 30;
  c.labels_per_image = 2;
  c.channels = {16, 16, 16, 32, 32, 32, 16, 16};
  c.data_seed = 1;
  c.seed = 1;
  return c;
}

struct Run {
  TrainResult result;
  DataSplit split;
  double seconds = 0;
};

class Runner {
 public:
  explicit Runner(fs::path dir) : dir_(std::move(dir)) { fs::create_directories(dir_); }

  const Run& get(const std::string& name, const ExperimentConfig& cfg) {
    if (auto it = runs_.find(name); it != runs_.end()) return it->second;
    std::cerr << "[train] " << name << " ..." << std::flush;
    const auto t0 = std::chrono::steady_clock::now();
    DataSplit split = load_split(cfg);
    std::ostringstream csv;
    csv << history_csv_header() << '\n';
    auto result = train_model(cfg, split.train, split.val, [&](const EpochRecord& r) { csv << history_csv_row(r) << '\n'; });
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    const fs::path d = dir_ / name;
    fs::create_directories(d);
    std::ofstream(d / "config.ini") << cfg.to_ini();
    std::ofstream(d / "history.csv", std::ios::binary) << csv.str();
    std::cerr << " best top1 " << result.best_top1 << " (epoch " << result.best_epoch << ", " << fmt(secs, 0) << " s)"
              << std::endl;
    return runs_.emplace(name, Run{std::move(result), std::move(split), secs}).first->second;
  }

  const fs::path& dir() const { return dir_; }

 private:
  fs::path dir_;
  std::map<std::string, Run> runs_;
};

ExperimentConfig with(ExperimentConfig c, LossKind loss, std::uint64_t seed) {
  c.loss = loss;
  c.seed = seed;
  return c;
}

void criterion_sparse_labels(Runner& runner) {
  int held = 0;
  std::string detail;
  for (std::uint64_t seed = 1; seed <= 3 && held < kSeedsNeeded; ++seed) {
    if (seed == 3 && held == 0) break;
    const double a = runner.get("mlgsl_k2_s" + std::to_string(seed), with(desk_config(), LossKind::mlgsl, seed)).result.best_top1;
    const double b = runner.get("imgmse_k2_s" + std::to_string(seed), with(desk_config(), LossKind::img_mse, seed)).result.best_top1;
    const bool ok = a >= kMinMlgslTop1 && a - b >= kMinGap;
    held += ok;
    detail += (detail.empty() ? "" : "; ") + std::string("seed ") + std::to_string(seed) + " MLGSL " + fmt(a, 1) +
              " ImgMSE " + fmt(b, 1) + (ok ? " holds" : " fails");
  }
  report("5", "sparse-label learning", held >= kSeedsNeeded, detail);
}

void criterion_label_budget(Runner& runner) {
  const double k2 = runner.get("mlgsl_k2_s1", with(desk_config(), LossKind::mlgsl, 1)).result.best_top1;
  ExperimentConfig c = with(desk_config(), LossKind::mlgsl, 1);
  c.labels_per_image = 16;
  const double k16 = runner.get("mlgsl_k16_s1", c).result.best_top1;
  report("6", "label-budget insensitivity", std::abs(k2 - k16) <= kLabelBudgetBand,
         "MLGSL k=2 " + fmt(k2, 1) + " vs k=16 " + fmt(k16, 1) + ", band " + fmt(kLabelBudgetBand, 0));
}

void criterion_dataset_size(Runner& runner) {
  int held = 0;
  std::string detail;
  for (std::uint64_t seed = 1; seed <= 3 && held < kSeedsNeeded; ++seed) {
    if (seed == 3 && held == 0) break;
    ExperimentConfig c = desk_config();
    c.n_train = 100;
    const double a = runner.get("mlgsl_n100_s" + std::to_string(seed), with(c, LossKind::mlgsl, seed)).result.best_top1;
    const double b = runner.get("imgmse_n100_s" + std::to_string(seed), with(c, LossKind::img_mse, seed)).result.best_top1;
    held += a >= b;
    detail += (detail.empty() ? "" : "; ") + std::string("seed ") + std::to_string(seed) + " MLGSL " + fmt(a, 1) +
              " ImgMSE " + fmt(b, 1);
  }
  report("7", "dataset-size trend (100 train images)", held >= kSeedsNeeded, detail);
}

void criterion_sam(Runner& runner) {
  double lo = 1e9, hi = -1e9;
  bool shapes = true;
  std::string detail;
  for (auto sam : {SamPlacement::none, SamPlacement::down, SamPlacement::up, SamPlacement::all}) {
    ExperimentConfig c = with(desk_config(), LossKind::mlgsl, 1);
    c.sam = sam;
    const std::string name = sam == SamPlacement::none ? "mlgsl_k2_s1" : "mlgsl_sam_" + std::string(to_string(sam)) + "_s1";
    const Run& r = runner.get(name, c);
    lo = std::min(lo, r.result.best_top1);
    hi = std::max(hi, r.result.best_top1);
    for (const auto& s : r.split.val) {
      const auto maps = r.result.best.forward(s.depth);
      try {
        maps.validate();
        shapes = shapes && maps.shape() == s.image_shape();
      } catch (const std::exception&) {
        shapes = false;
      }
    }
    detail += (detail.empty() ? "" : ", ") + std::string(to_string(sam)) + " " + fmt(r.result.best_top1, 1);
  }
  report("8", "SAM neutrality", hi - lo <= kSamBand && shapes,
         detail + "; spread " + fmt(hi - lo, 1) + " (band " + fmt(kSamBand, 0) + "); forward shape/ranges " +
             (shapes ? "ok" : "VIOLATED"));
}

void criterion_clutter(Runner& runner) {
  ExperimentConfig c = with(desk_config(), LossKind::mlgsl, 1);
  c.dataset = DatasetKind::clutter;
  c.objects = 3;
  const Run& cl = runner.get("mlgsl_clutter_s1", c);
  const Run& single = runner.get("mlgsl_k2_s1", with(desk_config(), LossKind::mlgsl, 1));

  std::size_t labels = 0, clean = 0;
  for (const auto* part : {&cl.split.train, &cl.split.val}) {
    for (const auto& s : *part) {
      for (const auto& g : s.labels) {
        ++labels;
        clean += !collision_check(g, s.depth, c.gripper());
      }
    }
  }
  const auto& val = cl.split.val;
  const double ours = collision_free_ratio(model_predictor(cl.result.best), val, c.gripper(), c.extract_options());
  const double base = collision_free_ratio(model_predictor(single.result.best), val, c.gripper(), c.extract_options());
  report("9", "clutter pruning soundness", clean == labels && ours > base,
         std::to_string(clean) + "/" + std::to_string(labels) + " surviving labels collision-free; collision-free ratio " +
             "clutter-trained " + fmt(ours, 1) + " vs single-object-trained " + fmt(base, 1));
}

void criterion_determinism(Runner& runner) {
  ExperimentConfig c = desk_config();
  c.n_train = 100;
  c.epochs = 3;
  c.seed = 5;
  runner.get("determinism_a", c);
  runner.get("determinism_b", c);
  auto slurp = [&](const std::string& name) {
    std::ifstream in(runner.dir() / name / "history.csv", std::ios::binary);
    return std::string(std::istreambuf_iterator<char>(in), {});
  };
  const std::string a = slurp("determinism_a"), b = slurp("determinism_b");
  report("10", "determinism", !a.empty() && a == b,
         std::string("loss-curve CSVs ") + (a == b ? "byte-identical" : "DIFFER") + " (" + std::to_string(a.size()) +
             " bytes)");
}

// Shifting the input by a multiple of the total stride shifts the quality peak with it.
void probe_equivariance(Runner& runner) {
  const Run& r = runner.get("mlgsl_k2_s1", with(desk_config(), LossKind::mlgsl, 1));
  const int shift = static_cast<int>(kProbeShift);
  int moved = 0, total = 0;
  for (const auto& s : r.split.val) {
    const auto maps = r.result.best.forward(s.depth);
    const auto peak = static_cast<std::size_t>(std::max_element(maps.quality.begin(), maps.quality.end()) - maps.quality.begin());
    const long pr = static_cast<long>(peak / maps.quality.cols()), pc = static_cast<long>(peak % maps.quality.cols());
    const long n = static_cast<long>(s.depth.rows());
    // Only peaks that stay away from the border after the shift are comparable.
    if (pr + shift >= n - 4 || pc + shift >= n - 4) continue;
    Grid<double> shifted(s.depth.rows(), s.depth.cols(), s.background);
    for (long y = 0; y + shift < n; ++y) {
      for (long x = 0; x + shift < n; ++x) shifted(y + shift, x + shift) = s.depth(y, x);
    }
    const auto m2 = r.result.best.forward(shifted);
    const auto p2 = static_cast<std::size_t>(std::max_element(m2.quality.begin(), m2.quality.end()) - m2.quality.begin());
    const long qr = static_cast<long>(p2 / m2.quality.cols()), qc = static_cast<long>(p2 % m2.quality.cols());
    ++total;
    moved += std::abs(qr - pr - shift) <= kProbeTol && std::abs(qc - pc - shift) <= kProbeTol;
  }
  // Not a criterion: at 64 px the receptive field spans the image, so padding leaks position.
  say("INFO translation probe: " + std::to_string(moved) + "/" + std::to_string(total) + " quality peaks moved by " +
      std::to_string(shift) + " px within " + fmt(kProbeTol, 0) + " px");
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"graspml acceptance criteria"};
  std::string work = "acceptance_runs";
  std::vector<std::string> only;
  app.add_option("--work-dir", work, "Directory for per-run configs and loss curves");
  app.add_option("--only", only, "Run only these criteria (1-10; P for the translation probe)")->delimiter(',');
  CLI11_PARSE(app, argc, argv);

  auto wanted = [&](const std::string& id) { return only.empty() || std::find(only.begin(), only.end(), id) != only.end(); };
  Runner runner{fs::path(work)};
  const auto t0 = std::chrono::steady_clock::now();
  if (wanted("1")) criterion_gradients();
  if (wanted("2")) criterion_loss_identities();
  if (wanted("3")) criterion_iou();
  if (wanted("4")) criterion_angle_roundtrip();
  if (wanted("5")) criterion_sparse_labels(runner);
  if (wanted("6")) criterion_label_budget(runner);
  if (wanted("7")) criterion_dataset_size(runner);
  if (wanted("8")) criterion_sam(runner);
  if (wanted("9")) criterion_clutter(runner);
  if (wanted("10")) criterion_determinism(runner);
  if (wanted("P")) probe_equivariance(runner);

  const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  std::size_t passed = 0, known = 0;
  for (const auto& o : outcomes) passed += o.pass, known += o.known;
  say(std::to_string(passed) + "/" + std::to_string(outcomes.size()) + " criteria passed, " + std::to_string(known) +
      " known failure(s), in " + fmt(secs / 60.0, 1) + " min");
  std::ofstream(runner.dir() / "report.txt") << transcript.str();
  return passed + known == outcomes.size() ? 0 : 1;
}
