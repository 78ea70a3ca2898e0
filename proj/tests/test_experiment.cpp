#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <limits>
#include <sstream>

#include "graspml/experiment.hpp"

using namespace graspml;

namespace {

bool same_labels(const std::vector<Grasp>& a, const std::vector<Grasp>& b) {
  return std::equal(a.begin(), a.end(), b.begin(), b.end(), [](const Grasp& x, const Grasp& y) {
    return x.center_row == y.center_row && x.center_col == y.center_col && x.angle == y.angle && x.width == y.width;
  });
}

ExperimentConfig tiny() {
  ExperimentConfig c;
  c.image_size = 32;
  c.n_train = 6;
  c.n_val = 3;
  c.epochs = 2;
  c.batch_size = 3;
  c.labels_per_image = 2;
  c.channels = {3, 4, 4, 4, 4, 4, 3, 3};
  return c;
}

}  // namespace

TEST(Config, IniRoundTripAndHash) {
  ExperimentConfig c = tiny();
  c.loss = LossKind::img_mse;
  c.sam = SamPlacement::up;
  c.learning_rate = 3e-4;
  std::istringstream in(c.to_ini());
  const auto back = ExperimentConfig::from_ini(in);
  EXPECT_EQ(back.to_map(), c.to_map());
  EXPECT_EQ(back.hash(), c.hash());

  ExperimentConfig moved = c;
  moved.output_dir = "elsewhere";
  EXPECT_EQ(moved.hash(), c.hash());
  ExperimentConfig other = c;
  other.set("train.seed", "9");
  EXPECT_NE(other.hash(), c.hash());
}

TEST(Config, ParsesSectionsAndRejectsBadInput) {
  std::istringstream ok("[train]\nloss = mlgsl_log\nepochs = 7\n[model]\nsam = down\n");
  const auto c = ExperimentConfig::from_ini(ok);
  EXPECT_EQ(c.loss, LossKind::mlgsl_log);
  EXPECT_EQ(c.epochs, 7u);
  EXPECT_EQ(c.sam, SamPlacement::down);

  ExperimentConfig d;
  EXPECT_THROW(d.set("train.nonsense", "1"), std::invalid_argument);
  EXPECT_THROW(d.set("train.epochs", "-3"), std::invalid_argument);
  EXPECT_THROW(d.set("train.epochs", "3x"), std::invalid_argument);
  EXPECT_THROW(d.set("data.augment", "maybe"), std::invalid_argument);
  EXPECT_THROW(d.set("train.loss", "l1"), std::invalid_argument);
  std::istringstream stray("epochs = 3\n");
  EXPECT_THROW(ExperimentConfig::from_ini(stray), std::invalid_argument);
  try {
    d.set("model.sam", "sideways");
    FAIL();
  } catch (const std::invalid_argument& e) {
    EXPECT_NE(std::string(e.what()).find("model.sam"), std::string::npos);
  }
}

TEST(Config, ValidateRejectsInconsistentValues) {
  ExperimentConfig c = tiny();
  EXPECT_NO_THROW(c.validate());
  c.image_size = 30;
  EXPECT_THROW(c.validate(), std::invalid_argument);
  c = tiny();
  c.dataset = DatasetKind::clutter;
  c.objects = 6;
  EXPECT_THROW(c.validate(), std::invalid_argument);
  c = tiny();
  c.dataset = DatasetKind::jacquard_dir;
  c.data_dir = "/nonexistent/graspml";
  EXPECT_THROW(c.validate(), std::invalid_argument);
  c = tiny();
  c.learning_rate = 0;
  EXPECT_THROW(c.validate(), std::invalid_argument);
}

TEST(Config, DerivedScales) {
  ExperimentConfig c;
  c.image_size = 64;
  EXPECT_DOUBLE_EQ(c.model_spec().width_scale, 150.0 * 64 / 300);
  EXPECT_DOUBLE_EQ(c.extract_options().sigma, 2.0 * 64 / 300);
  EXPECT_DOUBLE_EQ(c.extract_options().nms_radius, 10.0 * 64 / 300);
  EXPECT_EQ(c.model_spec().input_rows, 64);
}

TEST(Split, ToyAndClutterAreDeterministic) {
  for (auto kind : {DatasetKind::toy, DatasetKind::clutter}) {
    ExperimentConfig c = tiny();
    c.dataset = kind;
    c.objects = 2;
    const auto a = load_split(c), b = load_split(c);
    ASSERT_EQ(a.train.size(), c.n_train);
    ASSERT_EQ(a.val.size(), c.n_val);
    for (std::size_t i = 0; i < a.train.size(); ++i) {
      EXPECT_EQ(a.train[i].depth, b.train[i].depth);
      EXPECT_TRUE(same_labels(a.train[i].labels, b.train[i].labels));
      EXPECT_EQ(a.train[i].depth.rows(), 32u);
    }
  }
}

TEST(Split, JacquardDirectoryHonoursManifest) {
  const auto dir = std::filesystem::temp_directory_path() / "graspml_test_split";
  std::filesystem::remove_all(dir);
  ToyOptions opt;
  opt.image_size = 32;
  const auto data = gen_toy_dataset(5, 3, opt);
  std::vector<ManifestEntry> manifest;
  for (std::size_t i = 0; i < data.size(); ++i) {
    save_sample(dir, data[i]);
    manifest.push_back({data[i].id, i < 3 ? Split::train : Split::val});
  }
  write_manifest(dir / "manifest.txt", manifest);
  ExperimentConfig c = tiny();
  c.dataset = DatasetKind::jacquard_dir;
  c.data_dir = dir.string();
  const auto s = load_split(c);
  ASSERT_EQ(s.train.size(), 3u);
  ASSERT_EQ(s.val.size(), 2u);
  EXPECT_EQ(s.val[1].id, data[4].id);
  EXPECT_EQ(s.train[0].labels.size(), data[0].labels.size());
}

TEST(Train, DeterministicAndSelectsBestEpoch) {
  ExperimentConfig c = tiny();
  // Wide enough for the vectorized kernels; the interleaved allocation moves the heap.
  c.channels = {8, 8, 8, 16, 16, 16, 8, 8};
  const auto split = load_split(c);
  std::size_t seen = 0;
  const auto a = train_model(c, split.train, split.val, [&](const EpochRecord&) { ++seen; });
  const std::vector<char> shift(24);
  const auto b = train_model(c, split.train, split.val);
  EXPECT_EQ(seen, c.epochs);
  ASSERT_EQ(a.history.size(), c.epochs);
  for (std::size_t e = 0; e < c.epochs; ++e) EXPECT_EQ(history_csv_row(a.history[e]), history_csv_row(b.history[e]));
  double best = -1;
  std::size_t best_epoch = 0;
  for (const auto& r : a.history) {
    EXPECT_TRUE(std::isfinite(r.train.total));
    if (r.val_top1 > best) best = r.val_top1, best_epoch = r.epoch;
  }
  EXPECT_EQ(a.best_epoch, best_epoch);
  EXPECT_EQ(a.best_top1, best);
  EXPECT_EQ(a.optimizer.step_count, c.epochs * 2);
}

TEST(Train, EveryLossKindRuns) {
  for (auto loss : {LossKind::mlgsl, LossKind::mlgsl_log, LossKind::pix_mse, LossKind::img_mse}) {
    ExperimentConfig c = tiny();
    c.epochs = 1;
    c.loss = loss;
    const auto split = load_split(c);
    const auto r = train_model(c, split.train, split.val);
    EXPECT_TRUE(std::isfinite(r.history[0].train.total)) << to_string(loss);
  }
}

TEST(Train, NonFiniteLossRaisesDivergence) {
  ExperimentConfig c = tiny();
  c.augment = false;
  c.labels_per_image = 100;
  auto split = load_split(c);
  split.train[2].labels[0].width = std::numeric_limits<double>::quiet_NaN();
  try {
    train_model(c, split.train, split.val);
    FAIL() << "expected divergence";
  } catch (const DivergenceError& e) {
    EXPECT_NE(std::string(e.what()).find(split.train[2].id), std::string::npos) << e.what();
  }
}

TEST(Train, NonFiniteDepthIsRejected) {
  ExperimentConfig c = tiny();
  auto split = load_split(c);
  split.train[1].depth(5, 5) = std::numeric_limits<double>::infinity();
  EXPECT_THROW(train_model(c, split.train, split.val), std::invalid_argument);
}

TEST(Train, EmptySplitThrows) {
  const ExperimentConfig c = tiny();
  const auto split = load_split(c);
  EXPECT_THROW(train_model(c, {}, split.val), std::invalid_argument);
  EXPECT_THROW(train_model(c, split.train, {}), std::invalid_argument);
}

TEST(History, CsvFormat) {
  EpochRecord r;
  r.epoch = 3;
  r.train.total = 1.5;
  r.train.pixel_term = 0.5;
  r.train.angle_term = 0.25;
  r.train.width_term = 0.75;
  r.val_top1 = 40;
  r.val_top5 = 60;
  EXPECT_EQ(history_csv_header(), "epoch,train_loss,pixel_term,angle_term,width_term,val_top1,val_top5");
  EXPECT_EQ(history_csv_row(r), "3,1.5,0.5,0.25,0.75,40,60");
}

TEST(Evaluate, ReportIsConsistentWithMetrics) {
  ExperimentConfig c = tiny();
  c.epochs = 1;
  const auto split = load_split(c);
  const auto r = train_model(c, split.train, split.val);
  const auto pred = model_predictor(r.best);
  const auto rep = evaluate(pred, split.val, c, true);
  const auto tk = top1_top5(pred, split.val, c.criterion(), c.extract_options());
  EXPECT_EQ(rep.top1, tk.top1);
  EXPECT_EQ(rep.top5, tk.top5);
  EXPECT_EQ(rep.n_samples, split.val.size());
  EXPECT_GE(rep.collision_free, 0.0);
  EXPECT_LE(rep.collision_free, 100.0);
  EXPECT_EQ(evaluate(pred, split.val, c, true).csv_row(), rep.csv_row());
  EXPECT_TRUE(std::isnan(evaluate(pred, split.val, c, false).collision_free));
}
