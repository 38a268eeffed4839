// SPDX-License-Identifier: Apache-2.0
#include <gtest/gtest.h>

#include <cmath>

#include "cmc/cmc.hpp"

using namespace cmc;

namespace {

std::string temp_path(const std::string& name) { return ::testing::TempDir() + "cmc_io_" + name; }

}  // namespace

TEST(Config, DefaultRoundTripsLosslessly) {
  ExperimentConfig cfg;
  std::string text = to_ini(cfg);
  EXPECT_TRUE(parse_config(text) == cfg);
  EXPECT_EQ(to_ini(parse_config(text)), text);
}

TEST(Config, EditedValuesRoundTrip) {
  ExperimentConfig cfg;
  apply_override(cfg, "train.lr", "0.1234567890123");
  apply_override(cfg, "train.schedule", "step");
  apply_override(cfg, "train.milestones", "30,60,90");
  apply_override(cfg, "train.loss", "nce");
  apply_override(cfg, "model.hidden", "128,32");
  apply_override(cfg, "sweep.grid", "0,0.25,0.5");
  EXPECT_EQ(cfg.train.lr, 0.1234567890123);
  EXPECT_EQ(cfg.train.schedule.kind, ScheduleKind::step);
  EXPECT_EQ(cfg.train.schedule.milestones, (std::vector<std::size_t>{30, 60, 90}));
  EXPECT_EQ(cfg.train.loss_kind, LossKind::nce);
  EXPECT_EQ(cfg.model.hidden, (std::vector<std::size_t>{128, 32}));
  ExperimentConfig back = parse_config(to_ini(cfg));
  EXPECT_TRUE(back == cfg);
  EXPECT_EQ(back.train.lr, cfg.train.lr);
  EXPECT_EQ(back.sweep.grid, cfg.sweep.grid);
}

TEST(Config, PartialFileKeepsDefaults) {
  auto cfg = parse_config("[train]\nepochs = 7\n");
  EXPECT_EQ(cfg.train.epochs, 7u);
  EXPECT_EQ(cfg.train.batch_size, ExperimentConfig{}.train.batch_size);
  EXPECT_EQ(cfg.train.tau, 0.07);
}

TEST(Config, UnknownKeysAndBadValuesAreRejected) {
  EXPECT_THROW(parse_config("[train]\nepoch = 7\n"), ConfigError);
  EXPECT_THROW(parse_config("[nosuch]\nepochs = 7\n"), ConfigError);
  EXPECT_THROW(parse_config("epochs = 7\n"), ConfigError);
  EXPECT_THROW(parse_config("[train]\nepochs = seven\n"), ConfigError);
  EXPECT_THROW(parse_config("[train]\nepochs = -3\n"), ConfigError);
  EXPECT_THROW(parse_config("[train]\nlr = 0.1x\n"), ConfigError);
  EXPECT_THROW(parse_config("[train]\nschedule = linear\n"), ConfigError);
  EXPECT_THROW(parse_config("[train]\nloss = hinge\n"), ConfigError);
  EXPECT_THROW(parse_config("[train\nepochs = 7\n"), ConfigError);
  ExperimentConfig cfg;
  EXPECT_THROW(apply_override(cfg, "epochs", "3"), ConfigError);
  EXPECT_THROW(apply_override(cfg, "train.nope", "3"), ConfigError);
  EXPECT_THROW(load_config(temp_path("missing.ini")), ConfigError);
}

TEST(Config, FileLoad) {
  std::string path = temp_path("cfg.ini");
  ExperimentConfig cfg;
  cfg.seed = 42;
  cfg.train.negatives = 256;
  io::write_file(path, to_ini(cfg));
  EXPECT_TRUE(load_config(path) == cfg);
}

TEST(Containers, DatasetRoundTrip) {
  auto ds = gen_shared_factor({2, 3, 5, {0.5}, 4, 40, 1});
  std::string bytes = encode_dataset(ds);
  Dataset back = decode_dataset(bytes);
  EXPECT_EQ(encode_dataset(back), bytes);
  EXPECT_EQ(back.size(), ds.size());
  ASSERT_EQ(back.view_count(), 3u);
  for (std::size_t v = 0; v < 3; ++v) {
    auto a = ds.view_data(v), b = back.view_data(v);
    EXPECT_TRUE(std::equal(a.begin(), a.end(), b.begin(), b.end()));
  }
  EXPECT_TRUE(std::ranges::equal(back.labels(), ds.labels()));

  auto unlabeled = gen_gaussian_views({2, 0.5, 10, 3});
  EXPECT_FALSE(decode_dataset(encode_dataset(unlabeled)).has_labels());

  std::string path = temp_path("ds.cmcv");
  save_dataset(ds, path);
  EXPECT_EQ(encode_dataset(load_dataset(path)), bytes);
}

TEST(Containers, CheckpointRoundTrip) {
  auto ds = gen_patch_views(4, 8, 4, 4, 2, 0);
  auto model = make_model(ds, {"p1", "p2"}, {6}, 3, 9, 4);
  std::string bytes = encode_model(model);
  Model back = decode_model(bytes);
  EXPECT_EQ(encode_model(back), bytes);
  EXPECT_EQ(back.chunks, 4u);
  EXPECT_EQ(back.local_encoders.size(), 2u);
  ASSERT_EQ(back.parameters().size(), model.parameters().size());
  for (std::size_t i = 0; i < model.parameters().size(); ++i)
    EXPECT_EQ(back.parameters()[i].to_vector(), model.parameters()[i].to_vector());
  Tensor x = ds.all("p1");
  EXPECT_EQ(encode(back.encoders.at("p1"), x).to_vector(), encode(model.encoders.at("p1"), x).to_vector());
}

TEST(Containers, BankRoundTrip) {
  auto bank = init_bank({"a", "b"}, 12, 3, 5, 0.25);
  std::vector<std::size_t> ids{1, 4};
  bank.update("a", ids, Tensor::matrix(2, 3, {1, 2, 3, -1, 0, 2}));
  MemoryBank back = decode_bank(encode_bank(bank));
  EXPECT_TRUE(back == bank);
  EXPECT_EQ(back.momentum(), 0.25);
  std::string path = temp_path("bank.cmcb");
  save_bank(bank, path);
  EXPECT_TRUE(load_bank(path) == bank);
}

TEST(Containers, CorruptInputIsAFormatError) {
  auto ds = gen_gaussian_views({1, 0.5, 5, 0});
  std::string bytes = encode_dataset(ds);
  EXPECT_THROW(decode_dataset(bytes.substr(0, bytes.size() - 1)), FormatError);
  EXPECT_THROW(decode_dataset(bytes + "x"), FormatError);
  std::string bad_magic = bytes;
  bad_magic[0] = 'X';
  EXPECT_THROW(decode_dataset(bad_magic), FormatError);
  std::string bad_version = bytes;
  bad_version[4] = 9;
  EXPECT_THROW(decode_dataset(bad_version), FormatError);
  // A bank file is not a checkpoint.
  EXPECT_THROW(decode_model(encode_bank(init_bank({"x"}, 2, 2, 0))), FormatError);
  EXPECT_THROW(decode_bank(std::string()), FormatError);
  EXPECT_THROW(load_dataset(temp_path("does_not_exist")), FormatError);
}

TEST(Ppm, WriteThenReadRecoversLevels) {
  std::vector<double> px;
  for (int i = 0; i < 2 * 3 * 3; ++i) px.push_back(i / 17.0);
  Tensor img({2, 3, 3}, px);
  std::string path = temp_path("img.ppm");
  write_ppm(img, path);
  Tensor back = read_ppm(path);
  ASSERT_EQ(back.shape(), (Shape{2, 3, 3}));
  for (std::size_t i = 0; i < px.size(); ++i) EXPECT_NEAR(back[i], px[i], 0.5 / 255.0 + 1e-12);
  write_ppm(back, path);
  EXPECT_EQ(read_ppm(path).to_vector(), back.to_vector());
}

TEST(Ppm, HeaderCommentsAndErrors) {
  std::string path = temp_path("hand.ppm");
  io::write_file(path, std::string("P6\n# made by hand\n1 1\n255\n") + std::string("\xff\x00\x80", 3));
  Tensor px = read_ppm(path);
  EXPECT_EQ(px.to_vector(), (std::vector<double>{1.0, 0.0, 128.0 / 255.0}));
  io::write_file(path, "P3\n1 1\n255\n255 0 0\n");
  EXPECT_THROW(read_ppm(path), FormatError);
  io::write_file(path, "P6\n1 1\n65535\n");
  EXPECT_THROW(read_ppm(path), FormatError);
  io::write_file(path, std::string("P6\n2 1\n255\n") + std::string("\x01\x02\x03", 3));
  EXPECT_THROW(read_ppm(path), FormatError);
  EXPECT_THROW(write_ppm(Tensor::filled({1, 1, 3}, 1.5), path), RangeError);
  EXPECT_THROW(write_ppm(Tensor::filled({1, 3}, 0.5), path), DimensionError);
}

TEST(Csv, FormatDoubleIsShortestExact) {
  EXPECT_EQ(format_double(0.5), "0.5");
  EXPECT_EQ(format_double(0.1), "0.1");
  EXPECT_EQ(format_double(3.0), "3");
  for (double v : {std::log(2.0), 1e-300, -123456.789, 0.07}) EXPECT_EQ(std::strtod(format_double(v).c_str(), nullptr), v);
}

TEST(Csv, MetricsRowsPerEpochAndPair) {
  TrainingLog log;
  log.negatives = 16;
  for (std::size_t e = 0; e < 2; ++e) {
    EpochRecord r;
    r.epoch = e;
    r.lr = 0.5;
    r.pairs = {{"a-b", 1.5, 0.0, 0.25}, {"a-c", 2.0, 0.0, -0.5}};
    log.epochs.push_back(r);
  }
  EXPECT_EQ(metrics_csv(log), "epoch,pair,loss,mi_lb,lr\n0,a-b,1.5,0.25,0.5\n0,a-c,2,-0.5,0.5\n1,a-b,1.5,0.25,0.5\n1,a-c,2,-0.5,0.5\n");
  EXPECT_EQ(pair_loss_csv(log), "epoch,a-b,a-c\n0,1.5,2\n1,1.5,2\n");
}

TEST(Report, KeepsInsertionOrderAndOverwrites) {
  Report r;
  r.set("n", std::size_t{10}).set("mi", 0.25).set("n", std::size_t{11});
  EXPECT_EQ(r.str(), "n=11\nmi=0.25\n");
}
