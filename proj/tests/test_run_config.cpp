#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <sstream>

#include "hmnet/run_config.hpp"

using namespace hmnet;

namespace {

RunConfig parse(const std::string& text) {
  std::istringstream in(text);
  return parse_run_config(in);
}

std::string error_of(const std::string& text) {
  try {
    parse(text);
  } catch (const ValidationError& e) {
    return e.what();
  }
  return "";
}

}  // namespace

TEST(RunConfig, EmptyFileGivesStandardDefaults) {
  const auto c = parse("");
  EXPECT_EQ(c.model.input_length, 96u);
  EXPECT_EQ(c.model.horizon, 96u);
  ASSERT_EQ(c.model.levels.size(), 3u);
  EXPECT_EQ(c.model.levels[0].block_size, 6u);
  EXPECT_EQ(c.model.levels[2].block_size, 4u);
  EXPECT_EQ(c.model.levels[1].memory_capacity, 4096u);
  EXPECT_EQ(c.model.levels[1].top_k, 16u);
  EXPECT_DOUBLE_EQ(c.train.learning_rate, 1e-3);
  EXPECT_EQ(c.train.batch_size, 32u);
  EXPECT_EQ(c.train.max_epochs, 30u);
  EXPECT_EQ(c.train.patience, 3u);
}

TEST(RunConfig, ResolvedIniRoundTrips) {
  const auto c = parse(
      "[model]\nblock_sizes = 2,3\nenable_denoise = true,false\nmemory_capacity = 64\n"
      "[train]\nablation = no_interact\nlearning_rate = 0.003\n[noise]\nprobabilities = 0,0.25\n"
      "[memsweep]\nconfigs = 8:1,16:2\n[run]\nseeds = 1,2,3\nhorizons = 24,48\n");
  const std::string ini = to_ini(c);
  const auto back = parse(ini);
  EXPECT_EQ(to_ini(back), ini);
  EXPECT_FALSE(back.model.levels[1].enable_denoise);
  EXPECT_EQ(back.model.levels[1].memory_capacity, 64u);
  EXPECT_EQ(back.train.ablation, Ablation::no_interact);
  EXPECT_EQ(back.seed_list(), (std::vector<std::uint64_t>{1, 2, 3}));
  EXPECT_EQ(back.memory_configs.size(), 2u);
  EXPECT_NE(ini.find("learning_rate = 0.003\n"), std::string::npos);
}

TEST(RunConfig, BlockSizeArithmeticShownInError) {
  const auto msg = error_of("[model]\ninput_length = 96\nblock_sizes = 6,4,5\n");
  EXPECT_NE(msg.find("96 / 6 / 4 = 4"), std::string::npos) << msg;
  EXPECT_NE(msg.find("4 % 5 = 4"), std::string::npos) << msg;
}

TEST(RunConfig, UnknownKeysAndBadValuesRejected) {
  EXPECT_NE(error_of("[model]\nhiden_dim = 8\n").find("unknown key 'hiden_dim'"), std::string::npos);
  EXPECT_NE(error_of("[modle]\nhidden_dim = 8\n").find("unknown section"), std::string::npos);
  EXPECT_NE(error_of("[model]\nhidden_dim = eight\n").find("not valid"), std::string::npos);
  EXPECT_NE(error_of("[model]\nhidden_dim = -3\n").find("non-negative"), std::string::npos);
  EXPECT_NE(error_of("[model]\nblock_sizes = 2,2\ntop_k = 1,2,3\n").find("3 values"), std::string::npos);
  EXPECT_NE(error_of("[train]\npatience = 0\n").find("patience"), std::string::npos);
  EXPECT_NE(error_of("[train]\nablation = none\n").find("unknown ablation"), std::string::npos);
  EXPECT_NE(error_of("[data]\ntrain_ratio = 0.5\n").find("all of"), std::string::npos);
  EXPECT_NE(error_of("[memsweep]\nconfigs = 256\n").find("M:K"), std::string::npos);
}

TEST(Registry, ResolvesRelativePathsAndFillsDefaults) {
  const auto dir = std::filesystem::temp_directory_path() / "hmnet_registry_test";
  std::filesystem::create_directories(dir / "data");
  {
    std::ofstream csv(dir / "data" / "tiny.csv");
    csv << "date,a,b\n";
    for (int i = 0; i < 30; ++i) csv << "2020-01-01 " << (i < 10 ? "0" : "") << i % 24 << ":00:00," << i << "," << 2 * i << "\n";
  }
  // Only the first 24 rows form a valid hourly grid.
  {
    std::ofstream reg(dir / "registry.ini");
    reg << "[tiny]\npath = data/tiny.csv\nfrequency = h\nratios = 0.5,0.25,0.25\nmax_rows = 24\n";
  }
  DataRef ref;
  ref.name = "tiny";
  ref.registry = (dir / "registry.ini").string();
  const auto resolved = resolve_data_ref(ref);
  EXPECT_EQ(resolved.path, (dir / "data" / "tiny.csv").string());
  EXPECT_DOUBLE_EQ(resolved.ratios->train, 0.5);
  const auto ds = load_dataset(ref);
  EXPECT_EQ(ds.values.rows, 24u);
  EXPECT_EQ(ds.values.cols, 2u);
  EXPECT_EQ(ds.name, "tiny");
  ref.name = "missing";
  EXPECT_THROW(resolve_data_ref(ref), ValidationError);
  std::filesystem::remove_all(dir);
}

TEST(Registry, EttFamilyDefaultsToTwentyMonths) {
  EXPECT_EQ(default_max_rows("ETTm2"), 57600u);
  EXPECT_EQ(default_max_rows("ETTh1"), 14400u);
  EXPECT_EQ(default_max_rows("exchange_rate"), 0u);
}

TEST(Registry, SinusoidNeedsNoPath) {
  DataRef ref;
  ref.sinusoid_steps = 300;
  ref.sinusoid_variables = 3;
  const auto ds = load_dataset(ref);
  EXPECT_EQ(ds.values.rows, 300u);
  EXPECT_EQ(ds.values.cols, 3u);
  ref.name = "other";
  EXPECT_THROW(load_dataset(ref), ValidationError);
}
