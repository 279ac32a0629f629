#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <iterator>

#include "ssal/harness/experiment.hpp"

using namespace ssal;
using namespace ssal::harness;
namespace fs = std::filesystem;
using nlohmann::json;

namespace {

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

fs::path scratch_dir(const std::string& name) {
  auto dir = fs::temp_directory_path() / ("ssal_harness_" + name);
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

// Small enough for a unit test, structured enough to learn something.
json small_config() {
  return {{"data", {{"synthetic", {{"train_size", 480}, {"test_size", 240}, {"input_dim", 16}}}}},
          {"model", {{"width", 32}, {"depth", 3}}},
          {"train", {{"epochs", 4}, {"batch_size", 32}}}};
}

std::vector<std::uint8_t> cifar_record(std::uint8_t label, std::uint8_t pixel) {
  std::vector<std::uint8_t> r(3073, pixel);
  r[0] = label;
  return r;
}

}  // namespace

// ---- synthetic ----

TEST(Synthetic, PlantedMappingIsBalanced) {
  SyntheticSpec spec;
  spec.seed = 3;
  const auto data = generate_synthetic(spec);
  EXPECT_EQ(data.planted.k, 4u);
  EXPECT_EQ(data.planted.group_sizes(), (std::vector<std::size_t>{4, 4, 4, 4}));
  EXPECT_EQ(data.train.size(), 2000u);
  EXPECT_EQ(data.test.size(), 1000u);
}

TEST(Synthetic, VanishingNoiseIsSeparableByNearestCentroid) {
  SyntheticSpec spec;
  spec.sample_spread = 1e-9;
  spec.seed = 5;
  const auto data = generate_synthetic(spec);
  const std::size_t d = spec.input_dim, c = spec.class_count;
  std::vector<double> centroid(c * d, 0.0);
  std::vector<std::size_t> count(c, 0);
  for (std::size_t n = 0; n < data.train.size(); ++n) {
    const auto y = static_cast<std::size_t>(data.train.labels[n]);
    ++count[y];
    for (std::size_t j = 0; j < d; ++j) centroid[y * d + j] += data.train.features[n * d + j];
  }
  for (std::size_t y = 0; y < c; ++y)
    for (std::size_t j = 0; j < d; ++j) centroid[y * d + j] /= count[y];
  std::size_t correct = 0;
  for (std::size_t n = 0; n < data.test.size(); ++n) {
    std::size_t best = 0;
    double best_dist = 1e300;
    for (std::size_t y = 0; y < c; ++y) {
      double dist = 0.0;
      for (std::size_t j = 0; j < d; ++j) {
        const double diff = data.test.features[n * d + j] - centroid[y * d + j];
        dist += diff * diff;
      }
      if (dist < best_dist) best_dist = dist, best = y;
    }
    correct += static_cast<int>(best) == data.test.labels[n];
  }
  EXPECT_EQ(correct, data.test.size());
}

TEST(Synthetic, FixedSeedWritesIdenticalFiles) {
  DataConfig cfg;
  const auto a = scratch_dir("gen_a"), b = scratch_dir("gen_b");
  write_dataset_dir(a.string(), prepare_data(cfg, 11));
  write_dataset_dir(b.string(), prepare_data(cfg, 11));
  for (const char* f : {"train.csv", "test.csv", "planted_mapping.txt"}) EXPECT_EQ(slurp(a / f), slurp(b / f)) << f;
  write_dataset_dir(b.string(), prepare_data(cfg, 12));
  EXPECT_NE(slurp(a / "train.csv"), slurp(b / "train.csv"));
}

TEST(Synthetic, DatasetDirRoundTrips) {
  DataConfig cfg;
  cfg.synthetic.train_size = 64;
  cfg.synthetic.test_size = 32;
  const auto dir = scratch_dir("roundtrip");
  const auto written = prepare_data(cfg, 2);
  write_dataset_dir(dir.string(), written);
  const auto read = read_dataset_dir(dir.string(), cfg.holdout_fraction, 2);
  EXPECT_EQ(read.train.features, written.train.features);
  EXPECT_EQ(read.test.labels, written.test.labels);
  EXPECT_EQ(read.fit.labels, written.fit.labels);
  ASSERT_TRUE(read.planted);
  EXPECT_EQ(read.planted->gamma, written.planted->gamma);
}

TEST(Synthetic, RejectsIndivisibleSuperclusters) {
  SyntheticSpec spec;
  spec.supercluster_count = 5;
  EXPECT_THROW(generate_synthetic(spec), std::invalid_argument);
}

// ---- CIFAR binary ----

TEST(Cifar, SingleRecordCarriesItsLabel) {
  CifarSpec spec;
  const auto d = decode_cifar(cifar_record(7, 255), spec, "mem");
  ASSERT_EQ(d.size(), 1u);
  EXPECT_EQ(d.labels[0], 7);
  EXPECT_EQ(d.sample_shape, (Shape{3, 32, 32}));
  EXPECT_DOUBLE_EQ(d.features[0], 1.0);
}

TEST(Cifar, RecordCountFollowsFileSize) {
  std::vector<std::uint8_t> bytes;
  for (int i = 0; i < 5; ++i) {
    const auto r = cifar_record(static_cast<std::uint8_t>(i), 0);
    bytes.insert(bytes.end(), r.begin(), r.end());
  }
  const auto d = decode_cifar(bytes, CifarSpec{}, "mem");
  EXPECT_EQ(d.size(), 5u);
  EXPECT_EQ(d.labels, (std::vector<int>{0, 1, 2, 3, 4}));
  for (double v : d.features) EXPECT_EQ(v, 0.0);
}

TEST(Cifar, ChannelPlanarLayoutIsPreserved) {
  auto r = cifar_record(1, 0);
  r[1 + 1024 + 33] = 51;  // green plane, row 1, column 1
  const auto d = decode_cifar(r, CifarSpec{}, "mem");
  EXPECT_DOUBLE_EQ(d.features[1024 + 33], 51.0 / 255.0);
}

TEST(Cifar, TruncatedFileReportsOffset) {
  auto bytes = cifar_record(1, 0);
  const auto second = cifar_record(2, 0);
  bytes.insert(bytes.end(), second.begin(), second.begin() + 100);
  try {
    decode_cifar(bytes, CifarSpec{}, "data_batch");
    FAIL() << "expected DatasetFormatError";
  } catch (const DatasetFormatError& e) {
    EXPECT_NE(std::string(e.what()).find("offset 3073"), std::string::npos) << e.what();
  }
}

TEST(Cifar, LabelOutOfRangeIsRejected) {
  EXPECT_THROW(decode_cifar(cifar_record(10, 0), CifarSpec{}, "mem"), DatasetFormatError);
}

TEST(Cifar, TwoByteLabelsSelectTheIndex) {
  CifarSpec spec;
  spec.label_bytes = 2;
  spec.label_index = 1;
  spec.class_count = 100;
  std::vector<std::uint8_t> r(3074, 0);
  r[0] = 3;   // coarse
  r[1] = 42;  // fine
  EXPECT_EQ(decode_cifar(r, spec, "mem").labels[0], 42);
}

TEST(Cifar, LoadsAndConcatenatesFiles) {
  const auto dir = scratch_dir("cifar");
  for (int f = 0; f < 2; ++f) {
    std::ofstream out(dir / ("b" + std::to_string(f) + ".bin"), std::ios::binary);
    for (int i = 0; i < 3; ++i) {
      const auto r = cifar_record(static_cast<std::uint8_t>(f * 3 + i), 128);
      out.write(reinterpret_cast<const char*>(r.data()), static_cast<std::streamsize>(r.size()));
    }
  }
  CifarSpec spec;
  const auto d = load_cifar_binary({(dir / "b0.bin").string(), (dir / "b1.bin").string()}, spec);
  EXPECT_EQ(d.labels, (std::vector<int>{0, 1, 2, 3, 4, 5}));
  spec.limit = 4;
  EXPECT_EQ(load_cifar_binary({(dir / "b0.bin").string(), (dir / "b1.bin").string()}, spec).size(), 4u);
  EXPECT_THROW(load_cifar_binary({(dir / "missing.bin").string()}, CifarSpec{}), DatasetFormatError);
}

// ---- config ----

TEST(Config, DefaultsParse) {
  const auto c = parse_config(json::object());
  EXPECT_EQ(c.data.synthetic.class_count, 16u);
  EXPECT_EQ(c.data.synthetic.supercluster_count, 4u);
  EXPECT_EQ(c.train.epochs, 20);
  EXPECT_EQ(c.train.schedule.peak_epoch, 8);
  ASSERT_EQ(c.branches.size(), 1u);
  EXPECT_EQ(c.branches[0].k, 4u);
  EXPECT_EQ(c.suite.variants.size(), 9u);
}

TEST(Config, UnknownKeysAreRejected) {
  EXPECT_THROW(parse_config({{"trian", json::object()}}), ConfigError);
  EXPECT_THROW(parse_config({{"train", {{"epoch", 3}}}}), ConfigError);
  EXPECT_THROW(parse_config({{"branches", {{{"attach", "b1"}, {"kk", 2}}}}}), ConfigError);
}

TEST(Config, InvalidValuesAreRejected) {
  EXPECT_THROW(parse_config({{"data", {{"holdout_fraction", 1.0}}}}), ConfigError);
  EXPECT_THROW(parse_config({{"predict", {{"eta", 0.0}}}}), ConfigError);
  EXPECT_THROW(parse_config({{"sweep", {{"axis", "eta"}, {"values", {0.5, 2.0}}}}}), ConfigError);
  EXPECT_THROW(parse_config({{"sweep", {{"axis", "group_count"}, {"values", {1}}}}}), ConfigError);
  EXPECT_THROW(parse_config({{"sweep", {{"seeds", json::array()}}}}), ConfigError);
  EXPECT_THROW(parse_config({{"suite", {{"variants", {"baseline", "huge"}}}}}), ConfigError);
  EXPECT_THROW(parse_config({{"train", {{"epochs", "many"}}}}), ConfigError);
  EXPECT_THROW(parse_config({{"data", {{"synthetic", {{"class_spread", -1.0}}}}}}), ConfigError);
}

TEST(Config, OverridesParseJsonOrString) {
  json c = default_config();
  apply_override(c, "train.epochs=7");
  apply_override(c, "branches.0.attach=b2");
  apply_override(c, "sweep.values=[2,4]");
  apply_override(c, "run_id=my run");
  const auto parsed = parse_config(c);
  EXPECT_EQ(parsed.train.epochs, 7);
  EXPECT_EQ(parsed.branches[0].attach, "b2");
  EXPECT_EQ(parsed.sweep.values.size(), 2u);
  EXPECT_EQ(parsed.run_id, "my run");
  EXPECT_THROW(apply_override(c, "train.epochz=7"), ConfigError);
  EXPECT_THROW(apply_override(c, "branches.3.k=2"), ConfigError);
  EXPECT_THROW(apply_override(c, "noequals"), ConfigError);
}

TEST(Config, ManifestReplaysItsConfig) {
  const auto dir = scratch_dir("manifest");
  json resolved = default_config();
  resolved["seed"] = 99;
  {
    std::ofstream out(dir / "manifest.json");
    out << json{{"manifest_version", 1}, {"command", "sweep"}, {"config", resolved}}.dump();
  }
  const auto loaded = load_config_json(dir / "manifest.json", {});
  EXPECT_EQ(loaded, resolved);
  EXPECT_EQ(parse_config(load_config_json(dir / "manifest.json", {"seed=5"})).seed, 5u);
}

// ---- sweep ----

TEST(Sweep, GroupCountRowsAndAggregates) {
  json j = small_config();
  j["data"]["synthetic"]["train_size"] = 1200;
  j["train"]["epochs"] = 12;
  j["sweep"] = {{"axis", "group_count"}, {"values", {2, 4, 8}}, {"seeds", {1, 2}}};
  const auto r = run_sweep(parse_config(j));
  ASSERT_EQ(r.rows.size(), 6u);
  for (const auto& row : r.rows) {
    ASSERT_TRUE(row.ok) << row.error;
    EXPECT_EQ(row.branch_count, 1u);
    EXPECT_EQ(row.acc_groups.size(), 1u);
    EXPECT_GE(row.acc_joint, row.acc_main - 0.01) << "value " << row.value << " seed " << row.seed;
  }
  const auto csv = r.to_csv();
  EXPECT_EQ(csv.substr(0, csv.find('\n')),
            "axis,value,seed,status,branch_count,parameters,acc_main,acc_joint,acc_groups,error");
  std::size_t lines = 0, means = 0;
  for (std::size_t p = 0; (p = csv.find('\n', p)) != std::string::npos; ++p) ++lines;
  for (std::size_t p = 0; (p = csv.find(",mean,", p)) != std::string::npos; ++p) ++means;
  EXPECT_EQ(lines, 1u + 6u + 3u * 2u);
  EXPECT_EQ(means, 3u);
}

TEST(Sweep, BranchCountIncreasesParameters) {
  json j = small_config();
  j["train"]["epochs"] = 1;
  j["sweep"] = {{"axis", "branch_count"}, {"values", {0, 1, 2}}, {"seeds", {1}}};
  const auto r = run_sweep(parse_config(j));
  ASSERT_EQ(r.rows.size(), 3u);
  EXPECT_EQ(r.rows[0].branch_count, 0u);
  EXPECT_EQ(r.rows[2].branch_count, 2u);
  EXPECT_LT(r.rows[0].parameters, r.rows[1].parameters);
  EXPECT_LT(r.rows[1].parameters, r.rows[2].parameters);
}

TEST(Sweep, RerunsAndParallelRunsAreIdentical) {
  json j = small_config();
  j["train"]["epochs"] = 2;
  j["sweep"] = {{"axis", "eta"}, {"values", {0.5, 1.0}}, {"seeds", {1, 2, 3}}};
  const auto first = run_sweep(parse_config(j)).to_csv();
  EXPECT_EQ(first, run_sweep(parse_config(j)).to_csv());
  j["sweep"]["max_parallel"] = 3;
  EXPECT_EQ(first, run_sweep(parse_config(j)).to_csv());
}

TEST(Sweep, ValueWithoutAnySuccessIsFatal) {
  json j = small_config();
  j["train"]["epochs"] = 1;
  j["sweep"] = {{"axis", "attachment_position"}, {"values", {"b1", "nowhere"}}, {"seeds", {1}}};
  EXPECT_THROW(run_sweep(parse_config(j)), std::runtime_error);
}

TEST(Sweep, FailedRowsStayInTheTable) {
  SweepResult r{SweepAxis::group_count, {}};
  r.rows.push_back({"4", 1, true, 1, 100, 0.5, 0.6, {0.9}, ""});
  r.rows.push_back({"4", 2, false, 0, 0, 0, 0, {}, "diverged, at batch 3"});
  const auto csv = r.to_csv();
  EXPECT_NE(csv.find("group_count,4,2,failed,,,,,,diverged  at batch 3\n"), std::string::npos) << csv;
  EXPECT_NE(csv.find("group_count,4,mean,ok,1,100,0.500000,0.600000,0.900000,\n"), std::string::npos) << csv;
}

// ---- baseline suite and convergence ----

TEST(Suite, BaselineRowAndLiveParameterCounts) {
  json j = small_config();
  j["train"]["epochs"] = 2;
  j["suite"] = {{"seeds", {1, 2, 3}}, {"concat_fc_hidden", 64}};
  const auto c = parse_config(j);
  const auto r = run_baseline_suite(c);
  ASSERT_EQ(r.variants.size(), 9u);
  for (const auto& v : r.variants) {
    EXPECT_EQ(v.successes(), 3u) << v.name << ": " << v.runs[0].error;
  }
  const auto* base = r.find("baseline");
  ASSERT_NE(base, nullptr);
  EXPECT_GT(base->stddev(), 0.0);

  const auto data = prepare_data(c.data, 1);
  const auto spec = baseline_spec(c.model, data.train);
  EXPECT_EQ(base->parameters(), model::build_network(spec, 0).parameter_counts().total());
  EXPECT_GT(r.find("wide")->parameters(), base->parameters());
  EXPECT_GT(r.find("deep")->parameters(), base->parameters());
  EXPECT_GT(r.find("ssal_x3")->parameters(), r.find("ssal_x1")->parameters());

  const auto csv = r.to_csv();
  EXPECT_NE(csv.find("\nbaseline,3,"), std::string::npos);
  const auto line = csv.substr(csv.find("\nbaseline,") + 1);
  EXPECT_NE(line.substr(0, line.find('\n')).find(",0.000000,0/3,"), std::string::npos) << line;
}

TEST(Convergence, VacuousAndUnreachableThresholds) {
  json j = small_config();
  j["train"]["epochs"] = 2;
  j["suite"] = {{"seeds", {1, 2}}, {"variants", {"baseline", "ssal_x1"}}};
  const auto r = run_baseline_suite(parse_config(j));
  const auto zero = convergence_report(*r.find("baseline"), *r.find("ssal_x1"), 0.0);
  ASSERT_EQ(zero.rows.size(), 4u);
  for (const auto& row : zero.rows) EXPECT_EQ(row.epoch, std::optional<int>(0));
  EXPECT_EQ(zero.ssal_wins, 0u);

  const auto never = convergence_report(*r.find("baseline"), *r.find("ssal_x1"), 1.01);
  for (const auto& row : never.rows) EXPECT_FALSE(row.epoch);
  EXPECT_EQ(never.ssal_wins, 0u);
  EXPECT_NE(never.to_csv().find(",never,"), std::string::npos);

  const auto dflt = convergence_report(*r.find("baseline"), *r.find("ssal_x1"), std::nullopt);
  EXPECT_DOUBLE_EQ(dflt.threshold, r.find("baseline")->mean());
}
