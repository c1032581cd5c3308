#include <catch2/catch_amalgamated.hpp>

#include <filesystem>
#include <fstream>

#include "rnr/checkpoint.hpp"
#include "rnr/data.hpp"
#include "rnr/train.hpp"

namespace fs = std::filesystem;
using rnr::TrainConfig;

namespace {

std::string temp_dir(const std::string& tag) {
  const fs::path p = fs::temp_directory_path() / ("rnr_train_" + tag);
  fs::remove_all(p);
  fs::create_directories(p);
  return p.string();
}

std::vector<char> read_bytes(const fs::path& p) {
  std::ifstream f(p, std::ios::binary);
  REQUIRE(f);
  return std::vector<char>(std::istreambuf_iterator<char>(f), std::istreambuf_iterator<char>());
}

TrainConfig small_run_config() {
  TrainConfig cfg;
  cfg.epochs = 2;
  cfg.batch_size = 4;
  cfg.seed = 7;
  return cfg;
}

const rnr::DataSet& small_dataset() {
  static rnr::DataSet ds = [] {
    const std::string d = temp_dir("data");
    rnr::generate_dataset(8, 5, "train", d);
    return rnr::load_dataset(d, "train", 12);
  }();
  return ds;
}

}  // namespace

TEST_CASE("identical seeds give identical loss traces and final parameters") {
  const auto& ds = small_dataset();
  auto run = [&] {
    auto model = rnr::make_model<float>(small_run_config(), ds.vocab.size());
    return std::make_pair(rnr::train(model, ds.samples, ds.samples, nullptr, 2),
                          model.params.clone());
  };
  auto [r1, p1] = run();
  auto [r2, p2] = run();
  REQUIRE(r1.loss_trace.size() == r2.loss_trace.size());
  for (std::size_t i = 0; i < r1.loss_trace.size(); ++i) {
    CHECK(r1.loss_trace[i].first == r2.loss_trace[i].first);
    CHECK(r1.loss_trace[i].second == r2.loss_trace[i].second);  // bit-exact
  }
  for (const auto& [name, t] : p1.all()) {
    const auto& u = p2.at(name);
    for (std::size_t i = 0; i < t.size(); ++i) REQUIRE(t.data()[i] == u.data()[i]);
  }
}

TEST_CASE("thread count does not change the result") {
  const auto& ds = small_dataset();
  auto run = [&](int threads) {
    auto model = rnr::make_model<float>(small_run_config(), ds.vocab.size());
    rnr::train(model, ds.samples, {}, nullptr, threads);
    return model.params.clone();
  };
  auto p1 = run(1);
  auto p4 = run(4);
  for (const auto& [name, t] : p1.all()) {
    const auto& u = p4.at(name);
    for (std::size_t i = 0; i < t.size(); ++i) REQUIRE(t.data()[i] == u.data()[i]);
  }
}

TEST_CASE("best validation PGM is at least the epoch-1 value") {
  const auto& ds = small_dataset();
  TrainConfig cfg = small_run_config();
  cfg.epochs = 3;
  auto model = rnr::make_model<float>(cfg, ds.vocab.size());
  auto result = rnr::train(model, ds.samples, ds.samples, nullptr, 2);
  REQUIRE(result.epochs.size() == 3);
  CHECK(result.best_val_pgm >= result.epochs.front().val_pgm);
  CHECK(result.best_epoch >= 0);
}

TEST_CASE("training aborts with a diagnostic when the loss blows up") {
  const auto& ds = small_dataset();
  TrainConfig cfg = small_run_config();
  cfg.lr0 = 1e30;  // guaranteed overflow
  cfg.clip_norm = 0;
  cfg.epochs = 4;
  auto model = rnr::make_model<float>(cfg, ds.vocab.size());
  try {
    rnr::train(model, ds.samples, {}, nullptr, 2);
    FAIL("expected TrainingError");
  } catch (const rnr::TrainingError& e) {
    CHECK(std::string(e.what()).find("step") != std::string::npos);
  }
}

TEST_CASE("loss trace file format") {
  const std::string d = temp_dir("trace");
  rnr::write_loss_trace(d + "/trace.csv", {{0, 0.75f}, {1, 0.5f}});
  std::ifstream f(d + "/trace.csv");
  std::string line;
  std::getline(f, line);
  CHECK(line == "step,loss");
  std::getline(f, line);
  CHECK(line == "0,0.75");
  fs::remove_all(d);
}

TEST_CASE("checkpoint round trip is bit-exact and stable") {
  const auto& ds = small_dataset();
  TrainConfig cfg = small_run_config();
  auto model = rnr::make_model<float>(cfg, ds.vocab.size());
  const std::string d = temp_dir("ckpt");

  const std::string p1 = d + "/a.rnr";
  const std::string p2 = d + "/b.rnr";
  rnr::save_checkpoint(model.params, cfg, p1);
  auto loaded = rnr::load_model_checkpoint(p1);
  rnr::save_checkpoint(loaded.params, loaded.cfg, p2);
  CHECK(read_bytes(p1) == read_bytes(p2));

  // predictions before save and after load are bit-identical
  const auto& s = ds.samples.front();
  auto a = model.predict(s.image, s.token_ids);
  auto b = loaded.predict(s.image, s.token_ids);
  for (std::size_t i = 0; i < a.probabilities.size(); ++i)
    REQUIRE(a.probabilities.data()[i] == b.probabilities.data()[i]);
  fs::remove_all(d);
}

TEST_CASE("checkpoint fingerprint mismatch raises a version error") {
  const auto& ds = small_dataset();
  TrainConfig cfg = small_run_config();
  auto model = rnr::make_model<float>(cfg, ds.vocab.size());
  const std::string d = temp_dir("fp");
  rnr::save_checkpoint(model.params, cfg, d + "/m.rnr");

  TrainConfig other = cfg;
  other.channels = 64;  // mismatched C
  CHECK_THROWS_AS(rnr::load_model_checkpoint(d + "/m.rnr", &other), rnr::VersionError);
  // the matching config loads fine
  CHECK_NOTHROW(rnr::load_model_checkpoint(d + "/m.rnr", &cfg));
  fs::remove_all(d);
}

TEST_CASE("truncated checkpoint raises a format error") {
  const auto& ds = small_dataset();
  TrainConfig cfg = small_run_config();
  auto model = rnr::make_model<float>(cfg, ds.vocab.size());
  const std::string d = temp_dir("trunc");
  rnr::save_checkpoint(model.params, cfg, d + "/m.rnr");
  auto bytes = read_bytes(d + "/m.rnr");
  {
    std::ofstream f(d + "/cut.rnr", std::ios::binary);
    f.write(bytes.data(), static_cast<std::streamsize>(bytes.size() / 2));
  }
  CHECK_THROWS_AS(rnr::read_checkpoint(d + "/cut.rnr"), rnr::FormatError);
  {
    std::ofstream f(d + "/bad.rnr", std::ios::binary);
    f << "not a checkpoint at all";
  }
  CHECK_THROWS_AS(rnr::read_checkpoint(d + "/bad.rnr"), rnr::FormatError);
  fs::remove_all(d);
}

TEST_CASE("config presets and round trip") {
  TrainConfig desk = TrainConfig::desk();
  CHECK(desk.image_size == 64);
  CHECK(desk.channels == 32);
  CHECK(desk.max_tokens == 12);
  CHECK(desk.batch_size == 16);
  CHECK(desk.epochs == 30);
  CHECK(desk.lr0 == 1e-3);

  TrainConfig parsed = TrainConfig::parse_text(desk.canonical_text());
  CHECK(parsed.canonical_text() == desk.canonical_text());
  CHECK(parsed.fingerprint() == desk.fingerprint());

  TrainConfig full = TrainConfig::full_scale();
  CHECK(full.fingerprint() != desk.fingerprint());

  CHECK_THROWS_AS(TrainConfig::parse_text("model = diffusion"), rnr::ConfigError);
  TrainConfig bad = desk;
  bad.channels = 30;  // not divisible by 4 heads
  CHECK_THROWS_AS(bad.validate(), rnr::ConfigError);
}
