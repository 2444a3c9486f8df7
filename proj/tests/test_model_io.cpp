#include <cstdio>
#include <filesystem>
#include <fstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "doctest.h"
#include "fastat/model_io.hpp"
#include "fastat/trainers.hpp"
#include "test_support.hpp"

namespace fs = std::filesystem;
using fastat::Model;
using fastat::Tensor;

namespace {

std::string tmp_path(const std::string& name) {
  const fs::path dir = fs::temp_directory_path() / "fastat_io_tests";
  fs::create_directories(dir);
  return (dir / name).string();
}

std::vector<char> slurp(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  REQUIRE(bool(is));
  return std::vector<char>(std::istreambuf_iterator<char>(is), std::istreambuf_iterator<char>());
}

void spit(const std::string& path, const std::vector<char>& bytes) {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  os.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
}

}  // namespace

TEST_CASE("model io: save/load round trips parameters bitwise") {
  const auto spec = testsup::image_spec(1, 8, 8, 3, 2, 4, 5);
  const auto m = fastat::init_model<float>(spec, 41);
  const std::string path = tmp_path("round.fatb");
  fastat::save_model(path, m);
  const auto back = fastat::load_model<float>(path);
  REQUIRE(back.params.size() == m.params.size());
  CHECK(back.spec.arch == m.spec.arch);
  CHECK(back.spec.num_classes == m.spec.num_classes);
  CHECK(back.spec.conv_fc == m.spec.conv_fc);
  for (size_t i = 0; i < m.params.size(); ++i) {
    CHECK(back.names[i] == m.names[i]);
    REQUIRE(back.params[i].numel() == m.params[i].numel());
    for (int64_t j = 0; j < m.params[i].numel(); ++j) {
      CHECK(back.params[i][j] == m.params[i][j]);
    }
  }
}

TEST_CASE("model io: mlp spec round trips hidden sizes") {
  const auto spec = testsup::flat_spec(17, {9, 4}, 5);
  const auto m = fastat::init_model<float>(spec, 4);
  const std::string path = tmp_path("mlp.fatb");
  fastat::save_model(path, m);
  const auto back = fastat::load_model<float>(path);
  CHECK(back.spec.mlp_hidden == std::vector<int>{9, 4});
  CHECK(back.spec.width == 17);
}

TEST_CASE("model io: missing file") {
  CHECK_THROWS_WITH_AS(fastat::load_model<float>(tmp_path("nope.fatb")),
                       doctest::Contains("open"), std::runtime_error);
}

TEST_CASE("model io: corrupted magic is rejected") {
  const std::string path = tmp_path("magic.fatb");
  auto bytes = slurp([] {
    const auto spec = testsup::flat_spec(3, {}, 2);
    const auto m = fastat::init_model<float>(spec, 1);
    const std::string p = tmp_path("magic_src.fatb");
    fastat::save_model(p, m);
    return p;
  }());
  bytes[0] = 'X';
  spit(path, bytes);
  CHECK_THROWS_WITH_AS(fastat::load_model<float>(path), doctest::Contains("magic"),
                       std::runtime_error);
}

TEST_CASE("model io: unsupported version is rejected") {
  const auto spec = testsup::flat_spec(3, {}, 2);
  const auto m = fastat::init_model<float>(spec, 1);
  const std::string path = tmp_path("ver.fatb");
  fastat::save_model(path, m);
  auto bytes = slurp(path);
  bytes[4] = 99;  // little-endian u32 version right after the magic
  spit(path, bytes);
  CHECK_THROWS_WITH_AS(fastat::load_model<float>(path), doctest::Contains("version"),
                       std::runtime_error);
}

TEST_CASE("model io: scalar width mismatch is rejected") {
  const auto spec = testsup::flat_spec(3, {}, 2);
  const auto m = fastat::init_model<double>(spec, 1);
  const std::string path = tmp_path("dtype.fatb");
  fastat::save_model(path, m);
  CHECK_THROWS_WITH_AS(fastat::load_model<float>(path), doctest::Contains("dtype"),
                       std::runtime_error);
  CHECK_NOTHROW(fastat::load_model<double>(path));
}

TEST_CASE("model io: truncation and trailing bytes are distinct errors") {
  const auto spec = testsup::flat_spec(3, {}, 2);
  const auto m = fastat::init_model<float>(spec, 1);
  const std::string path = tmp_path("trunc.fatb");
  fastat::save_model(path, m);
  const auto bytes = slurp(path);

  auto cut = bytes;
  cut.resize(bytes.size() - 5);
  spit(path, cut);
  CHECK_THROWS_WITH_AS(fastat::load_model<float>(path), doctest::Contains("truncated"),
                       std::runtime_error);

  auto padded = bytes;
  padded.push_back('\0');
  spit(path, padded);
  CHECK_THROWS_WITH_AS(fastat::load_model<float>(path), doctest::Contains("trailing"),
                       std::runtime_error);
}

TEST_CASE("model io: train state round trips epoch, velocity and both store kinds") {
  const auto spec = testsup::flat_spec(4, {3}, 2);
  fastat::TrainConfig cfg;
  cfg.method = fastat::Method::FGSM_PCO;
  cfg.epochs = 3;
  cfg.seed = 17;

  fastat::TrainState st = fastat::init_train_state(spec, cfg, 5);
  st.epoch = 2;
  fastat::Rng rng(3);
  for (auto& v : st.velocity) v = testsup::rand_tensor<float>(v.shape, rng, -1, 1);
  st.store.set_adv(0, testsup::rand_tensor<float>({1, 4}, rng, 0, 1));
  st.store.set_adv(3, testsup::rand_tensor<float>({1, 4}, rng, 0, 1));

  const std::string path = tmp_path("state.fatb");
  fastat::save_train_state(path, st);
  const auto back = fastat::load_train_state(path);
  CHECK(back.epoch == 2);
  CHECK(back.seed == 17);
  CHECK(back.store.kind() == fastat::PerturbationStore::Kind::pco);
  CHECK(back.store.size() == 5);
  CHECK(back.store.has(0));
  CHECK(!back.store.has(1));
  CHECK(back.store.has(3));
  for (int64_t j = 0; j < 4; ++j) CHECK(back.store.adv(3)[j] == st.store.adv(3)[j]);
  for (size_t i = 0; i < st.velocity.size(); ++i) {
    for (int64_t j = 0; j < st.velocity[i].numel(); ++j) {
      CHECK(back.velocity[i][j] == st.velocity[i][j]);
    }
  }

  // mep kind: two tensors per example
  fastat::TrainConfig mep = cfg;
  mep.method = fastat::Method::FGSM_MEP;
  fastat::TrainState st2 = fastat::init_train_state(spec, mep, 3);
  st2.store.set_mep(1, testsup::rand_tensor<float>({1, 4}, rng, -0.1, 0.1),
                    testsup::rand_tensor<float>({1, 4}, rng, -1, 1));
  const std::string path2 = tmp_path("state2.fatb");
  fastat::save_train_state(path2, st2);
  const auto back2 = fastat::load_train_state(path2);
  CHECK(back2.store.kind() == fastat::PerturbationStore::Kind::mep);
  CHECK(back2.store.has(1));
  CHECK(!back2.store.has(0));
  for (int64_t j = 0; j < 4; ++j) {
    CHECK(back2.store.eta(1)[j] == st2.store.eta(1)[j]);
    CHECK(back2.store.momentum(1)[j] == st2.store.momentum(1)[j]);
  }
}
