#include <doctest.h>

#include "lvq/phantom.hpp"
#include "lvq/pipeline.hpp"

using namespace lvq;

TEST_CASE("experiment files parse defaults and config sections") {
  std::string text = R"(
# training space
defaults {
  epochs = 150
  lr = 1e-4
  seed = 17
  arch = small
}

config dn-2d-sr {
  sr = on
  targets = regression
}

config dn-3d {
  dim = 3d
  n_slices = 7
  init = random
}
)";
  auto ef = pipeline::ExperimentFile::parse(text);
  CHECK(ef.defaults.at("epochs") == "150");
  REQUIRE(ef.configs.size() == 2);
  CHECK(ef.configs[0].first == "dn-2d-sr");

  train::TrainParams params = pipeline::params_from_defaults(ef.defaults);
  CHECK(params.epochs == 150);
  CHECK(params.lr == doctest::Approx(1e-4));
  CHECK(params.lambda_p == doctest::Approx(0.05));
  CHECK(params.lambda_s == doctest::Approx(0.1));
  CHECK(params.adam_beta1 == doctest::Approx(0.9));

  train::Configuration c0 =
      pipeline::config_from_section(ef.configs[0].first, ef.configs[0].second, ef.defaults);
  CHECK(c0.arch == "small");  // inherited from defaults
  CHECK(c0.sr);
  CHECK_FALSE(c0.is_3d);
  CHECK(c0.seed == 17);

  train::Configuration c1 =
      pipeline::config_from_section(ef.configs[1].first, ef.configs[1].second, ef.defaults);
  CHECK(c1.is_3d);
  CHECK(c1.n_slices == 7);
  CHECK(c1.init == "random");
}

TEST_CASE("manifests are deterministic and gate reruns") {
  pipeline::RunManifest m;
  m.command = "phantom-gen";
  m.seed = 7;
  m.options = {{"patients", "3"}};
  m.outputs = {"somewhere"};
  std::string once = m.serialize();
  CHECK(once == m.serialize());
  CHECK(once.find("wall") == std::string::npos);  // no volatile content

  fs::path dir = fs::temp_directory_path() / "lvq_test_manifest";
  fs::remove_all(dir);
  CHECK_FALSE(pipeline::manifest_matches(m, dir));
  pipeline::write_manifest(m, dir, 1.25);
  CHECK(pipeline::manifest_matches(m, dir));
  CHECK(fs::exists(dir / "timing.log"));
  m.seed = 8;
  CHECK_FALSE(pipeline::manifest_matches(m, dir));
  fs::remove_all(dir);
}

TEST_CASE("phantom-gen and preprocess commands are idempotent end to end") {
  fs::path raw = fs::temp_directory_path() / "lvq_test_cmd_raw";
  fs::path canon = fs::temp_directory_path() / "lvq_test_cmd_canon";
  fs::remove_all(raw);
  fs::remove_all(canon);

  CHECK(pipeline::cmd_phantom_gen(3, 7, raw) == 0);
  CHECK(fs::exists(raw / "p002" / "indices.json"));
  CHECK(fs::exists(raw / "manifest.txt"));
  auto manifest_before = read_text_file(raw / "manifest.txt");
  CHECK(pipeline::cmd_phantom_gen(3, 7, raw) == 0);  // no-op rerun
  CHECK(read_text_file(raw / "manifest.txt") == manifest_before);

  CHECK(pipeline::cmd_preprocess(raw, canon) == 0);
  Study s = data::read_study(canon / "p001");
  CHECK(s.height() == 300);
  CHECK(s.spacing == 1.0);
  auto manifest = phantom::read_manifest(canon);
  CHECK(manifest.size() == 3);

  SUBCASE("loaders reconstruct studies and ground truth") {
    auto studies = pipeline::load_studies(canon, 4);
    CHECK(studies.size() == 3);
    CHECK(studies.at("p000").height() == 75);
    auto gt = evaluate::ground_truth_of(studies);
    CHECK(gt.targets.at("p000").size() == 20);
  }

  fs::remove_all(raw);
  fs::remove_all(canon);
}

TEST_CASE("failed commands quarantine their partial outputs") {
  fs::path raw = fs::temp_directory_path() / "lvq_test_quarantine_raw";
  fs::path canon = fs::temp_directory_path() / "lvq_test_quarantine_out";
  fs::remove_all(raw);
  fs::remove_all(canon);
  fs::remove_all(canon.string() + ".quarantined");

  // corrupt input: manifest names a patient directory that does not exist
  fs::create_directories(raw);
  write_text_file(raw / "manifest.tsv", "id\tseed\tspacing\tresolution\np000\t1\t1.0\t256\n");
  CHECK_THROWS(pipeline::cmd_preprocess(raw, canon));
  CHECK_FALSE(fs::exists(canon));
  CHECK(fs::exists(canon.string() + ".quarantined"));

  fs::remove_all(raw);
  fs::remove_all(canon.string() + ".quarantined");
}

TEST_CASE("desk-scale profile shrinks the training surface only") {
  train::TrainParams p;
  pipeline::apply_desk_scale(p);
  CHECK(p.epochs <= 16);
  CHECK(p.crop_size == 64);
  CHECK(p.view_downsample == 4);
  // loss weights, batching and the epoch definition are profile-independent
  CHECK(p.lambda_p == doctest::Approx(0.05));
  CHECK(p.lambda_s == doctest::Approx(0.1));
  CHECK(p.batch_size == 8);
  CHECK(p.crops_per_patient == 10);
}
