#include "test_common.hpp"

#include <filesystem>
#include <fstream>
#include <string>

#include <json.hpp>

#include "mvd/config.hpp"
#include "mvd/hash.hpp"
#include "mvd/rng.hpp"

using namespace mvd;
namespace fs = std::filesystem;
using nlohmann::json;

TEST_SUITE_BEGIN("config");

namespace {

fs::path scratch_dir(const std::string& tag) {
  const fs::path dir = fs::temp_directory_path() / ("mvd_config_" + tag);
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

// Message-bearing throw check: the strict parser must name the offending key.
template <typename Fn>
std::string capture_error(Fn&& fn) {
  try {
    fn();
  } catch (const std::invalid_argument& e) {
    return e.what();
  }
  return {};
}

}  // namespace

TEST_CASE("empty document yields defaults and a stable round trip") {
  const auto c = experiment_from_json(json::object());
  CHECK(c.schema_version == 1);
  CHECK(c.seed == 0);
  CHECK(c.out_root == fs::path("runs"));
  CHECK(c.schedule.T == 1000);
  CHECK(c.schedule.beta_min == 1e-4);
  CHECK(c.schedule.beta_max == 2e-2);
  CHECK(c.dataset.n_objects == DatasetParams{}.n_objects);
  CHECK(c.dataset.resolution == 64);
  CHECK(c.stage1.stage == TrainConfig::Stage::kStage1);
  CHECK(c.stage2.stage == TrainConfig::Stage::kStage2);
  CHECK(c.stage1.steps == TrainConfig::stage1_defaults().steps);
  CHECK(c.stage2.branch_p_single == TrainConfig::stage2_defaults().branch_p_single);
  CHECK(c.distill.guidance_scale == DistillConfig{}.guidance_scale);
  CHECK(c.sampler.steps == SamplerOptions{}.steps);
  CHECK(c.oracle.resolution == OracleEvalConfig{}.resolution);
  CHECK(c.ablation.train_steps == AblationParams{}.train_steps);
  CHECK_NOTHROW(c.validate());

  // The resolved document is a fixpoint of the parser.
  const json j1 = c.to_json();
  const auto c2 = experiment_from_json(j1);
  CHECK(c2.to_json() == j1);
}

TEST_CASE("resolved document serializes every section") {
  const auto c = experiment_from_json(json::object());
  const json j = c.to_json();
  for (const char* key : {"schema_version", "seed", "out_root", "dataset", "schedule", "codec",
                          "denoiser", "stage1", "stage2", "distill", "sampler", "oracle",
                          "ablation"}) {
    INFO("missing key " << key);
    CHECK(j.contains(key));
  }
  // Evaluation hooks and checkpoint-derived geometry stay out of the file
  // surface.
  CHECK_FALSE(j["distill"].contains("fixed_poses"));
  CHECK_FALSE(j["distill"].contains("deterministic_shading"));
  CHECK_FALSE(j["sampler"].contains("c_lat"));
  CHECK_FALSE(j["sampler"].contains("latent_hw"));
  CHECK_FALSE(j["sampler"].contains("pool_factor"));
  CHECK(j["stage1"]["stage"] == "stage1");
  CHECK(j["stage2"]["stage"] == "stage2");
}

TEST_CASE("omitted section seeds derive from the global seed") {
  const auto c = experiment_from_json(json{{"seed", 42}});
  CHECK(c.dataset.seed == derive_seed(42, "dataset"));
  CHECK(c.stage1.seed == derive_seed(42, "stage1"));
  CHECK(c.stage2.seed == derive_seed(42, "stage2"));
  CHECK(c.distill.seed == derive_seed(42, "distill"));
  CHECK(c.oracle.seed == derive_seed(42, "oracle"));
  // Streams are distinct per section.
  CHECK(c.stage1.seed != c.stage2.seed);
  CHECK(c.dataset.seed != c.distill.seed);
  // The frozen-encoder seed is a protocol constant, not a derived stream.
  CHECK(c.codec.embed_seed == CodecConfig{}.embed_seed);

  // An explicit section seed wins over derivation.
  const auto c2 = experiment_from_json(json{{"seed", 42}, {"distill", {{"seed", 7}}}});
  CHECK(c2.distill.seed == 7);
  CHECK(c2.stage1.seed == derive_seed(42, "stage1"));
}

TEST_CASE("unknown keys are rejected by name") {
  const std::string top = capture_error([] {
    experiment_from_json(json{{"bogus", 1}});
  });
  CHECK(top.find("bogus") != std::string::npos);

  const std::string nested = capture_error([] {
    experiment_from_json(json{{"distill", {{"step", 5}}}});
  });
  CHECK(nested.find("distill.step") != std::string::npos);

  // The stage is owned by the section name; an explicit key may only agree.
  const std::string train = capture_error([] {
    experiment_from_json(json{{"stage1", {{"stage", "stage2"}}}});
  });
  CHECK(train.find("stage1.stage must be 'stage1'") != std::string::npos);
  CHECK_NOTHROW(experiment_from_json(json{{"stage2", {{"stage", "stage2"}}}}));

  const std::string sampler_geo = capture_error([] {
    experiment_from_json(json{{"sampler", {{"pool_factor", 2}}}});
  });
  CHECK(sampler_geo.find("sampler.pool_factor") != std::string::npos);
}

TEST_CASE("type mismatches are rejected by name") {
  const std::string sched = capture_error([] {
    experiment_from_json(json{{"schedule", {{"T", "many"}}}});
  });
  CHECK(sched.find("schedule.T") != std::string::npos);
  CHECK(sched.find("integer") != std::string::npos);

  const std::string det = capture_error([] {
    experiment_from_json(json{{"sampler", {{"deterministic", 1}}}});
  });
  CHECK(det.find("sampler.deterministic") != std::string::npos);

  const std::string lr = capture_error([] {
    experiment_from_json(json{{"stage1", {{"lr_peak", "fast"}}}});
  });
  CHECK(lr.find("stage1.lr_peak") != std::string::npos);

  // A whole section of the wrong shape is also an error.
  CHECK_THROWS_AS(experiment_from_json(json{{"dataset", 5}}), std::invalid_argument);
  CHECK_THROWS_AS(experiment_from_json(json::array({1, 2})), std::invalid_argument);
  // Doubles are fine where a number is expected, but not where an integer is.
  CHECK_NOTHROW(experiment_from_json(json{{"schedule", {{"beta_min", 1e-4}}}}));
  CHECK_THROWS_AS(experiment_from_json(json{{"schedule", {{"T", 10.5}}}}),
                  std::invalid_argument);
}

TEST_CASE("cross-section consistency is enforced") {
  // Image resolution must match the latent grid times the codec pool factor.
  CHECK_THROWS_AS(experiment_from_json(json{{"dataset", {{"resolution", 32}}}}),
                  std::invalid_argument);
  // ... and is accepted when the latent grid shrinks to match.
  const json consistent = {{"dataset", {{"resolution", 32}}},
                           {"denoiser", {{"latent_hw", 8}, {"attn_max_hw", 8}}}};
  CHECK_NOTHROW(experiment_from_json(consistent));

  CHECK_THROWS_AS(experiment_from_json(json{{"codec", {{"c_lat", 4}}}}),
                  std::invalid_argument);
  CHECK_THROWS_AS(experiment_from_json(json{{"codec", {{"d_emb", 8}}}}),
                  std::invalid_argument);
  const json bad_betas = {{"schedule", {{"beta_min", 0.5}, {"beta_max", 0.1}}}};
  CHECK_THROWS_AS(experiment_from_json(bad_betas), std::invalid_argument);
  CHECK_THROWS_AS(experiment_from_json(json{{"schema_version", 2}}), std::invalid_argument);
  // Per-section validation still fires through the strict layer.
  CHECK_THROWS_AS(experiment_from_json(json{{"distill", {{"steps", 0}}}}),
                  std::invalid_argument);
  CHECK_THROWS_AS(experiment_from_json(json{{"stage1", {{"warmup_steps", 100000}}}}),
                  std::invalid_argument);
}

TEST_CASE("overrides layer onto the raw document") {
  json doc = json::object();
  apply_override(doc, "seed=9");
  CHECK(doc["seed"] == 9);
  apply_override(doc, "distill.steps=500");
  CHECK(doc["distill"]["steps"] == 500);
  apply_override(doc, "sampler.deterministic=true");
  CHECK(doc["sampler"]["deterministic"] == true);
  apply_override(doc, "out_root=results/run1");
  CHECK(doc["out_root"] == "results/run1");  // unquoted strings pass through
  apply_override(doc, "schedule.beta_max=0.015");
  CHECK(doc["schedule"]["beta_max"] == 0.015);

  // Values already in the document are replaced; siblings survive.
  doc["distill"]["lr"] = 0.02;
  apply_override(doc, "distill.steps=250");
  CHECK(doc["distill"]["steps"] == 250);
  CHECK(doc["distill"]["lr"] == 0.02);

  const auto c = experiment_from_json(doc);
  CHECK(c.seed == 9);
  CHECK(c.distill.steps == 250);
  CHECK(c.distill.lr == 0.02);
  CHECK(c.sampler.deterministic);
  CHECK(c.out_root == fs::path("results/run1"));

  CHECK_THROWS_AS(apply_override(doc, "nonsense"), std::invalid_argument);
  CHECK_THROWS_AS(apply_override(doc, "=5"), std::invalid_argument);

  // Overrides obey the same strictness: a typo is still an unknown key.
  json doc2 = json::object();
  apply_override(doc2, "distill.stepz=5");
  const std::string msg = capture_error([&] { experiment_from_json(doc2); });
  CHECK(msg.find("distill.stepz") != std::string::npos);
}

TEST_CASE("config files load from disk with clear failure modes") {
  const fs::path dir = scratch_dir("load");
  const fs::path good = dir / "exp.json";
  {
    std::ofstream out(good);
    out << R"({"seed": 5, "schedule": {"T": 200}, "distill": {"steps": 50}})";
  }
  const auto c = load_experiment(good);
  CHECK(c.seed == 5);
  CHECK(c.schedule.T == 200);
  CHECK(c.distill.steps == 50);
  CHECK(c.distill.seed == derive_seed(5, "distill"));

  CHECK_THROWS_AS(load_experiment(dir / "missing.json"), std::invalid_argument);

  const fs::path broken = dir / "broken.json";
  {
    std::ofstream out(broken);
    out << "{ not json";
  }
  const std::string msg = capture_error([&] { load_experiment(broken); });
  CHECK(msg.find("not valid JSON") != std::string::npos);
  fs::remove_all(dir);
}

TEST_CASE("run manifests hash the config and every artifact") {
  const fs::path dir = scratch_dir("manifest");
  const auto cfg = experiment_from_json(json{{"seed", 3}});
  const json resolved = cfg.to_json();

  auto m = start_manifest("train-stage1", resolved);
  CHECK(m.command == "train-stage1");
  CHECK(m.config_hash == sha256_hex(resolved.dump()));
  CHECK(m.config_hash.size() == 64);
  CHECK_FALSE(m.code_version.empty());
  REQUIRE(m.started_utc.size() == 20);  // 2026-08-22T12:34:56Z
  CHECK(m.started_utc[10] == 'T');
  CHECK(m.started_utc.back() == 'Z');
  CHECK(m.finished_utc.empty());

  const fs::path a = dir / "out" / "a.bin";
  fs::create_directories(a.parent_path());
  {
    std::ofstream out(a, std::ios::binary);
    out << "artifact-bytes";
  }
  const fs::path manifest_path = dir / "out" / "manifest.json";
  finish_manifest(m, {a}, manifest_path);
  CHECK(m.finished_utc.size() == 20);
  REQUIRE(m.artifacts.size() == 1);
  CHECK(m.artifacts[0].path == a.string());
  CHECK(m.artifacts[0].sha256 == sha256_hex(std::string("artifact-bytes")));

  const json loaded = json::parse(std::ifstream(manifest_path));
  CHECK(loaded["command"] == "train-stage1");
  CHECK(loaded["config_hash"] == m.config_hash);
  CHECK(loaded["code_version"] == m.code_version);
  CHECK(loaded["artifacts"].size() == 1);
  CHECK(loaded["artifacts"][0]["sha256"] == m.artifacts[0].sha256);

  // A claimed artifact that does not exist is a bug in the caller.
  auto m2 = start_manifest("eval", resolved);
  CHECK_THROWS_AS(finish_manifest(m2, {dir / "ghost.bin"}, dir / "m2.json"),
                  std::invalid_argument);
  fs::remove_all(dir);
}

TEST_SUITE_END();
