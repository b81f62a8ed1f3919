#include <gtest/gtest.h>

#include <cstdlib>
#include <sys/wait.h>

#include "test_util.hpp"

using namespace touchbind;

namespace {

struct RunResult {
  int code = -1;
  std::string out;
};

RunResult run_cli(const std::string& args, const fs::path& scratch) {
  const fs::path out = scratch / "stdout.txt";
  const std::string cmd = std::string(TOUCHBIND_CLI) + " " + args + " > " + out.string() + " 2> " +
                          (scratch / "stderr.txt").string();
  const int status = std::system(cmd.c_str());
  RunResult r;
  r.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  r.out = tbtest::file_bytes(out);
  return r;
}

std::string tree_digest(const fs::path& root) {
  std::vector<fs::path> files;
  for (const auto& e : fs::recursive_directory_iterator(root))
    if (e.is_regular_file()) files.push_back(e.path());
  std::sort(files.begin(), files.end());
  std::string digest;
  for (const auto& f : files) {
    const auto bytes = read_file_bytes(f);
    digest += fs::relative(f, root).string() + ":" +
              std::to_string(fnv1a(std::as_bytes(std::span(bytes.data(), bytes.size())))) + "\n";
  }
  return digest;
}

// Small world and encoder so the full pipeline runs in a few seconds.
class CliPipeline : public ::testing::Test {
 protected:
  static void SetUpTestSuite() {
    dir_ = new tbtest::TempDir("cli");
    json cfg = {{"world", WorldConfig::toy(90)},
                {"encoder", {{"D", 16}, {"n_heads", 2}, {"n_blocks", 1}}},
                {"train", {{"epochs", 2}, {"batch_size", 16}}}};
    write_json_file(dir_->path() / "run.json", cfg);
    ASSERT_EQ(run_cli("gen-data --config " + cfg_path() + " --out " + data_path() + " --seed 7", dir_->path()).code, 0);
    ASSERT_EQ(run_cli("train --data " + data_path() + " --config " + cfg_path() + " --out " + ckpt_path(), dir_->path()).code, 0);
  }
  static void TearDownTestSuite() { delete dir_; }

  static std::string cfg_path() { return (dir_->path() / "run.json").string(); }
  static std::string data_path() { return (dir_->path() / "data").string(); }
  static std::string ckpt_path() { return (dir_->path() / "runs_a").string(); }
  static const fs::path& scratch() { return dir_->path(); }

  static tbtest::TempDir* dir_;
};

tbtest::TempDir* CliPipeline::dir_ = nullptr;

}  // namespace

TEST_F(CliPipeline, GenDataIsDeterministic) {
  const fs::path again = scratch() / "data_again";
  ASSERT_EQ(run_cli("gen-data --config " + cfg_path() + " --out " + again.string() + " --seed 7", scratch()).code, 0);
  EXPECT_EQ(tree_digest(data_path()), tree_digest(again));
}

TEST_F(CliPipeline, ZeroShotPrintsAccuracyJson) {
  const auto r = run_cli("eval zero-shot --ckpt " + ckpt_path() + " --data " + data_path() +
                             " --template \"This feels like [CLS]\"",
                         scratch());
  ASSERT_EQ(r.code, 0) << r.out;
  const json j = json::parse(r.out);
  EXPECT_EQ(j.at("task"), "zero-shot");
  EXPECT_GE(j.at("accuracy").get<double>(), 0.0);
  EXPECT_LE(j.at("accuracy").get<double>(), 1.0);
  EXPECT_GT(j.at("n").get<int>(), 0);
}

TEST_F(CliPipeline, RetrievalPrintsMapWithQueryCount) {
  for (const char* m : {"vision", "text", "audio"}) {
    const auto r = run_cli("eval retrieval --ckpt " + ckpt_path() + " --data " + data_path() + " --modality " + m, scratch());
    ASSERT_EQ(r.code, 0) << m;
    const json j = json::parse(r.out);
    EXPECT_GT(j.at("queries").get<int>(), 0);
    EXPECT_GE(j.at("mAP").get<double>(), 0.0);
    EXPECT_LE(j.at("mAP").get<double>(), 1.0);
  }
}

TEST_F(CliPipeline, GraspAndProbeAndPrototypes) {
  auto r = run_cli("eval grasp --ckpt " + ckpt_path() + " --data " + data_path(), scratch());
  ASSERT_EQ(r.code, 0);
  EXPECT_TRUE(json::parse(r.out).contains("accuracy"));
  r = run_cli("eval probe --ckpt " + ckpt_path() + " --data " + data_path(), scratch());
  ASSERT_EQ(r.code, 0);
  EXPECT_TRUE(json::parse(r.out).contains("unseen_class_samples"));
  r = run_cli("prototypes --ckpt " + ckpt_path() + " --data " + data_path(), scratch());
  ASSERT_EQ(r.code, 0);
  EXPECT_DOUBLE_EQ(json::parse(r.out).at("resolution_accuracy").get<double>(), 1.0);
}

TEST_F(CliPipeline, ExportedEmbeddingsReproduceMetrics) {
  const fs::path emb = scratch() / "emb";
  auto r = run_cli("export-embeddings --ckpt " + ckpt_path() + " --data " + data_path() + " --out " + emb.string() +
                       " --split all",
                   scratch());
  ASSERT_EQ(r.code, 0);
  const Dataset ds = read_dataset(data_path());
  const auto table = load_embedding_table(emb, 32);
  EXPECT_EQ(table.rows.size(), ds.samples.size());
  for (const auto& row : table.rows) EXPECT_NEAR(row.values.norm(), 1.0, 1e-6);

  const fs::path test_only = scratch() / "emb_test";
  ASSERT_EQ(run_cli("export-embeddings --ckpt " + ckpt_path() + " --data " + data_path() + " --out " + test_only.string(),
                    scratch())
                .code,
            0);
  EXPECT_EQ(load_embedding_table(test_only, 32).rows.size(), ds.indices_in(Split::kTest).size());

  for (const std::string task : {"zero-shot", "grasp", "probe", "retrieval"}) {
    const std::string base = "eval " + task + " --ckpt " + ckpt_path() + " --data " + data_path();
    const json direct = json::parse(run_cli(base, scratch()).out);
    const json via = json::parse(run_cli(base + " --embeddings " + emb.string(), scratch()).out);
    const char* key = task == "retrieval" ? "mAP" : "accuracy";
    EXPECT_NEAR(direct.at(key).get<double>(), via.at(key).get<double>(), 1e-6) << task;
  }
}

TEST_F(CliPipeline, InputsNotMutated) {
  const std::string before = tree_digest(data_path());
  run_cli("eval zero-shot --ckpt " + ckpt_path() + " --data " + data_path(), scratch());
  run_cli("prototypes --data " + data_path(), scratch());
  EXPECT_EQ(tree_digest(data_path()), before);
}

TEST_F(CliPipeline, ExitCodes) {
  EXPECT_EQ(run_cli("train --bogus-flag 1", scratch()).code, 1);
  EXPECT_EQ(run_cli("eval zero-shot --ckpt /nonexistent --data " + data_path(), scratch()).code, 1);
  EXPECT_EQ(run_cli("gen-data --config /nonexistent.json --out " + (scratch() / "x").string(), scratch()).code, 1);
  write_json_file(scratch() / "bad.json", json{{"train", {{"epochs", 0}}}});
  EXPECT_EQ(run_cli("gen-data --config " + (scratch() / "bad.json").string() + " --out " + (scratch() / "x").string(),
                    scratch())
                .code,
            1);
  write_json_file(scratch() / "unknown.json", json{{"train", {{"epochz", 3}}}});
  EXPECT_EQ(run_cli("train --config " + (scratch() / "unknown.json").string() + " --data " + data_path() + " --out " +
                        (scratch() / "y").string(),
                    scratch())
                .code,
            1);
  EXPECT_EQ(run_cli("eval retrieval --ckpt " + ckpt_path() + " --data " + data_path() + " --modality smell", scratch()).code, 1);
  EXPECT_EQ(run_cli("eval zero-shot --ckpt " + ckpt_path() + " --data " + data_path() + " --template \"no slot\"", scratch()).code, 1);

  // Diverging optimisation is a runtime failure.
  write_json_file(scratch() / "diverge.json",
                  json{{"encoder", {{"D", 16}, {"n_heads", 2}, {"n_blocks", 1}}},
                       {"train", {{"epochs", 2}, {"batch_size", 16}, {"base_lr", 1e30}, {"grad_clip", 0.0}}}});
  EXPECT_EQ(run_cli("train --config " + (scratch() / "diverge.json").string() + " --data " + data_path() + " --out " +
                        (scratch() / "z").string(),
                    scratch())
                .code,
            2);
}
