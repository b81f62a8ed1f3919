// touchbind command-line driver.
//
//   touchbind gen-data --config run.json --out data/ --seed 7
//   touchbind train --data data/ --config run.json --out runs/a
//   touchbind eval zero-shot --ckpt runs/a --data data/ --template "This feels like [CLS]"
//   touchbind eval retrieval --ckpt runs/a --data data/ --modality vision
//   touchbind export-embeddings --ckpt runs/a --data data/ --out emb/
//   touchbind ablate --data data/ --config run.json --out ablation/ --jobs 4
//
// Metrics are printed as JSON on stdout, logs go to stderr. Exit status is 0
// on success, 1 for invalid input and 2 for runtime failures.

#include <CLI11.hpp>
#include <filesystem>
#include <iostream>
#include <map>
#include <optional>

#include "touchbind/touchbind.hpp"

namespace fs = std::filesystem;
using namespace touchbind;

namespace {

struct Args {
  std::string config, data, out, ckpt, template_text = std::string(kDefaultTemplate), modality = "vision",
                                       split = "test", embeddings;
  std::optional<std::uint64_t> seed;
  std::optional<double> sigma;
  int jobs = 1;
};

void require_dir(const std::string& path, const char* flag) {
  if (path.empty()) throw ValidationError(std::string(flag) + " is required");
  if (!fs::is_directory(path)) throw ValidationError(std::string(flag) + " " + path + ": no such directory");
}

RunConfig load_run_config(const Args& a) {
  RunConfig rc = a.config.empty() ? RunConfig{} : RunConfig::load(a.config);
  if (a.sigma) rc.train.sigma = *a.sigma;
  rc.world.validate();
  rc.encoder.validate();
  rc.anchor.validate();
  rc.train.validate();
  return rc;
}

void emit(const json& j) { std::cout << j.dump(2) << std::endl; }

int cmd_gen_data(const Args& a) {
  if (a.out.empty()) throw ValidationError("--out is required");
  const RunConfig rc = load_run_config(a);
  const Dataset ds = generate_world(rc.world, a.seed.value_or(0));
  write_dataset(ds, a.out);
  json sizes = json::object();
  for (const auto& d : ds.manifest.datasets) sizes[d.name] = d.size;
  emit({{"out", a.out}, {"seed", ds.manifest.seed}, {"samples", ds.samples.size()}, {"datasets", sizes}});
  return 0;
}

int cmd_train(const Args& a) {
  require_dir(a.data, "--data");
  if (a.out.empty()) throw ValidationError("--out is required");
  RunConfig rc = load_run_config(a);
  if (a.seed) rc.train.seed = *a.seed;
  const Dataset ds = read_dataset(a.data);
  const AnchorSpace anchor(rc.anchor, ds.manifest.class_names);
  FitOptions opts;
  opts.out_dir = a.out;
  if (!a.ckpt.empty()) {
    require_dir(a.ckpt, "--ckpt");
    opts.resume = load_checkpoint(a.ckpt);
  }
  opts.on_epoch = [](const EpochRecord& r) { log_info(epoch_record_json(r).dump()); };
  const Checkpoint ck = fit(ds, anchor, rc.encoder, rc.train, opts);
  emit({{"out", a.out},
        {"steps", ck.step},
        {"epochs", rc.train.epochs},
        {"final_train_loss", ck.metrics.at("final_train_loss")},
        {"val_loss", ck.metrics.at("val_loss")},
        {"anchor_fingerprint", anchor.fingerprint()}});
  return 0;
}

// Touch embeddings for `split`, either encoded now or read from an exported
// table whose keys are global sample indices.
SplitEmbeddings touch_embeddings(const Args& a, const Checkpoint& ck, const Dataset& ds, Split split) {
  if (a.embeddings.empty()) return embed_split(ck, ds, split);
  require_dir(a.embeddings, "--embeddings");
  const EmbeddingTable t = load_embedding_table(a.embeddings, ck.encoder().out_dim);
  std::map<std::size_t, const Embedding*> by_index;
  for (const auto& row : t.rows) {
    if (row.modality != Modality::kTouch) continue;
    std::size_t idx = 0;
    try {
      idx = std::stoull(row.key);
    } catch (const std::exception&) {
      throw ValidationError("embedding key '" + row.key + "' is not a sample index");
    }
    if (idx >= ds.samples.size()) throw ValidationError("embedding key " + row.key + " outside the dataset");
    by_index[idx] = &row.values;
  }
  SplitEmbeddings out;
  for (std::size_t i : ds.indices_in(split)) {
    if (by_index.count(i)) out.samples.push_back(i);
  }
  if (out.samples.empty()) {
    throw ValidationError(std::string("embedding table holds no ") + split_name(split) + " samples");
  }
  out.touch.resize(static_cast<Eigen::Index>(out.samples.size()), t.dim);
  for (std::size_t r = 0; r < out.samples.size(); ++r) {
    out.touch.row(static_cast<Eigen::Index>(r)) = by_index.at(out.samples[r])->transpose();
  }
  return out;
}

int cmd_eval(const std::string& task, const Args& a) {
  require_dir(a.ckpt, "--ckpt");
  require_dir(a.data, "--data");
  const Checkpoint ck = load_checkpoint(a.ckpt);
  const Dataset ds = read_dataset(a.data);
  if (ck.dataset_seed != ds.manifest.seed) log_warning("checkpoint was trained on a dataset with a different seed");
  const AnchorSpace anchor = anchor_from_checkpoint(ck);
  PromptTemplateRegistry registry;
  const Split split = parse_split(a.split);
  json out = {{"task", task}, {"split", split_name(split)}};

  if (task == "probe") {
    const SplitEmbeddings train = touch_embeddings(a, ck, ds, Split::kTrain);
    const SplitEmbeddings test = touch_embeddings(a, ck, ds, split);
    const auto ytr = material_labels(ds, train.samples);
    const auto yte = material_labels(ds, test.samples);
    const ProbeResult r = linear_probe(train.touch, ytr, test.touch, yte);
    out["accuracy"] = r.accuracy;
    out["train_accuracy"] = r.train_accuracy;
    out["unseen_class_samples"] = r.unseen_test_samples;
    out["zero_shot_accuracy"] = zero_shot_accuracy(test.touch, yte, anchor, a.template_text, registry);
    out["n_train"] = train.samples.size();
    out["n"] = test.samples.size();
    emit(out);
    return 0;
  }

  const SplitEmbeddings emb = touch_embeddings(a, ck, ds, split);
  out["n"] = emb.samples.size();
  if (task == "zero-shot") {
    if (!registry.has_template(a.template_text)) registry.add_template(a.template_text);
    out["template"] = a.template_text;
    out["accuracy"] = zero_shot_accuracy(emb.touch, material_labels(ds, emb.samples), anchor, a.template_text, registry);
    out["chance"] = 1.0 / anchor.num_classes();
  } else if (task == "grasp") {
    out["accuracy"] = grasp_accuracy(emb.touch, ds, emb.samples, anchor);
  } else if (task == "retrieval") {
    const Modality m = parse_modality(a.modality);
    if (m == Modality::kTouch) throw ValidationError("--modality must be vision, text or audio");
    const RetrievalResult r = touch_retrieval(emb.touch, ds, emb.samples, anchor, m, registry);
    out["modality"] = a.modality;
    out["mAP"] = r.mean_ap;
    out["queries"] = r.scored_queries;
    out["excluded_queries"] = r.excluded_queries;
  }
  emit(out);
  return 0;
}

int cmd_export(const Args& a) {
  require_dir(a.ckpt, "--ckpt");
  require_dir(a.data, "--data");
  if (a.out.empty()) throw ValidationError("--out is required");
  const Checkpoint ck = load_checkpoint(a.ckpt);
  const Dataset ds = read_dataset(a.data);
  std::vector<Split> splits;
  if (a.split == "all") splits = {Split::kTrain, Split::kVal, Split::kTest};
  else splits = {parse_split(a.split)};
  EmbeddingTable t{ck.encoder().out_dim, {}};
  json sensors = json::array();
  for (Split s : splits) {
    const SplitEmbeddings e = embed_split(ck, ds, s);
    for (std::size_t r = 0; r < e.samples.size(); ++r) {
      t.rows.push_back({std::to_string(e.samples[r]), Modality::kTouch, e.touch.row(static_cast<Eigen::Index>(r)).transpose()});
      sensors.push_back(e.sensors[r]);
    }
  }
  write_embedding_table(t, a.out, {{"split", a.split}, {"resolved_sensors", sensors}, {"dataset_seed", ds.manifest.seed}});
  emit({{"out", a.out}, {"split", a.split}, {"count", t.rows.size()}, {"C", t.dim}});
  return 0;
}

int cmd_prototypes(const Args& a) {
  SensorPrototypes protos;
  json out = json::object();
  if (!a.ckpt.empty()) {
    require_dir(a.ckpt, "--ckpt");
    protos = load_checkpoint(a.ckpt).prototypes;
    out["source"] = "checkpoint";
  } else {
    require_dir(a.data, "--data");
    protos = compute_prototypes(read_dataset(a.data));
    out["source"] = "dataset";
  }
  out["prototypes"] = protos.values;
  if (!a.data.empty()) {
    require_dir(a.data, "--data");
    const Dataset ds = read_dataset(a.data);
    const auto idx = ds.indices_in(parse_split(a.split));
    std::size_t hits = 0;
    for (std::size_t i : idx) hits += resolve_sensor(ds.samples[i].touch, protos) == ds.samples[i].touch.sensor_id;
    out["split"] = a.split;
    out["resolution_accuracy"] = idx.empty() ? 0.0 : static_cast<double>(hits) / static_cast<double>(idx.size());
  }
  emit(out);
  return 0;
}

int cmd_ablate(const Args& a) {
  require_dir(a.data, "--data");
  if (a.out.empty()) throw ValidationError("--out is required");
  if (a.jobs < 1) throw ValidationError("--jobs must be >= 1");
  const RunConfig rc = load_run_config(a);
  const Dataset ds = read_dataset(a.data);
  const AnchorSpace anchor(rc.anchor, ds.manifest.class_names);
  AblationOptions opts;
  opts.jobs = a.jobs;
  opts.template_text = a.template_text;
  const std::uint64_t s0 = a.seed.value_or(rc.train.seed);
  opts.seeds = {s0, s0 + 1, s0 + 2};
  const AblationReport report = run_ablation_grid(ds, anchor, rc.encoder, rc.train, opts);
  fs::create_directories(a.out);
  const json j = ablation_report_json(report);
  write_json_file(fs::path(a.out) / "report.json", j);
  const std::string csv = ablation_report_csv(report), svg = sigma_sweep_svg(report);
  write_file_bytes(fs::path(a.out) / "report.csv", std::span(csv.data(), csv.size()));
  write_file_bytes(fs::path(a.out) / "sigma_sweep.svg", std::span(svg.data(), svg.size()));
  emit(j);
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Bind tactile images to a frozen multimodal embedding space"};
  app.require_subcommand(1);
  Args a;

  auto add_common = [&](CLI::App* c) {
    c->add_option("--config", a.config, "JSON run config (world, encoder, anchor, train sections)");
    c->add_option("--seed", a.seed, "Seed override");
  };
  auto* gen = app.add_subcommand("gen-data", "Generate the synthetic multi-sensor dataset");
  add_common(gen);
  gen->add_option("--out", a.out, "Output dataset directory");

  auto* train = app.add_subcommand("train", "Train a touch encoder");
  add_common(train);
  train->add_option("--data", a.data, "Dataset directory");
  train->add_option("--out", a.out, "Run directory");
  train->add_option("--ckpt", a.ckpt, "Resumable checkpoint to continue from");
  train->add_option("--sigma", a.sigma, "Mix rate override");

  auto* eval = app.add_subcommand("eval", "Evaluate a checkpoint");
  eval->require_subcommand(1);
  std::string eval_task;
  for (const char* task : {"zero-shot", "grasp", "probe", "retrieval"}) {
    auto* t = eval->add_subcommand(task);
    t->add_option("--ckpt", a.ckpt, "Checkpoint directory");
    t->add_option("--data", a.data, "Dataset directory");
    t->add_option("--split", a.split, "train, val or test")->check(CLI::IsMember({"train", "val", "test"}));
    t->add_option("--embeddings", a.embeddings, "Use an exported embedding table instead of encoding");
    t->add_option("--template", a.template_text, "Prompt template with one [CLS] slot");
    if (std::string_view(task) == "retrieval") {
      t->add_option("--modality", a.modality, "Gallery modality")->check(CLI::IsMember({"vision", "text", "audio"}));
    }
    t->callback([&eval_task, task] { eval_task = task; });
  }

  auto* ablate = app.add_subcommand("ablate", "Run the sensor-token/sampling ablation and sigma sweep");
  add_common(ablate);
  ablate->add_option("--data", a.data, "Dataset directory");
  ablate->add_option("--out", a.out, "Report directory");
  ablate->add_option("--jobs", a.jobs, "Parallel training runs");
  ablate->add_option("--template", a.template_text, "Prompt template for the zero-shot metric");
  ablate->add_option("--sigma", a.sigma, "Mix rate of the flag cells");

  auto* exp = app.add_subcommand("export-embeddings", "Write touch embeddings as an embedding table");
  exp->add_option("--ckpt", a.ckpt, "Checkpoint directory");
  exp->add_option("--data", a.data, "Dataset directory");
  exp->add_option("--out", a.out, "Output directory");
  exp->add_option("--split", a.split, "train, val, test or all")->check(CLI::IsMember({"train", "val", "test", "all"}));

  auto* protos = app.add_subcommand("prototypes", "Print sensor prototypes and their resolution accuracy");
  protos->add_option("--ckpt", a.ckpt, "Checkpoint directory");
  protos->add_option("--data", a.data, "Dataset directory");
  protos->add_option("--split", a.split, "Split used for the resolution check");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    if (e.get_exit_code() == 0) return app.exit(e);
    std::cerr << "error: " << e.what() << " (see --help)\n";
    return 1;
  }

  try {
    if (gen->parsed()) return cmd_gen_data(a);
    if (train->parsed()) return cmd_train(a);
    if (eval->parsed()) return cmd_eval(eval_task, a);
    if (ablate->parsed()) return cmd_ablate(a);
    if (exp->parsed()) return cmd_export(a);
    if (protos->parsed()) return cmd_prototypes(a);
  } catch (const ValidationError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "failure: " << e.what() << '\n';
    return 2;
  }
  return 1;
}
