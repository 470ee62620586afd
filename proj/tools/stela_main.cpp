// Benchmark and experiment harness around the stela library:
//   prepare            stage a (strided) SemanticKITTI-layout sequence
//   ablate             sweep (k, n_past, aligned, use_stela) grids
//   train-toy          one three-stage training run
//   eval               evaluate a checkpoint
//   bench              local vs global attention timing/FLOPs
//   dump-neighborhood  CSV dump of KNN tables

#include <CLI11.hpp>

#include <filesystem>
#include <fstream>
#include <iostream>

#include "stela/stela.hpp"

namespace fs = std::filesystem;
using namespace stela;

namespace {

struct CommonOpts {
  std::string config_path;
  std::string out_dir = "stela_out";
  std::string format = "json";
  std::int64_t seed_override = -1;
  int threads_override = 0;
};

void add_common(CLI::App* cmd, CommonOpts& opts, bool config_required = true) {
  auto* c = cmd->add_option("--config", opts.config_path, "experiment config file");
  if (config_required) c->required();
  cmd->add_option("--out", opts.out_dir, "output directory");
  cmd->add_option("--format", opts.format, "report format: csv|json|both")
      ->check(CLI::IsMember({"csv", "json", "both"}));
  cmd->add_option("--seed", opts.seed_override, "override the config seed");
  cmd->add_option("--threads", opts.threads_override, "override the config thread count");
}

ExperimentConfig load_experiment(const CommonOpts& opts) {
  KeyValueConfig kv = opts.config_path.empty() ? KeyValueConfig()
                                                : KeyValueConfig::load(opts.config_path);
  if (opts.seed_override >= 0) kv.set("seed", std::to_string(opts.seed_override));
  if (opts.threads_override > 0) kv.set("threads", std::to_string(opts.threads_override));
  return experiment_from_config(kv);
}

void write_reports(const CommonOpts& opts, const std::vector<RunReport>& reports) {
  fs::create_directories(opts.out_dir);
  const fs::path out(opts.out_dir);
  if (opts.format == "json" || opts.format == "both") {
    write_report_json(out / "report.json", reports);
    write_report_schema(out / "report.schema.json");
  }
  if (opts.format == "csv" || opts.format == "both") write_report_csv(out / "report.csv", reports);
  write_timings_csv(out / "timings.csv", reports);
}

void print_report_line(const RunReport& r) {
  auto echo = [&r](const std::string& key) {
    auto it = r.config_echo.find(key);
    return it == r.config_echo.end() ? std::string("?") : it->second;
  };
  if (r.failed) {
    std::cout << "run k=" << echo("k") << " n_past=" << echo("n_past")
              << " aligned=" << echo("aligned") << " FAILED: " << r.failure_reason << "\n";
    return;
  }
  std::cout << "run k=" << echo("k") << " n_past=" << echo("n_past")
            << " aligned=" << echo("aligned") << " use_stela=" << echo("use_stela")
            << " miou=" << r.miou << "\n";
}

int cmd_prepare(const std::string& input, const std::string& sequence, const CommonOpts& opts,
                int stride, const std::string& class_map_path, bool cache_voxels) {
  const SequenceManifest full = scan_sequence_dir(input, sequence);
  const SequenceManifest tiny = build_tiny_subset(full, stride);

  fs::create_directories(fs::path(opts.out_dir) / "velodyne");
  fs::create_directories(fs::path(opts.out_dir) / "labels");
  const fs::path out(opts.out_dir);

  std::ofstream poses(out / "poses.txt");
  // Poses are already conjugated into the LiDAR frame; re-emit them with an
  // identity calibration so the staged directory is self-contained.
  std::ofstream calib(out / "calib.txt");
  calib << "Tr: 1 0 0 0 0 1 0 0 0 0 1 0\n";
  poses.precision(17);

  ExperimentConfig cfg;
  if (!opts.config_path.empty()) cfg = load_experiment(opts);
  Mlp<double> encoder;
  if (cache_voxels) {
    std::vector<int> widths = {kPointFeatureDim};
    widths.insert(widths.end(), cfg.encoder_hidden.begin(), cfg.encoder_hidden.end());
    widths.push_back(cfg.feature_dim);
    encoder = make_mlp<double>(widths, cfg.seed, "encoder");
    cfg.grid.feature_dim = cfg.feature_dim;
  }

  for (std::size_t i = 0; i < tiny.size(); ++i) {
    char name[16];
    std::snprintf(name, sizeof(name), "%06zu", i);
    const RawScan scan = read_scan(tiny.scan_paths[i]);
    write_scan(out / "velodyne" / (std::string(name) + ".bin"), scan);
    if (!tiny.label_paths[i].empty()) {
      const LabelArray labels = read_labels(tiny.label_paths[i], scan.size());
      write_labels(out / "labels" / (std::string(name) + ".label"), labels);
    }
    const Mat3& r = tiny.poses[i].rotation();
    const Vec3& t = tiny.poses[i].translation();
    poses << r(0, 0) << ' ' << r(0, 1) << ' ' << r(0, 2) << ' ' << t(0) << ' ' << r(1, 0) << ' '
          << r(1, 1) << ' ' << r(1, 2) << ' ' << t(1) << ' ' << r(2, 0) << ' ' << r(2, 1) << ' '
          << r(2, 2) << ' ' << t(2) << '\n';

    if (cache_voxels) {
      std::vector<PointFeature> features;
      std::vector<Index3> assignments;
      for (const ScanPoint& p : scan.points) {
        const CylCoord cyl = to_cylindrical(p.x, p.y, p.z);
        const auto idx = voxel_index(cyl, cfg.grid);
        if (!idx) continue;
        features.push_back(build_point_features(p.x, p.y, p.z, cyl, p.intensity));
        assignments.push_back(*idx);
      }
      const SparseVoxelSet<double> set =
          encode_points(features, assignments, encoder, cfg.grid);
      save_sparse_set(out / "velodyne" / (std::string(name) + ".svs"), set);
    }
  }

  fs::copy_file(class_map_path, out / "classes.txt", fs::copy_options::overwrite_existing);
  std::cout << "prepared " << tiny.size() << " of " << full.size() << " frames into "
            << opts.out_dir << "\n";
  return 0;
}

int cmd_ablate(const CommonOpts& opts) {
  const KeyValueConfig kv = KeyValueConfig::load(opts.config_path);
  const ExperimentConfig base = load_experiment(opts);

  std::vector<std::int64_t> k_axis = kv.get_int_list("sweep.k", {base.k});
  std::vector<std::int64_t> n_axis = kv.get_int_list("sweep.n_past", {base.n_past});
  std::vector<bool> aligned_axis = kv.get_bool_list("sweep.aligned", {base.aligned});
  std::vector<bool> stela_axis = kv.get_bool_list("sweep.use_stela", {base.use_stela});

  std::vector<ExperimentConfig> grid;
  for (bool use_stela : stela_axis)
    for (std::int64_t n_past : n_axis)
      for (bool aligned : aligned_axis)
        for (std::int64_t k : k_axis) {
          ExperimentConfig cfg = base;
          cfg.use_stela = use_stela;
          cfg.n_past = static_cast<int>(n_past);
          cfg.aligned = aligned;
          cfg.k = static_cast<int>(k);
          grid.push_back(cfg);
        }

  const std::vector<RunReport> reports = run_ablation(grid);
  write_reports(opts, reports);
  for (const RunReport& r : reports) print_report_line(r);
  return 0;
}

int cmd_train_toy(const CommonOpts& opts) {
  const ExperimentConfig cfg = load_experiment(opts);
  TrainOutcome outcome = train_toy(cfg);
  write_reports(opts, {outcome.report});
  save_checkpoint(fs::path(opts.out_dir) / "model.ckpt", model_to_tensors(outcome.model));
  {
    std::ofstream metrics(fs::path(opts.out_dir) / "metrics_per_class.csv");
    MiouResult m;
    m.per_class = outcome.report.per_class_iou;
    m.mean = outcome.report.miou;
    write_metrics_csv(metrics, m, outcome.report.class_names);
  }
  print_report_line(outcome.report);
  return 0;
}

int cmd_eval(const CommonOpts& opts, const std::string& checkpoint) {
  const ExperimentConfig cfg = load_experiment(opts);
  const DataSplits data = load_data(cfg);
  SegModel model = make_model(cfg, data.num_classes);
  model_from_tensors(load_checkpoint(checkpoint), model);

  const EvalResult eval = evaluate(model, data.val);
  fs::create_directories(opts.out_dir);
  RunReport report;
  report.config_echo = config_echo(cfg);
  report.per_class_iou = eval.metrics.per_class;
  report.miou = eval.metrics.mean;
  report.flops_correlation = eval.flops.correlation;
  report.flops_aggregation = eval.flops.aggregation;
  for (int c = 0; c < data.num_classes; ++c)
    report.class_names.push_back("class_" + std::to_string(c));
  write_reports(opts, {report});
  {
    std::ofstream metrics(fs::path(opts.out_dir) / "metrics_per_class.csv");
    write_metrics_csv(metrics, eval.metrics, report.class_names);
  }
  std::cout << "eval miou=" << eval.metrics.mean << "\n";
  return 0;
}

int cmd_bench(const CommonOpts& opts, AttentionBenchConfig bench_cfg) {
  if (opts.seed_override >= 0) bench_cfg.seed = static_cast<std::uint64_t>(opts.seed_override);
  if (opts.threads_override > 0) bench_cfg.threads = opts.threads_override;
  const AttentionBenchResult result = bench_attention(bench_cfg);

  fs::create_directories(opts.out_dir);
  const fs::path out(opts.out_dir);
  {
    std::ofstream csv(out / "bench.csv");
    csv << "n,k,global,skipped,seconds_median,flops_correlation,flops_aggregation\n";
    for (const AttentionBenchRow& row : result.rows)
      csv << row.n << ',' << row.k << ',' << (row.global ? 1 : 0) << ','
          << (row.skipped ? 1 : 0) << ',' << row.seconds_median << ',' << row.flops_correlation
          << ',' << row.flops_aggregation << '\n';
  }
  nlohmann::ordered_json j;
  j["rows"] = nlohmann::ordered_json::array();
  for (const AttentionBenchRow& row : result.rows) {
    j["rows"].push_back({{"n", row.n},
                         {"k", row.k},
                         {"global", row.global},
                         {"skipped", row.skipped},
                         {"seconds_median", row.seconds_median},
                         {"flops_correlation", row.flops_correlation},
                         {"flops_aggregation", row.flops_aggregation}});
  }
  if (result.config.n_grid.size() >= 2) {
    j["slopes"] = nlohmann::ordered_json::object();
    for (int k : result.config.k_grid)
      j["slopes"]["local_k" + std::to_string(k)] = bench_slope(result, false, k);
    j["slopes"]["global"] = bench_slope(result, true);
    std::cout << "global slope " << bench_slope(result, true) << ", local slope(k="
              << result.config.k_grid.front() << ") "
              << bench_slope(result, false, result.config.k_grid.front()) << "\n";
  }
  std::ofstream(out / "bench.json") << j.dump(2) << '\n';
  return 0;
}

int cmd_dump_neighborhood(const CommonOpts& opts, int frame_index, const std::string& out_file) {
  const ExperimentConfig cfg = load_experiment(opts);
  const DataSplits data = load_data(cfg);
  if (frame_index < 0 || static_cast<std::size_t>(frame_index) >= data.train.size())
    throw ConfigError("dump-neighborhood: frame index out of range");

  SegModel model = make_model(cfg, data.num_classes);
  const PointCloudFrame& current = data.train[static_cast<std::size_t>(frame_index)];
  const auto past = past_window(data.train, static_cast<std::size_t>(frame_index), cfg.n_past);

  FrameVoxels cur = voxelize_frame(current.scan, {}, model, false);
  std::vector<NeighborhoodEntry> tables;
  for (const PointCloudFrame* p : past) {
    const RawScan scan =
        cfg.aligned ? align_to_frame(p->scan, p->pose, current.pose) : p->scan;
    const FrameVoxels fv = voxelize_frame(scan, {}, model, false);
    tables.push_back(knn_neighborhood(cur.voxels, fv.voxels, cfg.k, cfg.threads));
  }

  std::ofstream out(out_file);
  if (!out) throw IoError("cannot open " + out_file + " for writing");
  dump_neighborhood_csv(out, tables);
  std::cout << "wrote " << out_file << " (" << cur.voxels.size() << " query voxels, "
            << tables.size() << " past frames)\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"STELA point-cloud sequence segmentation benchmark harness"};
  app.require_subcommand(1);

  CommonOpts prepare_opts, ablate_opts, train_opts, eval_opts, bench_opts, dump_opts;

  auto* prepare = app.add_subcommand("prepare", "stage a strided copy of a sequence directory");
  std::string prepare_input, prepare_sequence = "08";
  int prepare_stride = 10;
  std::string prepare_class_map = "config/semantic_kitti_classes.txt";
  bool prepare_cache = false;
  prepare->add_option("--input", prepare_input, "sequence directory (velodyne/, poses.txt, calib.txt)")
      ->required();
  prepare->add_option("--sequence", prepare_sequence, "sequence id tag");
  prepare->add_option("--stride", prepare_stride, "keep every stride-th frame");
  prepare->add_option("--class-map", prepare_class_map, "class map to copy into the output");
  prepare->add_flag("--cache-voxels", prepare_cache, "also cache encoded sparse voxel sets");
  add_common(prepare, prepare_opts, /*config_required=*/false);

  auto* ablate = app.add_subcommand("ablate", "run a sweep over (k, n_past, aligned, use_stela)");
  add_common(ablate, ablate_opts);

  auto* train = app.add_subcommand("train-toy", "three-stage toy training run");
  add_common(train, train_opts);

  auto* eval = app.add_subcommand("eval", "evaluate a checkpoint");
  std::string eval_checkpoint;
  eval->add_option("--checkpoint", eval_checkpoint, "model checkpoint")->required();
  add_common(eval, eval_opts);

  auto* bench = app.add_subcommand("bench", "local vs global attention benchmark");
  AttentionBenchConfig bench_cfg;
  bench->add_option("--n-grid", bench_cfg.n_grid, "voxel counts");
  bench->add_option("--k-grid", bench_cfg.k_grid, "neighborhood sizes");
  bench->add_option("--d", bench_cfg.feature_dim, "feature dim");
  bench->add_option("--key-dim", bench_cfg.key_dim, "key dim");
  bench->add_option("--repeats", bench_cfg.repeats, "timing repeats (median)");
  bench->add_option("--budget-bytes", bench_cfg.memory_budget_bytes, "memory budget");
  add_common(bench, bench_opts, /*config_required=*/false);

  auto* dump = app.add_subcommand("dump-neighborhood", "dump KNN tables as CSV");
  int dump_frame = 2;
  std::string dump_out = "neighborhood.csv";
  dump->add_option("--frame", dump_frame, "frame index in the train split");
  dump->add_option("--out-file", dump_out, "output CSV path");
  add_common(dump, dump_opts);

  CLI11_PARSE(app, argc, argv);

  try {
    if (prepare->parsed())
      return cmd_prepare(prepare_input, prepare_sequence, prepare_opts, prepare_stride,
                         prepare_class_map, prepare_cache);
    if (ablate->parsed()) return cmd_ablate(ablate_opts);
    if (train->parsed()) return cmd_train_toy(train_opts);
    if (eval->parsed()) return cmd_eval(eval_opts, eval_checkpoint);
    if (bench->parsed()) return cmd_bench(bench_opts, bench_cfg);
    if (dump->parsed()) return cmd_dump_neighborhood(dump_opts, dump_frame, dump_out);
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "unexpected error: " << e.what() << "\n";
    return 2;
  }
  return 0;
}
