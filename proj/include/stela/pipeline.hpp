#pragma once

#include <algorithm>
#include <chrono>
#include <cmath>
#include <string>
#include <vector>

#include "stela/checkpoint.hpp"
#include "stela/config.hpp"
#include "stela/geometry.hpp"
#include "stela/kitti_io.hpp"
#include "stela/losses.hpp"
#include "stela/metrics.hpp"
#include "stela/mlp.hpp"
#include "stela/neighborhood.hpp"
#include "stela/report.hpp"
#include "stela/sparse_grid.hpp"
#include "stela/stela_core.hpp"
#include "stela/synthetic.hpp"

namespace stela {

// Desk-scale stand-in for the full network: point encoder, one shared MLP
// stage per scale in place of the convolutional blocks, the attention module
// on the (single) skip level, and an MLP decoder over the fused features.
struct SegModel {
  GridConfig grid;
  ClassTable classes;
  Mlp<double> encoder;
  std::vector<Mlp<double>> stages;
  StelaParams<double> stela;
  Mlp<double> decoder;

  bool use_stela = true;
  int k = 16;
  int n_past = 2;
  bool aligned = true;
  int threads = 1;
};

inline SegModel make_model(const ExperimentConfig& cfg, int num_classes) {
  SegModel m;
  m.grid = cfg.grid;
  m.grid.feature_dim = cfg.feature_dim;
  m.classes = ClassTable::uniform(num_classes);
  std::vector<int> enc_widths = {kPointFeatureDim};
  enc_widths.insert(enc_widths.end(), cfg.encoder_hidden.begin(), cfg.encoder_hidden.end());
  enc_widths.push_back(cfg.feature_dim);
  m.encoder = make_mlp<double>(enc_widths, cfg.seed, "encoder");
  for (int s = 0; s < cfg.num_scales; ++s)
    m.stages.push_back(make_mlp<double>({cfg.feature_dim, cfg.feature_dim, cfg.feature_dim},
                                        cfg.seed + static_cast<std::uint64_t>(s),
                                        "stage"));
  m.stela = make_stela_params<double>(cfg.feature_dim, cfg.key_dim, cfg.seed);
  std::vector<int> dec_widths = {cfg.feature_dim};
  dec_widths.insert(dec_widths.end(), cfg.decoder_hidden.begin(), cfg.decoder_hidden.end());
  dec_widths.push_back(num_classes);
  m.decoder = make_mlp<double>(dec_widths, cfg.seed, "decoder");
  m.use_stela = cfg.use_stela;
  m.k = cfg.k;
  m.n_past = cfg.n_past;
  m.aligned = cfg.aligned;
  m.threads = cfg.threads;
  return m;
}

// --- per-frame voxelization ---------------------------------------------------

struct FrameVoxels {
  SparseVoxelSet<double> voxels;          // after encoder + stages
  std::vector<std::uint16_t> labels;      // per voxel; kIgnoreId where unknown
  EncodeCache<double> enc_cache;
  std::vector<MlpCache<double>> stage_caches;
  bool cached = false;
};

// Majority non-ignore label per voxel; ties go to the smaller class id.
inline std::vector<std::uint16_t> majority_voxel_labels(
    const std::vector<std::uint16_t>& point_labels, const std::vector<std::int32_t>& point_to_voxel,
    Eigen::Index num_voxels, int num_classes) {
  std::vector<std::uint16_t> out(static_cast<std::size_t>(num_voxels), kIgnoreId);
  std::vector<std::vector<std::uint32_t>> votes(
      static_cast<std::size_t>(num_voxels),
      std::vector<std::uint32_t>(static_cast<std::size_t>(num_classes), 0));
  for (std::size_t p = 0; p < point_labels.size(); ++p) {
    const std::int32_t v = point_to_voxel[p];
    if (v < 0) continue;
    const std::uint16_t label = point_labels[p];
    if (label == kIgnoreId || label >= num_classes) continue;
    ++votes[static_cast<std::size_t>(v)][label];
  }
  for (Eigen::Index v = 0; v < num_voxels; ++v) {
    std::uint32_t best = 0;
    for (int c = 0; c < num_classes; ++c) {
      const std::uint32_t n = votes[static_cast<std::size_t>(v)][static_cast<std::size_t>(c)];
      if (n > best) {
        best = n;
        out[static_cast<std::size_t>(v)] = static_cast<std::uint16_t>(c);
      }
    }
  }
  return out;
}

inline FrameVoxels voxelize_frame(const RawScan& scan, const std::vector<std::uint16_t>& labels,
                                  const SegModel& model, bool with_cache) {
  std::vector<PointFeature> features;
  std::vector<Index3> assignments;
  std::vector<std::uint16_t> kept_labels;
  features.reserve(scan.points.size());
  assignments.reserve(scan.points.size());
  const bool has_labels = !labels.empty();
  for (std::size_t p = 0; p < scan.points.size(); ++p) {
    const ScanPoint& pt = scan.points[p];
    const CylCoord cyl = to_cylindrical(pt.x, pt.y, pt.z);
    const auto idx = voxel_index(cyl, model.grid);
    if (!idx) continue;  // outside grid bounds: dropped, not clamped
    features.push_back(build_point_features(pt.x, pt.y, pt.z, cyl, pt.intensity));
    assignments.push_back(*idx);
    if (has_labels) kept_labels.push_back(labels[p]);
  }

  FrameVoxels out;
  out.cached = with_cache;
  std::vector<std::int32_t> point_to_voxel;
  out.voxels = encode_points(features, assignments, model.encoder, model.grid,
                             with_cache ? &out.enc_cache : nullptr, &point_to_voxel);
  if (has_labels)
    out.labels = majority_voxel_labels(kept_labels, point_to_voxel, out.voxels.size(),
                                       model.classes.num_classes);

  for (const Mlp<double>& stage : model.stages) {
    MlpCache<double> cache;
    out.voxels.features =
        mlp_forward(stage, out.voxels.features, with_cache ? &cache : nullptr);
    if (with_cache) out.stage_caches.push_back(std::move(cache));
  }
  return out;
}

// --- window forward / backward -------------------------------------------------

struct WindowForward {
  FrameVoxels current;
  std::vector<FrameVoxels> past;  // past[f] holds frame t-(f+1)
  std::vector<NeighborhoodEntry> tables;
  StelaWorkspace<double> stela_ws;
  MlpCache<double> decoder_cache;
  Matd fused;
  Matd logits;
};

// `past_frames[f]` is frame t-(f+1). Scans are aligned into the current
// sensor frame first when the model says so.
inline WindowForward forward_window(const SegModel& model, const PointCloudFrame& current,
                                    const std::vector<const PointCloudFrame*>& past_frames,
                                    bool with_cache, AttentionFlops* flops = nullptr) {
  WindowForward wf;
  wf.current = voxelize_frame(current.scan, current.labels, model, with_cache);

  std::vector<const SparseVoxelSet<double>*> past_sets;
  if (model.use_stela) {
    for (const PointCloudFrame* frame : past_frames) {
      const RawScan scan = model.aligned
                               ? align_to_frame(frame->scan, frame->pose, current.pose)
                               : frame->scan;
      wf.past.push_back(voxelize_frame(scan, {}, model, with_cache));
    }
    for (FrameVoxels& fv : wf.past) {
      wf.tables.push_back(
          knn_neighborhood(wf.current.voxels, fv.voxels, model.k, model.threads));
      past_sets.push_back(&fv.voxels);
    }
    wf.fused = stela_forward(wf.current.voxels, past_sets, wf.tables, model.stela,
                             with_cache ? &wf.stela_ws : nullptr, flops, model.threads);
  } else {
    wf.fused = wf.current.voxels.features;
  }

  wf.logits = mlp_forward(model.decoder, wf.fused, with_cache ? &wf.decoder_cache : nullptr);
  return wf;
}

struct ModelGrads {
  MlpGrad<double> encoder;
  std::vector<MlpGrad<double>> stages;
  MlpGrad<double> decoder;
  MlpGrad<double> key_adapter;
  Matd gate_t_weight;
  Vecd gate_t_bias;
  Matd gate_m_weight;
  Vecd gate_m_bias;

  static ModelGrads zeros_like(const SegModel& m) {
    ModelGrads g;
    g.encoder = MlpGrad<double>::zeros_like(m.encoder);
    for (const auto& stage : m.stages) g.stages.push_back(MlpGrad<double>::zeros_like(stage));
    g.decoder = MlpGrad<double>::zeros_like(m.decoder);
    g.key_adapter = MlpGrad<double>::zeros_like(m.stela.key_adapter);
    g.gate_t_weight = Matd::Zero(m.stela.gate_t.weight.rows(), m.stela.gate_t.weight.cols());
    g.gate_t_bias = Vecd::Zero(m.stela.gate_t.bias.size());
    g.gate_m_weight = Matd::Zero(m.stela.gate_m.weight.rows(), m.stela.gate_m.weight.cols());
    g.gate_m_bias = Vecd::Zero(m.stela.gate_m.bias.size());
    return g;
  }
};

// Backprop through decoder, attention, stages, and the point encoders of
// every frame in the window.
inline void backward_window(const SegModel& model, WindowForward& wf, const Matd& d_logits,
                            ModelGrads& grads) {
  Matd d_fused = mlp_backward(model.decoder, wf.decoder_cache, d_logits, grads.decoder);

  Matd d_current;
  std::vector<Matd> d_past;
  if (model.use_stela) {
    StelaGradients<double> sg =
        stela_backward(model.stela, wf.stela_ws, d_fused, model.threads);
    grads.key_adapter += sg.d_key_adapter;
    grads.gate_t_weight += sg.d_gate_t_weight;
    grads.gate_t_bias += sg.d_gate_t_bias;
    grads.gate_m_weight += sg.d_gate_m_weight;
    grads.gate_m_bias += sg.d_gate_m_bias;
    d_current = std::move(sg.d_current);
    d_past = std::move(sg.d_past);
  } else {
    d_current = d_fused;
  }

  auto backprop_frame = [&](FrameVoxels& fv, Matd d) {
    for (int s = static_cast<int>(model.stages.size()) - 1; s >= 0; --s)
      d = mlp_backward(model.stages[s], fv.stage_caches[s], d,
                       grads.stages[static_cast<std::size_t>(s)]);
    encode_points_backward(model.encoder, fv.enc_cache, d, grads.encoder);
  };
  backprop_frame(wf.current, std::move(d_current));
  for (std::size_t f = 0; f < wf.past.size(); ++f)
    backprop_frame(wf.past[f], std::move(d_past[f]));
}

inline void apply_grads(SegModel& model, const ModelGrads& grads, double lr,
                        bool train_backbone, bool train_stela) {
  if (train_backbone) {
    mlp_apply_gradient(model.encoder, grads.encoder, lr);
    for (std::size_t s = 0; s < model.stages.size(); ++s)
      mlp_apply_gradient(model.stages[s], grads.stages[s], lr);
    mlp_apply_gradient(model.decoder, grads.decoder, lr);
  }
  if (train_stela) {
    mlp_apply_gradient(model.stela.key_adapter, grads.key_adapter, lr);
    model.stela.gate_t.weight -= lr * grads.gate_t_weight;
    model.stela.gate_t.bias -= lr * grads.gate_t_bias;
    model.stela.gate_m.weight -= lr * grads.gate_m_weight;
    model.stela.gate_m.bias -= lr * grads.gate_m_bias;
  }
}

// --- training loop --------------------------------------------------------------

struct TrainStageResult {
  std::vector<double> epoch_losses;
  double seconds = 0.0;
};

inline std::vector<const PointCloudFrame*> past_window(const std::vector<PointCloudFrame>& frames,
                                                       std::size_t t, int n_past) {
  std::vector<const PointCloudFrame*> past;
  for (int f = 1; f <= n_past && t >= static_cast<std::size_t>(f); ++f)
    past.push_back(&frames[t - static_cast<std::size_t>(f)]);
  return past;
}

// One pass of stochastic gradient descent per window, windows in time order.
// plateau_patience > 0 halves the rate after that many non-improving epochs.
inline TrainStageResult run_training_stage(SegModel& model,
                                           const std::vector<PointCloudFrame>& frames, int epochs,
                                           double lr, bool train_backbone, bool train_stela,
                                           int plateau_patience = 0) {
  const auto start = std::chrono::steady_clock::now();
  TrainStageResult result;
  double best_loss = std::numeric_limits<double>::infinity();
  int stale_epochs = 0;
  for (int epoch = 0; epoch < epochs; ++epoch) {
    double loss_sum = 0.0;
    std::size_t windows = 0;
    for (std::size_t t = 0; t < frames.size(); ++t) {
      const auto past = past_window(frames, t, model.use_stela ? model.n_past : 0);
      WindowForward wf = forward_window(model, frames[t], past, /*with_cache=*/true);
      if (wf.current.voxels.size() == 0) continue;
      const LossResult loss = segmentation_loss(wf.logits, wf.current.labels, model.classes);
      if (!std::isfinite(loss.loss))
        throw DataError("training diverged: non-finite loss at epoch " + std::to_string(epoch));
      loss_sum += loss.loss;
      ++windows;
      ModelGrads grads = ModelGrads::zeros_like(model);
      backward_window(model, wf, loss.grad, grads);
      apply_grads(model, grads, lr, train_backbone, train_stela);
    }
    const double epoch_loss = windows ? loss_sum / static_cast<double>(windows) : 0.0;
    result.epoch_losses.push_back(epoch_loss);
    if (plateau_patience > 0) {
      if (epoch_loss < best_loss - 1e-12) {
        best_loss = epoch_loss;
        stale_epochs = 0;
      } else if (++stale_epochs >= plateau_patience) {
        lr *= 0.5;
        stale_epochs = 0;
      }
    }
  }
  result.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  return result;
}

struct EvalResult {
  ConfusionMatrix confusion;
  MiouResult metrics;
  AttentionFlops flops;
};

inline EvalResult evaluate(const SegModel& model, const std::vector<PointCloudFrame>& frames) {
  EvalResult res;
  res.confusion = ConfusionMatrix(model.classes.num_classes);
  for (std::size_t t = 0; t < frames.size(); ++t) {
    const auto past = past_window(frames, t, model.use_stela ? model.n_past : 0);
    WindowForward wf =
        forward_window(model, frames[t], past, /*with_cache=*/false, &res.flops);
    std::vector<std::uint16_t> pred(static_cast<std::size_t>(wf.logits.rows()));
    for (Eigen::Index i = 0; i < wf.logits.rows(); ++i) {
      Eigen::Index arg = 0;
      wf.logits.row(i).maxCoeff(&arg);
      pred[static_cast<std::size_t>(i)] = static_cast<std::uint16_t>(arg);
    }
    accumulate_confusion(pred, wf.current.labels, model.classes, res.confusion);
  }
  res.metrics = miou(res.confusion);
  return res;
}

// --- model checkpointing ---------------------------------------------------------

namespace detail {

inline void mlp_to_tensors(const std::string& prefix, const Mlp<double>& mlp,
                           std::vector<NamedTensor>& out) {
  for (std::size_t l = 0; l < mlp.layers.size(); ++l) {
    out.push_back(tensor_from_matrix(prefix + "." + std::to_string(l) + ".weight",
                                     mlp.layers[l].weight));
    out.push_back(
        tensor_from_vector(prefix + "." + std::to_string(l) + ".bias", mlp.layers[l].bias));
  }
}

inline void mlp_from_tensors(const std::string& prefix, const TensorMap& map, Mlp<double>& mlp) {
  for (std::size_t l = 0; l < mlp.layers.size(); ++l) {
    mlp.layers[l].weight =
        matrix_from_tensor<double>(map.at(prefix + "." + std::to_string(l) + ".weight"));
    mlp.layers[l].bias =
        vector_from_tensor<double>(map.at(prefix + "." + std::to_string(l) + ".bias"));
  }
  mlp.validate();
}

}  // namespace detail

inline std::vector<NamedTensor> model_to_tensors(const SegModel& model) {
  std::vector<NamedTensor> tensors;
  detail::mlp_to_tensors("encoder", model.encoder, tensors);
  for (std::size_t s = 0; s < model.stages.size(); ++s)
    detail::mlp_to_tensors("stage." + std::to_string(s), model.stages[s], tensors);
  detail::mlp_to_tensors("stela.key_adapter", model.stela.key_adapter, tensors);
  tensors.push_back(tensor_from_matrix("stela.gate_t.weight", model.stela.gate_t.weight));
  tensors.push_back(tensor_from_vector("stela.gate_t.bias", model.stela.gate_t.bias));
  tensors.push_back(tensor_from_matrix("stela.gate_m.weight", model.stela.gate_m.weight));
  tensors.push_back(tensor_from_vector("stela.gate_m.bias", model.stela.gate_m.bias));
  detail::mlp_to_tensors("decoder", model.decoder, tensors);
  return tensors;
}

// Loads parameters into a model whose architecture already matches.
inline void model_from_tensors(const std::vector<NamedTensor>& tensors, SegModel& model) {
  const TensorMap map(tensors);
  detail::mlp_from_tensors("encoder", map, model.encoder);
  for (std::size_t s = 0; s < model.stages.size(); ++s)
    detail::mlp_from_tensors("stage." + std::to_string(s), map, model.stages[s]);
  detail::mlp_from_tensors("stela.key_adapter", map, model.stela.key_adapter);
  model.stela.gate_t.weight = matrix_from_tensor<double>(map.at("stela.gate_t.weight"));
  model.stela.gate_t.bias = vector_from_tensor<double>(map.at("stela.gate_t.bias"));
  model.stela.gate_m.weight = matrix_from_tensor<double>(map.at("stela.gate_m.weight"));
  model.stela.gate_m.bias = vector_from_tensor<double>(map.at("stela.gate_m.bias"));
  detail::mlp_from_tensors("decoder", map, model.decoder);
  model.stela.validate();
}

// --- data loading -----------------------------------------------------------------

// Reads a prepared SemanticKITTI-layout directory (see the `prepare` verb)
// into frames, remapping raw labels through the directory's classes.txt.
inline std::vector<PointCloudFrame> load_prepared_frames(const std::filesystem::path& dir,
                                                         int* num_classes_out = nullptr) {
  const SequenceManifest manifest = scan_sequence_dir(dir, dir.filename().string());
  const ClassMap class_map = ClassMap::load(dir / "classes.txt");
  if (num_classes_out) *num_classes_out = class_map.num_classes();
  std::vector<PointCloudFrame> frames;
  for (std::size_t i = 0; i < manifest.size(); ++i) {
    PointCloudFrame frame;
    frame.scan = read_scan(manifest.scan_paths[i]);
    frame.pose = manifest.poses[i];
    if (!manifest.label_paths[i].empty()) {
      const LabelArray labels = read_labels(manifest.label_paths[i], frame.scan.size());
      frame.labels = class_map.remap(labels.semantic);
    }
    frames.push_back(std::move(frame));
  }
  return frames;
}

struct DataSplits {
  std::vector<PointCloudFrame> train;
  std::vector<PointCloudFrame> val;
  int num_classes = 0;
};

inline DataSplits load_data(const ExperimentConfig& cfg) {
  DataSplits splits;
  if (cfg.data_kind == "synthetic") {
    splits.num_classes = cfg.synthetic.num_classes();
    splits.train = make_synthetic_sequence(cfg.synthetic, cfg.seed ^ 0x7261696eULL);
    SyntheticSpec val_spec = cfg.synthetic;
    val_spec.num_frames = cfg.synthetic_val_frames;
    splits.val = make_synthetic_sequence(val_spec, cfg.seed ^ 0x76616cULL);
  } else if (cfg.data_kind == "prepared") {
    std::vector<PointCloudFrame> frames = load_prepared_frames(cfg.data_path, &splits.num_classes);
    // Hold out the tail as validation.
    const std::size_t n_val =
        std::min<std::size_t>(frames.size() / 4 + 1, frames.size());
    splits.train.assign(frames.begin(), frames.end() - static_cast<std::ptrdiff_t>(n_val));
    splits.val.assign(frames.end() - static_cast<std::ptrdiff_t>(n_val), frames.end());
  } else {
    throw ConfigError("unknown data.kind '" + cfg.data_kind + "'");
  }
  return splits;
}

// Deterministic upper-bound estimate of resident tensor bytes for one window.
inline std::uint64_t estimate_peak_memory(const ExperimentConfig& cfg, std::uint64_t max_points,
                                          std::uint64_t max_voxels) {
  const std::uint64_t d = static_cast<std::uint64_t>(cfg.feature_dim);
  const std::uint64_t dk = static_cast<std::uint64_t>(cfg.key_dim);
  const std::uint64_t frames = static_cast<std::uint64_t>(cfg.n_past) + 1;
  const std::uint64_t k = static_cast<std::uint64_t>(cfg.k);
  std::uint64_t enc_acts = 0;
  std::uint64_t prev = kPointFeatureDim;
  for (int w : cfg.encoder_hidden) {
    enc_acts += prev * 8 + static_cast<std::uint64_t>(w) * 8;
    prev = static_cast<std::uint64_t>(w);
  }
  const std::uint64_t per_point = kPointFeatureDim * 8 + enc_acts + d * 8;
  const std::uint64_t per_voxel = (d * 2 + dk) * 8 + 3 * 4;
  const std::uint64_t gathered = max_voxels * k * (d + dk + 8) * 8 * (frames - 1);
  return max_points * per_point * frames + max_voxels * per_voxel * frames + gathered;
}

// --- experiment driver ---------------------------------------------------------------

inline std::map<std::string, std::string> config_echo(const ExperimentConfig& cfg) {
  std::map<std::string, std::string> echo;
  echo["seed"] = std::to_string(cfg.seed);
  echo["threads"] = std::to_string(cfg.threads);
  echo["k"] = std::to_string(cfg.k);
  echo["n_past"] = std::to_string(cfg.n_past);
  echo["aligned"] = cfg.aligned ? "true" : "false";
  echo["use_stela"] = cfg.use_stela ? "true" : "false";
  echo["feature_dim"] = std::to_string(cfg.feature_dim);
  echo["key_dim"] = std::to_string(cfg.key_dim);
  echo["num_scales"] = std::to_string(cfg.num_scales);
  echo["epochs_baseline"] = std::to_string(cfg.epochs_baseline);
  echo["epochs_warmup"] = std::to_string(cfg.epochs_warmup);
  echo["epochs_joint"] = std::to_string(cfg.epochs_joint);
  echo["data.kind"] = cfg.data_kind;
  echo["grid"] = std::to_string(cfg.grid.h) + "x" + std::to_string(cfg.grid.w) + "x" +
                 std::to_string(cfg.grid.l);
  return echo;
}

struct TrainOutcome {
  SegModel model;
  RunReport report;
};

// Three-stage schedule: single-frame pretrain, attention warmup with the
// backbone frozen, then a joint fine-tune at the low rate with plateau decay.
// Baseline configs (use_stela = false) skip the warmup.
inline TrainOutcome train_toy(const ExperimentConfig& cfg) {
  cfg.validate();
  const DataSplits data = load_data(cfg);

  SegModel model = make_model(cfg, data.num_classes);
  TrainOutcome outcome{std::move(model), RunReport{}};
  RunReport& report = outcome.report;
  report.config_echo = config_echo(cfg);

  SegModel& m = outcome.model;
  const bool with_stela = cfg.use_stela && cfg.n_past > 0;

  // Stage 1: single-frame baseline.
  m.use_stela = false;
  TrainStageResult stage1 = run_training_stage(m, data.train, cfg.epochs_baseline,
                                               cfg.lr_pretrain, /*backbone=*/true,
                                               /*stela=*/false);
  report.stage_seconds.emplace_back("pretrain", stage1.seconds);

  if (with_stela) {
    // Stage 2: attention warmup, backbone frozen.
    m.use_stela = true;
    TrainStageResult stage2 = run_training_stage(m, data.train, cfg.epochs_warmup,
                                                 cfg.lr_pretrain, /*backbone=*/false,
                                                 /*stela=*/true);
    report.stage_seconds.emplace_back("warmup", stage2.seconds);
    report.warmup_losses = stage2.epoch_losses;

    // Stage 3: joint fine-tune.
    TrainStageResult stage3 =
        run_training_stage(m, data.train, cfg.epochs_joint, cfg.lr_joint, /*backbone=*/true,
                           /*stela=*/true, cfg.plateau_patience);
    report.stage_seconds.emplace_back("joint", stage3.seconds);
  } else {
    m.use_stela = false;
    TrainStageResult stage3 =
        run_training_stage(m, data.train, cfg.epochs_joint, cfg.lr_joint, /*backbone=*/true,
                           /*stela=*/false, cfg.plateau_patience);
    report.stage_seconds.emplace_back("joint", stage3.seconds);
  }

  const auto eval_start = std::chrono::steady_clock::now();
  const EvalResult eval = evaluate(m, data.val);
  report.stage_seconds.emplace_back(
      "eval", std::chrono::duration<double>(std::chrono::steady_clock::now() - eval_start).count());

  report.per_class_iou = eval.metrics.per_class;
  report.miou = eval.metrics.mean;
  report.flops_correlation = eval.flops.correlation;
  report.flops_aggregation = eval.flops.aggregation;

  std::uint64_t max_points = 0;
  for (const auto& f : data.train) max_points = std::max<std::uint64_t>(max_points, f.scan.size());
  std::uint64_t max_voxels = 0;
  for (const auto& f : data.val) max_voxels = std::max<std::uint64_t>(max_voxels, f.scan.size());
  report.peak_memory_bytes = estimate_peak_memory(cfg, max_points, std::min(max_points, max_voxels));

  for (int c = 0; c < data.num_classes; ++c) report.class_names.push_back("class_" + std::to_string(c));
  return outcome;
}

// Runs every config; a run that throws is flagged failed and the grid
// continues. Reports come back in config order.
inline std::vector<RunReport> run_ablation(const std::vector<ExperimentConfig>& configs) {
  std::vector<RunReport> reports;
  for (const ExperimentConfig& cfg : configs) {
    try {
      reports.push_back(train_toy(cfg).report);
    } catch (const Error& e) {
      RunReport failed;
      failed.config_echo = config_echo(cfg);
      failed.failed = true;
      failed.failure_reason = e.what();
      reports.push_back(std::move(failed));
    }
  }
  return reports;
}

}  // namespace stela
