#pragma once

#include <cmath>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "sceneglue/checkpoint.hpp"
#include "sceneglue/model.hpp"

namespace sceneglue::train {

struct TrainConfig {
  model::ModelConfig model;
  std::size_t batch_size = 4;
  double base_lr = 1e-4;
  std::size_t warmup_steps = 100;
  std::size_t total_steps = 2000;
  double weight_decay = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double adam_eps = 1e-8;
  double grad_clip_norm = 10.0;
  std::uint64_t seed = 0;
  std::size_t checkpoint_every = 500;
};

inline nlohmann::json train_config_to_json(const TrainConfig& cfg) {
  return nlohmann::json{
      {"channels", cfg.model.channels},
      {"layers", cfg.model.layers},
      {"scale_dims", cfg.model.scale_dims},
      {"spatial_hidden", cfg.model.spatial_hidden},
      {"sinkhorn_iters_train", cfg.model.sinkhorn_iters_train},
      {"sinkhorn_iters_infer", cfg.model.sinkhorn_iters_infer},
      {"match_threshold", cfg.model.match_threshold},
      {"alpha", cfg.model.alpha},
      {"batch_size", cfg.batch_size},
      {"base_lr", cfg.base_lr},
      {"warmup_steps", cfg.warmup_steps},
      {"total_steps", cfg.total_steps},
      {"weight_decay", cfg.weight_decay},
      {"beta1", cfg.beta1},
      {"beta2", cfg.beta2},
      {"adam_eps", cfg.adam_eps},
      {"grad_clip_norm", cfg.grad_clip_norm},
      {"seed", cfg.seed},
      {"checkpoint_every", cfg.checkpoint_every},
  };
}

inline TrainConfig train_config_from_json(const nlohmann::json& j) {
  TrainConfig cfg;
  cfg.model.channels = j.at("channels").get<std::size_t>();
  cfg.model.layers = j.at("layers").get<std::size_t>();
  auto dims = j.at("scale_dims").get<std::vector<std::size_t>>();
  for (std::size_t s = 0; s < kNumScales; ++s) cfg.model.scale_dims[s] = dims.at(s);
  cfg.model.spatial_hidden = j.at("spatial_hidden").get<std::size_t>();
  cfg.model.sinkhorn_iters_train = j.at("sinkhorn_iters_train").get<std::size_t>();
  cfg.model.sinkhorn_iters_infer = j.at("sinkhorn_iters_infer").get<std::size_t>();
  cfg.model.match_threshold = j.at("match_threshold").get<double>();
  cfg.model.alpha = j.at("alpha").get<double>();
  cfg.batch_size = j.at("batch_size").get<std::size_t>();
  cfg.base_lr = j.at("base_lr").get<double>();
  cfg.warmup_steps = j.at("warmup_steps").get<std::size_t>();
  cfg.total_steps = j.at("total_steps").get<std::size_t>();
  cfg.weight_decay = j.at("weight_decay").get<double>();
  cfg.beta1 = j.at("beta1").get<double>();
  cfg.beta2 = j.at("beta2").get<double>();
  cfg.adam_eps = j.at("adam_eps").get<double>();
  cfg.grad_clip_norm = j.at("grad_clip_norm").get<double>();
  cfg.seed = j.at("seed").get<std::uint64_t>();
  cfg.checkpoint_every = j.at("checkpoint_every").get<std::size_t>();
  return cfg;
}

// Linear warmup to base_lr, then cosine decay to 0 at total_steps.
inline double lr_at(std::size_t step, const TrainConfig& cfg) {
  if (cfg.warmup_steps >= cfg.total_steps)
    throw ConfigError("lr_at: warmup_steps must be < total_steps");
  if (step <= cfg.warmup_steps) {
    if (cfg.warmup_steps == 0) return cfg.base_lr;
    return cfg.base_lr * static_cast<double>(step) /
           static_cast<double>(cfg.warmup_steps);
  }
  const double progress =
      static_cast<double>(step - cfg.warmup_steps) /
      static_cast<double>(cfg.total_steps - cfg.warmup_steps);
  constexpr double kPi = 3.14159265358979323846;
  return cfg.base_lr * 0.5 * (1.0 + std::cos(kPi * progress));
}

// First and second Adam moments, aligned with for_each_param order.
struct OptimizerState {
  std::vector<std::vector<double>> m;
  std::vector<std::vector<double>> v;
  std::uint64_t step = 0;  // completed optimizer steps

  static OptimizerState init(model::ModelParams& params) {
    OptimizerState st;
    model::for_each_param(params, [&st](const std::string&, Tensor& t) {
      st.m.emplace_back(t.size(), 0.0);
      st.v.emplace_back(t.size(), 0.0);
    });
    return st;
  }
};

// Bias-corrected adaptive-moment update with decoupled weight decay.
inline void adamw_step(model::ModelParams& params, OptimizerState& opt,
                       double lr, const TrainConfig& cfg) {
  opt.step += 1;
  const double bc1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(opt.step));
  const double bc2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(opt.step));
  std::size_t idx = 0;
  model::for_each_param(params, [&](const std::string& name, Tensor& t) {
    auto& st = *t.storage();
    if (st.grad.size() != st.value.size())
      throw std::runtime_error("adamw_step: missing gradient for " + name);
    auto& m = opt.m[idx];
    auto& v = opt.v[idx];
    for (std::size_t k = 0; k < st.value.size(); ++k) {
      const double g = st.grad[k];
      m[k] = cfg.beta1 * m[k] + (1.0 - cfg.beta1) * g;
      v[k] = cfg.beta2 * v[k] + (1.0 - cfg.beta2) * g * g;
      const double mhat = m[k] / bc1;
      const double vhat = v[k] / bc2;
      st.value[k] -= lr * (mhat / (std::sqrt(vhat) + cfg.adam_eps) +
                           cfg.weight_decay * st.value[k]);
    }
    ++idx;
  });
}

struct StepMetrics {
  std::size_t step = 0;
  double loss = 0.0;
  double feature_loss = 0.0;
  double scene_loss = 0.0;
  double lr = 0.0;
  double grad_norm = 0.0;
};

namespace detail {

inline double global_grad_norm(model::ModelParams& params) {
  double sq = 0.0;
  model::for_each_param(params, [&sq](const std::string&, Tensor& t) {
    for (double g : t.storage()->grad) sq += g * g;
  });
  return std::sqrt(sq);
}

inline void scale_grads(model::ModelParams& params, double factor) {
  model::for_each_param(params, [factor](const std::string&, Tensor& t) {
    for (double& g : t.storage()->grad) g *= factor;
  });
}

inline void zero_grads(model::ModelParams& params) {
  model::for_each_param(params, [](const std::string&, Tensor& t) {
    t.storage()->ensure_grad();
    t.storage()->zero_grad();
  });
}

inline void assert_params_finite(model::ModelParams& params, std::size_t step) {
  model::for_each_param(params, [step](const std::string& name, Tensor& t) {
    for (double v : t.value())
      if (!std::isfinite(v))
        throw std::runtime_error("non-finite parameter '" + name +
                                 "' at step " + std::to_string(step));
  });
}

}  // namespace detail

struct TrainResult {
  model::ModelParams params;
  OptimizerState opt;
  std::vector<StepMetrics> metrics;
  std::uint64_t final_step = 0;
};

inline io::Checkpoint make_checkpoint(model::ModelParams& params,
                                      const OptimizerState& opt,
                                      const TrainConfig& cfg) {
  io::Checkpoint ckpt;
  ckpt.step = opt.step;
  ckpt.config_json = train_config_to_json(cfg).dump();
  ckpt.params = io::snapshot_params(params);
  ckpt.moment_m = ckpt.params;
  ckpt.moment_v = ckpt.params;
  for (std::size_t i = 0; i < opt.m.size(); ++i) {
    ckpt.moment_m.entries[i].second = opt.m[i];
    ckpt.moment_v.entries[i].second = opt.v[i];
  }
  return ckpt;
}

inline void restore_from_checkpoint(const io::Checkpoint& ckpt,
                                    model::ModelParams& params,
                                    OptimizerState& opt) {
  io::restore_params(params, ckpt.params);
  opt = OptimizerState::init(params);
  opt.step = ckpt.step;
  for (std::size_t i = 0; i < opt.m.size(); ++i) {
    opt.m[i] = ckpt.moment_m.entries[i].second;
    opt.v[i] = ckpt.moment_v.entries[i].second;
  }
}

// Deterministic end-to-end optimization. Batch b of step s is pairs
// [s*batch_size, ...) of the dataset, cycled. Returns metrics per step;
// writes a checkpoint every checkpoint_every steps when a path is given.
inline TrainResult train(const TrainConfig& cfg,
                         const std::vector<synth::SyntheticPair>& pairs,
                         const std::string& checkpoint_path = "",
                         std::optional<io::Checkpoint> resume = std::nullopt) {
  if (pairs.empty()) throw ConfigError("train: empty dataset");
  TrainResult result;
  result.params = model::init_params(cfg.model, cfg.seed);
  result.opt = OptimizerState::init(result.params);
  if (resume) restore_from_checkpoint(*resume, result.params, result.opt);

  for (std::size_t step = result.opt.step; step < cfg.total_steps; ++step) {
    Tape tape;
    Tensor batch_loss, batch_feature, batch_scene;
    std::size_t used = 0;
    for (std::size_t b = 0; b < cfg.batch_size; ++b) {
      const auto& pair = pairs[(step * cfg.batch_size + b) % pairs.size()];
      model::ForwardResult fwd =
          model::forward_pair(result.params, cfg.model, pair.source, pair.target,
                              &tape, cfg.model.sinkhorn_iters_train);
      model::Losses losses;
      try {
        losses = model::compute_losses(fwd, pair.gt, cfg.model.alpha);
      } catch (const assign::UndefinedLossError&) {
        continue;  // pair carries no supervision at all
      }
      batch_loss = used ? add(batch_loss, losses.total) : losses.total;
      batch_feature = used ? add(batch_feature, losses.feature) : losses.feature;
      batch_scene = used ? add(batch_scene, losses.scene) : losses.scene;
      ++used;
    }
    if (used == 0) continue;
    batch_loss = scale(batch_loss, 1.0 / static_cast<double>(used));

    const double loss_value = batch_loss.scalar();
    if (!std::isfinite(loss_value))
      throw std::runtime_error("train: non-finite loss at step " +
                               std::to_string(step));

    detail::zero_grads(result.params);
    tape.backward(batch_loss);
    double gnorm = detail::global_grad_norm(result.params);
    if (cfg.grad_clip_norm > 0.0 && gnorm > cfg.grad_clip_norm)
      detail::scale_grads(result.params, cfg.grad_clip_norm / gnorm);

    const double lr = lr_at(step + 1, cfg);
    adamw_step(result.params, result.opt, lr, cfg);
    detail::assert_params_finite(result.params, step);

    StepMetrics m;
    m.step = step;
    m.loss = loss_value;
    m.feature_loss = batch_feature.scalar() / static_cast<double>(used);
    m.scene_loss = batch_scene.scalar() / static_cast<double>(used);
    m.lr = lr;
    m.grad_norm = gnorm;
    result.metrics.push_back(m);

    if (!checkpoint_path.empty() && cfg.checkpoint_every > 0 &&
        (step + 1) % cfg.checkpoint_every == 0)
      io::write_checkpoint(checkpoint_path,
                           make_checkpoint(result.params, result.opt, cfg));
  }
  result.final_step = result.opt.step;
  if (!checkpoint_path.empty())
    io::write_checkpoint(checkpoint_path,
                         make_checkpoint(result.params, result.opt, cfg));
  return result;
}

inline std::string metrics_csv(const std::vector<StepMetrics>& metrics) {
  std::ostringstream os;
  os << "step,loss,feature_loss,scene_loss,lr,grad_norm\n";
  os.precision(17);
  for (const auto& m : metrics)
    os << m.step << ',' << m.loss << ',' << m.feature_loss << ','
       << m.scene_loss << ',' << m.lr << ',' << m.grad_norm << '\n';
  return os.str();
}

}  // namespace sceneglue::train
