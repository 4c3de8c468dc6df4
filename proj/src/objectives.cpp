#include "actionset/objectives.hpp"

#include <cmath>
#include <string>

#include "actionset/errors.hpp"

namespace actionset {

namespace {

void require_finite(double v, const char* term) {
  if (!std::isfinite(v)) throw ObjectiveError(term, "value " + std::to_string(v));
}

double kl_categorical(const ActionPosterior& q, const Eigen::VectorXd& log_p) {
  double kl = 0.0;
  for (int k = 0; k < q.size(); ++k) {
    if (q[k] > 0.0) kl += q[k] * (std::log(q[k]) - log_p[k]);
  }
  return kl;
}

Eigen::MatrixXd fill_normal(Eigen::Index rows, Eigen::Index cols, Rng& rng) {
  std::normal_distribution<double> normal(0.0, 1.0);
  Eigen::MatrixXd out(rows, cols);
  for (Eigen::Index c = 0; c < cols; ++c) {
    for (Eigen::Index r = 0; r < rows; ++r) out(r, c) = normal(rng);
  }
  return out;
}

/// Adds the log-var-clamp-masked gradient of a mixture component.
void add_mixture_grad(const ModelState& m, ModelState& g, int k, const Eigen::VectorXd& d_mean,
                      const Eigen::VectorXd& d_log_var) {
  const int dim = m.dims.latent_dim;
  auto& gw = g.mixture.weight();
  const auto& w = m.mixture.weight();
  gw.col(k).head(dim) += d_mean;
  for (int i = 0; i < dim; ++i) {
    const double raw = w(dim + i, k);
    if (raw >= kLogVarMin && raw <= kLogVarMax) gw(dim + i, k) += d_log_var[i];
  }
}

struct Flags {
  bool encoder_branch;   // ln p(x | z~), z~ from q(z|x)
  bool dual_branch;      // ln p(x' | z~'), z~' from q(z'|y,s)
  bool discrete;         // q_y, p_y present
  bool train_encoder;
  bool train_decoder;
  bool train_classifier;
  bool train_mixture;
  bool train_heads;
  bool train_trunks;
};

Flags flags_for(Objective objective, const ModelState& m, bool with_grad) {
  Flags f{};
  f.encoder_branch = objective != Objective::dual;
  f.dual_branch = objective == Objective::dual || objective == Objective::unified;
  f.discrete = objective != Objective::vae;
  if (!with_grad) return f;
  f.train_encoder = objective != Objective::dual;
  f.train_decoder = objective != Objective::dual;
  f.train_classifier = objective == Objective::base || objective == Objective::unified;
  f.train_mixture = f.train_classifier;
  f.train_heads = f.dual_branch;
  f.train_trunks = objective == Objective::unified ||
                   (objective == Objective::dual && !m.dims.classifier_shares_trunk);
  return f;
}

}  // namespace

BatchNoise draw_noise(Objective objective, const ModelDims& dims, int batch_size,
                      int dual_samples, Rng& rng) {
  BatchNoise noise;
  noise.z = fill_normal(dims.latent_dim, batch_size, rng);
  if (objective == Objective::dual || objective == Objective::unified) {
    noise.z_prime =
        fill_normal(dims.latent_dim, static_cast<Eigen::Index>(batch_size) * dims.actions * dual_samples, rng);
  }
  return noise;
}

std::vector<ParamRef> trainable_params(Objective objective, ModelState& m) {
  switch (objective) {
    case Objective::vae: return m.params({BlockGroup::encoder, BlockGroup::decoder});
    case Objective::base:
      return m.params({BlockGroup::encoder, BlockGroup::decoder, BlockGroup::classifier,
                       BlockGroup::mixture});
    case Objective::dual: return m.params({BlockGroup::dual});
    case Objective::unified: return m.all_params();
  }
  return {};
}

std::vector<ConstParamRef> trainable_params(Objective objective, const ModelState& m) {
  switch (objective) {
    case Objective::vae: return m.params({BlockGroup::encoder, BlockGroup::decoder});
    case Objective::base:
      return m.params({BlockGroup::encoder, BlockGroup::decoder, BlockGroup::classifier,
                       BlockGroup::mixture});
    case Objective::dual: return m.params({BlockGroup::dual});
    case Objective::unified: return m.all_params();
  }
  return {};
}

BatchResult evaluate_batch(Objective objective, const ModelState& m,
                           std::span<const TrainingSample> samples, const BatchNoise& noise,
                           ModelState* gradient, const ObjectiveOptions& options,
                           const std::vector<ActionPosterior>* fixed_qy) {
  const ModelDims& dims = m.dims;
  const int batch = static_cast<int>(samples.size());
  const int actions = dims.actions;
  const int latent = dims.latent_dim;
  const int draws = options.dual_samples;
  const ObjectiveWeights& w = options.weights;
  const Flags f = flags_for(objective, m, gradient != nullptr);

  BatchResult result;
  if (batch == 0) return result;
  if (draws < 1) throw ContractViolation("evaluate_batch: dual_samples must be >= 1");
  if (f.encoder_branch && (noise.z.rows() != latent || noise.z.cols() != batch)) {
    throw ContractViolation("evaluate_batch: z noise must be D x B");
  }
  if (f.dual_branch &&
      (noise.z_prime.rows() != latent || noise.z_prime.cols() != batch * actions * draws)) {
    throw ContractViolation("evaluate_batch: z' noise must be D x (B K S)");
  }
  if (fixed_qy && static_cast<int>(fixed_qy->size()) != batch) {
    throw ContractViolation("evaluate_batch: fixed_qy needs one posterior per sample");
  }

  Eigen::MatrixXd x(dims.trajectory_dim(), batch);
  Eigen::MatrixXd s(dims.scenario_dim, batch);
  for (int b = 0; b < batch; ++b) {
    const auto& sample = samples[b];
    if (sample.trajectory.flat.size() != dims.trajectory_dim()) {
      throw ContractViolation("evaluate_batch: trajectory dimension mismatch");
    }
    if (sample.scenario.dim() != dims.scenario_dim) {
      throw ContractViolation("evaluate_batch: scenario dimension mismatch");
    }
    x.col(b) = sample.trajectory.flat;
    s.col(b) = sample.scenario.values;
  }
  const Eigen::MatrixXd x_norm = m.trajectory_norm.normalize(x);
  const Eigen::MatrixXd s_norm = m.scenario_norm.normalize(s);
  const Eigen::ArrayXd out_scale = m.trajectory_norm.scale.array();

  // q(z|x)
  MlpTape enc_tape;
  const Eigen::MatrixXd enc_raw = m.encoder.forward_batch(x_norm, f.train_encoder ? &enc_tape : nullptr);
  std::vector<DiagGaussian> qz;
  qz.reserve(batch);
  for (int b = 0; b < batch; ++b) qz.push_back(to_gaussian(enc_raw.col(b)));

  // p(y|s)
  MlpTape cls_tape;
  MlpTape cls_trunk_tape;
  Eigen::MatrixXd log_prior;
  Eigen::MatrixXd prior;
  if (f.discrete) {
    const bool tape = f.train_classifier;
    Eigen::MatrixXd logits;
    if (dims.classifier_shares_trunk) {
      const Eigen::MatrixXd feats = m.dual_trunks[0].forward_batch(s_norm, tape ? &cls_trunk_tape : nullptr);
      logits = m.classifier.forward_batch(feats, tape ? &cls_tape : nullptr);
    } else {
      logits = m.classifier.forward_batch(s_norm, tape ? &cls_tape : nullptr);
    }
    log_prior.resize(actions, batch);
    for (int b = 0; b < batch; ++b) log_prior.col(b) = log_softmax(logits.col(b));
    prior = log_prior.array().exp();
  }

  // q(z'|y,s)
  const int trunk_count = static_cast<int>(m.dual_trunks.size());
  std::vector<MlpTape> trunk_tapes(trunk_count);
  std::vector<MlpTape> head_tapes(actions);
  std::vector<Eigen::MatrixXd> head_raw(actions);
  if (f.dual_branch || objective == Objective::unified) {
    std::vector<Eigen::MatrixXd> feats(trunk_count);
    for (int t = 0; t < trunk_count; ++t) {
      feats[t] = m.dual_trunks[t].forward_batch(s_norm, f.train_trunks ? &trunk_tapes[t] : nullptr);
    }
    for (int k = 0; k < actions; ++k) {
      const int t = dims.disjoint_dual ? k : 0;
      head_raw[k] = m.dual_heads[k].forward_batch(feats[t], f.train_heads ? &head_tapes[k] : nullptr);
    }
  }
  auto dual_gaussian = [&](int b, int k) { return to_gaussian(head_raw[k].col(b)); };

  // q(y|x,s), held constant below.
  std::vector<ActionPosterior> qy;
  qy.reserve(batch);
  for (int b = 0; b < batch; ++b) {
    if (!f.discrete) {
      qy.push_back(ActionPosterior::uniform(1));
      continue;
    }
    ActionPosterior post = ActionPosterior::uniform(actions);
    if (fixed_qy) {
      post = (*fixed_qy)[b];
      if (post.size() != actions) throw ContractViolation("evaluate_batch: fixed_qy length != K");
    } else if (objective == Objective::unified) {
      std::vector<DiagGaussian> dual;
      dual.reserve(actions);
      for (int k = 0; k < actions; ++k) dual.push_back(dual_gaussian(b, k));
      post = qy_unified(log_prior.col(b), qz[b], dual, m.mixture);
    } else {
      post = qy_base(log_prior.col(b), qz[b], m.mixture);
    }
    qy.push_back(apply_label_override(post, samples[b].known_action));
  }

  std::vector<ObjectiveReport> reports(batch);
  for (int b = 0; b < batch; ++b) reports[b].qy_used = qy[b];

  std::vector<DiagGaussian> components;
  if (f.discrete) {
    for (int k = 0; k < actions; ++k) components.push_back(m.mixture.component(k));
  }

  // Discrete KL term.
  if (f.discrete) {
    for (int b = 0; b < batch; ++b) {
      const double kl_y = kl_categorical(qy[b], log_prior.col(b));
      require_finite(kl_y, "kl_y");
      if (objective == Objective::dual) {
        reports[b].monitored_kl_y = kl_y;
      } else {
        reports[b].kl_y = kl_y;
      }
    }
    if (f.train_classifier) {
      Eigen::MatrixXd d_logits(actions, batch);
      for (int b = 0; b < batch; ++b) d_logits.col(b) = w.kl_y * (qy[b].probs() - prior.col(b));
      if (dims.classifier_shares_trunk) {
        const Eigen::MatrixXd d_feats = m.classifier.backward(cls_tape, d_logits, &gradient->classifier);
        m.dual_trunks[0].backward(cls_trunk_tape, d_feats, &gradient->dual_trunks[0]);
      } else {
        m.classifier.backward(cls_tape, d_logits, &gradient->classifier);
      }
    }
  }

  // Encoder branch: ln p(x | z~) and KL(q(z|x) || prior).
  if (f.encoder_branch) {
    Eigen::MatrixXd sigma(latent, batch);
    Eigen::MatrixXd z(latent, batch);
    for (int b = 0; b < batch; ++b) {
      sigma.col(b) = qz[b].stddev();
      z.col(b) = qz[b].mean() + sigma.col(b).cwiseProduct(noise.z.col(b));
    }
    MlpTape dec_tape;
    const Eigen::MatrixXd dec_out = m.decoder.forward_batch(z, gradient ? &dec_tape : nullptr);
    const Eigen::MatrixXd x_hat = m.trajectory_norm.denormalize(dec_out);
    for (int b = 0; b < batch; ++b) {
      reports[b].recon_x = log_pdf_identity_cov(x_hat.col(b), x.col(b));
      require_finite(reports[b].recon_x, "recon_x");
    }

    Eigen::MatrixXd d_mean = Eigen::MatrixXd::Zero(latent, batch);
    Eigen::MatrixXd d_log_var = Eigen::MatrixXd::Zero(latent, batch);
    if (gradient) {
      const Eigen::MatrixXd d_out =
          w.recon * ((x - x_hat).array().colwise() * out_scale).matrix();
      const Eigen::MatrixXd d_z =
          m.decoder.backward(dec_tape, d_out, f.train_decoder ? &gradient->decoder : nullptr);
      d_mean = d_z;
      d_log_var = 0.5 * (d_z.array() * sigma.array() * noise.z.array()).matrix();
    }

    for (int b = 0; b < batch; ++b) {
      if (!f.discrete) {
        const DiagGaussian standard = DiagGaussian::standard(latent);
        reports[b].expected_kl_z = kl_diag(qz[b], standard);
        if (gradient) {
          const KlGradient g = kl_diag_gradient(qz[b], standard);
          d_mean.col(b) -= w.kl_z * g.q_mean;
          d_log_var.col(b) -= w.kl_z * g.q_log_var;
        }
      } else {
        double expected = 0.0;
        for (int k = 0; k < actions; ++k) {
          if (qy[b][k] == 0.0) continue;
          expected += qy[b][k] * kl_diag(qz[b], components[k]);
          if (gradient) {
            const KlGradient g = kl_diag_gradient(qz[b], components[k]);
            const double c = w.kl_z * qy[b][k];
            d_mean.col(b) -= c * g.q_mean;
            d_log_var.col(b) -= c * g.q_log_var;
            if (f.train_mixture) add_mixture_grad(m, *gradient, k, -c * g.p_mean, -c * g.p_log_var);
          }
        }
        reports[b].expected_kl_z = expected;
      }
      require_finite(reports[b].expected_kl_z, "expected_kl_z");
    }

    if (f.train_encoder) {
      Eigen::MatrixXd upstream(2 * latent, batch);
      for (int b = 0; b < batch; ++b) {
        upstream.col(b) = gaussian_head_upstream(enc_raw.col(b), d_mean.col(b), d_log_var.col(b));
      }
      m.encoder.backward(enc_tape, upstream, &gradient->encoder);
    }
  }

  // Dual branch: sum_y q_y [ln p(x | z~'_y) - KL(q(z'|y,s) || p(z'|y))].
  if (f.dual_branch) {
    const int cols = batch * actions * draws;
    Eigen::MatrixXd z_prime(latent, cols);
    Eigen::MatrixXd sigma_prime(latent, cols);
    for (int b = 0; b < batch; ++b) {
      for (int k = 0; k < actions; ++k) {
        const DiagGaussian g = dual_gaussian(b, k);
        const Eigen::VectorXd sd = g.stddev();
        for (int r = 0; r < draws; ++r) {
          const int c = (b * actions + k) * draws + r;
          sigma_prime.col(c) = sd;
          z_prime.col(c) = g.mean() + sd.cwiseProduct(noise.z_prime.col(c));
        }
      }
    }
    MlpTape dec_tape;
    const Eigen::MatrixXd dec_out = m.decoder.forward_batch(z_prime, gradient ? &dec_tape : nullptr);
    const Eigen::MatrixXd x_hat = m.trajectory_norm.denormalize(dec_out);
    Eigen::MatrixXd d_out;
    if (gradient) d_out.resize(dims.trajectory_dim(), cols);

    for (int b = 0; b < batch; ++b) {
      double recon = 0.0;
      double kl = 0.0;
      for (int k = 0; k < actions; ++k) {
        const double weight = qy[b][k];
        double recon_k = 0.0;
        for (int r = 0; r < draws; ++r) {
          const int c = (b * actions + k) * draws + r;
          recon_k += log_pdf_identity_cov(x_hat.col(c), x.col(b));
          if (gradient) {
            d_out.col(c) = (w.recon * weight / draws) *
                           ((x.col(b) - x_hat.col(c)).array() * out_scale).matrix();
          }
        }
        if (weight == 0.0) continue;
        recon += weight * recon_k / draws;
        kl += weight * kl_diag(dual_gaussian(b, k), components[k]);
      }
      reports[b].recon_x_prime = recon;
      reports[b].expected_kl_z_prime = kl;
      require_finite(recon, "recon_x_prime");
      require_finite(kl, "expected_kl_z_prime");
    }

    if (gradient) {
      const Eigen::MatrixXd d_z =
          m.decoder.backward(dec_tape, d_out, f.train_decoder ? &gradient->decoder : nullptr);
      std::vector<Eigen::MatrixXd> d_feats(trunk_count);
      for (int k = 0; k < actions; ++k) {
        Eigen::MatrixXd upstream(2 * latent, batch);
        for (int b = 0; b < batch; ++b) {
          const DiagGaussian g = dual_gaussian(b, k);
          Eigen::VectorXd d_mean = Eigen::VectorXd::Zero(latent);
          Eigen::VectorXd d_log_var = Eigen::VectorXd::Zero(latent);
          for (int r = 0; r < draws; ++r) {
            const int c = (b * actions + k) * draws + r;
            d_mean += d_z.col(c);
            d_log_var += 0.5 * d_z.col(c).cwiseProduct(sigma_prime.col(c))
                                   .cwiseProduct(noise.z_prime.col(c));
          }
          const double weight = w.kl_z_prime * qy[b][k];
          if (weight != 0.0) {
            const KlGradient kg = kl_diag_gradient(g, components[k]);
            d_mean -= weight * kg.q_mean;
            d_log_var -= weight * kg.q_log_var;
            if (f.train_mixture) {
              add_mixture_grad(m, *gradient, k, -weight * kg.p_mean, -weight * kg.p_log_var);
            }
          }
          upstream.col(b) = gaussian_head_upstream(head_raw[k].col(b), d_mean, d_log_var);
        }
        if (f.train_heads) {
          const Eigen::MatrixXd d_in =
              m.dual_heads[k].backward(head_tapes[k], upstream, &gradient->dual_heads[k]);
          const int t = dims.disjoint_dual ? k : 0;
          if (d_feats[t].size() == 0) {
            d_feats[t] = d_in;
          } else {
            d_feats[t] += d_in;
          }
        }
      }
      if (f.train_trunks) {
        for (int t = 0; t < trunk_count; ++t) {
          if (d_feats[t].size() == 0) continue;
          m.dual_trunks[t].backward(trunk_tapes[t], d_feats[t], &gradient->dual_trunks[t]);
        }
      }
    }
  }

  for (auto& r : reports) {
    r.total = w.recon * (r.recon_x + r.recon_x_prime) - w.kl_y * r.kl_y - w.kl_z * r.expected_kl_z -
              w.kl_z_prime * r.expected_kl_z_prime;
    require_finite(r.total, "total");
    result.total += r.total;
  }
  result.reports = std::move(reports);
  return result;
}

namespace {

BatchNoise single_noise(const ModelDims& dims, const Eigen::VectorXd* noise_z,
                        std::span<const Eigen::VectorXd> noise_per_k, int& draws) {
  BatchNoise noise;
  noise.z = Eigen::MatrixXd::Zero(dims.latent_dim, 1);
  if (noise_z) {
    if (noise_z->size() != dims.latent_dim) throw ContractViolation("noise_z must have dimension D");
    noise.z.col(0) = *noise_z;
  }
  draws = 1;
  if (!noise_per_k.empty()) {
    if (noise_per_k.size() % static_cast<std::size_t>(dims.actions) != 0) {
      throw ContractViolation("noise_per_k must hold a multiple of K vectors");
    }
    draws = static_cast<int>(noise_per_k.size()) / dims.actions;
    noise.z_prime.resize(dims.latent_dim, static_cast<Eigen::Index>(noise_per_k.size()));
    for (std::size_t i = 0; i < noise_per_k.size(); ++i) {
      if (noise_per_k[i].size() != dims.latent_dim) {
        throw ContractViolation("noise_per_k entries must have dimension D");
      }
      noise.z_prime.col(static_cast<Eigen::Index>(i)) = noise_per_k[i];
    }
  }
  return noise;
}

ObjectiveReport evaluate_single(Objective objective, const ModelState& m, const Trajectory& x,
                                const ScenarioFeatures& s, const Eigen::VectorXd* noise_z,
                                std::span<const Eigen::VectorXd> noise_per_k,
                                std::optional<int> label) {
  if (x.flat.size() != m.dims.trajectory_dim()) {
    throw ContractViolation("objective: trajectory dimension mismatch");
  }
  if (s.dim() != m.dims.scenario_dim) throw ContractViolation("objective: scenario dimension mismatch");
  if ((objective == Objective::dual || objective == Objective::unified) && noise_per_k.empty()) {
    throw ContractViolation("objective: dual branch needs noise_per_k");
  }
  int draws = 1;
  const BatchNoise noise = single_noise(m.dims, noise_z, noise_per_k, draws);
  const TrainingSample sample{s, x, label};
  ObjectiveOptions options;
  options.dual_samples = draws;
  auto result = evaluate_batch(objective, m, std::span(&sample, 1), noise, nullptr, options);
  return result.reports.front();
}

}  // namespace

ObjectiveReport elbo_base(const ModelState& m, const Trajectory& x, const ScenarioFeatures& s,
                          const Eigen::VectorXd& noise_z, std::optional<int> label) {
  return evaluate_single(Objective::base, m, x, s, &noise_z, {}, label);
}

ObjectiveReport loss_dual(const ModelState& m, const Trajectory& x, const ScenarioFeatures& s,
                          std::span<const Eigen::VectorXd> noise_per_k, std::optional<int> label) {
  return evaluate_single(Objective::dual, m, x, s, nullptr, noise_per_k, label);
}

ObjectiveReport loss_unified(const ModelState& m, const Trajectory& x, const ScenarioFeatures& s,
                             const Eigen::VectorXd& noise_z,
                             std::span<const Eigen::VectorXd> noise_per_k,
                             std::optional<int> label) {
  return evaluate_single(Objective::unified, m, x, s, &noise_z, noise_per_k, label);
}

}  // namespace actionset
