#include "driftguard/flow.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <numeric>

#include "driftguard/error.hpp"
#include "driftguard/kernels.hpp"
#include "driftguard/rng.hpp"

namespace driftguard {

namespace {

const double kHalfLog2Pi = 0.5 * std::log(2.0 * std::numbers::pi);

// Visits trainable matrices in serialisation order: per block, the scale net
// then the shift net, each layer as weight then bias.
template <typename Model, typename F>
void for_each_parameter(Model& model, F&& f) {
  for (std::size_t b = 0; b < model.blocks.size(); ++b) {
    auto& c = model.blocks[b].coupling;
    auto visit_net = [&](auto& net, const char* tag) {
      for (std::size_t l = 0; l < net.layers.size(); ++l) {
        const std::string base = "block" + std::to_string(b) + "." + tag + ".layer" + std::to_string(l);
        f(base + ".weight", net.layers[l].weight, net.frozen);
        f(base + ".bias", net.layers[l].bias, net.frozen);
      }
    };
    visit_net(c.scale_net, "scale");
    visit_net(c.shift_net, "shift");
  }
}

Mlp make_mlp(std::size_t in, const std::vector<std::size_t>& hidden, std::size_t out, Rng& rng) {
  Mlp net;
  std::size_t fan_in = in;
  std::vector<std::size_t> widths = hidden;
  widths.push_back(out);
  for (std::size_t l = 0; l < widths.size(); ++l) {
    Dense layer{Matrix::Zero(fan_in, widths[l]), Matrix::Zero(1, widths[l])};
    const bool output_layer = l + 1 == widths.size();
    if (!output_layer) {
      const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
      for (Eigen::Index k = 0; k < layer.weight.size(); ++k) {
        layer.weight.data()[k] = bound * (2.0 * rng.uniform() - 1.0);
      }
      for (Eigen::Index k = 0; k < layer.bias.size(); ++k) {
        layer.bias.data()[k] = bound * (2.0 * rng.uniform() - 1.0);
      }
    }
    net.layers.push_back(std::move(layer));
    fan_in = widths[l];
  }
  return net;
}

Matrix mlp_forward(const Mlp& net, const Matrix& x) {
  Matrix h = x;
  for (std::size_t l = 0; l < net.layers.size(); ++l) {
    Matrix next = (h * net.layers[l].weight).rowwise() + net.layers[l].bias.row(0);
    if (l + 1 < net.layers.size()) next = next.cwiseMax(0.0);
    h = std::move(next);
  }
  return h;
}

Matrix squash(const Matrix& raw, double cap) {
  return (cap * (raw.array() / cap).tanh()).matrix();
}

Matrix permute_cols(const Matrix& x, const std::vector<std::size_t>& perm) {
  Matrix out(x.rows(), x.cols());
  for (std::size_t j = 0; j < perm.size(); ++j) out.col(j) = x.col(perm[j]);
  return out;
}

Matrix unpermute_cols(const Matrix& y, const std::vector<std::size_t>& perm) {
  Matrix out(y.rows(), y.cols());
  for (std::size_t j = 0; j < perm.size(); ++j) out.col(perm[j]) = y.col(j);
  return out;
}

void require_finite(const Matrix& m, const char* what) {
  if (!m.allFinite()) throw NumericalError(std::string("non-finite value in flow ") + what);
}

Matrix to_matrix(const FeatureMatrix& f) {
  return Eigen::Map<const Matrix>(f.values().data(), static_cast<Eigen::Index>(f.rows()),
                                  static_cast<Eigen::Index>(f.cols()));
}

ad::Var mlp_on_tape(ad::Tape& tape, const Mlp& net, ad::Var x,
                    const std::vector<ad::Var>& params, std::size_t first) {
  ad::Var h = x;
  for (std::size_t l = 0; l < net.layers.size(); ++l) {
    h = ad::add_row(ad::matmul(h, params[first + 2 * l]), params[first + 2 * l + 1]);
    if (l + 1 < net.layers.size()) h = ad::relu(h);
  }
  (void)tape;
  return h;
}

}  // namespace

FlowModel make_flow(std::size_t dimension, std::vector<std::size_t> hidden, std::size_t steps,
                    std::uint64_t seed) {
  if (dimension == 0) throw ParameterError("flow dimension must be positive");
  if (hidden.size() != 2) throw ParameterError("coupling networks need two hidden layers");
  FlowModel model;
  model.dimension = dimension;
  model.hidden = hidden;
  model.seed = seed;
  Rng rng(seed);
  const std::size_t pass = (dimension + 1) / 2;
  for (std::size_t s = 0; s < steps; ++s) {
    FlowBlock block;
    block.permutation.resize(dimension);
    std::iota(block.permutation.begin(), block.permutation.end(), std::size_t{0});
    rng.shuffle(std::span<std::size_t>(block.permutation));
    block.norm.running_mean = Matrix::Zero(1, dimension);
    block.norm.running_var = Matrix::Constant(1, dimension, 1.0 - block.norm.eps);
    block.coupling.pass_count = pass;
    const std::size_t out = dimension - pass;
    if (out > 0) {
      block.coupling.scale_net = make_mlp(pass, hidden, out, rng);
      block.coupling.shift_net = make_mlp(pass, hidden, out, rng);
    }
    model.blocks.push_back(std::move(block));
  }
  return model;
}

void randomize_flow(FlowModel& model, double amplitude, std::uint64_t seed) {
  Rng rng(seed);
  for_each_parameter(model, [&](const std::string&, Matrix& m, bool) {
    for (Eigen::Index k = 0; k < m.size(); ++k) m.data()[k] = amplitude * (2.0 * rng.uniform() - 1.0);
  });
}

void forward_batch(const FlowModel& model, const Matrix& x, Matrix& z, Eigen::VectorXd& log_det) {
  if (static_cast<std::size_t>(x.cols()) != model.dimension) {
    throw ShapeError("input dimension " + std::to_string(x.cols()) +
                     " does not match flow dimension " + std::to_string(model.dimension));
  }
  z = x;
  log_det = Eigen::VectorXd::Zero(x.rows());
  for (const auto& block : model.blocks) {
    z = permute_cols(z, block.permutation);
    const auto& bn = block.norm;
    const Eigen::RowVectorXd var_eps = bn.running_var.row(0).array() + bn.eps;
    z = (z.rowwise() - bn.running_mean.row(0)).array().rowwise() / var_eps.array().sqrt();
    log_det.array() += -0.5 * var_eps.array().log().sum();

    const auto& c = block.coupling;
    const std::size_t k = c.transform_count(model.dimension);
    if (k == 0) continue;
    const Matrix x1 = z.leftCols(c.pass_count);
    const Matrix s = squash(mlp_forward(c.scale_net, x1), c.scale_cap);
    const Matrix t = mlp_forward(c.shift_net, x1);
    z.rightCols(k) = (z.rightCols(k).array() * s.array().exp() + t.array()).matrix();
    log_det += s.rowwise().sum();
  }
  require_finite(z, "forward pass");
  if (!log_det.allFinite()) throw NumericalError("non-finite flow log-determinant");
}

FlowOutput forward(const FlowModel& model, std::span<const double> x) {
  Matrix in = Eigen::Map<const Matrix>(x.data(), 1, static_cast<Eigen::Index>(x.size()));
  Matrix z;
  Eigen::VectorXd ld;
  forward_batch(model, in, z, ld);
  return {std::vector<double>(z.data(), z.data() + z.size()), ld(0)};
}

std::vector<double> inverse(const FlowModel& model, std::span<const double> z_in) {
  if (z_in.size() != model.dimension) throw ShapeError("inverse input dimension mismatch");
  Matrix z = Eigen::Map<const Matrix>(z_in.data(), 1, static_cast<Eigen::Index>(z_in.size()));
  for (auto it = model.blocks.rbegin(); it != model.blocks.rend(); ++it) {
    const auto& c = it->coupling;
    const std::size_t k = c.transform_count(model.dimension);
    if (k > 0) {
      const Matrix y1 = z.leftCols(c.pass_count);
      const Matrix s = squash(mlp_forward(c.scale_net, y1), c.scale_cap);
      const Matrix t = mlp_forward(c.shift_net, y1);
      z.rightCols(k) = ((z.rightCols(k).array() - t.array()) * (-s.array()).exp()).matrix();
    }
    const auto& bn = it->norm;
    const Eigen::RowVectorXd sd = (bn.running_var.row(0).array() + bn.eps).sqrt();
    z = (z.array().rowwise() * sd.array()).matrix().rowwise() + bn.running_mean.row(0);
    z = unpermute_cols(z, it->permutation);
  }
  require_finite(z, "inverse pass");
  return std::vector<double>(z.data(), z.data() + z.size());
}

Eigen::VectorXd log_prob_batch(const FlowModel& model, const Matrix& x) {
  Matrix z;
  Eigen::VectorXd ld;
  forward_batch(model, x, z, ld);
  const double d = static_cast<double>(model.dimension);
  Eigen::VectorXd out = ld - 0.5 * z.rowwise().squaredNorm();
  out.array() -= d * kHalfLog2Pi;
  return out;
}

double log_prob(const FlowModel& model, std::span<const double> x) {
  Matrix in = Eigen::Map<const Matrix>(x.data(), 1, static_cast<Eigen::Index>(x.size()));
  return log_prob_batch(model, in)(0);
}

ScoreSet score_flow(const FlowModel& model, const FeatureMatrix& query) {
  if (query.cols() != model.dimension) {
    throw ShapeError("query dimension " + std::to_string(query.cols()) +
                     " does not match flow dimension " + std::to_string(model.dimension));
  }
  constexpr std::size_t kChunk = 256;
  const Matrix x = to_matrix(query);
  const std::size_t n = query.rows();
  const std::size_t chunks = (n + kChunk - 1) / kChunk;
  ScoreSet out;
  out.scores.resize(n);
  bool failed = false;
#pragma omp parallel for schedule(static) num_threads(kernels::max_threads()) reduction(|| : failed)
  for (std::ptrdiff_t c = 0; c < static_cast<std::ptrdiff_t>(chunks); ++c) {
    const std::size_t begin = static_cast<std::size_t>(c) * kChunk;
    const std::size_t len = std::min(kChunk, n - begin);
    try {
      const Eigen::VectorXd lp = log_prob_batch(model, x.middleRows(begin, len));
      for (std::size_t i = 0; i < len; ++i) out.scores[begin + i] = lp(i);
    } catch (const Error&) {
      failed = true;
    }
  }
  if (failed) throw NumericalError("non-finite value while scoring with the flow");
  return out;
}

std::vector<FlowParameter> flow_parameters(FlowModel& model) {
  std::vector<FlowParameter> out;
  for_each_parameter(model, [&](const std::string& name, Matrix& m, bool frozen) {
    out.push_back({name, &m, frozen});
  });
  return out;
}

ad::Var mean_nll_on_tape(ad::Tape& tape, const FlowModel& model, const Matrix& batch,
                         BatchNormMode mode, std::vector<Matrix>* grads,
                         std::vector<Matrix>* batch_means, std::vector<Matrix>* batch_vars) {
  if (static_cast<std::size_t>(batch.cols()) != model.dimension) {
    throw ShapeError("batch dimension does not match flow dimension");
  }
  std::vector<ad::Var> params;
  std::size_t index = 0;
  for_each_parameter(model, [&](const std::string&, const Matrix& m, bool frozen) {
    if (grads && !frozen) {
      params.push_back(tape.parameter(m, (*grads)[index]));
    } else {
      params.push_back(tape.constant(m));
    }
    ++index;
  });

  const std::size_t d = model.dimension;
  ad::Var x = tape.constant(batch);
  ad::Var log_det_rows = tape.constant(Matrix::Zero(batch.rows(), 1));
  ad::Var norm_log_det = tape.constant(Matrix::Zero(1, 1));
  std::size_t param_cursor = 0;
  for (const auto& block : model.blocks) {
    x = ad::gather_cols(x, block.permutation);
    const auto& bn = block.norm;
    ad::Var inv_sd;
    if (mode == BatchNormMode::Batch) {
      ad::Var mu = ad::col_mean(x);
      ad::Var centered = ad::sub_row(x, mu);
      ad::Var var = ad::col_mean(ad::square(centered));
      inv_sd = ad::rsqrt(ad::add_scalar(var, bn.eps));
      x = ad::mul_row(centered, inv_sd);
      if (batch_means) batch_means->push_back(mu.value());
      if (batch_vars) batch_vars->push_back(var.value());
    } else {
      Matrix inv = (bn.running_var.array() + bn.eps).rsqrt();
      inv_sd = tape.constant(inv);
      x = ad::mul_row(ad::sub_row(x, tape.constant(bn.running_mean)), inv_sd);
    }
    norm_log_det = ad::add(norm_log_det, ad::sum(ad::log(inv_sd)));

    const auto& c = block.coupling;
    const std::size_t k = c.transform_count(d);
    const std::size_t per_net = 2 * c.scale_net.layers.size();
    if (k > 0) {
      std::vector<std::size_t> first(c.pass_count), second(k);
      std::iota(first.begin(), first.end(), std::size_t{0});
      std::iota(second.begin(), second.end(), c.pass_count);
      ad::Var x1 = ad::gather_cols(x, first);
      ad::Var x2 = ad::gather_cols(x, second);
      ad::Var raw = mlp_on_tape(tape, c.scale_net, x1, params, param_cursor);
      ad::Var s = ad::scale(ad::tanh(ad::scale(raw, 1.0 / c.scale_cap)), c.scale_cap);
      ad::Var t = mlp_on_tape(tape, c.shift_net, x1, params, param_cursor + per_net);
      x = ad::concat_cols(x1, ad::add(ad::mul(x2, ad::exp(s)), t));
      log_det_rows = ad::add(log_det_rows, ad::row_sum(s));
    }
    param_cursor += per_net + 2 * c.shift_net.layers.size();
  }
  // mean_i [ |z_i|^2 / 2 + d log(2 pi) / 2 - logdet_i ] - batch-norm log-det
  ad::Var quad = ad::mean(ad::scale(ad::row_sum(ad::square(x)), 0.5));
  ad::Var nll = ad::sub(ad::sub(quad, ad::mean(log_det_rows)), norm_log_det);
  return ad::add_scalar(nll, static_cast<double>(d) * kHalfLog2Pi);
}

double mean_nll(const FlowModel& model, const Matrix& batch, BatchNormMode mode) {
  if (mode == BatchNormMode::Running) return -log_prob_batch(model, batch).mean();
  ad::Tape tape;
  return mean_nll_on_tape(tape, model, batch, mode, nullptr).value()(0, 0);
}

GradientCheckReport gradient_check(const FlowModel& model, const FeatureMatrix& batch_features) {
  const Matrix batch = to_matrix(batch_features);
  FlowModel work = model;
  auto params = flow_parameters(work);
  std::vector<Matrix> grads;
  for (const auto& p : params) grads.push_back(Matrix::Zero(p.value->rows(), p.value->cols()));
  {
    ad::Tape tape;
    ad::Var loss = mean_nll_on_tape(tape, work, batch, BatchNormMode::Batch, &grads);
    tape.backward(loss);
  }

  GradientCheckReport report;
  for (std::size_t p = 0; p < params.size(); ++p) {
    Matrix& value = *params[p].value;
    if (params[p].frozen) {
      report.skipped += static_cast<std::size_t>(value.size());
      continue;
    }
    for (Eigen::Index k = 0; k < value.size(); ++k) {
      const double original = value.data()[k];
      const double h = 1e-5 * std::max(1.0, std::abs(original));
      value.data()[k] = original + h;
      const double up = mean_nll(work, batch, BatchNormMode::Batch);
      value.data()[k] = original - h;
      const double down = mean_nll(work, batch, BatchNormMode::Batch);
      value.data()[k] = original;
      const double numeric = (up - down) / (2.0 * h);
      const double analytic = grads[p].data()[k];
      const double denom = std::max({std::abs(numeric), std::abs(analytic), 1e-6});
      report.max_relative_error =
          std::max(report.max_relative_error, std::abs(numeric - analytic) / denom);
      ++report.checked;
    }
  }
  return report;
}

FlowGrid FlowGrid::minimal() { return FlowGrid{{{64, 64}}, {2}, {32}, {100}}; }

FlowGrid FlowGrid::full() {
  return FlowGrid{{{64, 64}, {128, 128}, {256, 256}}, {2, 4, 6}, {16, 32}, {100, 200}};
}

std::size_t FlowGrid::size() const {
  return hidden.size() * steps.size() * batch_sizes.size() * epochs.size();
}

namespace {

struct AdamState {
  std::vector<Matrix> m, v;
  std::size_t step = 0;
};

void train_trial(FlowModel& model, const Matrix& train, const Matrix& validation,
                 const TrainConfig& config, std::size_t batch_size, std::size_t epochs,
                 FlowTrial& trial) {
  auto params = flow_parameters(model);
  AdamState adam;
  for (const auto& p : params) {
    adam.m.push_back(Matrix::Zero(p.value->rows(), p.value->cols()));
    adam.v.push_back(Matrix::Zero(p.value->rows(), p.value->cols()));
  }
  std::vector<Matrix> grads(adam.m);

  Rng rng(config.seed ^ 0xA5A5A5A5u);
  std::vector<Eigen::Index> order(static_cast<std::size_t>(train.rows()));
  std::iota(order.begin(), order.end(), Eigen::Index{0});

  FlowModel best = model;
  trial.best_validation_nll = std::numeric_limits<double>::infinity();
  for (std::size_t epoch = 0; epoch < epochs; ++epoch) {
    rng.shuffle(std::span<Eigen::Index>(order));
    double loss_sum = 0.0;
    std::size_t batches = 0;
    for (std::size_t start = 0; start < order.size(); start += batch_size) {
      const std::size_t len = std::min(batch_size, order.size() - start);
      if (len < 2) break;  // batch statistics need two rows
      Matrix batch(static_cast<Eigen::Index>(len), train.cols());
      for (std::size_t i = 0; i < len; ++i) batch.row(i) = train.row(order[start + i]);

      for (auto& g : grads) g.setZero();
      std::vector<Matrix> means, vars;
      ad::Tape tape;
      ad::Var loss = mean_nll_on_tape(tape, model, batch, BatchNormMode::Batch, &grads, &means, &vars);
      const double value = loss.value()(0, 0);
      if (!std::isfinite(value)) throw TrainError("training loss diverged");
      tape.backward(loss);

      ++adam.step;
      const double c1 = 1.0 - std::pow(config.beta1, static_cast<double>(adam.step));
      const double c2 = 1.0 - std::pow(config.beta2, static_cast<double>(adam.step));
      for (std::size_t p = 0; p < params.size(); ++p) {
        if (params[p].frozen) continue;
        adam.m[p] = config.beta1 * adam.m[p] + (1.0 - config.beta1) * grads[p];
        adam.v[p] = config.beta2 * adam.v[p] + (1.0 - config.beta2) * grads[p].cwiseAbs2();
        *params[p].value -= (config.learning_rate * (adam.m[p].array() / c1) /
                             ((adam.v[p].array() / c2).sqrt() + config.adam_eps))
                                .matrix();
      }
      const double unbias = static_cast<double>(len) / static_cast<double>(len - 1);
      for (std::size_t b = 0; b < model.blocks.size(); ++b) {
        auto& bn = model.blocks[b].norm;
        bn.running_mean = (1.0 - bn.momentum) * bn.running_mean + bn.momentum * means[b];
        bn.running_var = (1.0 - bn.momentum) * bn.running_var + bn.momentum * unbias * vars[b];
      }
      loss_sum += value;
      ++batches;
    }
    if (batches == 0) throw TrainError("no training batch has two or more rows");
    trial.train_nll.push_back(loss_sum / static_cast<double>(batches));
    double val;
    try {
      val = mean_nll(model, validation, BatchNormMode::Running);
    } catch (const NumericalError&) {
      throw TrainError("validation loss diverged");
    }
    if (!std::isfinite(val)) throw TrainError("validation loss diverged");
    trial.validation_nll.push_back(val);
    if (val < trial.best_validation_nll) {
      trial.best_validation_nll = val;
      best = model;
    }
  }
  model = std::move(best);
}

}  // namespace

FlowFit fit_flow(const FeatureMatrix& train, const TrainConfig& config, const FlowGrid& grid) {
  if (train.rows() < 10) {
    throw ParameterError("insufficient samples: normalizing flow needs n >= 10, got " +
                         std::to_string(train.rows()));
  }
  if (!(config.validation_fraction > 0.0 && config.validation_fraction < 1.0)) {
    throw ParameterError("validation fraction must lie in (0, 1)");
  }
  if (!(config.learning_rate > 0.0)) throw ParameterError("learning rate must be positive");
  if (grid.size() == 0) throw ParameterError("flow hyperparameter grid is empty");

  const std::size_t n = train.rows();
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  Rng split_rng(config.seed);
  split_rng.shuffle(std::span<std::size_t>(order));
  std::size_t n_val = static_cast<std::size_t>(std::llround(config.validation_fraction * n));
  n_val = std::clamp<std::size_t>(n_val, 1, n - 2);
  const std::vector<std::size_t> val_rows(order.begin(), order.begin() + n_val);
  const std::vector<std::size_t> fit_rows(order.begin() + n_val, order.end());
  const Matrix x_fit = to_matrix(train.select_rows(fit_rows));
  const Matrix x_val = to_matrix(train.select_rows(val_rows));

  FlowFit result;
  std::optional<FlowModel> best;
  double best_val = std::numeric_limits<double>::infinity();
  for (const auto& hidden : grid.hidden) {
    for (std::size_t steps : grid.steps) {
      for (std::size_t batch : grid.batch_sizes) {
        for (std::size_t epochs : grid.epochs) {
          FlowTrial trial{hidden, steps, batch, epochs, {}, {}, 0.0, std::nullopt};
          try {
            FlowModel model = make_flow(train.cols(), hidden, steps, config.seed);
            train_trial(model, x_fit, x_val, config, batch, epochs, trial);
            if (trial.best_validation_nll < best_val) {
              best_val = trial.best_validation_nll;
              best = std::move(model);
              result.best_index = result.trials.size();
            }
          } catch (const TrainError& e) {
            trial.failure = e.what();
          }
          result.trials.push_back(std::move(trial));
        }
      }
    }
  }
  if (!best) throw TrainError("every flow training trial diverged");
  result.model = std::move(*best);
  return result;
}

void to_archive(const FlowModel& model, ModelArchive& archive) {
  archive.header["method"] = "nf";
  archive.header["dimension"] = model.dimension;
  archive.header["hidden"] = model.hidden;
  archive.header["steps"] = model.blocks.size();
  archive.header["seed"] = model.seed;
  nlohmann::json blocks = nlohmann::json::array();
  std::vector<double> blob;
  for (const auto& block : model.blocks) {
    blocks.push_back({{"permutation", block.permutation},
                      {"pass_count", block.coupling.pass_count},
                      {"scale_cap", block.coupling.scale_cap},
                      {"bn_momentum", block.norm.momentum},
                      {"bn_eps", block.norm.eps},
                      {"scale_frozen", block.coupling.scale_net.frozen},
                      {"shift_frozen", block.coupling.shift_net.frozen}});
    blob.insert(blob.end(), block.norm.running_mean.data(),
                block.norm.running_mean.data() + block.norm.running_mean.size());
    blob.insert(blob.end(), block.norm.running_var.data(),
                block.norm.running_var.data() + block.norm.running_var.size());
  }
  archive.header["topology"] = std::move(blocks);
  for_each_parameter(model, [&](const std::string&, const Matrix& m, bool) {
    blob.insert(blob.end(), m.data(), m.data() + m.size());
  });
  const std::size_t count = blob.size();
  archive.put("parameters", count, 1, std::move(blob));
}

FlowModel flow_from_archive(const ModelArchive& archive) {
  const auto d = header_field<std::size_t>(archive, "dimension");
  const auto hidden = header_field<std::vector<std::size_t>>(archive, "hidden");
  const auto steps = header_field<std::size_t>(archive, "steps");
  const auto seed = header_field<std::uint64_t>(archive, "seed");
  FlowModel model = make_flow(d, hidden, steps, seed);
  const auto topology = header_field<nlohmann::json>(archive, "topology");
  if (topology.size() != steps) throw FormatError("flow topology does not match step count");
  try {
    for (std::size_t b = 0; b < steps; ++b) {
      auto& block = model.blocks[b];
      const auto& t = topology.at(b);
      block.permutation = t.at("permutation").get<std::vector<std::size_t>>();
      std::vector<bool> seen(d, false);
      if (block.permutation.size() != d) throw FormatError("flow permutation has the wrong length");
      for (auto p : block.permutation) {
        if (p >= d || seen[p]) throw FormatError("flow permutation is not a bijection");
        seen[p] = true;
      }
      if (t.at("pass_count").get<std::size_t>() != block.coupling.pass_count) {
        throw FormatError("unexpected coupling mask size");
      }
      block.coupling.scale_cap = t.at("scale_cap").get<double>();
      block.norm.momentum = t.at("bn_momentum").get<double>();
      block.norm.eps = t.at("bn_eps").get<double>();
      block.coupling.scale_net.frozen = t.at("scale_frozen").get<bool>();
      block.coupling.shift_net.frozen = t.at("shift_frozen").get<bool>();
    }
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("flow topology: ") + e.what());
  }

  const Block& blob = archive.get("parameters");
  std::size_t cursor = 0;
  auto take = [&](Matrix& m) {
    const auto count = static_cast<std::size_t>(m.size());
    if (cursor + count > blob.values.size()) throw FormatError("flow parameter blob is too short");
    std::copy_n(blob.values.begin() + cursor, count, m.data());
    cursor += count;
  };
  for (auto& block : model.blocks) {
    take(block.norm.running_mean);
    take(block.norm.running_var);
    if (!(block.norm.running_var.array() > 0.0).all()) {
      throw FormatError("batch-norm running variance must be positive");
    }
  }
  for_each_parameter(model, [&](const std::string&, Matrix& m, bool) { take(m); });
  if (cursor != blob.values.size()) throw FormatError("flow parameter blob is too long");
  return model;
}

}  // namespace driftguard
