// SPDX-License-Identifier: Apache-2.0

#include "eepose/scorenet.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <map>

namespace eepose {

DenseLayer DenseLayer::make(int in, int out, Act act) {
  DenseLayer l;
  l.w = Eigen::MatrixXd::Zero(out, in);
  l.b = Eigen::MatrixXd::Zero(out, 1);
  l.act = act;
  return l;
}

Eigen::MatrixXd DenseLayer::forward(const Eigen::MatrixXd& x) const {
  Eigen::MatrixXd z = x * w.transpose();
  z.rowwise() += b.col(0).transpose();
  if (act == Act::kRelu) z = z.cwiseMax(0.0);
  return z;
}

Eigen::MatrixXd DenseLayer::forward_pre(const Eigen::MatrixXd& x,
                                        Eigen::MatrixXd* z) const {
  *z = x * w.transpose();
  z->rowwise() += b.col(0).transpose();
  if (act == Act::kRelu) return z->cwiseMax(0.0);
  return *z;
}

Eigen::MatrixXd DenseLayer::backward(const Eigen::MatrixXd& x,
                                     const Eigen::MatrixXd& z,
                                     const Eigen::MatrixXd& dy,
                                     Eigen::MatrixXd* dw,
                                     Eigen::MatrixXd* db) const {
  Eigen::MatrixXd dz = dy;
  if (act == Act::kRelu) {
    dz = dz.cwiseProduct((z.array() > 0.0).cast<double>().matrix());
  }
  dw->noalias() += dz.transpose() * x;
  db->col(0).noalias() += dz.colwise().sum().transpose();
  return dz * w;
}

namespace {

double glorot_bound(int in, int out) {
  return std::sqrt(6.0 / static_cast<double>(in + out));
}

void glorot_fill(DenseLayer* l, Rng* rng) {
  const double a = glorot_bound(static_cast<int>(l->w.cols()),
                                static_cast<int>(l->w.rows()));
  for (Eigen::Index r = 0; r < l->w.rows(); ++r) {
    for (Eigen::Index c = 0; c < l->w.cols(); ++c) {
      l->w(r, c) = rng->uniform(-a, a);
    }
  }
}

}  // namespace

ScoreNetParams init_params(const ScoreNetConfig& cfg, std::uint64_t seed) {
  if (cfg.enc_widths.empty() || cfg.pose_widths.empty() ||
      cfg.trunk_widths.empty() || cfg.time_freq_pairs < 1) {
    throw ConfigError("score network widths must be non-empty");
  }
  ScoreNetParams p;
  p.cfg = cfg;
  int in = 3;
  for (int w : cfg.enc_widths) {
    p.enc.push_back(DenseLayer::make(in, w, DenseLayer::Act::kRelu));
    in = w;
  }
  p.global = DenseLayer::make(in, cfg.global_width, DenseLayer::Act::kRelu);
  p.time_fc = DenseLayer::make(2 * cfg.time_freq_pairs, cfg.time_width,
                               DenseLayer::Act::kRelu);
  in = 12;
  for (int w : cfg.pose_widths) {
    p.pose_fc.push_back(DenseLayer::make(in, w, DenseLayer::Act::kRelu));
    in = w;
  }
  in = cfg.trunk_input_dim();
  for (int w : cfg.trunk_widths) {
    p.trunk.push_back(DenseLayer::make(in, w, DenseLayer::Act::kRelu));
    in = w;
  }
  p.head_rx = DenseLayer::make(in, 3, DenseLayer::Act::kNone);
  p.head_ry = DenseLayer::make(in, 3, DenseLayer::Act::kNone);
  p.head_s = DenseLayer::make(in, 3, DenseLayer::Act::kNone);
  p.head_t = DenseLayer::make(in, 3, DenseLayer::Act::kNone);

  Rng rng(seed);
  for (DenseLayer& l : p.enc) glorot_fill(&l, &rng);
  glorot_fill(&p.global, &rng);
  glorot_fill(&p.time_fc, &rng);
  for (DenseLayer& l : p.pose_fc) glorot_fill(&l, &rng);
  for (DenseLayer& l : p.trunk) glorot_fill(&l, &rng);
  // Heads stay zero: the untrained score is 0 and early sampling is the
  // identity flow.
  return p;
}

ScoreNetParams zeros_like(const ScoreNetParams& p) {
  ScoreNetParams z = p;
  for_each_tensor(z, [](const std::string&, Eigen::MatrixXd& m) { m.setZero(); });
  return z;
}

Eigen::VectorXd time_features(const ScoreNetConfig& cfg, double t) {
  const int pairs = cfg.time_freq_pairs;
  Eigen::VectorXd f(2 * pairs);
  constexpr double kTwoPi = 2.0 * 3.14159265358979323846;
  // Frequencies stay low enough that the features vary smoothly over [eps, 1];
  // the schedule itself only spans a few decades.
  const double lo = 0.25, hi = 32.0;
  for (int k = 0; k < pairs; ++k) {
    const double frac = pairs == 1 ? 0.0 : static_cast<double>(k) / (pairs - 1);
    const double omega = kTwoPi * lo * std::pow(hi / lo, frac);
    f[2 * k] = std::sin(omega * t);
    f[2 * k + 1] = std::cos(omega * t);
  }
  return f;
}

Vec3 order_invariant_centroid(const PointCloud& cloud) {
  if (cloud.empty()) throw EmptyCloud("centroid of empty point cloud");
  Vec3 c;
  std::vector<double> column(static_cast<std::size_t>(cloud.size()));
  for (int k = 0; k < 3; ++k) {
    for (Eigen::Index i = 0; i < cloud.size(); ++i) {
      column[static_cast<std::size_t>(i)] = cloud.pts(i, k);
    }
    std::sort(column.begin(), column.end());
    double acc = 0.0;
    for (double v : column) acc += v;
    c[k] = acc / static_cast<double>(cloud.size());
  }
  return c;
}

EncodeCache encode_cloud_cached(const ScoreNetParams& p,
                                const PointCloud& cloud) {
  if (cloud.empty()) throw EmptyCloud("encode_cloud: empty point cloud");
  EncodeCache cache;
  cache.x0 = cloud.pts * p.cfg.cloud_scale;
  if (p.cfg.center_cloud) {
    const Vec3 centroid = order_invariant_centroid(cloud) * p.cfg.cloud_scale;
    cache.x0.rowwise() -= centroid.transpose();
  }
  Eigen::MatrixXd x = cache.x0;
  for (const DenseLayer& l : p.enc) x = l.forward(x);

  const Eigen::Index features = x.cols();
  cache.pooled.resize(features);
  cache.argmax.resize(features);
  for (Eigen::Index j = 0; j < features; ++j) {
    Eigen::Index row = 0;
    cache.pooled[j] = x.col(j).maxCoeff(&row);
    cache.argmax[j] = static_cast<int>(row);
  }
  Eigen::MatrixXd z;
  cache.feature =
      p.global.forward_pre(cache.pooled.transpose(), &z).row(0).transpose();
  cache.global_z = z.row(0).transpose();
  return cache;
}

Eigen::VectorXd encode_cloud(const ScoreNetParams& p, const PointCloud& cloud) {
  return encode_cloud_cached(p, cloud).feature;
}

namespace {

double output_scale_at(const ScoreNetConfig& cfg, double t) {
  return cfg.scale_output ? 1.0 / cfg.reference_sigma(t) : 1.0;
}

double input_scale_at(const ScoreNetConfig& cfg, double t) {
  if (!cfg.scale_output) return 1.0;
  const double sig = cfg.reference_sigma(t);
  return 1.0 / std::sqrt(sig * sig + cfg.sigma_data * cfg.sigma_data);
}

// Trunk-and-heads forward over rows of `features`/`poses`/`ts`, appending
// caches to `f` when it is non-null.
Eigen::MatrixXd head_path_forward(const ScoreNetParams& p,
                                  const Eigen::MatrixXd& features,
                                  const Eigen::MatrixXd& poses,
                                  const Eigen::VectorXd& ts, BatchForward* f) {
  const Eigen::Index b = features.rows();
  Eigen::MatrixXd time_in(b, 2 * p.cfg.time_freq_pairs);
  for (Eigen::Index i = 0; i < b; ++i) {
    time_in.row(i) = time_features(p.cfg, ts[i]).transpose();
  }
  Eigen::MatrixXd time_z;
  const Eigen::MatrixXd time_y = p.time_fc.forward_pre(time_in, &time_z);

  Eigen::MatrixXd x = poses;
  for (Eigen::Index i = 0; i < b; ++i) x.row(i) *= input_scale_at(p.cfg, ts[i]);
  std::vector<Eigen::MatrixXd> pose_x, pose_z;
  for (const DenseLayer& l : p.pose_fc) {
    pose_x.push_back(x);
    Eigen::MatrixXd z;
    x = l.forward_pre(x, &z);
    pose_z.push_back(std::move(z));
  }

  Eigen::MatrixXd trunk_in(b, p.cfg.trunk_input_dim());
  trunk_in << features, time_y, x;
  Eigen::MatrixXd u = trunk_in;
  std::vector<Eigen::MatrixXd> trunk_x, trunk_z;
  for (const DenseLayer& l : p.trunk) {
    trunk_x.push_back(u);
    Eigen::MatrixXd z;
    u = l.forward_pre(u, &z);
    trunk_z.push_back(std::move(z));
  }

  Eigen::MatrixXd phi(b, 12);
  phi.middleCols<3>(0) = p.head_rx.forward(u);
  phi.middleCols<3>(3) = p.head_ry.forward(u);
  phi.middleCols<3>(6) = p.head_s.forward(u);
  phi.middleCols<3>(9) = p.head_t.forward(u);

  Eigen::VectorXd scale(b);
  for (Eigen::Index i = 0; i < b; ++i) scale[i] = output_scale_at(p.cfg, ts[i]);
  phi.array().colwise() *= scale.array();

  if (f != nullptr) {
    f->time_in = std::move(time_in);
    f->time_z = std::move(time_z);
    f->pose_x = std::move(pose_x);
    f->pose_z = std::move(pose_z);
    f->trunk_x = std::move(trunk_x);
    f->trunk_z = std::move(trunk_z);
    f->trunk_out = std::move(u);
    f->out_scale = std::move(scale);
  }
  return phi;
}

}  // namespace

BatchForward forward_batch(const ScoreNetParams& p,
                           const std::vector<const PointCloud*>& clouds,
                           const Eigen::MatrixXd& poses,
                           const Eigen::VectorXd& ts) {
  const Eigen::Index b = static_cast<Eigen::Index>(clouds.size());
  if (b == 0) throw EmptyInput("forward_batch: empty batch");
  if (poses.rows() != b || poses.cols() != 12 || ts.size() != b) {
    throw ShapeMismatch("forward_batch: batch shapes disagree");
  }
  BatchForward f;
  f.enc_index.resize(clouds.size());
  std::map<const PointCloud*, int> seen;
  Eigen::MatrixXd features(b, p.cfg.global_width);
  for (Eigen::Index i = 0; i < b; ++i) {
    auto it = seen.find(clouds[i]);
    if (it == seen.end()) {
      it = seen.emplace(clouds[i], static_cast<int>(f.enc.size())).first;
      f.enc.push_back(encode_cloud_cached(p, *clouds[i]));
    }
    f.enc_index[static_cast<std::size_t>(i)] = it->second;
    features.row(i) = f.enc[it->second].feature.transpose();
  }
  f.phi = head_path_forward(p, features, poses, ts, &f);
  return f;
}

GradientSet backward_batch(const ScoreNetParams& p, const BatchForward& f,
                           const Eigen::MatrixXd& dphi) {
  GradientSet g = zeros_like(p);
  const Eigen::Index b = dphi.rows();

  Eigen::MatrixXd dheads = dphi;
  dheads.array().colwise() *= f.out_scale.array();

  Eigen::MatrixXd du = Eigen::MatrixXd::Zero(b, f.trunk_out.cols());
  const DenseLayer* heads[4] = {&p.head_rx, &p.head_ry, &p.head_s, &p.head_t};
  DenseLayer* gheads[4] = {&g.head_rx, &g.head_ry, &g.head_s, &g.head_t};
  for (int k = 0; k < 4; ++k) {
    const Eigen::MatrixXd dh = dheads.middleCols<3>(3 * k);
    // Heads are linear; their pre-activation equals their output.
    du += heads[k]->backward(f.trunk_out, dh, dh, &gheads[k]->w, &gheads[k]->b);
  }

  for (int k = static_cast<int>(p.trunk.size()) - 1; k >= 0; --k) {
    du = p.trunk[k].backward(f.trunk_x[k], f.trunk_z[k], du, &g.trunk[k].w,
                             &g.trunk[k].b);
  }

  const int feat_dim = p.cfg.global_width;
  const int time_dim = p.cfg.time_width;
  const Eigen::MatrixXd dfeat = du.leftCols(feat_dim);
  const Eigen::MatrixXd dtime = du.middleCols(feat_dim, time_dim);
  Eigen::MatrixXd dpose = du.rightCols(p.cfg.pose_widths.back());

  p.time_fc.backward(f.time_in, f.time_z, dtime, &g.time_fc.w, &g.time_fc.b);
  for (int k = static_cast<int>(p.pose_fc.size()) - 1; k >= 0; --k) {
    dpose = p.pose_fc[k].backward(f.pose_x[k], f.pose_z[k], dpose,
                                  &g.pose_fc[k].w, &g.pose_fc[k].b);
  }

  // Upstream feature gradients summed per distinct cloud.
  Eigen::MatrixXd dfeat_unique =
      Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(f.enc.size()), feat_dim);
  for (Eigen::Index i = 0; i < b; ++i) {
    dfeat_unique.row(f.enc_index[static_cast<std::size_t>(i)]) += dfeat.row(i);
  }

  // Encoder backward per distinct cloud. The max-pool routes each feature's
  // gradient to one input row, so only the argmax rows are recomputed.
  for (std::size_t e = 0; e < f.enc.size(); ++e) {
    const EncodeCache& cache = f.enc[e];
    const Eigen::MatrixXd dg_pooled =
        p.global.backward(cache.pooled.transpose(), cache.global_z.transpose(),
                          dfeat_unique.row(static_cast<Eigen::Index>(e)),
                          &g.global.w, &g.global.b);

    // Unique argmax rows.
    std::map<int, int> slot;
    for (int row : cache.argmax) slot.emplace(row, 0);
    int next = 0;
    for (auto& [row, s] : slot) s = next++;
    const int m = next;

    Eigen::MatrixXd xg(m, 3);
    for (const auto& [row, s] : slot) xg.row(s) = cache.x0.row(row);

    std::vector<Eigen::MatrixXd> xs, zs;
    Eigen::MatrixXd x = xg;
    for (const DenseLayer& l : p.enc) {
      xs.push_back(x);
      Eigen::MatrixXd z;
      x = l.forward_pre(x, &z);
      zs.push_back(std::move(z));
    }

    Eigen::MatrixXd dx = Eigen::MatrixXd::Zero(m, x.cols());
    for (Eigen::Index j = 0; j < dg_pooled.cols(); ++j) {
      dx(slot.at(cache.argmax[j]), j) += dg_pooled(0, j);
    }
    for (int k = static_cast<int>(p.enc.size()) - 1; k >= 0; --k) {
      dx = p.enc[k].backward(xs[k], zs[k], dx, &g.enc[k].w, &g.enc[k].b);
    }
  }
  return g;
}

Vec12 forward_score(const ScoreNetParams& p, const PoseVec12& pose, double t,
                    const PointCloud& cloud) {
  return score_from_feature(p, encode_cloud(p, cloud), pose.flat(), t);
}

Vec12 score_from_feature(const ScoreNetParams& p,
                         const Eigen::VectorXd& feature, const Vec12& pose,
                         double t) {
  Eigen::MatrixXd features(1, feature.size());
  features.row(0) = feature.transpose();
  Eigen::MatrixXd poses(1, 12);
  poses.row(0) = pose.transpose();
  Eigen::VectorXd ts(1);
  ts[0] = t;
  return head_path_forward(p, features, poses, ts, nullptr).row(0).transpose();
}

double backward(const ScoreNetParams& p,
                const std::vector<const PointCloud*>& clouds,
                const Eigen::MatrixXd& poses, const Eigen::VectorXd& ts,
                const LossClosure& loss, GradientSet* grads) {
  const BatchForward f = forward_batch(p, clouds, poses, ts);
  auto [value, dphi] = loss(f.phi);
  if (!std::isfinite(value)) {
    throw NonFiniteLoss("backward: loss is not finite");
  }
  if (dphi.rows() != f.phi.rows() || dphi.cols() != 12) {
    throw ShapeMismatch("backward: loss closure returned wrong gradient shape");
  }
  *grads = backward_batch(p, f, dphi);
  return value;
}

OptimizerState OptimizerState::create(const ScoreNetParams& params, double lr) {
  OptimizerState s;
  s.m = zeros_like(params);
  s.v = zeros_like(params);
  s.lr = lr;
  return s;
}

void adam_step(OptimizerState& state, ScoreNetParams& params,
               const GradientSet& grads) {
  state.step += 1;
  const double bc1 = 1.0 - std::pow(state.beta1, static_cast<double>(state.step));
  const double bc2 = 1.0 - std::pow(state.beta2, static_cast<double>(state.step));

  std::vector<Eigen::MatrixXd*> pm, mm, vm;
  std::vector<const Eigen::MatrixXd*> gm;
  for_each_tensor(params, [&](const std::string&, Eigen::MatrixXd& t) { pm.push_back(&t); });
  for_each_tensor(state.m, [&](const std::string&, Eigen::MatrixXd& t) { mm.push_back(&t); });
  for_each_tensor(state.v, [&](const std::string&, Eigen::MatrixXd& t) { vm.push_back(&t); });
  for_each_tensor(const_cast<GradientSet&>(grads),
                  [&](const std::string&, Eigen::MatrixXd& t) { gm.push_back(&t); });
  if (pm.size() != gm.size() || pm.size() != mm.size()) {
    throw ShapeMismatch("adam_step: tensor counts disagree");
  }
  for (std::size_t i = 0; i < pm.size(); ++i) {
    if (pm[i]->rows() != gm[i]->rows() || pm[i]->cols() != gm[i]->cols()) {
      throw ShapeMismatch("adam_step: gradient shape mismatch at tensor " +
                          std::to_string(i));
    }
    *mm[i] = state.beta1 * *mm[i] + (1.0 - state.beta1) * *gm[i];
    *vm[i] = state.beta2 * *vm[i] +
             (1.0 - state.beta2) * gm[i]->cwiseProduct(*gm[i]);
    const Eigen::MatrixXd mhat = *mm[i] / bc1;
    const Eigen::MatrixXd vhat = *vm[i] / bc2;
    pm[i]->array() -=
        state.lr * mhat.array() / (vhat.array().sqrt() + state.eps);
  }
}

// ---------------------------------------------------------------------------
// Serialization: magic "TEEP", version u32, tensor count u32, then per tensor
// name length u32 + UTF-8 name + rank u32 + dims u32 + row-major f64 values.
// All integers and doubles little-endian.
// ---------------------------------------------------------------------------

namespace {

constexpr char kMagic[4] = {'T', 'E', 'E', 'P'};
constexpr std::uint32_t kVersion = 1;

void put_u32(std::string* out, std::uint32_t v) {
  char b[4];
  std::memcpy(b, &v, 4);
  out->append(b, 4);
}

void put_f64(std::string* out, double v) {
  char b[8];
  std::memcpy(b, &v, 8);
  out->append(b, 8);
}

struct Reader {
  const std::string& data;
  std::size_t pos = 0;

  void need(std::size_t n) const {
    if (pos + n > data.size()) throw FormatError("model file truncated");
  }
  std::uint32_t u32() {
    need(4);
    std::uint32_t v;
    std::memcpy(&v, data.data() + pos, 4);
    pos += 4;
    return v;
  }
  double f64() {
    need(8);
    double v;
    std::memcpy(&v, data.data() + pos, 8);
    pos += 8;
    return v;
  }
  std::string str(std::size_t n) {
    need(n);
    std::string s = data.substr(pos, n);
    pos += n;
    return s;
  }
};

std::vector<double> encode_config(const ScoreNetConfig& cfg) {
  std::vector<double> v;
  v.push_back(static_cast<double>(cfg.enc_widths.size()));
  for (int w : cfg.enc_widths) v.push_back(w);
  v.push_back(cfg.global_width);
  v.push_back(cfg.time_freq_pairs);
  v.push_back(cfg.time_width);
  v.push_back(static_cast<double>(cfg.pose_widths.size()));
  for (int w : cfg.pose_widths) v.push_back(w);
  v.push_back(static_cast<double>(cfg.trunk_widths.size()));
  for (int w : cfg.trunk_widths) v.push_back(w);
  v.push_back(cfg.scale_output ? 1.0 : 0.0);
  v.push_back(cfg.scale_sigma_min);
  v.push_back(cfg.scale_sigma_max);
  v.push_back(cfg.sigma_data);
  v.push_back(cfg.schedule_eps);
  v.push_back(cfg.trans_scale);
  v.push_back(cfg.cloud_scale);
  v.push_back(cfg.center_cloud ? 1.0 : 0.0);
  return v;
}

ScoreNetConfig decode_config(const std::vector<double>& v) {
  ScoreNetConfig cfg;
  std::size_t i = 0;
  auto next = [&]() {
    if (i >= v.size()) throw FormatError("model config block truncated");
    return v[i++];
  };
  cfg.enc_widths.clear();
  for (int k = static_cast<int>(next()); k > 0; --k) {
    cfg.enc_widths.push_back(static_cast<int>(next()));
  }
  cfg.global_width = static_cast<int>(next());
  cfg.time_freq_pairs = static_cast<int>(next());
  cfg.time_width = static_cast<int>(next());
  cfg.pose_widths.clear();
  for (int k = static_cast<int>(next()); k > 0; --k) {
    cfg.pose_widths.push_back(static_cast<int>(next()));
  }
  cfg.trunk_widths.clear();
  for (int k = static_cast<int>(next()); k > 0; --k) {
    cfg.trunk_widths.push_back(static_cast<int>(next()));
  }
  cfg.scale_output = next() != 0.0;
  cfg.scale_sigma_min = next();
  cfg.scale_sigma_max = next();
  cfg.sigma_data = next();
  cfg.schedule_eps = next();
  cfg.trans_scale = next();
  cfg.cloud_scale = next();
  cfg.center_cloud = next() != 0.0;
  return cfg;
}

}  // namespace

void save_params(const ScoreNetParams& params, const std::string& path) {
  std::vector<std::pair<std::string, const Eigen::MatrixXd*>> tensors;
  for_each_tensor(const_cast<ScoreNetParams&>(params),
                  [&](const std::string& name, Eigen::MatrixXd& m) {
                    tensors.emplace_back(name, &m);
                  });

  std::string out;
  out.append(kMagic, 4);
  put_u32(&out, kVersion);
  put_u32(&out, static_cast<std::uint32_t>(tensors.size() + 1));

  const std::vector<double> meta = encode_config(params.cfg);
  put_u32(&out, 11);
  out.append("meta.config", 11);
  put_u32(&out, 1);
  put_u32(&out, static_cast<std::uint32_t>(meta.size()));
  for (double v : meta) put_f64(&out, v);

  for (const auto& [name, m] : tensors) {
    put_u32(&out, static_cast<std::uint32_t>(name.size()));
    out.append(name);
    put_u32(&out, 2);
    put_u32(&out, static_cast<std::uint32_t>(m->rows()));
    put_u32(&out, static_cast<std::uint32_t>(m->cols()));
    for (Eigen::Index r = 0; r < m->rows(); ++r) {
      for (Eigen::Index c = 0; c < m->cols(); ++c) put_f64(&out, (*m)(r, c));
    }
  }

  std::FILE* f = std::fopen(path.c_str(), "wb");
  if (f == nullptr) throw IoError("cannot open " + path + " for writing");
  const std::size_t written = std::fwrite(out.data(), 1, out.size(), f);
  std::fclose(f);
  if (written != out.size()) throw IoError("short write to " + path);
}

ScoreNetParams load_params(const std::string& path) {
  std::FILE* f = std::fopen(path.c_str(), "rb");
  if (f == nullptr) throw ModelMissing("cannot open model file " + path);
  std::string data;
  char buf[1 << 16];
  std::size_t n;
  while ((n = std::fread(buf, 1, sizeof(buf), f)) > 0) data.append(buf, n);
  std::fclose(f);

  Reader r{data};
  if (r.str(4) != std::string(kMagic, 4)) {
    throw FormatError(path + ": bad magic, expected TEEP");
  }
  const std::uint32_t version = r.u32();
  if (version != kVersion) {
    throw FormatError(path + ": version " + std::to_string(version) +
                      " unsupported (supported: 1)");
  }
  const std::uint32_t count = r.u32();
  std::map<std::string, Eigen::MatrixXd> tensors;
  for (std::uint32_t i = 0; i < count; ++i) {
    const std::uint32_t name_len = r.u32();
    const std::string name = r.str(name_len);
    const std::uint32_t rank = r.u32();
    if (rank < 1 || rank > 2) {
      throw FormatError(path + ": tensor " + name + " has unsupported rank");
    }
    const std::uint32_t rows = r.u32();
    const std::uint32_t cols = rank == 2 ? r.u32() : 1;
    Eigen::MatrixXd m(rows, cols);
    for (std::uint32_t rr = 0; rr < rows; ++rr) {
      for (std::uint32_t cc = 0; cc < cols; ++cc) m(rr, cc) = r.f64();
    }
    tensors.emplace(name, std::move(m));
  }

  auto meta_it = tensors.find("meta.config");
  if (meta_it == tensors.end()) {
    throw FormatError(path + ": missing meta.config tensor");
  }
  std::vector<double> meta(meta_it->second.data(),
                           meta_it->second.data() + meta_it->second.size());
  ScoreNetParams params = init_params(decode_config(meta), /*seed=*/0);
  for_each_tensor(params, [&](const std::string& name, Eigen::MatrixXd& m) {
    auto it = tensors.find(name);
    if (it == tensors.end()) {
      throw FormatError(path + ": missing tensor " + name);
    }
    if (it->second.rows() != m.rows() || it->second.cols() != m.cols()) {
      throw FormatError(path + ": tensor " + name + " has wrong shape");
    }
    m = it->second;
  });
  return params;
}

}  // namespace eepose
