#include "checks/properties.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <numeric>
#include <random>

#include "retrieval_db/index.hpp"
#include "scan_io/synthetic_world.hpp"
#include "training/triplet.hpp"

namespace cvtnet::checks {

namespace {

constexpr double kPi = 3.14159265358979323846;

using Clock = std::chrono::steady_clock;

double since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

template <typename T>
double max_abs_diff(std::span<const T> a, std::span<const T> b) {
  if (a.size() != b.size()) return INFINITY;
  double m = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(double(a[i]) - double(b[i])));
  return m;
}

double view_diff(const views::MultiLayerView& a, const views::MultiLayerView& b) {
  if (a.layers() != b.layers() || a.height() != b.height() || a.width() != b.width()) return INFINITY;
  return max_abs_diff<float>(a.data(), b.data());
}

double volume_diff(const afe::FeatureVolume<float>& a, const afe::FeatureVolume<float>& b) {
  if (a.tokens.shape() != b.tokens.shape()) return INFINITY;
  return max_abs_diff<float>(a.tokens.values(), b.tokens.values());
}

std::vector<long> shift_set(int w) { return {1, w / 4, w / 2, w - 1}; }

scan::PointCloud random_cloud(std::size_t n, const views::ProjectionConfig& proj, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> xy(-proj.max_range, proj.max_range);
  std::uniform_real_distribution<double> zz(proj.bev_intervals.lower(), proj.bev_intervals.upper());
  scan::PointCloud c;
  c.points.reserve(n);
  while (c.points.size() < n) {
    const double x = xy(rng), y = xy(rng);
    if (x * x + y * y < 0.25) continue;
    c.points.push_back({x, y, zz(rng), 0.0});
  }
  return c;
}

scan::PointCloud keep_boundary_safe(const scan::PointCloud& in, int width, double margin) {
  scan::PointCloud out;
  out.scan_id = in.scan_id;
  for (const auto& p : in.points) {
    if (views::azimuth_boundary_distance(p.x, p.y, width) >= margin) out.points.push_back(p);
  }
  return out;
}

views::MultiLayerView random_view(views::ViewKind kind, int layers, int h, int w, double max_range,
                                  std::mt19937_64& rng) {
  views::MultiLayerView v(kind, layers, h, w);
  std::uniform_real_distribution<float> val(0.0f, static_cast<float>(max_range));
  std::bernoulli_distribution empty(0.3);
  for (float& x : v.data()) x = empty(rng) ? 0.0f : val(rng);
  return v;
}

afe::FeatureVolume<float> random_volume(std::size_t w, std::size_t c, afe::ViewTag tag, std::mt19937_64& rng) {
  afe::FeatureVolume<float> f;
  f.tag = tag;
  f.tokens = nn::Tensor<float>({w, c});
  std::normal_distribution<float> g(0.0f, 1.0f);
  for (float& x : f.tokens.values()) x = g(rng);
  return f;
}

}  // namespace

std::vector<scan::PointCloud> boundary_safe_clouds(std::size_t count, std::uint64_t seed,
                                                   const scan::SensorBounds& bounds, int width, double margin) {
  scan::WorldConfig wc;
  wc.num_scans = count;
  wc.num_revisits = 0;
  wc.bounds = bounds;
  const auto ds = scan::generate_synthetic_world(seed, wc);
  std::vector<scan::PointCloud> out;
  out.reserve(ds.size());
  for (const auto& s : ds.scans) out.push_back(keep_boundary_safe(s, width, margin));
  return out;
}

Measurement yaw_invariance(const mvf::CvtNet<float>& model, const std::vector<scan::PointCloud>& clouds) {
  const auto t0 = Clock::now();
  Measurement m;
  const int w = model.config().projection.width;
  for (const auto& cloud : clouds) {
    const auto base = model.describe(cloud).values;
    for (long k : shift_set(w)) {
      const auto rotated = model.describe(scan::rotate_yaw(cloud, 2.0 * kPi * double(k) / w)).values;
      m.value = std::max(m.value, max_abs_diff<float>(base, rotated));
      ++m.cases;
    }
  }
  m.seconds = since(t0);
  return m;
}

ChainReport equivariance_chain(const mvf::ModelConfig& config, std::size_t cases, std::uint64_t seed) {
  ChainReport r;
  std::mt19937_64 rng(seed);
  const auto& proj = config.projection;
  const int w = proj.width;
  std::uniform_int_distribution<long> pick_k(1, w - 1);
  const mvf::CvtNet<float> model(config, seed);
  const auto& params = model.params();
  const auto& enc = config.encoder;
  const std::size_t d = enc.d_model;

  auto t0 = Clock::now();
  for (std::size_t i = 0; i < cases; ++i) {
    const auto cloud = keep_boundary_safe(random_cloud(2000, proj, rng), w, 1e-6);
    const long k = pick_k(rng);
    const auto rotated = scan::rotate_yaw(cloud, 2.0 * kPi * double(k) / w);
    // A positive yaw moves azimuth toward smaller columns.
    const double e_riv = view_diff(views::project_riv(rotated, proj), views::column_shift(views::project_riv(cloud, proj), -k));
    const double e_bev = view_diff(views::project_bev(rotated, proj), views::column_shift(views::project_bev(cloud, proj), -k));
    r.projection.value = std::max({r.projection.value, e_riv, e_bev});
    ++r.projection.cases;
  }
  r.projection.seconds = since(t0);

  t0 = Clock::now();
  const int layers_riv = static_cast<int>(proj.riv_intervals.layers()) + 1;
  const int layers_bev = static_cast<int>(proj.bev_intervals.layers()) + 1;
  for (std::size_t i = 0; i < cases; ++i) {
    const bool riv = i % 2 == 0;
    const auto v = random_view(riv ? views::ViewKind::Riv : views::ViewKind::Bev, riv ? layers_riv : layers_bev,
                               proj.height, w, proj.max_range, rng);
    const long k = pick_k(rng);
    const auto a = afe::overlapnet_leg(views::column_shift(v, k), params, enc, config.input_scale());
    const auto b = afe::column_shift(afe::overlapnet_leg(v, params, enc, config.input_scale()), k);
    r.leg.value = std::max(r.leg.value, volume_diff(a, b));
    ++r.leg.cases;
  }
  r.leg.seconds = since(t0);

  t0 = Clock::now();
  for (std::size_t i = 0; i < cases; ++i) {
    const bool riv = i % 2 == 0;
    const auto f = random_volume(w, d, riv ? afe::ViewTag::Riv : afe::ViewTag::Bev, rng);
    const auto branch = riv ? views::ViewKind::Riv : views::ViewKind::Bev;
    const long k = pick_k(rng);
    const auto a = afe::intra_transformer(afe::column_shift(f, k), params, enc, branch);
    const auto b = afe::column_shift(afe::intra_transformer(f, params, enc, branch), k);
    r.intra.value = std::max(r.intra.value, volume_diff(a, b));
    ++r.intra.cases;
  }
  r.intra.seconds = since(t0);

  t0 = Clock::now();
  for (std::size_t i = 0; i < cases; ++i) {
    const auto fr = random_volume(w, d, afe::ViewTag::Riv, rng);
    const auto fb = random_volume(w, d, afe::ViewTag::Bev, rng);
    const long k = pick_k(rng);
    const auto a = mvf::inter_transformer(afe::column_shift(fr, k), afe::column_shift(fb, k), params, enc,
                                          config.fusion);
    const auto b = mvf::inter_transformer(fr, fb, params, enc, config.fusion);
    const double e = std::max({volume_diff(a.riv, afe::column_shift(b.riv, k)),
                               volume_diff(a.bev, afe::column_shift(b.bev, k)),
                               volume_diff(a.fused, afe::column_shift(b.fused, k))});
    r.inter.value = std::max(r.inter.value, e);
    ++r.inter.cases;
  }
  r.inter.seconds = since(t0);
  return r;
}

Measurement netvlad_permutation(const mvf::ModelConfig& config, std::size_t permutations, std::uint64_t seed) {
  const auto t0 = Clock::now();
  std::mt19937_64 rng(seed);
  const mvf::CvtNet<float> model(config, seed);
  const std::size_t w = static_cast<std::size_t>(config.projection.width);
  const auto f = random_volume(w, 2 * config.encoder.d_model, afe::ViewTag::Fused, rng);
  const auto base = mvf::netvlad_head(f, model.params(), "head.fused", config.fusion.netvlad);
  Measurement m;
  std::vector<std::size_t> perm(w);
  for (std::size_t p = 0; p < permutations; ++p) {
    std::iota(perm.begin(), perm.end(), std::size_t{0});
    std::shuffle(perm.begin(), perm.end(), rng);
    auto g = f;
    for (std::size_t i = 0; i < w; ++i) {
      for (std::size_t c = 0; c < f.channels(); ++c) g.tokens.at(i, c) = f.tokens.at(perm[i], c);
    }
    const auto out = mvf::netvlad_head(g, model.params(), "head.fused", config.fusion.netvlad);
    m.value = std::max(m.value, max_abs_diff<float>(base, out));
    ++m.cases;
  }
  m.seconds = since(t0);
  return m;
}

Measurement view_alignment(const views::ProjectionConfig& projection, std::size_t clouds, std::size_t points,
                           std::uint64_t seed) {
  const auto t0 = Clock::now();
  std::mt19937_64 rng(seed);
  Measurement m;
  std::size_t compared = 0;
  for (std::size_t c = 0; c < clouds; ++c) {
    const auto cloud = random_cloud(points, projection, rng);
    for (const auto& p : cloud.points) {
      const auto r = views::riv_pixel(p, projection);
      const auto b = views::bev_pixel(p, projection);
      ++m.cases;
      if (r.layer < 0 || b.layer < 0) continue;
      ++compared;
      if (r.col != b.col) m.value += 1.0;
    }
  }
  m.skipped = m.cases - compared;
  m.detail = std::to_string(compared) + " points kept by both views";
  m.seconds = since(t0);
  return m;
}

Measurement gradient_check(const mvf::ModelConfig& config, std::uint64_t seed, double step, double denominator_floor) {
  const auto t0 = Clock::now();
  scan::WorldConfig wc;
  wc.num_scans = 5;
  wc.num_revisits = 0;
  wc.bounds = {config.projection.fov_up_deg, config.projection.fov_down_deg, config.projection.max_range};
  const auto ds = scan::generate_synthetic_world(seed, wc);
  std::vector<views::MultiLayerView> riv, bev;
  for (const auto& s : ds.scans) {
    riv.push_back(views::project_riv(s, config.projection));
    bev.push_back(views::project_bev(s, config.projection));
  }
  mvf::CvtNet<double> model(config, seed);
  nn::ParamStore<double> params = model.params();
  constexpr double kAlpha = 0.5;

  auto evaluate = [&](bool with_grad) {
    nn::Tape<double> tape(with_grad, true);
    std::vector<nn::Tape<double>::Var> g;
    for (std::size_t i = 0; i < riv.size(); ++i) {
      g.push_back(mvf::CvtNet<double>::forward(tape, config, params, riv[i], bev[i]).descriptor);
    }
    const std::vector<nn::Tape<double>::Var> pos{g[1], g[2]}, neg{g[3], g[4]};
    const auto loss = tape.triplet_loss(g[0], pos, neg, kAlpha);
    if (with_grad) tape.backward(loss, params);
    return std::pair<double, std::uint64_t>{tape.value(loss)[0], tape.branch_signature()};
  };

  params.zero_grad();
  const auto [base_loss, base_sig] = evaluate(true);
  Measurement m;
  char buf[160];
  std::string worst_name;
  for (auto& [name, entry] : params) {
    const nn::Tensor<double> analytic = entry.grad;
    for (std::size_t i = 0; i < entry.value.size(); ++i) {
      const double original = entry.value[i];
      bool done = false;
      for (double h = step; h >= step * 1e-3 && !done; h *= 0.1) {
        entry.value[i] = original + h;
        const auto [lp, sp] = evaluate(false);
        entry.value[i] = original - h;
        const auto [lm, sm] = evaluate(false);
        entry.value[i] = original;
        if (sp != base_sig || sm != base_sig) continue;
        const double numeric = (lp - lm) / (2.0 * h);
        const double a = analytic[i];
        const double rel = std::abs(a - numeric) / std::max({std::abs(a), std::abs(numeric), denominator_floor});
        if (rel > m.value) {
          m.value = rel;
          std::snprintf(buf, sizeof buf, "%s[%zu] analytic %.6e numeric %.6e", name.c_str(), i, a, numeric);
          worst_name = buf;
        }
        done = true;
      }
      ++m.cases;
      if (!done) ++m.skipped;
    }
  }
  std::snprintf(buf, sizeof buf, "loss %.6f; worst at ", base_loss);
  m.detail = buf + worst_name;
  m.seconds = since(t0);
  return m;
}

Measurement triplet_oracle() {
  Measurement m;
  auto record = [&](double got, double want) {
    m.value = std::max(m.value, std::abs(got - want));
    ++m.cases;
  };
  // d == 0 everywhere: k_p * alpha.
  {
    const std::vector<double> q(4, 0.0);
    const std::vector<std::vector<double>> pos(6, q), neg(6, q);
    record(train::triplet_loss<double>(q, pos, neg, 0.5), 3.0);
    nn::Tape<double> tape(false);
    const auto vq = tape.constant(nn::Tensor<double>({1, 4}));
    std::vector<nn::Tape<double>::Var> p(6, vq), n(6, vq);
    record(tape.value(tape.triplet_loss(vq, p, n, 0.5))[0], 3.0);
  }
  // 2 * (0.5 + 2) - 4.
  {
    const std::vector<double> q{1.0, 0.0};
    const std::vector<std::vector<double>> pos{{1.0, 0.0}, {0.0, 1.0}}, neg{{-1.0, 0.0}};
    record(train::triplet_loss<double>(q, pos, neg, 0.5), 1.0);
    nn::Tape<double> tape(false);
    const auto vq = tape.constant(nn::Tensor<double>({1, 2}, {1.0, 0.0}));
    const std::vector<nn::Tape<double>::Var> p{tape.constant(nn::Tensor<double>({1, 2}, {1.0, 0.0})),
                                               tape.constant(nn::Tensor<double>({1, 2}, {0.0, 1.0}))};
    const std::vector<nn::Tape<double>::Var> n{tape.constant(nn::Tensor<double>({1, 2}, {-1.0, 0.0}))};
    record(tape.value(tape.triplet_loss(vq, p, n, 0.5))[0], 1.0);
  }
  // Negatives far away: clamped at zero.
  {
    const std::vector<double> q{0.0, 0.0};
    const std::vector<std::vector<double>> pos{{0.1, 0.0}}, neg{{3.0, 0.0}, {0.0, 4.0}};
    record(train::triplet_loss<double>(q, pos, neg, 0.5), 0.0);
  }
  return m;
}

RetrievalReport retrieval_oracle(std::size_t rows, std::size_t dim, std::size_t k, std::size_t queries,
                                 std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<float> g(0.0f, 1.0f);
  db::DescriptorIndex index(dim);
  index.reserve(rows);
  std::vector<float> data(rows * dim);
  for (float& x : data) x = g(rng);
  char id[32];
  for (std::size_t r = 0; r < rows; ++r) {
    std::snprintf(id, sizeof id, "r%07zu", r);
    index.insert(id, std::span<const float>(data.data() + r * dim, dim));
  }

  RetrievalReport rep;
  rep.exact = true;
  std::vector<double> times;
  std::vector<std::pair<double, std::size_t>> all(rows);
  for (std::size_t qi = 0; qi < queries; ++qi) {
    std::vector<float> q(dim);
    for (float& x : q) x = g(rng);
    const auto t0 = Clock::now();
    const auto hits = index.query_topk(q, k);
    times.push_back(since(t0) * 1e3);

    for (std::size_t r = 0; r < rows; ++r) {
      double s = 0.0;
      for (std::size_t c = 0; c < dim; ++c) {
        const double diff = double(data[r * dim + c]) - double(q[c]);
        s += diff * diff;
      }
      all[r] = {s, r};
    }
    const std::size_t kk = std::min(k, rows);
    std::partial_sort(all.begin(), all.begin() + static_cast<long>(kk), all.end());
    if (hits.size() != kk) rep.exact = false;
    for (std::size_t i = 0; i < kk && rep.exact; ++i) {
      if (hits[i].row != all[i].second) rep.exact = false;
      if (std::abs(hits[i].distance - all[i].first) > 1e-9 * std::max(1.0, all[i].first)) rep.exact = false;
    }
    ++rep.queries;
  }
  std::sort(times.begin(), times.end());
  rep.worst_ms = times.back();
  rep.median_ms = times[times.size() / 2];
  return rep;
}

DescriptorShape descriptor_shape(const mvf::CvtNet<float>& model, const scan::PointCloud& cloud) {
  DescriptorShape s;
  const auto d = model.describe(cloud).values;
  s.length = d.size();
  const std::size_t seg = model.config().segment_dim();
  for (std::size_t off = 0; off + seg <= d.size(); off += seg) {
    double n = 0.0;
    for (std::size_t i = off; i < off + seg; ++i) n += double(d[i]) * d[i];
    s.worst_norm_error = std::max(s.worst_norm_error, std::abs(1.0 - std::sqrt(n)));
  }
  return s;
}

}  // namespace cvtnet::checks
