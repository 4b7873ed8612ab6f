#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstring>
#include <fstream>
#include <functional>
#include <iomanip>
#include <numeric>
#include <set>
#include <sstream>

#include "bpclip/archive.hpp"
#include "bpclip/data.hpp"
#include "bpclip/metrics.hpp"
#include "bpclip/oracles.hpp"
#include "bpclip/synthetic.hpp"
#include "bpclip/text_bank.hpp"
#include "bpclip/train.hpp"
#include "bpclip/verify.hpp"

namespace bpclip::verify {
namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

// Runs `body`, which fills detail and returns pass/fail; exceptions fail the check.
CheckResult timed(const std::string& name, double budget_s, const std::function<bool(std::ostringstream&)>& body) {
  CheckResult r;
  r.name = name;
  std::ostringstream detail;
  detail << std::setprecision(3);
  const auto t0 = Clock::now();
  try {
    r.passed = body(detail);
  } catch (const std::exception& e) {
    r.passed = false;
    detail << " exception: " << e.what();
  }
  r.seconds = seconds_since(t0);
  if (budget_s > 0 && r.seconds > budget_s) {
    r.passed = false;
    detail << " over the " << budget_s << " s budget";
  }
  r.detail = detail.str();
  return r;
}

template <typename T>
Tensor<T> random_tensor(const Shape& shape, std::mt19937_64& rng, double lo = -1.0, double hi = 1.0) {
  Tensor<T> t(shape);
  for (auto& v : t.data()) v = static_cast<T>(lo + (hi - lo) * (static_cast<double>(rng() >> 11) * 0x1.0p-53));
  return t;
}

template <typename T>
Tensor<T> random_unit_rows(std::int64_t rows, std::int64_t d, std::mt19937_64& rng) {
  auto t = random_tensor<double>(Shape{rows, d}, rng);
  for (std::int64_t r = 0; r < rows; ++r) {
    double s = 0.0;
    for (std::int64_t c = 0; c < d; ++c) s += t.at(r, c) * t.at(r, c);
    for (std::int64_t c = 0; c < d; ++c) t.at(r, c) /= std::sqrt(s);
  }
  return t.template cast<T>();
}

// Unit rows spread around one shared direction. At tau = 100, random banks
// push the softmax into saturation where gradients sink below finite-difference
// resolution; clustered rows keep tau * (c_j - c_k) of order one.
Tensor<double> clustered_unit_rows(std::int64_t rows, std::int64_t d, double spread, std::mt19937_64& rng) {
  const auto base = random_tensor<double>(Shape{d}, rng);
  auto t = random_tensor<double>(Shape{rows, d}, rng, -spread, spread);
  for (std::int64_t r = 0; r < rows; ++r) {
    double s = 0.0;
    for (std::int64_t c = 0; c < d; ++c) {
      t.at(r, c) += base[c];
      s += t.at(r, c) * t.at(r, c);
    }
    for (std::int64_t c = 0; c < d; ++c) t.at(r, c) /= std::sqrt(s);
  }
  return t;
}

ParameterSet<double> with_prefixes(const ParameterSet<double>& all, std::initializer_list<std::string> prefixes) {
  ParameterSet<double> out;
  for (const auto& [name, e] : all.entries()) {
    for (const auto& p : prefixes) {
      if (name.starts_with(p)) {
        out.add(name, e.value, e.trainable);
        break;
      }
    }
  }
  return out;
}

std::vector<double> as_vector(const Tensor<double>& t) { return {t.data().begin(), t.data().end()}; }

Tensor<double> fixture_bank(const Options& opt) {
  return load_text_bank(opt.text_bank).embeddings;
}

}  // namespace

ModelConfig small_model(Mode mode, std::int64_t dim, std::int64_t text_dim, std::int64_t image_size) {
  ModelConfig cfg;
  cfg.backbone.stage_channels = {4, 8, 8, 16, 16};
  cfg.backbone.height = cfg.backbone.width = image_size;
  cfg.glp.mode = mode;
  cfg.glp.dim = cfg.attention.dim = cfg.head.dim = dim;
  cfg.attention.num_heads = 4;
  cfg.head.text_dim = text_dim;
  cfg.head.hidden = 16;
  return cfg;
}

std::vector<GradFragment> gradient_fragments() {
  std::vector<GradFragment> out;
  std::mt19937_64 rng(2024);

  // GLP gating at level 1: 4 channels, 8x8 map pooled onto a 2x2 grid.
  BackboneConfig bb;
  bb.stage_channels = {4, 4, 4, 4, 4};
  for (Mode mode : {Mode::fr, Mode::nr}) {
    GlpConfig gc{mode, 6};
    ParameterSet<double> all;
    init_glp_params(bb, gc, rng, all);
    // non-zero biases so the checks exercise them
    for (const auto& n : all.names()) {
      if (n.ends_with(".bias")) all.mutable_value(n) = random_tensor<double>(all.get(n).shape(), rng, -0.2, 0.2);
    }
    auto leaves = with_prefixes(all, {"glp.level1."});
    leaves.add("input.fd", random_tensor<double>(Shape{2, 4, 8, 8}, rng));
    if (mode == Mode::fr) leaves.add("input.fr", random_tensor<double>(Shape{2, 4, 8, 8}, rng));
    ScalarFn loss = [mode](Context<double>& ctx) {
      auto g = mode == Mode::fr ? gated_fuse_fr(ctx, ctx.param("input.fd"), ctx.param("input.fr"), 1)
                                : gated_fuse_nr(ctx, ctx.param("input.fd"), 1);
      return random_projection(pool_project(ctx, g, 1, 2, 2), 11);
    };
    out.push_back({std::string("glp gating ") + (mode == Mode::fr ? "FR" : "NR"), std::move(leaves), loss});
  }

  for (bool ln : {false, true}) {
    AttentionConfig ac;
    ac.dim = 8;
    ac.num_heads = 2;
    ac.layer_norm = ln;
    ParameterSet<double> all;
    init_attention_params(ac, rng, all);
    for (const auto& n : all.names()) {
      if (n.find(".ln") != std::string::npos) all.mutable_value(n) = random_tensor<double>(all.get(n).shape(), rng, 0.5, 1.5);
    }
    auto leaves = with_prefixes(all, {"attn.msca1."});
    leaves.add("input.shallow", random_tensor<double>(Shape{2, 4, 8}, rng));
    leaves.add("input.deep", random_tensor<double>(Shape{2, 4, 8}, rng));
    ScalarFn loss = [ac](Context<double>& ctx) {
      return random_projection(msca_block(ctx, ctx.param("input.shallow"), ctx.param("input.deep"), 1, ac), 12);
    };
    out.push_back({ln ? "msca_block (layer norm)" : "msca_block", std::move(leaves), loss});
  }

  AttentionConfig ac;
  ac.dim = 8;
  ac.num_heads = 2;
  {
    ParameterSet<double> all;
    init_attention_params(ac, rng, all);
    auto leaves = with_prefixes(all, {"attn.sa2."});
    leaves.add("input.g", random_tensor<double>(Shape{2, 4, 8}, rng));
    ScalarFn loss = [ac](Context<double>& ctx) { return random_projection(sa_block(ctx, ctx.param("input.g"), 2, ac), 13); };
    out.push_back({"sa_block", std::move(leaves), loss});
  }
  {
    ParameterSet<double> all;
    init_attention_params(ac, rng, all);
    for (const auto& n : all.names()) {
      if (n.ends_with(".bias")) all.mutable_value(n) = random_tensor<double>(all.get(n).shape(), rng, -0.3, 0.3);
    }
    auto leaves = with_prefixes(all, {"attn.info3.", "attn.gate3."});
    leaves.add("input.info", random_tensor<double>(Shape{2, 4, 8}, rng));
    leaves.add("input.weight", random_tensor<double>(Shape{2, 4, 8}, rng));
    ScalarFn loss = [](Context<double>& ctx) {
      return random_projection(fuse_branches(ctx, ctx.param("input.info"), ctx.param("input.weight"), 3), 14);
    };
    out.push_back({"fuse_branches", std::move(leaves), loss});
  }
  {
    HeadConfig hc;
    hc.dim = 8;
    hc.text_dim = 16;
    hc.hidden = 8;
    hc.learn_tau = true;
    ParameterSet<double> leaves;
    init_head_params(hc, rng, leaves);
    for (const auto& n : leaves.names()) {
      if (n.ends_with(".bias")) leaves.mutable_value(n) = random_tensor<double>(leaves.get(n).shape(), rng, -0.3, 0.3);
    }
    for (int i = 1; i <= kNumFusedLevels; ++i) {
      leaves.add("input.g" + std::to_string(i), random_tensor<double>(Shape{2, 4, 8}, rng));
    }
    const auto bank = clustered_unit_rows(kNumAdjectives, hc.text_dim, 0.1, rng);
    ScalarFn loss = [hc, bank](Context<double>& ctx) {
      FusedFeatures<double> f;
      for (int i = 1; i <= kNumFusedLevels; ++i) f.levels[static_cast<std::size_t>(i - 1)] = ctx.param("input.g" + std::to_string(i));
      return random_projection(head_forward(ctx, f, &bank, hc).score, 15);
    };
    out.push_back({"clip_head", std::move(leaves), loss});
  }
  {
    ParameterSet<double> leaves;
    leaves.add("input.pred", random_tensor<double>(Shape{5}, rng));
    const auto target = random_tensor<double>(Shape{5}, rng, 0.0, 1.0);
    ScalarFn loss = [target](Context<double>& ctx) {
      return mse_loss(ctx.param("input.pred"), Var<double>::constant(target));
    };
    out.push_back({"mse_loss", std::move(leaves), loss});
  }
  return out;
}

std::vector<GradFragment> variant_fragments(const ModelConfig& cfg, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::vector<GradFragment> out;
  const std::int64_t L = 4;
  {
    ParameterSet<double> leaves;
    init_attention_params(cfg.attention, rng, leaves);
    for (const auto& n : leaves.names()) {
      if (n.ends_with(".bias")) leaves.mutable_value(n) = random_tensor<double>(leaves.get(n).shape(), rng, -0.3, 0.3);
    }
    for (int i = 1; i <= kNumLevels; ++i) {
      leaves.add("input.p" + std::to_string(i), random_tensor<double>(Shape{2, L, cfg.attention.dim}, rng));
    }
    const AttentionConfig ac = cfg.attention;
    ScalarFn loss = [ac](Context<double>& ctx) {
      PooledFeatures<double> p;
      for (int i = 1; i <= kNumLevels; ++i) p.levels[static_cast<std::size_t>(i - 1)] = ctx.param("input.p" + std::to_string(i));
      const auto fused = attention_forward(ctx, p, ac);
      auto total = random_projection(fused.levels[0], 16);
      for (int i = 1; i < kNumFusedLevels; ++i) {
        total = add(total, random_projection(fused.levels[static_cast<std::size_t>(i)], 16 + static_cast<std::uint64_t>(i)));
      }
      return total;
    };
    out.push_back({"attention_forward", std::move(leaves), loss});
  }
  {
    ParameterSet<double> leaves;
    init_head_params(cfg.head, rng, leaves);
    for (const auto& n : leaves.names()) {
      if (n.ends_with(".bias")) leaves.mutable_value(n) = random_tensor<double>(leaves.get(n).shape(), rng, -0.3, 0.3);
    }
    for (int i = 1; i <= kNumFusedLevels; ++i) {
      leaves.add("input.g" + std::to_string(i), random_tensor<double>(Shape{2, L, cfg.head.dim}, rng));
    }
    const auto bank = clustered_unit_rows(kNumAdjectives, cfg.head.text_dim, 0.1, rng);
    const HeadConfig hc = cfg.head;
    ScalarFn loss = [hc, bank](Context<double>& ctx) {
      FusedFeatures<double> f;
      for (int i = 1; i <= kNumFusedLevels; ++i) f.levels[static_cast<std::size_t>(i - 1)] = ctx.param("input.g" + std::to_string(i));
      return random_projection(head_forward(ctx, f, hc.text_head ? &bank : nullptr, hc).score, 20);
    };
    out.push_back({"head_forward", std::move(leaves), loss});
  }
  return out;
}

CheckResult attention_oracle() {
  return timed("attention_oracle", 1.0, [](std::ostringstream& d) {
    std::mt19937_64 rng(7);
    double worst = 0.0, worst_row = 0.0;
    for (int c = 0; c < 20; ++c) {
      const int B = 1 + static_cast<int>(uniform_index(rng, 2));
      const int Lq = 1 + static_cast<int>(uniform_index(rng, 4));
      const int Lk = 1 + static_cast<int>(uniform_index(rng, 4));
      const int heads = 1 << uniform_index(rng, 3);  // 1, 2, 4
      const int D = heads * (1 + static_cast<int>(uniform_index(rng, 8 / heads)));
      const auto q = random_tensor<double>(Shape{B, Lq, D}, rng, -2, 2);
      const auto k = random_tensor<double>(Shape{B, Lk, D}, rng, -2, 2);
      const auto v = random_tensor<double>(Shape{B, Lk, D}, rng, -2, 2);
      Tensor<double> probs;
      const auto out = sdp_attention(Var<double>::constant(q), Var<double>::constant(k), Var<double>::constant(v), heads, &probs);
      const auto ref = oracle::attention(as_vector(q), as_vector(k), as_vector(v), B, Lq, Lk, D, heads);
      for (std::size_t i = 0; i < ref.out.size(); ++i) {
        worst = std::max(worst, std::abs(out.value()[i] - ref.out[i]) / std::max(std::abs(ref.out[i]), 1e-12));
      }
      for (std::size_t i = 0; i < ref.probs.size(); ++i) {
        worst = std::max(worst, std::abs(probs[i] - ref.probs[i]) / std::max(ref.probs[i], 1e-12));
      }
      for (std::int64_t row = 0; row < static_cast<std::int64_t>(ref.probs.size()) / Lk; ++row) {
        double s = 0.0;
        for (int j = 0; j < Lk; ++j) s += probs[row * Lk + j];
        worst_row = std::max(worst_row, std::abs(s - 1.0));
      }
    }
    d << "20 cases, max rel err " << worst << ", max |row sum - 1| " << worst_row;
    return worst <= 1e-6 && worst_row <= 1e-12;
  });
}

CheckResult gradient_suite() {
  return timed("gradient_suite", 30.0, [](std::ostringstream& d) {
    bool ok = true;
    for (auto& f : gradient_fragments()) {
      GradCheckOptions o;
      o.seed = 99;
      const auto r = gradient_check(f.loss, f.leaves, o);
      d << f.name << " " << r.max_rel_error << "; ";
      ok = ok && r.passed(1e-6);
    }
    auto fragments = gradient_fragments();
    auto& ctl = fragments[2];  // msca_block
    GradCheckOptions o;
    o.seed = 99;
    o.gradient_scale = 1.01;
    const auto bad = gradient_check(ctl.loss, ctl.leaves, o);
    const bool control_fails = !bad.passed(1e-6);
    d << "corrupted control " << bad.max_rel_error << (control_fails ? " (rejected)" : " (NOT rejected)");
    return ok && control_fails;
  });
}

CheckResult shape_law() {
  return timed("shape_law", 5.0, [](std::ostringstream& d) {
    bool ok = true;
    for (std::int64_t size : {384, 64}) {
      const auto cfg = small_model(Mode::fr, 16, 32, size);
      const auto params = init_model_params<float>(cfg, 3);
      std::mt19937_64 rng(size);
      const auto bank = random_unit_rows<float>(kNumAdjectives, cfg.head.text_dim, rng);
      Context<float> ctx(params, false);
      auto img = Var<float>::constant(random_tensor<float>(Shape{1, 3, size, size}, rng, 0, 1));
      auto ref = Var<float>::constant(random_tensor<float>(Shape{1, 3, size, size}, rng, 0, 1));
      const auto out = model_forward(ctx, img, &ref, cfg, &bank);
      for (int i = 1; i <= kNumLevels; ++i) {
        const Shape& s = out.distorted.level(i).shape();
        ok = ok && s[2] == (size >> i) && s[3] == (size >> i) && s[1] == cfg.backbone.channels(i);
        ok = ok && out.pooled.level(i).shape() == Shape{1, (size >> 5) * (size >> 5), cfg.glp.dim};
      }
      int fused = 0;
      std::int64_t reg_width = 0;
      for (int i = 0; i < kNumFusedLevels; ++i) {
        if (out.fused.levels[static_cast<std::size_t>(i)].defined()) ++fused;
        reg_width += out.head.similarities[static_cast<std::size_t>(i)].dim(1);
      }
      ok = ok && fused == 4 && reg_width == kRegressionWidth &&
           params.get("head.reg.fc1.weight").dim(1) == kRegressionWidth && out.score.shape() == Shape{1};
      d << size << "^2: L=" << out.pooled.level(1).dim(1) << ", fused " << fused << ", regression input " << reg_width
        << "; ";
    }
    return ok;
  });
}

CheckResult glp_invariants() {
  return timed("glp_invariants", 0, [](std::ostringstream& d) {
    const auto cfg = small_model(Mode::fr, 8, 16, 64);
    std::mt19937_64 rng(5);
    ParameterSet<double> params;
    init_glp_params(cfg.backbone, cfg.glp, rng, params);
    for (const auto& n : params.names()) {
      if (n.ends_with(".bias")) params.mutable_value(n) = random_tensor<double>(params.get(n).shape(), rng, -0.5, 0.5);
    }
    FeaturePyramid<double> pyr;
    for (int i = 1; i <= kNumLevels; ++i) {
      pyr.levels[static_cast<std::size_t>(i - 1)] = Var<double>::constant(
          random_tensor<double>(Shape{2, cfg.backbone.channels(i), 64 >> i, 64 >> i}, rng));
    }
    Context<double> ctx(params, false);
    const auto pooled = glp_forward(ctx, pyr, &pyr, cfg.glp);
    double spread = 0.0;
    for (const auto& m : pooled.masks) {
      const auto [lo, hi] = std::minmax_element(m.value().data().begin(), m.value().data().end());
      spread = std::max(spread, *hi - *lo);
    }
    // Window pooling keeps each channel's spatial mean.
    double mean_err = 0.0, oracle_err = 0.0;
    for (auto [h, w, wh, ww] : {std::array<int, 4>{32, 32, 16, 16}, {8, 12, 4, 6}, {4, 4, 2, 2}}) {
      const auto x = random_tensor<double>(Shape{1, 3, h, w}, rng);
      const auto y = avg_pool2d(Var<double>::constant(x), wh, ww).value();
      const auto ref = oracle::window_average(as_vector(x), 3, h, w, wh, ww);
      for (int c = 0; c < 3; ++c) {
        double mx = 0.0, my = 0.0;
        for (int i = 0; i < h * w; ++i) mx += x[c * h * w + i];
        const int n = (h / wh) * (w / ww);
        for (int i = 0; i < n; ++i) my += y[c * n + i];
        mx /= h * w;
        my /= n;
        mean_err = std::max(mean_err, std::abs(mx - my) / std::max(std::abs(mx), 1e-12));
      }
      for (std::size_t i = 0; i < ref.size(); ++i) oracle_err = std::max(oracle_err, std::abs(y[i] - ref[i]));
    }
    d << "zero-difference mask spread " << spread << ", pooled mean rel err " << mean_err << ", oracle diff "
      << oracle_err;
    return spread <= 1e-12 && mean_err <= 1e-6 && oracle_err <= 1e-12;
  });
}

CheckResult similarity_invariants(const Options& opt) {
  return timed("similarity_invariants", 0, [&](std::ostringstream& d) {
    const auto bank = fixture_bank(opt);
    const std::int64_t dt = bank.dim(1);
    std::mt19937_64 rng(8);
    const auto x = random_tensor<double>(Shape{3, dt}, rng);
    Tensor<double> cos;
    const auto s = adjective_similarity(Var<double>::constant(x), bank, 100.0, &cos).value();
    double scale_err = 0.0;
    for (double alpha : {0.1, 1.0, 10.0}) {
      Tensor<double> xs = x;
      for (auto& v : xs.data()) v *= alpha;
      const auto sa = adjective_similarity(Var<double>::constant(xs), bank, 100.0).value();
      scale_err = std::max(scale_err, max_abs_diff(s, sa));
    }
    double sum_err = 0.0, min_s = 1.0;
    for (std::int64_t b = 0; b < 3; ++b) {
      double sum = 0.0;
      for (std::int64_t k = 0; k < kNumAdjectives; ++k) {
        sum += s.at(b, k);
        min_s = std::min(min_s, s.at(b, k));
      }
      sum_err = std::max(sum_err, std::abs(sum - 1.0));
    }
    const auto s0 = adjective_similarity(Var<double>::constant(x), bank, 0.0).value();
    double uniform_err = 0.0;
    for (double v : s0.data()) uniform_err = std::max(uniform_err, std::abs(v - 1.0 / kNumAdjectives));
    const auto ref = oracle::cosines(as_vector(x), as_vector(bank), 3, kNumAdjectives, static_cast<int>(dt));
    double cos_err = 0.0, cos_bound = 0.0;
    for (std::size_t i = 0; i < ref.size(); ++i) {
      cos_err = std::max(cos_err, std::abs(cos[i] - ref[i]));
      cos_bound = std::max(cos_bound, std::abs(cos[i]) - 1.0);
    }
    d << "scale err " << scale_err << ", |sum-1| " << sum_err << ", min s " << min_s << ", tau=0 err " << uniform_err
      << ", cosine err " << cos_err;
    return scale_err <= 1e-6 && sum_err <= 1e-6 && min_s > 0.0 && uniform_err <= 1e-12 && cos_err <= 1e-6 &&
           cos_bound <= 1e-6;
  });
}

CheckResult metric_correctness() {
  return timed("metric_correctness", 0, [](std::ostringstream& d) {
    std::mt19937_64 rng(31);
    double worst = 0.0, affine_err = 0.0;
    bool monotone_exact = true;
    int cases = 0;
    while (cases < 50) {
      const std::size_t n = 3 + uniform_index(rng, 28);
      const bool ties = cases % 2 == 0;
      std::vector<double> p(n), g(n);
      for (std::size_t i = 0; i < n; ++i) {
        p[i] = ties ? static_cast<double>(uniform_index(rng, 5)) : static_cast<double>(rng() >> 11) * 0x1.0p-53;
        g[i] = ties ? static_cast<double>(uniform_index(rng, 6)) : static_cast<double>(rng() >> 11) * 0x1.0p-53;
      }
      const auto distinct = [](const std::vector<double>& v) { return std::set<double>(v.begin(), v.end()).size(); };
      if (distinct(p) < 2 || distinct(g) < 2) continue;
      ++cases;
      worst = std::max(worst, std::abs(srcc(p, g) - oracle::spearman(p, g)));
      worst = std::max(worst, std::abs(plcc(p, g) - oracle::pearson(p, g)));
      std::vector<double> m1(n), m2(n), a1(n);
      for (std::size_t i = 0; i < n; ++i) {
        m1[i] = std::exp(p[i]);
        m2[i] = p[i] * p[i] * p[i] + 2.0 * p[i];
        a1[i] = 3.0 * p[i] - 7.0;
      }
      monotone_exact = monotone_exact && srcc(m1, g) == srcc(p, g) && srcc(m2, g) == srcc(p, g);
      affine_err = std::max(affine_err, std::abs(plcc(a1, g) - plcc(p, g)));
    }
    d << cases << " cases, max oracle diff " << worst << ", monotone invariance "
      << (monotone_exact ? "exact" : "BROKEN") << ", affine diff " << affine_err;
    return worst <= 1e-10 && monotone_exact && affine_err <= 1e-12;
  });
}

CheckResult overfit_smoke(const Options& opt) {
  return timed("overfit_smoke", 300.0, [&](std::ostringstream& d) {
    const auto data = make_synthetic({4, 4, 64, 1, Mode::fr});
    auto cfg = small_model(Mode::fr, 32, 512, 64);
    cfg.backbone.stage_channels = {8, 16, 32, 64, 128};
    cfg.head.hidden = 64;
    const auto bank = fixture_bank(opt).cast<float>();
    auto params = init_model_params<float>(cfg, 1);
    TrainConfig tc;
    tc.lr = 3e-4;
    tc.schedule_unit = ScheduleUnit::step;
    tc.t_max = 500;
    tc.epochs = 500;
    tc.batch_size = 16;
    tc.patch_size = 64;
    tc.resize = 0;
    tc.seed = 3;
    const auto res = train(tc, cfg, params, &bank, data, {}, {});
    const auto scores = predict(cfg, params, &bank, data, 64, 16);
    const auto m = evaluate_scores(scores, data);
    const double first = res.step_losses.front();
    const double tail = std::accumulate(res.step_losses.end() - 10, res.step_losses.end(), 0.0) / 10.0;
    d << res.step_losses.size() << " steps, loss " << first << " -> " << tail << " (" << first / tail
      << "x), train SRCC " << m.srcc;
    return res.step_losses.size() == 500 && m.srcc >= 0.95 && first / tail >= 10.0;
  });
}

CheckResult protocol_checks(const Options& opt) {
  return timed("protocol_checks", 0, [&](std::ostringstream& d) {
    bool ok = true;
    // FR 6:2:2 over 10 reference groups, 10 repeats.
    SampleManifest fr;
    fr.meta.mode = Mode::fr;
    for (int g = 0; g < 10; ++g) {
      for (int k = 0; k < 3; ++k) {
        fr.entries.push_back({"g" + std::to_string(g) + "_" + std::to_string(k), "d.png", "r" + std::to_string(g) + ".png",
                              0.1 * k + 0.01 * g, "r" + std::to_string(g)});
      }
    }
    std::set<std::vector<std::size_t>> distinct_trains;
    for (int rep = 0; rep < 10; ++rep) {
      const auto s = split_dataset(fr, SplitSpec::fr_default(17, rep));
      auto groups = [&](const std::vector<std::size_t>& idx) {
        std::set<std::string> out;
        for (auto i : idx) out.insert(fr.entries[i].group_key);
        return out;
      };
      const auto a = groups(s.train), b = groups(s.val), c = groups(s.test);
      std::set<std::string> all(a);
      all.insert(b.begin(), b.end());
      all.insert(c.begin(), c.end());
      ok = ok && a.size() == 6 && b.size() == 2 && c.size() == 2 && all.size() == 10 &&
           s.train.size() + s.val.size() + s.test.size() == fr.entries.size();
      ok = ok && split_dataset(fr, SplitSpec::fr_default(17, rep)).train == s.train;
      distinct_trains.insert(s.train);
    }
    ok = ok && distinct_trains.size() > 1;
    d << "FR 6:2:2 disjoint over 10 repeats " << (ok ? "ok" : "FAILED") << "; ";

    SampleManifest nr;
    nr.meta.mode = Mode::nr;
    for (int i = 0; i < 10; ++i) nr.entries.push_back({"n" + std::to_string(i), "x.png", "", 0.1 * i, "n" + std::to_string(i)});
    const auto ns = split_dataset(nr, SplitSpec::nr_default(17, 0));
    const bool nr_ok = ns.train.size() == 8 && ns.test.size() == 2 && ns.val.empty();
    d << "NR 8:2 " << (nr_ok ? "ok" : "FAILED") << "; ";
    ok = ok && nr_ok;

    // Crop/flip synchrony: the distorted image is a pixelwise function of the
    // reference, so aligned patches must keep that relation exactly.
    std::mt19937_64 rng(4);
    const auto ref = random_tensor<float>(Shape{3, 80, 96}, rng, 0, 1);
    Image dist = ref;
    for (auto& v : dist.data()) v = v * 0.5f + 0.25f;
    bool sync = true;
    int hflips = 0, vflips = 0;
    std::set<std::pair<std::int64_t, std::int64_t>> offsets;
    for (int i = 0; i < 1000; ++i) {
      auto srng = sample_rng(17, "sample" + std::to_string(i), 0);
      const auto p = augment_patch(dist, &ref, 64, srng, true);
      sync = sync && p.reference == apply_crop(ref, p.crop) && p.distorted == apply_crop(dist, p.crop);
      for (std::size_t k = 0; k < p.reference.data().size() && sync; ++k) {
        sync = p.distorted.data()[k] == p.reference.data()[k] * 0.5f + 0.25f;
      }
      hflips += p.crop.hflip;
      vflips += p.crop.vflip;
      offsets.insert({p.crop.top, p.crop.left});
    }
    const bool flips_ok = hflips > 400 && hflips < 600 && vflips > 400 && vflips < 600 && offsets.size() > 100;
    d << "1000 FR crops synchronized " << (sync ? "ok" : "FAILED") << " (hflip " << hflips << ", vflip " << vflips
      << "); ";
    ok = ok && sync && flips_ok;

    // Frozen tensors and the text bank survive training byte for byte.
    const auto bank = fixture_bank(opt).cast<float>();
    const Tensor<float> bank_before = bank;
    auto cfg = small_model(Mode::fr, 16, bank.dim(1), 64);
    auto params = init_model_params<float>(cfg, 2);
    const auto before = to_archive(params);
    const auto data = make_synthetic({2, 2, 64, 5, Mode::fr});
    TrainConfig tc;
    tc.lr = 1e-3;
    tc.epochs = 3;
    tc.batch_size = 4;
    tc.patch_size = 64;
    tc.resize = 0;
    tc.t_max = 3;
    const auto res = train(tc, cfg, params, &bank, data, {}, {});
    const auto after = to_archive(params);
    bool frozen_same = true, some_changed = false;
    std::size_t frozen_count = 0;
    for (const auto& [name, e] : params.entries()) {
      const bool same = after.get<float>(name) == before.get<float>(name) &&
                        std::memcmp(after.get<float>(name).ptr(), before.get<float>(name).ptr(),
                                    static_cast<std::size_t>(e.value.numel()) * sizeof(float)) == 0;
      if (!e.trainable) {
        ++frozen_count;
        frozen_same = frozen_same && same;
      } else if (!same) {
        some_changed = true;
      }
    }
    const bool bank_same = std::memcmp(bank.ptr(), bank_before.ptr(), static_cast<std::size_t>(bank.numel()) * 4) == 0;
    d << frozen_count << " frozen tensors " << (frozen_same ? "unchanged" : "MODIFIED") << ", text bank "
      << (bank_same ? "unchanged" : "MODIFIED") << "; ";
    ok = ok && frozen_same && some_changed && bank_same && frozen_count > 0;

    // Cosine schedule against the closed form.
    const CosineSchedule sched{1e-4, 1e-6, 50};
    const double mid = (1e-4 + 1e-6) / 2.0;
    double lr_err = std::max({std::abs(sched(0) - 1e-4), std::abs(sched(50) - 1e-6), std::abs(sched(25) - mid)});
    for (std::size_t i = 0; i < res.step_lrs.size(); ++i) {
      const double t = static_cast<double>(i);  // one step per epoch here
      const double closed = 0.5 * 1e-3 * (1.0 + std::cos(3.14159265358979323846 * t / 3.0));
      lr_err = std::max(lr_err, std::abs(res.step_lrs[i] - closed));
    }
    d << "schedule err " << lr_err;
    return ok && lr_err <= 1e-12;
  });
}

CheckResult format_roundtrip(const Options& opt) {
  return timed("format_roundtrip", 0, [&](std::ostringstream& d) {
    std::filesystem::create_directories(opt.scratch_dir);
    std::mt19937_64 rng(12);
    TensorArchive ar;
    ar.put("a.weight", random_tensor<float>(Shape{3, 4, 5}, rng));
    ar.put("b.bias", random_tensor<double>(Shape{7}, rng));
    ar.put("scalar", random_tensor<float>(Shape{}, rng));
    ar.metadata()["note"] = "round trip";
    const auto path = opt.scratch_dir / "roundtrip.bpta";
    ar.save(path);
    const auto back = TensorArchive::load(path);
    const auto b1 = ar.serialize(), b2 = back.serialize();
    std::ifstream f(path, std::ios::binary);
    const std::vector<std::uint8_t> file((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
    const bool bitwise = b1 == b2 && b1 == file && back.get<float>("a.weight") == ar.get<float>("a.weight") &&
                         back.dtype("b.bias") == DType::f64;
    // flip one payload byte
    auto corrupt = file;
    corrupt[corrupt.size() - 10] ^= 0x40;
    bool detected = false;
    try {
      TensorArchive::deserialize(corrupt);
    } catch (const LoadError& e) {
      detected = e.kind() == LoadError::Kind::checksum;
    }
    bool truncated = false;
    try {
      TensorArchive::deserialize(std::span(file).first(file.size() - 7));
    } catch (const LoadError& e) {
      truncated = e.kind() == LoadError::Kind::checksum;
    }
    d << "bitwise " << (bitwise ? "identical" : "DIFFERENT") << ", corrupted payload "
      << (detected ? "rejected" : "ACCEPTED") << ", truncated file " << (truncated ? "rejected" : "ACCEPTED");
    return bitwise && detected && truncated;
  });
}

CheckResult ablation_switches() {
  return timed("ablation_switches", 0, [](std::ostringstream& d) {
    bool ok = true;
    struct Variant {
      const char* name;
      std::function<void(ModelConfig&)> apply;
    };
    const std::vector<Variant> variants = {
        {"single-branch", [](ModelConfig& c) { c.attention.dual_branch = false; }},
        {"top-down", [](ModelConfig& c) { c.attention.direction = MscaDirection::top_down; }},
        {"no-text-head", [](ModelConfig& c) { c.head.text_head = false; }},
    };
    for (const auto& v : variants) {
      for (std::int64_t size : {64, 384}) {
        auto cfg = small_model(Mode::fr, 16, 32, size);
        v.apply(cfg);
        const auto params = init_model_params<float>(cfg, 4);
        std::mt19937_64 rng(6);
        const auto bank = random_unit_rows<float>(kNumAdjectives, 32, rng);
        Context<float> ctx(params, false);
        auto img = Var<float>::constant(random_tensor<float>(Shape{2, 3, size, size}, rng, 0, 1));
        auto ref = Var<float>::constant(random_tensor<float>(Shape{2, 3, size, size}, rng, 0, 1));
        const auto out = model_forward(ctx, img, &ref, cfg, cfg.head.text_head ? &bank : nullptr);
        std::int64_t width = 0;
        for (const auto& s : out.head.similarities) width += s.dim(1);
        const std::int64_t L = (size >> 5) * (size >> 5);
        bool shapes = out.score.shape() == Shape{2} && out.score.value().all_finite() && width == kRegressionWidth;
        for (const auto& f : out.fused.levels) shapes = shapes && f.shape() == Shape{2, L, 16};
        ok = ok && shapes;
        if (!shapes) d << v.name << " " << size << "^2 shapes FAILED; ";
      }
      auto cfg = small_model(Mode::fr, 8, 16, 64);
      cfg.attention.num_heads = 2;
      cfg.head.hidden = 8;
      v.apply(cfg);
      for (auto& frag : variant_fragments(cfg, 21)) {
        GradCheckOptions o;
        o.samples_per_tensor = 4;
        o.seed = 5;
        const auto r = gradient_check(frag.loss, frag.leaves, o);
        d << v.name << " " << frag.name << " grad " << r.max_rel_error << "; ";
        ok = ok && r.passed(1e-6);
      }
    }
    return ok;
  });
}

std::vector<CheckResult> run_all(const Options& opt) {
  std::vector<CheckResult> out;
  out.push_back(attention_oracle());
  out.push_back(gradient_suite());
  out.push_back(shape_law());
  out.push_back(glp_invariants());
  out.push_back(similarity_invariants(opt));
  out.push_back(metric_correctness());
  if (opt.include_slow) out.push_back(overfit_smoke(opt));
  out.push_back(protocol_checks(opt));
  out.push_back(format_roundtrip(opt));
  out.push_back(ablation_switches());
  return out;
}

std::string format_line(const CheckResult& r) {
  std::ostringstream s;
  s << (r.passed ? "PASS" : "FAIL") << "  " << r.name << "  (" << std::fixed << std::setprecision(2) << r.seconds
    << " s)  " << r.detail;
  return s.str();
}

}  // namespace bpclip::verify
