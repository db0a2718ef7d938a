#include "stgen/builtin_model.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <utility>

#include "stgen/numeric.hpp"

namespace stgen {

namespace {

// --- small dense kernels (row-major) ------------------------------------

void matvec(const double* A, const double* x, double* y, int m, int n) {
  for (int i = 0; i < m; ++i) {
    const double* row = A + static_cast<std::size_t>(i) * n;
    double acc = 0.0;
    for (int j = 0; j < n; ++j) acc += row[j] * x[j];
    y[i] = acc;
  }
}

void matvec_add(const double* A, const double* x, double* y, int m, int n) {
  for (int i = 0; i < m; ++i) {
    const double* row = A + static_cast<std::size_t>(i) * n;
    double acc = 0.0;
    for (int j = 0; j < n; ++j) acc += row[j] * x[j];
    y[i] += acc;
  }
}

// y += A^T x with A (m x n), x (m), y (n)
void matvec_t_add(const double* A, const double* x, double* y, int m, int n) {
  for (int i = 0; i < m; ++i) {
    const double* row = A + static_cast<std::size_t>(i) * n;
    const double xi = x[i];
    if (xi == 0.0) continue;
    for (int j = 0; j < n; ++j) y[j] += xi * row[j];
  }
}

// G += a x^T with G (m x n)
void outer_add(double* G, const double* a, const double* x, int m, int n) {
  for (int i = 0; i < m; ++i) {
    double* row = G + static_cast<std::size_t>(i) * n;
    const double ai = a[i];
    if (ai == 0.0) continue;
    for (int j = 0; j < n; ++j) row[j] += ai * x[j];
  }
}

double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

// --- dropout -------------------------------------------------------------
//
// Inverted dropout: kept units are scaled by 1/keep so disabled passes need
// no rescaling, and rate 0 is an exact identity (masks skipped entirely).
// Unit masks are sampled once per pass (variational style); attention-
// probability masks are a stateless hash of (seed, layer, query, key) so
// incremental decoding and from-scratch passes agree bit for bit.

enum MaskSite : int { kSiteEmbed = 0, kSiteTop = 1, kSiteFfnBase = 2 };

struct MaskScales {
  bool active = false;
  double keep = 1.0;
  std::uint64_t seed = 0;
  std::vector<std::vector<double>> unit;

  const double* site(int s) const { return unit[static_cast<std::size_t>(s)].data(); }

  double attn(int layer, int qpos, int kpos) const {
    if (!active) return 1.0;
    std::uint64_t h = splitmix64(seed ^ (0x5bd1e9955bd1e995ULL + static_cast<std::uint64_t>(layer)));
    h = splitmix64(h ^ (static_cast<std::uint64_t>(qpos) * 0x9e3779b97f4a7c15ULL));
    h = splitmix64(h ^ static_cast<std::uint64_t>(kpos + 1));
    const double u = static_cast<double>(h >> 11) * 0x1.0p-53;
    return u < keep ? 1.0 / keep : 0.0;
  }
};

MaskScales materialize_masks(const DropoutMask& mask, const ArchitectureConfig& arch) {
  MaskScales m;
  const bool active = mask.mode == DropoutMask::Mode::Stochastic && arch.dropout_rate > 0.0;
  m.active = active;
  m.keep = active ? 1.0 - arch.dropout_rate : 1.0;
  m.seed = mask.seed;

  const int n_sites = arch.kind == ArchitectureConfig::Kind::Gru ? 2 : 2 + arch.layers;
  m.unit.resize(static_cast<std::size_t>(n_sites));
  auto fill = [&](int site, int dim) {
    auto& v = m.unit[static_cast<std::size_t>(site)];
    v.assign(static_cast<std::size_t>(dim), 1.0);
    if (!active) return;
    Rng rng(derive_seed(mask.seed, {0xD60ull, static_cast<std::uint64_t>(site)}));
    for (double& s : v) s = rng.uniform() < m.keep ? 1.0 / m.keep : 0.0;
  };
  fill(kSiteEmbed, arch.embed_dim);
  fill(kSiteTop, arch.kind == ArchitectureConfig::Kind::Gru ? arch.hidden_dim : arch.embed_dim);
  if (arch.kind == ArchitectureConfig::Kind::Attention)
    for (int l = 0; l < arch.layers; ++l) fill(kSiteFfnBase + l, arch.hidden_dim);
  return m;
}

void apply_scale(const double* scale, const double* src, double* dst, int n) {
  for (int i = 0; i < n; ++i) dst[i] = src[i] * scale[i];
}

// --- layer norm ----------------------------------------------------------

void layernorm_fwd(const double* x, const double* g, const double* b, double* y, int n, double& mu,
                   double& rstd) {
  double m = 0.0;
  for (int i = 0; i < n; ++i) m += x[i];
  m /= n;
  double var = 0.0;
  for (int i = 0; i < n; ++i) var += (x[i] - m) * (x[i] - m);
  var /= n;
  const double r = 1.0 / std::sqrt(var + 1e-5);
  for (int i = 0; i < n; ++i) y[i] = g[i] * (x[i] - m) * r + b[i];
  mu = m;
  rstd = r;
}

// dx += backward(dy); dg/db accumulated.
void layernorm_bwd(const double* dy, const double* x, double mu, double rstd, const double* g, double* dg,
                   double* db, double* dx, int n) {
  double m1 = 0.0, m2 = 0.0;
  for (int i = 0; i < n; ++i) {
    const double xhat = (x[i] - mu) * rstd;
    const double dyg = dy[i] * g[i];
    m1 += dyg;
    m2 += dyg * xhat;
    dg[i] += dy[i] * xhat;
    db[i] += dy[i];
  }
  m1 /= n;
  m2 /= n;
  for (int i = 0; i < n; ++i) {
    const double xhat = (x[i] - mu) * rstd;
    dx[i] += rstd * (dy[i] * g[i] - m1 - xhat * m2);
  }
}

}  // namespace

std::string_view arch_kind_name(ArchitectureConfig::Kind kind) {
  return kind == ArchitectureConfig::Kind::Gru ? "gru" : "attention";
}

ArchitectureConfig::Kind parse_arch_kind(std::string_view name) {
  if (name == "gru") return ArchitectureConfig::Kind::Gru;
  if (name == "attention") return ArchitectureConfig::Kind::Attention;
  throw ConfigError("unknown architecture kind: " + std::string(name));
}

// --- parameter layout -----------------------------------------------------

void BuiltinModel::build_views() {
  views_.clear();
  const int V = vocab_.size();
  const int E = arch_.embed_dim;
  const int H = arch_.hidden_dim;
  std::size_t offset = 0;
  auto add = [&](const std::string& name, std::size_t rows, std::size_t cols) {
    views_.push_back({name, offset, rows, cols});
    offset += rows * cols;
  };

  add("embed", static_cast<std::size_t>(V), static_cast<std::size_t>(E));
  if (arch_.kind == ArchitectureConfig::Kind::Gru) {
    for (const char* gate : {"z", "r", "n"}) {
      add(std::string("w_") + gate, H, E);
      add(std::string("u_") + gate, H, H);
      add(std::string("b_") + gate, 1, H);
    }
  } else {
    add("pos", static_cast<std::size_t>(arch_.max_positions), static_cast<std::size_t>(E));
    for (int l = 0; l < arch_.layers; ++l) {
      const std::string suffix = "." + std::to_string(l);
      add("ln1_g" + suffix, 1, E);
      add("ln1_b" + suffix, 1, E);
      add("w_q" + suffix, E, E);
      add("b_q" + suffix, 1, E);
      add("w_k" + suffix, E, E);
      add("b_k" + suffix, 1, E);
      add("w_v" + suffix, E, E);
      add("b_v" + suffix, 1, E);
      add("w_p" + suffix, E, E);
      add("b_p" + suffix, 1, E);
      add("ln2_g" + suffix, 1, E);
      add("ln2_b" + suffix, 1, E);
      add("w_f1" + suffix, H, E);
      add("b_f1" + suffix, 1, H);
      add("w_f2" + suffix, E, H);
      add("b_f2" + suffix, 1, E);
    }
    add("lnf_g", 1, E);
    add("lnf_b", 1, E);
  }
  add("w_out", static_cast<std::size_t>(V), arch_.kind == ArchitectureConfig::Kind::Gru
                                                ? static_cast<std::size_t>(H)
                                                : static_cast<std::size_t>(E));
  add("b_out", 1, static_cast<std::size_t>(V));
  params_.assign(offset, 0.0);
}

std::span<double> BuiltinModel::view(std::string_view name) {
  for (const auto& v : views_)
    if (v.name == name) return std::span<double>(params_.data() + v.offset, v.size());
  throw ConfigError("no parameter view named '" + std::string(name) + "'");
}

void BuiltinModel::init_params(std::uint64_t seed) {
  for (std::size_t vi = 0; vi < views_.size(); ++vi) {
    const ParamView& v = views_[vi];
    double* data = params_.data() + v.offset;
    Rng rng(derive_seed(seed, {0x171ull, vi}));
    if (v.name.rfind("b_", 0) == 0 || v.name.find("ln") == 0) {
      const bool gain = v.name.find("_g") != std::string::npos;
      std::fill(data, data + v.size(), gain ? 1.0 : 0.0);
    } else if (v.name == "embed" || v.name == "pos") {
      for (std::size_t i = 0; i < v.size(); ++i) data[i] = 0.1 * rng.gaussian();
    } else {
      const double scale = 1.0 / std::sqrt(static_cast<double>(v.cols));
      for (std::size_t i = 0; i < v.size(); ++i) data[i] = scale * rng.gaussian();
    }
  }
}

BuiltinModel::BuiltinModel(ArchitectureConfig arch, Vocab vocab, std::uint64_t init_seed)
    : arch_(arch), vocab_(std::move(vocab)) {
  if (arch_.embed_dim < 1 || arch_.hidden_dim < 1 || arch_.layers < 1)
    throw ConfigError("architecture dimensions must be positive");
  if (arch_.dropout_rate < 0.0 || arch_.dropout_rate >= 1.0)
    throw ConfigError("dropout rate must be in [0, 1)");
  build_views();
  init_params(init_seed);
}

// --- GRU ------------------------------------------------------------------

namespace {

struct GruW {
  const double *embed, *wz, *uz, *bz, *wr, *ur, *br, *wn, *un, *bn, *wo, *bo;
  int V, E, H;
};

struct GruG {
  double *embed, *wz, *uz, *bz, *wr, *ur, *br, *wn, *un, *bn, *wo, *bo;
};

struct GruCache {
  int id = 0;
  std::vector<double> x, h_prev, z, r, n, unh, h;
  std::vector<double> probs;  // filled at loss positions only
  int target = -1;
};

}  // namespace

struct GruNet {
  static GruW resolve(const BuiltinModel& m) {
    GruW w{};
    const double* base = m.parameters().data();
    auto ptr = [&](std::string_view name) -> const double* {
      for (const auto& v : m.views())
        if (v.name == name) return base + v.offset;
      throw ConfigError("missing view");
    };
    w.embed = ptr("embed");
    w.wz = ptr("w_z");
    w.uz = ptr("u_z");
    w.bz = ptr("b_z");
    w.wr = ptr("w_r");
    w.ur = ptr("u_r");
    w.br = ptr("b_r");
    w.wn = ptr("w_n");
    w.un = ptr("u_n");
    w.bn = ptr("b_n");
    w.wo = ptr("w_out");
    w.bo = ptr("b_out");
    w.V = m.vocab().size();
    w.E = m.arch().embed_dim;
    w.H = m.arch().hidden_dim;
    return w;
  }

  static GruG resolve_grad(const BuiltinModel& m, double* gbase) {
    GruG g{};
    auto ptr = [&](std::string_view name) -> double* {
      for (const auto& v : m.views())
        if (v.name == name) return gbase + v.offset;
      throw ConfigError("missing view");
    };
    g.embed = ptr("embed");
    g.wz = ptr("w_z");
    g.uz = ptr("u_z");
    g.bz = ptr("b_z");
    g.wr = ptr("w_r");
    g.ur = ptr("u_r");
    g.br = ptr("b_r");
    g.wn = ptr("w_n");
    g.un = ptr("u_n");
    g.bn = ptr("b_n");
    g.wo = ptr("w_out");
    g.bo = ptr("b_out");
    return g;
  }

  // h_out may alias h_prev storage only after all reads; callers pass
  // distinct buffers.
  static void cell(const GruW& w, const double* x, const double* h_prev, double* h_out, double* z,
                   double* r, double* n, double* unh, double* az, double* ar, double* an) {
    const int H = w.H, E = w.E;
    std::memcpy(az, w.bz, sizeof(double) * H);
    matvec_add(w.wz, x, az, H, E);
    matvec_add(w.uz, h_prev, az, H, H);
    std::memcpy(ar, w.br, sizeof(double) * H);
    matvec_add(w.wr, x, ar, H, E);
    matvec_add(w.ur, h_prev, ar, H, H);
    matvec(w.un, h_prev, unh, H, H);
    for (int i = 0; i < H; ++i) {
      z[i] = sigmoid(az[i]);
      r[i] = sigmoid(ar[i]);
    }
    std::memcpy(an, w.bn, sizeof(double) * H);
    matvec_add(w.wn, x, an, H, E);
    for (int i = 0; i < H; ++i) an[i] += r[i] * unh[i];
    for (int i = 0; i < H; ++i) {
      n[i] = std::tanh(an[i]);
      h_out[i] = (1.0 - z[i]) * n[i] + z[i] * h_prev[i];
    }
  }

  static void head(const GruW& w, const MaskScales& m, const double* h, StepOutput& out,
                   std::vector<double>& hd_scratch) {
    const int H = w.H, V = w.V;
    hd_scratch.resize(static_cast<std::size_t>(H));
    apply_scale(m.site(kSiteTop), h, hd_scratch.data(), H);
    out.hidden.resize(static_cast<std::size_t>(V));
    std::memcpy(out.hidden.data(), w.bo, sizeof(double) * V);
    matvec_add(w.wo, hd_scratch.data(), out.hidden.data(), V, H);
    out.distribution.resize(static_cast<std::size_t>(V));
    softmax(out.hidden, out.distribution);
  }
};

namespace {

class GruStream final : public StepStream {
 public:
  GruStream(const BuiltinModel* model, const DropoutMask& mask)
      : masks_(materialize_masks(mask, model->arch())), w_(GruNet::resolve(*model)) {
    const std::size_t H = static_cast<std::size_t>(w_.H);
    h_.assign(H, 0.0);
    z_.resize(H);
    r_.resize(H);
    n_.resize(H);
    unh_.resize(H);
    az_.resize(H);
    ar_.resize(H);
    an_.resize(H);
    hnext_.resize(H);
    x_.resize(static_cast<std::size_t>(w_.E));
  }

  void reset(std::span<const int> prefix) override {
    std::fill(h_.begin(), h_.end(), 0.0);
    for (int id : prefix) consume(id);
    refresh();
  }

  void feed(int token_id) override {
    consume(token_id);
    refresh();
  }

  const StepOutput& output() const override { return out_; }

 private:
  void consume(int id) {
    const double* e = w_.embed + static_cast<std::size_t>(id) * w_.E;
    apply_scale(masks_.site(kSiteEmbed), e, x_.data(), w_.E);
    GruNet::cell(w_, x_.data(), h_.data(), hnext_.data(), z_.data(), r_.data(), n_.data(), unh_.data(),
                 az_.data(), ar_.data(), an_.data());
    h_.swap(hnext_);
  }

  void refresh() { GruNet::head(w_, masks_, h_.data(), out_, hd_); }

  MaskScales masks_;
  GruW w_;
  std::vector<double> h_, hnext_, x_, z_, r_, n_, unh_, az_, ar_, an_, hd_;
  StepOutput out_;
};

// Per-example GRU training pass. Returns summed NLL over response positions
// and the number of scored positions; accumulates gradients when g != null.
std::pair<double, int> gru_example_pass(const BuiltinModel& model, const GruW& w, const LabeledPair& pair,
                                        const MaskScales& masks, double inv_tokens, GruG* g) {
  const std::vector<int> ids = model.encode(pair.mr, pair.text);
  const std::size_t sep_index = ids.size() - pair.text.size() - 2;
  const int H = w.H, E = w.E, V = w.V;
  const std::size_t steps = ids.size() - 1;  // final token is never consumed

  std::vector<GruCache> caches(steps);
  std::vector<double> x(static_cast<std::size_t>(E));
  std::vector<double> az(static_cast<std::size_t>(H)), ar(static_cast<std::size_t>(H)),
      an(static_cast<std::size_t>(H));
  std::vector<double> h(static_cast<std::size_t>(H), 0.0);
  std::vector<double> hd(static_cast<std::size_t>(H)), logits(static_cast<std::size_t>(V));

  double nll = 0.0;
  int scored = 0;
  for (std::size_t j = 0; j < steps; ++j) {
    GruCache& c = caches[j];
    c.id = ids[j];
    const double* e = w.embed + static_cast<std::size_t>(c.id) * E;
    c.x.resize(static_cast<std::size_t>(E));
    apply_scale(masks.site(kSiteEmbed), e, c.x.data(), E);
    c.h_prev = h;
    c.z.resize(static_cast<std::size_t>(H));
    c.r.resize(static_cast<std::size_t>(H));
    c.n.resize(static_cast<std::size_t>(H));
    c.unh.resize(static_cast<std::size_t>(H));
    c.h.resize(static_cast<std::size_t>(H));
    GruNet::cell(w, c.x.data(), c.h_prev.data(), c.h.data(), c.z.data(), c.r.data(), c.n.data(),
                 c.unh.data(), az.data(), ar.data(), an.data());
    h = c.h;

    if (j >= sep_index) {
      apply_scale(masks.site(kSiteTop), h.data(), hd.data(), H);
      std::memcpy(logits.data(), w.bo, sizeof(double) * V);
      matvec_add(w.wo, hd.data(), logits.data(), V, H);
      const double lse = log_sum_exp(logits);
      c.target = ids[j + 1];
      nll += lse - logits[static_cast<std::size_t>(c.target)];
      ++scored;
      if (g) {
        c.probs.resize(static_cast<std::size_t>(V));
        softmax(logits, c.probs);
      }
    }
  }

  if (g) {
    std::vector<double> dh(static_cast<std::size_t>(H), 0.0);
    std::vector<double> dlogits(static_cast<std::size_t>(V));
    std::vector<double> dhd(static_cast<std::size_t>(H));
    std::vector<double> daz(static_cast<std::size_t>(H)), dar(static_cast<std::size_t>(H)),
        dan(static_cast<std::size_t>(H)), dx(static_cast<std::size_t>(E)),
        dhprev(static_cast<std::size_t>(H)), dunh(static_cast<std::size_t>(H));
    for (std::size_t jj = steps; jj-- > 0;) {
      const GruCache& c = caches[jj];
      if (c.target >= 0) {
        for (int i = 0; i < V; ++i) dlogits[static_cast<std::size_t>(i)] = c.probs[static_cast<std::size_t>(i)] * inv_tokens;
        dlogits[static_cast<std::size_t>(c.target)] -= inv_tokens;
        apply_scale(masks.site(kSiteTop), c.h.data(), hd.data(), H);
        outer_add(g->wo, dlogits.data(), hd.data(), V, H);
        for (int i = 0; i < V; ++i) g->bo[i] += dlogits[static_cast<std::size_t>(i)];
        std::fill(dhd.begin(), dhd.end(), 0.0);
        matvec_t_add(w.wo, dlogits.data(), dhd.data(), V, H);
        const double* s1 = masks.site(kSiteTop);
        for (int i = 0; i < H; ++i) dh[static_cast<std::size_t>(i)] += dhd[static_cast<std::size_t>(i)] * s1[i];
      }

      // cell backward
      for (int i = 0; i < H; ++i) {
        const double dhi = dh[static_cast<std::size_t>(i)];
        const double zi = c.z[static_cast<std::size_t>(i)];
        const double ni = c.n[static_cast<std::size_t>(i)];
        daz[static_cast<std::size_t>(i)] = dhi * (c.h_prev[static_cast<std::size_t>(i)] - ni) * zi * (1.0 - zi);
        dan[static_cast<std::size_t>(i)] = dhi * (1.0 - zi) * (1.0 - ni * ni);
        dhprev[static_cast<std::size_t>(i)] = dhi * zi;
      }
      for (int i = 0; i < H; ++i) {
        const double ri = c.r[static_cast<std::size_t>(i)];
        const double dri = dan[static_cast<std::size_t>(i)] * c.unh[static_cast<std::size_t>(i)];
        dar[static_cast<std::size_t>(i)] = dri * ri * (1.0 - ri);
        dunh[static_cast<std::size_t>(i)] = dan[static_cast<std::size_t>(i)] * ri;
      }
      outer_add(g->un, dunh.data(), c.h_prev.data(), H, H);
      matvec_t_add(w.un, dunh.data(), dhprev.data(), H, H);

      outer_add(g->wz, daz.data(), c.x.data(), H, E);
      outer_add(g->uz, daz.data(), c.h_prev.data(), H, H);
      for (int i = 0; i < H; ++i) g->bz[i] += daz[static_cast<std::size_t>(i)];
      matvec_t_add(w.uz, daz.data(), dhprev.data(), H, H);

      outer_add(g->wr, dar.data(), c.x.data(), H, E);
      outer_add(g->ur, dar.data(), c.h_prev.data(), H, H);
      for (int i = 0; i < H; ++i) g->br[i] += dar[static_cast<std::size_t>(i)];
      matvec_t_add(w.ur, dar.data(), dhprev.data(), H, H);

      outer_add(g->wn, dan.data(), c.x.data(), H, E);
      for (int i = 0; i < H; ++i) g->bn[i] += dan[static_cast<std::size_t>(i)];

      std::fill(dx.begin(), dx.end(), 0.0);
      matvec_t_add(w.wz, daz.data(), dx.data(), H, E);
      matvec_t_add(w.wr, dar.data(), dx.data(), H, E);
      matvec_t_add(w.wn, dan.data(), dx.data(), H, E);
      const double* s0 = masks.site(kSiteEmbed);
      double* emb_row = g->embed + static_cast<std::size_t>(c.id) * E;
      for (int i = 0; i < E; ++i) emb_row[i] += dx[static_cast<std::size_t>(i)] * s0[i];

      dh = dhprev;
    }
  }
  return {nll, scored};
}

}  // namespace

// --- attention --------------------------------------------------------------

namespace {

struct AttnLayerW {
  const double *ln1_g, *ln1_b, *wq, *bq, *wk, *bk, *wv, *bv, *wp, *bp;
  const double *ln2_g, *ln2_b, *w1, *b1, *w2, *b2;
};

struct AttnW {
  const double *embed, *pos, *lnf_g, *lnf_b, *wo, *bo;
  std::vector<AttnLayerW> layer;
  int V, E, F, L, P;
};

struct AttnLayerG {
  double *ln1_g, *ln1_b, *wq, *bq, *wk, *bk, *wv, *bv, *wp, *bp;
  double *ln2_g, *ln2_b, *w1, *b1, *w2, *b2;
};

struct AttnG {
  double *embed, *pos, *lnf_g, *lnf_b, *wo, *bo;
  std::vector<AttnLayerG> layer;
};

AttnW resolve_attn(const BuiltinModel& m, std::span<const double> params) {
  AttnW w{};
  const double* base = params.data();
  auto ptr = [&](const std::string& name) -> const double* {
    for (const auto& v : m.views())
      if (v.name == name) return base + v.offset;
    throw ConfigError("missing view " + name);
  };
  w.embed = ptr("embed");
  w.pos = ptr("pos");
  w.lnf_g = ptr("lnf_g");
  w.lnf_b = ptr("lnf_b");
  w.wo = ptr("w_out");
  w.bo = ptr("b_out");
  const ArchitectureConfig& a = m.arch();
  w.V = m.vocab().size();
  w.E = a.embed_dim;
  w.F = a.hidden_dim;
  w.L = a.layers;
  w.P = a.max_positions;
  for (int l = 0; l < a.layers; ++l) {
    const std::string s = "." + std::to_string(l);
    AttnLayerW lw{};
    lw.ln1_g = ptr("ln1_g" + s);
    lw.ln1_b = ptr("ln1_b" + s);
    lw.wq = ptr("w_q" + s);
    lw.bq = ptr("b_q" + s);
    lw.wk = ptr("w_k" + s);
    lw.bk = ptr("b_k" + s);
    lw.wv = ptr("w_v" + s);
    lw.bv = ptr("b_v" + s);
    lw.wp = ptr("w_p" + s);
    lw.bp = ptr("b_p" + s);
    lw.ln2_g = ptr("ln2_g" + s);
    lw.ln2_b = ptr("ln2_b" + s);
    lw.w1 = ptr("w_f1" + s);
    lw.b1 = ptr("b_f1" + s);
    lw.w2 = ptr("w_f2" + s);
    lw.b2 = ptr("b_f2" + s);
    w.layer.push_back(lw);
  }
  return w;
}

AttnG resolve_attn_grad(const BuiltinModel& m, double* gbase) {
  AttnG g{};
  auto ptr = [&](const std::string& name) -> double* {
    for (const auto& v : m.views())
      if (v.name == name) return gbase + v.offset;
    throw ConfigError("missing view " + name);
  };
  g.embed = ptr("embed");
  g.pos = ptr("pos");
  g.lnf_g = ptr("lnf_g");
  g.lnf_b = ptr("lnf_b");
  g.wo = ptr("w_out");
  g.bo = ptr("b_out");
  for (int l = 0; l < m.arch().layers; ++l) {
    const std::string s = "." + std::to_string(l);
    AttnLayerG lg{};
    lg.ln1_g = ptr("ln1_g" + s);
    lg.ln1_b = ptr("ln1_b" + s);
    lg.wq = ptr("w_q" + s);
    lg.bq = ptr("b_q" + s);
    lg.wk = ptr("w_k" + s);
    lg.bk = ptr("b_k" + s);
    lg.wv = ptr("w_v" + s);
    lg.bv = ptr("b_v" + s);
    lg.wp = ptr("w_p" + s);
    lg.bp = ptr("b_p" + s);
    lg.ln2_g = ptr("ln2_g" + s);
    lg.ln2_b = ptr("ln2_b" + s);
    lg.w1 = ptr("w_f1" + s);
    lg.b1 = ptr("b_f1" + s);
    lg.w2 = ptr("w_f2" + s);
    lg.b2 = ptr("b_f2" + s);
    g.layer.push_back(lg);
  }
  return g;
}

// One position forward through a single block; kcache/vcache are flat
// (position * E) and already contain this position's k/v after the call.
struct BlockScratch {
  std::vector<double> u, q, k, v, scores, a, ctx, o, h1, wn, fpre, f1, f1d, f2;
};

void block_forward(const AttnLayerW& lw, const MaskScales& masks, int layer, int E, int F, int t,
                   const double* h_in, std::vector<double>& kcache, std::vector<double>& vcache,
                   BlockScratch& s, double* h_out, double* mu1, double* rstd1, double* mu2, double* rstd2) {
  const double inv_sqrt = 1.0 / std::sqrt(static_cast<double>(E));
  s.u.resize(static_cast<std::size_t>(E));
  layernorm_fwd(h_in, lw.ln1_g, lw.ln1_b, s.u.data(), E, *mu1, *rstd1);

  s.q.resize(static_cast<std::size_t>(E));
  s.k.resize(static_cast<std::size_t>(E));
  s.v.resize(static_cast<std::size_t>(E));
  std::memcpy(s.q.data(), lw.bq, sizeof(double) * E);
  matvec_add(lw.wq, s.u.data(), s.q.data(), E, E);
  std::memcpy(s.k.data(), lw.bk, sizeof(double) * E);
  matvec_add(lw.wk, s.u.data(), s.k.data(), E, E);
  std::memcpy(s.v.data(), lw.bv, sizeof(double) * E);
  matvec_add(lw.wv, s.u.data(), s.v.data(), E, E);
  kcache.insert(kcache.end(), s.k.begin(), s.k.end());
  vcache.insert(vcache.end(), s.v.begin(), s.v.end());

  const int n_keys = t + 1;
  s.scores.resize(static_cast<std::size_t>(n_keys));
  for (int j = 0; j < n_keys; ++j) {
    const double* kj = kcache.data() + static_cast<std::size_t>(j) * E;
    double acc = 0.0;
    for (int i = 0; i < E; ++i) acc += s.q[static_cast<std::size_t>(i)] * kj[i];
    s.scores[static_cast<std::size_t>(j)] = acc * inv_sqrt;
  }
  s.a.resize(static_cast<std::size_t>(n_keys));
  softmax(s.scores, s.a);

  s.ctx.assign(static_cast<std::size_t>(E), 0.0);
  for (int j = 0; j < n_keys; ++j) {
    const double w = s.a[static_cast<std::size_t>(j)] * masks.attn(layer, t, j);
    if (w == 0.0) continue;
    const double* vj = vcache.data() + static_cast<std::size_t>(j) * E;
    for (int i = 0; i < E; ++i) s.ctx[static_cast<std::size_t>(i)] += w * vj[i];
  }
  s.o.resize(static_cast<std::size_t>(E));
  std::memcpy(s.o.data(), lw.bp, sizeof(double) * E);
  matvec_add(lw.wp, s.ctx.data(), s.o.data(), E, E);

  s.h1.resize(static_cast<std::size_t>(E));
  for (int i = 0; i < E; ++i) s.h1[static_cast<std::size_t>(i)] = h_in[i] + s.o[static_cast<std::size_t>(i)];

  s.wn.resize(static_cast<std::size_t>(E));
  layernorm_fwd(s.h1.data(), lw.ln2_g, lw.ln2_b, s.wn.data(), E, *mu2, *rstd2);

  s.fpre.resize(static_cast<std::size_t>(F));
  std::memcpy(s.fpre.data(), lw.b1, sizeof(double) * F);
  matvec_add(lw.w1, s.wn.data(), s.fpre.data(), F, E);
  s.f1.resize(static_cast<std::size_t>(F));
  for (int i = 0; i < F; ++i) s.f1[static_cast<std::size_t>(i)] = std::tanh(s.fpre[static_cast<std::size_t>(i)]);
  s.f1d.resize(static_cast<std::size_t>(F));
  apply_scale(masks.site(kSiteFfnBase + layer), s.f1.data(), s.f1d.data(), F);
  s.f2.resize(static_cast<std::size_t>(E));
  std::memcpy(s.f2.data(), lw.b2, sizeof(double) * E);
  matvec_add(lw.w2, s.f1d.data(), s.f2.data(), E, F);
  for (int i = 0; i < E; ++i) h_out[i] = s.h1[static_cast<std::size_t>(i)] + s.f2[static_cast<std::size_t>(i)];
}

class AttnStream final : public StepStream {
 public:
  AttnStream(const BuiltinModel* model, const DropoutMask& mask)
      : masks_(materialize_masks(mask, model->arch())),
        w_(resolve_attn(*model, model->parameters())) {
    kcache_.resize(static_cast<std::size_t>(w_.L));
    vcache_.resize(static_cast<std::size_t>(w_.L));
    h_.resize(static_cast<std::size_t>(w_.E));
    hf_.resize(static_cast<std::size_t>(w_.E));
    hd_.resize(static_cast<std::size_t>(w_.E));
  }

  void reset(std::span<const int> prefix) override {
    t_ = 0;
    for (auto& c : kcache_) c.clear();
    for (auto& c : vcache_) c.clear();
    for (int id : prefix) consume(id);
    refresh();
  }

  void feed(int token_id) override {
    consume(token_id);
    refresh();
  }

  const StepOutput& output() const override { return out_; }

 private:
  void consume(int id) {
    if (t_ >= w_.P) throw Error("sequence exceeds max_positions of the attention model");
    const int E = w_.E;
    std::vector<double> x(static_cast<std::size_t>(E));
    const double* e = w_.embed + static_cast<std::size_t>(id) * E;
    const double* p = w_.pos + static_cast<std::size_t>(t_) * E;
    for (int i = 0; i < E; ++i) x[static_cast<std::size_t>(i)] = e[i] + p[i];
    apply_scale(masks_.site(kSiteEmbed), x.data(), h_.data(), E);
    double mu1, rstd1, mu2, rstd2;
    std::vector<double> h_next(static_cast<std::size_t>(E));
    for (int l = 0; l < w_.L; ++l) {
      block_forward(w_.layer[static_cast<std::size_t>(l)], masks_, l, E, w_.F, t_, h_.data(),
                    kcache_[static_cast<std::size_t>(l)], vcache_[static_cast<std::size_t>(l)], scratch_,
                    h_next.data(), &mu1, &rstd1, &mu2, &rstd2);
      h_ = h_next;
    }
    ++t_;
  }

  void refresh() {
    const int E = w_.E, V = w_.V;
    double muf, rstdf;
    layernorm_fwd(h_.data(), w_.lnf_g, w_.lnf_b, hf_.data(), E, muf, rstdf);
    apply_scale(masks_.site(kSiteTop), hf_.data(), hd_.data(), E);
    out_.hidden.resize(static_cast<std::size_t>(V));
    std::memcpy(out_.hidden.data(), w_.bo, sizeof(double) * V);
    matvec_add(w_.wo, hd_.data(), out_.hidden.data(), V, E);
    out_.distribution.resize(static_cast<std::size_t>(V));
    softmax(out_.hidden, out_.distribution);
  }

  MaskScales masks_;
  AttnW w_;
  int t_ = 0;
  std::vector<std::vector<double>> kcache_, vcache_;
  std::vector<double> h_, hf_, hd_;
  BlockScratch scratch_;
  StepOutput out_;
};

struct AttnPosCache {
  std::vector<double> h_in, u, a, ctx, h1, wn, f1;
  double mu1 = 0.0, rstd1 = 0.0, mu2 = 0.0, rstd2 = 0.0;
};

struct AttnTopCache {
  std::vector<double> h_top;  // input of the final layernorm
  std::vector<double> probs;
  double muf = 0.0, rstdf = 0.0;
  int target = -1;
};

std::pair<double, int> attn_example_pass(const BuiltinModel& model, const AttnW& w, const LabeledPair& pair,
                                         const MaskScales& masks, double inv_tokens, AttnG* g) {
  const std::vector<int> ids = model.encode(pair.mr, pair.text);
  const std::size_t sep_index = ids.size() - pair.text.size() - 2;
  const int E = w.E, F = w.F, V = w.V, L = w.L;
  const std::size_t steps = ids.size() - 1;
  if (static_cast<int>(steps) > w.P) throw Error("sequence exceeds max_positions of the attention model");
  const double inv_sqrt = 1.0 / std::sqrt(static_cast<double>(E));

  std::vector<std::vector<double>> kcache(static_cast<std::size_t>(L)), vcache(static_cast<std::size_t>(L));
  std::vector<std::vector<AttnPosCache>> cache(static_cast<std::size_t>(L));
  for (auto& c : cache) c.resize(steps);
  std::vector<AttnTopCache> top(steps);
  std::vector<double> x(static_cast<std::size_t>(E)), h(static_cast<std::size_t>(E)),
      h_next(static_cast<std::size_t>(E)), hf(static_cast<std::size_t>(E)), hd(static_cast<std::size_t>(E)),
      logits(static_cast<std::size_t>(V));
  BlockScratch s;

  double nll = 0.0;
  int scored = 0;
  for (std::size_t t = 0; t < steps; ++t) {
    const int id = ids[t];
    const double* e = w.embed + static_cast<std::size_t>(id) * E;
    const double* p = w.pos + t * static_cast<std::size_t>(E);
    for (int i = 0; i < E; ++i) x[static_cast<std::size_t>(i)] = e[i] + p[i];
    apply_scale(masks.site(kSiteEmbed), x.data(), h.data(), E);
    for (int l = 0; l < L; ++l) {
      AttnPosCache& pc = cache[static_cast<std::size_t>(l)][t];
      pc.h_in.assign(h.begin(), h.end());
      block_forward(w.layer[static_cast<std::size_t>(l)], masks, l, E, F, static_cast<int>(t), h.data(),
                    kcache[static_cast<std::size_t>(l)], vcache[static_cast<std::size_t>(l)], s,
                    h_next.data(), &pc.mu1, &pc.rstd1, &pc.mu2, &pc.rstd2);
      pc.u = s.u;
      pc.a = s.a;
      pc.ctx = s.ctx;
      pc.h1 = s.h1;
      pc.wn = s.wn;
      pc.f1 = s.f1;
      h = h_next;
    }
    AttnTopCache& tc = top[t];
    tc.h_top.assign(h.begin(), h.end());
    if (t >= sep_index) {
      layernorm_fwd(h.data(), w.lnf_g, w.lnf_b, hf.data(), E, tc.muf, tc.rstdf);
      apply_scale(masks.site(kSiteTop), hf.data(), hd.data(), E);
      std::memcpy(logits.data(), w.bo, sizeof(double) * V);
      matvec_add(w.wo, hd.data(), logits.data(), V, E);
      const double lse = log_sum_exp(logits);
      tc.target = ids[t + 1];
      nll += lse - logits[static_cast<std::size_t>(tc.target)];
      ++scored;
      if (g) {
        tc.probs.resize(static_cast<std::size_t>(V));
        softmax(logits, tc.probs);
      }
    }
  }

  if (!g) return {nll, scored};

  // dH[t]: gradient w.r.t. the top-of-stack hidden state at position t.
  std::vector<std::vector<double>> dH(steps, std::vector<double>(static_cast<std::size_t>(E), 0.0));
  {
    std::vector<double> dlogits(static_cast<std::size_t>(V)), dhd(static_cast<std::size_t>(E)),
        dhf(static_cast<std::size_t>(E));
    for (std::size_t t = 0; t < steps; ++t) {
      const AttnTopCache& tc = top[t];
      if (tc.target < 0) continue;
      for (int i = 0; i < V; ++i) dlogits[static_cast<std::size_t>(i)] = tc.probs[static_cast<std::size_t>(i)] * inv_tokens;
      dlogits[static_cast<std::size_t>(tc.target)] -= inv_tokens;
      double mu_unused, rstd_unused;
      layernorm_fwd(tc.h_top.data(), w.lnf_g, w.lnf_b, hf.data(), E, mu_unused, rstd_unused);
      apply_scale(masks.site(kSiteTop), hf.data(), hd.data(), E);
      outer_add(g->wo, dlogits.data(), hd.data(), V, E);
      for (int i = 0; i < V; ++i) g->bo[i] += dlogits[static_cast<std::size_t>(i)];
      std::fill(dhd.begin(), dhd.end(), 0.0);
      matvec_t_add(w.wo, dlogits.data(), dhd.data(), V, E);
      const double* stop = masks.site(kSiteTop);
      for (int i = 0; i < E; ++i) dhf[static_cast<std::size_t>(i)] = dhd[static_cast<std::size_t>(i)] * stop[i];
      layernorm_bwd(dhf.data(), tc.h_top.data(), tc.muf, tc.rstdf, w.lnf_g, g->lnf_g, g->lnf_b,
                    dH[t].data(), E);
    }
  }

  std::vector<double> df2(static_cast<std::size_t>(E)), df1d(static_cast<std::size_t>(F)),
      dfpre(static_cast<std::size_t>(F)), dwn(static_cast<std::size_t>(E)), dctx(static_cast<std::size_t>(E)),
      dq(static_cast<std::size_t>(E)), f1d(static_cast<std::size_t>(F)), do_(static_cast<std::size_t>(E));
  for (int l = L - 1; l >= 0; --l) {
    const AttnLayerW& lw = w.layer[static_cast<std::size_t>(l)];
    AttnLayerG& lg = g->layer[static_cast<std::size_t>(l)];
    const std::vector<double>& kc = kcache[static_cast<std::size_t>(l)];
    const std::vector<double>& vc = vcache[static_cast<std::size_t>(l)];
    std::vector<std::vector<double>> dh1(steps, std::vector<double>(static_cast<std::size_t>(E), 0.0));
    std::vector<std::vector<double>> du(steps, std::vector<double>(static_cast<std::size_t>(E), 0.0));
    std::vector<std::vector<double>> dk(steps, std::vector<double>(static_cast<std::size_t>(E), 0.0));
    std::vector<std::vector<double>> dv(steps, std::vector<double>(static_cast<std::size_t>(E), 0.0));

    // FFN + second layernorm, per position.
    for (std::size_t t = 0; t < steps; ++t) {
      const AttnPosCache& pc = cache[static_cast<std::size_t>(l)][t];
      apply_scale(masks.site(kSiteFfnBase + l), pc.f1.data(), f1d.data(), F);
      df2 = dH[t];
      outer_add(lg.w2, df2.data(), f1d.data(), E, F);
      for (int i = 0; i < E; ++i) lg.b2[i] += df2[static_cast<std::size_t>(i)];
      std::fill(df1d.begin(), df1d.end(), 0.0);
      matvec_t_add(lw.w2, df2.data(), df1d.data(), E, F);
      const double* sf = masks.site(kSiteFfnBase + l);
      for (int i = 0; i < F; ++i) {
        const double f1i = pc.f1[static_cast<std::size_t>(i)];
        dfpre[static_cast<std::size_t>(i)] = df1d[static_cast<std::size_t>(i)] * sf[i] * (1.0 - f1i * f1i);
      }
      outer_add(lg.w1, dfpre.data(), pc.wn.data(), F, E);
      for (int i = 0; i < F; ++i) lg.b1[i] += dfpre[static_cast<std::size_t>(i)];
      std::fill(dwn.begin(), dwn.end(), 0.0);
      matvec_t_add(lw.w1, dfpre.data(), dwn.data(), F, E);
      dh1[t] = dH[t];  // residual
      layernorm_bwd(dwn.data(), pc.h1.data(), pc.mu2, pc.rstd2, lw.ln2_g, lg.ln2_g, lg.ln2_b,
                    dh1[t].data(), E);
    }

    // Attention, first pass: queries propagate into cached keys/values.
    for (std::size_t t = 0; t < steps; ++t) {
      const AttnPosCache& pc = cache[static_cast<std::size_t>(l)][t];
      do_ = dh1[t];
      outer_add(lg.wp, do_.data(), pc.ctx.data(), E, E);
      for (int i = 0; i < E; ++i) lg.bp[i] += do_[static_cast<std::size_t>(i)];
      std::fill(dctx.begin(), dctx.end(), 0.0);
      matvec_t_add(lw.wp, do_.data(), dctx.data(), E, E);

      const int n_keys = static_cast<int>(t) + 1;
      std::vector<double> da(static_cast<std::size_t>(n_keys));
      for (int j = 0; j < n_keys; ++j) {
        const double* vj = vc.data() + static_cast<std::size_t>(j) * E;
        double dad = 0.0;
        for (int i = 0; i < E; ++i) dad += dctx[static_cast<std::size_t>(i)] * vj[i];
        const double scale = masks.attn(l, static_cast<int>(t), j);
        da[static_cast<std::size_t>(j)] = dad * scale;
        const double adw = pc.a[static_cast<std::size_t>(j)] * scale;
        if (adw != 0.0) {
          double* dvj = dv[static_cast<std::size_t>(j)].data();
          for (int i = 0; i < E; ++i) dvj[i] += adw * dctx[static_cast<std::size_t>(i)];
        }
      }
      double dot = 0.0;
      for (int j = 0; j < n_keys; ++j) dot += pc.a[static_cast<std::size_t>(j)] * da[static_cast<std::size_t>(j)];
      std::fill(dq.begin(), dq.end(), 0.0);
      // recover q for dk: q = Wq u + bq
      std::vector<double> q(static_cast<std::size_t>(E));
      std::memcpy(q.data(), lw.bq, sizeof(double) * E);
      matvec_add(lw.wq, pc.u.data(), q.data(), E, E);
      for (int j = 0; j < n_keys; ++j) {
        const double ds = pc.a[static_cast<std::size_t>(j)] * (da[static_cast<std::size_t>(j)] - dot) * inv_sqrt;
        if (ds == 0.0) continue;
        const double* kj = kc.data() + static_cast<std::size_t>(j) * E;
        double* dkj = dk[static_cast<std::size_t>(j)].data();
        for (int i = 0; i < E; ++i) {
          dq[static_cast<std::size_t>(i)] += ds * kj[i];
          dkj[i] += ds * q[static_cast<std::size_t>(i)];
        }
      }
      outer_add(lg.wq, dq.data(), pc.u.data(), E, E);
      for (int i = 0; i < E; ++i) lg.bq[i] += dq[static_cast<std::size_t>(i)];
      matvec_t_add(lw.wq, dq.data(), du[t].data(), E, E);
    }

    // Second pass: k/v projections and the first layernorm.
    for (std::size_t t = 0; t < steps; ++t) {
      const AttnPosCache& pc = cache[static_cast<std::size_t>(l)][t];
      outer_add(lg.wk, dk[t].data(), pc.u.data(), E, E);
      for (int i = 0; i < E; ++i) lg.bk[i] += dk[t][static_cast<std::size_t>(i)];
      matvec_t_add(lw.wk, dk[t].data(), du[t].data(), E, E);
      outer_add(lg.wv, dv[t].data(), pc.u.data(), E, E);
      for (int i = 0; i < E; ++i) lg.bv[i] += dv[t][static_cast<std::size_t>(i)];
      matvec_t_add(lw.wv, dv[t].data(), du[t].data(), E, E);

      std::vector<double>& dh_in = dH[t];
      dh_in = dh1[t];  // residual through h1 = h_in + o
      layernorm_bwd(du[t].data(), pc.h_in.data(), pc.mu1, pc.rstd1, lw.ln1_g, lg.ln1_g, lg.ln1_b,
                    dh_in.data(), E);
    }
  }

  const double* semb = masks.site(kSiteEmbed);
  for (std::size_t t = 0; t < steps; ++t) {
    const int id = ids[t];
    double* emb_row = g->embed + static_cast<std::size_t>(id) * E;
    double* pos_row = g->pos + t * static_cast<std::size_t>(E);
    for (int i = 0; i < E; ++i) {
      const double d = dH[t][static_cast<std::size_t>(i)] * semb[i];
      emb_row[i] += d;
      pos_row[i] += d;
    }
  }
  return {nll, scored};
}

}  // namespace

std::unique_ptr<StepStream> BuiltinModel::make_stream(const DropoutMask& mask) const {
  if (arch_.kind == ArchitectureConfig::Kind::Gru) return std::make_unique<GruStream>(this, mask);
  return std::make_unique<AttnStream>(this, mask);
}

double BuiltinModel::loss_and_gradient(std::span<const LabeledPair> data,
                                       std::span<const std::uint64_t> mask_seeds,
                                       std::span<double> grad_out) const {
  if (data.empty()) throw EmptyCorpusError("loss over empty data");
  if (!mask_seeds.empty() && mask_seeds.size() != data.size())
    throw ConfigError("mask_seeds size must match data size");

  // First sweep to count response tokens so every example sees the final
  // 1/total weight during its single backward pass.
  long total_tokens = 0;
  for (const auto& pair : data) total_tokens += static_cast<long>(pair.text.size()) + 1;
  const double inv_tokens = 1.0 / static_cast<double>(total_tokens);

  const bool with_grad = !grad_out.empty();
  if (with_grad && grad_out.size() != params_.size()) throw ConfigError("grad_out size mismatch");

  double nll = 0.0;
  if (arch_.kind == ArchitectureConfig::Kind::Gru) {
    const GruW w = GruNet::resolve(*this);
    GruG g{};
    if (with_grad) g = GruNet::resolve_grad(*this, grad_out.data());
    for (std::size_t i = 0; i < data.size(); ++i) {
      const DropoutMask mask = mask_seeds.empty() ? DropoutMask::disabled()
                                                  : DropoutMask::stochastic(mask_seeds[i]);
      const MaskScales scales = materialize_masks(mask, arch_);
      nll += gru_example_pass(*this, w, data[i], scales, inv_tokens, with_grad ? &g : nullptr).first;
    }
  } else {
    const AttnW w = resolve_attn(*this, params_);
    AttnG g{};
    if (with_grad) g = resolve_attn_grad(*this, grad_out.data());
    for (std::size_t i = 0; i < data.size(); ++i) {
      const DropoutMask mask = mask_seeds.empty() ? DropoutMask::disabled()
                                                  : DropoutMask::stochastic(mask_seeds[i]);
      const MaskScales scales = materialize_masks(mask, arch_);
      nll += attn_example_pass(*this, w, data[i], scales, inv_tokens, with_grad ? &g : nullptr).first;
    }
  }
  return nll * inv_tokens;
}

double BuiltinModel::loss(std::span<const LabeledPair> data, std::span<const std::uint64_t> mask_seeds) const {
  return loss_and_gradient(data, mask_seeds, {});
}

TrainingReport BuiltinModel::train_epochs(std::span<const LabeledPair> data, const TrainOptions& options) {
  if (data.empty()) throw EmptyCorpusError("train_epochs on empty data");
  if (options.epochs < 0 || options.batch_size < 1) throw ConfigError("invalid training options");
  if (options.lr < 0.0) throw ConfigError("learning rate must be >= 0");

  TrainingReport report;
  const std::size_t n = data.size();
  const long batches_per_epoch = static_cast<long>((n + options.batch_size - 1) / options.batch_size);
  const long total_steps = batches_per_epoch * options.epochs;

  std::vector<double> m(params_.size(), 0.0), v(params_.size(), 0.0), grad(params_.size(), 0.0);
  std::vector<double> snapshot(params_.begin(), params_.end());
  const double beta1 = 0.9, beta2 = 0.999, eps = 1e-8;
  long step = 0;
  double lr_now = options.lr;

  std::vector<std::size_t> order(n);
  for (std::size_t i = 0; i < n; ++i) order[i] = i;

  std::vector<LabeledPair> batch;
  std::vector<std::uint64_t> batch_seeds;
  for (int epoch = 0; epoch < options.epochs; ++epoch) {
    Rng shuffle_rng(derive_seed(options.seed, {0x5A4ull, static_cast<std::uint64_t>(epoch)}));
    shuffle(order, shuffle_rng);
    double epoch_nll = 0.0;
    long epoch_tokens = 0;
    for (std::size_t start = 0; start < n; start += static_cast<std::size_t>(options.batch_size)) {
      const std::size_t end = std::min(n, start + static_cast<std::size_t>(options.batch_size));
      batch.clear();
      batch_seeds.clear();
      long batch_tokens = 0;
      for (std::size_t bi = start; bi < end; ++bi) {
        const std::size_t idx = order[bi];
        batch.push_back(data[idx]);
        batch_seeds.push_back(derive_seed(options.seed, {0xD0ull, static_cast<std::uint64_t>(epoch),
                                                         static_cast<std::uint64_t>(idx)}));
        batch_tokens += static_cast<long>(data[idx].text.size()) + 1;
      }
      std::fill(grad.begin(), grad.end(), 0.0);
      const double batch_loss = loss_and_gradient(batch, batch_seeds, grad);
      if (!std::isfinite(batch_loss)) {
        std::copy(snapshot.begin(), snapshot.end(), params_.begin());
        throw DivergenceError("training loss became non-finite");
      }
      epoch_nll += batch_loss * static_cast<double>(batch_tokens);
      epoch_tokens += batch_tokens;

      lr_now = options.lr * (1.0 - static_cast<double>(step) / static_cast<double>(std::max<long>(1, total_steps)));
      ++step;
      const double bc1 = 1.0 - std::pow(beta1, static_cast<double>(step));
      const double bc2 = 1.0 - std::pow(beta2, static_cast<double>(step));
      for (std::size_t i = 0; i < params_.size(); ++i) {
        m[i] = beta1 * m[i] + (1.0 - beta1) * grad[i];
        v[i] = beta2 * v[i] + (1.0 - beta2) * grad[i] * grad[i];
        const double mhat = m[i] / bc1;
        const double vhat = v[i] / bc2;
        params_[i] -= lr_now * (mhat / (std::sqrt(vhat) + eps) + options.weight_decay * params_[i]);
      }
      if (!all_finite(params_)) {
        std::copy(snapshot.begin(), snapshot.end(), params_.begin());
        throw DivergenceError("model parameters became non-finite");
      }
    }
    report.epoch_loss.push_back(epoch_tokens > 0 ? epoch_nll / static_cast<double>(epoch_tokens) : 0.0);
    snapshot.assign(params_.begin(), params_.end());
  }
  report.steps = step;
  report.final_lr = options.epochs > 0 ? lr_now : options.lr;
  return report;
}

// --- checkpoint -------------------------------------------------------------

namespace {
constexpr char kMagic[4] = {'S', 'T', 'G', 'C'};
constexpr std::uint32_t kVersion = 1;

void write_u64(std::ostream& os, std::uint64_t v) { os.write(reinterpret_cast<const char*>(&v), 8); }
std::uint64_t read_u64(std::istream& is) {
  std::uint64_t v = 0;
  is.read(reinterpret_cast<char*>(&v), 8);
  return v;
}
void write_string(std::ostream& os, const std::string& s) {
  write_u64(os, s.size());
  os.write(s.data(), static_cast<std::streamsize>(s.size()));
}
std::string read_string(std::istream& is) {
  const std::uint64_t len = read_u64(is);
  if (len > (1ull << 30)) throw IoError("corrupt checkpoint: oversized string");
  std::string s(len, '\0');
  is.read(s.data(), static_cast<std::streamsize>(len));
  return s;
}
}  // namespace

void save_checkpoint(const std::string& path, const BuiltinModel& model,
                     std::span<const std::string> lexicon_values) {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw IoError("cannot open checkpoint for writing: " + path);
  os.write(kMagic, 4);
  std::uint32_t version = kVersion;
  os.write(reinterpret_cast<const char*>(&version), 4);
  const ArchitectureConfig& a = model.arch();
  write_string(os, std::string(arch_kind_name(a.kind)));
  write_u64(os, static_cast<std::uint64_t>(a.embed_dim));
  write_u64(os, static_cast<std::uint64_t>(a.hidden_dim));
  write_u64(os, static_cast<std::uint64_t>(a.layers));
  write_u64(os, static_cast<std::uint64_t>(a.max_positions));
  os.write(reinterpret_cast<const char*>(&a.dropout_rate), 8);
  write_u64(os, model.vocab().tokens().size());
  for (const auto& t : model.vocab().tokens()) write_string(os, t);
  write_u64(os, lexicon_values.size());
  for (const auto& v : lexicon_values) write_string(os, v);
  write_u64(os, model.parameters().size());
  os.write(reinterpret_cast<const char*>(model.parameters().data()),
           static_cast<std::streamsize>(model.parameters().size() * sizeof(double)));
  if (!os) throw IoError("failed writing checkpoint: " + path);
}

Checkpoint load_checkpoint(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("cannot open checkpoint: " + path);
  char magic[4];
  is.read(magic, 4);
  if (!is || std::memcmp(magic, kMagic, 4) != 0) throw IoError("not a checkpoint file: " + path);
  std::uint32_t version = 0;
  is.read(reinterpret_cast<char*>(&version), 4);
  if (version != kVersion) throw IoError("unsupported checkpoint version");
  Checkpoint ckpt;
  ckpt.arch.kind = parse_arch_kind(read_string(is));
  ckpt.arch.embed_dim = static_cast<int>(read_u64(is));
  ckpt.arch.hidden_dim = static_cast<int>(read_u64(is));
  ckpt.arch.layers = static_cast<int>(read_u64(is));
  ckpt.arch.max_positions = static_cast<int>(read_u64(is));
  is.read(reinterpret_cast<char*>(&ckpt.arch.dropout_rate), 8);
  const std::uint64_t n_tokens = read_u64(is);
  ckpt.vocab_tokens.reserve(n_tokens);
  for (std::uint64_t i = 0; i < n_tokens; ++i) ckpt.vocab_tokens.push_back(read_string(is));
  const std::uint64_t n_lex = read_u64(is);
  for (std::uint64_t i = 0; i < n_lex; ++i) ckpt.lexicon_values.push_back(read_string(is));
  const std::uint64_t n_params = read_u64(is);
  ckpt.params.resize(n_params);
  is.read(reinterpret_cast<char*>(ckpt.params.data()), static_cast<std::streamsize>(n_params * sizeof(double)));
  if (!is) throw IoError("truncated checkpoint: " + path);
  return ckpt;
}

BuiltinModel Checkpoint::restore() const {
  BuiltinModel model(arch, Vocab(vocab_tokens), /*init_seed=*/0);
  if (model.parameters().size() != params.size())
    throw IoError("checkpoint parameter count does not match architecture");
  std::copy(params.begin(), params.end(), model.parameters().begin());
  return model;
}

}  // namespace stgen
