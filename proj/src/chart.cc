#include "gf/chart.h"

#include <algorithm>
#include <cmath>
#include <memory>
#include <tuple>

#include "gf/common.h"

namespace gf {

void GrammarSizes::validate() const {
  check(nonterminals >= 1 && preterminals >= 1 && vocab >= 1,
        "grammar sizes must be positive (N=", nonterminals, " P=", preterminals,
        " V=", vocab, ")");
}

RuleTensors RuleTensors::zeros(GrammarSizes s) {
  s.validate();
  RuleTensors g;
  g.sizes = s;
  g.root.assign(s.nonterminals, kLogZero);
  g.binary.assign(static_cast<size_t>(s.nonterminals) * s.pairs(), kLogZero);
  g.lexical.assign(static_cast<size_t>(s.preterminals) * s.vocab, kLogZero);
  return g;
}

namespace {

double row_mass(const double* row, int n) {
  double acc = 0.0;
  for (int i = 0; i < n; ++i)
    if (!log_is_zero(row[i])) acc += std::exp(row[i]);
  return acc;
}

double logaddexp(double a, double b) {
  if (log_is_zero(a)) return b;
  if (log_is_zero(b)) return a;
  const double m = std::max(a, b);
  return m + std::log1p(std::exp(-std::abs(a - b)));
}

// Finite-symbol range for a cell of the given width: preterminals for single
// tokens, nonterminals otherwise.
void sym_range(const GrammarSizes& s, int width, int* lo, int* hi) {
  if (width == 1) {
    *lo = s.nonterminals;
    *hi = s.symbols();
  } else {
    *lo = 0;
    *hi = s.nonterminals;
  }
}

// Split-aggregated child scores for parent span (i,j):
//   S_out[b*S+c] = lse over splits k of left(i,k)[b] + right(k+1,j)[c]
// When tangent != nullptr additionally computes the matched tangent average
//   tv_out[bc]   = sum_k softmax-weight * (t_left[b] + t_right[c]).
// Buffers are S*S and fully overwritten.
void split_aggregate(const InsideChart& ch, const double* tangent, int i, int j,
                     double* s_out, double* tv_out, std::vector<double>& zbuf,
                     std::vector<double>& wbuf) {
  const GrammarSizes& sz = ch.sizes;
  const int S = sz.symbols();
  const size_t nn = static_cast<size_t>(S) * S;
  std::fill(s_out, s_out + nn, kLogZero);
  for (int k = i; k < j; ++k) {
    const double* L = ch.cell(i, k);
    const double* R = ch.cell(k + 1, j);
    int blo, bhi, clo, chi;
    sym_range(sz, k - i + 1, &blo, &bhi);
    sym_range(sz, j - k, &clo, &chi);
    for (int b = blo; b < bhi; ++b) {
      const double lb = L[b];
      if (log_is_zero(lb)) continue;
      double* row = s_out + static_cast<size_t>(b) * S;
      for (int c = clo; c < chi; ++c) {
        const double rc = R[c];
        if (log_is_zero(rc)) continue;
        const double v = lb + rc;
        if (v > row[c]) row[c] = v;
      }
    }
  }
  zbuf.assign(nn, 0.0);
  if (tv_out) wbuf.assign(nn, 0.0);
  const int St = S;
  for (int k = i; k < j; ++k) {
    const double* L = ch.cell(i, k);
    const double* R = ch.cell(k + 1, j);
    const double* TL = tangent ? tangent + (static_cast<size_t>(i) * ch.n + k) * St : nullptr;
    const double* TR =
        tangent ? tangent + (static_cast<size_t>(k + 1) * ch.n + j) * St : nullptr;
    int blo, bhi, clo, chi;
    sym_range(sz, k - i + 1, &blo, &bhi);
    sym_range(sz, j - k, &clo, &chi);
    for (int b = blo; b < bhi; ++b) {
      const double lb = L[b];
      if (log_is_zero(lb)) continue;
      for (int c = clo; c < chi; ++c) {
        const double rc = R[c];
        if (log_is_zero(rc)) continue;
        const size_t bc = static_cast<size_t>(b) * S + c;
        const double e = std::exp(lb + rc - s_out[bc]);
        zbuf[bc] += e;
        if (tv_out) wbuf[bc] += e * (TL[b] + TR[c]);
      }
    }
  }
  for (size_t bc = 0; bc < nn; ++bc) {
    if (log_is_zero(s_out[bc])) {
      if (tv_out) tv_out[bc] = 0.0;
      continue;
    }
    if (tv_out) tv_out[bc] = wbuf[bc] / zbuf[bc];
    s_out[bc] += std::log(zbuf[bc]);
  }
}

}  // namespace

double RuleTensors::max_normalization_error() const {
  const int S = sizes.symbols();
  double worst = std::abs(row_mass(root.data(), sizes.nonterminals) - 1.0);
  for (int a = 0; a < sizes.nonterminals; ++a)
    worst = std::max(
        worst, std::abs(row_mass(&binary[static_cast<size_t>(a) * S * S], S * S) - 1.0));
  for (int t = 0; t < sizes.preterminals; ++t)
    worst = std::max(worst, std::abs(row_mass(&lexical[static_cast<size_t>(t) * sizes.vocab],
                                              sizes.vocab) -
                                     1.0));
  return worst;
}

int span_cell_count(int n) { return n * (n - 1) / 2; }

int span_cell_index(int n, int i, int j) {
  // Enumeration order: i ascending, then j ascending over j > i.
  return i * (2 * n - i - 1) / 2 + (j - i - 1);
}

std::vector<Span> span_cells(int n) {
  std::vector<Span> out;
  out.reserve(static_cast<size_t>(span_cell_count(n)));
  for (int i = 0; i < n - 1; ++i)
    for (int j = i + 1; j < n; ++j) out.push_back({i, j});
  return out;
}

double inside(const RuleTensors& g, const std::vector<int>& words, InsideChart* chart) {
  g.sizes.validate();
  const int n = static_cast<int>(words.size());
  check(n >= 2, "inside: sentences must have at least 2 tokens, got ", n);
  const int S = g.sizes.symbols();
  const int N = g.sizes.nonterminals;
  const int P = g.sizes.preterminals;
  for (int w : words)
    check(0 <= w && w < g.sizes.vocab, "inside: word id ", w, " outside vocab of ",
          g.sizes.vocab);

  chart->n = n;
  chart->sizes = g.sizes;
  chart->full.assign(static_cast<size_t>(n) * n * S, kLogZero);

  for (int i = 0; i < n; ++i) {
    double* cell = chart->cell_mut(i, i);
    for (int t = 0; t < P; ++t)
      cell[N + t] = g.lexical[static_cast<size_t>(t) * g.sizes.vocab + words[i]];
  }

  std::vector<double> sbuf(static_cast<size_t>(S) * S);
  std::vector<double> zbuf, wbuf;
  for (int w = 2; w <= n; ++w) {
    for (int i = 0; i + w - 1 < n; ++i) {
      const int j = i + w - 1;
      split_aggregate(*chart, nullptr, i, j, sbuf.data(), nullptr, zbuf, wbuf);
      double* cell = chart->cell_mut(i, j);
      for (int a = 0; a < N; ++a) {
        const double* brow = &g.binary[static_cast<size_t>(a) * S * S];
        double mx = kLogZero;
        for (size_t bc = 0; bc < sbuf.size(); ++bc) {
          if (log_is_zero(sbuf[bc])) continue;
          const double v = brow[bc] + sbuf[bc];
          if (v > mx) mx = v;
        }
        if (log_is_zero(mx)) continue;
        double z = 0.0;
        for (size_t bc = 0; bc < sbuf.size(); ++bc) {
          if (log_is_zero(sbuf[bc])) continue;
          z += std::exp(brow[bc] + sbuf[bc] - mx);
        }
        cell[a] = mx + std::log(z);
      }
    }
  }

  double logp = kLogZero;
  const double* top = chart->cell(0, n - 1);
  for (int a = 0; a < N; ++a)
    if (!log_is_zero(top[a]) && !log_is_zero(g.root[a]))
      logp = logaddexp(logp, g.root[a] + top[a]);
  chart->logp = logp;
  return logp;
}

std::vector<double> outside(const RuleTensors& g, const std::vector<int>& words,
                            const InsideChart& chart) {
  const int n = chart.n;
  check(n == static_cast<int>(words.size()), "outside: chart/words length mismatch");
  const int S = g.sizes.symbols();
  const int N = g.sizes.nonterminals;
  std::vector<double> out(chart.full.size(), kLogZero);
  auto out_cell = [&](int i, int j) {
    return &out[(static_cast<size_t>(i) * n + j) * S];
  };
  for (int a = 0; a < N; ++a) out_cell(0, n - 1)[a] = g.root[a];

  std::vector<double> tmax(static_cast<size_t>(S) * S);
  std::vector<double> tsum(static_cast<size_t>(S) * S);
  for (int w = n; w >= 2; --w) {
    for (int i = 0; i + w - 1 < n; ++i) {
      const int j = i + w - 1;
      const double* po = out_cell(i, j);
      // T[bc] = lse over parent labels a of out(i,j)[a] + binary[a][bc]
      std::fill(tmax.begin(), tmax.end(), kLogZero);
      for (int a = 0; a < N; ++a) {
        if (log_is_zero(po[a])) continue;
        const double* brow = &g.binary[static_cast<size_t>(a) * S * S];
        for (size_t bc = 0; bc < tmax.size(); ++bc) {
          const double v = po[a] + brow[bc];
          if (v > tmax[bc]) tmax[bc] = v;
        }
      }
      std::fill(tsum.begin(), tsum.end(), 0.0);
      for (int a = 0; a < N; ++a) {
        if (log_is_zero(po[a])) continue;
        const double* brow = &g.binary[static_cast<size_t>(a) * S * S];
        for (size_t bc = 0; bc < tsum.size(); ++bc) {
          if (log_is_zero(tmax[bc])) continue;
          tsum[bc] += std::exp(po[a] + brow[bc] - tmax[bc]);
        }
      }
      // tmax now holds T after folding in the log of the sums.
      for (size_t bc = 0; bc < tmax.size(); ++bc)
        if (!log_is_zero(tmax[bc])) tmax[bc] += std::log(tsum[bc]);

      for (int k = i; k < j; ++k) {
        const double* fl = chart.cell(i, k);
        const double* fr = chart.cell(k + 1, j);
        int blo, bhi, clo, chi;
        sym_range(g.sizes, k - i + 1, &blo, &bhi);
        sym_range(g.sizes, j - k, &clo, &chi);
        double* ol = out_cell(i, k);
        double* orr = out_cell(k + 1, j);
        for (int b = blo; b < bhi; ++b) {
          // contribution to the left child: lse over c of T[bc] + inside_right[c]
          double mx = kLogZero;
          for (int c = clo; c < chi; ++c) {
            const size_t bc = static_cast<size_t>(b) * S + c;
            if (log_is_zero(tmax[bc]) || log_is_zero(fr[c])) continue;
            mx = std::max(mx, tmax[bc] + fr[c]);
          }
          if (log_is_zero(mx)) continue;
          double z = 0.0;
          for (int c = clo; c < chi; ++c) {
            const size_t bc = static_cast<size_t>(b) * S + c;
            if (log_is_zero(tmax[bc]) || log_is_zero(fr[c])) continue;
            z += std::exp(tmax[bc] + fr[c] - mx);
          }
          ol[b] = logaddexp(ol[b], mx + std::log(z));
        }
        for (int c = clo; c < chi; ++c) {
          double mx = kLogZero;
          for (int b = blo; b < bhi; ++b) {
            const size_t bc = static_cast<size_t>(b) * S + c;
            if (log_is_zero(tmax[bc]) || log_is_zero(fl[b])) continue;
            mx = std::max(mx, tmax[bc] + fl[b]);
          }
          if (log_is_zero(mx)) continue;
          double z = 0.0;
          for (int b = blo; b < bhi; ++b) {
            const size_t bc = static_cast<size_t>(b) * S + c;
            if (log_is_zero(tmax[bc]) || log_is_zero(fl[b])) continue;
            z += std::exp(tmax[bc] + fl[b] - mx);
          }
          orr[c] = logaddexp(orr[c], mx + std::log(z));
        }
      }
    }
  }
  return out;
}

namespace {

std::vector<double> marginals_from(const RuleTensors& g, const InsideChart& chart,
                                   const std::vector<double>& out) {
  const int n = chart.n;
  const int S = g.sizes.symbols();
  const int N = g.sizes.nonterminals;
  check(!log_is_zero(chart.logp), "span marginals: sentence is unparseable");
  std::vector<double> m(static_cast<size_t>(span_cell_count(n)) * N, 0.0);
  for (int i = 0; i < n - 1; ++i)
    for (int j = i + 1; j < n; ++j) {
      const double* ins = chart.cell(i, j);
      const double* o = &out[(static_cast<size_t>(i) * n + j) * S];
      double* row = &m[static_cast<size_t>(span_cell_index(n, i, j)) * N];
      for (int a = 0; a < N; ++a) {
        if (log_is_zero(ins[a]) || log_is_zero(o[a])) continue;
        row[a] = std::exp(ins[a] + o[a] - chart.logp);
      }
    }
  return m;
}

}  // namespace

std::vector<double> span_label_marginals(const RuleTensors& g,
                                         const std::vector<int>& words) {
  InsideChart chart;
  inside(g, words, &chart);
  return marginals_from(g, chart, outside(g, words, chart));
}

std::vector<double> span_label_marginals_backprop(const RuleTensors& g,
                                                  const std::vector<int>& words) {
  InsideChart chart;
  inside(g, words, &chart);
  std::vector<double> adj;
  chart_backward(g, words, chart, 1.0, nullptr, &adj);
  return adj;
}

std::vector<double> span_marginals(const RuleTensors& g, const std::vector<int>& words) {
  const std::vector<double> lm = span_label_marginals(g, words);
  const int n = static_cast<int>(words.size());
  const int N = g.sizes.nonterminals;
  std::vector<double> m(static_cast<size_t>(span_cell_count(n)), 0.0);
  for (size_t cell = 0; cell < m.size(); ++cell)
    for (int a = 0; a < N; ++a) m[cell] += lm[cell * N + a];
  return m;
}

RuleGrads expected_counts(const RuleTensors& g, const std::vector<int>& words) {
  InsideChart chart;
  inside(g, words, &chart);
  check(!log_is_zero(chart.logp), "expected counts: sentence is unparseable");
  const std::vector<double> out = outside(g, words, chart);
  const int n = chart.n;
  const int S = g.sizes.symbols();
  const int N = g.sizes.nonterminals;
  const int P = g.sizes.preterminals;

  RuleGrads counts;
  counts.root.assign(g.root.size(), 0.0);
  counts.binary.assign(g.binary.size(), 0.0);
  counts.lexical.assign(g.lexical.size(), 0.0);

  const double* top = chart.cell(0, n - 1);
  for (int a = 0; a < N; ++a)
    if (!log_is_zero(top[a]) && !log_is_zero(g.root[a]))
      counts.root[a] = std::exp(g.root[a] + top[a] - chart.logp);

  for (int i = 0; i < n; ++i) {
    const double* o = &out[(static_cast<size_t>(i) * n + i) * S];
    for (int t = 0; t < P; ++t) {
      const double lex = g.lexical[static_cast<size_t>(t) * g.sizes.vocab + words[i]];
      if (log_is_zero(o[N + t]) || log_is_zero(lex)) continue;
      counts.lexical[static_cast<size_t>(t) * g.sizes.vocab + words[i]] +=
          std::exp(o[N + t] + lex - chart.logp);
    }
  }

  std::vector<double> sbuf(static_cast<size_t>(S) * S);
  std::vector<double> zbuf, wbuf;
  for (int w = 2; w <= n; ++w) {
    for (int i = 0; i + w - 1 < n; ++i) {
      const int j = i + w - 1;
      const double* o = &out[(static_cast<size_t>(i) * n + j) * S];
      split_aggregate(chart, nullptr, i, j, sbuf.data(), nullptr, zbuf, wbuf);
      for (int a = 0; a < N; ++a) {
        if (log_is_zero(o[a])) continue;
        const double* brow = &g.binary[static_cast<size_t>(a) * S * S];
        double* crow = &counts.binary[static_cast<size_t>(a) * S * S];
        for (size_t bc = 0; bc < sbuf.size(); ++bc) {
          if (log_is_zero(sbuf[bc])) continue;
          crow[bc] += std::exp(o[a] + brow[bc] + sbuf[bc] - chart.logp);
        }
      }
    }
  }
  return counts;
}

RuleGrads chart_backward(const RuleTensors& g, const std::vector<int>& words,
                         const InsideChart& chart, double glogp, const double* gmarg,
                         std::vector<double>* cell_adjoints) {
  const int n = chart.n;
  check(n == static_cast<int>(words.size()), "chart_backward: length mismatch");
  check(!log_is_zero(chart.logp), "chart_backward: sentence is unparseable");
  const int S = g.sizes.symbols();
  const int N = g.sizes.nonterminals;
  const int P = g.sizes.preterminals;
  const bool tangent = gmarg != nullptr;

  RuleGrads grads;
  grads.root.assign(g.root.size(), 0.0);
  grads.binary.assign(g.binary.size(), 0.0);
  grads.lexical.assign(g.lexical.size(), 0.0);

  // Tangent-carrying forward pass: t(cell)[a] is the posterior expectation,
  // over derivations of that item, of the accumulated gmarg bonuses below it.
  std::vector<double> tan;
  std::vector<double> sbuf(static_cast<size_t>(S) * S);
  std::vector<double> tvbuf(static_cast<size_t>(S) * S);
  std::vector<double> zbuf, wbuf;
  if (tangent) {
    tan.assign(chart.full.size(), 0.0);
    for (int w = 2; w <= n; ++w) {
      for (int i = 0; i + w - 1 < n; ++i) {
        const int j = i + w - 1;
        split_aggregate(chart, tan.data(), i, j, sbuf.data(), tvbuf.data(), zbuf, wbuf);
        const double* cell = chart.cell(i, j);
        double* tcell = &tan[(static_cast<size_t>(i) * n + j) * S];
        const double* bonus = gmarg + static_cast<size_t>(span_cell_index(n, i, j)) * N;
        for (int a = 0; a < N; ++a) {
          if (log_is_zero(cell[a])) continue;
          const double* brow = &g.binary[static_cast<size_t>(a) * S * S];
          double acc = 0.0;
          for (size_t bc = 0; bc < sbuf.size(); ++bc) {
            if (log_is_zero(sbuf[bc])) continue;
            acc += std::exp(brow[bc] + sbuf[bc] - cell[a]) * tvbuf[bc];
          }
          tcell[a] = acc + bonus[a];
        }
      }
    }
  }

  // Adjoint arrays over inside values (glp) and tangents (gt).
  std::vector<double> glp(chart.full.size(), 0.0);
  std::vector<double> gt;
  if (tangent) gt.assign(chart.full.size(), 0.0);
  auto idx = [&](int i, int j) { return (static_cast<size_t>(i) * n + j) * S; };

  // Seed from the root reduction: output = glogp * logZ + tangent total.
  {
    const double* top = chart.cell(0, n - 1);
    const double* ttop = tangent ? &tan[idx(0, n - 1)] : nullptr;
    double f = 0.0;
    if (tangent) {
      for (int a = 0; a < N; ++a) {
        if (log_is_zero(top[a]) || log_is_zero(g.root[a])) continue;
        f += std::exp(g.root[a] + top[a] - chart.logp) * ttop[a];
      }
    }
    for (int a = 0; a < N; ++a) {
      if (log_is_zero(top[a]) || log_is_zero(g.root[a])) continue;
      const double wa = std::exp(g.root[a] + top[a] - chart.logp);
      const double seed = wa * (glogp + (tangent ? ttop[a] - f : 0.0));
      grads.root[a] += seed;
      glp[idx(0, n - 1) + a] += seed;
      if (tangent) gt[idx(0, n - 1) + a] += wa;
    }
  }

  // Reverse sweep, widest spans first.
  for (int w = n; w >= 2; --w) {
    for (int i = 0; i + w - 1 < n; ++i) {
      const int j = i + w - 1;
      const double* cell = chart.cell(i, j);
      double* gl = &glp[idx(i, j)];
      double* gtc = tangent ? &gt[idx(i, j)] : nullptr;
      bool active = false;
      for (int a = 0; a < N && !active; ++a)
        active = gl[a] != 0.0 || (tangent && gtc[a] != 0.0);
      if (!active) continue;

      split_aggregate(chart, tangent ? tan.data() : nullptr, i, j, sbuf.data(),
                      tangent ? tvbuf.data() : nullptr, zbuf, wbuf);
      // Adjoints of the split aggregates.
      std::vector<double> gs(static_cast<size_t>(S) * S, 0.0);
      std::vector<double> gtv;
      if (tangent) gtv.assign(static_cast<size_t>(S) * S, 0.0);

      const double* bonus =
          tangent ? gmarg + static_cast<size_t>(span_cell_index(n, i, j)) * N : nullptr;
      for (int a = 0; a < N; ++a) {
        const double glpa = gl[a];
        const double gta = tangent ? gtc[a] : 0.0;
        if (glpa == 0.0 && gta == 0.0) continue;
        if (log_is_zero(cell[a])) continue;
        const double tpre =
            tangent ? tan[idx(i, j) + a] - bonus[a] : 0.0;
        const double* brow = &g.binary[static_cast<size_t>(a) * S * S];
        double* gbrow = &grads.binary[static_cast<size_t>(a) * S * S];
        for (size_t bc = 0; bc < gs.size(); ++bc) {
          if (log_is_zero(sbuf[bc])) continue;
          const double q = std::exp(brow[bc] + sbuf[bc] - cell[a]);
          const double common =
              q * (glpa + (tangent ? gta * (tvbuf[bc] - tpre) : 0.0));
          gbrow[bc] += common;
          gs[bc] += common;
          if (tangent) gtv[bc] += q * gta;
        }
      }

      for (int k = i; k < j; ++k) {
        const double* fl = chart.cell(i, k);
        const double* fr = chart.cell(k + 1, j);
        const double* tl = tangent ? &tan[idx(i, k)] : nullptr;
        const double* tr = tangent ? &tan[idx(k + 1, j)] : nullptr;
        double* gll = &glp[idx(i, k)];
        double* glr = &glp[idx(k + 1, j)];
        double* gtl = tangent ? &gt[idx(i, k)] : nullptr;
        double* gtr = tangent ? &gt[idx(k + 1, j)] : nullptr;
        int blo, bhi, clo, chi;
        sym_range(g.sizes, k - i + 1, &blo, &bhi);
        sym_range(g.sizes, j - k, &clo, &chi);
        for (int b = blo; b < bhi; ++b) {
          const double lb = fl[b];
          if (log_is_zero(lb)) continue;
          for (int c = clo; c < chi; ++c) {
            const double rc = fr[c];
            if (log_is_zero(rc)) continue;
            const size_t bc = static_cast<size_t>(b) * S + c;
            const double e = std::exp(lb + rc - sbuf[bc]);
            double gmix = gs[bc];
            if (tangent) gmix += gtv[bc] * ((tl[b] + tr[c]) - tvbuf[bc]);
            if (gmix != 0.0) {
              gll[b] += e * gmix;
              glr[c] += e * gmix;
            }
            if (tangent && gtv[bc] != 0.0) {
              gtl[b] += e * gtv[bc];
              gtr[c] += e * gtv[bc];
            }
          }
        }
      }
    }
  }

  for (int i = 0; i < n; ++i) {
    const double* gl = &glp[idx(i, i)];
    for (int t = 0; t < P; ++t)
      grads.lexical[static_cast<size_t>(t) * g.sizes.vocab + words[i]] += gl[N + t];
  }

  if (cell_adjoints) {
    cell_adjoints->assign(static_cast<size_t>(span_cell_count(n)) * N, 0.0);
    for (int i = 0; i < n - 1; ++i)
      for (int j = i + 1; j < n; ++j) {
        const double* gl = &glp[idx(i, j)];
        double* row = &(*cell_adjoints)[static_cast<size_t>(span_cell_index(n, i, j)) * N];
        for (int a = 0; a < N; ++a) row[a] = gl[a];
      }
  }
  return grads;
}

ParseTree viterbi_parse(const RuleTensors& g, const std::vector<int>& words) {
  g.sizes.validate();
  const int n = static_cast<int>(words.size());
  check(n >= 2, "viterbi: sentences must have at least 2 tokens, got ", n);
  const int S = g.sizes.symbols();
  const int N = g.sizes.nonterminals;
  const int P = g.sizes.preterminals;
  for (int w : words)
    check(0 <= w && w < g.sizes.vocab, "viterbi: word id ", w, " outside vocab");

  std::vector<double> best(static_cast<size_t>(n) * n * S, kLogZero);
  struct Back {
    int k = -1, b = -1, c = -1;
  };
  std::vector<Back> bp(static_cast<size_t>(n) * n * N);
  auto bidx = [&](int i, int j) { return (static_cast<size_t>(i) * n + j); };

  for (int i = 0; i < n; ++i)
    for (int t = 0; t < P; ++t)
      best[bidx(i, i) * S + N + t] =
          g.lexical[static_cast<size_t>(t) * g.sizes.vocab + words[i]];

  std::vector<double> vbuf(static_cast<size_t>(S) * S);
  std::vector<int> kbuf(static_cast<size_t>(S) * S);
  for (int w = 2; w <= n; ++w) {
    for (int i = 0; i + w - 1 < n; ++i) {
      const int j = i + w - 1;
      std::fill(vbuf.begin(), vbuf.end(), kLogZero);
      std::fill(kbuf.begin(), kbuf.end(), -1);
      for (int k = i; k < j; ++k) {
        const double* L = &best[bidx(i, k) * S];
        const double* R = &best[bidx(k + 1, j) * S];
        int blo, bhi, clo, chi;
        sym_range(g.sizes, k - i + 1, &blo, &bhi);
        sym_range(g.sizes, j - k, &clo, &chi);
        for (int b = blo; b < bhi; ++b) {
          if (log_is_zero(L[b])) continue;
          for (int c = clo; c < chi; ++c) {
            if (log_is_zero(R[c])) continue;
            const double v = L[b] + R[c];
            const size_t bc = static_cast<size_t>(b) * S + c;
            // Strict improvement keeps the smallest split on exact ties.
            if (v > vbuf[bc]) {
              vbuf[bc] = v;
              kbuf[bc] = k;
            }
          }
        }
      }
      for (int a = 0; a < N; ++a) {
        const double* brow = &g.binary[static_cast<size_t>(a) * S * S];
        double sc_best = kLogZero;
        Back sel;
        for (int b = 0; b < S; ++b)
          for (int c = 0; c < S; ++c) {
            const size_t bc = static_cast<size_t>(b) * S + c;
            if (log_is_zero(vbuf[bc])) continue;
            const double sc = brow[bc] + vbuf[bc];
            if (log_is_zero(sc)) continue;
            const bool better =
                sc > sc_best ||
                (sc == sc_best &&
                 std::tuple(kbuf[bc], b, c) < std::tuple(sel.k, sel.b, sel.c));
            if (better) {
              sc_best = sc;
              sel = {kbuf[bc], b, c};
            }
          }
        if (!log_is_zero(sc_best)) {
          best[bidx(i, j) * S + a] = sc_best;
          bp[bidx(i, j) * N + a] = sel;
        }
      }
    }
  }

  int root_a = -1;
  double root_best = kLogZero;
  const double* top = &best[bidx(0, n - 1) * S];
  for (int a = 0; a < N; ++a) {
    if (log_is_zero(top[a]) || log_is_zero(g.root[a])) continue;
    const double sc = g.root[a] + top[a];
    if (sc > root_best) {  // ascending scan keeps the lowest label on ties
      root_best = sc;
      root_a = a;
    }
  }
  check(root_a >= 0, "viterbi: sentence has no parse under this grammar");

  ParseTree tree;
  tree.n = n;
  std::vector<std::tuple<int, int, int>> stack{{0, n - 1, root_a}};
  while (!stack.empty()) {
    auto [i, j, a] = stack.back();
    stack.pop_back();
    if (i == j) continue;
    tree.spans.push_back({i, j});
    const Back& sel = bp[bidx(i, j) * N + a];
    check(sel.k >= 0, "viterbi: missing backpointer");
    stack.push_back({i, sel.k, sel.b});
    stack.push_back({sel.k + 1, j, sel.c});
  }
  tree.sort_spans();
  return tree;
}

std::vector<std::vector<Span>> enumerate_trees(int n) {
  check(2 <= n && n <= 12, "enumerate_trees: n must be in [2,12], got ", n);
  // by_width[w] holds every bracketing of w tokens with spans relative to 0.
  std::vector<std::vector<std::vector<Span>>> by_width(static_cast<size_t>(n) + 1);
  by_width[1] = {{}};
  for (int w = 2; w <= n; ++w) {
    for (int lw = 1; lw < w; ++lw) {
      for (const auto& left : by_width[lw]) {
        for (const auto& right : by_width[w - lw]) {
          std::vector<Span> spans = left;
          for (const Span& s : right) spans.push_back({s.i + lw, s.j + lw});
          spans.push_back({0, w - 1});
          std::sort(spans.begin(), spans.end());
          by_width[w].push_back(std::move(spans));
        }
      }
    }
  }
  return by_width[static_cast<size_t>(n)];
}

namespace {

struct ChartOpState {
  RuleTensors rules;
  InsideChart chart;
  std::vector<int> words;
  bool want_marginals = false;
};

}  // namespace

ChartOutputs chart_op(Graph& gr, Var root, Var binary, Var lexical, GrammarSizes sizes,
                      const std::vector<int>& words, bool want_marginals) {
  sizes.validate();
  const int S = sizes.symbols();
  const int N = sizes.nonterminals;
  check(gr.rows(root) == 1 && gr.cols(root) == N, "chart_op: root must be [1,N]");
  check(gr.rows(binary) == N && gr.cols(binary) == S * S,
        "chart_op: binary must be [N,S*S]");
  check(gr.rows(lexical) == sizes.preterminals && gr.cols(lexical) == sizes.vocab,
        "chart_op: lexical must be [P,V]");

  auto state = std::make_shared<ChartOpState>();
  state->rules.sizes = sizes;
  state->rules.root = gr.value(root);
  state->rules.binary = gr.value(binary);
  state->rules.lexical = gr.value(lexical);
  state->words = words;
  state->want_marginals = want_marginals;

  const double logp = inside(state->rules, words, &state->chart);
  check(!log_is_zero(logp), "chart_op: sentence is unparseable");

  const int n = static_cast<int>(words.size());
  const int cells = span_cell_count(n);
  std::vector<double> value;
  if (want_marginals) {
    value.reserve(1 + static_cast<size_t>(cells) * N);
    value.push_back(logp);
    const std::vector<double> m =
        marginals_from(state->rules, state->chart, outside(state->rules, words, state->chart));
    value.insert(value.end(), m.begin(), m.end());
  } else {
    value.push_back(logp);
  }

  const int rid = root.id, bid = binary.id, lid = lexical.id;
  const int width = static_cast<int>(value.size());
  Var node = gr.custom(
      1, width, std::move(value), {root, binary, lexical},
      [state, rid, bid, lid](Graph& g, int self) {
        const std::vector<double>& gout = g.grad(Var{self});
        const double glogp = gout[0];
        const double* gmarg = nullptr;
        if (state->want_marginals) {
          bool any = false;
          for (size_t i = 1; i < gout.size() && !any; ++i) any = gout[i] != 0.0;
          if (any) gmarg = gout.data() + 1;
        }
        if (glogp == 0.0 && gmarg == nullptr) return;
        const RuleGrads rg =
            chart_backward(state->rules, state->words, state->chart, glogp, gmarg);
        auto add_into = [&g](int parent, const std::vector<double>& src) {
          if (!g.needs_grad(Var{parent})) return;
          auto& dst = g.grad_mut(Var{parent});
          if (dst.empty()) dst.assign(src.size(), 0.0);
          for (size_t i = 0; i < src.size(); ++i) dst[i] += src[i];
        };
        add_into(rid, rg.root);
        add_into(bid, rg.binary);
        add_into(lid, rg.lexical);
      });

  ChartOutputs outs;
  outs.logp = gr.slice(node, 0, 1, 0, 1);
  if (want_marginals)
    outs.label_marginals =
        gr.reshape(gr.slice(node, 0, 1, 1, 1 + cells * N), cells, N);
  return outs;
}

}  // namespace gf
