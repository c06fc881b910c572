#include "occlunet/stats/pairwise.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>

#include "occlunet/util/errors.hpp"
#include "occlunet/util/svg.hpp"

namespace occlunet::stats {
namespace fs = std::filesystem;

namespace {

std::string num(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.10g", v);
  return buf;
}

double selected_p(const PairCell& c, PValueKind kind) { return kind == PValueKind::chi2 ? c.test.p : c.test.p_exact; }

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write " + path.string());
  out << text;
}

}  // namespace

const PairCell& PairwiseMatrix::cell(int i, int j) const {
  if (i == j) throw ValidationError("pairwise matrix has no diagonal cells");
  const int a = std::min(i, j), b = std::max(i, j);
  for (const auto& c : pairs) {
    if (c.a == a && c.b == b) return c;
  }
  throw ValidationError("no such model pair");
}

PairwiseMatrix pairwise_compare(const std::vector<ModelOutcomes>& models, double q, PValueKind p_kind) {
  PairwiseMatrix m;
  m.q = q;
  m.p_kind = p_kind;
  for (const auto& mo : models) {
    if (mo.labels.size() != mo.correct.size()) throw AlignmentError(mo.name + ": labels and outcomes differ in length");
    m.models.push_back(mo.name);
  }
  for (std::size_t i = 1; i < models.size(); ++i) {
    const auto& ref = models[0];
    const auto& mo = models[i];
    if (mo.correct.size() != ref.correct.size()) {
      throw AlignmentError(mo.name + " was evaluated on " + std::to_string(mo.correct.size()) + " samples, " +
                           ref.name + " on " + std::to_string(ref.correct.size()));
    }
    if (!mo.test_sha256.empty() && !ref.test_sha256.empty() && mo.test_sha256 != ref.test_sha256) {
      throw AlignmentError(mo.name + " and " + ref.name + " were evaluated on different test sets");
    }
    if (mo.labels != ref.labels) throw AlignmentError(mo.name + " and " + ref.name + " disagree on sample labels");
  }

  std::vector<double> p;
  std::vector<std::size_t> testable;
  for (int a = 0; a < static_cast<int>(models.size()); ++a) {
    for (int b = a + 1; b < static_cast<int>(models.size()); ++b) {
      PairCell c;
      c.a = a;
      c.b = b;
      c.counts = contingency(models[a].correct, models[b].correct);
      c.testable = c.counts.b + c.counts.c > 0;
      if (c.testable) {
        c.test = mcnemar(c.counts);
        p.push_back(selected_p(c, p_kind));
        testable.push_back(m.pairs.size());
      } else {
        c.test.chi2 = std::nan("");
        c.test.p = std::nan("");
        c.test.p_exact = std::nan("");
      }
      m.pairs.push_back(c);
    }
  }
  const auto reject = bh_fdr(p, q);
  for (std::size_t i = 0; i < testable.size(); ++i) m.pairs[testable[i]].significant = reject[i];
  return m;
}

std::string matrix_csv(const PairwiseMatrix& m) {
  std::string out = "model";
  for (const auto& name : m.models) out += "," + name;
  out += "\n";
  const int n = static_cast<int>(m.models.size());
  for (int i = 0; i < n; ++i) {
    out += m.models[i];
    for (int j = 0; j < n; ++j) {
      out += ",";
      if (i == j) continue;
      const auto& c = m.cell(i, j);
      out += c.testable ? num(selected_p(c, m.p_kind)) : "NA";
    }
    out += "\n";
  }
  return out;
}

std::string pairs_csv(const PairwiseMatrix& m) {
  std::string out = "model_a,model_b,b,c,both_correct,both_wrong,chi2,p_chi2,p_exact,significant,status\n";
  for (const auto& c : m.pairs) {
    out += m.models[c.a] + "," + m.models[c.b] + "," + std::to_string(c.counts.b) + "," + std::to_string(c.counts.c) +
           "," + std::to_string(c.counts.both_correct) + "," + std::to_string(c.counts.both_wrong) + ",";
    if (c.testable) {
      out += num(c.test.chi2) + "," + num(c.test.p) + "," + num(c.test.p_exact) + "," + (c.significant ? "1" : "0") +
             ",ok\n";
    } else {
      out += ",,,0,untestable\n";
    }
  }
  return out;
}

std::string matrix_svg(const PairwiseMatrix& m) {
  const int n = static_cast<int>(m.models.size());
  const double cell = 28, margin = 60;
  util::Svg svg(margin + n * cell + 10, margin + n * cell + 30);
  for (int i = 0; i < n; ++i) {
    svg.text(margin - 6, margin + (i + 0.65) * cell, m.models[i], 11, "end");
    svg.text(margin + (i + 0.5) * cell, margin - 8, m.models[i], 11, "middle");
    for (int j = 0; j < n; ++j) {
      const double x = margin + j * cell, y = margin + i * cell;
      std::string fill = "#ffffff";
      if (i == j) {
        fill = "#bbbbbb";
      } else {
        const auto& c = m.cell(i, j);
        if (!c.testable) fill = "#e8e8e8";
        else if (c.significant) fill = "#000000";
      }
      svg.rect(x, y, cell, cell, fill, "#666666");
    }
  }
  svg.text(margin, margin + n * cell + 20,
           "black: significant (BH q=" + util::fixed(m.q, 3) + ", " + (m.p_kind == PValueKind::chi2 ? "chi2" : "exact") +
               ")",
           10);
  return svg.str();
}

void write_pairwise(const fs::path& dir, const PairwiseMatrix& m) {
  fs::create_directories(dir);
  write_text(dir / "matrix.csv", matrix_csv(m));
  write_text(dir / "pairs.csv", pairs_csv(m));
  write_text(dir / "matrix.svg", matrix_svg(m));
}

}  // namespace occlunet::stats
