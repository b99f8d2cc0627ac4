#pragma once

// Central-finite-difference gradient checking (double precision only).
// Compares reverse-mode gradients against (f(p+h) - f(p-h)) / 2h per element;
// relative error uses a max(|analytic|, |numeric|, 1e-8) denominator.

#include <cmath>
#include <functional>
#include <iomanip>
#include <limits>
#include <sstream>
#include <string>
#include <vector>

#include "normkit/autograd.hpp"

namespace normkit {

struct GradCheckEntry {
  std::string name;
  double max_rel_err = 0.0;
  bool pass = true;
  std::string note;  // set on NaN / non-finite failures
};

struct GradCheckReport {
  std::vector<GradCheckEntry> entries;
  double max_rel_err = 0.0;
  bool all_pass = true;

  // One line per parameter: "name max_rel_err pass|fail".
  std::string text() const {
    std::ostringstream os;
    for (const auto& e : entries) {
      os << e.name << " " << std::scientific << std::setprecision(3) << e.max_rel_err << " "
         << (e.pass ? "pass" : "fail");
      if (!e.note.empty()) os << " (" << e.note << ")";
      os << "\n";
    }
    return os.str();
  }
};

// Returns true to exclude an element from checking (kinks and breakpoints).
using GradCheckSkip = std::function<bool(const std::string&, int64_t, double)>;

namespace detail {

inline void set_param_element(const VarPtr<double>& p, int64_t i, double v) {
  std::vector<double> data = p->value.data();
  data[static_cast<size_t>(i)] = v;
  p->value = Tensor<double>(p->value.shape(), std::move(data));
}

}  // namespace detail

// f rebuilds the scalar loss graph from the given parameter nodes on every
// call; parameters are perturbed in place and restored.
inline GradCheckReport grad_check(const std::function<VarPtr<double>()>& f,
                                  const std::vector<VarPtr<double>>& params, double step,
                                  double tolerance, const GradCheckSkip& skip = nullptr) {
  if (step < 1e-7 || step > 1e-3) throw ValueError("grad_check: step must lie in [1e-7, 1e-3]");

  GradMap<double> grads = backward(f(), params);

  GradCheckReport report;
  for (const auto& p : params) {
    const Tensor<double>& analytic = grads.at(p->name);
    GradCheckEntry entry;
    entry.name = p->name;
    for (int64_t i = 0; i < p->value.numel(); ++i) {
      if (skip && skip(p->name, i, p->value.at(i))) continue;
      const double orig = p->value.at(i);
      detail::set_param_element(p, i, orig + step);
      const double fp = f()->value.item();
      detail::set_param_element(p, i, orig - step);
      const double fm = f()->value.item();
      detail::set_param_element(p, i, orig);

      const double numeric = (fp - fm) / (2.0 * step);
      const double an = analytic.at(i);
      if (!std::isfinite(an) || !std::isfinite(numeric)) {
        entry.pass = false;
        std::ostringstream os;
        os << "non-finite gradient at element " << i << ": analytic=" << an
           << " numeric=" << numeric;
        entry.note = os.str();
        entry.max_rel_err = std::numeric_limits<double>::infinity();
        break;
      }
      const double denom = std::max({std::abs(an), std::abs(numeric), 1e-8});
      entry.max_rel_err = std::max(entry.max_rel_err, std::abs(an - numeric) / denom);
    }
    if (entry.max_rel_err > tolerance) entry.pass = false;
    report.max_rel_err = std::max(report.max_rel_err, entry.max_rel_err);
    report.all_pass = report.all_pass && entry.pass;
    report.entries.push_back(std::move(entry));
  }
  return report;
}

}  // namespace normkit
