#pragma once

#include <string>
#include <vector>

#include "otrack/rng.hpp"
#include "otrack/tensor.hpp"

namespace otrack {

struct GradCheckReport {
  double max_rel_err = 0.0;
  bool pass = false;
  int checked = 0;
  int skipped_nonsmooth = 0;
  std::string worst;
};

// Compare tape gradients of a scalar-valued function against central finite
// differences. `f` is re-evaluated with perturbed input data, so it must be a
// pure function of the inputs' current values. Relative error uses a floor so
// near-zero gradient pairs compare absolutely.
//
// Probes whose interval contains a kink (relu, |.|, interpolation cell
// boundaries) are excluded: a central difference does not estimate the
// subgradient there. Detection uses the centered second difference at h and
// h/2, which scales by exactly 1/2 for a C^2 function but is dominated by the
// slope jump near a kink. A wrong backward still fails, since there the
// function is smooth while analytic != fd.
template <typename F>
GradCheckReport grad_check(F f, std::vector<Tensor<double>>& inputs, double h, double tol,
                           int max_elems_per_input = -1, uint64_t sample_seed = 1) {
  for (auto& in : inputs) {
    in.set_requires_grad(true);
    in.drop_grad();
  }
  double f0 = 0.0;
  std::vector<std::vector<double>> analytic;
  {
    Tape<double> tape;
    TapeScope<double> scope(tape);
    Tensor<double> loss = f(inputs);
    if (loss.size() != 1) throw ShapeError("grad_check: function must be scalar-valued");
    f0 = loss.value();
    tape.backward(loss);
  }
  for (auto& in : inputs) {
    auto g = in.grad();
    analytic.emplace_back(g.begin(), g.end());
    if (analytic.back().empty()) analytic.back().assign(static_cast<size_t>(in.size()), 0.0);
  }

  GradCheckReport report;
  Rng rng(sample_seed);
  constexpr double kFloor = 1e-3;
  constexpr double kKinkTol = 1e-3;  // fd(h) vs fd(h/2) disagreement => non-smooth probe
  for (size_t ii = 0; ii < inputs.size(); ++ii) {
    auto& in = inputs[ii];
    const int64_t n = in.size();
    std::vector<int64_t> idx;
    if (max_elems_per_input > 0 && n > max_elems_per_input) {
      for (int k = 0; k < max_elems_per_input; ++k)
        idx.push_back(static_cast<int64_t>(rng.uniform() * static_cast<double>(n)));
    } else {
      idx.resize(static_cast<size_t>(n));
      for (int64_t k = 0; k < n; ++k) idx[static_cast<size_t>(k)] = k;
    }
    for (const int64_t e : idx) {
      auto data = in.raw();
      const double orig = data[static_cast<size_t>(e)];
      auto eval_at = [&](double step) {
        data[static_cast<size_t>(e)] = orig + step;
        const double v = f(inputs).value();
        data[static_cast<size_t>(e)] = orig;
        return v;
      };
      const double fp = eval_at(h), fm = eval_at(-h);
      const double fp2 = eval_at(h / 2), fm2 = eval_at(-h / 2);
      const double fp16 = eval_at(h / 16), fm16 = eval_at(-h / 16);
      const double fd = (fp - fm) / (2.0 * h);
      const double fd_half = (fp2 - fm2) / h;
      const double fd_16 = (fp16 - fm16) / (h / 8.0);
      // centered second differences: d(s) ~ s f'' for smooth f, so
      // d(h) - 2 d(h/2) vanishes; a slope jump inside the interval survives
      const double d1 = (fp + fm - 2.0 * f0) / h;
      const double d2 = (fp2 + fm2 - 2.0 * f0) / (h / 2.0);
      const double fd_scale = std::max({kFloor, std::abs(fd), std::abs(fd_half)});
      if (std::abs(d1 - 2.0 * d2) > kKinkTol * fd_scale ||
          std::abs(fd - fd_half) > kKinkTol * fd_scale ||
          std::abs(fd - fd_16) > kKinkTol * fd_scale) {
        ++report.skipped_nonsmooth;
        continue;
      }
      ++report.checked;
      const double a = analytic[ii][static_cast<size_t>(e)];
      const double rel =
          std::abs(a - fd) / std::max(kFloor, std::max(std::abs(a), std::abs(fd)));
      if (rel > report.max_rel_err) {
        report.max_rel_err = rel;
        report.worst = "input " + std::to_string(ii) + " elem " + std::to_string(e) +
                       ": analytic=" + std::to_string(a) + " fd=" + std::to_string(fd);
      }
    }
  }
  report.pass = report.max_rel_err < tol && report.checked > 0;
  return report;
}

}  // namespace otrack
