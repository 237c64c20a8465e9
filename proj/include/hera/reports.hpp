#pragma once

// CSV tables and a minimal SVG frontier plot.

#include "hera/store.hpp"

namespace hera {

class CsvWriter {
 public:
  explicit CsvWriter(std::vector<std::string> header) : width_(header.size()) { row(header); }

  template <typename... Ts>
  CsvWriter& add(const Ts&... cells) {
    static_assert(sizeof...(Ts) > 0);
    std::vector<std::string> r{cell(cells)...};
    if (r.size() != width_) throw UsageError("csv: row width does not match header");
    row(r);
    return *this;
  }

  // Comment lines go before the header; readers skip lines starting with '#'.
  void comment(const std::string& text) { preamble_ += "# " + text + "\n"; }

  std::string str() const { return preamble_ + body_; }

 private:
  static std::string cell(const std::string& s) {
    if (s.find_first_of(",\"\n") == std::string::npos) return s;
    std::string q = "\"";
    for (char c : s) {
      if (c == '"') q += '"';
      q += c;
    }
    return q + "\"";
  }
  static std::string cell(const char* s) { return cell(std::string(s)); }
  static std::string cell(double v) { return format_double(v); }
  template <typename T>
    requires std::is_integral_v<T>
  static std::string cell(T v) {
    return std::to_string(v);
  }

  void row(const std::vector<std::string>& r) {
    for (std::size_t i = 0; i < r.size(); ++i) {
      if (i) body_ += ',';
      body_ += r[i];
    }
    body_ += '\n';
  }

  std::size_t width_;
  std::string preamble_;
  std::string body_;
};

inline std::string join_seeds(const std::vector<std::uint64_t>& seeds) {
  std::string s;
  for (std::size_t i = 0; i < seeds.size(); ++i) s += (i ? " " : "") + std::to_string(seeds[i]);
  return s;
}

// `cloud_only_steps` is the mean trajectory length of the cloud-only run;
// cloud usage is published against both it and the method's own steps.
inline std::string eval_report_csv(const std::vector<EvalReport>& reports, double cloud_only_steps) {
  CsvWriter w({"method", "n_tasks", "seeds", "success_threshold", "success_rate", "success_std", "mean_return",
               "mean_cloud_calls", "mean_steps", "cloud_fraction_of_steps", "cloud_fraction_of_cloud_only_steps",
               "mean_api_cost", "mean_latency"});
  for (const auto& r : reports)
    w.add(r.method, r.n_tasks, join_seeds(r.seeds), r.success_threshold, r.success_rate, r.success_std,
          r.mean_return, r.mean_cloud_calls, r.mean_steps, r.cloud_step_fraction,
          cloud_only_steps > 0 ? r.mean_cloud_calls / cloud_only_steps : 0.0, r.mean_api_cost, r.mean_latency);
  return w.str();
}

inline std::string pareto_csv(const std::vector<ParetoPoint>& points) {
  CsvWriter w({"method", "knob", "mean_cloud_calls", "success_rate", "success_std"});
  for (const auto& p : points) w.add(p.method, p.knob, p.mean_cloud_calls, p.success_rate, p.success_std);
  return w.str();
}

inline std::string diff_tasks_csv(const std::vector<DiffTaskReport>& reports) {
  CsvWriter w({"task_id", "r_device", "r_cloud", "selected"});
  for (const auto& r : reports) w.add(r.task_id, r.r_device, r.r_cloud, r.selected ? 1 : 0);
  return w.str();
}

inline std::string il_metrics_csv(const std::vector<ILMetric>& history) {
  CsvWriter w({"iteration", "train_loss", "holdout_accuracy"});
  for (const auto& m : history) w.add(m.iteration, m.train_loss, m.holdout_accuracy);
  return w.str();
}

inline std::string rl_iterations_csv(const std::vector<IterationReport>& reports) {
  CsvWriter w({"iteration", "mean_success", "mean_return", "mean_cloud_calls", "mean_steps", "cloud_step_fraction", "trajectories", "labeled_groups",
               "skipped_groups", "skipped_arm0", "skipped_arm1", "train_loss", "label_agreement",
               "param_distance_to_anchor"});
  for (const auto& r : reports)
    w.add(r.iteration, r.mean_success, r.mean_return, r.mean_cloud_calls, r.mean_steps, r.cloud_step_fraction, r.trajectories, r.labeled_groups,
          r.skipped_groups, r.skipped_arm0, r.skipped_arm1, r.train_loss, r.label_agreement,
          r.param_distance_to_anchor);
  return w.str();
}

// Long format: (section, key, value). Sections: overall, position, entropy,
// length, cdf.
inline std::string step_analysis_csv(const StepAnalysis& a) {
  CsvWriter w({"section", "key", "value"});
  w.add("overall", "steps", a.steps);
  w.add("overall", "matched", a.matched);
  w.add("overall", "match_rate", a.match_rate_overall);
  for (const auto& p : a.match_rate_by_position) {
    const std::string t = std::to_string(p.t);
    w.add("position", t + ":total", p.total);
    w.add("position", t + ":match_rate", p.rate());
  }
  auto summary = [&](const char* section, const char* which, const Summary& s) {
    const std::string k(which);
    w.add(section, k + ":count", s.count);
    w.add(section, k + ":mean", s.mean);
    w.add(section, k + ":median", s.median);
    w.add(section, k + ":min", s.min);
    w.add(section, k + ":max", s.max);
  };
  summary("entropy", "matched", a.entropy_matched);
  summary("entropy", "mismatched", a.entropy_mismatched);
  summary("length", "matched", a.length_matched);
  summary("length", "mismatched", a.length_mismatched);
  for (const auto& [rate, frac] : a.cdf) w.add("cdf", format_double(rate), frac);
  return w.str();
}

inline std::string pareto_svg(const std::vector<ParetoPoint>& points) {
  constexpr double W = 640, H = 420, L = 60, R = 160, T = 20, B = 50;
  double xmax = 1e-9;
  for (const auto& p : points) xmax = std::max(xmax, p.mean_cloud_calls);
  auto sx = [&](double x) { return L + (W - L - R) * x / xmax; };
  auto sy = [&](double y) { return H - B - (H - T - B) * y; };
  static const char* colors[] = {"#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b"};
  std::ostringstream os;
  os << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << W << "\" height=\"" << H << "\">\n";
  os << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  os << "<line x1=\"" << L << "\" y1=\"" << H - B << "\" x2=\"" << W - R << "\" y2=\"" << H - B
     << "\" stroke=\"black\"/>\n";
  os << "<line x1=\"" << L << "\" y1=\"" << T << "\" x2=\"" << L << "\" y2=\"" << H - B << "\" stroke=\"black\"/>\n";
  os << "<text x=\"" << (L + W - R) / 2 << "\" y=\"" << H - 12
     << "\" text-anchor=\"middle\" font-size=\"12\">mean cloud calls per trajectory</text>\n";
  os << "<text x=\"14\" y=\"" << (T + H - B) / 2 << "\" transform=\"rotate(-90 14 " << (T + H - B) / 2
     << ")\" text-anchor=\"middle\" font-size=\"12\">success rate</text>\n";
  for (int i = 0; i <= 4; ++i) {
    const double y = i / 4.0;
    os << "<text x=\"" << L - 6 << "\" y=\"" << sy(y) + 4 << "\" text-anchor=\"end\" font-size=\"10\">"
       << format_double(y) << "</text>\n";
    const double x = xmax * i / 4.0;
    os << "<text x=\"" << sx(x) << "\" y=\"" << H - B + 14 << "\" text-anchor=\"middle\" font-size=\"10\">"
       << format_double(std::round(x * 100) / 100) << "</text>\n";
  }
  std::vector<std::string> methods;
  for (const auto& p : points)
    if (std::find(methods.begin(), methods.end(), p.method) == methods.end()) methods.push_back(p.method);
  for (std::size_t m = 0; m < methods.size(); ++m) {
    std::vector<ParetoPoint> curve;
    for (const auto& p : points)
      if (p.method == methods[m]) curve.push_back(p);
    std::sort(curve.begin(), curve.end(),
              [](const ParetoPoint& a, const ParetoPoint& b) { return a.mean_cloud_calls < b.mean_cloud_calls; });
    const char* c = colors[m % 6];
    os << "<polyline fill=\"none\" stroke=\"" << c << "\" points=\"";
    for (const auto& p : curve) os << sx(p.mean_cloud_calls) << "," << sy(p.success_rate) << " ";
    os << "\"/>\n";
    for (const auto& p : curve)
      os << "<circle cx=\"" << sx(p.mean_cloud_calls) << "\" cy=\"" << sy(p.success_rate) << "\" r=\"3\" fill=\"" << c
         << "\"/>\n";
    os << "<text x=\"" << W - R + 10 << "\" y=\"" << T + 16 * (m + 1) << "\" font-size=\"11\" fill=\"" << c << "\">"
       << methods[m] << "</text>\n";
  }
  os << "</svg>\n";
  return os.str();
}

}  // namespace hera
