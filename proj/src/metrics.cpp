#include "mh2f/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <sstream>

#include "mh2f/errors.hpp"

namespace mh2f {

double psnr(const TensorD& r, const TensorD& gt) {
  if (!(r.shape == gt.shape))
    throw precondition_error("psnr: shape mismatch " + r.shape.str() + " vs " +
                             gt.shape.str());
  double acc = 0;
  for (std::size_t i = 0; i < r.data.size(); ++i) {
    const double d = r.data[i] - gt.data[i];
    acc += d * d;
  }
  const double mse = acc / static_cast<double>(r.data.size());
  if (mse <= 0) return kPsnrCap;
  return std::min(kPsnrCap, 10.0 * std::log10(1.0 / mse));
}

double psnr(const TensorF& r, const TensorF& gt) {
  return psnr(cast<double>(r), cast<double>(gt));
}

EvalReport evaluate_pairs(const std::vector<NamedPair>& pairs, const SsimParams& p) {
  if (pairs.empty()) throw precondition_error("evaluate_pairs: empty pair list");
  EvalReport rep;
  double psum = 0, ssum = 0;
  for (const auto& pair : pairs) {
    EvalRow row;
    row.name = pair.name;
    row.psnr = psnr(pair.derained, pair.ground_truth);
    row.ssim = ssim_index(pair.derained, pair.ground_truth, p);
    psum += row.psnr;
    ssum += row.ssim;
    rep.rows.push_back(std::move(row));
  }
  rep.mean_psnr = psum / static_cast<double>(pairs.size());
  rep.mean_ssim = ssum / static_cast<double>(pairs.size());
  return rep;
}

namespace {
std::string fmt(double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}
}  // namespace

void write_report_csv(const EvalReport& r, std::ostream& os) {
  for (const auto& row : r.rows)
    os << row.name << "," << fmt(row.psnr) << "," << fmt(row.ssim) << "\n";
  os << "mean," << fmt(r.mean_psnr) << "," << fmt(r.mean_ssim) << "\n";
}

std::string report_text(const EvalReport& r) {
  std::ostringstream os;
  for (const auto& row : r.rows) {
    char buf[256];
    std::snprintf(buf, sizeof(buf), "%-32s psnr %7.3f dB   ssim %.4f\n", row.name.c_str(),
                  row.psnr, row.ssim);
    os << buf;
  }
  char buf[256];
  std::snprintf(buf, sizeof(buf), "%-32s psnr %7.3f dB   ssim %.4f\n",
                ("mean over " + std::to_string(r.rows.size()) + " pairs").c_str(),
                r.mean_psnr, r.mean_ssim);
  os << buf;
  return os.str();
}

}  // namespace mh2f
