#pragma once

#include <ostream>
#include <string>
#include <vector>

#include "mh2f/losses.hpp"
#include "mh2f/tensor.hpp"

namespace mh2f {

// 10*log10(1/MSE) on [0,1] data; zero MSE is capped at 100 dB.
inline constexpr double kPsnrCap = 100.0;

double psnr(const TensorD& r, const TensorD& gt);
double psnr(const TensorF& r, const TensorF& gt);

struct EvalRow {
  std::string name;
  double psnr = 0;
  double ssim = 0;
};

struct EvalReport {
  std::vector<EvalRow> rows;
  double mean_psnr = 0;
  double mean_ssim = 0;
};

struct NamedPair {
  std::string name;
  TensorF derained;
  TensorF ground_truth;
};

EvalReport evaluate_pairs(const std::vector<NamedPair>& pairs, const SsimParams& p = {});

// rows "name,psnr_db,ssim" followed by one "mean,..." summary row
void write_report_csv(const EvalReport& r, std::ostream& os);
std::string report_text(const EvalReport& r);

}  // namespace mh2f
