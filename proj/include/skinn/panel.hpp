#pragma once

#include <vector>

#include "skinn/skr.hpp"

namespace skinn {

/**
 * One quoted call. date is yyyymmdd; synthetic undated rows use zero.
 * mid is the quoted price in currency units; losses divide by the strike.
 */
struct Quote {
  int date = 0;
  double S = 0.0;
  double K = 0.0;
  double r = 0.0;
  double tau = 0.0;
  double mid = 0.0;
};

using Panel = std::vector<Quote>;

SkInputs quote_inputs(const Quote& q);

// Median quoted rate. Collocation points are drawn at this fixed rate.
double panel_median_rate(const Panel& panel);

}  // namespace skinn
