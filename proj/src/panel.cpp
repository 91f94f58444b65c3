#include "skinn/panel.hpp"

#include <algorithm>
#include <stdexcept>
#include <vector>

namespace skinn {

SkInputs quote_inputs(const Quote& q) { return SkInputs::make(q.S, q.K, q.r, q.tau); }

double panel_median_rate(const Panel& panel) {
  if (panel.empty()) throw std::invalid_argument("panel_median_rate: empty panel");
  std::vector<double> rates;
  rates.reserve(panel.size());
  for (const Quote& q : panel) rates.push_back(q.r);
  const std::size_t mid = rates.size() / 2;
  std::nth_element(rates.begin(), rates.begin() + mid, rates.end());
  double hi = rates[mid];
  if (rates.size() % 2 == 1) return hi;
  double lo = *std::max_element(rates.begin(), rates.begin() + mid);
  return 0.5 * (lo + hi);
}

}  // namespace skinn
