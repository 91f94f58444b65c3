#pragma once

#include <cmath>

// Closed-form values of the dynamic-SABR time integrals for curves with
// known antiderivatives, independent of the quadrature under test.
namespace oracle {

// int_0^T e^{-ct} dt
inline double int_exp0(double c, double T) {
  return (1.0 - std::exp(-c * T)) / c;
}

// int_0^T t e^{-ct} dt
inline double int_exp1(double c, double T) {
  return (1.0 - std::exp(-c * T) * (1.0 + c * T)) / (c * c);
}

// int_0^T t^2 e^{-ct} dt
inline double int_exp2(double c, double T) {
  double e = std::exp(-c * T);
  return (2.0 - e * (c * c * T * T + 2.0 * c * T + 2.0)) / (c * c * c);
}

struct SabrExpCase {
  double nu0, b, rho0;

  // nu(t) = nu0 e^{-bt}, rho constant
  double v1_sq(double T) const {
    double c = 2.0 * b;
    double i = T * T * int_exp0(c, T) - 2.0 * T * int_exp1(c, T) + int_exp2(c, T);
    return 3.0 / (T * T * T) * nu0 * nu0 * i;
  }
  double v2_sq(double T) const {
    double c = 2.0 * b;
    double i = T * int_exp1(c, T) - int_exp2(c, T);
    return 6.0 / (T * T * T) * nu0 * nu0 * i;
  }
  double eta1(double T) const {
    double i = T * int_exp0(b, T) - int_exp1(b, T);
    return 2.0 / (T * T) * nu0 * rho0 * i;
  }
  // running integral P(s) = nu0 rho0 (1 - e^{-bs})/b; eta2 = 12/T^4 iint P^2
  double eta2(double T) const {
    double k = nu0 * rho0 / b;
    double ebT = std::exp(-b * T);
    double e2bT = std::exp(-2.0 * b * T);
    double int_g = T * T / 2.0 - 2.0 / b * (T - (1.0 - ebT) / b) +
                   1.0 / (2.0 * b) * (T - (1.0 - e2bT) / (2.0 * b));
    return 12.0 / (T * T * T * T) * k * k * int_g;
  }
};

}  // namespace oracle
