#pragma once

// The 13 observational likelihood families and their fixed properties:
// model class, zero handling, how the catch prediction enters the density
// (mean, median or location), and whether a correlation parameter exists.

#include <array>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <string_view>

namespace stocklik {

enum class Family : int {
  M1 = 1,   // log-normal
  M2,       // gamma, constant CV
  M3,       // generalized gamma (Prentice shape)
  M4,       // normal
  M5,       // left-truncated normal
  M6,       // Student's t on log scale
  M7,       // multivariate log-normal, AR(1) across ages
  M8,       // additive logistic normal + log-normal total numbers
  M9,       // multiplicative logistic normal + log-normal total numbers
  M10,      // Dirichlet + log-normal total numbers
  M11,      // additive logistic normal + log-normal total weight
  M12,      // multiplicative logistic normal + log-normal total weight
  M13,      // Dirichlet + log-normal total weight
};

enum class ObsClass {
  UnivariateAtAge,        // UN@A: independent per-age densities
  MultivariateAtAge,      // MN@A: joint across ages
  ProportionsTotalNumber, // P@AwN: composition + log-normal total in numbers
  ProportionsTotalWeight, // P@AwW: composition + log-normal total in weight
};

enum class ZeroPolicy { No, Some, Yes };

// What the Baranov/survey prediction determines in the density.
enum class PredLink { Mean, Median, Location };

struct FamilyInfo {
  Family id;
  std::string_view code;  // "M1".."M13"
  std::string_view name;
  ObsClass cls;
  ZeroPolicy allows_zero;
  PredLink link;
  bool has_correlation;
  bool has_shape;         // second per-age parameter (M3 tau, M6 log-df)
};

inline constexpr std::array<FamilyInfo, 13> kFamilyTable{{
    {Family::M1, "M1", "log-normal", ObsClass::UnivariateAtAge, ZeroPolicy::No, PredLink::Median, false, false},
    {Family::M2, "M2", "gamma", ObsClass::UnivariateAtAge, ZeroPolicy::Some, PredLink::Mean, false, false},
    {Family::M3, "M3", "generalized gamma", ObsClass::UnivariateAtAge, ZeroPolicy::Some, PredLink::Location, false, true},
    {Family::M4, "M4", "normal", ObsClass::UnivariateAtAge, ZeroPolicy::Yes, PredLink::Mean, false, false},
    {Family::M5, "M5", "truncated normal", ObsClass::UnivariateAtAge, ZeroPolicy::Yes, PredLink::Location, false, false},
    {Family::M6, "M6", "log-t", ObsClass::UnivariateAtAge, ZeroPolicy::No, PredLink::Location, false, true},
    {Family::M7, "M7", "multivariate log-normal", ObsClass::MultivariateAtAge, ZeroPolicy::No, PredLink::Median, true, false},
    {Family::M8, "M8", "additive logistic normal, total numbers", ObsClass::ProportionsTotalNumber, ZeroPolicy::No, PredLink::Location, true, false},
    {Family::M9, "M9", "multiplicative logistic normal, total numbers", ObsClass::ProportionsTotalNumber, ZeroPolicy::No, PredLink::Location, true, false},
    {Family::M10, "M10", "Dirichlet, total numbers", ObsClass::ProportionsTotalNumber, ZeroPolicy::No, PredLink::Mean, false, false},
    {Family::M11, "M11", "additive logistic normal, total weight", ObsClass::ProportionsTotalWeight, ZeroPolicy::No, PredLink::Location, true, false},
    {Family::M12, "M12", "multiplicative logistic normal, total weight", ObsClass::ProportionsTotalWeight, ZeroPolicy::No, PredLink::Location, true, false},
    {Family::M13, "M13", "Dirichlet, total weight", ObsClass::ProportionsTotalWeight, ZeroPolicy::No, PredLink::Mean, false, false},
}};

inline const FamilyInfo& family_info(Family f) {
  int i = static_cast<int>(f) - 1;
  if (i < 0 || i >= static_cast<int>(kFamilyTable.size()))
    throw std::invalid_argument("unknown family id " + std::to_string(static_cast<int>(f)));
  return kFamilyTable[static_cast<std::size_t>(i)];
}

inline ObsClass family_class(Family f) { return family_info(f).cls; }
inline bool has_correlation(Family f) { return family_info(f).has_correlation; }
inline bool has_shape_param(Family f) { return family_info(f).has_shape; }

inline bool is_univariate(Family f) { return family_class(f) == ObsClass::UnivariateAtAge; }

inline bool is_proportions(Family f) {
  ObsClass c = family_class(f);
  return c == ObsClass::ProportionsTotalNumber || c == ObsClass::ProportionsTotalWeight;
}

inline bool total_is_weight(Family f) { return family_class(f) == ObsClass::ProportionsTotalWeight; }

inline bool is_dirichlet(Family f) { return f == Family::M10 || f == Family::M13; }

inline std::string_view family_code(Family f) { return family_info(f).code; }

inline std::string_view class_code(ObsClass c) {
  switch (c) {
    case ObsClass::UnivariateAtAge: return "UN@A";
    case ObsClass::MultivariateAtAge: return "MN@A";
    case ObsClass::ProportionsTotalNumber: return "P@AwN";
    case ObsClass::ProportionsTotalWeight: return "P@AwW";
  }
  throw std::logic_error("unreachable");
}

inline Family parse_family(std::string_view s) {
  for (const auto& fi : kFamilyTable)
    if (fi.code == s) return fi.id;
  throw std::invalid_argument("unknown family code '" + std::string(s) + "'");
}

inline constexpr std::array<Family, 13> all_families() {
  std::array<Family, 13> out{};
  for (int i = 0; i < 13; ++i) out[static_cast<std::size_t>(i)] = static_cast<Family>(i + 1);
  return out;
}

}  // namespace stocklik
