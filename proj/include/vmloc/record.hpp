#pragma once

#include <optional>
#include <vector>

#include "vmloc/pose.hpp"

namespace vmloc {

using Features = std::vector<double>;

struct SampleRecord {
  std::optional<Features> x1;
  std::optional<Features> x2;
  Pose pose;

  bool operator==(const SampleRecord&) const = default;
};

}  // namespace vmloc
