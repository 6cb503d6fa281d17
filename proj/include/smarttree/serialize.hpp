#pragma once

#include <nlohmann/json.hpp>

#include "smarttree/dataset.hpp"

namespace smarttree {

nlohmann::json catalog_to_json(const FeatureCatalog& catalog);
FeatureCatalog catalog_of_json(const nlohmann::json& j);

}  // namespace smarttree
