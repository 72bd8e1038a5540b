#pragma once

#include <string>
#include <vector>

#include "gridflow/model.hpp"

namespace gridflow {

struct ParamSpec {
    std::string name;
    int rows = 0;
    int cols = 0;
    double limit = 0.0;  // uniform init half-width; 0 means zeros
    bool decay = false;
};

std::vector<ParamSpec> parameter_specs(const ModelConfig& config, int num_nodes);
std::string typed_name(const std::string& prefix, int type);

}  // namespace gridflow
