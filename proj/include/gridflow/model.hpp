#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "gridflow/autodiff/tensor.hpp"
#include "gridflow/plan.hpp"

namespace gridflow {

enum class Core : std::uint8_t { FullGN, GGNN, GAT, RWStationary, RWDynamic };
/// How flowing attention acts back on messages. Regular models carry no flow.
enum class Attend : std::uint8_t { Regular, NoAct, Mul, MulMlp };

struct ModelVariant {
    Core core = Core::GGNN;
    Attend attend = Attend::MulMlp;

    /// Explicit flow models predict with a^T; regular GNs use the channel readout.
    bool explicit_flow() const { return core == Core::RWStationary || core == Core::RWDynamic || attend != Attend::Regular; }
    friend bool operator==(const ModelVariant&, const ModelVariant&) = default;
};

/// "ggnn", "ggnn-mulmlp", "rw-stationary", ... (case-insensitive).
ModelVariant parse_variant(std::string_view name);
std::string variant_name(ModelVariant v);
/// All fourteen variants, random-walk baselines last.
std::vector<ModelVariant> all_variants();

struct ModelConfig {
    int dims = 40;
    int attn_dims = 8;
    int heads = 5;
    int steps = 16;
    double leaky_slope = 0.2;
    ModelVariant variant;

    /// Throws std::invalid_argument unless 0 < attn_dims < dims and, for GAT,
    /// heads divides dims.
    void validate() const;
    friend bool operator==(const ModelConfig&, const ModelConfig&) = default;
};

/// Ordered, named parameter list. Names are stable checkpoint keys.
template <typename Real>
struct ParamStore {
    std::vector<std::string> names;
    std::vector<ad::Tensor<Real>> tensors;
    std::vector<bool> decay;

    const ad::Tensor<Real>& add(std::string name, ad::Matrix<Real> value, bool decayed = false);
    /// Throws std::out_of_range for unknown names.
    const ad::Tensor<Real>& get(std::string_view name) const;
    std::size_t size() const { return tensors.size(); }
    std::size_t num_scalars() const;
};

/// Per-node values recorded during a forward pass; index [slot][step].
struct Trace {
    int steps = 0;
    std::vector<std::vector<std::vector<double>>> focused;     // a^t over nodes, t = 0..T
    std::vector<std::vector<std::vector<double>>> flowing;     // ã^t over graph edges, t < T
    std::vector<std::vector<std::vector<double>>> transition;  // T^t over graph edges; NaN where not computed
    std::vector<std::vector<std::vector<double>>> readout;     // softmax of the channel scores, t = 0..T
    std::vector<std::vector<ad::Matrix<double>>> states;       // h^t (n x d)
};

struct ForwardOptions {
    /// Empty picks windowed where exact and dense otherwise.
    std::optional<LayoutMode> mode;
    bool trace = false;
    /// Fuse the MulMlp projection into the GGNN message weights.
    bool fold_attend = true;
    /// Training shortcut for windowed flow models: computes only rows that
    /// can reach the loss. Scores are left empty and tracing is refused.
    /// Ignored by models that need every node for their loss.
    bool loss_only = false;
};

template <typename Real>
struct ForwardOutput {
    ad::Tensor<Real> loss;                   // mean over the batch
    std::vector<std::vector<double>> scores; // per example, one score per node
    std::optional<Trace> trace;
};

template <typename Real>
class Model {
public:
    /// Glorot-uniform weights and embeddings, zero biases.
    Model(const ModelConfig& config, int num_nodes, std::uint64_t seed);
    /// Wraps existing parameters; the names must match what the config needs.
    Model(const ModelConfig& config, int num_nodes, ParamStore<Real> params);

    const ModelConfig& config() const { return config_; }
    int num_nodes() const { return num_nodes_; }
    const ParamStore<Real>& params() const { return params_; }
    ParamStore<Real>& params() { return params_; }

    /// Layout used when ForwardOptions::mode is empty.
    LayoutMode default_mode() const;

    /// Runs config().steps propagation steps for a batch of (src, dst) node
    /// indices and returns the loss and per-node scores (a^T for flow models,
    /// the channel readout otherwise).
    ForwardOutput<Real> forward(const GraphIndex& graph, std::span<const int> src, std::span<const int> dst,
                                const ForwardOptions& options = {}) const;

private:
    ModelConfig config_;
    int num_nodes_ = 0;
    ParamStore<Real> params_;
};

/// Parameter names required by a configuration, in creation order.
std::vector<std::string> parameter_names(const ModelConfig& config);

/// Converts between precisions (e.g. float training weights for a double gradient check).
template <typename To, typename From>
ParamStore<To> convert_params(const ParamStore<From>& from);

extern template class Model<float>;
extern template class Model<double>;

}  // namespace gridflow
