#include <algorithm>
#include <cctype>
#include <cmath>
#include <stdexcept>
#include <string>

#include "gridflow/grid.hpp"
#include "gridflow/model.hpp"
#include "gridflow/model_internal.hpp"
#include "gridflow/rng.hpp"

namespace gridflow {

namespace {

std::string lower(std::string_view s) {
    std::string out(s);
    std::transform(out.begin(), out.end(), out.begin(), [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
    return out;
}

double glorot(double fan_in, double fan_out) { return std::sqrt(6.0 / (fan_in + fan_out)); }

}  // namespace

ModelVariant parse_variant(std::string_view name) {
    const std::string s = lower(name);
    if (s == "rw-stationary") return {Core::RWStationary, Attend::Regular};
    if (s == "rw-dynamic") return {Core::RWDynamic, Attend::Regular};
    const auto dash = s.find('-');
    const std::string core = s.substr(0, dash);
    const std::string attend = dash == std::string::npos ? "" : s.substr(dash + 1);
    ModelVariant v;
    if (core == "fullgn") {
        v.core = Core::FullGN;
    } else if (core == "ggnn") {
        v.core = Core::GGNN;
    } else if (core == "gat") {
        v.core = Core::GAT;
    } else {
        throw std::invalid_argument("unknown model '" + std::string(name) +
                                    "'; expected {fullgn,ggnn,gat}[-noact|-mul|-mulmlp], rw-stationary or rw-dynamic");
    }
    if (attend.empty()) {
        v.attend = Attend::Regular;
    } else if (attend == "noact") {
        v.attend = Attend::NoAct;
    } else if (attend == "mul") {
        v.attend = Attend::Mul;
    } else if (attend == "mulmlp") {
        v.attend = Attend::MulMlp;
    } else {
        throw std::invalid_argument("unknown message-attending variant '" + attend + "' in '" + std::string(name) + "'");
    }
    return v;
}

std::string variant_name(ModelVariant v) {
    switch (v.core) {
        case Core::RWStationary: return "rw-stationary";
        case Core::RWDynamic: return "rw-dynamic";
        default: break;
    }
    std::string s = v.core == Core::FullGN ? "fullgn" : v.core == Core::GGNN ? "ggnn" : "gat";
    switch (v.attend) {
        case Attend::Regular: break;
        case Attend::NoAct: s += "-noact"; break;
        case Attend::Mul: s += "-mul"; break;
        case Attend::MulMlp: s += "-mulmlp"; break;
    }
    return s;
}

std::vector<ModelVariant> all_variants() {
    std::vector<ModelVariant> out;
    for (const Core c : {Core::FullGN, Core::GGNN, Core::GAT}) {
        for (const Attend a : {Attend::Regular, Attend::NoAct, Attend::Mul, Attend::MulMlp}) {
            out.push_back({c, a});
        }
    }
    out.push_back({Core::RWStationary, Attend::Regular});
    out.push_back({Core::RWDynamic, Attend::Regular});
    return out;
}

void ModelConfig::validate() const {
    if (dims <= 0 || attn_dims <= 0 || attn_dims >= dims) {
        throw std::invalid_argument("model config needs 0 < attn_dims < dims, got attn_dims=" +
                                    std::to_string(attn_dims) + ", dims=" + std::to_string(dims));
    }
    if (steps < 1) {
        throw std::invalid_argument("model config needs at least one propagation step");
    }
    if (variant.core == Core::GAT && (heads <= 0 || dims % heads != 0)) {
        throw std::invalid_argument("GAT needs heads dividing dims, got heads=" + std::to_string(heads) +
                                    ", dims=" + std::to_string(dims));
    }
    if ((variant.core == Core::RWStationary || variant.core == Core::RWDynamic) && variant.attend != Attend::Regular) {
        throw std::invalid_argument("random-walk models take no message-attending variant");
    }
}

std::string typed_name(const std::string& prefix, int type) {
    return prefix + "[edge_type=" + std::to_string(type) + "]";
}

std::vector<ParamSpec> parameter_specs(const ModelConfig& c, int n) {
    c.validate();
    const int d = c.dims;
    const int dp = c.attn_dims;
    const Core core = c.variant.core;
    std::vector<ParamSpec> s;
    auto add = [&](std::string name, int rows, int cols, double limit, bool decay = false) {
        s.push_back({std::move(name), rows, cols, limit, decay});
    };
    add("embed.u", n, d, glorot(n, d), true);
    if (core != Core::RWStationary) {
        add("init.W", d, d - dp, glorot(d, d - dp));
        add("init.b", 1, d - dp, 0.0);
    }
    switch (core) {
        case Core::FullGN:
            for (int e = 0; e < kNumEdgeTypes; ++e) {
                add(typed_name("fullgn.msg.W_src", e), d, d, glorot(3 * d, d));
                add(typed_name("fullgn.msg.W_dst", e), d, d, glorot(3 * d, d));
                add(typed_name("fullgn.msg.W_global", e), d, d, glorot(3 * d, d));
                add(typed_name("fullgn.msg.b", e), 1, d, 0.0);
            }
            for (const char* w : {"fullgn.node.W_h", "fullgn.node.W_m", "fullgn.node.W_u", "fullgn.node.W_g"}) {
                add(w, d, d, glorot(4 * d, d));
            }
            add("fullgn.node.b", 1, d, 0.0);
            for (const char* w : {"fullgn.global.W_g", "fullgn.global.W_h", "fullgn.global.W_m"}) {
                add(w, d, d, glorot(3 * d, d));
            }
            add("fullgn.global.b", 1, d, 0.0);
            break;
        case Core::GGNN:
            for (int e = 0; e < kNumEdgeTypes; ++e) {
                add(typed_name("ggnn.msg.W", e), d, d, glorot(d, d));
                add(typed_name("ggnn.msg.b", e), 1, d, 0.0);
            }
            break;
        case Core::GAT: {
            const int w = d / c.heads;
            for (int e = 0; e < kNumEdgeTypes; ++e) {
                add(typed_name("gat.W", e), d, d, glorot(d, d));
            }
            add("gat.a_src", c.heads, w, glorot(2 * w, 1));
            add("gat.a_dst", c.heads, w, glorot(2 * w, 1));
            break;
        }
        case Core::RWDynamic:
            for (const char* w : {"rwdyn.node.W_h", "rwdyn.node.W_u", "rwdyn.node.W_g"}) {
                add(w, d, d, glorot(3 * d, d));
            }
            add("rwdyn.node.b", 1, d, 0.0);
            add("rwdyn.global.W_g", d, d, glorot(2 * d, d));
            add("rwdyn.global.W_h", d, d, glorot(2 * d, d));
            add("rwdyn.global.b", 1, d, 0.0);
            break;
        case Core::RWStationary:
            break;
    }
    if (core == Core::GGNN || core == Core::GAT) {
        // Each gate sees [x : h] with x = [m : u].
        const double lim = glorot(3 * d, d);
        add("gru.W_xm", d, 3 * d, lim);
        add("gru.W_xu", d, 3 * d, lim);
        add("gru.W_hrz", d, 2 * d, lim);
        add("gru.W_hh", d, d, lim);
        add("gru.b", 1, 3 * d, 0.0);
    }
    if (c.variant.attend == Attend::MulMlp) {
        add("attend.W", d, d, glorot(d, d));
        add("attend.b", 1, d, 0.0);
    }
    if (c.variant.explicit_flow()) {
        const double lim = glorot(2 * d + d * d, 1);
        for (int e = 0; e < kNumEdgeTypes; ++e) {
            add(typed_name("trans.w_src", e), d, 1, lim);
            add(typed_name("trans.w_dst", e), d, 1, lim);
            add(typed_name("trans.M", e), d, d, lim);
        }
        add("trans.b", kNumEdgeTypes, 1, 0.0);
    }
    return s;
}

std::vector<std::string> parameter_names(const ModelConfig& config) {
    std::vector<std::string> out;
    for (const ParamSpec& p : parameter_specs(config, 1)) {
        out.push_back(p.name);
    }
    return out;
}

template <typename Real>
const ad::Tensor<Real>& ParamStore<Real>::add(std::string name, ad::Matrix<Real> value, bool decayed) {
    if (std::find(names.begin(), names.end(), name) != names.end()) {
        throw std::invalid_argument("duplicate parameter name '" + name + "'");
    }
    names.push_back(std::move(name));
    tensors.push_back(ad::Tensor<Real>::parameter(std::move(value)));
    decay.push_back(decayed);
    return tensors.back();
}

template <typename Real>
const ad::Tensor<Real>& ParamStore<Real>::get(std::string_view name) const {
    for (std::size_t i = 0; i < names.size(); ++i) {
        if (names[i] == name) return tensors[i];
    }
    throw std::out_of_range("no parameter named '" + std::string(name) + "'");
}

template <typename Real>
std::size_t ParamStore<Real>::num_scalars() const {
    std::size_t n = 0;
    for (const auto& t : tensors) n += static_cast<std::size_t>(t.size());
    return n;
}

template <typename To, typename From>
ParamStore<To> convert_params(const ParamStore<From>& from) {
    ParamStore<To> out;
    for (std::size_t i = 0; i < from.size(); ++i) {
        out.add(from.names[i], from.tensors[i].value().template cast<To>(), from.decay[i]);
    }
    return out;
}

template ParamStore<float> convert_params(const ParamStore<float>&);
template ParamStore<float> convert_params(const ParamStore<double>&);
template ParamStore<double> convert_params(const ParamStore<float>&);
template ParamStore<double> convert_params(const ParamStore<double>&);

template <typename Real>
Model<Real>::Model(const ModelConfig& config, int num_nodes, std::uint64_t seed)
    : config_(config), num_nodes_(num_nodes) {
    if (num_nodes <= 0) {
        throw std::invalid_argument("model needs at least one node");
    }
    Rng rng(derive_seed(seed, 0x1417));
    for (const ParamSpec& p : parameter_specs(config, num_nodes)) {
        ad::Matrix<Real> m(p.rows, p.cols);
        for (Eigen::Index i = 0; i < m.size(); ++i) {
            m.data()[i] = p.limit == 0.0 ? Real(0) : static_cast<Real>(rng.uniform(-p.limit, p.limit));
        }
        params_.add(p.name, std::move(m), p.decay);
    }
}

template <typename Real>
Model<Real>::Model(const ModelConfig& config, int num_nodes, ParamStore<Real> params)
    : config_(config), num_nodes_(num_nodes) {
    for (const ParamSpec& p : parameter_specs(config, num_nodes)) {
        const ad::Tensor<Real>& t = params.get(p.name);
        if (t.rows() != p.rows || t.cols() != p.cols) {
            throw std::invalid_argument("parameter '" + p.name + "' has shape " + t.shape_string() + ", expected " +
                                        ad::shape_string(p.rows, p.cols, 2));
        }
        params_.add(p.name, t.value(), p.decay);
    }
}

template <typename Real>
LayoutMode Model<Real>::default_mode() const {
    const Core c = config_.variant.core;
    return c == Core::FullGN || c == Core::RWDynamic ? LayoutMode::Dense : LayoutMode::Windowed;
}

template struct ParamStore<float>;
template struct ParamStore<double>;
template class Model<float>;
template class Model<double>;

}  // namespace gridflow
