#pragma once

#include <cmath>
#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "errors.hpp"
#include "models.hpp"
#include "tensor.hpp"

namespace advlab {

/// SGD with heavy-ball momentum and L2 weight decay folded into the gradient.
struct OptimizerState {
    std::vector<Tensor> momentum;  // one buffer per parameter tensor
    double mu = 0.9;
    double weight_decay = 1e-4;
    double lr = 0.1;

    static OptimizerState for_model(const Model& model, double mu, double weight_decay, double lr) {
        OptimizerState s;
        for (const auto& p : model.params()) s.momentum.emplace_back(p.shape());
        s.mu = mu;
        s.weight_decay = weight_decay;
        s.lr = lr;
        return s;
    }
};

/// Where an update happened, for diagnostics when it goes wrong.
struct StepContext {
    std::size_t epoch = 0;
    std::size_t batch = 0;
};

/// v <- mu v + (g + wd theta); theta <- theta - lr v
inline void sgd_step(Model& model, std::span<const Tensor> grads, OptimizerState& st, StepContext where = {}) {
    auto& params = model.params();
    if (grads.size() != params.size() || st.momentum.size() != params.size())
        throw ShapeError("sgd_step: expected " + std::to_string(params.size()) + " gradient tensors, got " +
                         std::to_string(grads.size()));
    double norm2 = 0.0;
    bool finite = true;
    for (std::size_t k = 0; k < params.size(); ++k) {
        if (grads[k].shape() != params[k].shape() || st.momentum[k].shape() != params[k].shape())
            throw ShapeError("sgd_step: gradient " + std::to_string(k) + " has shape " + shape_str(grads[k].shape()) +
                             ", parameter has " + shape_str(params[k].shape()));
        for (double g : grads[k].data()) {
            norm2 += g * g;
            finite = finite && std::isfinite(g);
        }
    }
    if (!finite || !std::isfinite(norm2))
        throw NumericalError("non-finite gradient at epoch " + std::to_string(where.epoch) + ", batch " +
                             std::to_string(where.batch) + " (gradient norm " + std::to_string(std::sqrt(norm2)) + ")");
    for (std::size_t k = 0; k < params.size(); ++k) {
        auto theta = params[k].data();
        auto v = st.momentum[k].data();
        const auto g = grads[k].data();
        for (std::size_t i = 0; i < theta.size(); ++i) {
            v[i] = st.mu * v[i] + (g[i] + st.weight_decay * theta[i]);
            theta[i] -= st.lr * v[i];
        }
        if (!params[k].all_finite())
            throw NumericalError("non-finite parameter after update at epoch " + std::to_string(where.epoch) +
                                 ", batch " + std::to_string(where.batch));
    }
}

/// Piecewise-constant schedule: `stages[i]` applies from decay_epochs[i-1] (inclusive) on.
struct LrSchedule {
    std::vector<double> stages{0.1, 0.01, 0.001};
    std::vector<std::size_t> decay_epochs{20, 30};

    void validate(std::size_t total_epochs) const {
        if (stages.size() != decay_epochs.size() + 1)
            throw InvalidArgument("lr schedule: need exactly one more stage than decay epochs");
        for (double s : stages)
            if (!(s > 0.0) || !std::isfinite(s)) throw InvalidArgument("lr schedule: rates must be positive");
        for (std::size_t i = 0; i < decay_epochs.size(); ++i) {
            if (i > 0 && decay_epochs[i] <= decay_epochs[i - 1])
                throw InvalidArgument("lr schedule: decay epochs must be strictly increasing");
            if (decay_epochs[i] >= total_epochs)
                throw InvalidArgument("lr schedule: decay epoch " + std::to_string(decay_epochs[i]) +
                                      " is not below the epoch count " + std::to_string(total_epochs));
        }
    }

    /// Epochs count from 0; the named decay epoch already uses the decayed rate.
    double at(std::size_t epoch) const {
        std::size_t stage = 0;
        while (stage < decay_epochs.size() && epoch >= decay_epochs[stage]) ++stage;
        return stages[stage];
    }

    friend bool operator==(const LrSchedule&, const LrSchedule&) = default;
};

/// Running arithmetic mean of parameter snapshots.
struct SwaState {
    std::vector<Tensor> average;
    std::size_t count = 0;
    std::size_t start_epoch = 0;
};

inline void swa_update(SwaState& swa, const Model& model, std::size_t epoch) {
    if (epoch < swa.start_epoch)
        throw InvalidArgument("swa_update: epoch " + std::to_string(epoch) + " precedes the start epoch " +
                              std::to_string(swa.start_epoch));
    if (swa.count == 0) {
        swa.average = model.params();
        swa.count = 1;
        return;
    }
    if (swa.average.size() != model.params().size()) throw ShapeError("swa_update: parameter layout changed");
    const double inv = 1.0 / static_cast<double>(swa.count + 1);
    for (std::size_t k = 0; k < swa.average.size(); ++k) {
        auto avg = swa.average[k].data();
        const auto theta = model.params()[k].data();
        for (std::size_t i = 0; i < avg.size(); ++i) avg[i] += (theta[i] - avg[i]) * inv;
    }
    ++swa.count;
}

/// The model carrying the averaged parameters.
inline Model swa_model(const SwaState& swa, const Model& like) {
    if (swa.count == 0) throw InvalidArgument("swa_model: no snapshots accumulated");
    return Model(like.spec(), like.layers(), swa.average);
}

}  // namespace advlab
