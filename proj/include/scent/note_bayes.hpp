#pragma once

#include <array>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "scent/error.hpp"

namespace scent {

/// Note layers in the order a fragrance unfolds.
enum class Layer : std::uint8_t { Top, Middle, Base };

inline constexpr std::array<Layer, 3> kAllLayers = {Layer::Top, Layer::Middle, Layer::Base};

constexpr std::size_t index_of(Layer layer) noexcept { return static_cast<std::size_t>(layer); }

constexpr std::string_view short_name(Layer layer) noexcept {
    constexpr std::array<std::string_view, 3> names = {"T", "M", "B"};
    return names[index_of(layer)];
}

inline std::optional<Layer> parse_layer(std::string_view s) {
    if (s == "T" || s == "top") return Layer::Top;
    if (s == "M" || s == "middle") return Layer::Middle;
    if (s == "B" || s == "base") return Layer::Base;
    return std::nullopt;
}

enum class Outcome : std::uint8_t { Unpleasant, Pleasant };

inline std::optional<Outcome> parse_outcome(std::string_view s) {
    if (s == "p" || s == "pleasant") return Outcome::Pleasant;
    if (s == "u" || s == "unpleasant") return Outcome::Unpleasant;
    return std::nullopt;
}

struct LayerObservation {
    Layer layer = Layer::Top;
    Outcome outcome = Outcome::Pleasant;

    friend bool operator==(const LayerObservation&, const LayerObservation&) = default;
};

/// P(H_L = pleasant | H_F) for one layer.
struct LayerLikelihood {
    double if_pleasant = 0.5;    // P(H_L | H_F = true)
    double if_unpleasant = 0.5;  // P(H_L | H_F = false)
};

struct PleasantnessModel {
    double p_f = 0.5;
    std::array<LayerLikelihood, 3> layers{};

    void validate() const {
        require(std::isfinite(p_f) && p_f > 0.0 && p_f < 1.0, ErrorCode::InvalidArgument, "p_f must lie in (0, 1)");
        for (Layer l : kAllLayers) {
            const auto& t = layers[index_of(l)];
            const bool in_range = t.if_pleasant >= 0.0 && t.if_pleasant <= 1.0 && t.if_unpleasant >= 0.0 &&
                                  t.if_unpleasant <= 1.0;
            require(in_range, ErrorCode::InvalidArgument,
                    "layer " + std::string(short_name(l)) + " likelihoods must lie in [0, 1]");
            require(t.if_pleasant > 0.0 || t.if_unpleasant > 0.0, ErrorCode::InvalidArgument,
                    "layer " + std::string(short_name(l)) + " likelihoods are both zero");
        }
    }

    /// P(outcome on `layer` | H_F = fragrance_pleasant, history). Layers are
    /// conditionally independent given H_F, so `history` is unused here; it is
    /// part of the signature for models with dependent layers.
    [[nodiscard]] double likelihood(Layer layer, Outcome outcome, bool fragrance_pleasant,
                                    std::span<const LayerObservation> history = {}) const {
        (void)history;
        const auto& t = layers[index_of(layer)];
        const double p = fragrance_pleasant ? t.if_pleasant : t.if_unpleasant;
        return outcome == Outcome::Pleasant ? p : 1.0 - p;
    }
};

struct PleasantnessState {
    double posterior = 0.5;   // P(H_F | observed)
    double complement = 0.5;  // P(not H_F | observed)
    std::vector<LayerObservation> observed;

    static PleasantnessState initial(const PleasantnessModel& model) {
        return {model.p_f, 1.0 - model.p_f, {}};
    }
};

inline PleasantnessState observe_layer(const PleasantnessState& state, const PleasantnessModel& model, Layer layer,
                                       Outcome outcome) {
    model.validate();
    for (const auto& o : state.observed) {
        require(o.layer != layer, ErrorCode::LayerAlreadyObserved,
                "layer " + std::string(short_name(layer)) + " already observed");
    }
    require(state.observed.size() == index_of(layer), ErrorCode::OutOfOrderLayer,
            "layers must be observed in T, M, B order");

    const double like_true = model.likelihood(layer, outcome, true, state.observed);
    const double like_false = model.likelihood(layer, outcome, false, state.observed);
    const double joint_true = like_true * state.posterior;
    const double joint_false = like_false * state.complement;
    const double evidence = joint_true + joint_false;
    require(evidence > 0.0, ErrorCode::ZeroEvidence,
            "outcome on layer " + std::string(short_name(layer)) + " is impossible under the model");

    PleasantnessState next;
    if (like_true == like_false) {
        // likelihood ratio 1: keep the prior bit-for-bit
        next.posterior = state.posterior;
        next.complement = state.complement;
    } else {
        next.posterior = joint_true / evidence;
        next.complement = joint_false / evidence;
    }
    next.observed = state.observed;
    next.observed.push_back({layer, outcome});
    return next;
}

/// P(H_F | T, M, B outcomes), folding observe_layer over the three layers.
inline double chain_posterior(const PleasantnessModel& model, const std::array<Outcome, 3>& outcomes) {
    auto state = PleasantnessState::initial(model);
    for (Layer l : kAllLayers) {
        state = observe_layer(state, model, l, outcomes[index_of(l)]);
    }
    return state.posterior;
}

}  // namespace scent
