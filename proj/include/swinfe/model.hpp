#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "swinfe/config.hpp"
#include "swinfe/head.hpp"
#include "swinfe/neck.hpp"
#include "swinfe/swin.hpp"

namespace swinfe {

struct ModelConfig {
    SwinConfig swin;
    NeckConfig neck;
    HeadConfig head;
    std::size_t image_size = 224;

    static ModelConfig from(const RunConfig& rc) {
        ModelConfig m{rc.swin(), rc.neck(), rc.head(), static_cast<std::size_t>(rc.integer("data.image_size"))};
        try {
            m.swin.validate_input(m.image_size, m.image_size);
        } catch (const ShapeError& e) {
            throw ConfigError(std::string("data.image_size: ") + e.what());
        }
        return m;
    }
};

/// Backbone + neck + head sharing one parameter set. Handles inside the
/// sub-structs alias tensors owned by `params`, so the detector is move-only.
template <typename T>
struct Detector {
    ModelConfig cfg;
    ParamSet<T> params;
    SwinParams<T> backbone;
    NeckParams<T> neck;
    HeadParams<T> head;
    std::vector<Anchor> anchors;

    Detector(const ModelConfig& c, std::uint64_t seed) : cfg(c) {
        auto rng = make_rng({seed, 0x1417});
        backbone = make_swin(params, cfg.swin, cfg.image_size, rng);
        std::array<std::size_t, 4> ch{};
        for (std::size_t s = 0; s < 4; ++s) ch[s] = cfg.swin.stage_channels(s);
        neck = make_neck(params, cfg.neck, ch, rng);
        head = make_head(params, cfg.neck.channels, cfg.head.anchors_per_cell(), rng);
        std::vector<LevelShape> levels;
        for (std::size_t s = 0; s < 4; ++s) {
            const std::size_t side = cfg.swin.stage_side(cfg.image_size, s);
            levels.push_back({side, side});
        }
        anchors = flatten_anchors(generate_anchors(levels, cfg.image_size, cfg.head.scales, cfg.head.ratios));
    }

    Detector(const Detector&) = delete;
    Detector& operator=(const Detector&) = delete;
    Detector(Detector&&) = default;
    Detector& operator=(Detector&&) = default;

    /// images [B, in_channels, S, S] -> logits [B, anchors], deltas [B, anchors*4].
    std::pair<Tensor<T>, Tensor<T>> forward(Tape<T>& tape, const Tensor<T>& images) const {
        const auto stages = backbone_forward(tape, images, backbone);
        const auto pyr = neck_forward(tape, stages, neck);
        return flatten_head(tape, head_forward(tape, pyr, head), head.anchors_per_cell);
    }
};

}  // namespace swinfe
