#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <numbers>
#include <sstream>
#include <string>
#include <vector>

#include "swinfe/boxes.hpp"
#include "swinfe/random.hpp"
#include "swinfe/tensor.hpp"

// Synthetic single-look SAR scenes: exponential (unit-mean) multiplicative
// speckle over a dim sea, with bright elongated ship blobs.

namespace swinfe {

struct SynthConfig {
    std::size_t image_size = 64;
    std::size_t ships_min = 1, ships_max = 3;
    double length_min = 6, length_max = 20;
    double aspect_min = 2, aspect_max = 4;
    double intensity_gain = 4;
    double background = 0.25;
    std::uint64_t seed = 42;
    std::size_t max_retries = 200;

    void validate() const {
        if (image_size == 0) throw ConfigError("data.image_size must be positive");
        if (ships_min > ships_max) throw ConfigError("data: ships_min > ships_max");
        if (!(length_min > 0 && length_min <= length_max)) throw ConfigError("data: invalid ship length range");
        if (!(aspect_min >= 1 && aspect_min <= aspect_max)) throw ConfigError("data: invalid aspect range");
        if (!(intensity_gain > 1)) throw ConfigError("data.gain must exceed 1");
        if (!(background > 0)) throw ConfigError("data.background must be positive");
        if (length_max >= static_cast<double>(image_size)) throw ConfigError("data: ships longer than the image");
    }
};

struct Sample {
    Tensor<double> image;  // [1, H, W], non-negative intensities
    std::vector<Box> gt;
    std::vector<std::uint8_t> ship_mask;  // 1 where a ship pixel was drawn
};

inline Sample synth_sample(const SynthConfig& cfg, std::uint64_t index) {
    cfg.validate();
    const std::size_t S = cfg.image_size;
    auto rng = make_rng({cfg.seed, index, 0x5a5});
    Sample s;
    s.image = Tensor<double>(Shape{1, S, S});
    s.ship_mask.assign(S * S, 0);
    auto px = s.image.mutable_data();
    std::exponential_distribution<double> speckle(1.0);
    for (auto& v : px) v = cfg.background * speckle(rng);

    const auto n_ships = static_cast<std::size_t>(
        uniform_int(rng, static_cast<long>(cfg.ships_min), static_cast<long>(cfg.ships_max)));
    for (std::size_t ship = 0; ship < n_ships; ++ship) {
        bool placed = false;
        for (std::size_t attempt = 0; attempt < cfg.max_retries && !placed; ++attempt) {
            const double len = uniform(rng, cfg.length_min, cfg.length_max);
            const double wid = len / uniform(rng, cfg.aspect_min, cfg.aspect_max);
            const double theta = uniform(rng, 0.0, std::numbers::pi);
            const double a = 0.5 * len, b = 0.5 * wid;
            const double c = std::cos(theta), sn = std::sin(theta);
            const double ex = std::sqrt(a * a * c * c + b * b * sn * sn);
            const double ey = std::sqrt(a * a * sn * sn + b * b * c * c);
            const double side = static_cast<double>(S);
            if (2 * ex >= side - 2 || 2 * ey >= side - 2) continue;
            const double cx = uniform(rng, ex + 1, side - ex - 1);
            const double cy = uniform(rng, ey + 1, side - ey - 1);
            std::vector<std::size_t> pixels;
            Box bb{side, side, 0, 0};
            const auto y0 = static_cast<std::size_t>(std::max(0.0, std::floor(cy - ey)));
            const auto y1 = static_cast<std::size_t>(std::min(side - 1, std::ceil(cy + ey)));
            const auto x0 = static_cast<std::size_t>(std::max(0.0, std::floor(cx - ex)));
            const auto x1 = static_cast<std::size_t>(std::min(side - 1, std::ceil(cx + ex)));
            for (std::size_t y = y0; y <= y1; ++y) {
                for (std::size_t x = x0; x <= x1; ++x) {
                    const double dx = static_cast<double>(x) + 0.5 - cx, dy = static_cast<double>(y) + 0.5 - cy;
                    const double u = dx * c + dy * sn, v = -dx * sn + dy * c;
                    if ((u * u) / (a * a) + (v * v) / (b * b) <= 1.0) {
                        pixels.push_back(y * S + x);
                        bb.x1 = std::min(bb.x1, static_cast<double>(x));
                        bb.y1 = std::min(bb.y1, static_cast<double>(y));
                        bb.x2 = std::max(bb.x2, static_cast<double>(x + 1));
                        bb.y2 = std::max(bb.y2, static_cast<double>(y + 1));
                    }
                }
            }
            if (pixels.empty()) continue;
            const Box grown{bb.x1 - 1, bb.y1 - 1, bb.x2 + 1, bb.y2 + 1};
            bool clash = false;
            for (const auto& g : s.gt) clash = clash || iou(grown, g) > 0;
            if (clash) continue;
            for (auto p : pixels) {
                px[p] = cfg.intensity_gain * cfg.background * speckle(rng);
                s.ship_mask[p] = 1;
            }
            s.gt.push_back(bb);
            placed = true;
        }
        if (!placed) {
            std::ostringstream os;
            os << "synth_sample: could not place ship " << ship + 1 << " of " << n_ships << " after " << cfg.max_retries
               << " attempts (index " << index << ", image " << S << ", length " << cfg.length_min << ".."
               << cfg.length_max << ")";
            throw GenerationError(os.str());
        }
    }
    return s;
}

/// Zero-mean, unit-variance copy of an image's pixels.
template <typename T>
std::vector<T> normalized_pixels(const Tensor<double>& image) {
    const auto d = image.data();
    double mu = 0;
    for (double v : d) mu += v;
    mu /= static_cast<double>(d.size());
    double var = 0;
    for (double v : d) var += (v - mu) * (v - mu);
    var /= static_cast<double>(d.size());
    const double inv = 1.0 / std::sqrt(var + 1e-12);
    std::vector<T> out(d.size());
    for (std::size_t i = 0; i < d.size(); ++i) out[i] = static_cast<T>((d[i] - mu) * inv);
    return out;
}

/// Binary PGM (P5, maxval 255) with min-max scaling.
inline std::string encode_pgm(const Tensor<double>& image) {
    const std::size_t H = image.dim(image.rank() - 2), W = image.dim(image.rank() - 1);
    const auto d = image.data();
    const auto [lo, hi] = std::minmax_element(d.begin(), d.end());
    const double range = *hi - *lo;
    std::string out = "P5\n" + std::to_string(W) + " " + std::to_string(H) + "\n255\n";
    out.reserve(out.size() + H * W);
    for (std::size_t i = 0; i < H * W; ++i) {
        const double v = range > 0 ? (d[i] - *lo) / range : 0.0;
        out.push_back(static_cast<char>(static_cast<unsigned char>(std::lround(v * 255.0))));
    }
    return out;
}

}  // namespace swinfe
