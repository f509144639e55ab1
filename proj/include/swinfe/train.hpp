#pragma once

#include <cmath>
#include <cstdint>
#include <cstdio>
#include <functional>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "swinfe/checkpoint.hpp"
#include "swinfe/config.hpp"
#include "swinfe/metrics.hpp"
#include "swinfe/model.hpp"
#include "swinfe/optim.hpp"
#include "swinfe/synth.hpp"

namespace swinfe {

struct TrainOptions {
    std::uint64_t steps = 2000;
    std::size_t batch = 2;
    std::uint64_t seed = 42;
    std::uint64_t log_every = 1;
    std::uint64_t checkpoint_every = 0;
};

/// Everything a run needs, resolved from a RunConfig.
struct RunSetup {
    ModelConfig model;
    SynthConfig data;
    AdamWOptions optim;
    TrainOptions train;
    std::size_t num_images = 250;
    std::size_t n_train = 200;
    double iou_thresh = 0.5;
    std::size_t eval_max = 0;

    static RunSetup from(const RunConfig& rc) {
        RunSetup s;
        s.model = ModelConfig::from(rc);
        s.data = rc.synth();
        if (s.data.image_size != s.model.image_size) throw ConfigError("data.image_size disagrees with the model");
        s.optim = rc.optim();
        s.train.steps = rc.integer("run.steps");
        s.train.batch = rc.integer("run.batch");
        s.train.seed = rc.integer("run.seed");
        s.train.log_every = rc.integer("run.log_every");
        s.train.checkpoint_every = rc.integer("run.checkpoint_every");
        if (s.train.batch == 0) throw ConfigError("run.batch must be positive");
        if (s.train.log_every == 0) throw ConfigError("run.log_every must be positive");
        s.num_images = rc.integer("data.num_images");
        const double frac = rc.real("data.train_fraction");
        if (!(frac > 0 && frac < 1)) throw ConfigError("data.train_fraction must be in (0,1)");
        s.n_train = static_cast<std::size_t>(std::llround(frac * static_cast<double>(s.num_images)));
        if (s.n_train == 0 || s.n_train >= s.num_images) throw ConfigError("data.num_images too small for the split");
        s.iou_thresh = rc.real("metrics.iou_thresh");
        s.eval_max = rc.integer("eval.max_images");
        return s;
    }

    /// Eval indices are [n_train, n_train + eval_count()).
    std::size_t eval_count() const {
        const std::size_t n = num_images - n_train;
        return eval_max > 0 && eval_max < n ? eval_max : n;
    }
};

struct LossRecord {
    std::uint64_t step = 0;
    double cls = 0, reg = 0, total = 0;
};

inline std::string format_loss_line(const LossRecord& r) {
    char buf[128];
    std::snprintf(buf, sizeof buf, "%llu\t%.9g\t%.9g\t%.9g\n", static_cast<unsigned long long>(r.step), r.cls, r.reg,
                  r.total);
    return buf;
}

inline std::string format_loss_log(const std::vector<LossRecord>& log) {
    std::string s;
    for (const auto& r : log) s += format_loss_line(r);
    return s;
}

/// Generated samples, created on first use. Pure in (seed, index).
class SampleCache {
public:
    explicit SampleCache(SynthConfig cfg) : cfg_(cfg) {}
    const Sample& get(std::size_t index) {
        auto it = cache_.find(index);
        if (it == cache_.end()) it = cache_.emplace(index, synth_sample(cfg_, index)).first;
        return it->second;
    }
    const SynthConfig& config() const { return cfg_; }

private:
    SynthConfig cfg_;
    std::map<std::size_t, Sample> cache_;
};

/// Normalized [B, 1, S, S] batch.
template <typename T>
Tensor<T> make_batch(const std::vector<const Sample*>& samples) {
    if (samples.empty()) throw ContractError("make_batch: empty batch");
    const Shape one = samples[0]->image.shape();
    std::vector<T> data;
    for (const auto* s : samples) {
        if (s->image.shape() != one) throw ShapeError("make_batch: images differ in shape");
        const auto px = normalized_pixels<T>(s->image);
        data.insert(data.end(), px.begin(), px.end());
    }
    return Tensor<T>(Shape{samples.size(), one[0], one[1], one[2]}, std::move(data));
}

/// Training image for slot `slot` of step `step`: a fresh permutation of the
/// training indices per epoch, so batches depend only on (seed, step, slot).
class BatchSchedule {
public:
    BatchSchedule(std::uint64_t seed, std::size_t n_train, std::size_t batch)
        : seed_(seed), n_(n_train), batch_(batch) {}

    std::size_t index(std::uint64_t step, std::size_t slot) {
        const std::uint64_t g = step * batch_ + slot;
        return permutation(g / n_)[g % n_];
    }

private:
    const std::vector<std::size_t>& permutation(std::uint64_t epoch) {
        auto it = perms_.find(epoch);
        if (it != perms_.end()) return it->second;
        std::vector<std::size_t> p(n_);
        for (std::size_t i = 0; i < n_; ++i) p[i] = i;
        auto rng = make_rng({seed_, epoch, 0xba7c});
        for (std::size_t i = 0; i + 1 < n_; ++i) {
            const auto j = static_cast<std::size_t>(uniform_int(rng, static_cast<long>(i), static_cast<long>(n_ - 1)));
            std::swap(p[i], p[j]);
        }
        if (perms_.size() > 4) perms_.clear();
        return perms_.emplace(epoch, std::move(p)).first->second;
    }

    std::uint64_t seed_;
    std::size_t n_, batch_;
    std::map<std::uint64_t, std::vector<std::size_t>> perms_;
};

struct TrainHooks {
    std::function<void(const LossRecord&)> on_log;
    /// Called with the number of completed steps.
    std::function<void(std::uint64_t)> on_checkpoint;
};

/// Runs steps [opt.step_count(), opts.steps). Resuming only requires the
/// parameters and optimizer state restored from a checkpoint.
template <typename T>
std::vector<LossRecord> train(Detector<T>& det, AdamW<T>& opt, SampleCache& data, std::size_t n_train,
                              const TrainOptions& opts, const TrainHooks& hooks = {}) {
    std::vector<LossRecord> log;
    BatchSchedule schedule(opts.seed, n_train, opts.batch);
    opt.init(det.params);
    for (std::uint64_t step = opt.step_count(); step < opts.steps; ++step) {
        std::vector<const Sample*> batch;
        std::vector<ImageTargets> targets;
        for (std::size_t k = 0; k < opts.batch; ++k) {
            const Sample& s = data.get(schedule.index(step, k));
            batch.push_back(&s);
            auto rng = make_rng({opts.seed, step, k, 0x7a6});
            targets.push_back(build_targets(det.anchors, s.gt, det.cfg.head, rng));
        }
        Tape<T> tape;
        const auto [logits, deltas] = det.forward(tape, make_batch<T>(batch));
        const auto loss = rpn_loss(tape, logits, deltas, targets, det.cfg.head.smooth_l1_beta);
        const LossRecord rec{step, loss.cls, loss.reg, static_cast<double>(loss.total.item())};
        if (!std::isfinite(rec.total) || !std::isfinite(rec.cls) || !std::isfinite(rec.reg)) {
            std::ostringstream os;
            os << "non-finite loss at step " << step << " (cls=" << rec.cls << ", reg=" << rec.reg
               << ", total=" << rec.total << ")";
            throw NumericError(os.str());
        }
        det.params.zero_grad();
        tape.backward(loss.total);
        opt.step(det.params);
        if (step % opts.log_every == 0) {
            log.push_back(rec);
            if (hooks.on_log) hooks.on_log(rec);
        }
        if (opts.checkpoint_every > 0 && (step + 1) % opts.checkpoint_every == 0 && step + 1 < opts.steps &&
            hooks.on_checkpoint) {
            hooks.on_checkpoint(step + 1);
        }
    }
    return log;
}

/// Detections for one image.
template <typename T>
std::vector<Detection> detect(const Detector<T>& det, const Sample& s) {
    Tape<T> tape(false);
    const auto [logits, deltas] = det.forward(tape, make_batch<T>({&s}));
    const std::vector<double> l(logits.data().begin(), logits.data().end());
    const std::vector<double> d(deltas.data().begin(), deltas.data().end());
    return postprocess(l, d, det.anchors, det.cfg.image_size, det.cfg.head);
}

template <typename T>
EvalResult evaluate_detector(const Detector<T>& det, SampleCache& data, std::size_t first, std::size_t count,
                             double iou_thresh) {
    std::vector<std::vector<Detection>> dets;
    std::vector<std::vector<Box>> gts;
    for (std::size_t i = first; i < first + count; ++i) {
        const Sample& s = data.get(i);
        dets.push_back(detect(det, s));
        gts.push_back(s.gt);
    }
    return evaluate(dets, gts, iou_thresh);
}

inline std::string format_eval(const EvalResult& r) {
    std::ostringstream os;
    os.setf(std::ios::fixed);
    os.precision(2);
    os << "AP(%): " << 100.0 * r.ap << "\n";
    os.precision(4);
    os << "final precision: " << (r.precision.empty() ? 0.0 : r.precision.back()) << "\n";
    os << "final recall: " << (r.recall.empty() ? 0.0 : r.recall.back()) << "\n";
    os << "detections: " << r.true_positives + r.false_positives << " (tp " << r.true_positives << ", fp "
       << r.false_positives << "), ground truth: " << r.ground_truths << "\n";
    return os.str();
}

}  // namespace swinfe
