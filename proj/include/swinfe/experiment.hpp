#pragma once

#include <chrono>
#include <functional>
#include <sstream>
#include <string>
#include <vector>

#include "swinfe/train.hpp"

namespace swinfe {

inline std::string backbone_label(const SwinConfig& c) {
    const SwinConfig t = SwinConfig::tiny();
    if (c.embed_dim == t.embed_dim && c.depths == t.depths && c.heads == t.heads) return "Swin-T";
    std::ostringstream os;
    os << "Swin(C=" << c.embed_dim << ",d=" << c.depths[0] << c.depths[1] << c.depths[2] << c.depths[3] << ")";
    return os.str();
}

inline std::string neck_label(NeckKind k) {
    switch (k) {
        case NeckKind::fpn: return "FPN";
        case NeckKind::pafpn: return "PAFPN";
        case NeckKind::fefpn: return "FEFPN";
    }
    return "?";
}

struct RunOutcome {
    std::vector<LossRecord> log;
    EvalResult eval;
    std::string checkpoint;  // serialized final parameters + optimizer state
    double seconds = 0;
};

/// Fresh model, full training budget, evaluation on the held-out split.
inline RunOutcome train_and_evaluate(const RunConfig& rc, const TrainHooks& hooks = {}) {
    const RunSetup setup = RunSetup::from(rc);
    const auto t0 = std::chrono::steady_clock::now();
    Detector<float> det(setup.model, setup.train.seed);
    AdamW<float> opt(setup.optim);
    SampleCache data(setup.data);
    RunOutcome out;
    out.log = train(det, opt, data, setup.n_train, setup.train, hooks);
    out.eval = evaluate_detector(det, data, setup.n_train, setup.eval_count(), setup.iou_thresh);
    out.checkpoint = serialize_checkpoint(make_checkpoint(det.params, &opt));
    out.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    return out;
}

struct AblationResult {
    std::vector<ReportRow> rows;
    std::vector<RunOutcome> runs;
};

/// FPN, PAFPN and FEFPN under one seed and budget; everything else shared.
inline AblationResult run_ablation(const RunConfig& base,
                                   const std::function<void(const std::string&)>& progress = {}) {
    AblationResult r;
    for (NeckKind kind : {NeckKind::fpn, NeckKind::pafpn, NeckKind::fefpn}) {
        RunConfig rc = base;
        rc.set("neck.kind", neck_name(kind));
        if (progress) progress(std::string("training ") + neck_label(kind));
        auto outcome = train_and_evaluate(rc);
        r.rows.push_back({backbone_label(rc.swin()), neck_label(kind), outcome.eval.ap});
        r.runs.push_back(std::move(outcome));
    }
    return r;
}

inline std::string ablation_report(const AblationResult& r, const RunConfig& rc) {
    const RunSetup s = RunSetup::from(rc);
    std::ostringstream os;
    os << "Neck ablation, TOY SCALE: synthetic speckle scenes (" << s.data.image_size << "x" << s.data.image_size
       << ", " << s.n_train << " train / " << s.eval_count() << " eval), " << s.train.steps << " steps, batch "
       << s.train.batch << ", seed " << s.train.seed << ", AP at IoU " << s.iou_thresh << ".\n"
       << "These are not SSDD results and are not expected to match the reference numbers below.\n\n";
    os << format_table(r.rows);
    os << "\nReference values on SSDD (citation only, not a target for this run):\n"
       << "  ResNet-50 | FPN   | 90.30\n"
       << "  Swin-T    | FPN   | 92.51\n"
       << "  Swin-T    | PAFPN | 88.60\n"
       << "  Swin-T    | FEFPN | 93.08\n";
    return os.str();
}

}  // namespace swinfe
