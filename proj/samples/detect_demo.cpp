// Trains the toy detector for a few hundred steps and prints the detections
// it finds on one held-out scene next to the ground truth.

#include <cstdio>

#include "swinfe/swinfe.hpp"

int main() {
    using namespace swinfe;
    RunConfig rc;
    for (const char* kv : {"backbone.embed_dim=8", "backbone.depths=2,2,2,2", "backbone.heads=1,2,4,8",
                           "backbone.window=4", "neck.channels=64", "head.scales=1.5,2.5", "head.positive_iou=0.5",
                           "data.image_size=64", "run.steps=300"}) {
        rc.set_assignment(kv);
    }
    const RunSetup s = RunSetup::from(rc);
    Detector<float> det(s.model, s.train.seed);
    AdamW<float> opt(s.optim);
    SampleCache data(s.data);
    const auto log = train(det, opt, data, s.n_train, s.train);
    std::printf("loss %.4f -> %.4f over %zu steps\n", log.front().total, log.back().total, log.size());

    const Sample& scene = data.get(s.n_train);
    for (const auto& g : scene.gt) std::printf("truth      [%5.1f %5.1f %5.1f %5.1f]\n", g.x1, g.y1, g.x2, g.y2);
    const auto dets = detect(det, scene);
    for (std::size_t i = 0; i < dets.size() && i < 5; ++i) {
        const auto& b = dets[i].box;
        std::printf("score %.2f [%5.1f %5.1f %5.1f %5.1f]\n", dets[i].score, b.x1, b.y1, b.x2, b.y2);
    }
    return 0;
}
