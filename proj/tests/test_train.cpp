#include <gtest/gtest.h>

#include <cmath>

#include "swinfe/swinfe.hpp"

using namespace swinfe;

namespace {

RunConfig toy(std::uint64_t steps) {
    RunConfig rc = RunConfig::from_file(std::string(SWINFE_SOURCE_DIR) + "/configs/toy.cfg");
    rc.set("run.steps", std::to_string(steps));
    return rc;
}

struct Run {
    std::vector<LossRecord> log;
    std::string checkpoint;
};

Run train_fresh(const RunConfig& rc) {
    const RunSetup s = RunSetup::from(rc);
    Detector<float> det(s.model, s.train.seed);
    AdamW<float> opt(s.optim);
    SampleCache data(s.data);
    Run r;
    r.log = train(det, opt, data, s.n_train, s.train);
    r.checkpoint = serialize_checkpoint(make_checkpoint(det.params, &opt));
    return r;
}

}  // namespace

TEST(Detector, ForwardShapes) {
    const RunSetup s = RunSetup::from(toy(1));
    Detector<float> det(s.model, 1);
    // 16, 8, 4, 2 cells per side; 2 scales x 3 ratios
    const std::size_t cells = 16 * 16 + 8 * 8 + 4 * 4 + 2 * 2;
    ASSERT_EQ(det.anchors.size(), cells * 6);
    SampleCache data(s.data);
    Tape<float> tape(false);
    const auto [logits, deltas] = det.forward(tape, make_batch<float>({&data.get(0), &data.get(1)}));
    EXPECT_EQ(logits.shape(), (Shape{2, cells * 6}));
    EXPECT_EQ(deltas.shape(), (Shape{2, cells * 24}));
}

TEST(Train, ZeroLearningRateLeavesParametersUntouched) {
    RunConfig rc = toy(3);
    rc.set("optim.lr", "0");
    rc.set("optim.weight_decay", "0");
    const RunSetup s = RunSetup::from(rc);
    Detector<float> det(s.model, s.train.seed);
    const std::string before = serialize_checkpoint(make_checkpoint(det.params, static_cast<AdamW<float>*>(nullptr)));
    AdamW<float> opt(s.optim);
    SampleCache data(s.data);
    const auto log = train(det, opt, data, s.n_train, s.train);
    ASSERT_EQ(log.size(), 3u);
    EXPECT_EQ(serialize_checkpoint(make_checkpoint(det.params, static_cast<AdamW<float>*>(nullptr))), before);
}

TEST(Train, FirstStepClassificationLossIsLn2) {
    // score conv starts at zero, so every sampled anchor sees p = 1/2
    const auto r = train_fresh(toy(1));
    ASSERT_EQ(r.log.size(), 1u);
    EXPECT_NEAR(r.log[0].cls, std::log(2.0), 1e-5);  // float sum over 512 anchors
    EXPECT_NEAR(r.log[0].total, r.log[0].cls + r.log[0].reg, 1e-5);
}

TEST(Train, SameSeedSameBytes) {
    const auto a = train_fresh(toy(4));
    const auto b = train_fresh(toy(4));
    EXPECT_EQ(format_loss_log(a.log), format_loss_log(b.log));
    EXPECT_EQ(a.checkpoint, b.checkpoint);
    RunConfig other = toy(4);
    other.set("run.seed", "43");
    EXPECT_NE(format_loss_log(train_fresh(other).log), format_loss_log(a.log));
}

TEST(Train, ResumeReplaysUninterruptedLog) {
    const auto full = train_fresh(toy(6));

    const RunSetup head = RunSetup::from(toy(3));
    std::string mid;
    {
        Detector<float> det(head.model, head.train.seed);
        AdamW<float> opt(head.optim);
        SampleCache data(head.data);
        train(det, opt, data, head.n_train, head.train);
        mid = serialize_checkpoint(make_checkpoint(det.params, &opt));
    }
    const RunSetup s = RunSetup::from(toy(6));
    Detector<float> det(s.model, 999);  // init is overwritten by the checkpoint
    AdamW<float> opt(s.optim);
    apply_checkpoint(parse_checkpoint(mid), det.params, &opt);
    EXPECT_EQ(opt.step_count(), 3u);
    SampleCache data(s.data);
    const auto tail = train(det, opt, data, s.n_train, s.train);
    ASSERT_EQ(tail.size(), 3u);
    const std::vector<LossRecord> want(full.log.begin() + 3, full.log.end());
    EXPECT_EQ(format_loss_log(tail), format_loss_log(want));
    EXPECT_EQ(serialize_checkpoint(make_checkpoint(det.params, &opt)), full.checkpoint);
}

TEST(Train, ToyCheckpointRejectedBySwinT) {
    const RunSetup ts = RunSetup::from(toy(1));
    Detector<float> small(ts.model, 1);
    const Checkpoint ck = make_checkpoint(small.params, static_cast<AdamW<float>*>(nullptr));

    RunConfig big_rc;
    big_rc.set("data.image_size", "224");
    Detector<float> big(ModelConfig::from(big_rc), 1);
    const std::string before = serialize_checkpoint(make_checkpoint(big.params, static_cast<AdamW<float>*>(nullptr)));

    // first stored name (in sorted order) whose shape the big model disagrees with
    std::string first;
    for (const auto& [name, t] : ck) {
        ASSERT_TRUE(big.params.contains(name)) << name;
        if (t.shape != big.params.get(name).shape()) {
            first = name;
            break;
        }
    }
    ASSERT_FALSE(first.empty());
    try {
        apply_checkpoint(ck, big.params, static_cast<AdamW<float>*>(nullptr));
        FAIL() << "expected CheckpointError";
    } catch (const CheckpointError& e) {
        EXPECT_NE(std::string(e.what()).find("'" + first + "'"), std::string::npos) << e.what();
    }
    EXPECT_EQ(serialize_checkpoint(make_checkpoint(big.params, static_cast<AdamW<float>*>(nullptr))), before);
}

TEST(Train, NonFiniteLossIsReported) {
    RunConfig rc = toy(2);
    rc.set("optim.lr", "1e30");
    const RunSetup s = RunSetup::from(rc);
    Detector<float> det(s.model, s.train.seed);
    AdamW<float> opt(s.optim);
    SampleCache data(s.data);
    EXPECT_THROW(train(det, opt, data, s.n_train, s.train), NumericError);
}
