#include <doctest.h>

#include <cmath>
#include <filesystem>

#include "augcl/errors.hpp"
#include "augcl/report.hpp"
#include "test_support.hpp"

using namespace augcl;
using namespace augcl::testing;

namespace {

bool contains(const std::string& text, const std::string& needle) { return text.find(needle) != std::string::npos; }

RunReport two_task_report() {
    RunReport r;
    r.dataset = DatasetName::mnist;
    r.curriculum_id = "B1";
    r.tasks = {AugmentationKind::gaussian_noise, AugmentationKind::crop};
    r.seeds = {7};
    r.records = {{1, LearningMode::mtl, 7, 90.0, 89.0},
                 {2, LearningMode::mtl, 7, 88.5, 88.0},
                 {1, LearningMode::cl, 7, 90.0, 89.0},
                 {2, LearningMode::cl, 7, 91.25, 90.5}};
    return r;
}

}  // namespace

TEST_CASE("markdown table has one row per prefix and a column per mode") {
    const std::string md = render_markdown(two_task_report());
    CHECK(contains(md, "# Results: mnist, curriculum B1"));
    CHECK(contains(md, "| k | Task | MTL | CL |"));
    CHECK(contains(md, "| 1 | GaussianNoise | **90.00** | **90.00** |"));
    CHECK(contains(md, "| 2 | Crop | 88.50 | **91.25** |"));
    CHECK(contains(md, "## Average negative transfer"));
    CHECK(contains(md, "| MTL | -1.50 | 1 |"));
    CHECK(contains(md, "| CL | 0.00 | 0 |"));
    CHECK_FALSE(contains(md, "†"));
    CHECK_FALSE(contains(md, "—"));
}

TEST_CASE("missing and partial cells are marked") {
    RunReport r = two_task_report();
    r.seeds = {7, 8};
    r.records.push_back({1, LearningMode::cl, 8, 80.0, 80.0});
    const std::string md = render_markdown(r);
    CHECK(contains(md, "| 1 | GaussianNoise | **90.00** † | 85.00 |"));

    RunReport gap = two_task_report();
    gap.records.erase(gap.records.begin() + 1);
    const std::string md2 = render_markdown(gap);
    CHECK(contains(md2, "| 2 | Crop | — | 91.25 |"));
    CHECK(contains(md2, "no result"));
    const auto nt = negative_transfer_report(gap);
    REQUIRE(nt.size() == 2);
    CHECK(nt[0].mode == LearningMode::mtl);
    CHECK_FALSE(nt[0].of_means.has_value());
    CHECK(nt[0].per_seed.empty());
    CHECK(nt[1].of_means.has_value());
}

TEST_CASE("failures are listed") {
    RunReport r = two_task_report();
    r.failures = {"seed 3: diverged"};
    CHECK(contains(render_markdown(r), "## Failures\n\n- seed 3: diverged\n"));
}

TEST_CASE("report csv round trips exactly") {
    RunReport r = two_task_report();
    r.records[0].probe_accuracy = 1.0 / 3.0;
    r.records[3].val_accuracy = 0.1 + 0.2;
    const std::string csv = render_report_csv(r);
    CHECK(csv.rfind("dataset,curriculum,mode,prefix_length,seed,probe_accuracy,val_accuracy\n", 0) == 0);
    CHECK(contains(csv, "mnist,B1,MTL,1,7,"));
    CHECK(parse_report_csv(csv) == r.records);

    CHECK_THROWS_AS(parse_report_csv("nope\n"), FormatError);
    CHECK_THROWS_AS(parse_report_csv("dataset,curriculum,mode,prefix_length,seed,probe_accuracy,val_accuracy\n"
                                     "mnist,B1,XX,1,7,1,1\n"),
                    FormatError);
    CHECK_THROWS_AS(parse_report_csv("dataset,curriculum,mode,prefix_length,seed,probe_accuracy,val_accuracy\n"
                                     "mnist,B1,CL,1,7,1\n"),
                    FormatError);
}

TEST_CASE("cell means are arithmetic means over seeds") {
    RunReport r;
    r.tasks = {AugmentationKind::crop};
    r.seeds = {0, 1, 2};
    r.expect_mtl = false;
    const double acc[] = {91.3, 87.05, 93.125};
    for (std::uint64_t s = 0; s < 3; ++s) r.records.push_back({1, LearningMode::cl, s, acc[s], 0.0});
    const CellSummary c = cell_summary(r, LearningMode::cl, 1);
    REQUIRE(c.mean.has_value());
    CHECK(std::abs(*c.mean - (91.3 + 87.05 + 93.125) / 3.0) < 1e-12);
    CHECK(c.count == 3);
    CHECK(c.complete);
    CHECK_FALSE(cell_summary(r, LearningMode::mtl, 1).mean.has_value());
}

TEST_CASE("negative transfer csv lists curve, seeds and summaries") {
    RunReport r = two_task_report();
    const std::string csv = render_negtransfer_csv(r);
    CHECK(csv ==
          "mode,scope,seed,average_drop,event_count,events\n"
          "MTL,mean_curve,,-1.5,1,1:-1.5\n"
          "MTL,seed,7,-1.5,1,1:-1.5\n"
          "MTL,seed_mean,,-1.5,1,\n"
          "MTL,seed_pooled,,-1.5,1,\n"
          "CL,mean_curve,,0,0,\n"
          "CL,seed,7,0,0,\n"
          "CL,seed_mean,,0,0,\n"
          "CL,seed_pooled,,0,0,\n");
}

TEST_CASE("single augmentation csv round trips") {
    RunReport r;
    r.single_aug = {{AugmentationKind::crop, 0, 95.5, 95.0}, {AugmentationKind::gaussian_noise, 0, 80.125, 79.0}};
    const std::string csv = render_single_aug_csv(r);
    CHECK(parse_single_aug_csv(csv, "single_aug.csv") == r.single_aug);
    try {
        parse_single_aug_csv("kind,seed,probe_accuracy,val_accuracy\nCrop,0,101,1\n", "x.csv");
        FAIL("expected FormatError");
    } catch (const FormatError& e) {
        CHECK(contains(e.what(), "x.csv:2"));
    }
    CHECK_THROWS_AS(parse_single_aug_csv("kind\n", "x.csv"), FormatError);

    const std::string md = render_markdown(r);
    CHECK(contains(md, "| Crop | 95.50 | 1 |"));
    CHECK(contains(md, "| Rotation | — | 0 |"));
}

TEST_CASE("sort_records orders by mode, prefix and seed") {
    RunReport r = two_task_report();
    r.records = {{2, LearningMode::mtl, 1, 0, 0}, {1, LearningMode::cl, 2, 0, 0}, {1, LearningMode::cl, 1, 0, 0}};
    r.single_aug = {{AugmentationKind::flip, 0, 1, 1}, {AugmentationKind::crop, 1, 1, 1}, {AugmentationKind::crop, 0, 1, 1}};
    sort_records(r);
    CHECK(r.records[0].seed == 1);
    CHECK(r.records[1].seed == 2);
    CHECK(r.records[2].mode == LearningMode::mtl);
    CHECK(r.single_aug[0].kind == AugmentationKind::crop);
    CHECK(r.single_aug[0].seed == 0);
    CHECK(r.single_aug[2].kind == AugmentationKind::flip);
}

TEST_CASE("write_report is byte-stable") {
    const auto dir = temp_dir("report");
    write_report(dir, two_task_report());
    const std::string first = slurp(dir / "report.csv") + slurp(dir / "report.md") + slurp(dir / "negtransfer.csv");
    write_report(dir, two_task_report());
    CHECK(first == slurp(dir / "report.csv") + slurp(dir / "report.md") + slurp(dir / "negtransfer.csv"));
    CHECK(std::filesystem::exists(dir / "single_aug.csv"));
    CHECK_FALSE(std::filesystem::exists(dir / "report.csv.tmp"));
}
