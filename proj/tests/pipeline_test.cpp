#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>

#include "nvmag/pipeline.hpp"

using namespace nvmag;
using cones::NvLabel;
using pipeline::json;
namespace fs = std::filesystem;

namespace {

const char* kMeasured123 = R"({
  "monte_carlo": {"n_samples": 4000, "seed": 42},
  "inputs": {"measurements": [
    {"axis": "NV1", "theta_deg": 13.44, "sigma_deg": 0.15},
    {"axis": "NV2", "theta_deg": 62.924, "sigma_deg": 0.005},
    {"axis": "NV3", "theta_deg": 66.612, "sigma_deg": 0.006}]}
})";

std::string error_of(const std::string& text) {
  try {
    pipeline::parse_config(text, "cfg.json");
  } catch (const std::exception& e) {
    return e.what();
  }
  return {};
}

fs::path scratch(const std::string& name) {
  auto p = fs::temp_directory_path() / ("nvmag_pipeline_" + name);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

}  // namespace

TEST(Config, DefaultsAndCanonicalRoundTrip) {
  const auto cfg = pipeline::parse_config(kMeasured123, "cfg.json");
  EXPECT_EQ(cfg.monte_carlo.n_samples, 4000u);
  EXPECT_DOUBLE_EQ(cfg.monte_carlo.coverage, 0.997);
  EXPECT_DOUBLE_EQ(cfg.constants.zfs_D, 2870.0);
  ASSERT_EQ(cfg.measurements.size(), 3u);
  const auto again = pipeline::config_from_json(pipeline::to_json(cfg));
  EXPECT_EQ(pipeline::to_json(again), pipeline::to_json(cfg));
  EXPECT_EQ(pipeline::config_hash(again), pipeline::config_hash(cfg));
  EXPECT_EQ(pipeline::config_hash(cfg).size(), 16u);
}

TEST(Config, SyntaxErrorReportsLineAndColumn) {
  const auto msg = error_of("{\n  \"monte_carlo\": {\n    \"seed\": ,\n  }\n}");
  EXPECT_NE(msg.find("cfg.json:3:"), std::string::npos) << msg;
}

TEST(Config, RejectsUnknownKeysWithPath) {
  EXPECT_NE(error_of(R"({"monte_carlo": {"sead": 1}})").find("monte_carlo.sead"), std::string::npos);
  EXPECT_NE(error_of(R"({"extra": 1})").find("extra"), std::string::npos);
}

TEST(Config, RejectsBadValues) {
  EXPECT_FALSE(error_of(R"({"monte_carlo": {"seed": -1}})").empty());
  EXPECT_FALSE(error_of(R"({"monte_carlo": {"coverage": "high"}})").empty());
  EXPECT_FALSE(error_of(R"({"inputs": {"measurements": [{"axis": "NV7", "theta_deg": 1, "sigma_deg": 0.1}]}})").empty());
  EXPECT_FALSE(error_of(R"({"format_version": 2})").empty());
}

TEST(Config, ValidateCatchesInconsistencies) {
  auto cfg = pipeline::parse_config(kMeasured123, "cfg.json");
  cfg.monte_carlo.coverage = 0.3;
  EXPECT_THROW(cfg.validate(), ConfigError);
  cfg = pipeline::parse_config(kMeasured123, "cfg.json");
  cfg.measurements.push_back(cfg.measurements.front());
  EXPECT_THROW(cfg.validate(), ConfigError);
  cfg = pipeline::parse_config(kMeasured123, "cfg.json");
  cfg.spectra.push_back({NvLabel::NV4, "/nonexistent/a.csv", "/nonexistent/b.csv", std::nullopt});
  EXPECT_THROW(cfg.validate(), ConfigError);
}

TEST(Reconstruct, MeasuredInputs) {
  const auto r = pipeline::run_reconstruct(pipeline::parse_config(kMeasured123, "cfg.json"));
  EXPECT_NEAR(r.report.combined.ellipse.center_mu.x(), -33.45, 0.5);
  EXPECT_NEAR(r.report.combined.ellipse.center_mu.y(), 116.50, 0.5);
  ASSERT_EQ(r.report.subsets.size(), 3u);
  EXPECT_EQ(r.report.subsets[0].label, "NV1-NV2");
  EXPECT_EQ(r.clouds.size(), 3u);
}

TEST(Reconstruct, ReportJsonIsLossless) {
  const auto r = pipeline::run_reconstruct(pipeline::parse_config(kMeasured123, "cfg.json"));
  const auto j = pipeline::to_json(r.report);
  const auto back = pipeline::report_from_json(json::parse(j.dump()));
  EXPECT_EQ(pipeline::to_json(back).dump(), j.dump());
  EXPECT_EQ(back.combined.ellipse.covariance_sigma, r.report.combined.ellipse.covariance_sigma);
}

TEST(Reconstruct, EmbeddedConfigReproducesReport) {
  const auto first = pipeline::run_reconstruct(pipeline::parse_config(kMeasured123, "cfg.json"));
  const auto j = pipeline::to_json(first.report);
  const auto cfg = pipeline::config_from_json(j.at("config"));
  const auto second = pipeline::run_reconstruct(cfg, 3);
  EXPECT_EQ(pipeline::to_json(second.report).dump(), j.dump());
}

TEST(Reconstruct, TwoAxesIsAmbiguous) {
  auto cfg = pipeline::parse_config(kMeasured123, "cfg.json");
  cfg.measurements.pop_back();
  try {
    pipeline::run_reconstruct(cfg);
    FAIL() << "expected AmbiguousSolution";
  } catch (const AmbiguousSolution& e) {
    EXPECT_NE(std::string(e.what()).find("2 candidate"), std::string::npos) << e.what();
    EXPECT_EQ(pipeline::exit_code_for(e), pipeline::kAmbiguous);
  }
}

TEST(Reconstruct, SubsetSelectsAxes) {
  auto cfg = pipeline::parse_config(kMeasured123, "cfg.json");
  cfg.measurements.push_back({NvLabel::NV4, 83.21, 0.13});
  cfg.subset = {NvLabel::NV1, NvLabel::NV2, NvLabel::NV4};
  const auto r = pipeline::run_reconstruct(cfg);
  EXPECT_EQ(r.report.subsets[2].label, "NV2-NV4");
  EXPECT_NEAR(r.report.combined.ellipse.center_mu.x(), -34.14, 1.5);
  EXPECT_NEAR(r.report.combined.ellipse.center_mu.y(), 115.95, 1.5);
}

TEST(Reconstruct, SpectraPathRoundTrip) {
  const auto dir = scratch("spectra");
  pipeline::PipelineConfig cfg;
  cfg.monte_carlo.n_samples = 1000;
  const Eigen::Vector3d b = 180.0 * cones::from_spherical(40.0, 70.0);
  const auto rows = pipeline::forward_table(cfg, b);
  std::vector<std::pair<double, double>> mI0;
  for (const auto& row : rows) {
    const auto [minus, plus] = pipeline::forward_triplets(cfg, b.norm(), row.theta_deg);
    const auto name = cones::to_string(row.axis);
    spectra::write_spectrum_csv((dir / (name + "_m.csv")).string(), pipeline::triplet_spectrum(minus, 0.25, 0.0, 0));
    spectra::write_spectrum_csv((dir / (name + "_p.csv")).string(), pipeline::triplet_spectrum(plus, 0.25, 0.0, 0));
    cfg.spectra.push_back({row.axis, (dir / (name + "_m.csv")).string(), (dir / (name + "_p.csv")).string(),
                           std::nullopt});
    mI0.emplace_back(minus[1], plus[1]);
  }
  const auto r = pipeline::run_reconstruct(cfg);
  for (size_t k = 0; k < rows.size(); ++k) {
    EXPECT_NEAR(r.report.measurements[k].theta_deg, rows[k].theta_deg, 1e-3);
    EXPECT_NEAR(*r.report.measurements[k].field_gauss, b.norm(), 1e-3);
    // The bare closed form is off by the hyperfine shift of the mI = 0 lines.
    const auto bare = cones::extract_field_and_tilt(mI0[k].first, mI0[k].second, cfg.constants);
    EXPECT_NEAR(bare.theta_deg, rows[k].theta_deg, 0.05);
  }
  // Sign-symmetric: the direction is only known up to +-.
  const double miss = std::min(cones::angle_deg(r.report.field.direction, b), cones::angle_deg(-r.report.field.direction, b));
  EXPECT_LT(miss, 1e-3);
}

TEST(Reconstruct, CloudCsvHasHeaderAndAllPoints) {
  const auto r = pipeline::run_reconstruct(pipeline::parse_config(kMeasured123, "cfg.json"));
  const auto path = (scratch("cloud") / "c.csv").string();
  pipeline::write_cloud_csv(path, r.clouds[0]);
  std::ifstream in(path);
  std::string line;
  std::getline(in, line);
  EXPECT_EQ(line, pipeline::kCloudHeader);
  std::size_t rows = 0;
  while (std::getline(in, line)) ++rows;
  EXPECT_EQ(rows, r.clouds[0].points.size());
}

TEST(ExitCodes, Mapping) {
  EXPECT_EQ(pipeline::exit_code_for(FitError("x", 1.0)), pipeline::kFitFailure);
  EXPECT_EQ(pipeline::exit_code_for(InconsistentFrequencies("x")), pipeline::kFitFailure);
  EXPECT_EQ(pipeline::exit_code_for(InconsistentCones("x")), pipeline::kInconsistentCones);
  EXPECT_EQ(pipeline::exit_code_for(DegenerateEllipse("x")), pipeline::kDegenerateEllipse);
  EXPECT_EQ(pipeline::exit_code_for(ConfigError("x")), pipeline::kUsage);
  EXPECT_EQ(pipeline::exit_code_for(std::runtime_error("x")), pipeline::kInternal);
}
