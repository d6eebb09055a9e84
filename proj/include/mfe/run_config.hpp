#pragma once

#include <array>
#include <string>

#include "mfe/classifier.hpp"
#include "mfe/sampler.hpp"
#include "mfe/seg_net.hpp"
#include "mfe/seg_train.hpp"
#include "mfe/synthgen.hpp"
#include "mfe/tile_infer.hpp"

namespace mfe {

struct SplitConfig {
    std::array<double, 3> fractions{0.6, 0.2, 0.2};
    uint64_t seed = 0;
};

// Composite configuration for a pipeline run. One structured JSON file with
// per-command flag overrides; flags win.
struct RunConfig {
    std::string run_id = "run";
    std::string data_dir;      // default: $MFE_DATA_DIR/<run_id>, else <out_dir>/<run_id>/data
    std::string out_dir = "runs";
    GenConfig gen;
    SplitConfig split;
    SamplerConfig sampler;
    SegModelConfig seg_model;
    TrainConfig train;
    TileConfig tile;
    ClfConfig clf;

    std::string run_dir() const;
    std::string resolved_data_dir() const;
    // master seed override: derives per-stage seeds
    void override_seed(uint64_t seed);
    void validate() const;
};

// Throws std::runtime_error naming the offending field on schema violations.
RunConfig load_run_config(const std::string& path);
std::string run_config_to_json(const RunConfig& cfg);
void save_run_config(const std::string& path, const RunConfig& cfg);

}  // namespace mfe
