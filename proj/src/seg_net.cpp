#include "mfe/seg_net.hpp"

#include <cmath>
#include <fstream>
#include <stdexcept>

#include <json.hpp>

namespace mfe {

using nn::Graph;

std::string to_string(SegArch a) { return a == SegArch::unet ? "unet" : "eunet"; }

SegArch seg_arch_from_string(const std::string& s) {
    if (s == "unet") return SegArch::unet;
    if (s == "eunet") return SegArch::eunet;
    throw std::runtime_error("unknown segmentation arch '" + s + "'");
}

int SegModelConfig::scaled_input_size() const {
    const int raw = static_cast<int>(std::lround(input_size * resolution_mult));
    return std::max(32, ((raw + 16) / 32) * 32);
}

void SegModelConfig::validate() const {
    auto bad = [](const std::string& field, const std::string& why) {
        throw std::invalid_argument("seg model config: field " + field + ": " + why);
    };
    if (num_classes < 2) bad("num_classes", "must be >= 2");
    if (input_size % 32 != 0) bad("input_size", "must be a multiple of 32");
    if (arch == SegArch::unet) {
        if (base_width < 1) bad("base_width", "must be positive");
        if (depth_stages < 1 || depth_stages > 6) bad("depth_stages", "must be in 1..6");
        if (input_size % (1 << depth_stages) != 0)
            bad("input_size", "must be divisible by 2^depth_stages");
    } else {
        if (width_mult <= 0 || depth_mult <= 0 || resolution_mult <= 0)
            bad("width_mult/depth_mult/resolution_mult", "must be positive");
        if (depth_stages != 5) bad("depth_stages", "eunet uses exactly 5 resolution stages");
    }
    if (final_activation == FinalAct::sigmoid && num_classes != 2)
        bad("final_activation", "sigmoid head is the binary single-map variant");
}

int SegModel::out_channels() const {
    return cfg_.final_activation == FinalAct::sigmoid ? 1 : cfg_.num_classes;
}

SegModel::SegModel(const SegModelConfig& cfg, uint64_t init_seed) : cfg_(cfg) {
    cfg_.validate();
    if (cfg_.arch == SegArch::unet) build_unet(init_seed);
    else build_eunet(init_seed);
}

namespace {

int conv_block(Graph& g, int in_node, int cin, int cout, Rng& rng, bool bn, bool silu) {
    int n = g.add(std::make_unique<nn::Conv2d>(cin, cout, 3, 1, 1, !bn, rng), {in_node});
    if (bn) n = g.add(std::make_unique<nn::BatchNorm>(cout), {n});
    if (silu) n = g.add(std::make_unique<nn::SiLU>(), {n});
    else n = g.add(std::make_unique<nn::ReLU>(), {n});
    return n;
}

// width rounding for the scaled encoder: multiples of 4, floor 8
int scale_width(int w, double mult) {
    const int scaled = static_cast<int>(std::lround(w * mult / 4.0)) * 4;
    return std::max(8, scaled);
}

int scale_depth(int d, double mult) {
    return std::max(1, static_cast<int>(std::ceil(d * mult)));
}

// inverted-bottleneck block: 1x1 expand -> depthwise 3x3 -> 1x1 project,
// batch-normalized, SiLU on the expansion stages, residual when shapes match
int mbconv(Graph& g, int in_node, int cin, int cout, int stride, int expand, Rng& rng) {
    const int mid = cin * expand;
    int n = in_node;
    if (expand != 1) {
        n = g.add(std::make_unique<nn::Conv2d>(cin, mid, 1, 1, 0, false, rng), {n});
        n = g.add(std::make_unique<nn::BatchNorm>(mid), {n});
        n = g.add(std::make_unique<nn::SiLU>(), {n});
    }
    n = g.add(std::make_unique<nn::DepthwiseConv3x3>(mid, stride, rng), {n});
    n = g.add(std::make_unique<nn::BatchNorm>(mid), {n});
    n = g.add(std::make_unique<nn::SiLU>(), {n});
    n = g.add(std::make_unique<nn::Conv2d>(mid, cout, 1, 1, 0, false, rng), {n});
    n = g.add(std::make_unique<nn::BatchNorm>(cout), {n});
    if (stride == 1 && cin == cout) n = g.add(std::make_unique<nn::Add>(), {n, in_node});
    return n;
}

}  // namespace

void SegModel::build_unet(uint64_t seed) {
    Rng rng(derive_seed(seed, 0x0u));
    Graph& g = graph_;
    const int d = cfg_.depth_stages;
    const int w0 = cfg_.base_width;

    std::vector<int> skips;
    int node = 0;
    int cin = 3;
    for (int level = 0; level < d; ++level) {
        const int w = w0 << level;
        node = conv_block(g, node, cin, w, rng, false, false);
        node = conv_block(g, node, w, w, rng, false, false);
        skips.push_back(node);
        node = g.add(std::make_unique<nn::MaxPool2x2>(), {node});
        cin = w;
    }
    const int wb = w0 << d;
    node = conv_block(g, node, cin, wb, rng, false, false);
    node = conv_block(g, node, wb, wb, rng, false, false);

    for (int level = d - 1; level >= 0; --level) {
        const int w = w0 << level;
        node = g.add(std::make_unique<nn::ConvTranspose2x2>(w * 2, w, rng), {node});
        node = g.add(std::make_unique<nn::Concat>(), {node, skips[level]});
        node = conv_block(g, node, w * 2, w, rng, false, false);
        node = conv_block(g, node, w, w, rng, false, false);
    }
    node = g.add(std::make_unique<nn::Conv2d>(w0, out_channels(), 1, 1, 0, true, rng), {node});
    if (cfg_.final_activation == FinalAct::softmax)
        g.add(std::make_unique<nn::Softmax>(), {node});
    else
        g.add(std::make_unique<nn::Sigmoid>(), {node});
}

void SegModel::build_eunet(uint64_t seed) {
    Rng rng(derive_seed(seed, 0x1u));
    Graph& g = graph_;

    // compound-scalable encoder: stem + 5 stages of inverted-bottleneck
    // blocks at resolutions 1/2 .. 1/32
    const int base_widths[5] = {16, 24, 40, 80, 112};
    const int base_depths[5] = {1, 2, 2, 3, 3};
    int widths[5], depths[5];
    for (int i = 0; i < 5; ++i) {
        widths[i] = scale_width(base_widths[i], cfg_.width_mult);
        depths[i] = scale_depth(base_depths[i], cfg_.depth_mult);
    }

    int node = 0;
    // stem: 3x3 stride-2 conv to 1/2 resolution
    node = g.add(std::make_unique<nn::Conv2d>(3, widths[0], 3, 2, 1, false, rng), {node});
    node = g.add(std::make_unique<nn::BatchNorm>(widths[0]), {node});
    node = g.add(std::make_unique<nn::SiLU>(), {node});

    std::vector<int> skips;  // encoder taps at 1/2, 1/4, 1/8, 1/16
    int cin = widths[0];
    for (int stage = 0; stage < 5; ++stage) {
        const int stride = stage == 0 ? 1 : 2;
        const int expand = stage == 0 ? 1 : 4;
        node = mbconv(g, node, cin, widths[stage], stride, expand, rng);
        for (int blk = 1; blk < depths[stage]; ++blk)
            node = mbconv(g, node, widths[stage], widths[stage], 1, expand, rng);
        cin = widths[stage];
        if (stage < 4) skips.push_back(node);
    }

    // decoder: exactly 5 modules of up-convolution -> batch norm -> 3x3 conv;
    // widths halve per stage
    int dec_w = std::max(8, widths[4] / 2);
    for (int module = 0; module < 5; ++module) {
        node = g.add(std::make_unique<nn::ConvTranspose2x2>(cin, dec_w, rng), {node});
        node = g.add(std::make_unique<nn::BatchNorm>(dec_w), {node});
        node = g.add(std::make_unique<nn::ReLU>(), {node});
        int conv_in = dec_w;
        if (module < 4) {  // skip connection from the matching encoder stage
            const int skip = skips[3 - module];
            node = g.add(std::make_unique<nn::Concat>(), {node, skip});
            conv_in = dec_w + widths[3 - module];
        }
        node = g.add(std::make_unique<nn::Conv2d>(conv_in, dec_w, 3, 1, 1, false, rng), {node});
        node = g.add(std::make_unique<nn::ReLU>(), {node});
        cin = dec_w;
        dec_w = std::max(8, dec_w / 2);
    }

    node = g.add(std::make_unique<nn::Conv2d>(cin, out_channels(), 1, 1, 0, true, rng), {node});
    if (cfg_.final_activation == FinalAct::softmax)
        g.add(std::make_unique<nn::Softmax>(), {node});
    else
        g.add(std::make_unique<nn::Sigmoid>(), {node});
}

std::unique_ptr<SegModel> build_unet(const SegModelConfig& cfg, uint64_t seed) {
    if (cfg.arch != SegArch::unet)
        throw std::invalid_argument("build_unet: config arch is not unet");
    return std::make_unique<SegModel>(cfg, seed);
}

std::unique_ptr<SegModel> build_eunet(const SegModelConfig& cfg, uint64_t seed) {
    if (cfg.arch != SegArch::eunet)
        throw std::invalid_argument("build_eunet: config arch is not eunet");
    return std::make_unique<SegModel>(cfg, seed);
}

std::unique_ptr<SegModel> build_seg_model(const SegModelConfig& cfg, uint64_t seed) {
    return std::make_unique<SegModel>(cfg, seed);
}

// ------------------------------------------------------------ checkpoints

namespace detail {

void write_param_blob(std::ostream& os, Graph& g) {
    auto write_vec = [&](const std::vector<float>& v) {
        const uint64_t n = v.size();
        os.write(reinterpret_cast<const char*>(&n), sizeof n);
        os.write(reinterpret_cast<const char*>(v.data()),
                 static_cast<std::streamsize>(n * sizeof(float)));
    };
    const auto params = g.params();
    const auto state = g.state();
    const uint64_t np = params.size(), ns = state.size();
    os.write(reinterpret_cast<const char*>(&np), sizeof np);
    for (auto* p : params) write_vec(p->w);
    os.write(reinterpret_cast<const char*>(&ns), sizeof ns);
    for (auto* s : state) write_vec(*s);
}

void read_param_blob(std::istream& is, Graph& g, const std::string& path) {
    auto read_vec = [&](std::vector<float>& v) {
        uint64_t n = 0;
        is.read(reinterpret_cast<char*>(&n), sizeof n);
        if (!is || n != v.size())
            throw std::runtime_error("checkpoint '" + path + "': parameter size mismatch");
        is.read(reinterpret_cast<char*>(v.data()),
                static_cast<std::streamsize>(n * sizeof(float)));
        if (!is) throw std::runtime_error("checkpoint '" + path + "': truncated");
    };
    const auto params = g.params();
    const auto state = g.state();
    uint64_t np = 0, ns = 0;
    is.read(reinterpret_cast<char*>(&np), sizeof np);
    if (np != params.size())
        throw std::runtime_error("checkpoint '" + path + "': parameter block count mismatch");
    for (auto* p : params) read_vec(p->w);
    is.read(reinterpret_cast<char*>(&ns), sizeof ns);
    if (ns != state.size())
        throw std::runtime_error("checkpoint '" + path + "': state block count mismatch");
    for (auto* s : state) read_vec(*s);
}

}  // namespace detail

namespace {

constexpr char kMagic[] = "MFESEGCKPT1\n";

nlohmann::json config_json(const SegModelConfig& c) {
    return {{"arch", to_string(c.arch)},
            {"num_classes", c.num_classes},
            {"input_size", c.input_size},
            {"base_width", c.base_width},
            {"depth_stages", c.depth_stages},
            {"width_mult", c.width_mult},
            {"depth_mult", c.depth_mult},
            {"resolution_mult", c.resolution_mult},
            {"final_activation", c.final_activation == FinalAct::softmax ? "softmax" : "sigmoid"}};
}

SegModelConfig config_from_json(const nlohmann::json& j) {
    SegModelConfig c;
    c.arch = seg_arch_from_string(j.at("arch").get<std::string>());
    c.num_classes = j.at("num_classes").get<int>();
    c.input_size = j.at("input_size").get<int>();
    c.base_width = j.at("base_width").get<int>();
    c.depth_stages = j.at("depth_stages").get<int>();
    c.width_mult = j.at("width_mult").get<double>();
    c.depth_mult = j.at("depth_mult").get<double>();
    c.resolution_mult = j.at("resolution_mult").get<double>();
    c.final_activation = j.at("final_activation").get<std::string>() == "softmax"
                             ? FinalAct::softmax
                             : FinalAct::sigmoid;
    return c;
}

}  // namespace

void save_checkpoint(const std::string& path, SegModel& model, const CheckpointMeta& meta) {
    std::ofstream os(path, std::ios::binary | std::ios::trunc);
    if (!os) throw std::runtime_error("checkpoint '" + path + "': cannot open for writing");
    os.write(kMagic, sizeof(kMagic) - 1);
    nlohmann::json header;
    header["config"] = config_json(model.config());
    header["step"] = meta.step;
    header["epoch"] = meta.epoch;
    header["best_metric"] = meta.best_metric;
    const std::string hs = header.dump();
    const uint64_t hlen = hs.size();
    os.write(reinterpret_cast<const char*>(&hlen), sizeof hlen);
    os.write(hs.data(), static_cast<std::streamsize>(hs.size()));
    detail::write_param_blob(os, model.graph());
    if (!os) throw std::runtime_error("checkpoint '" + path + "': write failed");
}

namespace {

nlohmann::json read_header(std::istream& is, const std::string& path) {
    char magic[sizeof(kMagic) - 1];
    is.read(magic, sizeof magic);
    if (!is || std::string(magic, sizeof magic) != std::string(kMagic, sizeof magic))
        throw std::runtime_error("checkpoint '" + path + "': bad magic");
    uint64_t hlen = 0;
    is.read(reinterpret_cast<char*>(&hlen), sizeof hlen);
    std::string hs(hlen, '\0');
    is.read(hs.data(), static_cast<std::streamsize>(hlen));
    if (!is) throw std::runtime_error("checkpoint '" + path + "': truncated header");
    return nlohmann::json::parse(hs);
}

void fill_meta(const nlohmann::json& header, CheckpointMeta* meta) {
    if (!meta) return;
    meta->step = header.at("step").get<int64_t>();
    meta->epoch = header.at("epoch").get<int>();
    meta->best_metric = header.at("best_metric").get<double>();
}

}  // namespace

std::unique_ptr<SegModel> load_checkpoint(const std::string& path, CheckpointMeta* meta) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw std::runtime_error("checkpoint '" + path + "': cannot open");
    const nlohmann::json header = read_header(is, path);
    auto model = std::make_unique<SegModel>(config_from_json(header.at("config")), 0);
    detail::read_param_blob(is, model->graph(), path);
    fill_meta(header, meta);
    return model;
}

void load_checkpoint_into(const std::string& path, SegModel& model, CheckpointMeta* meta) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw std::runtime_error("checkpoint '" + path + "': cannot open");
    const nlohmann::json header = read_header(is, path);
    const SegModelConfig stored = config_from_json(header.at("config"));
    const SegModelConfig& have = model.config();
    if (stored.arch != have.arch || stored.num_classes != have.num_classes ||
        stored.base_width != have.base_width || stored.depth_stages != have.depth_stages ||
        stored.width_mult != have.width_mult || stored.depth_mult != have.depth_mult ||
        stored.final_activation != have.final_activation)
        throw std::runtime_error("checkpoint '" + path +
                                 "': config incompatible with the target model");
    detail::read_param_blob(is, model.graph(), path);
    fill_meta(header, meta);
}

}  // namespace mfe
