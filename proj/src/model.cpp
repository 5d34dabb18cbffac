#include "vmsvae/model.hpp"

#include <cstring>
#include <fstream>

#include "json.hpp"

#include "vmsvae/digest.hpp"

namespace vmsvae {

using nlohmann::json;

void ModelConfig::validate() const {
    if (m < 1 || n < m) throw ValidationError("model sizes must satisfy n >= m >= 1");
    if (!(l2_coefficient > 0.0)) throw ValidationError("l2_coefficient must be positive");
    if (!(learning_rate > 0.0)) throw ValidationError("learning_rate must be positive");
    if (batch_size < 1) throw ValidationError("batch_size must be positive");
    if (steps_per_epoch < 1) throw ValidationError("steps_per_epoch must be positive");
}

const char* recon_mode_name(ReconMode mode) {
    return mode == ReconMode::kLogLikelihood ? "log-likelihood" : "l1";
}

ReconMode recon_mode_from_name(const std::string& name) {
    if (name == "log-likelihood") return ReconMode::kLogLikelihood;
    if (name == "l1") return ReconMode::kL1;
    throw ValidationError("unknown recon_mode: " + name + " (expected log-likelihood or l1)");
}

namespace {

Backbone make_backbone(const ModelConfig& cfg) {
    if (cfg.backbone_weights.empty()) return Backbone::seeded_pyramid(cfg.seed);
    return Backbone::from_file(cfg.backbone_weights);
}

}  // namespace

ModelState::ModelState(const ModelConfig& cfg)
    : ModelState(cfg, make_backbone(cfg)) {}

ModelState::ModelState(const ModelConfig& cfg, Backbone bb)
    : config(cfg), backbone(std::move(bb)), net(VaeShape::standard(cfg.n, cfg.m), cfg.seed) {
    config.validate();
}

std::pair<std::vector<float>, std::vector<float>> encode(ModelState& state,
                                                         const std::vector<uint8_t>& rgb) {
    std::vector<float> feats = state.backbone.features(rgb);
    std::vector<float> mu, logvar;
    state.net.encode(feats, 1, mu, logvar);
    return {std::move(mu), std::move(logvar)};
}

std::vector<float> reparameterize(const std::vector<float>& mu, const std::vector<float>& logvar,
                                  const std::vector<float>& noise) {
    if (mu.size() != logvar.size() || mu.size() != noise.size()) {
        throw ValidationError("reparameterize inputs differ in length");
    }
    std::vector<float> z(mu.size());
    for (size_t i = 0; i < mu.size(); ++i) {
        z[i] = mu[i] + std::exp(logvar[i] / 2.f) * noise[i];
    }
    return z;
}

namespace {

VmsMap map_from_planes(const std::vector<float>& planes) {
    VmsMap m;
    m.true_channel.assign(planes.begin(), planes.begin() + kMapCells);
    m.false_channel.assign(planes.begin() + kMapCells, planes.end());
    return m;
}

}  // namespace

VmsMap decode(ModelState& state, const std::vector<float>& z) {
    if (z.size() != state.config.m) {
        throw ValidationError("latent vector length does not match m");
    }
    std::vector<float> maps;
    state.net.decode(z, 1, maps);
    return map_from_planes(maps);
}

VmsMap predict_vms(ModelState& state, const std::vector<uint8_t>& rgb) {
    std::vector<float> feats = state.backbone.features(rgb);
    std::vector<float> maps;
    state.net.infer(feats, 1, maps);
    return map_from_planes(maps);
}

std::string trainable_digest(ModelState& state) {
    Sha256 h;
    for (const auto& pr : state.net.params()) {
        h.update(pr.name.data(), pr.name.size());
        h.update_vector(pr.p->w);
    }
    for (const auto& br : state.net.buffers()) {
        h.update(br.name.data(), br.name.size());
        h.update_vector(*br.v);
    }
    return h.hex();
}

namespace {

constexpr char kMagic[] = "VMSC1\n";

}  // namespace

void save_model(ModelState& state, const std::string& path) {
    const ModelConfig& cfg = state.config;
    json head;
    head["format"] = "vmsc1";
    head["n"] = cfg.n;
    head["m"] = cfg.m;
    head["recon_mode"] = recon_mode_name(cfg.recon_mode);
    head["l2_coefficient"] = cfg.l2_coefficient;
    head["learning_rate"] = cfg.learning_rate;
    head["batch_size"] = cfg.batch_size;
    head["epochs"] = cfg.epochs;
    head["steps_per_epoch"] = cfg.steps_per_epoch;
    head["seed"] = cfg.seed;
    head["backbone"] = {{"arch", state.backbone.arch()},
                        {"seed", state.backbone.seed()},
                        {"weights", cfg.backbone_weights},
                        {"digest", state.backbone.digest()}};
    json params = json::array();
    for (auto& pr : state.net.params()) {
        params.push_back({{"name", pr.name}, {"count", pr.p->size()}});
    }
    head["params"] = params;
    json buffers = json::array();
    for (auto& br : state.net.buffers()) {
        buffers.push_back({{"name", br.name}, {"count", br.v->size()}});
    }
    head["buffers"] = buffers;
    std::string head_str = head.dump();

    std::ofstream f(path, std::ios::binary);
    if (!f) throw RuntimeFault("cannot write checkpoint: " + path);
    f.write(kMagic, 6);
    uint32_t len = static_cast<uint32_t>(head_str.size());
    f.write(reinterpret_cast<const char*>(&len), sizeof(len));
    f.write(head_str.data(), static_cast<std::streamsize>(head_str.size()));
    for (auto& pr : state.net.params()) {
        f.write(reinterpret_cast<const char*>(pr.p->w.data()),
                static_cast<std::streamsize>(pr.p->w.size() * sizeof(float)));
    }
    for (auto& br : state.net.buffers()) {
        f.write(reinterpret_cast<const char*>(br.v->data()),
                static_cast<std::streamsize>(br.v->size() * sizeof(float)));
    }
    if (!f) throw RuntimeFault("failed writing checkpoint: " + path);

    json sidecar;
    sidecar["n"] = cfg.n;
    sidecar["m"] = cfg.m;
    sidecar["recon_mode"] = recon_mode_name(cfg.recon_mode);
    sidecar["seed"] = cfg.seed;
    sidecar["backbone_digest"] = state.backbone.digest();
    std::ofstream sf(path + ".json");
    if (!sf) throw RuntimeFault("cannot write checkpoint manifest: " + path + ".json");
    sf << sidecar.dump(2) << "\n";
}

ModelState load_model(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw RuntimeFault("cannot open checkpoint: " + path);
    char magic[6];
    f.read(magic, 6);
    if (!f || std::memcmp(magic, kMagic, 6) != 0) {
        throw RuntimeFault("not a VMSC1 checkpoint: " + path);
    }
    uint32_t len = 0;
    f.read(reinterpret_cast<char*>(&len), sizeof(len));
    std::string head_str(len, '\0');
    f.read(head_str.data(), len);
    if (!f) throw RuntimeFault("checkpoint is truncated: " + path);
    json head;
    try {
        head = json::parse(head_str);
    } catch (const json::exception& e) {
        throw RuntimeFault(std::string("corrupt checkpoint header: ") + e.what());
    }
    if (head.value("format", "") != "vmsc1") {
        throw RuntimeFault("checkpoint format version mismatch");
    }

    ModelConfig cfg;
    cfg.n = head.at("n").get<size_t>();
    cfg.m = head.at("m").get<size_t>();
    cfg.recon_mode = recon_mode_from_name(head.at("recon_mode").get<std::string>());
    cfg.l2_coefficient = head.at("l2_coefficient").get<double>();
    cfg.learning_rate = head.at("learning_rate").get<double>();
    cfg.batch_size = head.at("batch_size").get<size_t>();
    cfg.epochs = head.at("epochs").get<size_t>();
    cfg.steps_per_epoch = head.at("steps_per_epoch").get<size_t>();
    cfg.seed = head.at("seed").get<uint64_t>();
    cfg.backbone_weights = head.at("backbone").at("weights").get<std::string>();

    Backbone bb = cfg.backbone_weights.empty()
                      ? Backbone::seeded_pyramid(head.at("backbone").at("seed").get<uint64_t>())
                      : Backbone::from_file(cfg.backbone_weights);
    std::string recorded_digest = head.at("backbone").at("digest").get<std::string>();
    if (bb.digest() != recorded_digest) {
        throw RuntimeFault("backbone digest mismatch: weights differ from checkpoint");
    }

    ModelState state(cfg, std::move(bb));
    auto params = state.net.params();
    const json& plist = head.at("params");
    if (plist.size() != params.size()) {
        throw RuntimeFault("checkpoint parameter list does not match the architecture");
    }
    for (size_t i = 0; i < params.size(); ++i) {
        if (plist.at(i).at("name").get<std::string>() != params[i].name ||
            plist.at(i).at("count").get<size_t>() != params[i].p->size()) {
            throw RuntimeFault("checkpoint weights do not match the declared architecture");
        }
        f.read(reinterpret_cast<char*>(params[i].p->w.data()),
               static_cast<std::streamsize>(params[i].p->size() * sizeof(float)));
    }
    auto buffers = state.net.buffers();
    const json& blist = head.at("buffers");
    if (blist.size() != buffers.size()) {
        throw RuntimeFault("checkpoint buffer list does not match the architecture");
    }
    for (size_t i = 0; i < buffers.size(); ++i) {
        if (blist.at(i).at("name").get<std::string>() != buffers[i].name ||
            blist.at(i).at("count").get<size_t>() != buffers[i].v->size()) {
            throw RuntimeFault("checkpoint buffers do not match the declared architecture");
        }
        f.read(reinterpret_cast<char*>(buffers[i].v->data()),
               static_cast<std::streamsize>(buffers[i].v->size() * sizeof(float)));
    }
    if (!f) throw RuntimeFault("checkpoint is truncated: " + path);
    f.peek();
    if (!f.eof()) throw RuntimeFault("checkpoint has trailing bytes: " + path);

    std::ifstream sf(path + ".json");
    if (!sf) throw RuntimeFault("missing checkpoint manifest: " + path + ".json");
    json sidecar;
    try {
        sidecar = json::parse(sf);
    } catch (const json::exception& e) {
        throw RuntimeFault(std::string("corrupt checkpoint manifest: ") + e.what());
    }
    if (sidecar.at("n").get<size_t>() != cfg.n || sidecar.at("m").get<size_t>() != cfg.m ||
        sidecar.at("recon_mode").get<std::string>() != recon_mode_name(cfg.recon_mode) ||
        sidecar.at("backbone_digest").get<std::string>() != recorded_digest) {
        throw RuntimeFault("checkpoint manifest disagrees with the weight container");
    }
    return state;
}

}  // namespace vmsvae
