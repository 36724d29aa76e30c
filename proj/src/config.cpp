// Copyright (c) 2026, The neuroalign authors
// SPDX-License-Identifier: Apache-2.0

#include "neuroalign/config.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <functional>
#include <sstream>
#include <vector>

#include <CLI11.hpp>

#include "neuroalign/binary_io.hpp"
#include "neuroalign/error.hpp"

namespace neuroalign {

namespace {

std::string format_double(double v) {
    char buf[64];
    const auto res = std::to_chars(buf, buf + sizeof buf, v);
    return std::string(buf, res.ptr);
}

std::string trim(std::string_view s) {
    const auto b = s.find_first_not_of(" \t\r\n");
    if (b == std::string_view::npos) {
        return {};
    }
    const auto e = s.find_last_not_of(" \t\r\n");
    std::string out(s.substr(b, e - b + 1));
    if (out.size() >= 2 && (out.front() == '"' || out.front() == '\'') && out.back() == out.front()) {
        out = out.substr(1, out.size() - 2);
    }
    return out;
}

[[noreturn]] void bad_value(std::string_view key, std::string_view value, std::string_view expected) {
    throw ConfigError("bad value '" + std::string(value) + "' for " + std::string(key) + " (expected " +
                      std::string(expected) + ")");
}

double parse_double(std::string_view key, std::string_view text) {
    const auto s = trim(text);
    double v = 0;
    const auto res = std::from_chars(s.data(), s.data() + s.size(), v);
    if (res.ec != std::errc() || res.ptr != s.data() + s.size() || !std::isfinite(v)) {
        bad_value(key, text, "a finite number");
    }
    return v;
}

std::uint64_t parse_u64(std::string_view key, std::string_view text) {
    const auto s = trim(text);
    std::uint64_t v = 0;
    const auto res = std::from_chars(s.data(), s.data() + s.size(), v);
    if (res.ec != std::errc() || res.ptr != s.data() + s.size() || s.empty()) {
        bad_value(key, text, "a non-negative integer");
    }
    return v;
}

bool parse_bool(std::string_view key, std::string_view text) {
    auto s = trim(text);
    std::transform(s.begin(), s.end(), s.begin(), [](unsigned char c) { return std::tolower(c); });
    if (s == "true" || s == "on" || s == "yes" || s == "1") {
        return true;
    }
    if (s == "false" || s == "off" || s == "no" || s == "0") {
        return false;
    }
    bad_value(key, text, "true or false");
}

struct Field {
    std::string key;
    std::function<std::string(const RunConfig&)> get;
    std::function<void(RunConfig&, std::string_view)> set;
};

template <typename Member>
Field real_field(std::string key, Member member) {
    return {key, [member](const RunConfig& c) { return format_double(member(c)); },
            [member, key](RunConfig& c, std::string_view v) { member(c) = parse_double(key, v); }};
}

template <typename Member>
Field count_field(std::string key, Member member) {
    return {key, [member](const RunConfig& c) { return std::to_string(member(c)); },
            [member, key](RunConfig& c, std::string_view v) {
                member(c) = static_cast<std::remove_reference_t<decltype(member(c))>>(parse_u64(key, v));
            }};
}

template <typename Member>
Field flag_field(std::string key, Member member) {
    return {key, [member](const RunConfig& c) { return std::string(member(c) ? "true" : "false"); },
            [member, key](RunConfig& c, std::string_view v) { member(c) = parse_bool(key, v); }};
}

#define NA_REF(expr) [](auto& c) -> auto& { return c.expr; }

const std::vector<Field>& fields() {
    static const std::vector<Field> table = [] {
        std::vector<Field> f;
        f.push_back({"data.path", [](const RunConfig& c) { return c.data.path; },
                     [](RunConfig& c, std::string_view v) { c.data.path = trim(v); }});
        f.push_back(count_field("data.classes", NA_REF(data.synth.n_classes)));
        f.push_back(count_field("data.per_class", NA_REF(data.synth.per_class)));
        f.push_back(count_field("data.test_repetitions", NA_REF(data.synth.test_repetitions)));
        f.push_back(count_field("data.channels", NA_REF(data.synth.channels)));
        f.push_back(count_field("data.timesteps", NA_REF(data.synth.timesteps)));
        f.push_back(count_field("data.target_dim", NA_REF(data.synth.target_dim)));
        f.push_back(count_field("data.latent_dim", NA_REF(data.synth.latent_dim)));
        f.push_back(count_field("data.image_size", NA_REF(data.synth.image_size)));
        f.push_back(real_field("data.separation", NA_REF(data.synth.class_separation)));
        f.push_back(real_field("data.noise", NA_REF(data.synth.noise)));
        f.push_back(real_field("data.sample_rate_hz", NA_REF(data.synth.sample_rate_hz)));
        f.push_back({"data.montage",
                     [](const RunConfig& c) {
                         return std::string(c.data.synth.montage == Montage::ten_twenty ? "ten_twenty" : "none");
                     },
                     [](RunConfig& c, std::string_view v) {
                         const auto s = trim(v);
                         if (s == "none") {
                             c.data.synth.montage = Montage::none;
                         } else if (s == "ten_twenty") {
                             c.data.synth.montage = Montage::ten_twenty;
                         } else {
                             bad_value("data.montage", v, "none or ten_twenty");
                         }
                     }});
        f.push_back(count_field("data.stub_seed", NA_REF(data.synth.stub_seed)));
        f.push_back(count_field("data.seed", NA_REF(data.synth.seed)));

        f.push_back({"model.variant", [](const RunConfig& c) { return std::string(variant_name(c.model.variant)); },
                     [](RunConfig& c, std::string_view v) { c.model.variant = parse_variant(trim(v)); }});
        f.push_back(count_field("model.temporal_kernel", NA_REF(model.temporal_kernel)));
        f.push_back(count_field("model.fusion_dim", NA_REF(model.fusion_dim)));
        f.push_back(count_field("model.fusion_heads", NA_REF(model.fusion_heads)));
        f.push_back(count_field("model.fusion_layers", NA_REF(model.fusion_layers)));
        f.push_back(count_field("model.fusion_ffn_mult", NA_REF(model.fusion_ffn_mult)));
        f.push_back(count_field("model.sth_dim", NA_REF(model.sth_dim)));
        f.push_back(count_field("model.sth_blocks", NA_REF(model.sth_blocks)));

        f.push_back(flag_field("um.enabled", NA_REF(um.enabled)));
        f.push_back(real_field("um.sigma0", NA_REF(um.policy.sigma0)));
        f.push_back(real_field("um.c", NA_REF(um.policy.c)));
        f.push_back(real_field("um.z", NA_REF(um.policy.z)));
        f.push_back(real_field("um.gamma", NA_REF(um.policy.gamma)));
        f.push_back(real_field("um.r_centre", NA_REF(um.fovea.r_centre)));
        f.push_back(real_field("um.r_edge", NA_REF(um.fovea.r_edge)));
        f.push_back(real_field("um.lambda", NA_REF(um.fovea.lambda)));

        f.push_back(real_field("loss.tau", NA_REF(loss.tau)));
        f.push_back(count_field("loss.k", NA_REF(loss.k)));
        f.push_back(real_field("loss.lambda_mse", NA_REF(loss.lambda_mse)));
        f.push_back(real_field("loss.lambda_cos", NA_REF(loss.lambda_cos)));
        f.push_back(real_field("loss.lambda_reg", NA_REF(loss.lambda_reg)));
        f.push_back({"loss.kind",
                     [](const RunConfig& c) {
                         return std::string(c.loss.kind == ContrastiveKind::scm ? "scm" : "infonce");
                     },
                     [](RunConfig& c, std::string_view v) {
                         const auto s = trim(v);
                         if (s == "scm") {
                             c.loss.kind = ContrastiveKind::scm;
                         } else if (s == "infonce") {
                             c.loss.kind = ContrastiveKind::infonce;
                         } else {
                             bad_value("loss.kind", v, "scm or infonce");
                         }
                     }});
        f.push_back({"loss.mask_mode",
                     [](const RunConfig& c) {
                         return std::string(c.loss.mask_mode == MaskMode::literal ? "literal" : "neg_inf");
                     },
                     [](RunConfig& c, std::string_view v) {
                         const auto s = trim(v);
                         if (s == "literal") {
                             c.loss.mask_mode = MaskMode::literal;
                         } else if (s == "neg_inf") {
                             c.loss.mask_mode = MaskMode::neg_inf;
                         } else {
                             bad_value("loss.mask_mode", v, "literal or neg_inf");
                         }
                     }});

        f.push_back(flag_field("fusion.modality_mask", NA_REF(fusion.modality_mask)));
        f.push_back(count_field("fusion.epochs", NA_REF(fusion.epochs)));

        f.push_back(flag_field("sth.dropout", NA_REF(sth.dropout)));
        f.push_back({"sth.inference",
                     [](const RunConfig& c) {
                         return std::string(c.sth.inference == SthInference::all ? "all" : "single");
                     },
                     [](RunConfig& c, std::string_view v) {
                         const auto s = trim(v);
                         if (s == "all") {
                             c.sth.inference = SthInference::all;
                         } else if (s == "single") {
                             c.sth.inference = SthInference::single;
                         } else {
                             bad_value("sth.inference", v, "all or single");
                         }
                     }});
        f.push_back(count_field("sth.epochs", NA_REF(sth.epochs)));

        f.push_back(count_field("train.epochs", NA_REF(train.epochs)));
        f.push_back(count_field("train.text_epochs", NA_REF(train.text_epochs)));
        f.push_back(count_field("train.batch_size", NA_REF(train.batch_size)));
        f.push_back(real_field("train.lr", NA_REF(train.optim.lr)));
        f.push_back(real_field("train.beta1", NA_REF(train.optim.beta1)));
        f.push_back(real_field("train.beta2", NA_REF(train.optim.beta2)));
        f.push_back(real_field("train.eps", NA_REF(train.optim.eps)));
        f.push_back(real_field("train.weight_decay", NA_REF(train.optim.weight_decay)));
        f.push_back(count_field("train.seed", NA_REF(train.seed)));
        f.push_back(flag_field("train.interleave", NA_REF(train.interleave)));

        f.push_back({"ablate.band", [](const RunConfig& c) { return std::string(band_name(c.ablate.band)); },
                     [](RunConfig& c, std::string_view v) { c.ablate.band = parse_band(trim(v)); }});
        f.push_back({"ablate.region", [](const RunConfig& c) { return std::string(region_name(c.ablate.region)); },
                     [](RunConfig& c, std::string_view v) { c.ablate.region = parse_region(trim(v)); }});
        std::sort(f.begin(), f.end(), [](const Field& a, const Field& b) { return a.key < b.key; });
        return f;
    }();
    return table;
}

#undef NA_REF

} // namespace

void RunConfig::validate() const {
    auto require = [](bool ok, const std::string& what) {
        if (!ok) {
            throw ConfigError(what);
        }
    };
    if (data.path.empty()) {
        try {
            data.synth.validate();
        } catch (const ContractError& e) {
            throw ConfigError(std::string("data: ") + e.what());
        }
    }
    require(model.temporal_kernel >= 1, "model.temporal_kernel must be at least 1");
    require(model.fusion_dim >= 1 && model.fusion_heads >= 1 && model.fusion_dim % model.fusion_heads == 0,
            "model.fusion_dim must be a positive multiple of model.fusion_heads");
    require(model.fusion_layers >= 1 && model.fusion_ffn_mult >= 1, "fusion layers and ffn_mult must be positive");
    require(model.sth_dim >= 1 && model.sth_blocks >= 1, "model.sth_dim and model.sth_blocks must be positive");
    try {
        um.policy.validate();
        um.fovea.validate();
        loss.validate();
    } catch (const ContractError& e) {
        throw ConfigError(e.what());
    }
    require(train.epochs >= 1, "train.epochs must be at least 1");
    require(train.text_epochs >= 1, "train.text_epochs must be at least 1");
    require(train.batch_size == 0 || train.batch_size >= 2, "train.batch_size must be 0 (auto) or at least 2");
    require(train.optim.lr > 0, "train.lr must be positive");
    require(train.optim.beta1 >= 0 && train.optim.beta1 < 1 && train.optim.beta2 >= 0 && train.optim.beta2 < 1,
            "train.beta1 and train.beta2 must lie in [0, 1)");
    require(train.optim.eps > 0, "train.eps must be positive");
    require(train.optim.weight_decay >= 0, "train.weight_decay must be non-negative");
}

std::size_t RunConfig::expert_epochs(ModalityId m) const {
    return m == ModalityId::text ? std::min(train.epochs, train.text_epochs) : train.epochs;
}

std::size_t RunConfig::batch_size(std::size_t n_train) const {
    const std::size_t b = train.batch_size ? train.batch_size : std::clamp<std::size_t>(n_train / 5, 16, 1024);
    return std::min(b, n_train);
}

void set_config_value(RunConfig& cfg, std::string_view dotted_key, std::string_view value) {
    const auto& table = fields();
    const auto it = std::lower_bound(table.begin(), table.end(), dotted_key,
                                     [](const Field& f, std::string_view k) { return f.key < k; });
    if (it == table.end() || it->key != dotted_key) {
        throw ConfigError("unknown config key '" + std::string(dotted_key) + "'");
    }
    it->set(cfg, value);
}

RunConfig parse_config(std::string_view text) {
    std::istringstream in{std::string(text)};
    std::vector<CLI::ConfigItem> items;
    try {
        items = CLI::ConfigINI().from_config(in);
    } catch (const CLI::Error& e) {
        throw ConfigError(std::string("malformed config: ") + e.what());
    }
    RunConfig cfg;
    for (const auto& item : items) {
        if (item.name == "++" || item.name == "--") {
            continue; // section markers
        }
        const auto key = item.fullname();
        if (item.parents.empty() || item.parents.front() == "default") {
            throw ConfigError("config key '" + item.name + "' must sit inside a section");
        }
        std::string value;
        for (std::size_t i = 0; i < item.inputs.size(); ++i) {
            value += (i ? "," : "") + item.inputs[i];
        }
        set_config_value(cfg, key, value);
    }
    cfg.validate();
    return cfg;
}

RunConfig load_config(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) {
        throw IoError("cannot open config '" + path.string() + "'");
    }
    std::ostringstream text;
    text << in.rdbuf();
    return parse_config(text.str());
}

std::string canonical_config(const RunConfig& cfg) {
    std::string out;
    for (const auto& f : fields()) {
        out += f.key + "=" + f.get(cfg) + "\n";
    }
    return out;
}

std::string config_hash(const RunConfig& cfg) {
    return sha256_hex(canonical_config(cfg));
}

} // namespace neuroalign
