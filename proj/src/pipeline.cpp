// Copyright (c) 2026, The neuroalign authors
// SPDX-License-Identifier: Apache-2.0

#include "neuroalign/pipeline.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <map>
#include <numeric>
#include <sstream>
#include <thread>

#include "neuroalign/binary_io.hpp"
#include "neuroalign/error.hpp"
#include "neuroalign/objectives.hpp"
#include "neuroalign/random.hpp"

namespace neuroalign {

namespace {

constexpr char kCheckpointMagic[] = "NCKP";
constexpr std::uint32_t kCheckpointVersion = 1;

// derive_seed streams
constexpr std::uint64_t kExpertInit = 1;
constexpr std::uint64_t kFusionInit = 2;
constexpr std::uint64_t kSthInit = 3;
constexpr std::uint64_t kExpertTrain = 10; // + modality index
constexpr std::uint64_t kFusionTrain = 20;
constexpr std::uint64_t kSthTrain = 30;

using LogSink = std::function<void(const EpochLog&)>;

std::string unit_name(ModalityId m) { return "expert." + std::string(modality_name(m)); }

Tensor gather_rows(const Tensor& x, const std::vector<std::size_t>& rows) {
    const std::size_t width = x.numel() / x.dim(0);
    const auto src = x.values();
    std::vector<float> out;
    out.reserve(rows.size() * width);
    for (auto r : rows) {
        out.insert(out.end(), src.begin() + static_cast<std::ptrdiff_t>(r * width),
                   src.begin() + static_cast<std::ptrdiff_t>((r + 1) * width));
    }
    Shape shape = x.shape();
    shape[0] = rows.size();
    return Tensor(std::move(shape), std::move(out));
}

void shuffle(std::vector<std::size_t>& v, Rng& rng) {
    for (std::size_t i = v.size(); i > 1; --i) {
        std::swap(v[i - 1], v[rng.index(i)]);
    }
}

// Consecutive chunks of `order`; a trailing singleton joins the previous
// chunk because contrastive losses need two rows.
std::vector<std::vector<std::size_t>> make_batches(const std::vector<std::size_t>& order, std::size_t size) {
    std::vector<std::vector<std::size_t>> out;
    for (std::size_t i = 0; i < order.size(); i += size) {
        out.emplace_back(order.begin() + static_cast<std::ptrdiff_t>(i),
                         order.begin() + static_cast<std::ptrdiff_t>(std::min(order.size(), i + size)));
    }
    if (out.size() > 1 && out.back().size() < 2) {
        out[out.size() - 2].insert(out[out.size() - 2].end(), out.back().begin(), out.back().end());
        out.pop_back();
    }
    return out;
}

std::vector<std::size_t> iota_n(std::size_t n) {
    std::vector<std::size_t> v(n);
    std::iota(v.begin(), v.end(), std::size_t{0});
    return v;
}

// Target rows of one modality for the given epochs, [rows, d].
Tensor target_rows(const Split& split, const std::vector<std::size_t>& rows, std::size_t slot) {
    const auto d = split.bundles.front().dim();
    std::vector<float> out;
    out.reserve(rows.size() * d);
    for (auto r : rows) {
        const auto& t = split.bundles[split.stimulus_of_epoch[r]].targets[slot];
        out.insert(out.end(), t.begin(), t.end());
    }
    return Tensor({rows.size(), d}, std::move(out));
}

// Test gallery of one modality: one row per stimulus.
Tensor gallery(const Split& split, std::size_t slot) {
    const auto d = split.bundles.front().dim();
    std::vector<float> out;
    out.reserve(split.bundles.size() * d);
    for (const auto& b : split.bundles) {
        out.insert(out.end(), b.targets[slot].begin(), b.targets[slot].end());
    }
    return Tensor({split.bundles.size(), d}, std::move(out));
}

// Top-1 by cosine (rows are unit), ties to the lower index. Used for the
// per-epoch monitor, which must also work on galleries smaller than 5.
double top1(const Tensor& q, const Tensor& g, const std::vector<std::size_t>& truth) {
    const auto d = q.dim(1);
    const auto qv = q.values();
    const auto gv = g.values();
    std::size_t hits = 0;
    for (std::size_t i = 0; i < q.dim(0); ++i) {
        std::size_t best = 0;
        double best_sim = -std::numeric_limits<double>::infinity();
        for (std::size_t j = 0; j < g.dim(0); ++j) {
            double s = 0;
            for (std::size_t k = 0; k < d; ++k) {
                s += double(qv[i * d + k]) * gv[j * d + k];
            }
            if (s > best_sim) {
                best_sim = s;
                best = j;
            }
        }
        hits += best == truth[i];
    }
    return double(hits) / double(q.dim(0));
}

void step_or_throw(const Tensor& loss, AdamW& opt, const std::string& unit, std::size_t epoch) {
    opt.zero_grad();
    backward(loss);
    const double value = loss.item();
    if (!std::isfinite(value) || !opt.gradients_finite()) {
        opt.zero_grad();
        std::ostringstream os;
        os << unit << " produced a non-finite loss or gradient in epoch " << epoch + 1 << " (loss " << value << ")";
        throw NumericalError(os.str());
    }
    opt.step();
}

// Trains one expert branch epoch by epoch.
class BranchTrainer {
public:
    BranchTrainer(const RunConfig& cfg, const PreparedData& data, ModalityId m, ExpertParams<float>& params,
                  MemoryBank* bank, std::uint64_t seed)
        : cfg_(cfg), data_(data), m_(m), slot_(modality_index(m)), params_(params),
          opt_(params.parameters(unit_name(m)), cfg.train.optim), rng_(derive_seed(seed, kExpertTrain + slot_)),
          bank_(bank), stub_(data.stub_seed, data.target_dim()), gallery_(gallery(data.test, slot_)) {}

    std::size_t epochs_left() const { return cfg_.expert_epochs(m_) - epoch_; }

    void run_epoch() {
        const auto& train = data_.train;
        auto order = iota_n(train.epochs.batch_size());
        shuffle(order, rng_);
        const bool um = bank_ != nullptr;
        std::vector<double> sigma;
        if (um) {
            const auto stats = bank_->stats();
            sigma.resize(order.size());
            for (std::size_t i = 0; i < order.size(); ++i) {
                sigma[i] = bank_->initialized(i) ? select_sigma(bank_->score(i), stats, cfg_.um.policy)
                                                 : cfg_.um.policy.sigma0;
            }
        }
        double loss_sum = 0;
        const auto batches = make_batches(order, cfg_.batch_size(order.size()));
        for (const auto& rows : batches) {
            const auto sub = train.epochs.subset(rows);
            const auto targets = um ? foveated_targets(rows, sigma) : target_rows(train, rows, slot_);
            const auto e = l2_normalize_rows(expert_forward(sub.signals, params_));
            const auto loss = contrastive_loss(e, targets, sub.labels, cfg_.loss);
            step_or_throw(loss, opt_, unit_name(m_), epoch_);
            loss_sum += loss.item();
            if (um) {
                const auto clean = target_rows(train, rows, slot_);
                const auto d = clean.dim(1);
                const auto ev = e.values();
                const auto cv = clean.values();
                for (std::size_t r = 0; r < rows.size(); ++r) {
                    bank_->update(rows[r], similarity_score(ev.subspan(r * d, d), cv.subspan(r * d, d)));
                }
            }
        }
        log_.push_back({unit_name(m_), epoch_ + 1, loss_sum / double(batches.size()), monitor()});
        if (sink_) {
            sink_(log_.back());
        }
        ++epoch_;
    }

    double monitor() const {
        NoGradGuard no_grad;
        const auto e = l2_normalize_rows(expert_forward(data_.queries.epochs.signals, params_));
        return top1(e, gallery_, data_.queries.stimulus);
    }

    const std::vector<EpochLog>& log() const { return log_; }
    void set_sink(LogSink sink) { sink_ = std::move(sink); }
    const AdamW& optimizer() const { return opt_; }

private:
    // Stub embedding of each stimulus image blurred at its sample's radius.
    Tensor foveated_targets(const std::vector<std::size_t>& rows, const std::vector<double>& sigma) {
        const auto d = data_.target_dim();
        std::vector<float> out;
        out.reserve(rows.size() * d);
        for (auto r : rows) {
            const auto stim = data_.train.stimulus_of_epoch[r];
            const auto key = std::make_pair(stim, sigma[r]);
            auto it = cache_.find(key);
            if (it == cache_.end()) {
                const auto& bundle = data_.train.bundles[stim];
                if (!bundle.image) {
                    throw ContractError("the blur curriculum needs stimulus images");
                }
                std::vector<float> v = sigma[r] > 0 ? stub_.encode(apply_foveation(*bundle.image, cfg_.um.fovea, sigma[r]))
                                                    : bundle.targets[slot_];
                it = cache_.emplace(key, std::move(v)).first;
            }
            out.insert(out.end(), it->second.begin(), it->second.end());
        }
        return Tensor({rows.size(), d}, std::move(out));
    }

    const RunConfig& cfg_;
    const PreparedData& data_;
    ModalityId m_;
    std::size_t slot_;
    ExpertParams<float>& params_;
    AdamW opt_;
    Rng rng_;
    MemoryBank* bank_;
    StubEncoder stub_;
    Tensor gallery_;
    std::map<std::pair<std::size_t, double>, std::vector<float>> cache_;
    std::vector<EpochLog> log_;
    LogSink sink_;
    std::size_t epoch_ = 0;
};

void append_optimizer(Checkpoint& ckpt, const std::string& unit, const AdamW& opt) {
    for (auto& s : opt.state()) {
        ckpt.optimizer_state.push_back({"optim." + s.name, s.tensor});
    }
    ckpt.optimizer_steps.emplace_back(unit, opt.step_count());
}

void save_stage(const TrainOptions& options, const Checkpoint& ckpt) {
    if (!options.checkpoint_path.empty()) {
        write_checkpoint(options.checkpoint_path, ckpt);
    }
}

std::array<Tensor, 4> gather_all(const std::array<Tensor, 4>& z, const std::vector<std::size_t>& rows) {
    std::array<Tensor, 4> out;
    for (std::size_t m = 0; m < 4; ++m) {
        out[m] = gather_rows(z[m], rows);
    }
    return out;
}

void run_experts(const RunConfig& cfg, const PreparedData& data, const TrainOptions& options, Checkpoint& ckpt,
                 const LogSink& log) {
    const bool um = cfg.um.enabled;
    ckpt.bank = MemoryBank(data.train.epochs.batch_size(), cfg.um.policy.gamma);
    std::vector<std::unique_ptr<BranchTrainer>> branches;
    for (auto m : kExpertModalities) {
        MemoryBank* bank = (um && m == ModalityId::image) ? &ckpt.bank : nullptr;
        branches.push_back(std::make_unique<BranchTrainer>(cfg, data, m, ckpt.model.experts[modality_index(m)], bank,
                                                           cfg.train.seed));
    }
    const bool threaded = options.threads > 1 && !cfg.train.interleave;
    if (!threaded) {
        for (auto& b : branches) {
            b->set_sink(log);
        }
    }
    if (cfg.train.interleave) {
        bool any = true;
        while (any) {
            any = false;
            for (auto& b : branches) {
                if (b->epochs_left() > 0) {
                    b->run_epoch();
                    any = true;
                }
            }
        }
    } else if (threaded) {
        // Branches share nothing mutable, so running them concurrently
        // gives the same bytes as running them in turn.
        std::vector<std::exception_ptr> errors(branches.size());
        for (std::size_t start = 0; start < branches.size(); start += options.threads) {
            std::vector<std::thread> pool;
            for (std::size_t i = start; i < std::min(branches.size(), start + options.threads); ++i) {
                pool.emplace_back([&, i] {
                    try {
                        while (branches[i]->epochs_left() > 0) {
                            branches[i]->run_epoch();
                        }
                    } catch (...) {
                        errors[i] = std::current_exception();
                    }
                });
            }
            for (auto& t : pool) {
                t.join();
            }
        }
        for (auto& e : errors) {
            if (e) {
                std::rethrow_exception(e);
            }
        }
    } else {
        for (auto& b : branches) {
            while (b->epochs_left() > 0) {
                b->run_epoch();
            }
        }
    }
    for (std::size_t i = 0; i < branches.size(); ++i) {
        for (const auto& entry : branches[i]->log()) {
            if (threaded) {
                log(entry);
            }
            ckpt.epochs_run += 1;
        }
        append_optimizer(ckpt, unit_name(kExpertModalities[i]), branches[i]->optimizer());
    }
}

void run_fusion(const RunConfig& cfg, const PreparedData& data, Checkpoint& ckpt, Rng& rng, const LogSink& log) {
    const auto& train = data.train;
    const auto z = expert_embeddings(ckpt.model, train.epochs.signals);
    const auto z_query = expert_embeddings(ckpt.model, data.queries.epochs.signals);
    const auto image_gallery = gallery(data.test, 0);
    AdamW opt(ckpt.model.fusion.parameters("fusion"), cfg.train.optim);
    const auto n = train.epochs.batch_size();
    for (std::size_t epoch = 0; epoch < cfg.fusion_epochs(); ++epoch) {
        auto order = iota_n(n);
        shuffle(order, rng);
        const auto batches = make_batches(order, cfg.batch_size(n));
        double loss_sum = 0;
        for (const auto& rows : batches) {
            auto tokens = tokenize_project(gather_all(z, rows), ckpt.model.fusion);
            if (cfg.fusion.modality_mask) {
                tokens = modality_mask(tokens, rng).tokens;
            }
            const auto out = l2_normalize_rows(fusion_forward(tokens, ckpt.model.fusion));
            std::vector<std::uint32_t> labels;
            for (auto r : rows) {
                labels.push_back(train.epochs.labels[r]);
            }
            const auto loss = contrastive_loss(out, target_rows(train, rows, 0), labels, cfg.loss);
            step_or_throw(loss, opt, "fusion", epoch);
            loss_sum += loss.item();
        }
        const double mon = top1(fusion_embedding(ckpt.model, z_query), image_gallery, data.queries.stimulus);
        log({"fusion", epoch + 1, loss_sum / double(batches.size()), mon});
        ckpt.epochs_run += 1;
    }
    append_optimizer(ckpt, "fusion", opt);
}

void run_sth(const RunConfig& cfg, const PreparedData& data, Checkpoint& ckpt, Rng& rng, const LogSink& log) {
    const auto& train = data.train;
    const auto z = expert_embeddings(ckpt.model, train.epochs.signals);
    const auto z_query = expert_embeddings(ckpt.model, data.queries.epochs.signals);
    const auto image_gallery = gallery(data.test, 0);
    AdamW opt(ckpt.model.sth.parameters("sth"), cfg.train.optim);
    const auto n = train.epochs.batch_size();
    for (std::size_t epoch = 0; epoch < cfg.sth_epochs(); ++epoch) {
        auto order = iota_n(n);
        shuffle(order, rng);
        const auto batches = make_batches(order, cfg.batch_size(n));
        double loss_sum = 0;
        for (const auto& rows : batches) {
            std::vector<Tensor> per_modality;
            for (std::size_t m = 0; m < 4; ++m) {
                per_modality.push_back(target_rows(train, rows, m));
            }
            const auto targets = stack(per_modality, 1);
            try {
                loss_sum += sth_train_step(gather_all(z, rows), targets, ckpt.model.sth, opt, rng, cfg.loss,
                                           cfg.sth.dropout)
                                .loss;
            } catch (const NumericalError& e) {
                std::ostringstream os;
                os << "sth epoch " << epoch + 1 << ": " << e.what();
                throw NumericalError(os.str());
            }
        }
        const auto aligned = sth_infer(z_query, ckpt.model.sth, ModalityId::image, cfg.sth.inference);
        log({"sth", epoch + 1, loss_sum / double(batches.size()),
                       top1(aligned, image_gallery, data.queries.stimulus)});
        ckpt.epochs_run += 1;
    }
    append_optimizer(ckpt, "sth", opt);
}

void put_tensor(ByteWriter& w, const std::string& name, const Tensor& t) {
    w.put_short_string(name);
    w.put_u32(static_cast<std::uint32_t>(t.shape().size()));
    for (auto d : t.shape()) {
        w.put_u64(d);
    }
    for (float v : t.values()) {
        w.put_f32(v);
    }
}

NamedParam<float> get_tensor(ByteReader& r) {
    NamedParam<float> p;
    p.name = r.get_short_string();
    const auto rank = r.get_u32();
    if (rank > 8) {
        throw FormatError("tensor '" + p.name + "' has implausible rank " + std::to_string(rank));
    }
    Shape shape(rank);
    std::size_t numel = 1;
    for (auto& d : shape) {
        d = r.get_u64();
        numel *= d;
    }
    if (numel * 4 > r.remaining()) {
        throw TruncatedError("tensor '" + p.name + "' runs past the end of the checkpoint");
    }
    std::vector<float> values(numel);
    for (auto& v : values) {
        v = r.get_f32();
    }
    p.tensor = Tensor(std::move(shape), std::move(values));
    return p;
}

std::vector<std::uint8_t> serialize(const Checkpoint& ckpt) {
    ByteWriter w;
    w.put_raw(std::string_view(kCheckpointMagic, 4));
    w.put_u32(kCheckpointVersion);
    w.put_short_string(ckpt.config_hash);
    w.put_u32(static_cast<std::uint32_t>(ckpt.stage));
    w.put_u64(ckpt.seed);
    w.put_u64(ckpt.epochs_run);
    w.put_string(ckpt.rng_state);
    w.put_f64(ckpt.bank.gamma());
    w.put_u64(ckpt.bank.size());
    for (std::size_t i = 0; i < ckpt.bank.size(); ++i) {
        w.put_f64(ckpt.bank.scores()[i]);
        w.put_u8(ckpt.bank.flags()[i]);
    }
    const auto params = ckpt.model.parameters();
    w.put_u32(static_cast<std::uint32_t>(params.size()));
    for (const auto& p : params) {
        put_tensor(w, p.name, p.tensor);
    }
    w.put_u32(static_cast<std::uint32_t>(ckpt.optimizer_state.size()));
    for (const auto& p : ckpt.optimizer_state) {
        put_tensor(w, p.name, p.tensor);
    }
    w.put_u32(static_cast<std::uint32_t>(ckpt.optimizer_steps.size()));
    for (const auto& [unit, steps] : ckpt.optimizer_steps) {
        w.put_short_string(unit);
        w.put_u64(steps);
    }
    return w.bytes();
}

} // namespace

ParamList<float> TrainedModel::parameters() const {
    ParamList<float> out;
    for (auto m : kExpertModalities) {
        auto p = experts[modality_index(m)].parameters(unit_name(m));
        out.insert(out.end(), p.begin(), p.end());
    }
    auto f = fusion.parameters("fusion");
    out.insert(out.end(), f.begin(), f.end());
    auto s = sth.parameters("sth");
    out.insert(out.end(), s.begin(), s.end());
    return out;
}

TrainedModel TrainedModel::clone() const {
    TrainedModel out;
    for (std::size_t m = 0; m < 4; ++m) {
        out.experts[m] = experts[m].cast<float>();
    }
    out.fusion = fusion.cast<float>();
    out.sth = sth.cast<float>();
    return out;
}

void write_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt) {
    write_file_bytes(path, serialize(ckpt));
}

std::string checkpoint_digest(const Checkpoint& ckpt) {
    return sha256_hex(serialize(ckpt));
}

void read_checkpoint(const std::filesystem::path& path, Checkpoint& ckpt, const std::string& expected_hash) {
    const auto bytes = read_file_bytes(path);
    if (bytes.size() < 4 || std::string_view(reinterpret_cast<const char*>(bytes.data()), 4) != kCheckpointMagic) {
        throw BadMagicError("'" + path.string() + "' is not a checkpoint");
    }
    ByteReader r(bytes);
    r.get_raw(4);
    if (const auto v = r.get_u32(); v != kCheckpointVersion) {
        throw VersionMismatchError("checkpoint version " + std::to_string(v) + " is not supported");
    }
    const auto hash = r.get_short_string();
    if (!expected_hash.empty() && hash != expected_hash) {
        throw ConfigHashMismatchError("checkpoint was written for config " + hash + ", not " + expected_hash);
    }
    Checkpoint out;
    out.config_hash = hash;
    const auto stage = r.get_u32();
    if (stage > static_cast<std::uint32_t>(Stage::sth)) {
        throw FormatError("checkpoint stage " + std::to_string(stage) + " is out of range");
    }
    out.stage = static_cast<Stage>(stage);
    out.seed = r.get_u64();
    out.epochs_run = r.get_u64();
    out.rng_state = r.get_string();
    const double gamma = r.get_f64();
    const auto n = r.get_u64();
    if (n * 9 > r.remaining()) {
        throw TruncatedError("memory bank runs past the end of the checkpoint");
    }
    std::vector<double> scores(n);
    std::vector<std::uint8_t> flags(n);
    for (std::size_t i = 0; i < n; ++i) {
        scores[i] = r.get_f64();
        flags[i] = r.get_u8();
    }
    out.bank = MemoryBank(n, gamma);
    out.bank.restore(std::move(scores), std::move(flags));
    ParamList<float> params;
    for (auto count = r.get_u32(); count > 0; --count) {
        params.push_back(get_tensor(r));
    }
    out.model = ckpt.model.clone();
    assign_parameters(out.model.parameters(), params);
    for (auto count = r.get_u32(); count > 0; --count) {
        out.optimizer_state.push_back(get_tensor(r));
    }
    for (auto count = r.get_u32(); count > 0; --count) {
        auto unit = r.get_short_string();
        out.optimizer_steps.emplace_back(std::move(unit), r.get_u64());
    }
    if (!r.at_end()) {
        throw FormatError("trailing bytes in checkpoint '" + path.string() + "'");
    }
    ckpt = std::move(out);
}

Dataset load_dataset(const RunConfig& cfg) {
    if (!cfg.data.path.empty()) {
        return read_dataset(cfg.data.path);
    }
    return synth_dataset(cfg.data.synth);
}

namespace {

EpochBatch select_epochs(EpochBatch batch, const RunConfig& cfg, double sample_rate_hz) {
    if (cfg.ablate.band != Band::all) {
        batch = bandpass_filter(batch, BandSpec::named(cfg.ablate.band, sample_rate_hz));
    }
    if (cfg.ablate.region != Region::all) {
        batch = select_region(batch, cfg.ablate.region);
    }
    return batch;
}

// Per-channel mean and standard deviation over the training epochs.
void standardize(Split& train, Split& test) {
    const auto C = train.epochs.channels(), T = train.epochs.timesteps(), B = train.epochs.batch_size();
    std::vector<double> mean(C, 0.0), sd(C, 0.0);
    const auto v = train.epochs.signals.values();
    for (std::size_t b = 0; b < B; ++b) {
        for (std::size_t c = 0; c < C; ++c) {
            for (std::size_t t = 0; t < T; ++t) {
                mean[c] += v[(b * C + c) * T + t];
            }
        }
    }
    for (auto& m : mean) {
        m /= double(B * T);
    }
    for (std::size_t b = 0; b < B; ++b) {
        for (std::size_t c = 0; c < C; ++c) {
            for (std::size_t t = 0; t < T; ++t) {
                const double d = v[(b * C + c) * T + t] - mean[c];
                sd[c] += d * d;
            }
        }
    }
    for (auto& s : sd) {
        s = std::sqrt(s / double(B * T));
        if (!(s > 1e-12)) {
            s = 1.0;
        }
    }
    for (Split* split : {&train, &test}) {
        auto& sig = split->epochs.signals;
        auto out = sig.mutable_values();
        const auto n = split->epochs.batch_size();
        for (std::size_t b = 0; b < n; ++b) {
            for (std::size_t c = 0; c < C; ++c) {
                for (std::size_t t = 0; t < T; ++t) {
                    auto& x = out[(b * C + c) * T + t];
                    x = static_cast<float>((x - mean[c]) / sd[c]);
                }
            }
        }
    }
}

} // namespace

PreparedData prepare_data(const Dataset& data, const RunConfig& cfg) {
    data.validate();
    if (cfg.ablate.region != Region::all) {
        bool labelled = false;
        for (const auto& name : data.train.epochs.channel_names) {
            Region r;
            labelled = labelled || channel_region(name, r);
        }
        if (!labelled) {
            throw UnsupportedAxisError("region selection needs 10-20 channel labels; this dataset has none");
        }
    }
    PreparedData out;
    out.sample_rate_hz = data.sample_rate_hz;
    out.stub_seed = data.stub_seed;
    out.train = data.train;
    out.test = data.test;
    out.train.epochs = select_epochs(data.train.epochs, cfg, data.sample_rate_hz);
    out.test.epochs = select_epochs(data.test.epochs, cfg, data.sample_rate_hz);
    // Copies above may share storage with `data`; detach before writing.
    out.train.epochs.signals = out.train.epochs.signals.detach();
    out.test.epochs.signals = out.test.epochs.signals.detach();
    standardize(out.train, out.test);
    out.queries = averaged_queries(out.test);
    return out;
}

TrainedModel init_model(const RunConfig& cfg, std::size_t channels, std::size_t timesteps, std::size_t target_dim) {
    ExpertDims dims;
    dims.channels = channels;
    dims.timesteps = timesteps;
    dims.embed_dim = target_dim;
    dims.temporal_kernel = cfg.model.temporal_kernel;
    dims.variant = cfg.model.variant;
    TrainedModel model;
    model.experts = init_experts(derive_seed(cfg.train.seed, kExpertInit), dims);
    FusionDims fd;
    fd.input_dim = target_dim;
    fd.model_dim = cfg.model.fusion_dim;
    fd.heads = cfg.model.fusion_heads;
    fd.ffn_mult = cfg.model.fusion_ffn_mult;
    fd.layers = cfg.model.fusion_layers;
    Rng frng(derive_seed(cfg.train.seed, kFusionInit));
    model.fusion = init_fusion(fd, frng);
    SthDims sd;
    sd.input_dim = target_dim;
    sd.model_dim = cfg.model.sth_dim;
    sd.blocks = cfg.model.sth_blocks;
    Rng srng(derive_seed(cfg.train.seed, kSthInit));
    model.sth = init_sth(sd, srng);
    return model;
}

std::array<Tensor, 4> expert_embeddings(const TrainedModel& model, const Tensor& signals) {
    NoGradGuard no_grad;
    std::array<Tensor, 4> out;
    for (std::size_t m = 0; m < 4; ++m) {
        out[m] = l2_normalize_rows(expert_forward(signals, model.experts[m]));
    }
    return out;
}

Tensor fusion_embedding(const TrainedModel& model, const std::array<Tensor, 4>& experts) {
    NoGradGuard no_grad;
    return l2_normalize_rows(fusion_forward(tokenize_project(experts, model.fusion), model.fusion));
}

TrainResult run_train(const RunConfig& cfg, const PreparedData& data, const TrainOptions& options) {
    cfg.validate();
    data.train.validate();
    data.test.validate();
    if (data.target_dim() != data.test.bundles.front().dim()) {
        throw ConfigError("train and test targets disagree on dimension");
    }
    const auto hash = config_hash(cfg);
    TrainResult result;
    Checkpoint& ckpt = result.checkpoint;
    const auto fresh = init_model(cfg, data.train.epochs.channels(), data.train.epochs.timesteps(), data.target_dim());
    if (options.resume) {
        if (options.resume->config_hash != hash) {
            throw ConfigHashMismatchError("checkpoint was written for config " + options.resume->config_hash +
                                          ", not " + hash);
        }
        ckpt = *options.resume;
        ckpt.model = options.resume->model.clone();
        const auto expected = fresh.parameters();
        const auto got = ckpt.model.parameters();
        if (expected.size() != got.size()) {
            throw ConfigError("checkpoint model does not match the configured dimensions");
        }
        for (std::size_t i = 0; i < got.size(); ++i) {
            if (expected[i].name != got[i].name || expected[i].tensor.shape() != got[i].tensor.shape()) {
                throw ConfigError("checkpoint parameter '" + got[i].name + "' does not match the configured shapes");
            }
        }
    } else {
        ckpt.config_hash = hash;
        ckpt.seed = cfg.train.seed;
        ckpt.model = fresh;
    }

    const LogSink log = [&](const EpochLog& e) {
        result.log.push_back(e);
        if (options.on_epoch) {
            options.on_epoch(e);
        }
    };
    auto finish_stage = [&](Stage stage, std::uint64_t next_stream) {
        ckpt.stage = stage;
        ckpt.rng_state = Rng(derive_seed(cfg.train.seed, next_stream)).state();
        save_stage(options, ckpt);
    };
    auto reached = [&](Stage s) { return static_cast<std::uint32_t>(ckpt.stage) >= static_cast<std::uint32_t>(s); };
    auto wanted = [&](Stage s) {
        return static_cast<std::uint32_t>(options.stop_after) >= static_cast<std::uint32_t>(s);
    };

    if (!reached(Stage::experts) && wanted(Stage::experts)) {
        run_experts(cfg, data, options, ckpt, log);
        finish_stage(Stage::experts, kFusionTrain);
    }
    if (!reached(Stage::fusion) && wanted(Stage::fusion)) {
        Rng rng(derive_seed(cfg.train.seed, kFusionTrain));
        if (!ckpt.rng_state.empty()) {
            rng.restore(ckpt.rng_state);
        }
        run_fusion(cfg, data, ckpt, rng, log);
        finish_stage(Stage::fusion, kSthTrain);
    }
    if (!reached(Stage::sth) && wanted(Stage::sth)) {
        Rng rng(derive_seed(cfg.train.seed, kSthTrain));
        if (!ckpt.rng_state.empty()) {
            rng.restore(ckpt.rng_state);
        }
        run_sth(cfg, data, ckpt, rng, log);
        ckpt.stage = Stage::sth;
        ckpt.rng_state.clear();
        save_stage(options, ckpt);
    }
    return result;
}

std::vector<RetrievalReport> run_eval(const RunConfig& cfg, const PreparedData& data, const Checkpoint& ckpt) {
    const auto hash = config_hash(cfg);
    if (ckpt.config_hash != hash) {
        throw ConfigHashMismatchError("checkpoint was written for config " + ckpt.config_hash + ", not " + hash);
    }
    if (ckpt.stage != Stage::sth) {
        throw ContractError("evaluation needs a checkpoint with all three stages trained");
    }
    const auto& q = data.queries;
    const auto z = expert_embeddings(ckpt.model, q.epochs.signals);
    std::map<std::string, std::string> tags = {
        {"band", std::string(band_name(cfg.ablate.band))},
        {"region", std::string(region_name(cfg.ablate.region))},
        {"um", cfg.um.enabled ? "on" : "off"},
        {"loss", cfg.loss.kind == ContrastiveKind::scm ? "scm" : "infonce"},
        {"modality_mask", cfg.fusion.modality_mask ? "on" : "off"},
        {"encoder", std::string(variant_name(cfg.model.variant))},
        {"sth_inference", cfg.sth.inference == SthInference::all ? "all" : "single"},
    };
    std::vector<RetrievalReport> reports;
    auto finish = [&](RetrievalReport r, ModalityId m) {
        r.modality = m;
        r.tags = tags;
        r.seed = cfg.train.seed;
        r.config_hash = hash;
        r.validate();
        reports.push_back(std::move(r));
    };
    for (auto m : kExpertModalities) {
        const auto slot = modality_index(m);
        const auto aligned = sth_infer(z, ckpt.model.sth, m, cfg.sth.inference);
        finish(topk_retrieval(aligned, gallery(data.test, slot), q.stimulus), m);
    }
    finish(topk_retrieval(fusion_embedding(ckpt.model, z), gallery(data.test, 0), q.stimulus), ModalityId::fusion);
    return reports;
}

std::string_view axis_name(AblationAxis axis) {
    switch (axis) {
    case AblationAxis::module:
        return "module";
    case AblationAxis::band:
        return "band";
    case AblationAxis::region:
        return "region";
    case AblationAxis::encoder:
        return "encoder";
    }
    return "module";
}

AblationAxis parse_axis(std::string_view name) {
    for (auto a : {AblationAxis::module, AblationAxis::band, AblationAxis::region, AblationAxis::encoder}) {
        if (axis_name(a) == name) {
            return a;
        }
    }
    throw ConfigError("unknown ablation axis '" + std::string(name) + "'");
}

std::vector<std::pair<std::string, RunConfig>> ablation_configs(const RunConfig& base, AblationAxis axis) {
    std::vector<std::pair<std::string, RunConfig>> rows;
    switch (axis) {
    case AblationAxis::module: {
        RunConfig cfg = base;
        cfg.um.enabled = false;
        cfg.loss.kind = ContrastiveKind::infonce;
        cfg.fusion.modality_mask = false;
        rows.emplace_back("baseline", cfg);
        cfg.um.enabled = true;
        rows.emplace_back("+UM", cfg);
        cfg.loss.kind = ContrastiveKind::scm;
        rows.emplace_back("+Loss", cfg);
        cfg.fusion.modality_mask = true;
        rows.emplace_back("+Mask", cfg);
        break;
    }
    case AblationAxis::band:
        for (auto b : kAllBands) {
            RunConfig cfg = base;
            cfg.ablate.band = b;
            rows.emplace_back(std::string(band_name(b)), cfg);
        }
        break;
    case AblationAxis::region:
        for (auto r : kAllRegions) {
            RunConfig cfg = base;
            cfg.ablate.region = r;
            rows.emplace_back(std::string(region_name(r)), cfg);
        }
        break;
    case AblationAxis::encoder:
        for (auto v : {EncoderVariant::cogcap, EncoderVariant::tsconv, EncoderVariant::shallownet,
                       EncoderVariant::eegnet}) {
            RunConfig cfg = base;
            cfg.model.variant = v;
            rows.emplace_back(std::string(variant_name(v)), cfg);
        }
        break;
    }
    return rows;
}

std::vector<AblationRow> run_ablate(const RunConfig& base, const Dataset& data, AblationAxis axis,
                                    std::size_t threads) {
    if (axis == AblationAxis::region) {
        bool labelled = false;
        for (const auto& name : data.train.epochs.channel_names) {
            Region r;
            labelled = labelled || channel_region(name, r);
        }
        if (!labelled) {
            throw UnsupportedAxisError("the region axis needs 10-20 channel labels; this dataset has none");
        }
    }
    std::vector<AblationRow> rows;
    for (auto& [name, cfg] : ablation_configs(base, axis)) {
        const auto prepared = prepare_data(data, cfg);
        TrainOptions options;
        options.threads = threads;
        const auto trained = run_train(cfg, prepared, options);
        auto reports = run_eval(cfg, prepared, trained.checkpoint);
        for (auto& r : reports) {
            r.tags["row"] = name;
            r.tags["axis"] = std::string(axis_name(axis));
        }
        rows.push_back({name, cfg, std::move(reports)});
    }
    return rows;
}

} // namespace neuroalign
