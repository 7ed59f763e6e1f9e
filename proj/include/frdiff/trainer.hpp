#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <numeric>
#include <random>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include "adam.hpp"
#include "checkpoint.hpp"
#include "config.hpp"
#include "diffusion.hpp"
#include "freqdehaze.hpp"
#include "hazedata.hpp"
#include "metrics.hpp"
#include "objectives.hpp"

namespace frdiff {

/// Dehazing network, optional denoiser, discriminator and NCE heads, built from a config.
template <typename T>
struct FrDiffModel {
    TrainConfig cfg;
    DehazeNet<T> net;
    DenoiserNet<T> den;
    bool has_denoiser = false;
    Discriminator<T> disc;
    PatchNce<T> nce;

    FrDiffModel(const TrainConfig& c, bool with_denoiser)
        : cfg(c), net(c.network()), has_denoiser(with_denoiser), disc(c.disc_width), nce(c.base_channels, c.nce()) {
        if (with_denoiser) den = DenoiserNet<T>(c.base_channels, c.denoiser());
    }

    void init(Rng& rng) {
        net.init(rng);
        if (has_denoiser) den.init(rng);
        disc.init(rng);
        nce.init(rng);
    }

    ParamList<T> generator_params() {
        ParamList<T> p;
        net.collect(p);
        nce.collect(p);
        if (has_denoiser) den.collect(p);
        return p;
    }
    ParamList<T> discriminator_params() {
        ParamList<T> p;
        disc.collect(p);
        return p;
    }
    ParamList<T> all_params() {
        ParamList<T> p = generator_params();
        disc.collect(p);
        return p;
    }
};

// ---------------------------------------------------------------------------
// Checkpoint mapping
// ---------------------------------------------------------------------------

template <typename T>
void put_params(Checkpoint& ck, const ParamList<T>& params) {
    for (const auto* p : params) {
        std::vector<float> v(p->value.begin(), p->value.end());
        ck.put_f32(p->name, p->shape, v.data());
    }
}

template <typename T>
void put_adam(Checkpoint& ck, const std::string& prefix, const Adam<T>& opt) {
    for (std::size_t i = 0; i < opt.params().size(); ++i) {
        const auto* p = opt.params()[i];
        const auto& s = opt.states()[i];
        std::vector<float> m(p->size(), 0.f), v(p->size(), 0.f);
        if (!s.m.empty()) {
            std::copy(s.m.begin(), s.m.end(), m.begin());
            std::copy(s.v.begin(), s.v.end(), v.begin());
        }
        ck.put_f32(prefix + p->name + ".m", p->shape, m.data());
        ck.put_f32(prefix + p->name + ".v", p->shape, v.data());
        ck.put_u64(prefix + p->name + ".step", static_cast<std::uint64_t>(s.step));
    }
}

inline std::string rng_state(const Rng& rng) {
    std::ostringstream os;
    os << rng;
    return os.str();
}

/// Loads parameters by name; every missing or mis-shaped tensor is reported at once.
template <typename T>
void load_params(const Checkpoint& ck, const ParamList<T>& params) {
    std::string problems;
    for (auto* p : params) {
        const NamedTensor* t = ck.find(p->name);
        std::vector<std::uint32_t> want(p->shape.begin(), p->shape.end());
        if (!t) {
            problems += concat("\n  missing ", p->name, " ", Checkpoint::dims_str(want));
        } else if (t->dtype != DType::f32 || t->dims != want) {
            problems += concat("\n  ", p->name, ": checkpoint ", Checkpoint::dims_str(t->dims), " vs model ",
                               Checkpoint::dims_str(want));
        }
    }
    if (!problems.empty()) throw CheckpointError("checkpoint incompatible with model:" + problems);
    for (auto* p : params) {
        const auto v = ck.get_f32(p->name, p->shape);
        for (std::size_t i = 0; i < v.size(); ++i) p->value[i] = static_cast<T>(v[i]);
    }
}

template <typename T>
Checkpoint make_checkpoint(FrDiffModel<T>& m, int stage, int epoch, const Rng& rng, const Adam<T>* gen_opt,
                           const Adam<T>* disc_opt) {
    Checkpoint ck;
    ck.put_u64("meta.stage", static_cast<std::uint64_t>(stage));
    ck.put_u64("meta.epoch", static_cast<std::uint64_t>(epoch));
    ck.put_text("meta.config", serialize_config(m.cfg));
    ck.put_text("meta.rng", rng_state(rng));
    put_params(ck, m.all_params());
    if (gen_opt) put_adam(ck, "adam.gen.", *gen_opt);
    if (disc_opt) put_adam(ck, "adam.disc.", *disc_opt);
    return ck;
}

/// Rebuilds a model from a checkpoint's config snapshot and parameters.
template <typename T = float>
FrDiffModel<T> model_from_checkpoint(const Checkpoint& ck) {
    const TrainConfig cfg = parse_config(ck.get_text("meta.config"), "checkpoint config");
    FrDiffModel<T> m(cfg, ck.has_prefix("den."));
    load_params(ck, m.all_params());
    return m;
}

// ---------------------------------------------------------------------------
// Training
// ---------------------------------------------------------------------------

struct StepLog {
    int epoch = 0, step = 0;
    double gan = 0, nce = 0, diff = 0, total = 0;
};

inline std::string loss_csv(const std::vector<StepLog>& log) {
    std::ostringstream os;
    os.precision(9);
    os << "epoch,step,l_gan,l_nce,l_diff,total\n";
    for (const auto& r : log)
        os << r.epoch << "," << r.step << "," << r.gan << "," << r.nce << "," << r.diff << "," << r.total << "\n";
    return os.str();
}

/// Per-epoch means of a log column.
inline std::vector<double> epoch_means(const std::vector<StepLog>& log, double StepLog::*field) {
    std::vector<double> sum, cnt;
    for (const auto& r : log) {
        if (static_cast<int>(sum.size()) <= r.epoch) sum.resize(r.epoch + 1, 0.0), cnt.resize(r.epoch + 1, 0.0);
        sum[r.epoch] += r.*field;
        cnt[r.epoch] += 1;
    }
    for (std::size_t i = 0; i < sum.size(); ++i) sum[i] = cnt[i] > 0 ? sum[i] / cnt[i] : 0.0;
    return sum;
}

struct TrainHooks {
    std::function<void(int epoch, const Checkpoint&)> on_epoch_end;
    std::function<void(const StepLog&)> on_step;
};

struct TrainResult {
    Checkpoint checkpoint;
    std::vector<StepLog> log;
};

class TrainingAborted : public NumericError {
public:
    TrainingAborted(const std::string& what, std::vector<StepLog> partial) : NumericError(what), log(std::move(partial)) {}
    std::vector<StepLog> log;
};

namespace detail {

inline Rng stage_rng(std::uint64_t seed, int stage) {
    std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                      static_cast<std::uint32_t>(stage), 0xF4D1u};
    return Rng(seq);
}

template <typename T>
bool finite(const T& v) {
    return std::isfinite(static_cast<double>(v));
}

} // namespace detail

/// One generator step plus one discriminator step on a batch. Returns mean loss terms.
template <typename T>
LossTerms train_step(FrDiffModel<T>& m, int stage, const std::vector<Tensor3<T>>& hazy,
                     const std::vector<Tensor3<T>>& clear, Adam<T>& gen_opt, Adam<T>& disc_opt, Rng& rng) {
    const LossWeights w = m.cfg.weights();
    const double inv_b = 1.0 / static_cast<double>(hazy.size());
    const NoiseSchedule sched = m.cfg.schedule();
    gen_opt.zero_grad();
    disc_opt.zero_grad();
    LossTerms terms;
    std::vector<Tensor3<T>> outputs;
    for (std::size_t b = 0; b < hazy.size(); ++b) {
        const auto [fh, aph] = m.net.encode_features(hazy[b]);
        const auto [fc, apc] = m.net.encode_features(clear[b]);
        const Tensor3<T> z = amplitude_residual(aph.amplitude, apc.amplitude, m.cfg.stats());
        Tensor3<T> z_in = z, g_diff;
        ChainCache<T> chain;
        if (stage == 2) {
            const Tensor3<T> cond = amplitude_condition(aph.amplitude);
            const Tensor3<T> eps = normal_like(z, rng);
            const Tensor3<T> z_T = forward_diffuse(z, sched, eps);
            const auto noises = draw_step_noises(z, sched, rng);
            z_in = run_chain(z_T, cond, sched, m.den, noises, &chain);
            terms.diff += inv_b * diffusion_loss(z, z_in, &g_diff);
        }
        typename DehazeNet<T>::Cache cache;
        Tensor3<T> out = m.net.forward(hazy[b], z_in, cache);
        typename Discriminator<T>::Cache dc;
        const Tensor3<T> logits = m.disc.forward(out, dc);
        Tensor3<T> g_logits;
        terms.gan += inv_b * lsgan_g_loss(logits, &g_logits);
        g_logits *= static_cast<T>(w.gan * inv_b);
        Tensor3<T> g_out = m.disc.backward(g_logits, dc);
        terms.nce += inv_b * m.nce.loss(m.net, out, hazy[b], rng, &g_out, w.nce * inv_b);
        auto grads = m.net.backward(g_out, cache);
        if (stage == 2) {
            g_diff *= static_cast<T>(w.diff * inv_b);
            grads.z += g_diff;
            chain_backward(grads.z, sched, m.den, chain);
        }
        outputs.push_back(std::move(out));
    }
    const double total = stage == 2 ? terms.stage2(w) : terms.stage1(w);
    if (!std::isfinite(total)) throw NumericError(concat("non-finite loss (gan ", terms.gan, ", nce ", terms.nce, ", diff ", terms.diff, ")"));
    disc_opt.zero_grad();  // generator step must not move the discriminator
    gen_opt.step();

    for (std::size_t b = 0; b < hazy.size(); ++b) {
        typename Discriminator<T>::Cache rc, fc;
        const Tensor3<T> real = m.disc.forward(clear[b], rc);
        const Tensor3<T> fake = m.disc.forward(outputs[b], fc);
        Tensor3<T> gr, gf;
        const double ld = lsgan_d_loss(real, fake, &gr, &gf);
        if (!std::isfinite(ld)) throw NumericError(concat("non-finite discriminator loss ", ld));
        gr *= static_cast<T>(inv_b);
        gf *= static_cast<T>(inv_b);
        m.disc.backward(gr, rc);
        m.disc.backward(gf, fc);
    }
    disc_opt.step();
    return terms;
}

/// Runs one training stage. Stage 1 starts from a fresh model; stage 2 requires the
/// stage-1 checkpoint, copies its dehazing/discriminator/NCE weights and adds a fresh
/// denoiser. Non-finite losses abort with TrainingAborted (the hook has already seen
/// the last good epoch checkpoint).
template <typename T = float>
TrainResult train_stage(const TrainConfig& cfg, const ImagePool& hazy, const ImagePool& clear,
                        const Checkpoint* stage1 = nullptr, const TrainHooks& hooks = {}) {
    validate(cfg);
    if (hazy.size() == 0 || clear.size() == 0) throw DataError("training: hazy and clear sets must be non-empty");
    hazy.require_patch(cfg.patch);
    clear.require_patch(cfg.patch);
    const int stage = cfg.stage;
    Rng rng = detail::stage_rng(cfg.seed, stage);
    FrDiffModel<T> m(cfg, stage == 2);
    m.init(rng);
    if (stage == 2) {
        if (!stage1) throw UsageError("stage 2 requires a stage-1 checkpoint");
        if (stage1->get_u64("meta.stage") != 1)
            throw CheckpointError(concat("stage 2 init: checkpoint is from stage ", stage1->get_u64("meta.stage")));
        ParamList<T> shared;
        m.net.collect(shared);
        m.nce.collect(shared);
        m.disc.collect(shared);
        load_params(*stage1, shared);
    }
    Adam<T> gen_opt(m.generator_params(), AdamHyper{cfg.lr, 0.9, 0.999, 1e-8});
    Adam<T> disc_opt(m.discriminator_params(), AdamHyper{cfg.d_lr, 0.9, 0.999, 1e-8});

    std::vector<StepLog> log;
    const std::size_t n = hazy.size();
    const int steps_per_epoch = std::max<int>(1, static_cast<int>(n) / cfg.batch);
    for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
        std::vector<std::size_t> order(n);
        std::iota(order.begin(), order.end(), 0);
        std::shuffle(order.begin(), order.end(), rng);
        for (int s = 0; s < steps_per_epoch; ++s) {
            std::vector<std::size_t> ids;
            for (int b = 0; b < cfg.batch; ++b) ids.push_back(order[(static_cast<std::size_t>(s) * cfg.batch + b) % n]);
            const UnpairedBatch batch = sample_unpaired_batch(hazy, clear, cfg.batch, cfg.patch, rng, ids);
            std::vector<Tensor3<T>> hb, cb;
            for (const auto& t : batch.hazy) hb.push_back(t.template cast<T>());
            for (const auto& t : batch.clear) cb.push_back(t.template cast<T>());
            LossTerms terms;
            try {
                terms = train_step(m, stage, hb, cb, gen_opt, disc_opt, rng);
            } catch (const NumericError& e) {
                throw TrainingAborted(concat("training aborted at epoch ", epoch, " step ", s, ": ", e.what()), log);
            }
            StepLog row{epoch, s, terms.gan, terms.nce, terms.diff,
                        stage == 2 ? terms.stage2(cfg.weights()) : terms.stage1(cfg.weights())};
            log.push_back(row);
            if (hooks.on_step) hooks.on_step(row);
        }
        if (hooks.on_epoch_end) hooks.on_epoch_end(epoch, make_checkpoint(m, stage, epoch + 1, rng, &gen_opt, &disc_opt));
    }
    return {make_checkpoint(m, stage, cfg.epochs, rng, &gen_opt, &disc_opt), std::move(log)};
}

// ---------------------------------------------------------------------------
// Inference
// ---------------------------------------------------------------------------

/// Samples a residual from the denoiser conditioned on the input's amplitude and runs
/// the dehazing network with it.
template <typename T>
Tensor3<T> infer(const FrDiffModel<T>& m, const Tensor3<T>& hazy, std::uint64_t seed) {
    if (!m.has_denoiser)
        throw DataError("inference needs a stage-2 checkpoint: this checkpoint has no denoiser");
    Rng rng(seed);
    const auto [f, ap] = m.net.encode_features(hazy);
    const Tensor3<T> z_hat = sample(amplitude_condition(ap.amplitude), m.cfg.schedule(), m.den, rng);
    return m.net.forward(hazy, z_hat);
}

/// Per-item seed so outputs do not depend on processing order.
inline std::uint64_t item_seed(std::uint64_t seed, std::size_t index) {
    std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                      static_cast<std::uint32_t>(index), 0x1AFEu};
    std::uint32_t out[2];
    seq.generate(out, out + 2);
    return (static_cast<std::uint64_t>(out[0]) << 32) | out[1];
}

/// Applies f to 0..n-1 on worker threads; results land at their own index.
template <typename R, typename F>
std::vector<R> parallel_map(std::size_t n, F f, unsigned workers = std::thread::hardware_concurrency()) {
    std::vector<R> out(n);
    workers = std::max(1u, std::min<unsigned>(workers, static_cast<unsigned>(n)));
    if (workers <= 1) {
        for (std::size_t i = 0; i < n; ++i) out[i] = f(i);
        return out;
    }
    std::vector<std::exception_ptr> errors(n);
    std::vector<std::thread> pool;
    for (unsigned w = 0; w < workers; ++w)
        pool.emplace_back([&, w] {
            for (std::size_t i = w; i < n; i += workers) {
                try {
                    out[i] = f(i);
                } catch (...) {
                    errors[i] = std::current_exception();
                }
            }
        });
    for (auto& t : pool) t.join();
    for (auto& e : errors)
        if (e) std::rethrow_exception(e);
    return out;
}

// ---------------------------------------------------------------------------
// Held-out evaluation and loss-weight sweep
// ---------------------------------------------------------------------------

struct EvalRow {
    double psnr_in = 0, psnr_out = 0, ssim_in = 0, ssim_out = 0;
};

struct EvalSummary {
    std::vector<EvalRow> rows;
    EvalRow mean;
};

/// Dehazes each input (per-item seeds) and scores input and output against references.
template <typename T>
EvalSummary evaluate_model(const FrDiffModel<T>& m, const std::vector<Tensor3<float>>& hazy,
                           const std::vector<Tensor3<float>>& ref, std::uint64_t seed) {
    if (hazy.size() != ref.size() || hazy.empty())
        throw DataError(concat("evaluate: ", hazy.size(), " inputs vs ", ref.size(), " references"));
    EvalSummary s;
    s.rows = parallel_map<EvalRow>(hazy.size(), [&](std::size_t i) {
        const Tensor3<float> out = infer(m, hazy[i].template cast<T>(), item_seed(seed, i)).template cast<float>();
        return EvalRow{psnr(hazy[i], ref[i]), psnr(out, ref[i]), ssim(hazy[i], ref[i]), ssim(out, ref[i])};
    });
    const double n = static_cast<double>(s.rows.size());
    for (const auto& r : s.rows) {
        s.mean.psnr_in += r.psnr_in / n;
        s.mean.psnr_out += r.psnr_out / n;
        s.mean.ssim_in += r.ssim_in / n;
        s.mean.ssim_out += r.ssim_out / n;
    }
    return s;
}

struct SweepRow {
    std::string weight;  // lambda_gan, lambda_nce or lambda_diff
    double value = 0;
    double stage1_final = 0, diff_final = 0;
    double psnr = 0, ssim = 0;
};

/// Trains both stages once per (weight, value), varying one weight at a time from `base`.
template <typename T = float>
std::vector<SweepRow> run_lambda_sweep(const TrainConfig& base, const ImagePool& hazy, const ImagePool& clear,
                                       const std::vector<Tensor3<float>>& eval_hazy,
                                       const std::vector<Tensor3<float>>& eval_ref,
                                       const std::vector<double>& values = {0.1, 1.0, 10.0},
                                       const std::function<void(const SweepRow&)>& on_row = {}) {
    std::vector<SweepRow> rows;
    for (const char* weight : {"lambda_gan", "lambda_nce", "lambda_diff"}) {
        for (double v : values) {
            TrainConfig c = base;
            if (std::string(weight) == "lambda_gan") c.lambda_gan = v;
            else if (std::string(weight) == "lambda_nce") c.lambda_nce = v;
            else c.lambda_diff = v;
            c.stage = 1;
            const TrainResult r1 = train_stage<T>(c, hazy, clear);
            c.stage = 2;
            const TrainResult r2 = train_stage<T>(c, hazy, clear, &r1.checkpoint);
            const FrDiffModel<T> m = model_from_checkpoint<T>(r2.checkpoint);
            const EvalSummary e = evaluate_model(m, eval_hazy, eval_ref, c.seed);
            SweepRow row{weight, v, epoch_means(r1.log, &StepLog::total).back(),
                         epoch_means(r2.log, &StepLog::diff).back(), e.mean.psnr_out, e.mean.ssim_out};
            if (on_row) on_row(row);
            rows.push_back(row);
        }
    }
    return rows;
}

inline std::string sweep_csv(const std::vector<SweepRow>& rows) {
    std::ostringstream os;
    os << "weight,value,stage1_final,diff_final,psnr,ssim\n";
    for (const auto& r : rows)
        os << r.weight << "," << r.value << "," << format_metric(r.stage1_final) << "," << format_metric(r.diff_final)
           << "," << format_metric(r.psnr) << "," << format_metric(r.ssim) << "\n";
    return os.str();
}

/// Per weight, the values ordered by mean PSNR (best first), e.g. "lambda_gan: 1 > 10 > 0.1".
inline std::vector<std::string> sweep_orderings(const std::vector<SweepRow>& rows) {
    std::vector<std::string> out;
    for (const char* weight : {"lambda_gan", "lambda_nce", "lambda_diff"}) {
        std::vector<SweepRow> sel;
        for (const auto& r : rows)
            if (r.weight == weight) sel.push_back(r);
        if (sel.empty()) continue;
        std::stable_sort(sel.begin(), sel.end(), [](const SweepRow& a, const SweepRow& b) { return a.psnr > b.psnr; });
        std::ostringstream os;
        os << weight << ":";
        for (std::size_t i = 0; i < sel.size(); ++i) os << (i ? " > " : " ") << sel[i].value;
        out.push_back(os.str());
    }
    return out;
}

} // namespace frdiff
