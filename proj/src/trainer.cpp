#include "cabr/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <thread>

#include "cabr/eval.hpp"

namespace cabr {

std::string synth_mode_name(SynthMode m) {
    return m == SynthMode::AdBma ? "adbma" : "gauss";
}

SynthMode synth_mode_from_name(const std::string& name) {
    if (name == "adbma") return SynthMode::AdBma;
    if (name == "gauss") return SynthMode::Gauss;
    throw ArgumentError("unknown synth mode '" + name + "' (want adbma|gauss)");
}

void TrainConfig::validate() const {
    if (epochs < 0 || steps_per_epoch < 1 || batch_size < 1) {
        throw ArgumentError("TrainConfig: epochs >= 0, steps_per_epoch >= 1, batch_size >= 1");
    }
    if (patch_h % 4 != 0 || patch_w % 4 != 0 || patch_h < 8 || patch_w < 8) {
        throw ArgumentError("TrainConfig: patch dims must be divisible by 4 and >= 8");
    }
    if (stripe_width_min < 0 || stripe_width_min > stripe_width_max ||
        stripe_width_max >= patch_h) {
        throw ArgumentError("TrainConfig: stripe width range must fit within patch_h");
    }
    if (lr <= 0.0 || plateau_patience < 1 || val_patches < 1) {
        throw ArgumentError("TrainConfig: lr > 0, plateau_patience >= 1, val_patches >= 1");
    }
    synth.validate();
}

std::vector<TrainItem> load_train_items(const std::vector<CorpusItem>& corpus) {
    std::vector<TrainItem> items;
    items.reserve(corpus.size());
    for (const auto& c : corpus) {
        TrainItem item;
        item.id = c.id;
        item.image = load_image_pgm(c.image_path);
        item.mask = load_mask_pgm(c.mask_path);
        item.labels = load_labels(c.label_path);
        if (item.mask.height != item.image.height || item.mask.width != item.image.width) {
            throw FormatError(c.id + ": mask and image shapes differ");
        }
        if (item.labels.size() != item.image.height) {
            throw FormatError(c.id + ": label count != image height");
        }
        items.push_back(std::move(item));
    }
    return items;
}

namespace {

template <typename Grid>
Grid crop(const Grid& src, int y0, int x0, int h, int w) {
    Grid out(h, w);
    for (int y = 0; y < h; ++y) {
        std::copy_n(src.data.begin() + static_cast<std::size_t>(y0 + y) * src.width + x0, w,
                    out.data.begin() + static_cast<std::size_t>(y) * w);
    }
    return out;
}

void flip_tensor_x(Tensor& t) {
    for (int i = 0; i < t.n; ++i) {
        for (int c = 0; c < t.c; ++c) {
            for (int y = 0; y < t.h; ++y) {
                float* row = &t.at(i, c, y, 0);
                std::reverse(row, row + t.w);
            }
        }
    }
}

void flip_tensor_y(Tensor& t) {
    std::vector<float> tmp(t.w);
    for (int i = 0; i < t.n; ++i) {
        for (int c = 0; c < t.c; ++c) {
            for (int y = 0; y < t.h / 2; ++y) {
                float* a = &t.at(i, c, y, 0);
                float* b = &t.at(i, c, t.h - 1 - y, 0);
                std::copy_n(a, t.w, tmp.data());
                std::copy_n(b, t.w, a);
                std::copy_n(tmp.data(), t.w, b);
            }
        }
    }
}

}  // namespace

TrainSample extract_training_patch(const CabrNet& net, const TrainItem& item,
                                   const TrainConfig& cfg, Rng& rng) {
    const int ph = cfg.patch_h;
    const int pw = cfg.patch_w;
    if (item.image.height < ph || item.image.width < pw) {
        throw SamplingError(item.id + ": image smaller than the " + std::to_string(ph) + "x" +
                            std::to_string(pw) + " patch");
    }
    std::uniform_int_distribution<int> ydist(0, item.image.height - ph);
    std::uniform_int_distribution<int> xdist(0, item.image.width - pw);
    int y0 = -1, x0 = -1;
    for (int attempt = 0; attempt < 1000; ++attempt) {
        const int y = ydist(rng);
        bool clear = true;
        for (int r = 0; r < ph; ++r) {
            if (item.labels.labels[y + r]) {
                clear = false;
                break;
            }
        }
        if (clear) {
            y0 = y;
            x0 = xdist(rng);
            break;
        }
    }
    if (y0 < 0) {
        throw SamplingError(item.id + ": no clear " + std::to_string(ph) +
                            "-row window found in 1000 tries");
    }

    const OctaImage clean = crop(item.image, y0, x0, ph, pw);
    const VesselMask mask = crop(item.mask, y0, x0, ph, pw);

    TrainSample sample;
    sample.stripe = sample_center_stripe(ph, cfg.stripe_width_min, cfg.stripe_width_max, rng);
    OctaImage corrupted;
    if (cfg.synth_mode == SynthMode::AdBma) {
        const Breakpoints bp = compute_breakpoints(clean, cfg.synth);
        corrupted = adbma_stripe(clean, sample.stripe, bp, cfg.synth.sigma, rng);
    } else {
        corrupted = gauss_stripe(clean, sample.stripe, cfg.synth.sigma,
                                 gauss_default_offset(clean), rng);
    }

    sample.input = assemble_for(net, mask, corrupted, sample.stripe, AssembleMode::Train);
    sample.target = Tensor(1, 1, ph, pw);
    sample.loss_weight = Tensor(1, 1, ph, pw);
    for (int y = 0; y < ph; ++y) {
        const bool in_stripe = sample.stripe.labels[y] != 0;
        for (int x = 0; x < pw; ++x) {
            sample.target.at(0, 0, y, x) = static_cast<float>(mask.at(y, x));
            sample.loss_weight.at(0, 0, y, x) = (!cfg.loss_stripe_only || in_stripe) ? 1.f : 0.f;
        }
    }
    return sample;
}

void augment(TrainSample& sample, Rng& rng) {
    std::bernoulli_distribution coin(0.5);
    if (coin(rng)) {
        flip_tensor_x(sample.input);
        flip_tensor_x(sample.target);
        flip_tensor_x(sample.loss_weight);
    }
    if (coin(rng)) {
        flip_tensor_y(sample.input);
        flip_tensor_y(sample.target);
        flip_tensor_y(sample.loss_weight);
        std::reverse(sample.stripe.labels.begin(), sample.stripe.labels.end());
    }
}

double PlateauScheduler::observe(double metric) {
    if (metric > best) {
        best = metric;
        bad_epochs = 0;
    } else if (++bad_epochs >= patience) {
        lr *= 0.5;
        bad_epochs = 0;
    }
    return lr;
}

namespace {

// Stripe-restricted Dice of thresholded probabilities against the target.
double val_patch_dice(const Tensor& prob, const Tensor& target, const RowLabels& stripe,
                      float threshold) {
    long long inter = 0, p_sum = 0, t_sum = 0;
    for (int y = 0; y < prob.h; ++y) {
        if (!stripe.labels[y]) {
            continue;
        }
        for (int x = 0; x < prob.w; ++x) {
            const int p = prob.at(0, 0, y, x) > threshold ? 1 : 0;
            const int t = target.at(0, 0, y, x) > 0.5f ? 1 : 0;
            inter += p & t;
            p_sum += p;
            t_sum += t;
        }
    }
    if (p_sum == 0 && t_sum == 0) {
        return 1.0;
    }
    if (p_sum == 0 || t_sum == 0) {
        return 0.0;
    }
    return 2.0 * static_cast<double>(inter) / static_cast<double>(p_sum + t_sum);
}

}  // namespace

TrainReport fit(CabrNet& net, const std::vector<TrainItem>& dataset, const TrainConfig& cfg) {
    cfg.validate();
    if (dataset.empty()) {
        throw ArgumentError("fit: empty dataset");
    }

    Rng init_rng(cfg.seed);
    net.init(init_rng);
    auto refs = net.param_refs();
    const std::size_t p_total = param_count(refs);

    // Fixed held-out synthetic-stripe patches drive the plateau schedule.
    Rng val_rng(cfg.seed ^ 0x9e3779b97f4a7c15ull);
    std::vector<TrainSample> val_set;
    std::uniform_int_distribution<std::size_t> img_dist(0, dataset.size() - 1);
    for (int i = 0; i < cfg.val_patches; ++i) {
        val_set.push_back(extract_training_patch(net, dataset[img_dist(val_rng)], cfg, val_rng));
    }

    const int threads = std::max(1, cfg.threads);
    AdamState adam(p_total);
    PlateauScheduler sched{cfg.lr, cfg.plateau_patience};
    TrainReport report;
    std::vector<float> best_params;
    double lr = cfg.lr;

    Rng master(cfg.seed + 1);
    std::vector<float> grads(p_total);
    std::vector<std::vector<float>> sample_grads(cfg.batch_size);
    std::vector<double> sample_losses(cfg.batch_size);
    std::vector<std::uint64_t> sample_seeds(cfg.batch_size);

    auto run_parallel = [&](int count, const std::function<void(int, Workspace&)>& work) {
        if (threads <= 1 || count <= 1) {
            Workspace ws;
            for (int i = 0; i < count; ++i) {
                work(i, ws);
            }
            return;
        }
        const int t = std::min(threads, count);
        std::vector<std::thread> pool;
        std::vector<std::exception_ptr> errors(t);
        for (int ti = 0; ti < t; ++ti) {
            pool.emplace_back([&, ti]() {
                try {
                    Workspace ws;
                    for (int i = ti; i < count; i += t) {
                        work(i, ws);
                    }
                } catch (...) {
                    errors[ti] = std::current_exception();
                }
            });
        }
        for (auto& th : pool) {
            th.join();
        }
        for (auto& e : errors) {
            if (e) {
                std::rethrow_exception(e);
            }
        }
    };

    for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
        double epoch_loss = 0.0;
        for (int step = 0; step < cfg.steps_per_epoch; ++step) {
            for (int i = 0; i < cfg.batch_size; ++i) {
                sample_seeds[i] = master();
            }
            run_parallel(cfg.batch_size, [&](int i, Workspace& ws) {
                Rng srng(sample_seeds[i]);
                std::uniform_int_distribution<std::size_t> pick(0, dataset.size() - 1);
                TrainSample sample = extract_training_patch(net, dataset[pick(srng)], cfg, srng);
                augment(sample, srng);

                NetCache cache;
                const Tensor prob = cabr_forward(net, sample.input, cache, ws);
                std::vector<float> gvals;
                sample_losses[i] = dice_loss(prob, sample.target, sample.loss_weight, &gvals);
                Tensor gprob(1, 1, prob.h, prob.w);
                const float scale = 1.f / static_cast<float>(cfg.batch_size);
                for (std::size_t j = 0; j < gvals.size(); ++j) {
                    gprob.values[j] = gvals[j] * scale;
                }
                sample_grads[i].assign(p_total, 0.f);
                cabr_backward(net, cache, gprob, ws, sample_grads[i]);
            });
            // Reduce in sample order so results match the single-threaded run.
            std::fill(grads.begin(), grads.end(), 0.f);
            double batch_loss = 0.0;
            for (int i = 0; i < cfg.batch_size; ++i) {
                if (!std::isfinite(sample_losses[i])) {
                    throw NumericalError("fit: non-finite loss at epoch " + std::to_string(epoch) +
                                         " step " + std::to_string(step) + ", batch seed " +
                                         std::to_string(sample_seeds[i]));
                }
                batch_loss += sample_losses[i];
                const float* src = sample_grads[i].data();
                for (std::size_t j = 0; j < p_total; ++j) {
                    grads[j] += src[j];
                }
            }
            batch_loss /= cfg.batch_size;
            epoch_loss += batch_loss;
            adam.apply(refs, grads, lr);
        }
        epoch_loss /= cfg.steps_per_epoch;

        std::vector<double> val_dices(val_set.size());
        run_parallel(static_cast<int>(val_set.size()), [&](int i, Workspace& ws) {
            NetCache cache;
            const Tensor prob = cabr_forward(net, val_set[i].input, cache, ws);
            val_dices[i] = val_patch_dice(prob, val_set[i].target, val_set[i].stripe,
                                          net.cfg.threshold);
        });
        double val_dice = 0.0;
        for (double d : val_dices) {
            val_dice += d;
        }
        val_dice /= static_cast<double>(val_set.size());

        report.log.push_back({epoch, lr, epoch_loss, val_dice});
        if (val_dice > report.best_val_dice) {
            report.best_val_dice = val_dice;
            report.best_epoch = epoch;
            best_params.resize(p_total);
            std::size_t off = 0;
            for (const auto& r : refs) {
                std::copy_n(r.value, r.count, best_params.begin() + off);
                off += r.count;
            }
        }
        lr = sched.observe(val_dice);
    }

    if (!best_params.empty()) {
        std::size_t off = 0;
        for (const auto& r : refs) {
            std::copy_n(best_params.begin() + off, r.count, r.value);
            off += r.count;
        }
    }
    if (!cfg.log_path.empty()) {
        write_train_log(report, cfg.log_path);
    }
    if (!cfg.checkpoint_path.empty()) {
        save_checkpoint(net, cfg.checkpoint_path);
    }
    return report;
}

void write_train_log(const TrainReport& report, const std::string& path) {
    std::ofstream out(path, std::ios::trunc);
    if (!out) {
        throw IoError(path + ": cannot open for writing");
    }
    out << "epoch,lr,train_loss,val_dice\n";
    char buf[128];
    for (const auto& row : report.log) {
        std::snprintf(buf, sizeof(buf), "%d,%.8g,%.6f,%.6f\n", row.epoch, row.lr, row.train_loss,
                      row.val_dice);
        out << buf;
    }
    if (!out) {
        throw IoError(path + ": write failed");
    }
}

}  // namespace cabr
