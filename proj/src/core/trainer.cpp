#include "core/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iostream>
#include <set>
#include <sstream>

#include "core/checkpoint.hpp"
#include "core/dataset.hpp"
#include "core/motion.hpp"
#include "core/ops.hpp"

namespace vsod {

namespace fs = std::filesystem;

namespace {

constexpr const char* kConfigKey = "meta.config";
constexpr const char* kProgressKey = "opt.progress";  // step, epoch, stage

std::vector<NamedBuffer> model_buffers(const Model& model) {
    std::vector<NamedBuffer> buffers;
    buffers.push_back({kConfigKey, {int(model.config().fingerprint().size())}, model.config().fingerprint()});
    for (const Tensor& p : model.params().params()) {
        buffers.push_back({p.name(), p.shape(), {p.data().begin(), p.data().end()}});
    }
    return buffers;
}

void save_train_checkpoint(const fs::path& path, const Model& model, const Adam& adam, long step,
                           int epoch, int stage) {
    std::vector<NamedBuffer> buffers = model_buffers(model);
    buffers.push_back({kProgressKey, {3}, {float(step), float(epoch), float(stage)}});
    const auto& params = adam.params();
    for (std::size_t i = 0; i < params.size(); ++i) {
        buffers.push_back({"opt.m." + params[i].name(), params[i].shape(), adam.first_moment(i)});
        buffers.push_back({"opt.v." + params[i].name(), params[i].shape(), adam.second_moment(i)});
    }
    write_checkpoint(path, buffers);
}

const NamedBuffer* find_buffer(const std::vector<NamedBuffer>& buffers, const std::string& name) {
    for (const auto& b : buffers) {
        if (b.name == name) return &b;
    }
    return nullptr;
}

void check_fingerprint(const Model& model, const std::vector<NamedBuffer>& buffers, const fs::path& src) {
    const NamedBuffer* cfg = find_buffer(buffers, kConfigKey);
    if (!cfg) throw std::runtime_error(src.string() + ": checkpoint carries no config fingerprint");
    if (cfg->data != model.config().fingerprint()) {
        throw std::runtime_error(src.string() + ": config fingerprint does not match this model");
    }
}

void load_params_into(Model& model, const std::vector<NamedBuffer>& buffers, const fs::path& src) {
    check_fingerprint(model, buffers, src);
    for (Tensor& p : const_cast<std::vector<Tensor>&>(model.params().params())) {
        const NamedBuffer* b = find_buffer(buffers, p.name());
        if (!b) throw std::runtime_error(src.string() + ": checkpoint is missing parameter '" + p.name() + "'");
        if (b->shape != p.shape()) {
            throw std::runtime_error(src.string() + ": shape mismatch for parameter '" + p.name() + "'");
        }
        std::copy(b->data.begin(), b->data.end(), p.mutable_data().begin());
    }
}

// one training example: a clip position within a video
struct PlanItem {
    std::size_t video = 0;
    int start = 1;
};

std::vector<PlanItem> epoch_plan(const std::vector<VideoRef>& videos, const TrainConfig& cfg, Rng& rng) {
    std::vector<PlanItem> plan;
    const int T = cfg.stage == 1 ? 1 : cfg.clip_len;
    if (cfg.stage == 1) {
        for (std::size_t v = 0; v < videos.size(); ++v) {
            for (int f = 1; f <= videos[v].num_frames; ++f) plan.push_back({v, f});
        }
    } else {
        for (std::size_t v = 0; v < videos.size(); ++v) {
            const int max_start = videos[v].num_frames - T + 1;
            if (max_start < 1) {
                throw std::runtime_error("video " + videos[v].id + " is shorter than the clip length");
            }
            for (int k = 0; k < cfg.clips_per_video; ++k) {
                plan.push_back({v, rng.uniform_int(1, max_start)});
            }
        }
    }
    // Fisher-Yates with the epoch stream
    for (std::size_t i = plan.size(); i > 1; --i) {
        std::swap(plan[i - 1], plan[std::size_t(rng.uniform_int(0, int(i) - 1))]);
    }
    return plan;
}

double grad_global_norm(const std::vector<Tensor>& params) {
    double acc = 0.0;
    for (const Tensor& p : params) {
        if (!p.has_grad()) continue;
        for (double g : p.grad()) acc += g * g;
    }
    return std::sqrt(acc);
}

void scale_grads(std::vector<Tensor>& params, double factor) {
    for (Tensor& p : params) {
        if (!p.has_grad()) continue;
        Tensor t = p;
        auto node = t.node();
        for (double& g : node->grad) g *= factor;
    }
}

} // namespace

TrainResult train_model(Model& model, const fs::path& data_root, const TrainConfig& cfg,
                        const fs::path& checkpoint_path, const fs::path& log_csv,
                        const std::optional<fs::path>& resume_from) {
    if (cfg.stage != 1 && cfg.stage != 2) throw std::invalid_argument("train: stage must be 1 or 2");
    if (cfg.stage == 2 && cfg.clip_len < 2 && !cfg.no_motion) {
        std::cerr << "warning: stage 2 with T < 2, motion term contributes nothing\n";
    }

    const std::vector<VideoRef> videos = open_dataset(data_root, /*require_masks=*/true);
    const int T = cfg.stage == 1 ? 1 : cfg.clip_len;

    Adam adam(model.params().params());
    std::vector<double> lr_scale;  // empty = uniform
    long step = 0;
    int start_epoch = 0;

    if (resume_from) {
        const auto buffers = read_checkpoint(*resume_from);
        const NamedBuffer* progress = find_buffer(buffers, kProgressKey);
        const int stored_stage = progress ? int(progress->data[2]) : 1;
        load_params_into(model, buffers, *resume_from);
        if (stored_stage == cfg.stage) {
            // continuation: restore the optimizer and keep counting epochs
            if (progress) {
                step = long(progress->data[0]);
                start_epoch = int(progress->data[1]);
            }
            adam.set_step_count(step);
            const auto& params = adam.params();
            for (std::size_t i = 0; i < params.size(); ++i) {
                const NamedBuffer* m = find_buffer(buffers, "opt.m." + params[i].name());
                const NamedBuffer* v = find_buffer(buffers, "opt.v." + params[i].name());
                if (m && v) adam.load_moments(i, m->data, v->data);
            }
        } else if (stored_stage == 1 && cfg.stage == 2) {
            // fresh optimizer; stage-1-trained weights move at a reduced rate,
            // the motion head (untrained so far) at the full rate
            lr_scale.assign(model.params().params().size(), cfg.pretrained_lr_scale);
            const auto& params = model.params().params();
            for (std::size_t i = 0; i < params.size(); ++i) {
                if (params[i].name().rfind("motion.", 0) == 0) lr_scale[i] = 1.0;
            }
        } else {
            throw std::runtime_error("cannot start stage " + std::to_string(cfg.stage) +
                                     " from a stage-" + std::to_string(stored_stage) + " checkpoint");
        }
    }

    std::ofstream log;
    if (!log_csv.empty()) {
        const bool fresh = step == 0 || !fs::exists(log_csv);
        if (log_csv.has_parent_path()) fs::create_directories(log_csv.parent_path());
        log.open(log_csv, fresh ? std::ios::trunc : std::ios::app);
        if (!log) throw std::runtime_error("cannot open training log " + log_csv.string());
        if (fresh) log << "step,l_bce,l_ssim,l_iou,l_motion,l_total\n";
    }

    Rng run_rng(cfg.seed);
    TrainResult result;
    const bool with_motion = cfg.stage == 2 && !cfg.no_motion && T >= 2;

    for (int epoch = start_epoch; epoch < cfg.epochs; ++epoch) {
        Rng epoch_rng = run_rng.fork(0x45504f43ull + std::uint64_t(epoch));
        const std::vector<PlanItem> plan = epoch_plan(videos, cfg, epoch_rng);
        const double lr = lr_at(epoch, cfg.base_lr, cfg.halve_every);

        double epoch_total = 0.0;
        int epoch_batches = 0;
        for (std::size_t at = 0; at < plan.size(); at += std::size_t(cfg.batch)) {
            const std::size_t batch_end = std::min(plan.size(), at + std::size_t(cfg.batch));

            std::vector<VideoClip> clips;
            clips.reserve(batch_end - at);
            for (std::size_t i = at; i < batch_end; ++i) {
                VideoClip clip = sample_clip(videos[plan[i].video], T, plan[i].start);
                if (cfg.augment) augment_clip(clip, epoch_rng);
                clips.push_back(std::move(clip));
            }

            // stack per time index across the batch
            std::vector<Tensor> frames, labels;
            for (int t = 0; t < T; ++t) {
                std::vector<const Image*> fr, ms;
                for (const VideoClip& c : clips) {
                    fr.push_back(&c.frames[std::size_t(t)]);
                    ms.push_back(&c.masks[std::size_t(t)]);
                }
                frames.push_back(frames_to_tensor(fr));
                labels.push_back(masks_to_tensor(ms));
            }

            std::vector<Tensor> motion_labels;
            if (with_motion) {
                for (const auto& [a, b] : clip_motion_pairs(T)) {
                    std::vector<Image> xors;
                    std::vector<const Image*> ptrs;
                    xors.reserve(clips.size());
                    for (const VideoClip& c : clips) {
                        xors.push_back(motion_label(c.masks[std::size_t(a - 1)], c.masks[std::size_t(b - 1)]));
                    }
                    for (const Image& m : xors) ptrs.push_back(&m);
                    motion_labels.push_back(masks_to_tensor(ptrs));
                }
            }

            model.params().zero_grads();
            Model::ClipResult out = model.forward_clip(frames, with_motion);
            ClipLoss loss = total_loss(out.saliency, labels, out.motion, motion_labels, cfg.stage);
            backward(loss.total);

            if (cfg.clip_grad > 0.0) {
                const double norm = grad_global_norm(model.params().params());
                if (norm > cfg.clip_grad) {
                    scale_grads(const_cast<std::vector<Tensor>&>(model.params().params()),
                                cfg.clip_grad / norm);
                }
            }
            adam.step(lr, lr_scale);

            ++step;
            result.last = loss.values;
            epoch_total += loss.values.total;
            ++epoch_batches;
            if (log.is_open()) {
                log << step << ',' << loss.values.bce << ',' << loss.values.ssim << ',' << loss.values.iou
                    << ',' << loss.values.motion << ',' << loss.values.total << '\n';
            }
        }

        if (!checkpoint_path.empty()) {
            save_train_checkpoint(checkpoint_path, model, adam, step, epoch + 1, cfg.stage);
        }
        if (cfg.verbose) {
            std::cout << "epoch " << (epoch + 1) << "/" << cfg.epochs << " stage " << cfg.stage << " lr "
                      << lr << " mean total loss " << (epoch_batches ? epoch_total / epoch_batches : 0.0)
                      << "\n";
        }
        result.epochs_run++;
    }
    result.steps = step;
    if (log.is_open()) log.flush();
    return result;
}

void save_model(const Model& model, const fs::path& path) {
    write_checkpoint(path, model_buffers(model));
}

std::unique_ptr<Model> load_model(const fs::path& path) {
    const auto buffers = read_checkpoint(path);
    const NamedBuffer* cfg_buf = find_buffer(buffers, kConfigKey);
    if (!cfg_buf) throw std::runtime_error(path.string() + ": checkpoint carries no config fingerprint");
    ModelConfig cfg = ModelConfig::from_fingerprint(cfg_buf->data);
    auto model = std::make_unique<Model>(cfg, /*seed=*/0);
    load_params_into(*model, buffers, path);
    return model;
}

namespace {

Tensor gather_rows(const std::vector<Tensor>& rows, const std::vector<int>& indices) {
    std::vector<Tensor> picked;
    picked.reserve(indices.size());
    for (int i : indices) picked.push_back(rows[std::size_t(i)]);
    return concat(std::span<const Tensor>(picked), 0);
}

} // namespace

void infer_video(const Model& model, const fs::path& video_dir, const fs::path& out_root,
                 const InferConfig& cfg) {
    if (cfg.batch < 1) throw std::invalid_argument("infer: batch must be >= 1");
    NoGradGuard no_grad;

    const VideoRef video = open_video(video_dir, /*require_masks=*/false);
    const int T = video.num_frames;
    const ModelConfig& mc = model.config();
    const fs::path out_dir = out_root / video.id;
    fs::create_directories(out_dir);

    Tensor prev_dcat;  // trailing frame of the previous chunk, for motion pairs

    for (int chunk_start = 1; chunk_start <= T; chunk_start += cfg.batch) {
        const int chunk_end = std::min(T, chunk_start + cfg.batch - 1);

        // everything this chunk touches: queries plus their memory frames
        std::set<int> needed;
        for (int t = chunk_start; t <= chunk_end; ++t) {
            needed.insert(t);
            for (int idx : memory_frame_indices(t, T, mc.memory_frames)) needed.insert(idx);
            const auto [p, n] = neighbor_indices(t, T);
            needed.insert(p);
            needed.insert(n);
        }
        std::vector<int> frame_ids(needed.begin(), needed.end());
        std::vector<int> original_h, original_w;
        std::vector<Image> images;
        images.reserve(frame_ids.size());
        for (int idx : frame_ids) images.push_back(load_frame(video, idx));
        std::vector<const Image*> ptrs;
        for (const Image& img : images) ptrs.push_back(&img);
        Tensor stacked = frames_to_tensor(ptrs);
        const int in_h = stacked.dim(2), in_w = stacked.dim(3);
        if (in_h != mc.height || in_w != mc.width) {
            stacked = bilinear_resize(stacked, mc.height, mc.width);
        }

        FeaturePyramid all = model.backbone().encode(stacked);
        std::array<std::vector<Tensor>, 5> rows;
        for (int l = 0; l < 5; ++l) {
            rows[std::size_t(l)] =
                split(all.level[std::size_t(l)], 0, std::vector<int>(frame_ids.size(), 1));
        }
        auto row_of = [&](int frame_id) {
            const auto it = std::lower_bound(frame_ids.begin(), frame_ids.end(), frame_id);
            return int(it - frame_ids.begin());
        };
        auto gather_pyramid = [&](const std::vector<int>& ids) {
            FeaturePyramid p;
            for (int l = 0; l < 5; ++l) {
                std::vector<int> r;
                for (int id : ids) r.push_back(row_of(id));
                p.level[std::size_t(l)] = gather_rows(rows[std::size_t(l)], r);
            }
            return p;
        };

        std::vector<int> queries, prevs, nexts;
        for (int t = chunk_start; t <= chunk_end; ++t) {
            queries.push_back(t);
            const auto [p, n] = neighbor_indices(t, T);
            prevs.push_back(p);
            nexts.push_back(n);
        }
        FeaturePyramid pyr_q = gather_pyramid(queries);
        FeaturePyramid pyr_p = gather_pyramid(mc.no_astm ? queries : prevs);
        FeaturePyramid pyr_n = gather_pyramid(mc.no_astm ? queries : nexts);

        Tensor temporal;
        if (!mc.no_astm) {
            // per-frame memory embeddings, assembled into per-query banks
            std::vector<Tensor> mem_keys_rows(frame_ids.size()), mem_vals_rows(frame_ids.size());
            for (std::size_t i = 0; i < frame_ids.size(); ++i) {
                FeaturePyramid single;
                single.level[4] = rows[4][i];
                KeyValue kv = model.astm().embed_memory(single.level[4]);
                mem_keys_rows[i] = kv.key;
                mem_vals_rows[i] = kv.value;
            }
            std::vector<Tensor> bank_keys, bank_vals;
            for (int t : queries) {
                std::vector<Tensor> ks, vs;
                for (int idx : memory_frame_indices(t, T, mc.memory_frames)) {
                    ks.push_back(mem_keys_rows[std::size_t(row_of(idx))]);
                    vs.push_back(mem_vals_rows[std::size_t(row_of(idx))]);
                }
                bank_keys.push_back(stack_memory(ks));
                bank_vals.push_back(stack_memory(vs));
            }
            Tensor keys = concat(std::span<const Tensor>(bank_keys), 0);
            Tensor vals = concat(std::span<const Tensor>(bank_vals), 0);
            KeyValue q = model.astm().embed_query(pyr_q.level[4]);
            temporal = model.astm().read(q, keys, vals);
        }

        Decoder::FrameOutput dec = model.decoder().forward(pyr_q, temporal, pyr_p, pyr_n);
        Tensor saliency = bilinear_resize(dec.saliency_quarter, mc.height, mc.width);
        if (in_h != mc.height || in_w != mc.width) saliency = bilinear_resize(saliency, in_h, in_w);

        std::vector<Tensor> dcat_rows =
            split(dec.dcat, 0, std::vector<int>(queries.size(), 1));
        for (std::size_t qi = 0; qi < queries.size(); ++qi) {
            const int t = queries[std::size_t(qi)];
            char name[32];
            std::snprintf(name, sizeof name, "%05d.pgm", t);
            write_pgm(out_dir / name, tensor_to_map(saliency, int(qi)));

            if (cfg.emit_motion && t > 1) {
                const Tensor& dprev = qi == 0 ? prev_dcat : dcat_rows[qi - 1];
                Tensor motion = model.predict_motion(dprev, dcat_rows[qi]);
                if (in_h != mc.height || in_w != mc.width) motion = bilinear_resize(motion, in_h, in_w);
                char mname[32];
                std::snprintf(mname, sizeof mname, "motion_%05d.pgm", t - 1);
                write_pgm(out_dir / mname, tensor_to_map(motion, 0));
            }
        }
        prev_dcat = dcat_rows.back();
    }
}

void infer_dataset(const Model& model, const fs::path& data_root, const fs::path& out_root,
                   const InferConfig& cfg) {
    std::vector<fs::path> dirs;
    for (const auto& e : fs::directory_iterator(data_root)) {
        if (e.is_directory()) dirs.push_back(e.path());
    }
    std::sort(dirs.begin(), dirs.end());
    if (dirs.empty()) throw std::runtime_error("no videos under " + data_root.string());
    for (const auto& d : dirs) infer_video(model, d, out_root, cfg);
}

EvalOutput evaluate_directories(const fs::path& pred_root, const fs::path& gt_root) {
    std::vector<fs::path> dirs;
    for (const auto& e : fs::directory_iterator(pred_root)) {
        if (e.is_directory()) dirs.push_back(e.path());
    }
    std::sort(dirs.begin(), dirs.end());
    if (dirs.empty()) throw std::runtime_error("no predictions under " + pred_root.string());

    EvalOutput out;
    std::vector<Image> preds, gts;
    for (const auto& dir : dirs) {
        const std::string video = dir.filename().string();
        std::vector<fs::path> files;
        for (const auto& e : fs::directory_iterator(dir)) {
            const std::string stem = e.path().filename().string();
            if (e.is_regular_file() && e.path().extension() == ".pgm" &&
                stem.rfind("motion_", 0) != 0) {
                files.push_back(e.path());
            }
        }
        std::sort(files.begin(), files.end());
        for (const auto& f : files) {
            const int frame = std::stoi(f.stem().string());
            Image pred = read_pnm(f);
            char name[32];
            std::snprintf(name, sizeof name, "%05d.pgm", frame);
            Image gt = read_pnm(gt_root / video / "masks" / name);
            for (auto& v : gt.data) v = v >= 0.5f ? 1.0f : 0.0f;
            out.per_frame.push_back({video, frame, mae(pred, gt)});
            preds.push_back(std::move(pred));
            gts.push_back(std::move(gt));
        }
    }
    out.summary = evaluate_set(preds, gts);
    return out;
}

void write_eval_csv(std::ostream& os, const EvalOutput& eval) {
    os << "video,frame,mae\n";
    for (const auto& row : eval.per_frame) {
        os << row.video << ',' << row.frame << ',' << row.mae << '\n';
    }
    os << "ALL,-," << eval.summary.mae << ',' << eval.summary.max_f << ',' << eval.summary.s_measure
       << '\n';
}

void write_motion_labels(const fs::path& masks_root, const fs::path& out_root) {
    const std::vector<VideoRef> videos = open_dataset(masks_root, /*require_masks=*/true);
    for (const VideoRef& v : videos) {
        const fs::path out_dir = out_root / v.id;
        fs::create_directories(out_dir);
        for (const auto& [a, b] : clip_motion_pairs(v.num_frames)) {
            Image label = motion_label(load_mask(v, a), load_mask(v, b));
            char name[32];
            std::snprintf(name, sizeof name, "%05d.pgm", a);
            write_mask_pgm(out_dir / name, label);
        }
    }
}

} // namespace vsod
