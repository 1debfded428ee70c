#pragma once

// Training loop, evaluation, ablation runner and memory inspection.
// Everything here is deterministic given (seed, config): data order, noise
// draws and initialization all come from counter-derived RNG streams, so two
// runs with the same inputs produce bit-identical checkpoints and a resumed
// run replays the uninterrupted one exactly.

#include <json.hpp>

#include <algorithm>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <memory>
#include <numeric>
#include <stdexcept>
#include <string>
#include <vector>

#include "adam.hpp"
#include "checkpoint.hpp"
#include "config.hpp"
#include "dataset.hpp"
#include "extractor.hpp"
#include "losses.hpp"
#include "memory.hpp"
#include "metrics.hpp"
#include "model.hpp"
#include "png.hpp"

namespace dmgan {

using json = nlohmann::json;

// ---- training ---------------------------------------------------------------

struct StepRecord {
  std::size_t step = 0;
  std::size_t epoch = 0;
  LossReport losses;

  json to_json() const {
    return json{{"step", step},
                {"epoch", epoch},
                {"d_loss", losses.discriminator},
                {"g_adv", losses.generator_adv},
                {"ca_loss", losses.ca_loss},
                {"match_loss", losses.match_loss},
                {"g_total", losses.total}};
  }
};

class Trainer {
 public:
  using T = float;

  Trainer(const TrainConfig& cfg)
      : cfg_(cfg),
        vocab_(make_shapes_vocabulary()),
        model_(std::make_unique<Model<T>>(cfg.net, vocab_.size(), cfg.seed)) {
    gen_opt_ = std::make_unique<Adam<T>>(model_->generator_params(), cfg.adam);
    for (auto& dp : model_->discriminator_params())
      disc_opts_.push_back(std::make_unique<Adam<T>>(dp, cfg.adam));
  }

  Model<T>& model() { return *model_; }
  const Vocabulary& vocab() const { return vocab_; }
  std::size_t global_step() const { return step_; }
  const std::vector<StepRecord>& records() const { return records_; }

  std::size_t steps_per_epoch() const {
    return cfg_.dataset_size / cfg_.batch_size;
  }
  std::size_t total_steps() const { return steps_per_epoch() * cfg_.epochs; }

  // Serialize model + optimizer state + step counter.
  std::vector<CheckpointEntry> snapshot() {
    std::vector<CheckpointEntry> entries = model_entries(*model_);
    gen_opt_->export_state("opt.g", entries);
    for (std::size_t s = 0; s < disc_opts_.size(); ++s)
      disc_opts_[s]->export_state(
          "opt.d" + std::to_string(model_->stage_resolution(s)), entries);
    CheckpointEntry step_entry;
    step_entry.name = "train.step";
    step_entry.dims = {1};
    step_entry.data = {static_cast<float>(step_)};
    entries.push_back(std::move(step_entry));
    append_net_config_entries(cfg_.net, cfg_.seed, entries);
    return entries;
  }

  void save(const std::string& path) {
    save_checkpoint(path, snapshot());
    // Continued training must be bit-identical to training resumed from this
    // file, so quantize optimizer moments exactly as a load would.
    gen_opt_->round_state_to_f32();
    for (auto& d : disc_opts_) d->round_state_to_f32();
  }

  void restore(const std::vector<CheckpointEntry>& entries) {
    load_model_entries(*model_, entries);
    gen_opt_->import_state("opt.g", entries);
    for (std::size_t s = 0; s < disc_opts_.size(); ++s)
      disc_opts_[s]->import_state(
          "opt.d" + std::to_string(model_->stage_resolution(s)), entries);
    const CheckpointEntry* se = nullptr;
    for (const auto& e : entries)
      if (e.name == "train.step") se = &e;
    if (!se || se->data.size() != 1)
      throw std::runtime_error("checkpoint: missing train.step entry");
    step_ = static_cast<std::size_t>(se->data[0]);
  }

  // Run until `total_steps()`, or until `stop_after_step` if nonzero.
  // `out_dir` empty = no files written (in-memory training for tests).
  void run(const std::string& out_dir, std::size_t stop_after_step = 0) {
    std::ofstream log;
    if (!out_dir.empty()) {
      std::filesystem::create_directories(out_dir);
      log.open(out_dir + "/train_log.jsonl",
               step_ == 0 ? std::ios::trunc : std::ios::app);
      if (!log) throw std::runtime_error("train: cannot open log in " + out_dir);
    }
    const std::size_t spe = steps_per_epoch();
    const std::size_t end_step =
        stop_after_step ? std::min(stop_after_step, total_steps())
                        : total_steps();
    while (step_ < end_step) {
      const std::size_t epoch = step_ / spe;
      const std::vector<std::size_t> order = epoch_order(epoch);
      const std::size_t batch_begin = (step_ % spe) * cfg_.batch_size;
      StepRecord rec = train_step(order, batch_begin, epoch);
      records_.push_back(rec);
      if (log && (rec.step % cfg_.log_every == 0 || rec.step == end_step))
        log << rec.to_json().dump() << "\n";
      if (!out_dir.empty() &&
          (step_ % cfg_.checkpoint_every == 0 || step_ == end_step))
        save(out_dir + "/checkpoint.dmgk");
      check_divergence(rec);
    }
    if (log) log.flush();
  }

 private:
  // Seeded per-epoch shuffle; depends only on (seed, epoch), so it is
  // identical across ablation variants and across resumed runs.
  std::vector<std::size_t> epoch_order(std::size_t epoch) const {
    std::vector<std::size_t> order(cfg_.dataset_size);
    std::iota(order.begin(), order.end(), 0);
    Rng rng = derive_rng(cfg_.seed, "train.shuffle", epoch);
    for (std::size_t i = 0; i + 1 < order.size(); ++i)
      std::swap(order[i], order[i + rng.below(order.size() - i)]);
    return order;
  }

  struct BatchSample {
    std::vector<std::size_t> tokens;
    std::vector<Tensor<T>> real;  // per stage, constant leaves
  };

  StepRecord train_step(const std::vector<std::size_t>& order,
                        std::size_t batch_begin, std::size_t epoch) {
    const std::size_t b_sz = cfg_.batch_size;
    const std::size_t stages = cfg_.net.stages;
    ++step_;

    // Materialize the batch.
    std::vector<BatchSample> batch(b_sz);
    for (std::size_t b = 0; b < b_sz; ++b) {
      ShapeSpec spec = make_shape_spec(cfg_.seed, order[batch_begin + b]);
      batch[b].tokens = vocab_.encode_caption(spec.caption());
      for (std::size_t s = 0; s < stages; ++s) {
        std::size_t res = model_->stage_resolution(s);
        std::vector<float> img = render_shape(spec, res);
        batch[b].real.emplace_back(Shape{3, res, res},
                                   std::vector<T>(img.begin(), img.end()));
      }
    }

    // Noise streams depend only on (seed, step), never on history.
    Rng noise = derive_rng(cfg_.seed, "train.noise", step_);

    // Generator forward for the whole batch.
    std::vector<GeneratedStages<T>> fakes(b_sz);
    std::vector<typename TextEncoder<T>::CaResult> cas(b_sz);
    std::vector<Tensor<T>> sentences(b_sz);
    for (std::size_t b = 0; b < b_sz; ++b) {
      auto z = Tensor<T>::randn({1, cfg_.net.z_dim}, noise);
      auto ca_noise = Tensor<T>::randn({1, cfg_.net.n_w}, noise);
      fakes[b] = model_->generate(batch[b].tokens, z, ca_noise, true, &cas[b],
                                  &sentences[b]);
    }

    StepRecord rec;
    rec.step = step_;
    rec.epoch = epoch;

    // Discriminator updates, one per stage.  The sentence code is detached:
    // the encoder is trained through the generator objective only.
    auto& discs = model_->discriminators();
    for (std::size_t s = 0; s < stages; ++s) {
      Tensor<T> loss = Tensor<T>::scalar(T(0));
      for (std::size_t b = 0; b < b_sz; ++b) {
        auto s_code = sentences[b].detach();
        auto real = discs[s].discriminate(batch[b].real[s], s_code, b == 0);
        auto fake = discs[s].discriminate(fakes[b].images[s].detach(), s_code);
        loss = add(loss, discriminator_loss(real.unconditional, real.conditional,
                                            fake.unconditional,
                                            fake.conditional));
      }
      loss = affine(loss, T(1) / T(b_sz), T(0));
      model_->discriminator_params()[s].zero_grads();
      loss.backward();
      disc_opts_[s]->step();
      rec.losses.discriminator.push_back(loss.item());
    }

    // Generator + encoder update against the freshly updated discriminators.
    std::vector<Tensor<T>> adv_losses;
    for (std::size_t s = 0; s < stages; ++s) {
      Tensor<T> loss = Tensor<T>::scalar(T(0));
      for (std::size_t b = 0; b < b_sz; ++b) {
        auto logits =
            discs[s].discriminate(fakes[b].images[s], sentences[b].detach());
        loss = add(loss,
                   generator_adv_loss(logits.unconditional, logits.conditional));
      }
      loss = affine(loss, T(1) / T(b_sz), T(0));
      adv_losses.push_back(loss);
      rec.losses.generator_adv.push_back(loss.item());
    }
    Tensor<T> ca_loss = Tensor<T>::scalar(T(0));
    for (std::size_t b = 0; b < b_sz; ++b)
      ca_loss = add(ca_loss, ca_kl_loss(cas[b].mu, cas[b].logvar));
    ca_loss = affine(ca_loss, T(1) / T(b_sz), T(0));

    std::vector<Tensor<T>> img_rows, txt_rows;
    for (std::size_t b = 0; b < b_sz; ++b) {
      img_rows.push_back(model_->embedder().embed(fakes[b].images.back()));
      txt_rows.push_back(sentences[b]);
    }
    auto match = match_loss(concat<T>(img_rows, 0), concat<T>(txt_rows, 0),
                            static_cast<T>(cfg_.match_gamma));
    auto total = total_generator_loss(adv_losses, ca_loss, match,
                                      static_cast<T>(cfg_.lambda_ca),
                                      static_cast<T>(cfg_.lambda_match));
    model_->generator_params().zero_grads();
    total.backward();
    gen_opt_->step();

    rec.losses.ca_loss = ca_loss.item();
    rec.losses.match_loss = match.item();
    rec.losses.total = total.item();
    return rec;
  }

  void check_divergence(const StepRecord& rec) const {
    auto bad = [&](double v) {
      return !std::isfinite(v) || std::abs(v) > cfg_.divergence_limit;
    };
    bool diverged = bad(rec.losses.total) || bad(rec.losses.ca_loss) ||
                    bad(rec.losses.match_loss);
    for (double v : rec.losses.discriminator) diverged = diverged || bad(v);
    for (double v : rec.losses.generator_adv) diverged = diverged || bad(v);
    if (diverged)
      throw std::runtime_error(
          "train: loss diverged at step " + std::to_string(rec.step) +
          " (total=" + std::to_string(rec.losses.total) +
          "); last checkpoint kept");
  }

  TrainConfig cfg_;
  Vocabulary vocab_;
  std::unique_ptr<Model<T>> model_;
  std::unique_ptr<Adam<T>> gen_opt_;
  std::vector<std::unique_ptr<Adam<T>>> disc_opts_;
  std::size_t step_ = 0;
  std::vector<StepRecord> records_;
};

// ---- evaluation -------------------------------------------------------------

struct EvalReport {
  double is_mean = 0.0, is_std = 0.0;
  double fid_value = 0.0;
  double rp_mean = 0.0, rp_std = 0.0;

  json to_json() const {
    return json{{"is_mean", is_mean},
                {"is_std", is_std},
                {"fid", fid_value},
                {"rp_mean", rp_mean},
                {"rp_std", rp_std}};
  }
};

// Ensure a trained extractor exists at `path`, training and caching it on
// first use.  Throws with the training command when auto-training is off.
inline Extractor<float> load_or_train_extractor(const std::string& path,
                                                bool auto_train = true) {
  Extractor<float> ext(7);
  if (std::filesystem::exists(path)) {
    ext.load(path);
    return ext;
  }
  if (!auto_train)
    throw std::runtime_error(
        "extractor missing at '" + path +
        "'; train it first with: dmgan eval --train-extractor");
  double acc = ext.train(7, 4096, 480, 0.96, 20000);
  if (acc < 0.95)
    throw std::runtime_error(
        "extractor accuracy " + std::to_string(acc) +
        " below the 0.95 floor; refusing to cache an unreliable extractor");
  if (!path.empty()) {
    std::filesystem::create_directories(
        std::filesystem::path(path).parent_path());
    ext.save(path);
  }
  return ext;
}

// Generate `n` images from fresh captions and score them against `n` real
// samples.  Retrieval embeds generated images with the model's fixed image
// embedder and ranks sentence codes.
inline EvalReport evaluate_model(Model<float>& model, const Vocabulary& vocab,
                                 Extractor<float>& extractor, std::size_t n,
                                 std::uint64_t eval_seed,
                                 std::vector<std::vector<float>>* sample_images =
                                     nullptr) {
  using T = float;
  if (n < 100) throw std::invalid_argument("evaluate: need at least 100 samples");
  const NetConfig& cfg = model.config();
  const std::size_t top_res = model.stage_resolution(cfg.stages - 1);
  const std::size_t feat_d = kExtractorFeatureDim;

  std::vector<double> gen_probs(n * kNumClasses);
  std::vector<double> gen_feats(n * feat_d);
  std::vector<double> real_feats(n * feat_d);
  std::vector<double> img_embs(n * cfg.n_w);
  std::vector<double> txt_embs(n * cfg.n_w);

  Rng noise = derive_rng(eval_seed, "eval.noise", 0);
  for (std::size_t i = 0; i < n; ++i) {
    ShapeSpec spec = make_shape_spec(eval_seed, i);
    auto tokens = vocab.encode_caption(spec.caption());
    auto z = Tensor<T>::randn({1, cfg.z_dim}, noise);
    auto ca_noise = Tensor<T>::randn({1, cfg.n_w}, noise);
    Tensor<T> sentence;
    auto stages = model.generate(tokens, z, ca_noise, true, nullptr, &sentence);
    const auto& img = stages.images.back();
    std::vector<float> img_raw(img.data().begin(), img.data().end());
    if (sample_images && sample_images->size() < 64)
      sample_images->push_back(img_raw);

    auto out = extractor.forward_raw(img_raw, top_res);
    for (std::size_t c = 0; c < kNumClasses; ++c)
      gen_probs[i * kNumClasses + c] = out.probs.data()[c];
    for (std::size_t d = 0; d < feat_d; ++d)
      gen_feats[i * feat_d + d] = out.features.data()[d];

    auto real_out = extractor.forward_raw(render_shape(spec, top_res), top_res);
    for (std::size_t d = 0; d < feat_d; ++d)
      real_feats[i * feat_d + d] = real_out.features.data()[d];

    auto emb = model.embedder().embed(img);
    for (std::size_t d = 0; d < cfg.n_w; ++d)
      img_embs[i * cfg.n_w + d] = emb.data()[d];
    for (std::size_t d = 0; d < cfg.n_w; ++d)
      txt_embs[i * cfg.n_w + d] = sentence.data()[d];
  }

  // Mismatching caption pool: sentence codes of unrelated captions.
  const std::size_t pool_size = 256;
  std::vector<double> pool(pool_size * cfg.n_w);
  for (std::size_t i = 0; i < pool_size; ++i) {
    ShapeSpec spec = make_shape_spec(eval_seed + 1, i);
    auto enc = model.encoder().encode(vocab.encode_caption(spec.caption()));
    for (std::size_t d = 0; d < cfg.n_w; ++d)
      pool[i * cfg.n_w + d] = enc.sentence.data()[d];
  }

  EvalReport report;
  auto is_score = inception_score(gen_probs, n, kNumClasses);
  report.is_mean = is_score.mean;
  report.is_std = is_score.std;
  report.fid_value = fid(gaussian_stats(gen_feats, n, feat_d),
                         gaussian_stats(real_feats, n, feat_d));
  auto rp = r_precision(img_embs, txt_embs, pool, n, cfg.n_w, pool_size,
                        eval_seed);
  report.rp_mean = rp.mean;
  report.rp_std = rp.std;
  return report;
}

// FID alone (the ablation ladder only compares this number).
inline double evaluate_fid(Model<float>& model, const Vocabulary& vocab,
                           Extractor<float>& extractor, std::size_t n,
                           std::uint64_t eval_seed) {
  using T = float;
  const NetConfig& cfg = model.config();
  const std::size_t top_res = model.stage_resolution(cfg.stages - 1);
  const std::size_t feat_d = kExtractorFeatureDim;
  std::vector<double> gen_feats(n * feat_d), real_feats(n * feat_d);
  Rng noise = derive_rng(eval_seed, "eval.noise", 0);
  for (std::size_t i = 0; i < n; ++i) {
    ShapeSpec spec = make_shape_spec(eval_seed, i);
    auto z = Tensor<T>::randn({1, cfg.z_dim}, noise);
    auto ca_noise = Tensor<T>::randn({1, cfg.n_w}, noise);
    auto stages = model.generate(vocab.encode_caption(spec.caption()), z,
                                 ca_noise, true);
    std::vector<float> img_raw(stages.images.back().data().begin(),
                               stages.images.back().data().end());
    auto out = extractor.forward_raw(img_raw, top_res);
    for (std::size_t d = 0; d < feat_d; ++d)
      gen_feats[i * feat_d + d] = out.features.data()[d];
    auto real_out = extractor.forward_raw(render_shape(spec, top_res), top_res);
    for (std::size_t d = 0; d < feat_d; ++d)
      real_feats[i * feat_d + d] = real_out.features.data()[d];
  }
  return fid(gaussian_stats(gen_feats, n, feat_d),
             gaussian_stats(real_feats, n, feat_d));
}

// ---- ablation ladder ---------------------------------------------------------

struct AblationRow {
  std::string label;
  std::vector<double> fid_per_seed;
  std::vector<double> random_fid_per_seed;  // before training
  double median_fid = 0.0;
};

inline double median_of(std::vector<double> v) {
  std::sort(v.begin(), v.end());
  std::size_t n = v.size();
  return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

// Train and score the four ablation variants on identical data orders.
inline std::vector<AblationRow> ablation_run(const TrainConfig& base,
                                             const std::vector<std::uint64_t>& seeds,
                                             Extractor<float>& extractor,
                                             std::size_t eval_n) {
  const AblationFlags ladder[4] = {
      AblationFlags::baseline(), AblationFlags::with_memory(),
      AblationFlags::with_write_gate(), AblationFlags::full()};
  std::vector<AblationRow> rows;
  for (const AblationFlags& flags : ladder) {
    AblationRow row;
    row.label = flags.label();
    for (std::uint64_t seed : seeds) {
      TrainConfig cfg = base;
      cfg.net.flags = flags;
      cfg.seed = seed;
      Trainer trainer(cfg);
      double random_fid = evaluate_fid(trainer.model(), trainer.vocab(),
                                       extractor, eval_n, seed + 1000);
      trainer.run("");
      double trained_fid = evaluate_fid(trainer.model(), trainer.vocab(),
                                        extractor, eval_n, seed + 1000);
      row.random_fid_per_seed.push_back(random_fid);
      row.fid_per_seed.push_back(trained_fid);
    }
    row.median_fid = median_of(row.fid_per_seed);
    rows.push_back(std::move(row));
  }
  return rows;
}

inline std::string ablation_table(const std::vector<AblationRow>& rows) {
  std::string out =
      "variant        median FID   per-seed FID                random-init FID\n";
  char buf[256];
  for (const auto& r : rows) {
    std::string per, rnd;
    for (double v : r.fid_per_seed) {
      std::snprintf(buf, sizeof buf, "%.3f ", v);
      per += buf;
    }
    for (double v : r.random_fid_per_seed) {
      std::snprintf(buf, sizeof buf, "%.3f ", v);
      rnd += buf;
    }
    std::snprintf(buf, sizeof buf, "%-14s %-12.3f %-27s %s\n", r.label.c_str(),
                  r.median_fid, per.c_str(), rnd.c_str());
    out += buf;
  }
  return out;
}

// ---- memory inspection --------------------------------------------------------

// One generation pass; per refinement stage, the top-5 write-gate words and
// top-5 addressing words plus the stage image.
inline json inspect_memory(Model<float>& model, const Vocabulary& vocab,
                           const std::string& caption, std::uint64_t seed,
                           std::vector<std::vector<float>>* stage_images =
                               nullptr,
                           std::vector<std::size_t>* stage_res = nullptr) {
  using T = float;
  auto tokens = vocab.encode_caption(caption);
  const NetConfig& cfg = model.config();
  Rng noise = derive_rng(seed, "inspect.noise", 0);
  auto z = Tensor<T>::randn({1, cfg.z_dim}, noise);
  auto ca_noise = Tensor<T>::randn({1, cfg.n_w}, noise);
  auto stages = model.generate(tokens, z, ca_noise, false);

  constexpr std::size_t kTop = 5;
  json out;
  out["caption"] = caption;
  out["stages"] = json::array();
  for (std::size_t s = 0; s + 1 < cfg.stages; ++s) {
    const auto& alpha = stages.alphas[s];
    if (!alpha.defined())
      throw std::runtime_error(
          "inspect: memory readout disabled in this checkpoint's config");
    std::vector<double> alpha_data(alpha.data().begin(), alpha.data().end());
    std::vector<double> gate_data;
    if (stages.gates[s].defined())
      gate_data.assign(stages.gates[s].data().begin(),
                       stages.gates[s].data().end());
    auto ranking = top_k_words(alpha_data, tokens.size(),
                               alpha.numel() / tokens.size(), gate_data, kTop);
    auto rank_json = [&](const std::vector<std::pair<std::size_t, double>>& r) {
      json arr = json::array();
      for (const auto& [idx, score] : r)
        arr.push_back({{"token", vocab.token(tokens[idx])}, {"score", score}});
      return arr;
    };
    json stage_json;
    stage_json["stage"] = s + 1;
    stage_json["write_gate_topk"] = rank_json(ranking.by_write_gate);
    stage_json["addressing_topk"] = rank_json(ranking.by_addressing);
    out["stages"].push_back(stage_json);
  }
  if (stage_images) {
    for (std::size_t s = 0; s < cfg.stages; ++s) {
      stage_images->emplace_back(stages.images[s].data().begin(),
                                 stages.images[s].data().end());
      if (stage_res) stage_res->push_back(model.stage_resolution(s));
    }
  }
  return out;
}

}  // namespace dmgan
