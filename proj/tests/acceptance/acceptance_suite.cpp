// Acceptance checks, one pass/fail line per criterion.
//
//   acceptance_suite [--only N]... [--work DIR] [--epochs E]
//
// Criterion 9 reads the model and dataset that criterion 8 leaves in the
// work directory.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <random>
#include <set>
#include <sstream>
#include <string>

#include <nlohmann/json.hpp>

#include "oracles.hpp"
#include "textdeform/ablation.hpp"
#include "textdeform/config.hpp"
#include "textdeform/inference.hpp"
#include "textdeform/trainer.hpp"

using namespace textdeform;
namespace fs = std::filesystem;
using Clock = std::chrono::steady_clock;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

struct Options {
  fs::path work = "acceptance_work";
  int epochs = 30;
};

double seconds_since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

std::string fmt(const char* f, auto... args) {
  char buf[1024];
  std::snprintf(buf, sizeof buf, f, args...);
  return buf;
}

// 1. Ground-truth fields against the dense-sampling oracle.
Outcome field_oracle(const Options&) {
  const auto t0 = Clock::now();
  std::mt19937_64 rng(2024);
  std::uniform_real_distribution<double> centre(26, 38);
  std::uniform_int_distribution<int> vertices(5, 12);
  double worst_dist = 0, worst_dir = 0, worst_norm = 0, worst_max = 0, library_s = 0;
  int cls_mismatch = 0, pixels = 0;
  for (int trial = 0; trial < 50; ++trial) {
    const auto ring = oracle::random_star(rng, centre(rng), centre(rng), 6, 25, vertices(rng));
    const auto tl = Clock::now();
    const auto gt = compute_ground_truth({TextInstance{Polygon(ring), 0, false}}, 64, 64);
    library_s += seconds_since(tl);
    const double L = gt.scale[0];
    double inst_max = 0;
    for (int y = 0; y < 64; ++y)
      for (int x = 0; x < 64; ++x) {
        const auto o = oracle::field_at(ring, {double(x), double(y)});
        const bool inside = gt.cls.at(y, x) > 0.5f;
        if (o.inside != inside) ++cls_mismatch;
        if (!o.inside || !inside) continue;
        ++pixels;
        const double d = gt.dist.at(y, x);
        inst_max = std::max(inst_max, d);
        worst_dist = std::max(worst_dist, std::fabs(d * L - o.distance));
        const double dx = gt.dir.at(y, x, 0), dy = gt.dir.at(y, x, 1);
        if (o.distance <= 0) continue;
        worst_norm = std::max(worst_norm, std::fabs(std::hypot(dx, dy) - 1.0));
        double best = 1e9;
        for (const Point& u : o.directions) best = std::min(best, std::max(std::fabs(dx - u.x), std::fabs(dy - u.y)));
        worst_dir = std::max(worst_dir, best);
      }
    worst_max = std::max(worst_max, std::fabs(inst_max - 1.0));
  }
  const double total_s = seconds_since(t0);
  Outcome r;
  r.pass = cls_mismatch == 0 && worst_dist < 1e-3 && worst_dir < 1e-3 && worst_norm < 1e-6 && worst_max < 1e-6 &&
           total_s < 60;
  r.detail = fmt("50 polygons, %d text pixels: |dist*L err| %.2e, |dir err| %.2e, |norm-1| %.2e, |max-1| %.2e, "
                 "cls mismatches %d, library %.2fs, total %.1fs",
                 pixels, worst_dist, worst_dir, worst_norm, worst_max, cls_mismatch, library_s, total_s);
  return r;
}

// 2. Propagation matrix.
Outcome propagation(const Options&) {
  const auto g20 = propagation_matrix(20);
  const auto ref = oracle::ring_propagation(20);
  int off20 = 0, off_ref = 0;
  for (int i = 0; i < 20; ++i)
    for (int j = 0; j < 20; ++j) {
      const int gap = std::abs(i - j);
      const double want = std::min(gap, 20 - gap) <= 2 ? 1.0 / 5.0 : 0.0;
      off20 += g20[i * 20 + j] != want;
      off_ref += std::fabs(ref[i * 20 + j] - want) > 1e-15;
    }
  int off5 = 0;
  for (double v : propagation_matrix(5)) off5 += v != 1.0 / 5.0;
  Outcome r;
  r.pass = off20 == 0 && off5 == 0 && off_ref == 0;
  r.detail = fmt("N=20 entries differing from A~/5: %d; N=5 entries differing from 1/5: %d", off20, off5);
  return r;
}

// 3. Matching loss against brute force.
Outcome matching(const Options&) {
  std::mt19937_64 rng(31337);
  std::uniform_real_distribution<double> u(0, 128);
  double worst = 0, worst_shifted = 0;
  for (int trial = 0; trial < 200; ++trial) {
    std::vector<Point> p(20), g(20);
    for (int i = 0; i < 20; ++i) {
      p[i] = {u(rng), u(rng)};
      g[i] = {u(rng), u(rng)};
    }
    worst = std::max(worst, std::fabs(matching_loss(ControlPolygon(p), ControlPolygon(g)) -
                                      oracle::matching_brute(p, g, 1.0)));
    const int s = static_cast<int>(rng() % 20);
    std::vector<Point> q(20);
    for (int i = 0; i < 20; ++i) q[i] = g[(i + s) % 20];
    worst_shifted = std::max(worst_shifted, matching_loss(ControlPolygon(q), ControlPolygon(g)));
  }
  Outcome r;
  r.pass = worst <= 1e-9 && worst_shifted == 0.0;
  r.detail = fmt("200 pairs: max |loss - brute| %.2e; max loss on shifted copies %.2e", worst, worst_shifted);
  return r;
}

// 4. Composite-loss gradients against central differences.
Outcome gradients(const Options&) {
  const auto t0 = Clock::now();
  ModelConfig cfg;
  cfg.backbone.base_channels = 4;
  cfg.backbone.shared_dim = 8;
  cfg.head.hidden = 4;
  cfg.deform.rnn_hidden = 6;
  cfg.deform.gcn_width = 5;
  cfg.deform.proj_width = 4;
  cfg.deform.decoder_widths = {7, 5};
  cfg.deform.iterations = 3;
  Model<double> model(cfg, 3);
  // Jitter every weight so no group sits at an exact zero or symmetric point.
  std::mt19937_64 rng(5);
  std::normal_distribution<double> noise(0, 0.3);
  for (auto& p : model.params().all())
    for (double& v : p.value.data) v += 0.05 * noise(rng);

  AnnotatedSample s{"grad", GridMap(32, 32, 3), {}};
  std::uniform_real_distribution<float> pix(0, 1);
  for (float& v : s.image.values()) v = pix(rng);
  s.instances.push_back({Polygon({{6, 8}, {25, 10}, {24, 20}, {7, 19}}), 0, false});
  ProposalConfig pc;
  pc.n_control = 8;
  pc.min_area = 4;
  const SampleTargets targets = make_targets(s, 1, pc.n_control);
  const auto jobs = gt_jobs(targets, pc);
  LossConfig lc;
  lc.eps = 10;

  auto loss = [&](bool backward) {
    ad::Tape<double> tape;
    tape.set_grad_enabled(backward);
    Context<double> ctx(tape, model.params());
    auto shared = model.forward_shared(ctx, tape.constant(to_tensor<double>(s.image)));
    auto terms = composite_loss(model, ctx, shared, targets, jobs, shared.priors, 3.0, lc, true);
    if (backward) {
      model.params().zero_grad();
      tape.backward(terms.total);
      tape.flush_parameter_grads();
    }
    return terms.total.value()[0];
  };
  loss(true);
  double worst = 0;
  std::string worst_name;
  int groups = 0;
  for (auto& p : model.params().all()) {
    double diff = 0, na = 0, nn = 0;
    const int samples = std::min<int>(8, static_cast<int>(p.value.size()));
    for (int k = 0; k < samples; ++k) {
      const std::size_t idx = (static_cast<std::size_t>(k) * 7919) % p.value.size();
      const double x0 = p.value[idx], h = 1e-6;
      p.value[idx] = x0 + h;
      const double fp = loss(false);
      p.value[idx] = x0 - h;
      const double fm = loss(false);
      p.value[idx] = x0;
      const double num = (fp - fm) / (2 * h), a = p.grad[idx];
      diff += (num - a) * (num - a);
      na += a * a;
      nn += num * num;
    }
    const double rel = std::sqrt(diff) / std::max({std::sqrt(na), std::sqrt(nn), 1e-12});
    ++groups;
    if (rel > worst) {
      worst = rel;
      worst_name = p.name;
    }
  }
  const double secs = seconds_since(t0);
  Outcome r;
  r.pass = worst < 1e-4 && secs < 300 && !jobs.empty();
  r.detail = fmt("%d parameter groups, %zu deformation job(s): worst relative error %.2e (%s), %.1fs", groups,
                 jobs.size(), worst, worst_name.c_str(), secs);
  return r;
}

// 5. Deformation loss weight.
Outcome deform_weight_schedule(const Options&) {
  LossConfig cfg;
  const double at_eps = deform_weight(cfg.eps, cfg);
  bool decreasing = true;
  double prev = deform_weight(0, cfg);
  for (int k = 1; k <= 400 * cfg.eps / 10; ++k) {
    const double v = deform_weight(k * 0.1, cfg);
    decreasing = decreasing && v < prev;
    prev = v;
  }
  Outcome r;
  r.pass = at_eps == 0.05 && decreasing;
  r.detail = fmt("weight at i=eps=%d is %.17g; strictly decreasing on [0, %d] in steps of 0.1: %s", cfg.eps, at_eps,
                 4 * cfg.eps, decreasing ? "yes" : "no");
  return r;
}

// 6. Two rectangles three pixels apart.
Outcome two_rectangles(const Options&) {
  std::mt19937_64 rng(66);
  std::uniform_real_distribution<double> angle(0, M_PI), width(18, 36), height(10, 20), jitter(-6, 6);
  int good = 0;
  std::string first_failure;
  for (int trial = 0; trial < 100; ++trial) {
    const double th = angle(rng), wa = width(rng), wb = width(rng), ha = height(rng), hb = height(rng);
    const Point ax{std::cos(th), std::sin(th)}, ay{-std::sin(th), std::cos(th)};
    const Point mid{64 + jitter(rng), 64 + jitter(rng)};
    // Centres on the shared long axis so facing edges are parallel and 3 px apart.
    const Point ca = mid - ((wb - wa) / 4.0 + (wa + 3.0) / 2.0) * ax + 0.0 * ay;
    const Point cb = ca + ((wa + wb) / 2.0 + 3.0) * ax;
    auto rect = [&](Point c, double w, double h) {
      std::vector<Point> p;
      for (auto [sx, sy] : {std::pair{-1, -1}, {1, -1}, {1, 1}, {-1, 1}}) p.push_back(c + (sx * w / 2) * ax + (sy * h / 2) * ay);
      return Polygon(std::move(p));
    };
    const Polygon a = rect(ca, wa, ha), b = rect(cb, wb, hb);
    const auto gt = compute_ground_truth({TextInstance{a, 0, false}, TextInstance{b, 1, false}}, 128, 128);
    ProposalConfig pc;
    pc.th_d = 0.3;
    const auto props = filter_by_confidence(extract_candidates({gt.cls, gt.dist, gt.dir}, pc), pc);
    std::set<int> owners;
    for (const auto& p : props) {
      std::map<int, int> votes;
      for (int k : p.pixels) ++votes[gt.owner[k]];
      owners.insert(std::max_element(votes.begin(), votes.end(), [](auto& l, auto& r) { return l.second < r.second; })
                        ->first);
    }
    const double gap = polygon_distance(a, b);
    if (props.size() == 2 && owners == std::set<int>{0, 1} && std::fabs(gap - 3.0) < 1e-9) {
      ++good;
    } else if (first_failure.empty()) {
      first_failure = fmt(" (trial %d: %zu proposals, gap %.3f)", trial, props.size(), gap);
    }
  }
  Outcome r;
  r.pass = good == 100;
  r.detail = fmt("%d of 100 placements gave exactly 2 proposals, one per rectangle%s", good, first_failure.c_str());
  return r;
}

// 7. OHEM selection counts.
Outcome ohem(const Options&) {
  std::mt19937_64 rng(77);
  std::uniform_real_distribution<double> u(0, 1);
  int good = 0, capped = 0;
  for (int trial = 0; trial < 500; ++trial) {
    const int n = 64 + static_cast<int>(rng() % 4000);
    const double frac = 0.005 + 0.6 * u(rng);
    std::vector<double> loss(n);
    std::vector<float> gt(n);
    int pos = 0;
    for (int k = 0; k < n; ++k) {
      loss[k] = u(rng);
      gt[k] = u(rng) < frac;
      pos += gt[k] > 0.5f;
    }
    if (pos == 0) {
      gt[0] = 1;
      pos = 1;
    }
    const int neg = n - pos;
    const auto keep = ohem_select(loss, gt, 3.0);
    int kept_neg = 0;
    for (int k = 0; k < n; ++k) kept_neg += keep[k] && gt[k] < 0.5f;
    capped += 3 * pos > neg;
    good += kept_neg == std::min(3 * pos, neg) && keep == oracle::ohem_reference(loss, gt, 3.0, 100);
  }
  Outcome r;
  r.pass = good == 500;
  r.detail = fmt("%d of 500 masks kept min(3*pos, neg) hardest negatives (%d masks with the neg cap active)", good,
                 capped);
  return r;
}

RunConfig e2e_config(const Options& o) {
  RunConfig cfg;
  cfg.synth.image_size = 128;
  cfg.synth.seed = 7;
  cfg.train.seed = 7;
  cfg.train.epochs = o.epochs;
  cfg.train.val_every = 0;
  cfg.proposals.n_control = 20;
  cfg.iterations = 3;
  cfg.model.deform.encoder = EncoderVariant::adaptive;
  cfg.sync();
  return cfg;
}

// 8. End-to-end training on synthetic data.
Outcome end_to_end(const Options& o) {
  const auto t0 = Clock::now();
  const fs::path dir = o.work / "e2e";
  fs::remove_all(dir);
  fs::create_directories(dir);
  const RunConfig cfg = e2e_config(o);
  write_synthetic_dataset(cfg.synth, 500, 100, dir / "data");
  const auto train = load_split(dir / "data", "train");
  const auto val = load_split(dir / "data", "val");

  Model<float> model(cfg.model, cfg.train.seed);
  Trainer trainer(model, cfg.trainer_options());
  const double budget = 45 * 60;
  std::ofstream log(dir / "epochs.log");
  while (trainer.next_epoch() < cfg.train.epochs && seconds_since(t0) < budget) {
    const auto rec = trainer.train_epoch(train, {});
    log << fmt("epoch %d total %.4f cls %.4f dist %.4f dir %.4f match %.3f %.1fs\n", rec.epoch, rec.total, rec.loss.cls,
               rec.loss.dist, rec.loss.dir, rec.loss.match, rec.seconds)
        << std::flush;
  }
  const int epochs_run = trainer.next_epoch();
  trainer.save_checkpoint(dir / "model");
  const auto rep = evaluate_model(model, val, cfg.inference(), cfg.eval);
  const double secs = seconds_since(t0);
  const double f = rep.final_metrics.f_measure;
  const double iou1 = rep.mean_iou.empty() ? 0 : rep.mean_iou.front();
  const double iou3 = rep.mean_iou.empty() ? 0 : rep.mean_iou.back();

  nlohmann::json j = {{"epochs", epochs_run},   {"seconds", secs},          {"f_measure", f},
                      {"precision", rep.final_metrics.precision},          {"recall", rep.final_metrics.recall},
                      {"mean_iou", rep.mean_iou}, {"matched_proposals", rep.matched_proposals}};
  write_text_atomic(dir / "result.json", j.dump(2));
  Outcome r;
  r.pass = epochs_run == cfg.train.epochs && epochs_run <= 60 && secs < budget && f >= 0.85 &&
           rep.mean_iou.size() == 3 && iou3 >= iou1;
  r.detail = fmt("%d epochs in %.1f min: val P %.4f R %.4f F %.4f; mean IoU iter1 %.4f iter2 %.4f iter3 %.4f",
                 epochs_run, secs / 60, rep.final_metrics.precision, rep.final_metrics.recall, f, iou1,
                 rep.mean_iou.size() > 1 ? rep.mean_iou[1] : 0.0, iou3);
  return r;
}

// 9. Prior-channel and encoder ablations on the criterion 8 model.
Outcome ablations(const Options& o) {
  const fs::path dir = o.work / "e2e";
  if (!fs::exists(fs::path(dir / "model").string() + ".json"))
    return {false, "no trained model from criterion 8 in " + dir.string()};
  const Model<float> base = load_model(dir / "model");
  RunConfig cfg = e2e_config(o);
  cfg.model = base.config();
  cfg.sync();
  AblationOptions opts;
  opts.axes = {"prior", "encoder"};
  opts.deform_epochs = 10;
  const auto train = load_split(dir / "data", "train");
  const auto val = load_split(dir / "data", "val");
  const auto results = run_ablation(base, cfg, train, val, opts, o.work / "ablation");
  write_text_atomic(o.work / "ablation" / "ablation.md", ablation_markdown(results));

  std::map<std::string, double> prior, encoder, prior_iou, encoder_iou;
  for (const auto& res : results) {
    if (!res.present) continue;
    const bool is_prior = res.cell.axis == "prior";
    (is_prior ? prior : encoder)[res.cell.label] = res.metrics.f_measure;
    (is_prior ? prior_iou : encoder_iou)[res.cell.label] = res.mean_iou.empty() ? 0.0 : res.mean_iou.back();
  }
  const bool complete = prior.count("cls") && prior.count("cls+dis+dir") && encoder.size() == 5;
  if (!complete) return {false, "ablation cells missing, see " + (o.work / "ablation").string()};
  const double drop = prior["cls+dis+dir"] - prior["cls"];
  double single = 0;
  for (const char* k : {"fc", "rnn", "circular", "gcn"}) single = std::max(single, encoder[k]);
  const double adaptive = encoder["adaptive"];
  Outcome r;
  r.pass = drop >= 0.03 && adaptive >= single - 0.01;
  r.detail = fmt("F all priors %.4f, cls only %.4f (drop %.4f, need >= 0.03); adaptive %.4f vs best single branch "
                 "%.4f (fc %.4f rnn %.4f circular %.4f gcn %.4f); final mean IoU: all priors %.4f, cls only %.4f, "
                 "adaptive %.4f, fc %.4f, rnn %.4f, circular %.4f, gcn %.4f",
                 prior["cls+dis+dir"], prior["cls"], drop, adaptive, single, encoder["fc"], encoder["rnn"],
                 encoder["circular"], encoder["gcn"], prior_iou["cls+dis+dir"], prior_iou["cls"],
                 encoder_iou["adaptive"], encoder_iou["fc"], encoder_iou["rnn"], encoder_iou["circular"],
                 encoder_iou["gcn"]);
  return r;
}

// 10. Determinism and resume.
Outcome reproducibility(const Options& o) {
  SynthConfig sc;
  sc.image_size = 64;
  sc.max_instances = 3;
  sc.seed = 10;
  const auto data = generate(sc, 12);
  ModelConfig mc;
  mc.backbone.base_channels = 4;
  mc.backbone.shared_dim = 8;
  mc.backbone.fusion_levels = 3;
  mc.head.hidden = 6;
  mc.deform.rnn_hidden = 8;
  mc.deform.gcn_width = 8;
  mc.deform.gcn_layers = 2;
  mc.deform.proj_width = 8;
  mc.deform.decoder_widths = {16};
  TrainerOptions topts;
  topts.train.epochs = 3;
  topts.train.batch = 4;
  topts.train.crop_size = 64;
  topts.train.val_every = 0;
  topts.train.seed = 42;
  topts.augment.output_size = 64;
  topts.loss.eps = 3;

  auto run = [&](int epochs, const fs::path* resume_from, const fs::path* save_to) {
    Model<float> model(mc, topts.train.seed);
    Trainer trainer(model, topts);
    if (resume_from) trainer.load_checkpoint(*resume_from);
    std::vector<EpochRecord> recs;
    while (trainer.next_epoch() < epochs) recs.push_back(trainer.train_epoch(data, {}));
    if (save_to) trainer.save_checkpoint(*save_to);
    std::vector<float> flat;
    for (const auto& p : model.params().all()) flat.insert(flat.end(), p.value.data.begin(), p.value.data.end());
    return std::pair{recs, flat};
  };
  auto diff = [](const LossParts& a, const LossParts& b) {
    return std::max({std::fabs(a.cls - b.cls), std::fabs(a.dist - b.dist), std::fabs(a.dir - b.dir),
                     std::fabs(a.match - b.match)});
  };

  const auto [a, pa] = run(3, nullptr, nullptr);
  const auto [b, pb] = run(3, nullptr, nullptr);
  const double rerun = std::max(diff(a[0].loss, b[0].loss), std::fabs(a[0].total - b[0].total));
  double rerun_all = 0;
  for (std::size_t i = 0; i < a.size(); ++i) rerun_all = std::max(rerun_all, diff(a[i].loss, b[i].loss));

  const fs::path dir = o.work / "resume";
  fs::create_directories(dir);
  const fs::path ckpt = dir / "epoch1";
  run(1, nullptr, &ckpt);
  const auto [c, pc] = run(3, &ckpt, nullptr);
  double resumed = 0;
  for (std::size_t i = 0; i < c.size(); ++i) resumed = std::max(resumed, diff(c[i].loss, a[i + 1].loss));
  double params = 0;
  for (std::size_t k = 0; k < pa.size(); ++k) params = std::max(params, static_cast<double>(std::fabs(pa[k] - pc[k])));

  Outcome r;
  r.pass = rerun <= 1e-9 && c.size() == 2 && resumed <= 1e-6 && params <= 1e-6;
  r.detail = fmt("rerun epoch-1 loss diff %.2e (all epochs %.2e); resumed vs uninterrupted: loss diff %.2e, "
                 "parameter diff %.2e",
                 rerun, rerun_all, resumed, params);
  return r;
}

}  // namespace

int main(int argc, char** argv) {
  Options opts;
  std::set<int> only;
  for (int i = 1; i < argc; ++i) {
    const std::string a = argv[i];
    if (a == "--only" && i + 1 < argc) {
      only.insert(std::atoi(argv[++i]));
    } else if (a == "--work" && i + 1 < argc) {
      opts.work = argv[++i];
    } else if (a == "--epochs" && i + 1 < argc) {
      opts.epochs = std::atoi(argv[++i]);
    } else {
      std::fprintf(stderr, "usage: %s [--only N]... [--work DIR] [--epochs E]\n", argv[0]);
      return 2;
    }
  }
  fs::create_directories(opts.work);

  const std::vector<std::pair<std::string, std::function<Outcome(const Options&)>>> criteria = {
      {"ground-truth fields match the dense oracle", field_oracle},
      {"propagation matrix", propagation},
      {"matching loss equals brute force", matching},
      {"composite-loss gradients match finite differences", gradients},
      {"deformation weight schedule", deform_weight_schedule},
      {"two close rectangles give two proposals", two_rectangles},
      {"OHEM negative counts", ohem},
      {"end-to-end detection quality", end_to_end},
      {"ablation ordering", ablations},
      {"determinism and resume", reproducibility},
  };
  int failures = 0;
  for (std::size_t i = 0; i < criteria.size(); ++i) {
    const int id = static_cast<int>(i) + 1;
    if (!only.empty() && !only.count(id)) continue;
    Outcome r;
    try {
      r = criteria[i].second(opts);
    } catch (const std::exception& e) {
      r = {false, std::string("exception: ") + e.what()};
    }
    failures += !r.pass;
    std::printf("criterion %d %s: %s - %s\n", id, r.pass ? "PASS" : "FAIL", criteria[i].first.c_str(),
                r.detail.c_str());
    std::fflush(stdout);
  }
  return failures ? 1 : 0;
}
