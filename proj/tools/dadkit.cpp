// dadkit command-line interface: synth, train, distill, detect, eval, gradcheck.
// Exit codes: 0 success, 1 validation error, 2 runtime or numeric failure.

#include <CLI11.hpp>

#include <cmath>
#include <cstdio>
#include <iostream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "dadkit/dadkit.hpp"

namespace {

using namespace dadkit;

std::string dashed(std::string key) {
  std::replace(key.begin(), key.end(), '_', '-');
  return "--" + key;
}

// Flags common to every subcommand. Each config key is also a flag.
struct Common {
  std::string config_path;
  std::string out;
  std::map<std::string, std::string> flags;
  std::map<std::string, CLI::Option*> options;

  void attach(CLI::App* app, bool out_required, const std::vector<std::string>& skip = {}) {
    app->add_option("--config", config_path, "key=value config file")->check(CLI::ExistingFile);
    auto* o = app->add_option("--out", out, "output path");
    if (out_required) o->required();
    for (const KeySpec& k : config_keys()) {
      if (std::find(skip.begin(), skip.end(), k.name) != skip.end()) continue;
      options[k.name] = app->add_option(dashed(k.name), flags[k.name], k.help);
    }
  }

  RunConfig resolve() const {
    RunConfig rc;
    if (!config_path.empty()) rc.merge_file(config_path);
    for (const auto& [key, opt] : options)
      if (opt->count() > 0) rc.set(key, flags.at(key));
    return rc;
  }
};

void require_file(const fs::path& p, const std::string& what) {
  DADKIT_CHECK(fs::is_regular_file(p), ErrorKind::invalid_input, what + " not found: " + p.string());
}

void require_dir(const fs::path& p, const std::string& what) {
  DADKIT_CHECK(fs::is_directory(p), ErrorKind::invalid_input, what + " not found: " + p.string());
}

// ---- synth

int cmd_synth(const Common& c) {
  const RunConfig rc = c.resolve();
  const SceneConfig scene = rc.scene();
  const int n = rc.num_pairs(100);
  const std::uint64_t seed = rc.seed();
  const fs::path root = c.out;
  fs::create_directories(root);

  KeyValues meta = describe(scene);
  meta["seed"] = std::to_string(seed);
  meta["num_pairs"] = std::to_string(n);
  write_key_values(root / "meta.txt", meta);

  std::vector<int> negated(n, 0), rotated(n, 0);
  parallel_for(static_cast<std::size_t>(n), rc.threads(), [&](std::size_t i) {
    const PairSample s = gen_pair_indexed(seed, i, scene);
    write_pair(pair_dir(root, i), s, meta);
    negated[i] = s.negated_b;
    rotated[i] = s.rotation_k != 0;
  });
  std::cout << "pairs=" << n << "\nmode=" << meta["mode"] << "\nnegated_pairs="
            << std::count(negated.begin(), negated.end(), 1)
            << "\nrotated_pairs=" << std::count(rotated.begin(), rotated.end(), 1) << "\nout=" << root.string() << '\n';
  return 0;
}

// ---- train

int cmd_train(const Common& c) {
  const RunConfig rc = c.resolve();
  const TrainConfig cfg = rc.train();
  const fs::path root = c.out;
  fs::create_directories(root);
  KeyValues meta = describe(cfg);
  write_key_values(root / "meta.txt", meta);

  std::string log = loss_csv_header();
  double tail_reward = 0.0;
  int tail = 0;
  const int tail_start = std::max(0, cfg.steps - 200);
  const TrainResult res = train_loop(cfg, [&](int step, const LossReport& r) {
    log += loss_csv_row(step, r);
    if (step >= tail_start) {
      tail_reward += r.pair_reward;
      ++tail;
    }
    if ((step + 1) % 100 == 0) std::cerr << "step " << step + 1 << "/" << cfg.steps << " total " << r.total << '\n';
  });
  write_weights(root / "weights.dadw", res.params);
  {
    auto os = std::ofstream(root / "loss.csv");
    os << log;
    DADKIT_CHECK(os.good(), ErrorKind::io, "failed writing loss.csv");
  }
  std::cout << "steps=" << cfg.steps << "\nparameters=" << res.params.num_scalars()
            << "\nfinal_pair_reward_mean=" << format_real(tail > 0 ? tail_reward / tail : 0.0)
            << "\nweights=" << (root / "weights.dadw").string() << '\n';
  return 0;
}

// ---- distill

int cmd_distill(const Common& c, const std::string& light_path, const std::string& dark_path) {
  require_file(light_path, "light detector weights");
  require_file(dark_path, "dark detector weights");
  const RunConfig rc = c.resolve();
  const DistillConfig cfg = rc.distill();
  const DetectorParams light = read_weights(light_path), dark = read_weights(dark_path);
  const fs::path root = c.out;
  fs::create_directories(root);
  KeyValues meta = describe(cfg);
  meta["light_weights"] = light_path;
  meta["dark_weights"] = dark_path;
  write_key_values(root / "meta.txt", meta);

  std::string log = "step,kl\n";
  const DetectorParams student =
      distill_train(light, dark, cfg, [&](int step, double kl) { log += std::to_string(step) + ',' + format_real(kl) + '\n'; });
  write_weights(root / "student.dadw", student);
  auto os = std::ofstream(root / "distill_loss.csv");
  os << log;
  DADKIT_CHECK(os.good(), ErrorKind::io, "failed writing distill_loss.csv");
  std::cout << "steps=" << cfg.steps << "\nmerge_r=" << format_real(cfg.merge.r)
            << "\nweights=" << (root / "student.dadw").string() << '\n';
  return 0;
}

// ---- detect

Grid2d overlay(const Grid2d& image, const KeypointSet& kps) {
  Grid2d out = image;
  for (const Keypoint& kp : kps.keypoints) {
    const int cx = static_cast<int>(std::lround(kp.x)), cy = static_cast<int>(std::lround(kp.y));
    for (int dy = -2; dy <= 2; ++dy)
      for (int dx = -2; dx <= 2; ++dx) {
        if (std::max(std::abs(dx), std::abs(dy)) != 2) continue;
        const int y = cy + dy, x = cx + dx;
        if (y < 0 || y >= out.height() || x < 0 || x >= out.width()) continue;
        // Ring contrasting with the local background.
        out(y, x) = image(cy, cx) > 0.5 ? 0.0 : 1.0;
      }
  }
  return out;
}

void detect_one(const DetectorParams& params, const Grid2d& image, const SamplerConfig& sc, SampleMode mode,
                const fs::path& dir, const std::string& stem, bool dump, bool draw) {
  const ScoreMap s = forward(params, image).scoremap;
  const KeypointSet kps = sample_keypoints(s, sc, mode);
  write_keypoints(dir / (stem + ".csv"), kps);
  if (dump) write_dadf(dir / ("scoremap_" + stem.substr(stem.size() - 1) + ".dadf"), s.logits());
  if (draw) write_pgm(dir / ("overlay_" + stem.substr(stem.size() - 1) + ".pgm"), overlay(image, kps));
}

int cmd_detect(const Common& c, const std::string& weights, const std::string& input, const std::string& mode_flag,
               bool dump, bool draw) {
  require_file(weights, "weights");
  DADKIT_CHECK(fs::exists(input), ErrorKind::invalid_input, "input not found: " + input);
  RunConfig rc = c.resolve();
  if (!mode_flag.empty()) rc.set("sample_mode", mode_flag);
  const SampleMode mode = rc.sample_mode(SampleMode::inference);
  const SamplerConfig sc = rc.sampler(SamplerConfig{});
  const DetectorParams params = read_weights(weights);
  const fs::path root = c.out;
  fs::create_directories(root);

  KeyValues meta = describe(sc);
  meta["sample_mode"] = mode == SampleMode::train ? "train" : "inference";
  meta["weights"] = weights;
  meta["input"] = input;
  write_key_values(root / "meta.txt", meta);

  std::size_t images = 0;
  if (fs::is_directory(input)) {
    const std::vector<fs::path> pairs = list_pairs(input);
    parallel_for(pairs.size(), rc.threads(), [&](std::size_t i) {
      const fs::path dir = root / pairs[i].filename();
      fs::create_directories(dir);
      detect_one(params, read_pgm(pairs[i] / "a.pgm"), sc, mode, dir, "kp_a", dump, draw);
      detect_one(params, read_pgm(pairs[i] / "b.pgm"), sc, mode, dir, "kp_b", dump, draw);
    });
    images = 2 * pairs.size();
  } else {
    const Grid2d image = read_pgm(input);
    const ScoreMap s = forward(params, image).scoremap;
    const KeypointSet kps = sample_keypoints(s, sc, mode);
    write_keypoints(root / "keypoints.csv", kps);
    if (dump) write_dadf(root / "scoremap.dadf", s.logits());
    if (draw) write_pgm(root / "overlay.pgm", overlay(image, kps));
    images = 1;
  }
  std::cout << "images=" << images << "\ntopk=" << sc.k << "\nout=" << root.string() << '\n';
  return 0;
}

// ---- eval

struct PairEval {
  std::string name;
  RepeatabilityResult rep;
  int matches = 0;
  int inliers = 0;
  double epe = std::numeric_limits<double>::quiet_NaN();  // NaN when not applicable (toy pairs)
};

PairEval eval_pair(const fs::path& pair_path, const std::optional<fs::path>& kp_root, double threshold,
                   const RansacConfig& rcfg) {
  const StoredPair sp = read_pair(pair_path);
  PairEval out;
  out.name = pair_path.filename().string();
  KeypointSet ka = sp.keypoints_a(), kb = sp.keypoints_b();
  if (kp_root) {
    const fs::path dir = *kp_root / out.name;
    require_file(dir / "kp_a.csv", "keypoint file");
    require_file(dir / "kp_b.csv", "keypoint file");
    ka = read_keypoints(dir / "kp_a.csv", sp.image_a.shape());
    kb = read_keypoints(dir / "kp_b.csv", sp.image_b.shape());
  }
  sp.with_transfer([&](const auto& t) {
    out.rep = repeatability(ka, kb, t, threshold);
    const MatchPair m = match_mutual_nn(ka, kb, t, threshold);
    out.matches = static_cast<int>(m.a_to_b.size());
    if (sp.toy) return 0;
    std::vector<Correspondence> corr;
    for (const Match& mm : m.a_to_b.pairs)
      corr.push_back({{ka[mm.index_a].x, ka[mm.index_a].y}, {kb[mm.index_b].x, kb[mm.index_b].y}});
    out.epe = std::numeric_limits<double>::infinity();
    if (corr.size() < 4) return 0;
    try {
      const RansacResult r = ransac_homography(corr, rcfg);
      out.inliers = r.num_inliers;
      out.epe = corner_epe(r.h, sp.transfer, sp.image_a.shape());
    } catch (const Error& e) {
      if (e.kind() != ErrorKind::degenerate_input && e.kind() != ErrorKind::insufficient_data) throw;
    }
    return 0;
  });
  return out;
}

int cmd_eval(const Common& c, const std::string& data, const std::string& keypoints) {
  require_dir(data, "dataset directory");
  if (!keypoints.empty()) require_dir(keypoints, "keypoint directory");
  const RunConfig rc = c.resolve();
  const double threshold = rc.eval_threshold();
  const RansacConfig rcfg = rc.ransac();
  const std::vector<fs::path> pairs = list_pairs(data);
  std::vector<PairEval> results(pairs.size());
  const std::optional<fs::path> kp_root = keypoints.empty() ? std::nullopt : std::optional<fs::path>(keypoints);
  parallel_for(pairs.size(), rc.threads(), [&](std::size_t i) {
    RansacConfig per = rcfg;
    per.seed = pair_seed(rcfg.seed, i);
    results[i] = eval_pair(pairs[i], kp_root, threshold, per);
  });

  std::ostringstream csv;
  csv << "pair,repeatability,covisible,repeated,matches,inliers,corner_epe\n";
  double rep_sum = 0.0;
  int rep_n = 0;
  std::vector<double> epes;
  for (const PairEval& r : results) {
    csv << r.name << ',' << format_real(r.rep.value) << ',' << r.rep.covisible << ',' << r.rep.repeated << ','
        << r.matches << ',' << r.inliers << ',' << format_real(r.epe) << '\n';
    if (!std::isnan(r.rep.value)) {
      rep_sum += r.rep.value;
      ++rep_n;
    }
    if (!std::isnan(r.epe)) epes.push_back(r.epe);
  }
  KeyValues metrics;
  metrics["pairs"] = std::to_string(results.size());
  metrics["threshold_px"] = format_real(threshold);
  metrics["keypoints"] = keypoints.empty() ? "ground_truth" : keypoints;
  metrics["repeatability_pairs"] = std::to_string(rep_n);
  metrics["mean_repeatability"] = format_real(rep_n > 0 ? rep_sum / rep_n : std::numeric_limits<double>::quiet_NaN());
  metrics["homography_pairs"] = std::to_string(epes.size());
  for (double t : {3.0, 5.0, 10.0}) {
    const std::string key = "auc_corner_epe_" + std::to_string(static_cast<int>(t)) + "px";
    metrics[key] = epes.empty() ? "nan" : format_real(auc({epes, t}));
  }

  const fs::path root = c.out.empty() ? fs::path(data) / "eval" : fs::path(c.out);
  fs::create_directories(root);
  write_key_values(root / "metrics.txt", metrics);
  auto os = std::ofstream(root / "per_pair.csv");
  os << csv.str();
  DADKIT_CHECK(os.good(), ErrorKind::io, "failed writing per_pair.csv");
  for (const auto& [k, v] : metrics) std::cout << k << '=' << v << '\n';
  return 0;
}

// ---- gradcheck

int cmd_gradcheck(const Common& c) {
  const RunConfig rc = c.resolve();
  GradcheckConfig g;
  g.instances = rc.small_int("gradcheck_instances", g.instances);
  g.step = rc.real("gradcheck_step", g.step);
  g.tolerance = rc.real("gradcheck_tol", g.tolerance);
  g.seed = rc.seed();
  try {
    g.validate();
  } catch (const Error& e) {
    throw Error(ErrorKind::invalid_parameter, e.message());
  }
  const GradcheckReport r = run_gradcheck(g);
  KeyValues report;
  report["instances"] = std::to_string(r.instances);
  report["parameters_checked"] = std::to_string(r.parameters_checked);
  report["parameters_skipped_relu_kink"] = std::to_string(r.parameters_skipped);
  for (LossTerm t : kLossTerms)
    report[std::string("max_rel_error_") + to_string(t)] = format_real(r.max_rel_error[int(t)]);
  report["max_rel_error"] = format_real(r.max_rel_error_all);
  report["max_rel_error_grad_ge_1e-5"] = format_real(r.max_rel_error_large);
  report["max_abs_error"] = format_real(r.max_abs_error);
  report["max_error_floored_denominator"] = format_real(r.max_floored_denominator_error);
  report["tolerance"] = format_real(g.tolerance);
  report["passed"] = r.passed(g.tolerance) ? "1" : "0";
  if (!c.out.empty()) write_key_values(c.out, report);
  for (const auto& [k, v] : report) std::cout << k << '=' << v << '\n';
  if (!r.passed(g.tolerance)) {
    std::cerr << "gradient check failed: " << r.worst << '\n';
    return 2;
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"dadkit: descriptor-free keypoint detector toolkit"};
  app.require_subcommand(1);

  Common synth_c, train_c, distill_c, detect_c, eval_c, grad_c;
  auto* synth = app.add_subcommand("synth", "generate a synthetic pair dataset");
  synth_c.attach(synth, true);
  auto* train = app.add_subcommand("train", "train a detector with the RL objective");
  train_c.attach(train, true);
  auto* distill = app.add_subcommand("distill", "distill a light and a dark detector into one student");
  distill_c.attach(distill, true);
  std::string light, dark;
  distill->add_option("--light", light, "light detector weights")->required();
  distill->add_option("--dark", dark, "dark detector weights")->required();
  auto* detect = app.add_subcommand("detect", "detect keypoints in a PGM image or a dataset");
  detect_c.attach(detect, true, {"mode", "sample_mode"});
  std::string weights, input, detect_mode;
  bool dump = false, draw = false;
  detect->add_option("--weights", weights, "detector weights")->required();
  detect->add_option("--input", input, "PGM image or dataset directory")->required();
  detect->add_option("--mode,--sample-mode", detect_mode, "inference or train");
  detect->add_flag("--dump-scoremap", dump, "also write the scoremap as DADF");
  detect->add_flag("--overlay", draw, "also write a keypoint overlay PGM");
  auto* eval = app.add_subcommand("eval", "evaluate keypoints on a dataset");
  eval_c.attach(eval, false);
  std::string data, keypoints;
  eval->add_option("--data", data, "dataset directory")->required();
  eval->add_option("--keypoints", keypoints, "directory of per-pair kp_a.csv/kp_b.csv (default: ground truth)");
  auto* grad = app.add_subcommand("gradcheck", "finite-difference check of all loss gradients");
  grad_c.attach(grad, false);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 1;
  }

  try {
    if (*synth) return cmd_synth(synth_c);
    if (*train) return cmd_train(train_c);
    if (*distill) return cmd_distill(distill_c, light, dark);
    if (*detect) return cmd_detect(detect_c, weights, input, detect_mode, dump, draw);
    if (*eval) return cmd_eval(eval_c, data, keypoints);
    if (*grad) return cmd_gradcheck(grad_c);
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << '\n';
    return e.is_validation() ? 1 : 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 2;
  }
  return 1;
}
