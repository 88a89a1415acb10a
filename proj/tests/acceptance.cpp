// Acceptance suite: one PASS/FAIL line per criterion, followed by the measured
// numbers. Exit status is nonzero if any criterion fails.

#include <openssl/evp.h>

#include <CLI11.hpp>
#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iomanip>
#include <iostream>
#include <map>
#include <numeric>
#include <random>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "dadkit/distill.hpp"
#include "dadkit/eval.hpp"
#include "dadkit/gradcheck.hpp"
#include "dadkit/sampler.hpp"
#include "dadkit/synth.hpp"
#include "dadkit/train.hpp"

namespace fs = std::filesystem;
using namespace dadkit;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

std::string fmt(double v, int prec = 4) {
  std::ostringstream os;
  os << std::setprecision(prec) << v;
  return os.str();
}

// ---------------------------------------------------------------------------

Outcome gradient_suite() {
  const auto t0 = Clock::now();
  GradcheckConfig cfg;  // 50 instances, 12..16 px, step 1e-4, floor 1e-8
  const GradcheckReport r = run_gradcheck(cfg);
  const double secs = seconds_since(t0);
  std::ostringstream os;
  os << "instances=" << r.instances << " checked=" << r.parameters_checked << " skipped_kink=" << r.parameters_skipped
     << " max_abs_error=" << fmt(r.max_abs_error, 3) << " max_rel_grad_ge_1e-5=" << fmt(r.max_rel_error_large, 3);
  for (LossTerm t : kLossTerms) os << " max_rel_" << to_string(t) << "=" << fmt(r.max_rel_error[int(t)], 3);
  os << " seconds=" << fmt(secs, 3);
  return {r.passed(cfg.tolerance) && r.instances == 50 && secs < 120, os.str()};
}

Outcome reward_table() {
  const auto t0 = Clock::now();
  const SceneConfig toy;
  const double mixed = expected_strategy_reward(ToyStrategy::mixed_5_5, toy, 100000);
  const double light = expected_strategy_reward(ToyStrategy::light_only, toy, 100000);
  const double dark = expected_strategy_reward(ToyStrategy::dark_only, toy, 100000);
  const double secs = seconds_since(t0);
  const bool ok = std::abs(mixed - 5.0) <= 0.1 && light == 10.0 && dark == 10.0 && secs < 30;
  return {ok, "mixed=" + fmt(mixed, 6) + " light=" + fmt(light) + " dark=" + fmt(dark) + " seconds=" + fmt(secs, 3)};
}

// Toy detectors for seeds 0..2, kept for the distillation criterion.
std::map<std::uint64_t, DetectorParams> g_toy_detectors;

Outcome emergence() {
  bool ok = true;
  std::ostringstream os;
  for (std::uint64_t seed : {0, 1, 2}) {
    const auto t0 = Clock::now();
    TrainConfig cfg;
    cfg.steps = 2000;
    cfg.seed = seed;
    std::vector<double> reward;
    const TrainResult r = train_loop(cfg, [&](int, const LossReport& rep) { reward.push_back(rep.pair_reward); });
    const double secs = seconds_since(t0);
    const double tail = std::accumulate(reward.end() - 200, reward.end(), 0.0) / 200;
    // Fraction of 200-step moving-average windows that strictly increase.
    std::vector<double> ma;
    double acc = 0;
    for (std::size_t i = 0; i < reward.size(); ++i) {
      acc += reward[i];
      if (i >= 200) acc -= reward[i - 200];
      if (i >= 199) ma.push_back(acc / 200);
    }
    int rising = 0;
    for (std::size_t i = 1; i < ma.size(); ++i) rising += ma[i] > ma[i - 1];
    const PolarityStats st = polarity_stats(r.params, cfg.scene, 1000 + seed, 100, 10);
    const bool seed_ok = tail >= 9.0 && st.single_polarity >= 0.9 && secs < 600;
    ok = ok && seed_ok;
    os << " seed" << seed << ":{reward_last200=" << fmt(tail) << " single_polarity=" << fmt(st.single_polarity)
       << " light_share=" << fmt(st.light_share, 3) << " ma_rising_frac=" << fmt(double(rising) / (ma.size() - 1), 3)
       << " seconds=" << fmt(secs, 3) << "}";
    g_toy_detectors[seed] = r.params;
  }
  return {ok, os.str().substr(1)};
}

Outcome distillation() {
  for (std::uint64_t seed : {0, 1})
    if (!g_toy_detectors.count(seed)) {
      TrainConfig cfg;
      cfg.seed = seed;
      g_toy_detectors[seed] = train_loop(cfg).params;
    }
  const auto t0 = Clock::now();
  const SceneConfig scene;
  const std::uint64_t held_out = 5000;
  const int images = 100, budget = 10;
  const PolarityStats s0 = polarity_stats(g_toy_detectors[0], scene, held_out, images, budget);
  const PolarityStats s1 = polarity_stats(g_toy_detectors[1], scene, held_out, images, budget);
  const bool zero_is_light = s0.light_recall > s0.dark_recall;
  const DetectorParams& light = zero_is_light ? g_toy_detectors[0] : g_toy_detectors[1];
  const DetectorParams& dark = zero_is_light ? g_toy_detectors[1] : g_toy_detectors[0];
  const PolarityStats& sl = zero_is_light ? s0 : s1;
  const PolarityStats& sd = zero_is_light ? s1 : s0;
  const bool teachers_ok =
      sl.light_recall >= 0.8 && sl.dark_recall <= 0.2 && sd.dark_recall >= 0.8 && sd.light_recall <= 0.2;

  DistillConfig dc;  // r = infinity
  const DetectorParams student = distill_train(light, dark, dc);
  // The student gets the two teachers' combined budget.
  const PolarityStats ss = polarity_stats(student, scene, held_out, images, 2 * budget);
  // For comparison only: each teacher alone at the student's budget.
  const PolarityStats sl2 = polarity_stats(light, scene, held_out, images, 2 * budget);
  const PolarityStats sd2 = polarity_stats(dark, scene, held_out, images, 2 * budget);
  const double secs = seconds_since(t0);
  const bool ok = teachers_ok && ss.light_recall >= 0.8 && ss.dark_recall >= 0.8 && secs < 900;
  std::ostringstream os;
  os << "light_teacher:{L=" << fmt(sl.light_recall, 3) << " D=" << fmt(sl.dark_recall, 3) << "} dark_teacher:{L="
     << fmt(sd.light_recall, 3) << " D=" << fmt(sd.dark_recall, 3) << "} student@" << 2 * budget
     << ":{L=" << fmt(ss.light_recall, 3) << " D=" << fmt(ss.dark_recall, 3) << "} light_teacher@" << 2 * budget
     << ":{L=" << fmt(sl2.light_recall, 3) << " D=" << fmt(sl2.dark_recall, 3) << "} dark_teacher@" << 2 * budget
     << ":{L=" << fmt(sd2.light_recall, 3) << " D=" << fmt(sd2.dark_recall, 3) << "} seconds=" << fmt(secs, 3);
  return {ok, os.str()};
}

Outcome max_theorem() {
  const auto t0 = Clock::now();
  std::mt19937_64 rng(77);
  const Shape s{64, 64};
  std::uniform_real_distribution<double> cy(8.0, 55.0), radius(4.0, 12.0), amp(0.2, 2.0);
  int partner_violations = 0, partners = 0;
  for (int i = 0; i < 1000; ++i) {
    const auto f = KeypointFunction::bump(s, cy(rng), cy(rng), radius(rng), amp(rng));
    const auto g = KeypointFunction::bump(s, cy(rng), cy(rng), radius(rng), amp(rng));
    const MergeCheck c = check_partner_merge(f, g);
    partners += c.verdict == MergeVerdict::partners;
    partner_violations += c.union_violation || c.partner_violation;
  }
  // Arbitrary smooth maps with many maxima each.
  int extra = 0;
  std::normal_distribution<double> n01;
  for (int i = 0; i < 1000; ++i) {
    Grid2d a(48, 48), b(48, 48);
    for (double& v : a) v = n01(rng);
    for (double& v : b) v = n01(rng);
    const double sigma = 1.0 + (i % 4);
    a = gaussian_blur(a, sigma);
    b = gaussian_blur(b, sigma);
    // Positive, same maxima.
    for (double& v : a) v = std::exp(v);
    for (double& v : b) v = std::exp(v);
    std::set<Pixel> both = local_maxima(a);
    for (const Pixel& p : local_maxima(b)) both.insert(p);
    for (const Pixel& p : local_maxima(generalized_mean(a, b, std::numeric_limits<double>::infinity())))
      extra += !both.count(p);
  }
  const double secs = seconds_since(t0);
  return {partner_violations == 0 && extra == 0 && secs < 60,
          "partner_pairs=" + std::to_string(partners) + "/1000 violations=" + std::to_string(partner_violations) +
              " arbitrary_extra_maxima=" + std::to_string(extra) + " seconds=" + fmt(secs, 3)};
}

Outcome sampler_properties() {
  const auto t0 = Clock::now();
  std::mt19937_64 rng(88);
  std::uniform_int_distribution<int> size(16, 48), kk(1, 64);
  std::uniform_real_distribution<double> logit(-4.0, 4.0);
  int not_strict = 0, priority = 0, duplicate = 0, selected = 0;
  for (int trial = 0; trial < 500; ++trial) {
    Grid2d logits(size(rng), size(rng));
    for (double& v : logits) v = logit(rng);
    SamplerConfig cfg;
    cfg.k = kk(rng);
    cfg.subpixel = false;
    const SampleMode mode = trial % 2 ? SampleMode::inference : SampleMode::train;
    const ScoreMap sm(logits);
    const ProbMap p = softmax_2d(sm);
    const Grid2d ranked = mode == SampleMode::train ? kde_balance(p, kde_sigma_pixels(cfg, p.shape())) : p.probs();
    const KeypointSet kps = sample_keypoints(sm, cfg, mode);
    std::set<std::pair<int, int>> chosen;
    for (const Keypoint& kp : kps.keypoints) {
      const int y = int(kp.y), x = int(kp.x);
      duplicate += !chosen.insert({y, x}).second;
      for (int dy = -1; dy <= 1; ++dy)
        for (int dx = -1; dx <= 1; ++dx)
          if ((dy || dx) && ranked.shape().contains(y + dy, x + dx) && ranked(y + dy, x + dx) >= ranked(y, x))
            ++not_strict;
    }
    selected += int(kps.size());
    // Every unselected window maximum ranks below every selected keypoint.
    const Grid2d survivors = nms(ranked, cfg.nms_window);
    for (int y = 0; y < ranked.height(); ++y)
      for (int x = 0; x < ranked.width(); ++x) {
        if (survivors(y, x) == 0.0 || chosen.count({y, x})) continue;
        for (const auto& [cy, cx] : chosen) priority += ranked(y, x) > ranked(cy, cx);
      }
  }

  // A dense cluster of nine equal peaks and one faint isolated peak.
  Grid2d s(200, 200, -40.0);
  for (int i = 0; i < 3; ++i)
    for (int j = 0; j < 3; ++j) s(50 + 2 * i, 50 + 2 * j) = 0.0;
  s(150, 150) = -std::log(3.0);
  auto hits_faint = [](const KeypointSet& k) {
    return std::any_of(k.keypoints.begin(), k.keypoints.end(),
                       [](const Keypoint& kp) { return kp.x == 150 && kp.y == 150; });
  };
  SamplerConfig on;
  on.k = 4;
  SamplerConfig off = on;
  off.use_kde = false;
  const bool kde_on = hits_faint(sample_keypoints(ScoreMap(s), on, SampleMode::train));
  const bool kde_off = hits_faint(sample_keypoints(ScoreMap(s), off, SampleMode::train));
  const double secs = seconds_since(t0);
  const bool ok = not_strict == 0 && priority == 0 && duplicate == 0 && kde_on && !kde_off && secs < 60;
  return {ok, "selected=" + std::to_string(selected) + " non_strict=" + std::to_string(not_strict) +
                  " priority_violations=" + std::to_string(priority) + " duplicates=" + std::to_string(duplicate) +
                  " two_cluster_kde_on_covers_both=" + std::to_string(kde_on) +
                  " two_cluster_kde_off_covers_both=" + std::to_string(kde_off) + " seconds=" + fmt(secs, 3)};
}

Outcome eval_self_check() {
  const auto t0 = Clock::now();
  const SceneConfig scene = SceneConfig::scene_defaults();
  std::vector<double> epe;
  double min_rep = 1.0;
  int rep_pairs = 0;
  for (int i = 0; i < 200; ++i) {
    const PairSample p = gen_pair_indexed(6000, std::uint64_t(i), scene);
    std::vector<Correspondence> corr;
    for (std::size_t j = 0; j < p.gt_b.size(); ++j) {
      const Keypoint& a = p.gt_a[p.gt_b_source[j]];
      corr.push_back({{a.x, a.y}, {p.gt_b[j].x, p.gt_b[j].y}});
    }
    double e = std::numeric_limits<double>::infinity();
    try {
      e = corner_epe(ransac_homography(corr, {2.0, 200, pair_seed(6000, i)}).h, p.transfer, p.image_a.shape());
    } catch (const Error&) {
    }
    epe.push_back(e);
    const RepeatabilityResult r = repeatability(p.gt_a, p.gt_b, p.transfer, 1.0);
    if (!std::isnan(r.value)) {
      ++rep_pairs;
      min_rep = std::min(min_rep, r.value);
    }
  }
  const double a3 = auc({epe, 3.0});
  const double secs = seconds_since(t0);
  return {a3 >= 0.99 && min_rep == 1.0 && rep_pairs > 0 && secs < 120,
          "auc_corner_epe_3px=" + fmt(a3, 6) + " min_repeatability=" + fmt(min_rep) + " over " +
              std::to_string(rep_pairs) + " pairs seconds=" + fmt(secs, 3)};
}

Outcome subpixel() {
  const auto t0 = Clock::now();
  std::mt19937_64 rng(99);
  std::uniform_real_distribution<double> centre(12.0, 20.0), width(1.0, 2.0), height(3.0, 8.0);
  double err_int = 0, err_sub = 0;
  SamplerConfig with;
  with.k = 1;
  SamplerConfig without = with;
  without.subpixel = false;
  const int n = 500;
  for (int i = 0; i < n; ++i) {
    const double cx = centre(rng), cy = centre(rng), s = width(rng), amp = height(rng);
    Grid2d g(32, 32);
    for (int y = 0; y < 32; ++y)
      for (int x = 0; x < 32; ++x) g(y, x) = amp * std::exp(-((x - cx) * (x - cx) + (y - cy) * (y - cy)) / (2 * s * s));
    const ScoreMap sm(g);
    const Keypoint a = sample_keypoints(sm, without, SampleMode::inference)[0];
    const Keypoint b = sample_keypoints(sm, with, SampleMode::inference)[0];
    err_int += std::hypot(a.x - cx, a.y - cy) / n;
    err_sub += std::hypot(b.x - cx, b.y - cy) / n;
  }
  const double reduction = 1.0 - err_sub / err_int;
  const double secs = seconds_since(t0);
  return {reduction >= 0.3 && secs < 60, "mean_err_integer=" + fmt(err_int) + " mean_err_subpixel=" + fmt(err_sub) +
                                             " reduction=" + fmt(reduction, 3) + " seconds=" + fmt(secs, 3)};
}

// ---------------------------------------------------------------------------

std::string sha256_file(const fs::path& p) {
  std::ifstream is(p, std::ios::binary);
  const std::string data{std::istreambuf_iterator<char>(is), {}};
  unsigned char md[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  EVP_Digest(data.data(), data.size(), md, &len, EVP_sha256(), nullptr);
  std::ostringstream os;
  for (unsigned int i = 0; i < len; ++i) os << std::hex << std::setw(2) << std::setfill('0') << int(md[i]);
  return os.str();
}

std::map<std::string, std::string> hash_tree(const fs::path& root) {
  std::map<std::string, std::string> out;
  if (fs::is_regular_file(root)) {
    out[root.filename().string()] = sha256_file(root);
    return out;
  }
  for (const auto& e : fs::recursive_directory_iterator(root))
    if (e.is_regular_file()) out[fs::relative(e.path(), root).string()] = sha256_file(e.path());
  return out;
}

Outcome determinism(const std::string& cli, const fs::path& work) {
  const auto t0 = Clock::now();
  // {name, arguments}; "@" stands for the run directory.
  const std::vector<std::pair<std::string, std::string>> commands{
      {"synth_toy", "synth --num-pairs 6 --seed 3 --out @/synth_toy"},
      {"synth_scenes", "synth --mode scenes --num-pairs 6 --seed 3 --rotation-aug 1 --negation-aug rgb --out @/synth_scenes"},
      {"train_toy", "train --num-pairs 20 --seed 1 --out @/train_toy"},
      {"train_scenes", "train --mode scenes --num-pairs 6 --batch-size 2 --threads 2 --widths 4,4 --seed 4 --out @/train_scenes"},
      {"detect_dataset", "detect --weights @/train_scenes/weights.dadw --input @/synth_scenes --out @/detect"},
      {"detect_image",
       "detect --weights @/train_toy/weights.dadw --input @/synth_toy/pair_000000/a.pgm --topk 10 --dump-scoremap "
       "--overlay --out @/detect_image"},
      {"eval_gt", "eval --data @/synth_scenes --out @/eval_gt"},
      {"eval_detect", "eval --data @/synth_scenes --keypoints @/detect --out @/eval_detect"},
      {"distill",
       "distill --light @/train_toy/weights.dadw --dark @/train_scenes/weights.dadw --widths 4 --distill-steps 6 "
       "--out @/distill"},
      {"gradcheck", "gradcheck --gradcheck-instances 2 --out @/gradcheck.txt"},
  };
  std::vector<std::string> out_dirs;
  for (const auto& [name, args] : commands) {
    const std::string arg_out = args.substr(args.rfind("@/") + 2);
    out_dirs.push_back(arg_out);
  }
  std::map<std::string, std::string> hashes[2];
  bool ran = true;
  std::string failed;
  for (int run = 0; run < 2; ++run) {
    // Same directory both times: outputs echo their input paths.
    const fs::path dir = work / "run";
    fs::remove_all(dir);
    fs::create_directories(dir);
    for (const auto& [name, args] : commands) {
      std::string a = args;
      for (std::size_t pos; (pos = a.find('@')) != std::string::npos;) a.replace(pos, 1, dir.string());
      const std::string cmd = cli + " " + a + " >" + (dir / (name + ".log")).string() + " 2>&1";
      if (std::system(cmd.c_str()) != 0) {
        ran = false;
        failed += " " + name;
      }
    }
    for (const std::string& o : out_dirs)
      if (fs::exists(dir / o))
        for (const auto& [k, v] : hash_tree(dir / o)) hashes[run][o + "/" + k] = v;
  }
  int differing = 0;
  for (const auto& [k, v] : hashes[0]) differing += !hashes[1].count(k) || hashes[1].at(k) != v;
  const double secs = seconds_since(t0);
  const bool ok = ran && !hashes[0].empty() && hashes[0].size() == hashes[1].size() && differing == 0;
  std::string detail = "commands=" + std::to_string(commands.size()) + " artifacts=" + std::to_string(hashes[0].size()) +
                       " differing=" + std::to_string(differing) + " seconds=" + fmt(secs, 3);
  if (!ran) detail += " failed:" + failed;
  return {ok, detail};
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"dadkit acceptance suite"};
  std::string cli = "dadkit";
  fs::path work = fs::temp_directory_path() / "dadkit_acceptance";
  std::vector<int> only;
  app.add_option("--cli", cli, "path to the dadkit executable");
  app.add_option("--work", work, "scratch directory for CLI runs");
  app.add_option("--only", only, "run only these criteria (1-9)");
  CLI11_PARSE(app, argc, argv);

  const std::vector<std::pair<std::string, std::function<Outcome()>>> criteria{
      {"gradient suite", gradient_suite},
      {"toy expected-reward table", reward_table},
      {"light/dark emergence on toy data", emergence},
      {"max-merge distillation recovers both polarities", distillation},
      {"max-theorem property suite", max_theorem},
      {"sampler properties", sampler_properties},
      {"evaluation harness self-check", eval_self_check},
      {"subpixel refinement", subpixel},
      {"CLI determinism", [&] { return determinism(cli, work); }},
  };
  int failures = 0;
  for (std::size_t i = 0; i < criteria.size(); ++i) {
    const int id = int(i) + 1;
    if (!only.empty() && std::find(only.begin(), only.end(), id) == only.end()) continue;
    Outcome o;
    try {
      o = criteria[i].second();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    failures += !o.pass;
    std::cout << (o.pass ? "PASS" : "FAIL") << " " << id << " " << criteria[i].first << ": " << o.detail << std::endl;
  }
  return failures == 0 ? 0 : 1;
}
