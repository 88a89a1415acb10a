// Trains the mini detector on the light/dark toy model and reports which
// polarity it settled on.
//
//   emergence_demo [seed] [pairs]

#include <cstdio>
#include <string>

#include "dadkit/train.hpp"

int main(int argc, char** argv) {
  dadkit::TrainConfig cfg;
  cfg.seed = argc > 1 ? std::stoull(argv[1]) : 0;
  cfg.steps = argc > 2 ? std::stoi(argv[2]) : 300;
  const auto res = dadkit::train_loop(cfg, [](int step, const dadkit::LossReport& r) {
    if ((step + 1) % 50 == 0) std::printf("step %4d  pair reward %5.2f  matches %d\n", step + 1, r.pair_reward, r.num_matches);
  });
  const auto st = dadkit::polarity_stats(res.params, cfg.scene, cfg.seed + 1000, 50, 10);
  std::printf("light recall %.2f  dark recall %.2f  single-polarity %.2f -> %s detector\n", st.light_recall,
              st.dark_recall, st.single_polarity, st.light_share >= 0.5 ? "light" : "dark");
}
