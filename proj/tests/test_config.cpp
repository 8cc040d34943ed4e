#include "prunelab/config.hpp"
#include "prunelab/harness.hpp"

#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>

using namespace prunelab;

TEST(Config, RealRangeIsInclusive) {
  auto v = parse_real_list("0.0:0.9:0.1");
  ASSERT_EQ(v.size(), 10u);
  EXPECT_EQ(v.front(), 0.0);
  EXPECT_EQ(v[3], 0.3);
  EXPECT_EQ(v.back(), 0.9);
  EXPECT_EQ(parse_real_list("0.5"), std::vector<double>{0.5});
  EXPECT_EQ(parse_real_list("1, 0.25,0.5"), (std::vector<double>{1.0, 0.25, 0.5}));
  EXPECT_THROW(parse_real_list("0.9:0.1:0.1"), ConfigError);
  EXPECT_THROW(parse_real_list("0:1:0"), ConfigError);
  EXPECT_THROW(parse_real_list("a,b"), ConfigError);
}

TEST(Config, SeedLists) {
  EXPECT_EQ(parse_seed_list("0:4"), (std::vector<std::uint64_t>{0, 1, 2, 3, 4}));
  EXPECT_EQ(parse_seed_list("7,3"), (std::vector<std::uint64_t>{7, 3}));
  EXPECT_THROW(parse_seed_list("4:0"), ConfigError);
  EXPECT_THROW(parse_seed_list("-1"), ConfigError);
}

TEST(Config, ParsesEverySection) {
  const std::string text = R"([data]
K = 3
d = 120
n = 30
mu = 2
sigma_n = 0.25
seed = 9
n_eval = 200

[model]
m = 12
sigma0 = 0.05
activation = relu
q = 3

[pruning]
p = 0.4
reject_signal = true
max_attempts = 77

[train]
eta = 0.5
epsilon = 0.001
t_max = 300
log_every = 5
track_decomposition = true
phase_threshold = 0.3
phase_mode = noise
check_invariants = true

[sweep]
p_values = 0.2:0.4:0.1
sigma_n_values = 0.25,0.5
seeds = 1:3
pruned_fraction_axis = false

[diagnostics]
enabled = false
n_mc = 1500
C = 2
alpha_multiplier = 3
noise_samples = 100
grad_ceiling = 50
)";
  auto c = parse_config(text);
  EXPECT_EQ(c.data.K, 3u);
  EXPECT_EQ(c.data.d, 120u);
  EXPECT_EQ(c.data.mu, 2.0);
  EXPECT_EQ(c.n_eval, 200u);
  EXPECT_EQ(c.model.activation, "relu");
  EXPECT_EQ(c.model.make_activation(), Activation::relu());
  EXPECT_TRUE(c.pruning.reject_signal);
  EXPECT_EQ(c.pruning.max_attempts, 77u);
  EXPECT_EQ(c.train.phase_threshold, 0.3);
  EXPECT_EQ(c.train.phase_mode, PhaseMode::noise);
  EXPECT_EQ(c.sweep.p_values, (std::vector<double>{0.2, 0.3, 0.4}));
  EXPECT_EQ(c.sweep.seeds, (std::vector<std::uint64_t>{1, 2, 3}));
  EXPECT_FALSE(c.diagnostics.enabled);
  EXPECT_EQ(c.diagnostics.grad_ceiling, 50.0);
}

TEST(Config, UnknownKeysAndSectionsAreErrors) {
  EXPECT_THROW(parse_config("[data]\nKK = 2\n"), ConfigError);
  EXPECT_THROW(parse_config("[nonsense]\nx = 1\n"), ConfigError);
  EXPECT_THROW(parse_config("stray = 1\n"), ConfigError);
  EXPECT_THROW(parse_config("[data]\nK = two\n"), ConfigError);
  EXPECT_THROW(parse_config("[train]\ntrack_decomposition = maybe\n"), ConfigError);
  EXPECT_THROW(parse_config("[model]\nactivation = tanh\n"), ConfigError);
  EXPECT_THROW(parse_config("[pruning]\np = 1.5\n"), ConfigError);
}

TEST(Config, IniRoundTripForEveryPreset) {
  for (const auto& name : preset_names()) {
    auto c = make_preset(name);
    auto back = parse_config(to_ini(c));
    EXPECT_EQ(to_ini(back), to_ini(c)) << name;
    EXPECT_EQ(back.sweep.p_values, c.sweep.p_values) << name;
    EXPECT_EQ(back.train.eta, c.train.eta) << name;
  }
}

TEST(Config, LoadFromFile) {
  auto path = std::filesystem::temp_directory_path() / "prunelab_cfg_test.ini";
  {
    std::ofstream out(path);
    out << "[data]\nK = 4\n";
  }
  EXPECT_EQ(load_config(path).data.K, 4u);
  std::filesystem::remove(path);
  EXPECT_THROW(load_config(path), IoError);
}
