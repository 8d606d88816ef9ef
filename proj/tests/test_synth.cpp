#include <algorithm>
#include <cmath>
#include <cstring>
#include <set>
#include <vector>

#include <gtest/gtest.h>

#include "himem/config.hpp"
#include "himem/synthetic.hpp"

namespace {

using himem::Episode;
using himem::Scenario;
using himem::ScenarioModel;
using himem::ScenarioSpec;
using himem::Tensor;

bool same_tensor(const Tensor& a, const Tensor& b) {
  return a.shape() == b.shape() &&
         std::memcmp(a.data().data(), b.data().data(),
                     a.numel() * sizeof(double)) == 0;
}

ScenarioSpec base_spec(Scenario s) {
  ScenarioSpec spec;
  spec.scenario = s;
  spec.action_classes = 6;
  spec.dim = 16;
  spec.noise = 0.1;
  spec.mean_duration = 6.0;
  spec.frames = 400;
  spec.seed = 99;
  return spec;
}

TEST(Scenario, ParseFormatRoundTrip) {
  for (auto s : {Scenario::kOneByOne, Scenario::kOneByTwo,
                 Scenario::kTwoByOne, Scenario::kTwoByTwo}) {
    EXPECT_EQ(himem::parse_scenario(himem::format_scenario(s)), s);
    EXPECT_EQ(himem::scenario_from_code(himem::scenario_code(s)), s);
  }
  EXPECT_EQ(himem::scenario_code(Scenario::kTwoByOne), 21u);
  EXPECT_EQ(himem::scenario_agents(Scenario::kTwoByTwo), 2u);
  EXPECT_EQ(himem::scenario_tasks(Scenario::kOneByTwo), 2u);
  EXPECT_THROW(himem::parse_scenario("3x1"), himem::ValidationError);
  EXPECT_THROW(himem::scenario_from_code(13), himem::ValidationError);
}

TEST(ScenarioSpec, Validation) {
  ScenarioSpec spec = base_spec(Scenario::kOneByOne);
  spec.action_classes = 2;
  EXPECT_THROW(spec.validate(), himem::ValidationError);

  spec = base_spec(Scenario::kTwoByTwo);
  spec.action_classes = 3;
  EXPECT_THROW(spec.validate(), himem::ValidationError);

  spec = base_spec(Scenario::kOneByOne);
  spec.coupling = 0.5;
  EXPECT_THROW(spec.validate(), himem::ValidationError);

  spec = base_spec(Scenario::kTwoByOne);
  spec.coupling = 1.5;
  EXPECT_THROW(spec.validate(), himem::ValidationError);

  spec = base_spec(Scenario::kOneByOne);
  spec.mean_duration = 0.5;
  EXPECT_THROW(spec.validate(), himem::ValidationError);

  spec = base_spec(Scenario::kOneByOne);
  spec.frames = 1;
  EXPECT_THROW(spec.validate(), himem::ValidationError);
}

TEST(Generator, DeterministicPerSeed) {
  ScenarioSpec spec = base_spec(Scenario::kTwoByTwo);
  spec.action_classes = 8;
  spec.coupling = 0.7;
  Episode a = himem::generate_episode(spec);
  Episode b = himem::generate_episode(spec);
  EXPECT_EQ(a.labels, b.labels);
  EXPECT_TRUE(same_tensor(a.context_features, b.context_features));
  for (std::size_t i = 0; i < a.agents(); ++i) {
    EXPECT_TRUE(same_tensor(a.agent_features[i], b.agent_features[i]));
  }

  spec.seed = 100;
  Episode c = himem::generate_episode(spec);
  EXPECT_NE(a.labels, c.labels);
}

TEST(Generator, ChainRowsAreStochasticOverDisjointSubsets) {
  ScenarioSpec spec = base_spec(Scenario::kTwoByTwo);
  spec.action_classes = 10;
  ScenarioModel model = himem::build_scenario_model(spec);

  ASSERT_EQ(model.tasks.size(), 2u);
  std::set<int> seen;
  for (const auto& task : model.tasks) {
    EXPECT_GE(task.classes.size(), 2u);
    for (int c : task.classes) {
      EXPECT_TRUE(seen.insert(c).second) << "subsets overlap on " << c;
      EXPECT_GE(c, 1);
      EXPECT_LE(c, 10);
    }
  }

  for (const auto& task : model.tasks) {
    std::set<int> members(task.classes.begin(), task.classes.end());
    for (std::size_t r = 0; r <= 10; ++r) {
      double sum = 0.0;
      for (double p : task.transition[r]) {
        EXPECT_GE(p, 0.0);
        sum += p;
      }
      EXPECT_NEAR(sum, 1.0, 1e-12);
      const bool in_task = members.count(static_cast<int>(r)) > 0;
      if (in_task) {
        EXPECT_DOUBLE_EQ(task.transition[r][r], 0.0);
      }
      if (r != 0 && !in_task) {
        EXPECT_DOUBLE_EQ(task.transition[r][r], 1.0);
      }
      if (r == 0 || in_task) {
        for (std::size_t j = 0; j <= 10; ++j) {
          if (!members.count(static_cast<int>(j))) {
            EXPECT_DOUBLE_EQ(task.transition[r][j], 0.0);
          }
        }
      }
    }
  }
}

TEST(Generator, FrequenciesMatchStationaryDistribution) {
  ScenarioSpec spec = base_spec(Scenario::kOneByOne);
  spec.action_classes = 5;
  spec.frames = 100000;
  ScenarioModel model = himem::build_scenario_model(spec);
  auto labels = himem::generate_labels(model);

  // Independent oracle: power iteration on the jump chain. Equal mean
  // segment lengths make frame occupancy equal the jump-chain stationary
  // distribution.
  const auto& classes = model.tasks[0].classes;
  std::vector<double> pi(classes.size(), 1.0 / classes.size());
  for (int iter = 0; iter < 20000; ++iter) {
    std::vector<double> next(classes.size(), 0.0);
    for (std::size_t i = 0; i < classes.size(); ++i) {
      for (std::size_t j = 0; j < classes.size(); ++j) {
        next[j] += pi[i] * model.tasks[0].transition[classes[i]][classes[j]];
      }
    }
    double delta = 0.0;
    for (std::size_t i = 0; i < classes.size(); ++i) {
      delta += std::abs(next[i] - pi[i]);
    }
    pi = next;
    if (delta < 1e-14) break;
  }

  std::vector<double> freq(classes.size(), 0.0);
  for (int label : labels[0]) {
    for (std::size_t i = 0; i < classes.size(); ++i) {
      if (classes[i] == label) freq[i] += 1.0;
    }
  }
  for (auto& f : freq) f /= static_cast<double>(spec.frames);
  for (std::size_t i = 0; i < classes.size(); ++i) {
    EXPECT_NEAR(freq[i], pi[i], 0.02) << "class " << classes[i];
  }
}

TEST(Generator, SegmentLengthsMatchGeometricMean) {
  ScenarioSpec spec = base_spec(Scenario::kOneByOne);
  spec.action_classes = 5;
  spec.mean_duration = 8.0;
  spec.frames = 100000;
  auto labels = himem::generate_labels(himem::build_scenario_model(spec));

  std::vector<std::size_t> lengths;
  std::size_t run = 1;
  for (std::size_t t = 1; t < labels[0].size(); ++t) {
    if (labels[0][t] == labels[0][t - 1]) {
      ++run;
    } else {
      lengths.push_back(run);
      run = 1;
    }
  }
  ASSERT_GT(lengths.size(), 5000u);
  double mean = 0.0;
  for (auto len : lengths) mean += static_cast<double>(len);
  mean /= static_cast<double>(lengths.size());
  EXPECT_NEAR(mean, 8.0, 0.3);
}

TEST(Generator, FullCouplingForcesTheRuleAtEveryBoundary) {
  ScenarioSpec spec = base_spec(Scenario::kTwoByOne);
  spec.coupling = 1.0;
  spec.frames = 2000;
  ScenarioModel model = himem::build_scenario_model(spec);
  auto labels = himem::generate_labels(model);

  std::size_t boundaries = 0;
  for (std::size_t t = 1; t < spec.frames; ++t) {
    if (labels[1][t] == labels[1][t - 1]) continue;
    ++boundaries;
    EXPECT_EQ(labels[1][t], model.coupling_rule(labels[0][t - 1], 0))
        << "frame " << t;
  }
  EXPECT_GT(boundaries, 50u);
}

TEST(Generator, AgentOneTrackIgnoresCouplingStrength) {
  ScenarioSpec weak = base_spec(Scenario::kTwoByOne);
  ScenarioSpec strong = weak;
  strong.coupling = 0.9;
  Episode a = himem::generate_episode(weak);
  Episode b = himem::generate_episode(strong);
  EXPECT_EQ(a.labels[0], b.labels[0]);
  EXPECT_TRUE(same_tensor(a.agent_features[0], b.agent_features[0]));
  EXPECT_NE(a.labels[1], b.labels[1]);
}

TEST(Generator, AgentOneTrackIgnoresSecondAgentExistence) {
  ScenarioSpec solo = base_spec(Scenario::kOneByOne);
  ScenarioSpec duo = base_spec(Scenario::kTwoByOne);
  Episode a = himem::generate_episode(solo);
  Episode b = himem::generate_episode(duo);
  EXPECT_EQ(a.labels[0], b.labels[0]);
  EXPECT_TRUE(same_tensor(a.agent_features[0], b.agent_features[0]));
  EXPECT_FALSE(same_tensor(a.context_features, b.context_features));
}

TEST(Generator, LabelsStayInActionRange) {
  ScenarioSpec spec = base_spec(Scenario::kTwoByTwo);
  spec.action_classes = 7;
  spec.coupling = 0.5;
  Episode ep = himem::generate_episode(spec);
  for (const auto& track : ep.labels) {
    for (int label : track) {
      EXPECT_GE(label, 1);
      EXPECT_LE(label, 7);
    }
  }
}

TEST(Features, NoiselessEqualsPrototypes) {
  ScenarioSpec spec = base_spec(Scenario::kOneByOne);
  spec.noise = 0.0;
  ScenarioModel model = himem::build_scenario_model(spec);
  Episode ep = himem::emit_features(model, himem::generate_labels(model));

  for (std::size_t t = 0; t < spec.frames; ++t) {
    const auto& proto = model.prototypes[ep.labels[0][t]];
    for (std::size_t d = 0; d < spec.dim; ++d) {
      EXPECT_EQ(ep.agent_features[0].data()[t * spec.dim + d], proto[d]);
      EXPECT_EQ(ep.context_features.data()[t * spec.dim + d], proto[d]);
    }
  }
}

TEST(Features, NoiselessContextIsPrototypeMean) {
  ScenarioSpec spec = base_spec(Scenario::kTwoByOne);
  spec.noise = 0.0;
  ScenarioModel model = himem::build_scenario_model(spec);
  Episode ep = himem::emit_features(model, himem::generate_labels(model));

  for (std::size_t t = 0; t < spec.frames; ++t) {
    const auto& p1 = model.prototypes[ep.labels[0][t]];
    const auto& p2 = model.prototypes[ep.labels[1][t]];
    for (std::size_t d = 0; d < spec.dim; ++d) {
      EXPECT_EQ(ep.context_features.data()[t * spec.dim + d],
                himem::quantize_f32((p1[d] + p2[d]) * 0.5));
    }
  }
}

TEST(Features, NearestPrototypeDecodingRecoversLabels) {
  ScenarioSpec spec = base_spec(Scenario::kTwoByOne);
  spec.dim = 32;
  spec.noise = 0.1;
  spec.frames = 2000;
  ScenarioModel model = himem::build_scenario_model(spec);
  Episode ep = himem::emit_features(model, himem::generate_labels(model));

  std::size_t hits = 0, total = 0;
  for (std::size_t a = 0; a < ep.agents(); ++a) {
    for (std::size_t t = 0; t < spec.frames; ++t) {
      double best = 1e300;
      int best_class = -1;
      for (std::size_t c = 0; c <= spec.action_classes; ++c) {
        double dist = 0.0;
        for (std::size_t d = 0; d < spec.dim; ++d) {
          const double diff =
              ep.agent_features[a].data()[t * spec.dim + d] -
              model.prototypes[c][d];
          dist += diff * diff;
        }
        if (dist < best) {
          best = dist;
          best_class = static_cast<int>(c);
        }
      }
      hits += best_class == ep.labels[a][t];
      ++total;
    }
  }
  EXPECT_GT(static_cast<double>(hits) / static_cast<double>(total), 0.99);
}

// Ridge probe: context features must linearly expose the partner's state,
// the signal the context branches are built to exploit.
TEST(Features, LinearProbeReadsPartnerClassFromContext) {
  ScenarioSpec spec = base_spec(Scenario::kTwoByOne);
  spec.dim = 32;
  spec.noise = 0.2;
  spec.coupling = 0.9;
  spec.frames = 4000;
  ScenarioModel model = himem::build_scenario_model(spec);
  Episode ep = himem::emit_features(model, himem::generate_labels(model));

  const std::size_t feats = spec.dim + 1;
  const std::size_t classes = spec.action_classes + 1;
  const std::size_t train = 3000;

  std::vector<double> xtx(feats * feats, 0.0);
  std::vector<double> xty(feats * classes, 0.0);
  auto x_at = [&](std::size_t t, std::size_t f) {
    return f == spec.dim ? 1.0
                         : ep.context_features.data()[t * spec.dim + f];
  };
  for (std::size_t t = 0; t < train; ++t) {
    for (std::size_t i = 0; i < feats; ++i) {
      for (std::size_t j = 0; j < feats; ++j) {
        xtx[i * feats + j] += x_at(t, i) * x_at(t, j);
      }
      xty[i * classes + ep.labels[1][t]] += x_at(t, i);
    }
  }
  for (std::size_t i = 0; i < feats; ++i) xtx[i * feats + i] += 1e-3;

  // Gaussian elimination with partial pivoting on [XtX | XtY].
  std::vector<double> aug(feats * (feats + classes));
  for (std::size_t i = 0; i < feats; ++i) {
    for (std::size_t j = 0; j < feats; ++j) {
      aug[i * (feats + classes) + j] = xtx[i * feats + j];
    }
    for (std::size_t j = 0; j < classes; ++j) {
      aug[i * (feats + classes) + feats + j] = xty[i * classes + j];
    }
  }
  const std::size_t width = feats + classes;
  for (std::size_t col = 0; col < feats; ++col) {
    std::size_t pivot = col;
    for (std::size_t r = col + 1; r < feats; ++r) {
      if (std::abs(aug[r * width + col]) >
          std::abs(aug[pivot * width + col])) {
        pivot = r;
      }
    }
    for (std::size_t j = 0; j < width; ++j) {
      std::swap(aug[col * width + j], aug[pivot * width + j]);
    }
    const double diag = aug[col * width + col];
    ASSERT_GT(std::abs(diag), 1e-12);
    for (std::size_t r = 0; r < feats; ++r) {
      if (r == col) continue;
      const double factor = aug[r * width + col] / diag;
      for (std::size_t j = col; j < width; ++j) {
        aug[r * width + j] -= factor * aug[col * width + j];
      }
    }
  }

  std::size_t hits = 0;
  for (std::size_t t = train; t < spec.frames; ++t) {
    double best = -1e300;
    int best_class = -1;
    for (std::size_t c = 0; c < classes; ++c) {
      double score = 0.0;
      for (std::size_t f = 0; f < feats; ++f) {
        const double w =
            aug[f * width + feats + c] / aug[f * width + f];
        score += w * x_at(t, f);
      }
      if (score > best) {
        best = score;
        best_class = static_cast<int>(c);
      }
    }
    hits += best_class == ep.labels[1][t];
  }
  const double accuracy =
      static_cast<double>(hits) / static_cast<double>(spec.frames - train);
  EXPECT_GT(accuracy, 0.5);  // chance is ~1/6
}

TEST(Generator, MultiTaskAgentsAlternateSubsets) {
  ScenarioSpec spec = base_spec(Scenario::kOneByTwo);
  spec.action_classes = 8;
  spec.frames = 800;
  ScenarioModel model = himem::build_scenario_model(spec);
  auto labels = himem::generate_labels(model);

  std::set<int> first(model.tasks[0].classes.begin(),
                      model.tasks[0].classes.end());
  std::vector<int> segment_tasks;
  int prev = -1;
  for (int label : labels[0]) {
    if (label == prev) continue;
    prev = label;
    segment_tasks.push_back(first.count(label) ? 0 : 1);
  }
  ASSERT_GT(segment_tasks.size(), 20u);
  for (std::size_t i = 0; i < segment_tasks.size(); ++i) {
    EXPECT_EQ(segment_tasks[i], static_cast<int>(i % 2));
  }
}

TEST(Generator, ScenarioArithmetic) {
  Episode solo = himem::generate_episode(base_spec(Scenario::kOneByOne));
  EXPECT_EQ(solo.agents(), 1u);
  EXPECT_EQ(solo.frames(), 400u);
  EXPECT_EQ(solo.dim(), 16u);

  ScenarioSpec spec = base_spec(Scenario::kTwoByTwo);
  spec.action_classes = 8;
  spec.frames = 600;
  ScenarioModel model = himem::build_scenario_model(spec);
  Episode duo = himem::emit_features(model, himem::generate_labels(model));
  EXPECT_EQ(duo.agents(), 2u);
  for (const auto& track : duo.labels) {
    std::set<int> seen(track.begin(), track.end());
    for (const auto& task : model.tasks) {
      bool touched = false;
      for (int c : task.classes) touched |= seen.count(c) > 0;
      EXPECT_TRUE(touched);
    }
  }
}

TEST(Features, RejectsMismatchedLabelTracks) {
  ScenarioSpec spec = base_spec(Scenario::kTwoByOne);
  ScenarioModel model = himem::build_scenario_model(spec);
  auto labels = himem::generate_labels(model);
  EXPECT_THROW(himem::emit_features(model, {labels[0]}),
               himem::ValidationError);
  labels[1].pop_back();
  EXPECT_THROW(himem::emit_features(model, labels), himem::ValidationError);
}

TEST(World, EpisodeSeedNeverMovesPrototypesOrChains) {
  ScenarioSpec spec = base_spec(Scenario::kTwoByTwo);
  spec.world_seed = 7;
  ScenarioModel one = himem::build_scenario_model(spec);
  spec.seed = 12345;
  ScenarioModel two = himem::build_scenario_model(spec);

  EXPECT_EQ(one.prototypes, two.prototypes);
  ASSERT_EQ(one.tasks.size(), two.tasks.size());
  for (std::size_t t = 0; t < one.tasks.size(); ++t) {
    EXPECT_EQ(one.tasks[t].classes, two.tasks[t].classes);
    EXPECT_EQ(one.tasks[t].transition, two.tasks[t].transition);
  }

  spec.world_seed = 8;
  ScenarioModel three = himem::build_scenario_model(spec);
  EXPECT_NE(one.prototypes, three.prototypes);
}

// Held-out episodes must live in the training episodes' world: prototypes
// recovered from one episode's seed decode every other episode's features.
TEST(World, DatasetEpisodesShareOneWorld) {
  auto cfg = himem::parse_config(
      "scenario = 2x1\nK = 6\nD = 32\nsigma = 0.1\nT = 200\nseed = 31\n");
  auto train = himem::generate_dataset(cfg, 2);
  auto eval = himem::generate_dataset(cfg, 2, himem::kEvalSeedOffset);
  ScenarioModel world = himem::build_scenario_model(cfg.to_scenario_spec());

  EXPECT_NE(train[0].labels, eval[0].labels);
  for (const auto& ep : {train[0], train[1], eval[0], eval[1]}) {
    std::size_t hits = 0, total = 0;
    for (std::size_t a = 0; a < ep.agents(); ++a) {
      for (std::size_t t = 0; t < ep.frames(); ++t) {
        double best = -1e300;
        std::size_t best_c = 0;
        for (std::size_t c = 0; c < world.prototypes.size(); ++c) {
          double dot = 0.0;
          for (std::size_t d = 0; d < ep.dim(); ++d) {
            dot += ep.agent_features[a].data()[t * ep.dim() + d] *
                   world.prototypes[c][d];
          }
          if (dot > best) {
            best = dot;
            best_c = c;
          }
        }
        hits += best_c == static_cast<std::size_t>(ep.labels[a][t]);
        ++total;
      }
    }
    EXPECT_GT(static_cast<double>(hits) / static_cast<double>(total), 0.99);
  }
}

}  // namespace
