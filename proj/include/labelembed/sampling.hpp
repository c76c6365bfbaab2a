#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "labelembed/dataset.hpp"
#include "labelembed/labelspace.hpp"

namespace labelembed {

enum class MiningMode { uniform, semi_hard };
enum class Structure { flat, hierarchy, attributes };

const char* to_string(MiningMode m);
const char* to_string(Structure s);
MiningMode parse_mining_mode(const std::string& s);
Structure parse_structure(const std::string& s);

struct SamplerConfig {
  MiningMode mode = MiningMode::uniform;
  int candidate_pool = 16;
  std::uint64_t seed = 1;
  Structure structure = Structure::hierarchy;

  void validate() const;
};

/// A reference plus companions ordered innermost (same fine class) to
/// outermost, with one margin per adjacent companion pair.
///
/// `bands[k]` is the relevance band companion k was drawn from: band 0 is the
/// reference's own class and band j >= 1 shares exactly x - j levels with it.
/// An empty band is skipped and its margin merged into the next outer one.
struct TupletIndices {
  int reference = 0;
  std::vector<int> companions;
  std::vector<double> margins;
  std::vector<int> bands;
  /// Attribute mode only: classes of the positive and negative.
  ClassId class_p = -1;
  ClassId class_n = -1;
};

/// Training-split ids in a seed-determined order.
std::vector<int> epoch_plan(std::span<const int> ids, std::uint64_t seed);

/// Picks a negative from `band`. Uniform mode draws uniformly. Semi-hard
/// mode inspects up to K candidates and returns the closest one that is
/// farther than the positive; if none is, the farthest candidate.
/// `embeddings` has one column per sample id.
int mine_negative(const Eigen::MatrixXd& embeddings, int reference, std::span<const int> band,
                  double positive_distance, const SamplerConfig& config, std::mt19937_64& rng);

/// Draws tuplets for one dataset. Owns its random state; not thread-safe.
class TupletSampler {
 public:
  TupletSampler(const Dataset& dataset, const MarginSchedule& schedule, SamplerConfig config);

  /// Number of hierarchy levels the sampler works with (1 for flat and
  /// attribute structures).
  int num_levels() const { return levels_.num_levels(); }

  /// Returns nothing when the reference has no same-class partner or no
  /// generalized triplet survives empty-band skipping.
  /// `embeddings` is required in semi-hard mode and ignored otherwise.
  std::optional<TupletIndices> sample(int reference, const Eigen::MatrixXd* embeddings = nullptr);

  /// Reference ids for the next epoch, drawn from this sampler's stream.
  std::vector<int> next_epoch();

  std::uint64_t skipped_references() const { return skipped_references_; }
  std::uint64_t merged_bands() const { return merged_bands_; }

  /// Candidates in band `band` for a reference of class `c`, excluding
  /// nothing (band 0 still contains the reference itself).
  std::span<const int> band_members(ClassId c, int band) const;

 private:
  int pick(std::span<const int> v);

  const Dataset* dataset_;
  Hierarchy levels_;
  std::vector<double> triplet_margins_;
  double base_margin_;
  SamplerConfig config_;
  std::mt19937_64 rng_;
  std::vector<int> train_ids_;
  // bands_[c][j]: train ids whose class shares exactly x - j levels with c
  std::vector<std::vector<std::vector<int>>> bands_;
  std::uint64_t skipped_references_ = 0;
  std::uint64_t merged_bands_ = 0;
};

}  // namespace labelembed
