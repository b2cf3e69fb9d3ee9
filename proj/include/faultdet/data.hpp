#pragma once

#include <array>
#include <map>
#include <string>

#include "faultdet/labels.hpp"
#include "faultdet/eval.hpp"
#include "faultdet/rng.hpp"
#include "faultdet/tensor.hpp"

namespace faultdet {

constexpr int kDatasetFormatVersion = 1;

// Deterministic synthetic component-fault dataset: textured backgrounds with
// bracket-shaped components whose inner key is present and centered for the
// normal class, and missing or displaced for the fault class.
struct SynthConfig {
  std::uint64_t seed = 1;
  int image_size = 256;
  int num_classes = 2;  // 0: normal component, 1: fault component
  int min_objects = 1;
  int max_objects = 4;
  double clutter = 0.5;
  double fault_rate = 0.5;
  double min_box_frac = 0.25;
  double max_box_frac = 0.4;
  int train_count = 800;
  int test_count = 200;

  void validate() const;
};

enum class Split { Train, Test };

struct DetectionSample {
  int image_id = 0;
  Split split = Split::Train;
  Tensor image;  // (3, S, S), normalized with the dataset statistics
  LabelDescriptorSet labels;
};

// Renders one image in [0,1] floats plus its annotations (pure function of
// cfg and image id).
struct RenderedImage {
  std::vector<float> rgb;  // 3 * S * S, channel-major
  LabelDescriptorSet labels;
};
RenderedImage render_image(const SynthConfig& cfg, int image_id);

// Writes images/{id}.png, annotations.jsonl and meta.json under out_dir.
// Refuses to clobber an existing dataset unless overwrite is set.
void generate_dataset(const SynthConfig& cfg, const std::string& out_dir, bool overwrite = false);

class Dataset {
 public:
  Dataset(const std::string& dir, Split split);

  int size() const { return static_cast<int>(ids_.size()); }
  const SynthConfig& config() const { return cfg_; }
  const std::array<double, 3>& channel_mean() const { return mean_; }
  const std::array<double, 3>& channel_std() const { return std_; }

  // Samples come back in ascending image-id order.
  DetectionSample sample(int index) const;
  const LabelDescriptorSet& labels_of(int index) const;
  int image_id(int index) const { return ids_[static_cast<std::size_t>(index)]; }

  std::vector<GroundTruth> ground_truths() const;

 private:
  std::string dir_;
  Split split_;
  SynthConfig cfg_;
  std::array<double, 3> mean_{}, std_{};
  std::vector<int> ids_;
  std::map<int, LabelDescriptorSet> labels_;
};

}  // namespace faultdet
