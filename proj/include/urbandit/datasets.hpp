#pragma once

#include "urbandit/types.hpp"

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

namespace urbandit {

enum class DataKind { grid, graph };
enum class NormKind { zscore, minmax };
enum class Split { train, val, test };

std::string to_string(DataKind k);
std::string to_string(NormKind k);
std::string to_string(Split s);
DataKind parse_data_kind(const std::string& s);
NormKind parse_norm_kind(const std::string& s);

struct DatasetManifest {
  std::string name;
  DataKind kind = DataKind::grid;
  Index t_total = 0;
  Index height = 0;  // grid only
  Index width = 0;   // grid only
  Index nodes = 0;   // graph only
  double resolution_minutes = 30.0;
  std::string file_path;
  std::optional<std::string> adjacency_path;
  NormKind norm = NormKind::zscore;

  Index locations() const { return kind == DataKind::grid ? height * width : nodes; }
  /// Steps per day from the temporal resolution; the historical-average period.
  Index steps_per_day() const;

  /// Throws on violated manifest invariants.
  void validate() const;
};

/// Reads "manifest.cfg"-style files. Relative paths resolve against the
/// manifest's directory.
DatasetManifest load_manifest(const std::filesystem::path& path);
void save_manifest(const std::filesystem::path& path, const DatasetManifest& m);

struct NormStats {
  NormKind kind = NormKind::zscore;
  double mean = 0.0;
  double std = 1.0;  // population standard deviation
  double min = 0.0;
  double max = 1.0;

  /// Fits on the given (training-segment) values only.
  static NormStats fit(const Mat& train_values, NormKind kind);

  Mat normalize(const Mat& x) const;
  Mat denormalize(const Mat& x) const;
  double normalize(double x) const;
  double denormalize(double x) const;
};

struct SplitSpec {
  double train = 0.6;
  double val = 0.2;
  double test = 0.2;
  Index window_length = 1;
};

/// Inclusive range of valid window starts; empty when last < first.
struct StartRange {
  Index first = 0;
  Index last = -1;

  bool empty() const { return last < first; }
  Index count() const { return empty() ? 0 : last - first + 1; }
  bool contains(Index s) const { return s >= first && s <= last; }
};

struct SplitRanges {
  Index train_end = 0;  // segment boundaries: [0, train_end), [train_end, val_end), [val_end, n)
  Index val_end = 0;
  StartRange train;
  StartRange val;
  StartRange test;

  const StartRange& of(Split s) const;
};

/// Valid window starts for each split; windows never straddle a boundary.
SplitRanges split_temporal(Index series_length, const SplitSpec& spec);

/// Index of the first segment row that belongs to the training split.
Index train_segment_end(Index series_length, const SplitSpec& spec);

struct Dataset {
  DatasetManifest manifest;
  Mat raw;         // t_total x locations, original units
  Mat normalized;  // same shape
  Mat adjacency;   // nodes x nodes, graphs only
  NormStats stats;
  SplitSpec split_ratios;
  /// Few-shot restriction: when > 0, only the earliest `train_window_limit`
  /// training windows are usable.
  Index train_window_limit = 0;

  SplitRanges splits(Index window_length) const;
  /// Normalized window [start, start + length) as a length x S matrix.
  Mat window(Index start, Index length) const;
};

/// Builds a dataset from in-memory values; stats are fitted on the training
/// segment of `raw`.
Dataset make_dataset(DatasetManifest manifest, Mat raw, Mat adjacency = {}, SplitSpec ratios = {});

Dataset load_dataset(const std::filesystem::path& manifest_path);

/// Writes manifest.cfg, values.uda and (graphs) adjacency.uda into `dir`.
void save_dataset(const std::filesystem::path& dir, const Dataset& ds);

struct GridSynthParams {
  Index height = 8;
  Index width = 8;
  Index t_total = 480;
  std::uint64_t seed = 0;
  Index period = 48;               // steps per day
  double resolution_minutes = 30;  // 1440 / period
  double noise_std = 0.05;
  Index hotspots = 3;
  /// Amplitude of the slow random modulation of hotspot intensity and
  /// position. With jitter = 0 and noise_std = 0 the series is exactly
  /// periodic in `period`.
  double jitter = 1.0;
};

struct GraphSynthParams {
  Index nodes = 16;
  Index t_total = 480;
  std::uint64_t seed = 0;
  Index period = 48;
  double resolution_minutes = 30;
  double diffusion = 0.5;  // weight of the lagged neighbour mean
  double noise_std = 0.05;
  double event_std = 0.15;  // innovation of the per-node AR(1) event process
  double extra_edge_prob = 0.15;
};

Dataset gen_synthetic_grid(const GridSynthParams& p, const std::string& name = "synth_grid");
Dataset gen_synthetic_graph(const GraphSynthParams& p, const std::string& name = "synth_graph");

/// Convenience overloads with default generator knobs.
Dataset gen_synthetic_grid(Index height, Index width, Index t_total, std::uint64_t seed);
Dataset gen_synthetic_graph(Index nodes, Index t_total, std::uint64_t seed);

struct STSample {
  Mat values;  // window_length x S, normalized
  Index window_start = 0;
  Split split = Split::train;
  const Dataset* dataset = nullptr;
};

/// Uniform (with replacement) draws over the valid starts of `split`.
std::vector<STSample> sample_windows(const Dataset& ds, Split split, Index window_length, Index batch_size,
                                     std::uint64_t seed);

/// Every valid start of `split`, stepping by `stride`.
std::vector<Index> enumerate_starts(const Dataset& ds, Split split, Index window_length, Index stride = 1);

}  // namespace urbandit
