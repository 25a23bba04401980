// Synthetic multi-task click logs and the columnar dataset file format.
#pragma once

#include "home/model.hpp"

#include <cstdint>
#include <filesystem>
#include <span>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace home {

struct DatasetSpec {
  int n_users = 600;
  int min_logs = 80;
  int max_logs = 120;
  int n_items = 2000;
  int feature_width = 32;
  int latent_dim = 12;
  double distractor_fraction = 0.25;
  std::vector<TaskSpec> tasks;
  // Weights of the category-shared and globally shared logit components; the
  // remainder 1 − rho_in − rho_cross goes to the task's private readout.
  double rho_in = 0.5;
  double rho_cross = 0.2;
  double signal_scale = 2.0;
  double noise_scale = 0.5;
  double view_noise = 0.3;
  std::uint64_t seed = 7;

  void validate() const;
};

/// Eight tasks with a 100:1 dense-to-sparse positive-rate ratio.
std::vector<TaskSpec> demo_tasks();
DatasetSpec demo_dataset_spec();

struct Batch {
  Matrix features;  // B×|v|
  Matrix labels;    // B×T, entries 0 or 1
  std::vector<std::int64_t> user_ids;
};

struct Dataset {
  std::vector<std::string> task_names;
  Matrix features;
  Matrix labels;
  std::vector<std::int64_t> user_ids;

  Eigen::Index rows() const { return features.rows(); }
  Batch batch(std::span<const Eigen::Index> rows) const;
  Dataset subset(std::span<const Eigen::Index> rows) const;
  double positive_rate(std::size_t task) const;
  bool operator==(const Dataset& other) const;
};

class DataError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class ParseError : public DataError {
 public:
  ParseError(std::size_t line, const std::string& what)
      : DataError("line " + std::to_string(line) + ": " + what), line_(line) {}
  std::size_t line() const { return line_; }

 private:
  std::size_t line_;
};

Dataset generate_dataset(const DatasetSpec& spec);

/// Header `user_id,f_0..f_{n-1},y_<task>..`; floats in shortest round-trip form.
void write_dataset(const Dataset& ds, const std::filesystem::path& path);
Dataset read_dataset(const std::filesystem::path& path);

/// Deterministic train/eval split that keeps each user's logs together.
std::pair<Dataset, Dataset> split_by_user(const Dataset& ds, double eval_fraction, std::uint64_t seed);

/// Pearson correlation of two label columns.
double label_correlation(const Dataset& ds, std::size_t a, std::size_t b);

}  // namespace home
