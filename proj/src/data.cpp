#include "home/data.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <map>
#include <set>
#include <sstream>

namespace home {

void DatasetSpec::validate() const {
  if (n_users < 1) throw ConfigError("dataset.n_users must be at least 1");
  if (min_logs < 1 || max_logs < min_logs) throw ConfigError("dataset logs per user need 1 <= min <= max");
  if (n_items < 1) throw ConfigError("dataset.n_items must be at least 1");
  if (latent_dim < 1) throw ConfigError("dataset.latent_dim must be at least 1");
  if (feature_width < latent_dim) throw ConfigError("dataset.feature_width must be >= latent_dim");
  if (!(distractor_fraction >= 0.0 && distractor_fraction < 1.0))
    throw ConfigError("dataset.distractor_fraction must be in [0, 1)");
  if (tasks.empty()) throw ConfigError("dataset.tasks must not be empty");
  std::set<std::string> names;
  for (const auto& t : tasks) {
    if (t.name.empty() || t.name.find(',') != std::string::npos) throw ConfigError("invalid task name '" + t.name + "'");
    if (!names.insert(t.name).second) throw ConfigError("duplicate task name '" + t.name + "'");
    if (!(t.positive_rate > 0.0 && t.positive_rate < 1.0))
      throw ConfigError("task '" + t.name + "': positive_rate must be in (0, 1)");
  }
  if (!(rho_in >= 0.0 && rho_cross >= 0.0 && rho_in + rho_cross <= 1.0))
    throw ConfigError("dataset.rho_in and rho_cross must be non-negative with sum <= 1");
  if (!(signal_scale >= 0.0 && noise_scale >= 0.0 && view_noise >= 0.0))
    throw ConfigError("dataset noise and signal scales must be non-negative");
}

std::vector<TaskSpec> demo_tasks() {
  using C = TaskCategory;
  return {
      {"evtr", C::watch, 0.20},   {"ltr", C::watch, 0.08},         {"ctr", C::interaction, 0.20},
      {"like", C::interaction, 0.03}, {"cmtr", C::interaction, 0.005}, {"collect", C::interaction, 0.004},
      {"forward", C::interaction, 0.003}, {"follow", C::interaction, 0.002},
  };
}

DatasetSpec demo_dataset_spec() {
  DatasetSpec spec;
  spec.tasks = demo_tasks();
  return spec;
}

Batch Dataset::batch(std::span<const Eigen::Index> rows) const {
  Batch b;
  b.features.resize(static_cast<Eigen::Index>(rows.size()), features.cols());
  b.labels.resize(static_cast<Eigen::Index>(rows.size()), labels.cols());
  b.user_ids.reserve(rows.size());
  for (std::size_t i = 0; i < rows.size(); ++i) {
    const auto r = static_cast<Eigen::Index>(i);
    b.features.row(r) = features.row(rows[i]);
    b.labels.row(r) = labels.row(rows[i]);
    b.user_ids.push_back(user_ids[static_cast<std::size_t>(rows[i])]);
  }
  return b;
}

Dataset Dataset::subset(std::span<const Eigen::Index> rows) const {
  Batch b = batch(rows);
  return Dataset{task_names, std::move(b.features), std::move(b.labels), std::move(b.user_ids)};
}

double Dataset::positive_rate(std::size_t task) const {
  if (rows() == 0) return 0.0;
  return labels.col(static_cast<Eigen::Index>(task)).mean();
}

bool Dataset::operator==(const Dataset& o) const {
  return task_names == o.task_names && user_ids == o.user_ids && features.rows() == o.features.rows() &&
         features.cols() == o.features.cols() && labels.cols() == o.labels.cols() && features == o.features &&
         labels == o.labels;
}

namespace {

Rng stream(std::uint64_t seed, std::uint64_t purpose, std::uint64_t index) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(purpose), static_cast<std::uint32_t>(index),
                    static_cast<std::uint32_t>(index >> 32)};
  return Rng(seq);
}

// Unit readout directions: global, interaction, watch, then one per task.
// Mutually orthogonal whenever the latent space is wide enough.
Matrix readout_directions(int latent_dim, int count, Rng& rng) {
  std::normal_distribution<double> normal;
  Matrix raw(latent_dim, count);
  for (Eigen::Index i = 0; i < raw.size(); ++i) raw.data()[i] = normal(rng);
  if (count <= latent_dim) {
    Eigen::HouseholderQR<Eigen::MatrixXd> qr(raw);
    Eigen::MatrixXd q = qr.householderQ() * Eigen::MatrixXd::Identity(latent_dim, count);
    return q;
  }
  for (Eigen::Index c = 0; c < raw.cols(); ++c) raw.col(c).normalize();
  return raw;
}

double mean_sigmoid(const Eigen::Ref<const Eigen::VectorXd>& logits, double bias) {
  double s = 0.0;
  for (Eigen::Index i = 0; i < logits.size(); ++i) s += stable_sigmoid(logits[i] + bias);
  return s / static_cast<double>(logits.size());
}

}  // namespace

Dataset generate_dataset(const DatasetSpec& spec) {
  spec.validate();
  const int k = spec.latent_dim;
  const int n_tasks = static_cast<int>(spec.tasks.size());

  Rng world = stream(spec.seed, 0, 0);
  const Matrix dirs = readout_directions(k, 3 + n_tasks, world);
  const double a = std::sqrt(std::max(0.0, 1.0 - spec.rho_in - spec.rho_cross));
  Matrix readout(k, n_tasks);
  for (int t = 0; t < n_tasks; ++t) {
    const int cat = spec.tasks[t].category == TaskCategory::interaction ? 1 : 2;
    readout.col(t) = spec.signal_scale * (a * dirs.col(3 + t) + std::sqrt(spec.rho_in) * dirs.col(cat) +
                                          std::sqrt(spec.rho_cross) * dirs.col(0));
  }
  std::normal_distribution<double> normal;
  Matrix items(spec.n_items, k);
  for (Eigen::Index i = 0; i < items.size(); ++i) items.data()[i] = normal(world);

  const int distractors = static_cast<int>(std::lround(spec.distractor_fraction * spec.feature_width));
  const int informative = spec.feature_width - distractors;
  const int user_cols = (informative + 1) / 2;

  std::vector<int> counts(static_cast<std::size_t>(spec.n_users));
  std::vector<Rng> user_rngs;
  user_rngs.reserve(counts.size());
  Eigen::Index total = 0;
  for (int u = 0; u < spec.n_users; ++u) {
    user_rngs.push_back(stream(spec.seed, 1, static_cast<std::uint64_t>(u)));
    counts[static_cast<std::size_t>(u)] = std::uniform_int_distribution<int>(spec.min_logs, spec.max_logs)(user_rngs.back());
    total += counts[static_cast<std::size_t>(u)];
  }

  Dataset ds;
  for (const auto& t : spec.tasks) ds.task_names.push_back(t.name);
  ds.features.resize(total, spec.feature_width);
  ds.labels.resize(total, n_tasks);
  ds.user_ids.resize(static_cast<std::size_t>(total));
  Matrix logits(total, n_tasks);
  Matrix uniforms(total, n_tasks);

  std::uniform_real_distribution<double> unit(0.0, 1.0);
  Eigen::Index row = 0;
  for (int u = 0; u < spec.n_users; ++u) {
    Rng& rng = user_rngs[static_cast<std::size_t>(u)];
    RowVector user(k);
    for (int j = 0; j < k; ++j) user[j] = normal(rng);
    std::uniform_int_distribution<int> pick(0, spec.n_items - 1);
    for (int l = 0; l < counts[static_cast<std::size_t>(u)]; ++l, ++row) {
      const RowVector item = items.row(pick(rng));
      const RowVector inter = user.cwiseProduct(item);
      logits.row(row) = inter * readout;
      for (int t = 0; t < n_tasks; ++t) {
        logits(row, t) += spec.noise_scale * normal(rng);
        uniforms(row, t) = unit(rng);
      }
      for (int c = 0; c < spec.feature_width; ++c) {
        double x;
        if (c < user_cols) x = user[c % k];
        else if (c < informative) x = item[(c - user_cols) % k];
        else x = 0.0;
        const double noise = c < informative ? spec.view_noise : 1.0;
        ds.features(row, c) = x + noise * normal(rng);
      }
      ds.user_ids[static_cast<std::size_t>(row)] = u;
    }
  }

  for (int t = 0; t < n_tasks; ++t) {
    const double target = spec.tasks[t].positive_rate;
    const Eigen::VectorXd col = logits.col(t);
    double lo = -60.0;
    double hi = 60.0;
    if (mean_sigmoid(col, lo) > target || mean_sigmoid(col, hi) < target)
      throw DataError("task '" + spec.tasks[t].name + "': positive rate " + std::to_string(target) +
                      " unreachable by bias calibration");
    for (int it = 0; it < 100; ++it) {
      const double mid = 0.5 * (lo + hi);
      if (mean_sigmoid(col, mid) < target) lo = mid;
      else hi = mid;
    }
    const double bias = 0.5 * (lo + hi);
    for (Eigen::Index r = 0; r < total; ++r)
      ds.labels(r, t) = uniforms(r, t) < stable_sigmoid(logits(r, t) + bias) ? 1.0 : 0.0;
  }
  return ds;
}

namespace {

void append_double(std::string& out, double v) {
  char buf[64];
  auto res = std::to_chars(buf, buf + sizeof(buf), v);
  out.append(buf, res.ptr);
}

std::vector<std::string_view> split_fields(std::string_view line) {
  std::vector<std::string_view> out;
  std::size_t start = 0;
  while (true) {
    const std::size_t pos = line.find(',', start);
    if (pos == std::string_view::npos) {
      out.push_back(line.substr(start));
      break;
    }
    out.push_back(line.substr(start, pos - start));
    start = pos + 1;
  }
  return out;
}

}  // namespace

void write_dataset(const Dataset& ds, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot open '" + path.string() + "' for writing");
  std::string line = "user_id";
  for (Eigen::Index c = 0; c < ds.features.cols(); ++c) line += ",f_" + std::to_string(c);
  for (const auto& t : ds.task_names) line += ",y_" + t;
  line += '\n';
  out << line;
  for (Eigen::Index r = 0; r < ds.rows(); ++r) {
    line = std::to_string(ds.user_ids[static_cast<std::size_t>(r)]);
    for (Eigen::Index c = 0; c < ds.features.cols(); ++c) {
      line += ',';
      append_double(line, ds.features(r, c));
    }
    for (Eigen::Index t = 0; t < ds.labels.cols(); ++t) line += ds.labels(r, t) != 0.0 ? ",1" : ",0";
    line += '\n';
    out << line;
  }
  if (!out) throw DataError("write to '" + path.string() + "' failed");
}

Dataset read_dataset(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open dataset '" + path.string() + "'");
  std::string line;
  std::size_t line_no = 1;
  if (!std::getline(in, line) || line.empty() || line == "\r") throw ParseError(1, "no header");
  if (!line.empty() && line.back() == '\r') line.pop_back();
  const auto header = split_fields(line);
  if (header.empty() || header[0] != "user_id") throw ParseError(1, "malformed header: first column must be user_id");
  Dataset ds;
  std::size_t n_features = 0;
  std::size_t i = 1;
  for (; i < header.size() && header[i].substr(0, 2) == "f_"; ++i, ++n_features)
    if (header[i] != "f_" + std::to_string(n_features))
      throw ParseError(1, "malformed header: expected f_" + std::to_string(n_features) + ", got '" + std::string(header[i]) + "'");
  for (; i < header.size(); ++i) {
    if (header[i].substr(0, 2) != "y_" || header[i].size() == 2)
      throw ParseError(1, "malformed header: unexpected column '" + std::string(header[i]) + "'");
    ds.task_names.emplace_back(header[i].substr(2));
  }
  if (n_features == 0 || ds.task_names.empty()) throw ParseError(1, "malformed header: need feature and label columns");

  std::vector<double> feats;
  std::vector<double> labels;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    const auto fields = split_fields(line);
    if (fields.size() != header.size())
      throw ParseError(line_no, "expected " + std::to_string(header.size()) + " fields, got " + std::to_string(fields.size()));
    std::int64_t uid = 0;
    auto [p, ec] = std::from_chars(fields[0].data(), fields[0].data() + fields[0].size(), uid);
    if (ec != std::errc() || p != fields[0].data() + fields[0].size()) throw ParseError(line_no, "bad user_id '" + std::string(fields[0]) + "'");
    ds.user_ids.push_back(uid);
    for (std::size_t c = 1; c <= n_features; ++c) {
      double v = 0.0;
      auto [q, e] = std::from_chars(fields[c].data(), fields[c].data() + fields[c].size(), v);
      if (e != std::errc() || q != fields[c].data() + fields[c].size() || !std::isfinite(v))
        throw ParseError(line_no, "bad feature value '" + std::string(fields[c]) + "' in column " + std::string(header[c]));
      feats.push_back(v);
    }
    for (std::size_t c = 1 + n_features; c < fields.size(); ++c) {
      if (fields[c] == "0") labels.push_back(0.0);
      else if (fields[c] == "1") labels.push_back(1.0);
      else throw ParseError(line_no, "non-binary label '" + std::string(fields[c]) + "' in column " + std::string(header[c]));
    }
  }
  const auto n = static_cast<Eigen::Index>(ds.user_ids.size());
  ds.features = Eigen::Map<Matrix>(feats.data(), n, static_cast<Eigen::Index>(n_features));
  ds.labels = Eigen::Map<Matrix>(labels.data(), n, static_cast<Eigen::Index>(ds.task_names.size()));
  return ds;
}

std::pair<Dataset, Dataset> split_by_user(const Dataset& ds, double eval_fraction, std::uint64_t seed) {
  if (!(eval_fraction >= 0.0 && eval_fraction < 1.0)) throw ConfigError("eval fraction must be in [0, 1)");
  std::vector<std::int64_t> users;
  std::set<std::int64_t> seen;
  for (auto u : ds.user_ids)
    if (seen.insert(u).second) users.push_back(u);
  Rng rng = stream(seed, 2, 0);
  std::shuffle(users.begin(), users.end(), rng);
  const auto n_eval = static_cast<std::size_t>(std::lround(eval_fraction * static_cast<double>(users.size())));
  const std::set<std::int64_t> eval_users(users.begin(), users.begin() + static_cast<std::ptrdiff_t>(n_eval));
  std::vector<Eigen::Index> train_rows;
  std::vector<Eigen::Index> eval_rows;
  for (Eigen::Index r = 0; r < ds.rows(); ++r)
    (eval_users.count(ds.user_ids[static_cast<std::size_t>(r)]) ? eval_rows : train_rows).push_back(r);
  return {ds.subset(train_rows), ds.subset(eval_rows)};
}

double label_correlation(const Dataset& ds, std::size_t a, std::size_t b) {
  const Eigen::VectorXd x = ds.labels.col(static_cast<Eigen::Index>(a));
  const Eigen::VectorXd y = ds.labels.col(static_cast<Eigen::Index>(b));
  const Eigen::VectorXd xc = x.array() - x.mean();
  const Eigen::VectorXd yc = y.array() - y.mean();
  const double denom = std::sqrt(xc.squaredNorm() * yc.squaredNorm());
  return denom > 0.0 ? xc.dot(yc) / denom : 0.0;
}

}  // namespace home
