#include "vtfusion/evalharness.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <thread>

#include "json.hpp"

#include "vtfusion/imageio.hpp"
#include "vtfusion/rng.hpp"

namespace vtf {

namespace fs = std::filesystem;

namespace {

std::vector<std::string> list_pngs(const fs::path& dir) {
  std::vector<std::string> out;
  if (!fs::is_directory(dir)) return out;
  for (const auto& entry : fs::directory_iterator(dir)) {
    if (!entry.is_regular_file()) continue;
    if (entry.path().extension() == ".png") out.push_back(entry.path().string());
  }
  std::sort(out.begin(), out.end());
  return out;
}

std::vector<std::string> list_subdirs(const fs::path& dir) {
  std::vector<std::string> out;
  if (!fs::is_directory(dir)) return out;
  for (const auto& entry : fs::directory_iterator(dir)) {
    if (entry.is_directory()) out.push_back(entry.path().filename().string());
  }
  std::sort(out.begin(), out.end());
  return out;
}

}  // namespace

DatasetIndex load_dataset(const std::string& root, const std::string& category) {
  DatasetIndex index;
  index.root = root;
  index.category = category;
  const fs::path base = fs::path(root) / category;
  if (!fs::is_directory(base))
    throw DataError("dataset: no category directory at " + base.string());

  index.train_good = list_pngs(base / "train" / "good");
  if (index.train_good.empty())
    throw DataError("dataset: no training images under " +
                    (base / "train" / "good").string());

  const fs::path test_dir = base / "test";
  for (const auto& defect : list_subdirs(test_dir)) {
    const auto images = list_pngs(test_dir / defect);
    if (defect == "good") {
      index.test_normal.insert(index.test_normal.end(), images.begin(),
                               images.end());
      continue;
    }
    for (const auto& img : images) {
      const fs::path stem = fs::path(img).stem();
      const fs::path mask =
          base / "ground_truth" / defect / (stem.string() + "_mask.png");
      if (!fs::is_regular_file(mask))
        throw DataError("dataset: missing ground-truth mask for " + img);
      index.test_abnormal.emplace_back(img, mask.string());
    }
  }
  if (index.test_normal.empty() && index.test_abnormal.empty())
    throw DataError("dataset: no test images under " + test_dir.string());
  return index;
}

EpisodeSplit sample_episode(const DatasetIndex& index, int k,
                            std::uint64_t seed) {
  if (k < 1) throw ArgumentError("episode: k must be at least 1");
  if (static_cast<std::size_t>(k) > index.train_good.size())
    throw ArgumentError("episode: k=" + std::to_string(k) + " exceeds the " +
                        std::to_string(index.train_good.size()) +
                        " available training images");
  EpisodeSplit split;
  split.category = index.category;
  split.k = k;
  split.seed = seed;
  Rng rng(derive_seed(seed, 0x65706973U, 0));  // episode stream
  const auto picks = rng.sample_without_replacement(index.train_good.size(),
                                                   static_cast<std::size_t>(k));
  for (const auto idx : picks) split.shots.push_back(index.train_good[idx]);
  split.test_normal = index.test_normal;
  split.test_abnormal = index.test_abnormal;
  return split;
}

Scalar auroc(const std::vector<Scalar>& scores,
             const std::vector<int>& labels) {
  if (scores.size() != labels.size())
    throw ArgumentError("auroc: got " + std::to_string(scores.size()) +
                        " scores for " + std::to_string(labels.size()) +
                        " labels");
  const std::size_t n = scores.size();
  std::size_t n_pos = 0;
  for (const int y : labels) {
    if (y != 0 && y != 1) throw ArgumentError("auroc: labels must be 0 or 1");
    n_pos += static_cast<std::size_t>(y);
  }
  const std::size_t n_neg = n - n_pos;
  if (n_pos == 0 || n_neg == 0)
    throw MetricError("auroc: need both positive and negative samples");

  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    return scores[a] < scores[b];
  });

  // Average ranks within tie groups, then the Mann-Whitney statistic.
  Scalar rank_sum_pos = 0;
  std::size_t i = 0;
  while (i < n) {
    std::size_t j = i;
    while (j < n && scores[order[j]] == scores[order[i]]) ++j;
    const Scalar avg_rank = static_cast<Scalar>(i + j + 1) / 2;  // 1-based
    for (std::size_t t = i; t < j; ++t)
      if (labels[order[t]] == 1) rank_sum_pos += avg_rank;
    i = j;
  }
  const Scalar u = rank_sum_pos -
                   static_cast<Scalar>(n_pos) * static_cast<Scalar>(n_pos + 1) / 2;
  return u / (static_cast<Scalar>(n_pos) * static_cast<Scalar>(n_neg));
}

Scalar pixel_auroc(const std::vector<PredictionMap>& maps,
                   const std::vector<PixelMask>& masks, bool per_image_mean) {
  if (maps.size() != masks.size())
    throw ArgumentError("pixel_auroc: got " + std::to_string(maps.size()) +
                        " maps for " + std::to_string(masks.size()) + " masks");
  if (maps.empty()) throw ArgumentError("pixel_auroc: no maps");
  for (std::size_t m = 0; m < maps.size(); ++m) {
    if (maps[m].rows() != masks[m].rows() || maps[m].cols() != masks[m].cols())
      throw ShapeError("pixel_auroc: map " + std::to_string(m) + " is " +
                       std::to_string(maps[m].rows()) + "x" +
                       std::to_string(maps[m].cols()) + " but its mask is " +
                       std::to_string(masks[m].rows()) + "x" +
                       std::to_string(masks[m].cols()));
  }

  if (per_image_mean) {
    Scalar sum = 0;
    std::size_t counted = 0;
    for (std::size_t m = 0; m < maps.size(); ++m) {
      const auto pos = static_cast<std::size_t>((masks[m] != 0).count());
      const auto total = static_cast<std::size_t>(masks[m].size());
      if (pos == 0 || pos == total) continue;  // single-class image
      std::vector<Scalar> scores;
      std::vector<int> labels;
      scores.reserve(total);
      labels.reserve(total);
      for (Eigen::Index c = 0; c < masks[m].cols(); ++c)
        for (Eigen::Index r = 0; r < masks[m].rows(); ++r) {
          scores.push_back(maps[m](r, c));
          labels.push_back(masks[m](r, c) != 0 ? 1 : 0);
        }
      sum += auroc(scores, labels);
      ++counted;
    }
    if (counted == 0)
      throw MetricError("pixel_auroc: no image contains both classes");
    return sum / static_cast<Scalar>(counted);
  }

  std::vector<Scalar> scores;
  std::vector<int> labels;
  for (std::size_t m = 0; m < maps.size(); ++m)
    for (Eigen::Index c = 0; c < masks[m].cols(); ++c)
      for (Eigen::Index r = 0; r < masks[m].rows(); ++r) {
        scores.push_back(maps[m](r, c));
        labels.push_back(masks[m](r, c) != 0 ? 1 : 0);
      }
  return auroc(scores, labels);
}

std::pair<Eigen::ArrayXXi, int> connected_components(const PixelMask& mask) {
  const Eigen::Index h = mask.rows();
  const Eigen::Index w = mask.cols();
  Eigen::ArrayXXi labels = Eigen::ArrayXXi::Zero(h, w);
  int count = 0;
  std::vector<std::pair<Eigen::Index, Eigen::Index>> stack;
  for (Eigen::Index y0 = 0; y0 < h; ++y0)
    for (Eigen::Index x0 = 0; x0 < w; ++x0) {
      if (mask(y0, x0) == 0 || labels(y0, x0) != 0) continue;
      ++count;
      labels(y0, x0) = count;
      stack.emplace_back(y0, x0);
      while (!stack.empty()) {
        const auto [y, x] = stack.back();
        stack.pop_back();
        for (Eigen::Index dy = -1; dy <= 1; ++dy)
          for (Eigen::Index dx = -1; dx <= 1; ++dx) {
            const Eigen::Index ny = y + dy;
            const Eigen::Index nx = x + dx;
            if (ny < 0 || ny >= h || nx < 0 || nx >= w) continue;
            if (mask(ny, nx) == 0 || labels(ny, nx) != 0) continue;
            labels(ny, nx) = count;
            stack.emplace_back(ny, nx);
          }
      }
    }
  return {labels, count};
}

Scalar pro(const std::vector<PredictionMap>& maps,
           const std::vector<PixelMask>& masks, Scalar max_fpr) {
  if (maps.size() != masks.size())
    throw ArgumentError("pro: got " + std::to_string(maps.size()) +
                        " maps for " + std::to_string(masks.size()) + " masks");
  if (!(max_fpr > 0) || max_fpr > 1)
    throw ArgumentError("pro: max_fpr must be in (0, 1]");

  // Pool every pixel, tagged with its region id (or -1 for background).
  struct Pixel {
    Scalar value;
    int region;  // global region id, -1 = negative
  };
  std::vector<Pixel> pixels;
  std::vector<std::size_t> region_sizes;
  std::size_t n_neg = 0;
  for (std::size_t m = 0; m < maps.size(); ++m) {
    if (maps[m].rows() != masks[m].rows() || maps[m].cols() != masks[m].cols())
      throw ShapeError("pro: map " + std::to_string(m) + " is " +
                       std::to_string(maps[m].rows()) + "x" +
                       std::to_string(maps[m].cols()) + " but its mask is " +
                       std::to_string(masks[m].rows()) + "x" +
                       std::to_string(masks[m].cols()));
    const auto [labels, count] = connected_components(masks[m]);
    const int base = static_cast<int>(region_sizes.size());
    region_sizes.resize(region_sizes.size() + static_cast<std::size_t>(count), 0);
    for (Eigen::Index c = 0; c < masks[m].cols(); ++c)
      for (Eigen::Index r = 0; r < masks[m].rows(); ++r) {
        const int lab = labels(r, c);
        const int region = lab == 0 ? -1 : base + lab - 1;
        if (region < 0)
          ++n_neg;
        else
          ++region_sizes[static_cast<std::size_t>(region)];
        pixels.push_back({maps[m](r, c), region});
      }
  }
  if (region_sizes.empty())
    throw MetricError("pro: ground truth contains no anomalous regions");
  if (n_neg == 0) throw MetricError("pro: ground truth contains no background");

  std::sort(pixels.begin(), pixels.end(),
            [](const Pixel& a, const Pixel& b) { return a.value > b.value; });

  // One descending sweep; at each distinct value emit the operating point
  // (fpr, mean per-region overlap) and integrate the step function under it.
  std::vector<std::size_t> region_hits(region_sizes.size(), 0);
  const Scalar n_regions = static_cast<Scalar>(region_sizes.size());
  std::size_t fp = 0;
  Scalar coverage_sum = 0;  // sum over regions of hits/size
  Scalar area = 0;
  Scalar prev_fpr = 0;
  Scalar prev_cov = 0;
  std::size_t i = 0;
  const std::size_t n = pixels.size();
  while (i < n) {
    std::size_t j = i;
    while (j < n && pixels[j].value == pixels[i].value) ++j;
    for (std::size_t t = i; t < j; ++t) {
      const int region = pixels[t].region;
      if (region < 0) {
        ++fp;
      } else {
        const auto rid = static_cast<std::size_t>(region);
        ++region_hits[rid];
        coverage_sum += Scalar(1) / static_cast<Scalar>(region_sizes[rid]);
      }
    }
    const Scalar fpr = static_cast<Scalar>(fp) / static_cast<Scalar>(n_neg);
    const Scalar cov = coverage_sum / n_regions;
    const Scalar fpr_cap = std::min(fpr, max_fpr);
    if (fpr_cap > prev_fpr) {
      area += (fpr_cap - prev_fpr) * prev_cov;
      prev_fpr = fpr_cap;
    }
    prev_cov = cov;
    if (fpr >= max_fpr) break;
    i = j;
  }
  if (prev_fpr < max_fpr) area += (max_fpr - prev_fpr) * prev_cov;
  return area / max_fpr;
}

void render_overlay(const Image& img, const PredictionMap& map,
                    const std::string& out_path) {
  if (img.rows() != map.rows() || img.cols() != map.cols())
    throw ShapeError("overlay: image is " + std::to_string(img.rows()) + "x" +
                     std::to_string(img.cols()) + " but the map is " +
                     std::to_string(map.rows()) + "x" +
                     std::to_string(map.cols()));
  // Four-stop ramp: blue -> cyan -> yellow -> red.
  static constexpr Scalar stops[4][3] = {
      {0.0, 0.0, 0.5}, {0.0, 0.8, 0.8}, {0.9, 0.9, 0.0}, {0.9, 0.0, 0.0}};
  Image out(img.rows(), img.cols());
  for (Eigen::Index c = 0; c < img.cols(); ++c)
    for (Eigen::Index r = 0; r < img.rows(); ++r) {
      const Scalar v = std::clamp(map(r, c), Scalar(0), Scalar(1));
      const Scalar pos = v * 3;
      const int s = std::min(static_cast<int>(pos), 2);
      const Scalar t = pos - static_cast<Scalar>(s);
      for (int ch = 0; ch < 3; ++ch) {
        const Scalar heat = stops[s][ch] + t * (stops[s + 1][ch] - stops[s][ch]);
        out.ch[static_cast<std::size_t>(ch)](r, c) =
            Scalar(0.5) * img.ch[static_cast<std::size_t>(ch)](r, c) +
            Scalar(0.5) * heat;
      }
    }
  write_image_png(out_path, out);
}

std::string MetricReport::table() const {
  char line[256];
  std::string out =
      "category                   k        seed  image_auroc  pixel_auroc  "
      "pro\n";
  std::snprintf(line, sizeof(line), "%-24s %3d  %10llu  %11.6f  %11.6f  %8.6f\n",
                category.c_str(), k, static_cast<unsigned long long>(seed),
                image_auroc, pixel_auroc, pro);
  out += line;
  std::snprintf(line, sizeof(line), "%-24s %3s  %10s  %11.6f  %11.6f  %8.6f\n",
                "mean", "-", "-", image_auroc, pixel_auroc, pro);
  out += line;
  return out;
}

MetricReport evaluate_episode(const Model& model, const EpisodeSplit& split,
                              const std::string& checkpoint_digest,
                              int workers) {
  if (workers < 1) throw ArgumentError("evaluate: workers must be at least 1");
  struct Item {
    std::string image;
    std::string mask;  // empty for normal images
  };
  std::vector<Item> items;
  for (const auto& path : split.test_normal) items.push_back({path, ""});
  for (const auto& [img, mask] : split.test_abnormal)
    items.push_back({img, mask});
  if (items.empty()) throw DataError("evaluate: episode has no test images");

  const std::size_t n = items.size();
  std::vector<Scalar> scores(n);
  std::vector<int> labels(n);
  std::vector<PredictionMap> maps(n);
  std::vector<PixelMask> masks(n);

  auto run_range = [&](std::size_t lo, std::size_t hi) {
    for (std::size_t idx = lo; idx < hi; ++idx) {
      const Image img = read_image_png(items[idx].image);
      const Prediction pred = model.predict(img);
      scores[idx] = pred.score;
      maps[idx] = pred.map;
      if (items[idx].mask.empty()) {
        labels[idx] = 0;
        masks[idx] = PixelMask::Zero(img.rows(), img.cols());
      } else {
        labels[idx] = 1;
        masks[idx] = read_mask_png(items[idx].mask);
      }
    }
  };

  const std::size_t n_workers =
      std::min<std::size_t>(static_cast<std::size_t>(workers), n);
  if (n_workers <= 1) {
    run_range(0, n);
  } else {
    std::vector<std::thread> pool;
    std::vector<std::exception_ptr> errors(n_workers);
    for (std::size_t w = 0; w < n_workers; ++w) {
      const std::size_t lo = n * w / n_workers;
      const std::size_t hi = n * (w + 1) / n_workers;
      pool.emplace_back([&, w, lo, hi] {
        try {
          run_range(lo, hi);
        } catch (...) {
          errors[w] = std::current_exception();
        }
      });
    }
    for (auto& t : pool) t.join();
    for (const auto& err : errors)
      if (err) std::rethrow_exception(err);
  }

  MetricReport report;
  report.category = split.category;
  report.k = split.k;
  report.seed = split.seed;
  report.checkpoint_digest = checkpoint_digest;
  report.image_auroc = auroc(scores, labels);
  report.pixel_auroc = pixel_auroc(maps, masks);
  report.pro = pro(maps, masks);
  return report;
}

void write_report(const MetricReport& report, const std::string& dir) {
  fs::create_directories(dir);
  nlohmann::ordered_json j;
  j["category"] = report.category;
  j["k"] = report.k;
  j["seed"] = report.seed;
  j["image_auroc"] = report.image_auroc;
  j["pixel_auroc"] = report.pixel_auroc;
  j["pro"] = report.pro;
  j["checkpoint_digest"] = report.checkpoint_digest;
  {
    std::ofstream out(fs::path(dir) / "report.json", std::ios::binary);
    if (!out) throw DataError("report: cannot write to " + dir);
    out << j.dump(2) << "\n";
  }
  {
    std::ofstream out(fs::path(dir) / "report.txt", std::ios::binary);
    if (!out) throw DataError("report: cannot write to " + dir);
    out << report.table();
  }
}

void make_toy_fixture(const std::string& root, const std::string& category,
                      std::uint64_t seed, int n_train, int n_test_normal,
                      int n_test_abnormal, Eigen::Index size) {
  if (size < 16) throw ArgumentError("fixture: size must be at least 16");
  const fs::path base = fs::path(root) / category;
  fs::create_directories(base / "train" / "good");
  fs::create_directories(base / "test" / "good");
  fs::create_directories(base / "test" / "paste");
  fs::create_directories(base / "ground_truth" / "paste");

  Rng rng(derive_seed(seed, 0x66697874U, 0));  // fixture stream

  // One appearance per category — a flat base color with a faint smooth
  // wave — shared by every image, so a handful of normal shots is
  // representative of the rest. Per-image variation is limited to sensor
  // noise and a slight exposure wobble.
  Scalar tone[3], amp[3];
  for (int c = 0; c < 3; ++c) {
    tone[c] = Scalar(0.5) + Scalar(0.08) * rng.uniform(-1, 1);
    amp[c] = Scalar(0.02) + Scalar(0.02) * rng.uniform();
  }
  const Scalar two_pi = Scalar(2) * Scalar(EIGEN_PI);
  const Scalar freq_y = two_pi * Scalar(rng.uniform_int(1, 3)) / Scalar(size);
  const Scalar freq_x = two_pi * Scalar(rng.uniform_int(1, 3)) / Scalar(size);
  const Scalar phase_y = two_pi * rng.uniform();
  const Scalar phase_x = two_pi * rng.uniform();

  auto texture = [&](Rng& rng) {
    Image img(size, size);
    const Scalar exposure = Scalar(0.01) * rng.uniform(-1, 1);
    for (int c = 0; c < 3; ++c) {
      auto& plane = img.ch[static_cast<std::size_t>(c)];
      for (Eigen::Index x = 0; x < size; ++x)
        for (Eigen::Index y = 0; y < size; ++y)
          plane(y, x) = tone[c] + exposure +
                        amp[c] * std::sin(freq_y * Scalar(y) + phase_y) *
                            std::sin(freq_x * Scalar(x) + phase_x) +
                        Scalar(0.02) * rng.normal();
    }
    img.clamp01();
    return img;
  };
  auto name = [](int i) {
    char buf[16];
    std::snprintf(buf, sizeof(buf), "%03d.png", i);
    return std::string(buf);
  };
  for (int i = 0; i < n_train; ++i)
    write_image_png((base / "train" / "good" / name(i)).string(), texture(rng));
  for (int i = 0; i < n_test_normal; ++i)
    write_image_png((base / "test" / "good" / name(i)).string(), texture(rng));
  for (int i = 0; i < n_test_abnormal; ++i) {
    Image img = texture(rng);
    const Eigen::Index side =
        rng.uniform_int(size / 6, size / 4);  // e.g. 10..16 at size 64
    const Eigen::Index y0 = rng.uniform_int(0, size - side);
    const Eigen::Index x0 = rng.uniform_int(0, size - side);
    const Scalar sign = rng.bernoulli(0.5) ? Scalar(1) : Scalar(-1);
    const Scalar delta = sign * (Scalar(0.25) + Scalar(0.1) * rng.uniform());
    PixelMask mask = PixelMask::Zero(size, size);
    for (Eigen::Index x = x0; x < x0 + side; ++x)
      for (Eigen::Index y = y0; y < y0 + side; ++y) {
        for (auto& plane : img.ch) plane(y, x) += delta;
        mask(y, x) = 1;
      }
    img.clamp01();
    write_image_png((base / "test" / "paste" / name(i)).string(), img);
    char mask_name[32];
    std::snprintf(mask_name, sizeof(mask_name), "%03d_mask.png", i);
    write_mask_png((base / "ground_truth" / "paste" / mask_name).string(), mask);
  }
}

}  // namespace vtf
